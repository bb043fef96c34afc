use std::path::{Path, PathBuf};

use super::{io_err, ReportError, Result};
use crate::stats::ScenarioTable;

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Writes `<dir>/<stem>.csv` (bundled-table layout) and its JSON mirror.
pub fn export_metrics(table: &ScenarioTable, dir: &Path, stem: &str) -> Result<ExportedFiles> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&csv, table.to_csv()?).map_err(io_err(&csv))?;
    let text =
        serde_json::to_string_pretty(table).map_err(|e| ReportError::Format(e.to_string()))?;
    std::fs::write(&json, text).map_err(io_err(&json))?;
    Ok(ExportedFiles { csv, json })
}

pub fn read_table_csv(path: &Path) -> Result<ScenarioTable> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(ScenarioTable::from_csv(&text)?)
}
