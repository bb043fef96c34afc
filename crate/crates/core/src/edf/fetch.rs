//! Dataset download client with a size + SHA-256 manifest.
//!
//! Files land at `<dest>/S042/S042R03.edf`, mirroring the dataset layout, and
//! `<dest>/manifest.json` records every verified file. A file already listed
//! in the manifest is re-verified rather than downloaded again.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_BASE_URL: &str = "https://physionet.org/files/eegmmidb/1.0.0/";
pub const MANIFEST_NAME: &str = "manifest.json";
pub const DATA_ROOT_ENV: &str = "NEUROCAM_DATA_ROOT";

const MAX_ATTEMPTS: usize = 3;
const MAX_FILE_BYTES: u64 = 64 << 20;

/// Guards read-modify-write cycles on manifest files within this process.
static MANIFEST_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FetchError {
    #[error("subject {0} outside 1..=109")]
    InvalidSubject(u32),
    #[error("network error for {url}: {detail}")]
    Network { url: String, detail: String },
    #[error("HTTP {status} for {url}")]
    Http { url: String, status: u16 },
    #[error("{path}: manifest expects {expected}, file has {found}")]
    ManifestMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("io error: {0}")]
    Io(String),
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Network { .. })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> FetchError {
    FetchError::Io(format!("{}: {e}", path.display()))
}

/// Source of file bytes. Implemented over HTTP for real use and by in-memory
/// fakes in tests.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<Vec<u8>, FetchError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Vec<u8>, FetchError> {
        let mut resp = self.agent.get(url).call().map_err(|e| match e {
            ureq::Error::StatusCode(status) => FetchError::Http {
                url: url.to_string(),
                status,
            },
            other => FetchError::Network {
                url: url.to_string(),
                detail: other.to_string(),
            },
        })?;
        let mut out = Vec::new();
        resp.body_mut()
            .as_reader()
            .take(MAX_FILE_BYTES)
            .read_to_end(&mut out)
            .map_err(|e| FetchError::Network {
                url: url.to_string(),
                detail: e.to_string(),
            })?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub size: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// Keyed by path relative to the dataset root, `/`-separated.
    pub files: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self, FetchError> {
        let path = root.join(MANIFEST_NAME);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| FetchError::Manifest(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    pub fn save(&self, root: &Path) -> Result<(), FetchError> {
        let path = root.join(MANIFEST_NAME);
        let text =
            serde_json::to_string_pretty(self).map_err(|e| FetchError::Manifest(e.to_string()))?;
        write_atomic(&path, text.as_bytes())
    }
}

#[derive(Debug, Default)]
pub struct FetchReport {
    /// Files present and verified after the call, in request order.
    pub files: Vec<PathBuf>,
    /// Number of files actually transferred.
    pub downloaded: usize,
    pub failures: Vec<(String, FetchError)>,
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Dataset root: `NEUROCAM_DATA_ROOT` if set, else `./data`.
pub fn default_data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Relative location of one run, e.g. `S042/S042R03.edf`.
pub fn run_path(subject: u32, run: u32) -> String {
    format!("S{subject:03}/S{subject:03}R{run:02}.edf")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FetchError> {
    let tmp = path.with_extension("part");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn verify(path: &Path, rel: &str, entry: &ManifestEntry) -> Result<(), FetchError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let found = ManifestEntry {
        size: bytes.len() as u64,
        sha256: digest(&bytes),
    };
    if &found == entry {
        Ok(())
    } else {
        Err(FetchError::ManifestMismatch {
            path: rel.to_string(),
            expected: format!("{} bytes / {}", entry.size, entry.sha256),
            found: format!("{} bytes / {}", found.size, found.sha256),
        })
    }
}

fn download(transport: &dyn Transport, url: &str) -> Result<Vec<u8>, FetchError> {
    let mut last = None;
    for attempt in 1..=MAX_ATTEMPTS {
        match transport.get(url) {
            Ok(bytes) => return Ok(bytes),
            Err(e) if e.is_retryable() && attempt < MAX_ATTEMPTS => {
                log::warn!("{url}: attempt {attempt} failed ({e}); retrying");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| FetchError::Network {
        url: url.to_string(),
        detail: "no attempts made".into(),
    }))
}

fn fetch_one(
    transport: &dyn Transport,
    base_url: &str,
    dest: &Path,
    rel: &str,
) -> Result<(PathBuf, bool), FetchError> {
    let path = dest.join(rel);
    let known = {
        let _guard = MANIFEST_LOCK.lock().unwrap_or_else(|p| p.into_inner());
        Manifest::load(dest)?.files.get(rel).cloned()
    };
    if let Some(entry) = known {
        if path.exists() {
            verify(&path, rel, &entry)?;
            return Ok((path, false));
        }
    }
    let url = format!("{}/{rel}", base_url.trim_end_matches('/'));
    let bytes = download(transport, &url)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write_atomic(&path, &bytes)?;
    let _guard = MANIFEST_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let mut manifest = Manifest::load(dest)?;
    manifest.files.insert(
        rel.to_string(),
        ManifestEntry {
            size: bytes.len() as u64,
            sha256: digest(&bytes),
        },
    );
    manifest.save(dest)?;
    Ok((path, true))
}

/// Ensures every requested run of `subject` is present under `dest`.
/// Per-file failures are collected in the report; only argument and
/// destination problems abort the call.
pub fn fetch_subject(
    subject: u32,
    runs: &[u32],
    dest: &Path,
    base_url: &str,
    transport: &dyn Transport,
) -> Result<FetchReport, FetchError> {
    if !(1..=109).contains(&subject) {
        return Err(FetchError::InvalidSubject(subject));
    }
    let mut report = FetchReport::default();
    if runs.is_empty() {
        return Ok(report);
    }
    fs::create_dir_all(dest).map_err(|e| io_err(dest, e))?;
    for &run in runs {
        let rel = run_path(subject, run);
        match fetch_one(transport, base_url, dest, &rel) {
            Ok((path, fresh)) => {
                report.downloaded += usize::from(fresh);
                report.files.push(path);
            }
            Err(e) => {
                log::error!("{rel}: {e}");
                report.failures.push((rel, e));
            }
        }
    }
    Ok(report)
}
