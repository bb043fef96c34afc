//! Self-contained SVG figures: electrode montage, scalp topography and
//! time-frequency heatmap.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{ReportError, Result};
use crate::channels::MontageLayout;
use crate::dsp::Tfr;

const SIZE: f64 = 500.0;
const CENTER: f64 = 250.0;
/// Pixel radius of the unit disc (the head's equator).
const HEAD_R: f64 = 200.0;

fn to_px([x, y]: [f64; 2]) -> (f64, f64) {
    (CENTER + HEAD_R * x, CENTER - HEAD_R * y)
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn head_outline(out: &mut String) {
    let (c, r) = (CENTER, HEAD_R);
    let _ = writeln!(
        out,
        r#"<g class="head" fill="none" stroke="black" stroke-width="2"><circle cx="{c}" cy="{c}" r="{r}"/><polyline points="{},{} {},{} {},{}"/><path d="M {},{} q -14,12 0,40"/><path d="M {},{} q 14,12 0,40"/></g>"#,
        c - 18.0,
        c - r + 2.0,
        c,
        c - r - 22.0,
        c + 18.0,
        c - r + 2.0,
        c - r,
        c - 20.0,
        c + r,
        c - 20.0,
    );
}

/// Sequential colour ramp (dark blue → teal → yellow) for `v ∈ [0, 1]`.
fn ramp(v: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 4] = [
        (0.0, [48.0, 18.0, 100.0]),
        (0.4, [33.0, 145.0, 140.0]),
        (0.75, [170.0, 220.0, 50.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let v = if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let i = STOPS
        .iter()
        .rposition(|(s, _)| *s <= v)
        .unwrap_or(0)
        .min(STOPS.len() - 2);
    let (s0, c0) = STOPS[i];
    let (s1, c1) = STOPS[i + 1];
    let f = (v - s0) / (s1 - s0);
    let c: Vec<u8> = (0..3)
        .map(|j| (c0[j] + f * (c1[j] - c0[j])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// White → red fill for montage glyphs.
fn heat(v: f64) -> String {
    let v = if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let gb = (255.0 * (1.0 - v)).round() as u8;
    format!("#ff{gb:02x}{gb:02x}")
}

fn check_labels(values: &BTreeMap<String, f64>, montage: &MontageLayout) -> Result<()> {
    for (label, v) in values {
        if montage.index_of(label).is_none() {
            return Err(ReportError::UnknownChannel(label.clone()));
        }
        if !v.is_finite() {
            return Err(ReportError::InvalidArgument(format!(
                "non-finite value for `{label}`"
            )));
        }
    }
    Ok(())
}

/// The `k` labels with the largest values, ties in montage order.
pub fn highlighted(
    values: &BTreeMap<String, f64>,
    montage: &MontageLayout,
    k: usize,
) -> Vec<String> {
    let mut entries: Vec<(usize, &String, f64)> = montage
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| values.get(&e.label).map(|&v| (i, &e.label, v)))
        .collect();
    entries.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    entries
        .into_iter()
        .take(k)
        .map(|(_, l, _)| l.clone())
        .collect()
}

/// Head outline with one glyph per montage electrode, filled in proportion
/// to its value (channels without a value are blank) and the top
/// `highlight_k` outlined.
pub fn render_montage(
    values: &BTreeMap<String, f64>,
    montage: &MontageLayout,
    highlight_k: usize,
    title: &str,
) -> Result<String> {
    check_labels(values, montage)?;
    let max = values.values().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let top = highlighted(values, montage, highlight_k);
    let mut out = String::new();
    header(&mut out, SIZE, SIZE + 30.0, title);
    head_outline(&mut out);
    out.push_str("<g class=\"electrodes\" font-size=\"9\" text-anchor=\"middle\">\n");
    for e in &montage.entries {
        let (x, y) = to_px(e.disc);
        let v = values.get(&e.label).copied().unwrap_or(0.0);
        let level = if max > 0.0 { v.abs() / max } else { 0.0 };
        let hl = top.contains(&e.label);
        let (class, stroke, width) = if hl {
            ("electrode highlighted", "#0050c8", 3.0)
        } else {
            ("electrode", "#444444", 1.0)
        };
        let _ = writeln!(
            out,
            r#"<circle class="{class}" data-label="{}" data-value="{v:.6}" cx="{x:.2}" cy="{y:.2}" r="11" fill="{}" stroke="{stroke}" stroke-width="{width}"/>"#,
            escape(&e.label),
            heat(level),
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}">{}</text>"#,
            y + 3.0,
            escape(&e.label)
        );
    }
    out.push_str("</g>\n");
    let _ = writeln!(
        out,
        r#"<text x="{CENTER}" y="{}" font-size="14" text-anchor="middle">{}</text>"#,
        SIZE + 18.0,
        escape(title)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Inverse-distance-weighted (power 2) interpolation at `at` from electrodes
/// within `radius`; exact at an electrode, nearest value when none is in
/// range.
pub fn idw(points: &[([f64; 2], f64)], at: [f64; 2], radius: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut nearest = (f64::INFINITY, 0.0);
    for &(p, v) in points {
        let d2 = (p[0] - at[0]).powi(2) + (p[1] - at[1]).powi(2);
        if d2 < 1e-18 {
            return v;
        }
        if d2 < nearest.0 {
            nearest = (d2, v);
        }
        if d2 <= radius * radius {
            num += v / d2;
            den += 1.0 / d2;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        nearest.1
    }
}

/// Interpolated field over a `grid_res × grid_res` grid covering
/// `[-1.1, 1.1]²`; cells whose centre lies outside the head are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoGrid {
    pub grid_res: usize,
    pub extent: f64,
    /// Row-major from the top (front of the head) down.
    pub cells: Vec<Option<f64>>,
}

impl TopoGrid {
    /// Disc coordinates of cell `(row, col)`'s centre.
    pub fn center(&self, row: usize, col: usize) -> [f64; 2] {
        let step = 2.0 * self.extent / self.grid_res as f64;
        [
            -self.extent + (col as f64 + 0.5) * step,
            self.extent - (row as f64 + 0.5) * step,
        ]
    }
}

/// Default interpolation radius in disc units (about three electrode
/// spacings).
pub const TOPO_RADIUS: f64 = 0.6;

fn topo_points(
    values: &BTreeMap<String, f64>,
    montage: &MontageLayout,
) -> Result<Vec<([f64; 2], f64)>> {
    check_labels(values, montage)?;
    if values.len() < 3 {
        return Err(ReportError::TooFewChannels(values.len()));
    }
    Ok(montage
        .entries
        .iter()
        .filter_map(|e| values.get(&e.label).map(|&v| (e.disc, v)))
        .collect())
}

pub fn topomap_grid(
    values: &BTreeMap<String, f64>,
    montage: &MontageLayout,
    grid_res: usize,
) -> Result<TopoGrid> {
    if grid_res < 2 {
        return Err(ReportError::InvalidArgument(format!(
            "grid resolution {grid_res}"
        )));
    }
    let points = topo_points(values, montage)?;
    let mut grid = TopoGrid {
        grid_res,
        extent: 1.1,
        cells: Vec::with_capacity(grid_res * grid_res),
    };
    for row in 0..grid_res {
        for col in 0..grid_res {
            let p = grid.center(row, col);
            let inside = p[0].hypot(p[1]) <= grid.extent;
            grid.cells
                .push(inside.then(|| idw(&points, p, TOPO_RADIUS)));
        }
    }
    Ok(grid)
}

/// Field value at each electrode that carries a value, by label.
pub fn topomap_at_electrodes(
    values: &BTreeMap<String, f64>,
    montage: &MontageLayout,
) -> Result<BTreeMap<String, f64>> {
    let points = topo_points(values, montage)?;
    Ok(montage
        .entries
        .iter()
        .filter(|e| values.contains_key(&e.label))
        .map(|e| (e.label.clone(), idw(&points, e.disc, TOPO_RADIUS)))
        .collect())
}

/// Number of filled contour levels in a topography.
const LEVELS: usize = 12;

/// Scalp topography: IDW field rendered as banded (filled-contour) cells,
/// with every montage electrode drawn on top.
pub fn render_topomap(
    values: &BTreeMap<String, f64>,
    montage: &MontageLayout,
    grid_res: usize,
    title: &str,
) -> Result<String> {
    let grid = topomap_grid(values, montage, grid_res)?;
    let (lo, hi) = grid
        .cells
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = hi - lo;
    let cell_px = 2.0 * grid.extent * HEAD_R / grid_res as f64;
    let mut out = String::new();
    header(&mut out, SIZE + 70.0, SIZE + 30.0, title);
    out.push_str("<g class=\"field\" shape-rendering=\"crispEdges\">\n");
    for row in 0..grid_res {
        for col in 0..grid_res {
            let Some(v) = grid.cells[row * grid_res + col] else {
                continue;
            };
            let level = if span > 0.0 {
                (((v - lo) / span * LEVELS as f64).floor() as usize).min(LEVELS - 1)
            } else {
                0
            };
            let c = grid.center(row, col);
            let (x, y) = to_px(c);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x - cell_px / 2.0,
                y - cell_px / 2.0,
                cell_px + 0.05,
                cell_px + 0.05,
                ramp((level as f64 + 0.5) / LEVELS as f64),
            );
        }
    }
    out.push_str("</g>\n");
    head_outline(&mut out);
    out.push_str("<g class=\"electrodes\">\n");
    for e in &montage.entries {
        let (x, y) = to_px(e.disc);
        let v = values.get(&e.label);
        let _ = writeln!(
            out,
            r#"<circle class="electrode" data-label="{}"{} cx="{x:.2}" cy="{y:.2}" r="{}" fill="{}" stroke="black" stroke-width="0.5"/>"#,
            escape(&e.label),
            v.map(|v| format!(r#" data-value="{v:.6}""#))
                .unwrap_or_default(),
            if v.is_some() { 3.0 } else { 1.5 },
            if v.is_some() { "black" } else { "#888888" },
        );
    }
    out.push_str("</g>\n");
    // Colour bar.
    let (bx, by, bh) = (SIZE + 20.0, 60.0, 380.0);
    out.push_str("<g class=\"colorbar\" font-size=\"10\">\n");
    for l in 0..LEVELS {
        let h = bh / LEVELS as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{bx}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            by + bh - (l + 1) as f64 * h,
            h + 0.05,
            ramp((l as f64 + 0.5) / LEVELS as f64)
        );
    }
    let _ = writeln!(out, r#"<text x="{bx}" y="{}">{hi:.3}</text>"#, by - 6.0);
    let _ = writeln!(
        out,
        r#"<text x="{bx}" y="{}">{lo:.3}</text>"#,
        by + bh + 14.0
    );
    out.push_str("</g>\n");
    let _ = writeln!(
        out,
        r#"<text x="{CENTER}" y="{}" font-size="14" text-anchor="middle">{}</text>"#,
        SIZE + 18.0,
        escape(title)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Time × frequency power heatmap with relevance windows as translucent
/// bands. Windows are clipped to the time axis (with a warning); windows
/// entirely outside it are dropped.
pub fn render_tfr(tfr: &Tfr, windows: &[(f64, f64)], title: &str) -> Result<String> {
    let nf = tfr.freqs.len();
    let nt = tfr.times.len();
    if nf == 0 || nt == 0 || tfr.power.len() != nf || tfr.power.iter().any(|r| r.len() != nt) {
        return Err(ReportError::InvalidArgument(
            "empty or ragged time-frequency map".into(),
        ));
    }
    let (left, top, w, h) = (70.0, 40.0, 560.0, 320.0);
    let t0 = tfr.times[0];
    let dt = if nt > 1 {
        tfr.times[1] - tfr.times[0]
    } else {
        1.0
    };
    let t_end = tfr.times[nt - 1] + dt;
    let x_of = |t: f64| left + (t - t0) / (t_end - t0) * w;
    let (cw, ch) = (w / nt as f64, h / nf as f64);
    let max = tfr.power.iter().flatten().fold(0.0_f64, |m, &v| m.max(v));

    let mut out = String::new();
    header(&mut out, left + w + 90.0, top + h + 60.0, title);
    out.push_str("<g class=\"tfr\" shape-rendering=\"crispEdges\">\n");
    for (fi, row) in tfr.power.iter().enumerate() {
        // Lowest frequency at the bottom.
        let y = top + h - (fi + 1) as f64 * ch;
        let _ = writeln!(out, r#"<g class="freq-row" data-freq="{}">"#, tfr.freqs[fi]);
        for (ti, &p) in row.iter().enumerate() {
            let v = if max > 0.0 { p / max } else { 0.0 };
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{:.3}" height="{:.3}" data-v="{v:.4}" fill="{}"/>"#,
                left + ti as f64 * cw,
                cw + 0.05,
                ch + 0.05,
                ramp(v)
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</g>\n");

    out.push_str("<g class=\"windows\">\n");
    for &(s, e) in windows {
        let (cs, ce) = (s.max(t0), e.min(t_end));
        if (cs, ce) != (s, e) {
            log::warn!(
                "relevance window ({s:.3}, {e:.3}) s clipped to the {t0:.3}–{t_end:.3} s axis"
            );
        }
        if ce <= cs {
            continue;
        }
        let _ = writeln!(
            out,
            r#"<rect class="relevance-window" data-start="{cs:.4}" data-end="{ce:.4}" x="{:.2}" y="{top}" width="{:.2}" height="{h}" fill="white" fill-opacity="0.3" stroke="white" stroke-width="1.5"/>"#,
            x_of(cs),
            x_of(ce) - x_of(cs),
        );
    }
    out.push_str("</g>\n");

    // Axes.
    out.push_str("<g class=\"axes\" font-size=\"11\" stroke=\"black\">\n");
    let _ = writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none"/>"#
    );
    let n_ticks = 5;
    for i in 0..=n_ticks {
        let t = t0 + (t_end - t0) * i as f64 / n_ticks as f64;
        let x = x_of(t);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}"/><text x="{x:.2}" y="{}" stroke="none" text-anchor="middle">{t:.1}</text>"#,
            top + h,
            top + h + 5.0,
            top + h + 18.0
        );
    }
    let step = nf.div_ceil(6).max(1);
    for fi in (0..nf).step_by(step) {
        let y = top + h - (fi as f64 + 0.5) * ch;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}"/><text x="{}" y="{:.2}" stroke="none" text-anchor="end">{}</text>"#,
            left - 5.0,
            left - 8.0,
            y + 4.0,
            tfr.freqs[fi]
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" stroke="none" text-anchor="middle">Time (s)</text>"#,
        left + w / 2.0,
        top + h + 38.0
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" stroke="none" text-anchor="middle" transform="rotate(-90 18 {})">Frequency (Hz)</text>"#,
        top + h / 2.0,
        top + h / 2.0
    );
    out.push_str("</g>\n");
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#,
        left + w / 2.0,
        escape(title)
    );
    out.push_str("</svg>\n");
    Ok(out)
}
