//! Inter-class correlation maps of classifier rows and per-epoch loss curves,
//! exported as CSV and binary PPM.
//!
//! Heat ramp, per byte, for a value `t ∈ [0, 1]` after clipping and
//! rescaling: below 0.5 it runs from blue `(0, 0, 255)` to white with
//! `r = g = round(510·t)`, above 0.5 from white to red `(255, 0, 0)` with
//! `g = b = round(510·(1 − t))`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierMatrix, InitKind};
use crate::error::{Error, Result};
use crate::numkit::{cosine_rows, Matrix};
use crate::trainer::RunLog;

/// Side length in pixels of one map cell in the exported image.
pub const CELL_PIXELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMap {
    pub class_names: Vec<String>,
    pub matrix: Matrix,
    pub source: InitKind,
}

/// Cosine similarity between every pair of classifier rows.
pub fn correlation_map(w: &ClassifierMatrix) -> Result<CorrelationMap> {
    Ok(CorrelationMap {
        class_names: w.class_names.clone(),
        matrix: cosine_rows(&w.weights, &w.weights)?,
        source: w.init_kind,
    })
}

/// Heat-ramp colour of `v` clipped to `[lo, hi]`.
pub fn ramp(v: f64, lo: f64, hi: f64) -> [u8; 3] {
    let t = ((v.clamp(lo, hi) - lo) / (hi - lo)).clamp(0.0, 1.0);
    if t <= 0.5 {
        let s = (510.0 * t).round() as u8;
        [s, s, 255]
    } else {
        let s = (510.0 * (1.0 - t)).round() as u8;
        [255, s, s]
    }
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Format {
        offset: 0,
        message: format!("csv: {e}"),
    }
}

/// CSV text: a header of class names (first cell empty), then one row per
/// class led by its name. Values use shortest round-trip formatting.
pub fn map_to_csv(m: &CorrelationMap) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(m.class_names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, name) in m.class_names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(m.matrix.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses the layout written by [`map_to_csv`].
pub fn map_from_csv(text: &str) -> Result<(Vec<String>, Matrix)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let names: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .skip(1)
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(csv_err))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() != names.len() {
        return Err(csv_err(format!(
            "{} rows for {} columns",
            rows.len(),
            names.len()
        )));
    }
    Ok((names, Matrix::from_rows(&rows)?))
}

/// Binary PPM (P6), one `CELL_PIXELS`-square cell per map entry.
pub fn map_to_ppm(m: &CorrelationMap, clip_lo: f64, clip_hi: f64) -> Result<Vec<u8>> {
    if !(clip_lo < clip_hi) {
        return Err(Error::Config(format!(
            "clip range [{clip_lo}, {clip_hi}] is empty"
        )));
    }
    let c = m.matrix.rows();
    let side = c * CELL_PIXELS;
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    out.reserve(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let v = m.matrix[(y / CELL_PIXELS, x / CELL_PIXELS)];
            out.extend_from_slice(&ramp(v, clip_lo, clip_hi));
        }
    }
    Ok(out)
}

/// Writes `<stem>.csv` and `<stem>.ppm`.
pub fn export_map(
    m: &CorrelationMap,
    clip_lo: f64,
    clip_hi: f64,
    csv_path: impl AsRef<Path>,
    ppm_path: impl AsRef<Path>,
) -> Result<()> {
    let ppm = map_to_ppm(m, clip_lo, clip_hi)?;
    let (csv_path, ppm_path) = (csv_path.as_ref(), ppm_path.as_ref());
    fs::write(csv_path, map_to_csv(m)?).map_err(|e| Error::io(csv_path, e))?;
    fs::write(ppm_path, ppm).map_err(|e| Error::io(ppm_path, e))
}

/// Per-epoch training loss of each run, one column per run.
pub fn convergence_curves(logs: &[(String, &RunLog)]) -> Result<String> {
    let (_, first) = logs
        .first()
        .ok_or_else(|| Error::Alignment("no runs given".into()))?;
    let epochs = first.epochs.len();
    for (name, log) in logs {
        if log.epochs.len() != epochs {
            return Err(Error::Alignment(format!(
                "run {name:?} has {} epochs, expected {epochs}",
                log.epochs.len()
            )));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["epoch".to_string()];
    header.extend(logs.iter().map(|(n, _)| n.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for e in 0..epochs {
        let mut rec = vec![(e + 1).to_string()];
        rec.extend(logs.iter().map(|(_, l)| l.epochs[e].loss.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
