//! Reconstruction error, compression ratio and PSNR reporting.

use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RgtnError};
use crate::tensor::{frobenius_norm, DenseTensor};

pub const DEFAULT_PEAK: f64 = 255.0;

/// `||truth - est|| / ||truth||`.
pub fn relative_error(truth: &DenseTensor, est: &DenseTensor) -> Result<f64> {
    let norm = frobenius_norm(truth);
    if norm == 0.0 {
        return Err(RgtnError::InvalidArgument("relative error against a zero tensor".into()));
    }
    Ok(frobenius_norm(&truth.sub(est)?) / norm)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical inputs.
pub fn psnr(truth: &[f64], est: &[f64], peak: f64) -> Result<f64> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(RgtnError::DimensionMismatch(format!("{} vs {} samples", truth.len(), est.len())));
    }
    let mse = truth.iter().zip(est).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mpsnr {
    /// Mean over finite frames; `None` when every frame is exact.
    pub mean_db: Option<f64>,
    pub per_frame: Vec<f64>,
    pub infinite_frames: usize,
}

/// PSNR of every slice along `temporal_mode`, averaged over the finite ones.
pub fn mpsnr(truth: &DenseTensor, est: &DenseTensor, temporal_mode: usize, peak: f64) -> Result<Mpsnr> {
    if truth.shape() != est.shape() {
        return Err(RgtnError::DimensionMismatch(format!("{:?} vs {:?}", truth.shape(), est.shape())));
    }
    if temporal_mode >= truth.order() {
        return Err(RgtnError::ModeOutOfRange { mode: temporal_mode, order: truth.order() });
    }
    let a = crate::tensor::unfold(truth, temporal_mode)?;
    let b = crate::tensor::unfold(est, temporal_mode)?;
    let per_frame = (0..a.rows).map(|f| psnr(a.row(f), b.row(f), peak)).collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = per_frame.iter().copied().filter(|v| v.is_finite()).collect();
    let mean_db = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
    Ok(Mpsnr { infinite_frames: per_frame.len() - finite.len(), mean_db, per_frame })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub re: f64,
    pub cr_percent: f64,
    pub mpsnr_db: Option<f64>,
    pub per_frame_psnr: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

/// One line of an append-only results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub method: String,
    pub dataset: String,
    pub re_bound: Option<f64>,
    pub cr: f64,
    pub re: f64,
    pub mpsnr: Option<f64>,
    pub seconds: f64,
}

/// Appends a tab-separated row, writing the header when the file is new.
pub fn append_row(path: impl AsRef<Path>, row: &ResultsRow) -> Result<()> {
    let path = path.as_ref();
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').has_headers(fresh).from_writer(file);
    w.serialize(row).map_err(|e| RgtnError::Io(e.to_string()))?;
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<ResultsRow>> {
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_path(path).map_err(|e| RgtnError::Io(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| RgtnError::Format(e.to_string()))).collect()
}
