use ndarray::Array2;

use super::SpeakerStats;
use crate::error::{Error, Result};

fn check_dim(mcc: &Array2<f64>, stats: &SpeakerStats) -> Result<()> {
    if mcc.nrows() != stats.mcc_mean.len() {
        return Err(Error::invalid(
            "speaker stats",
            format!("stats cover {} dimensions, features have {}", stats.mcc_mean.len(), mcc.nrows()),
        ));
    }
    Ok(())
}

/// `x_dm <- (x_dm - psi_d) / zeta_d` on every frame.
pub fn normalize_mcc(mcc: &Array2<f64>, stats: &SpeakerStats) -> Result<Array2<f64>> {
    check_dim(mcc, stats)?;
    let mut out = mcc.clone();
    for (d, mut row) in out.rows_mut().into_iter().enumerate() {
        let (mu, sd) = (stats.mcc_mean[d], stats.mcc_std[d]);
        row.mapv_inplace(|x| (x - mu) / sd);
    }
    Ok(out)
}

/// Inverse of [`normalize_mcc`].
pub fn denormalize_mcc(mcc: &Array2<f64>, stats: &SpeakerStats) -> Result<Array2<f64>> {
    check_dim(mcc, stats)?;
    let mut out = mcc.clone();
    for (d, mut row) in out.rows_mut().into_iter().enumerate() {
        let (mu, sd) = (stats.mcc_mean[d], stats.mcc_std[d]);
        row.mapv_inplace(|x| x * sd + mu);
    }
    Ok(out)
}

/// Per-row mean and sample standard deviation over the voiced columns.
pub fn voiced_moments(mcc: &Array2<f64>, voiced: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if voiced.len() != mcc.ncols() {
        return Err(Error::invalid(
            "voiced mask",
            format!("mask has {} frames, features have {}", voiced.len(), mcc.ncols()),
        ));
    }
    let n = voiced.iter().filter(|&&v| v).count();
    if n < 2 {
        return Err(Error::invalid(
            "voiced frames",
            format!("at least 2 voiced frames are needed, found {n}"),
        ));
    }
    let mut means = Vec::with_capacity(mcc.nrows());
    let mut stds = Vec::with_capacity(mcc.nrows());
    for row in mcc.rows() {
        let vals = || row.iter().zip(voiced).filter(|(_, &v)| v).map(|(x, _)| *x);
        let mean = vals().sum::<f64>() / n as f64;
        let var = vals().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok((means, stds))
}

/// Affine map per dimension taking the voiced-frame mean and standard
/// deviation of `converted` to those of `target`. All frames are mapped.
pub fn adjust_mean_variance(converted: &Array2<f64>, voiced: &[bool], target: &SpeakerStats) -> Result<Array2<f64>> {
    check_dim(converted, target)?;
    let (mean, std) = voiced_moments(converted, voiced)?;
    if let Some(d) = std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::invalid(
            "converted features",
            format!("dimension {d} has zero standard deviation over voiced frames"),
        ));
    }
    let mut out = converted.clone();
    for (d, mut row) in out.rows_mut().into_iter().enumerate() {
        let scale = target.mcc_std[d] / std[d];
        let (m, t) = (mean[d], target.mcc_mean[d]);
        row.mapv_inplace(|x| (x - m) * scale + t);
    }
    Ok(out)
}

/// Gaussian normalized log-F0 transform on voiced frames; unvoiced frames
/// stay `None`.
pub fn convert_log_f0(log_f0: &[Option<f64>], src: &SpeakerStats, tgt: &SpeakerStats) -> Result<Vec<Option<f64>>> {
    if !(src.logf0_std > 0.0) {
        return Err(Error::invalid("source stats", "log-F0 standard deviation is zero"));
    }
    let scale = tgt.logf0_std / src.logf0_std;
    Ok(log_f0
        .iter()
        .map(|v| v.map(|x| (x - src.logf0_mean) * scale + tgt.logf0_mean))
        .collect())
}
