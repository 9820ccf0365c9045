use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};

use super::dtw::dtw_align;
use crate::error::{Error, Result};
use crate::features::{read_feature_file, FEATURE_EXTENSION};

/// `10 / ln 10`, the dB scale of the distortion.
pub const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

/// Euclidean distance over coefficients `1..D`; the energy term at index 0
/// is left out.
pub fn cepstral_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .skip(1)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mel-cepstral distortion of one frame pair in dB.
pub fn mcd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(
            "frame pair",
            format!("frames have {} and {} coefficients", a.len(), b.len()),
        ));
    }
    let d = cepstral_distance(ArrayView1::from(a), ArrayView1::from(b));
    Ok(MCD_SCALE * (2.0f64).sqrt() * d)
}

/// Mean frame distortion along the DTW path between two `D x M` matrices.
pub fn utterance_mcd(converted: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    if converted.nrows() != reference.nrows() {
        return Err(Error::invalid(
            "utterance pair",
            format!("dimensions {} and {} differ", converted.nrows(), reference.nrows()),
        ));
    }
    if converted.ncols() == 0 || reference.ncols() == 0 {
        return Err(Error::invalid("utterance pair", "sequences must have frames"));
    }
    let alignment = dtw_align(converted, reference, cepstral_distance);
    let total: f64 = alignment
        .path
        .iter()
        .map(|&(i, j)| MCD_SCALE * 2f64.sqrt() * cepstral_distance(converted.column(i), reference.column(j)))
        .sum();
    Ok(total / alignment.path.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McdSummary {
    pub count: usize,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval,
    /// `1.96 sd / sqrt(n)` with the sample standard deviation; 0 for `n = 1`.
    pub ci95: f64,
}

/// Summary statistics, independent of the order of `values`.
pub fn summarize(values: &[f64]) -> Result<McdSummary> {
    if values.is_empty() {
        return Err(Error::invalid("evaluation", "no utterances to summarize"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let ci95 = if sorted.len() < 2 {
        0.0
    } else {
        let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * var.sqrt() / n.sqrt()
    };
    Ok(McdSummary {
        count: sorted.len(),
        mean,
        ci95,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(utterance name, MCD in dB)` sorted by name.
    pub utterances: Vec<(String, f64)>,
    pub summary: McdSummary,
}

impl EvalReport {
    pub fn from_pairs(mut utterances: Vec<(String, f64)>) -> Result<Self> {
        utterances.sort_by(|a, b| a.0.cmp(&b.0));
        let values: Vec<f64> = utterances.iter().map(|u| u.1).collect();
        let summary = summarize(&values)?;
        Ok(Self { utterances, summary })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("utterance,mcd_db\n");
        for (name, v) in &self.utterances {
            let _ = writeln!(out, "{name},{v}");
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "mean {:.3} dB +/- {:.3} (95% CI, n={})",
            self.summary.mean, self.summary.ci95, self.summary.count
        )
    }
}

fn feature_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == FEATURE_EXTENSION) {
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

/// MCD of every converted file against the reference file of the same name.
pub fn evaluate_pairs(converted_dir: impl AsRef<Path>, reference_dir: impl AsRef<Path>) -> Result<EvalReport> {
    let converted = feature_files(converted_dir.as_ref())?;
    let reference = feature_files(reference_dir.as_ref())?;
    let names = |v: &[(String, PathBuf)]| v.iter().map(|x| x.0.clone()).collect::<std::collections::BTreeSet<_>>();
    let (cn, rn) = (names(&converted), names(&reference));
    let only_converted: Vec<_> = cn.difference(&rn).cloned().collect();
    let only_reference: Vec<_> = rn.difference(&cn).cloned().collect();
    if !only_converted.is_empty() || !only_reference.is_empty() {
        return Err(Error::invalid(
            "file sets",
            format!(
                "unmatched utterances; only converted: [{}]; only reference: [{}]",
                only_converted.join(", "),
                only_reference.join(", ")
            ),
        ));
    }
    let mut rows = Vec::with_capacity(converted.len());
    for ((name, cpath), (_, rpath)) in converted.iter().zip(&reference) {
        let c = read_feature_file(cpath)?;
        let r = read_feature_file(rpath)?;
        rows.push((name.clone(), utterance_mcd(c.mcc(), r.mcc())?));
    }
    EvalReport::from_pairs(rows)
}
