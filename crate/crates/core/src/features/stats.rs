use std::fmt::Write as _;
use std::path::Path;

use super::FeatureSequence;
use crate::error::{Error, Result};

/// Version line of the text statistics file.
pub const STATS_FORMAT: &str = "VGSTATS1";

/// Voiced-frame moments of one speaker's training data.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStats {
    pub mcc_mean: Vec<f64>,
    /// Sample standard deviations, all positive.
    pub mcc_std: Vec<f64>,
    pub logf0_mean: f64,
    pub logf0_std: f64,
    /// Voiced frames the moments were computed from.
    pub frame_count: usize,
}

/// Moments over the union of voiced frames of all `sequences`, using the
/// sample (n - 1) standard deviation.
pub fn compute_speaker_stats(sequences: &[FeatureSequence]) -> Result<SpeakerStats> {
    let dim = sequences
        .first()
        .map(FeatureSequence::dim)
        .ok_or_else(|| Error::invalid("speaker data", "no feature sequences given"))?;
    if let Some(i) = sequences.iter().position(|s| s.dim() != dim) {
        return Err(Error::invalid(
            "speaker data",
            format!("sequence {i} has dimension {}, expected {dim}", sequences[i].dim()),
        ));
    }
    let voiced = || {
        sequences.iter().flat_map(|s| {
            s.log_f0()
                .iter()
                .enumerate()
                .filter_map(move |(m, f)| f.map(|f| (s, m, f)))
        })
    };
    let n = voiced().count();
    if n < 2 {
        return Err(Error::invalid(
            "speaker data",
            format!("statistics need at least 2 voiced frames, found {n}"),
        ));
    }
    let nf = n as f64;
    let mut mcc_mean = vec![0.0; dim];
    let mut logf0_mean = 0.0;
    for (s, m, f) in voiced() {
        for (d, acc) in mcc_mean.iter_mut().enumerate() {
            *acc += s.mcc()[(d, m)];
        }
        logf0_mean += f;
    }
    mcc_mean.iter_mut().for_each(|v| *v /= nf);
    logf0_mean /= nf;

    let mut mcc_var = vec![0.0; dim];
    let mut logf0_var = 0.0;
    for (s, m, f) in voiced() {
        for (d, acc) in mcc_var.iter_mut().enumerate() {
            *acc += (s.mcc()[(d, m)] - mcc_mean[d]).powi(2);
        }
        logf0_var += (f - logf0_mean).powi(2);
    }
    let mcc_std: Vec<f64> = mcc_var.iter().map(|v| (v / (nf - 1.0)).sqrt()).collect();
    if let Some(d) = mcc_std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::invalid(
            "speaker data",
            format!("MCC dimension {d} has zero variance over voiced frames"),
        ));
    }
    Ok(SpeakerStats {
        mcc_mean,
        mcc_std,
        logf0_mean,
        logf0_std: (logf0_var / (nf - 1.0)).sqrt(),
        frame_count: n,
    })
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",")
}

impl SpeakerStats {
    /// `key=value` lines with every real rendered to 17 significant digits,
    /// which round-trips `f64` exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format={STATS_FORMAT}");
        let _ = writeln!(out, "dims={}", self.mcc_mean.len());
        let _ = writeln!(out, "frames={}", self.frame_count);
        let _ = writeln!(out, "logf0_mean={:.16e}", self.logf0_mean);
        let _ = writeln!(out, "logf0_std={:.16e}", self.logf0_std);
        let _ = writeln!(out, "mcc_mean={}", join(&self.mcc_mean));
        let _ = writeln!(out, "mcc_std={}", join(&self.mcc_std));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::invalid("stats file", reason);
        let mut fields = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {} is not key=value", i + 1)))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing key {k}")));
        if get("format")? != STATS_FORMAT {
            return Err(bad(format!("unsupported format {}", get("format")?)));
        }
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| bad(format!("{k}: {e}")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("{k}: {e}"))))
                .collect()
        };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| bad(format!("{k}: {e}"))) };
        let stats = SpeakerStats {
            mcc_mean: list("mcc_mean")?,
            mcc_std: list("mcc_std")?,
            logf0_mean: real("logf0_mean")?,
            logf0_std: real("logf0_std")?,
            frame_count: int("frames")?,
        };
        let dims = int("dims")?;
        if stats.mcc_mean.len() != dims || stats.mcc_std.len() != dims {
            return Err(bad(format!("dims={dims} disagrees with the value lists")));
        }
        if stats.mcc_std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(bad("mcc_std entries must be positive".into()));
        }
        Ok(stats)
    }
}

pub fn write_stats_file(path: impl AsRef<Path>, stats: &SpeakerStats) -> Result<()> {
    std::fs::write(path.as_ref(), stats.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_stats_file(path: impl AsRef<Path>) -> Result<SpeakerStats> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    SpeakerStats::from_text(&text)
}
