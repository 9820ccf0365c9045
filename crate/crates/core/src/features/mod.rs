//! Acoustic feature sequences, their binary file format, per-speaker
//! statistics and the normalization transforms around conversion.

mod file;
mod stats;
mod transform;

pub use file::{decode_features, encode_features, read_feature_file, write_feature_file, FEATURE_EXTENSION, FEATURE_MAGIC};
pub use stats::{compute_speaker_stats, read_stats_file, write_stats_file, SpeakerStats, STATS_FORMAT};
pub use transform::{adjust_mean_variance, convert_log_f0, denormalize_mcc, normalize_mcc, voiced_moments};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::langevin::{convert, LangevinConfig, LangevinOutput, ScoreFunction};
use crate::noise::NoiseSchedule;

/// One utterance: `D x M` mel-cepstra, a log-F0 track that is `None` on
/// unvoiced frames, and an `A x M` aperiodicity payload carried unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    mcc: Array2<f64>,
    log_f0: Vec<Option<f64>>,
    ap: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(mcc: Array2<f64>, log_f0: Vec<Option<f64>>, ap: Array2<f64>) -> Result<Self> {
        let m = mcc.ncols();
        if log_f0.len() != m {
            return Err(Error::invalid(
                "feature sequence",
                format!("log-F0 track has {} frames, MCC matrix has {m}", log_f0.len()),
            ));
        }
        if ap.ncols() != m {
            return Err(Error::invalid(
                "feature sequence",
                format!("aperiodicity payload has {} frames, MCC matrix has {m}", ap.ncols()),
            ));
        }
        if log_f0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature sequence", "voiced log-F0 values must be finite"));
        }
        Ok(Self { mcc, log_f0, ap })
    }

    /// Sequence without an aperiodicity payload.
    pub fn without_ap(mcc: Array2<f64>, log_f0: Vec<Option<f64>>) -> Result<Self> {
        let m = mcc.ncols();
        Self::new(mcc, log_f0, Array2::zeros((0, m)))
    }

    pub fn mcc(&self) -> &Array2<f64> {
        &self.mcc
    }

    pub fn log_f0(&self) -> &[Option<f64>] {
        &self.log_f0
    }

    pub fn ap(&self) -> &Array2<f64> {
        &self.ap
    }

    pub fn voiced(&self) -> Vec<bool> {
        self.log_f0.iter().map(Option::is_some).collect()
    }

    pub fn dim(&self) -> usize {
        self.mcc.nrows()
    }

    pub fn frames(&self) -> usize {
        self.mcc.ncols()
    }

    /// Same F0 and aperiodicities with a new MCC matrix of identical shape.
    pub fn with_mcc(&self, mcc: Array2<f64>) -> Result<Self> {
        if mcc.dim() != self.mcc.dim() {
            return Err(Error::invalid(
                "feature sequence",
                format!("replacement MCC shape {:?} differs from {:?}", mcc.dim(), self.mcc.dim()),
            ));
        }
        Ok(Self {
            mcc,
            ..self.clone()
        })
    }
}

/// Full conversion of one utterance toward speaker `target`.
///
/// MCCs are normalized with `source`, refined by annealed Langevin dynamics,
/// then mapped so their voiced-frame moments equal the target's (which also
/// returns them to the unnormalized domain). Log-F0 uses the Gaussian
/// normalized transform; aperiodicities pass through.
pub fn convert_utterance<S: ScoreFunction + ?Sized>(
    score: &S,
    input: &FeatureSequence,
    target: usize,
    source: &SpeakerStats,
    target_stats: &SpeakerStats,
    schedule: &NoiseSchedule,
    config: &LangevinConfig,
) -> Result<FeatureSequence> {
    convert_utterance_traced(score, input, target, source, target_stats, schedule, config).map(|(seq, _)| seq)
}

/// [`convert_utterance`] that also returns the raw Langevin output (the
/// refined normalized MCCs and, if requested, the trajectory).
pub fn convert_utterance_traced<S: ScoreFunction + ?Sized>(
    score: &S,
    input: &FeatureSequence,
    target: usize,
    source: &SpeakerStats,
    target_stats: &SpeakerStats,
    schedule: &NoiseSchedule,
    config: &LangevinConfig,
) -> Result<(FeatureSequence, LangevinOutput)> {
    let normalized = normalize_mcc(input.mcc(), source)?;
    let (refined, output) = convert(score, &normalized, target, schedule, config)?;
    let mcc = adjust_mean_variance(&refined, &input.voiced(), target_stats)?;
    let log_f0 = convert_log_f0(input.log_f0(), source, target_stats)?;
    Ok((FeatureSequence::new(mcc, log_f0, input.ap().clone())?, output))
}
