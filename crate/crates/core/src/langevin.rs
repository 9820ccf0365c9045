//! Annealed Langevin dynamics for sampling and for conversion by
//! initialization.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::noise::NoiseSchedule;
use crate::score_net::{crop_time, pad_time, ConditioningIndices, ScoreNet};
use crate::tensor::Tensor;

/// A score field `s(x, level, speaker)` with zero-based indices.
///
/// Implemented for [`ScoreNet`] and for closures
/// `Fn(&Tensor, usize, usize) -> Result<Tensor>`.
pub trait ScoreFunction {
    fn score(&self, x: &Tensor, level: usize, speaker: usize) -> Result<Tensor>;

    /// Time-axis length the function requires a multiple of.
    fn time_multiple(&self) -> usize {
        1
    }

    /// Number of speakers accepted, when known.
    fn speakers(&self) -> Option<usize> {
        None
    }

    /// Number of noise levels accepted, when known.
    fn levels(&self) -> Option<usize> {
        None
    }
}

impl<F> ScoreFunction for F
where
    F: Fn(&Tensor, usize, usize) -> Result<Tensor>,
{
    fn score(&self, x: &Tensor, level: usize, speaker: usize) -> Result<Tensor> {
        self(x, level, speaker)
    }
}

impl ScoreFunction for ScoreNet {
    fn score(&self, x: &Tensor, level: usize, speaker: usize) -> Result<Tensor> {
        ScoreNet::score(self, x, ConditioningIndices::new(level, speaker))
    }

    fn time_multiple(&self) -> usize {
        self.config().time_multiple()
    }

    fn speakers(&self) -> Option<usize> {
        Some(self.config().speakers)
    }

    fn levels(&self) -> Option<usize> {
        Some(self.config().noise_levels)
    }
}

/// `alpha_l = epsilon * sigma_l^2 / sigma_L^2`.
pub fn step_size(epsilon: f64, sigma: f64, sigma_last: f64) -> f64 {
    let ratio = sigma / sigma_last;
    epsilon * (ratio * ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangevinConfig {
    pub epsilon: f64,
    pub steps_per_level: usize,
    /// One-based level the sweep starts at.
    pub start_level: usize,
    /// Adds `sqrt(2 alpha) z` to every update when set.
    pub noisy: bool,
    pub seed: u64,
    /// Keep a decimated per-frame score trace.
    pub record_trajectory: bool,
}

impl Default for LangevinConfig {
    /// Conversion settings: start at level 4, noiseless updates.
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            steps_per_level: 120,
            start_level: 4,
            noisy: false,
            seed: 0,
            record_trajectory: false,
        }
    }
}

impl LangevinConfig {
    /// Pure sampling settings: the full schedule with noisy updates.
    pub fn sampling() -> Self {
        Self {
            start_level: 1,
            noisy: true,
            ..Self::default()
        }
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("langevin config", "epsilon must be positive"));
        }
        if self.steps_per_level == 0 {
            return Err(Error::invalid("langevin config", "steps per level must be at least 1"));
        }
        if self.start_level == 0 || self.start_level > levels {
            return Err(Error::invalid(
                "langevin config",
                format!("start level {} is outside 1..={levels}", self.start_level),
            ));
        }
        Ok(())
    }
}

/// Score norms of one recorded iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// One-based noise level.
    pub level: usize,
    /// One-based step within the level.
    pub step: usize,
    /// `ln ||s||` per frame, where a frame is one index of the last axis of
    /// one batch item.
    pub frame_log_norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LangevinOutput {
    pub x: Tensor,
    pub evaluations: usize,
    pub trajectory: Vec<TrajectoryRecord>,
}

fn frame_log_norms(s: &Tensor) -> Vec<f64> {
    let shape = s.shape();
    let w = *shape.last().unwrap_or(&1);
    let b = shape.first().copied().filter(|_| shape.len() > 1).unwrap_or(1);
    if w == 0 || b == 0 {
        return Vec::new();
    }
    let per_item = s.len() / b;
    let rows = per_item / w;
    let mut out = Vec::with_capacity(b * w);
    for item in s.data().chunks_exact(per_item) {
        for t in 0..w {
            let sq: f64 = (0..rows).map(|r| item[r * w + t].powi(2)).sum();
            out.push(0.5 * sq.ln());
        }
    }
    out
}

/// Runs levels `start_level..=L`, `steps_per_level` updates each:
/// `x <- x + alpha_l s(x, l, speaker) [+ sqrt(2 alpha_l) z]`.
///
/// Noise is drawn element by element in row-major order from a generator
/// seeded with `config.seed`. The score function sees `x` unchanged in
/// shape and must return the same shape.
pub fn annealed_langevin<S: ScoreFunction + ?Sized>(
    score: &S,
    x0: &Tensor,
    schedule: &NoiseSchedule,
    config: &LangevinConfig,
    speaker: usize,
) -> Result<LangevinOutput> {
    config.validate(schedule.len())?;
    if !x0.is_finite() {
        return Err(Error::invalid("initial iterate", "contains non-finite values"));
    }
    let mut rng = crate::seeded_rng(config.seed);
    let t_max = config.steps_per_level;
    let stride = (t_max / 10).max(1);
    let mut x = x0.clone();
    let mut evaluations = 0;
    let mut trajectory = Vec::new();

    for level in config.start_level - 1..schedule.len() {
        let alpha = step_size(config.epsilon, schedule.sigma(level), schedule.last());
        let noise_scale = (2.0 * alpha).sqrt();
        for t in 1..=t_max {
            let s = score.score(&x, level, speaker)?;
            evaluations += 1;
            if s.shape() != x.shape() {
                return Err(crate::tensor::TensorError::ShapeMismatch {
                    op: "score function",
                    lhs: x.shape().to_vec(),
                    rhs: s.shape().to_vec(),
                }
                .into());
            }
            for (xi, si) in x.data_mut().iter_mut().zip(s.data()) {
                *xi += alpha * si;
            }
            if config.noisy {
                for xi in x.data_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *xi += noise_scale * z;
                }
            }
            if !x.is_finite() {
                return Err(Error::NonFiniteIterate { level: level + 1, step: t });
            }
            if config.record_trajectory && t % stride == 0 {
                trajectory.push(TrajectoryRecord {
                    level: level + 1,
                    step: t,
                    frame_log_norms: frame_log_norms(&s),
                });
            }
        }
    }
    Ok(LangevinOutput {
        x,
        evaluations,
        trajectory,
    })
}

fn check_target<S: ScoreFunction + ?Sized>(score: &S, schedule: &NoiseSchedule, speaker: usize) -> Result<()> {
    if let Some(k) = score.speakers() {
        if speaker >= k {
            return Err(Error::invalid(
                "target speaker",
                format!("index {speaker} out of range; valid speakers are 0..{k}"),
            ));
        }
    }
    if let Some(l) = score.levels() {
        if l != schedule.len() {
            return Err(Error::invalid(
                "noise schedule",
                format!("score function has {l} levels, schedule has {}", schedule.len()),
            ));
        }
    }
    Ok(())
}

/// Moves a normalized `D x M` feature matrix toward speaker `target`.
///
/// The whole utterance is one batch item: it is edge-padded to the score
/// function's time multiple, refined, and cropped back.
pub fn convert<S: ScoreFunction + ?Sized>(
    score: &S,
    input: &Array2<f64>,
    target: usize,
    schedule: &NoiseSchedule,
    config: &LangevinConfig,
) -> Result<(Array2<f64>, LangevinOutput)> {
    check_target(score, schedule, target)?;
    let (d, m) = input.dim();
    let x = Tensor::new([1, 1, d, m], input.iter().copied().collect())?;
    let (padded, len) = pad_time(&x, score.time_multiple())?;
    let mut out = annealed_langevin(score, &padded, schedule, config, target)?;
    let cropped = crop_time(&out.x, len)?;
    out.x = cropped.clone();
    let mat = Array2::from_shape_vec((d, m), cropped.into_data()).expect("cropped to the input extent");
    Ok((mat, out))
}

/// Draws a `D x M` matrix from speaker `speaker` starting at standard normal
/// noise. The sweep always covers the full schedule regardless of
/// `config.start_level`; `x0` uses the same generator as the update noise.
pub fn sample<S: ScoreFunction + ?Sized>(
    score: &S,
    feature_dim: usize,
    frames: usize,
    speaker: usize,
    schedule: &NoiseSchedule,
    config: &LangevinConfig,
) -> Result<Array2<f64>> {
    check_target(score, schedule, speaker)?;
    if feature_dim == 0 || frames == 0 {
        return Err(Error::invalid("sample shape", "dimension and frame count must be positive"));
    }
    let multiple = score.time_multiple();
    let padded = frames.div_ceil(multiple) * multiple;
    // separate stream for the initial draw so the update noise matches annealed_langevin
    let mut rng = crate::seeded_rng(config.seed ^ 0x5eed_1417);
    let x0 = Tensor::randn([1, 1, feature_dim, padded], &mut rng);
    let full = LangevinConfig {
        start_level: 1,
        ..config.clone()
    };
    let out = annealed_langevin(score, &x0, schedule, &full, speaker)?;
    let x = crop_time(&out.x, frames)?;
    Ok(Array2::from_shape_vec((feature_dim, frames), x.into_data()).expect("cropped to the requested extent"))
}

/// `level,step,frame,log_norm` rows.
pub fn write_trajectory_csv(path: impl AsRef<Path>, trajectory: &[TrajectoryRecord]) -> Result<()> {
    let mut out = String::from("level,step,frame,log_norm\n");
    for r in trajectory {
        for (f, v) in r.frame_log_norms.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", r.level, r.step, f, v);
        }
    }
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path, e))
}
