//! Desk-scale validation against Gaussian mixtures with known scores.
//!
//! Points of a low-dimensional mixture are treated as single-frame feature
//! vectors: each frame of a `dim x M` matrix is one point, and the network
//! uses width-1 kernels with unit stride so frames never interact.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::Deserialize;

use super::mixture::GaussianMixture;
use crate::error::{Error, Result};
use crate::langevin::{convert, sample, LangevinConfig};
use crate::noise::{NoiseSchedule, StepRecord, TrainConfig, Trainer, TrainingCorpus};
use crate::score_net::{ScoreNet, ScoreNetConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// How mixture draws are grouped into pseudo-speakers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Component `k` is speaker `k`.
    #[default]
    PerComponent,
    /// The whole mixture is a single speaker.
    Single,
}

/// The synthetic data distribution and how many points each check uses.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub components: Vec<ComponentSpec>,
    pub labeling: Labeling,
    /// Training points per pseudo-speaker.
    pub train_draws: usize,
    /// Samples drawn per pseudo-speaker.
    pub sample_draws: usize,
    /// Points converted from speaker 0 to speaker 1.
    pub convert_draws: usize,
    /// Grid points per axis for two-dimensional mixtures.
    pub grid_points: usize,
}

impl Default for SyntheticSpec {
    /// Two unit-covariance components at `(-2, 0)` and `(2, 0)`.
    fn default() -> Self {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        Self {
            components: vec![
                ComponentSpec {
                    weight: 0.5,
                    mean: vec![-2.0, 0.0],
                    cov: id.clone(),
                },
                ComponentSpec {
                    weight: 0.5,
                    mean: vec![2.0, 0.0],
                    cov: id,
                },
            ],
            labeling: Labeling::PerComponent,
            train_draws: 32768,
            sample_draws: 1000,
            convert_draws: 200,
            grid_points: 21,
        }
    }
}

impl SyntheticSpec {
    pub fn mixture(&self) -> Result<GaussianMixture> {
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        let means: Vec<Vec<f64>> = self.components.iter().map(|c| c.mean.clone()).collect();
        let covs: Vec<Vec<Vec<f64>>> = self.components.iter().map(|c| c.cov.clone()).collect();
        GaussianMixture::new(&weights, &means, &covs)
    }

    /// Analytic distribution of each pseudo-speaker.
    pub fn speaker_distributions(&self) -> Result<Vec<GaussianMixture>> {
        let mix = self.mixture()?;
        Ok(match self.labeling {
            Labeling::PerComponent => (0..mix.len()).map(|i| mix.component(i)).collect(),
            Labeling::Single => vec![mix],
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub sigma_first: f64,
    pub sigma_last: f64,
    pub levels: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            sigma_first: 1.0,
            sigma_last: 0.01,
            levels: 11,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub base_channels: usize,
    pub max_channels: usize,
    pub depth: usize,
    pub kernel_height: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            base_channels: 16,
            max_channels: 32,
            depth: 2,
            kernel_height: 3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub steps: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub learning_rate: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            crop_frames: 64,
            learning_rate: 1e-3,
        }
    }
}

/// Langevin settings; omitted `start_level` and `noisy` fall back to the
/// pure-sampling or conversion defaults depending on where they are used.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    pub epsilon: f64,
    pub steps_per_level: usize,
    pub start_level: Option<usize>,
    pub noisy: Option<bool>,
}

impl SamplerSpec {
    pub fn config(&self, base: LangevinConfig, seed: u64) -> LangevinConfig {
        LangevinConfig {
            epsilon: self.epsilon,
            steps_per_level: self.steps_per_level,
            start_level: self.start_level.unwrap_or(base.start_level),
            noisy: self.noisy.unwrap_or(base.noisy),
            seed,
            ..base
        }
    }
}

impl Default for SamplerSpec {
    fn default() -> Self {
        let c = LangevinConfig::default();
        Self {
            epsilon: c.epsilon,
            steps_per_level: c.steps_per_level,
            start_level: None,
            noisy: None,
        }
    }
}

/// Pass thresholds for the hard checks.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Minimum share of samples within 3 standard deviations (Mahalanobis)
    /// of the speaker's component.
    pub coverage: f64,
    /// Minimum share of samples per mode when one speaker holds the whole
    /// mixture.
    pub mode_share: f64,
    /// Maximum relative score error at the smallest noise level.
    pub score_rel_error: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            coverage: 0.8,
            mode_share: 0.2,
            score_rel_error: 0.3,
        }
    }
}

/// Everything one validation run needs; the on-disk form is TOML with one
/// table per field (all optional).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSuite {
    pub seed: u64,
    pub mixture: SyntheticSpec,
    pub schedule: ScheduleSpec,
    pub network: NetworkSpec,
    pub train: TrainSpec,
    pub sampling: SamplerSpec,
    pub conversion: SamplerSpec,
    pub thresholds: Thresholds,
}

impl ValidationSuite {
    /// Parses a suite, filling every omitted key with its default.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid("validation spec", e.to_string()))
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        NoiseSchedule::geometric(s.sigma_first, s.sigma_last, s.levels)
    }

    pub fn net_config(&self, dim: usize, speakers: usize) -> ScoreNetConfig {
        ScoreNetConfig {
            feature_dim: dim,
            base_channels: self.network.base_channels,
            max_channels: self.network.max_channels,
            depth: self.network.depth,
            kernel_height: self.network.kernel_height,
            kernel_width: 1,
            time_stride: 1,
            noise_levels: self.schedule.levels,
            speakers,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            max_steps: Some(self.train.steps),
            crop_frames: self.train.crop_frames,
            seed: self.seed.wrapping_add(1),
            ..TrainConfig::default()
        }
    }
}

/// Learned versus analytic score of one speaker at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFieldError {
    pub speaker: usize,
    /// One-based noise level.
    pub level: usize,
    pub sigma: f64,
    /// `mean ||learned - analytic|| / mean ||analytic||` over the
    /// high-density points.
    pub rel_error: f64,
    pub mean_cosine: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingResult {
    pub speaker: usize,
    pub mean_error: f64,
    /// Share of samples within Mahalanobis distance 3 of a component of the
    /// speaker's distribution.
    pub coverage: f64,
    /// Share of samples nearest (Mahalanobis) to each component.
    pub mode_shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionResult {
    pub source: usize,
    pub target: usize,
    /// Mean log-density of the points under the target distribution.
    pub log_density_before: f64,
    pub log_density_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub speaker: usize,
    pub level: usize,
    pub point: [f64; 2],
    pub learned: [f64; 2],
    pub analytic: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub loss_history: Vec<StepRecord>,
    /// Set when training diverged; the remaining sections are then empty.
    pub training_error: Option<String>,
    pub score_errors: Vec<ScoreFieldError>,
    pub sampling: Vec<SamplingResult>,
    pub conversion: Option<ConversionResult>,
    pub grid: Vec<GridRow>,
    pub checks: Vec<Check>,
    pub net: Option<ScoreNet>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.training_error.is_none() && self.checks.iter().all(|c| c.passed)
    }

    /// `speaker,level,x,y,learned_x,learned_y,analytic_x,analytic_y` rows.
    pub fn grid_csv(&self) -> String {
        let mut out = String::from("speaker,level,x,y,learned_x,learned_y,analytic_x,analytic_y\n");
        for r in &self.grid {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.speaker, r.level, r.point[0], r.point[1], r.learned[0], r.learned[1], r.analytic[0], r.analytic[1]
            );
        }
        out
    }

    /// `check,value,threshold,passed` rows.
    pub fn checks_csv(&self) -> String {
        let mut out = String::from("check,value,threshold,passed\n");
        if let Some(e) = &self.training_error {
            let _ = writeln!(out, "training,NaN,NaN,false # {e}");
        }
        for c in &self.checks {
            let _ = writeln!(out, "{},{},{},{}", c.name, c.value, c.threshold, c.passed);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        if let Some(e) = &self.training_error {
            let _ = writeln!(out, "training failed: {e}");
            if let Some(last) = self.loss_history.last() {
                let _ = writeln!(out, "last finite loss {} at step {}", last.loss, last.step);
            }
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{} {}: {:.4} (threshold {})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.threshold
            );
        }
        out
    }
}

fn points_to_matrix(points: &[Vec<f64>], dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((dim, points.len()), |(d, m)| points[m][d])
}

fn matrix_to_points(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.columns().into_iter().map(|c| c.to_vec()).collect()
}

/// Scores of `points` under the network at one level and speaker.
pub fn learned_scores(net: &ScoreNet, points: &[Vec<f64>], level: usize, speaker: usize) -> Result<Vec<Vec<f64>>> {
    let dim = net.config().feature_dim;
    let m = points_to_matrix(points, dim);
    let x = Tensor::new([1, 1, dim, points.len()], m.iter().copied().collect())?;
    let s = crate::langevin::ScoreFunction::score(net, &x, level, speaker)?;
    let s = Array2::from_shape_vec((dim, points.len()), s.into_data()).expect("score keeps the input shape");
    Ok(matrix_to_points(&s))
}

/// Square grid spanning every component mean plus three standard
/// deviations, `n` points per axis.
pub fn grid_2d(mix: &GaussianMixture, n: usize) -> Vec<Vec<f64>> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for i in 0..mix.len() {
        let cov = mix.covariance(i);
        for d in 0..2 {
            let r = 3.0 * cov[(d, d)].sqrt();
            lo[d] = lo[d].min(mix.mean(i)[d] - r);
            hi[d] = hi[d].max(mix.mean(i)[d] + r);
        }
    }
    let at = |d: usize, i: usize| {
        if n == 1 {
            0.5 * (lo[d] + hi[d])
        } else {
            lo[d] + (hi[d] - lo[d]) * i as f64 / (n - 1) as f64
        }
    };
    (0..n).flat_map(|i| (0..n).map(move |j| vec![at(0, j), at(1, i)])).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `(mean ||a - b|| / mean ||b||, mean cosine(a, b))`; points where either
/// vector vanishes are left out of the cosine average.
pub fn field_agreement(learned: &[Vec<f64>], analytic: &[Vec<f64>]) -> (f64, f64) {
    let mut err = 0.0;
    let mut reference = 0.0;
    let mut cos = 0.0;
    let mut cos_n = 0usize;
    for (a, b) in learned.iter().zip(analytic) {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        err += norm(&diff);
        reference += norm(b);
        let (na, nb) = (norm(a), norm(b));
        if na > 0.0 && nb > 0.0 {
            cos += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            cos_n += 1;
        }
    }
    (err / reference, if cos_n == 0 { f64::NAN } else { cos / cos_n as f64 })
}

fn within(mix: &GaussianMixture, x: &[f64], radius: f64) -> bool {
    (0..mix.len()).any(|i| mix.mahalanobis_sq(i, x) <= radius * radius)
}

fn nearest_component(mix: &GaussianMixture, x: &[f64]) -> usize {
    (0..mix.len())
        .min_by(|&a, &b| mix.mahalanobis_sq(a, x).total_cmp(&mix.mahalanobis_sq(b, x)))
        .expect("mixture has components")
}

fn check(name: impl Into<String>, value: f64, threshold: f64, passed: bool) -> Check {
    Check {
        name: name.into(),
        value,
        threshold,
        passed,
    }
}

/// Trains a small score network on mixture draws and measures it against
/// the analytic scores, sampling moments and a conversion between speakers.
pub fn synthetic_validation(suite: &ValidationSuite) -> Result<ValidationReport> {
    let spec = &suite.mixture;
    let mix = spec.mixture()?;
    let dim = mix.dim();
    let schedule = suite.noise_schedule()?;
    let speakers = spec.speaker_distributions()?;
    let train_cfg = suite.train_config();
    if spec.train_draws == 0 {
        return Err(Error::invalid("validation spec", "train_draws must be positive"));
    }

    // training data, speaker by speaker
    let mut rng = crate::seeded_rng(suite.seed);
    let chunk = train_cfg.crop_frames.max(1);
    let corpus: Vec<Vec<Array2<f64>>> = speakers
        .iter()
        .map(|dist| {
            dist.sample(spec.train_draws, &mut rng)
                .chunks(chunk)
                .map(|c| points_to_matrix(c, dim))
                .collect()
        })
        .collect();
    let corpus = TrainingCorpus::new(corpus)?;

    let mut report = ValidationReport::default();
    let mut trainer = Trainer::new(suite.net_config(dim, speakers.len()), train_cfg.clone(), schedule.clone())?;
    for _ in 0..train_cfg.total_steps(&corpus) {
        if let Err(e) = trainer.step(&corpus) {
            if matches!(e, Error::NonFiniteLoss { .. }) {
                report.loss_history = trainer.history().to_vec();
                report.training_error = Some(e.to_string());
                return Ok(report);
            }
            return Err(e);
        }
    }
    let outcome = trainer.into_outcome();
    report.loss_history = outcome.history;
    let net = outcome.net;

    // score field against the analytic smoothed densities
    let eval_points = if dim == 2 {
        grid_2d(&mix, spec.grid_points.max(1))
    } else {
        mix.sample(spec.grid_points.max(1).pow(2), &mut crate::seeded_rng(suite.seed.wrapping_add(7)))
    };
    for (k, dist) in speakers.iter().enumerate() {
        let inside: Vec<Vec<f64>> = eval_points.iter().filter(|p| within(dist, p, 2.0)).cloned().collect();
        for level in 0..schedule.len() {
            let sigma = schedule.sigma(level);
            let smoothed = dist.smoothed(sigma)?;
            let learned = learned_scores(&net, &eval_points, level, k)?;
            if dim == 2 {
                for (p, l) in eval_points.iter().zip(&learned) {
                    let a = smoothed.score(p);
                    report.grid.push(GridRow {
                        speaker: k,
                        level: level + 1,
                        point: [p[0], p[1]],
                        learned: [l[0], l[1]],
                        analytic: [a[0], a[1]],
                    });
                }
            }
            if inside.is_empty() {
                continue;
            }
            let learned_in = learned_scores(&net, &inside, level, k)?;
            let analytic_in: Vec<Vec<f64>> = inside.iter().map(|p| smoothed.score(p)).collect();
            let (rel_error, mean_cosine) = field_agreement(&learned_in, &analytic_in);
            report.score_errors.push(ScoreFieldError {
                speaker: k,
                level: level + 1,
                sigma,
                rel_error,
                mean_cosine,
                points: inside.len(),
            });
        }
    }
    for e in report.score_errors.iter().filter(|e| e.level == schedule.len()) {
        let t = suite.thresholds.score_rel_error;
        report.checks.push(check(
            format!("score_rel_error[speaker={}]", e.speaker),
            e.rel_error,
            t,
            e.rel_error < t,
        ));
    }

    // pure sampling
    for (k, dist) in speakers.iter().enumerate() {
        let cfg = suite
            .sampling
            .config(LangevinConfig::sampling(), suite.seed.wrapping_add(100 + k as u64));
        let drawn = sample(&net, dim, spec.sample_draws.max(1), k, &schedule, &cfg)?;
        let pts = matrix_to_points(&drawn);
        let n = pts.len() as f64;
        let mut mean = vec![0.0; dim];
        for p in &pts {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let target_mean = dist.mixture_mean();
        let diff: Vec<f64> = mean.iter().zip(&target_mean).map(|(a, b)| a - b).collect();
        let coverage = pts.iter().filter(|p| within(dist, p, 3.0)).count() as f64 / n;
        let mut mode_shares = vec![0.0; dist.len()];
        for p in &pts {
            mode_shares[nearest_component(dist, p)] += 1.0 / n;
        }
        report.checks.push(check(
            format!("coverage[speaker={k}]"),
            coverage,
            suite.thresholds.coverage,
            coverage >= suite.thresholds.coverage,
        ));
        if dist.len() > 1 {
            for (i, &share) in mode_shares.iter().enumerate() {
                report.checks.push(check(
                    format!("mode_share[speaker={k},component={i}]"),
                    share,
                    suite.thresholds.mode_share,
                    share >= suite.thresholds.mode_share,
                ));
            }
        }
        report.sampling.push(SamplingResult {
            speaker: k,
            mean_error: norm(&diff),
            coverage,
            mode_shares,
        });
    }

    // conversion from speaker 0 toward speaker 1
    if speakers.len() >= 2 && spec.convert_draws > 0 {
        let pts = speakers[0].sample(spec.convert_draws, &mut crate::seeded_rng(suite.seed.wrapping_add(200)));
        let cfg = suite.conversion.config(LangevinConfig::default(), suite.seed.wrapping_add(201));
        let (moved, _) = convert(&net, &points_to_matrix(&pts, dim), 1, &schedule, &cfg)?;
        let target = &speakers[1];
        let mean_ld = |p: &[Vec<f64>]| p.iter().map(|x| target.log_density(x)).sum::<f64>() / p.len() as f64;
        let before = mean_ld(&pts);
        let after = mean_ld(&matrix_to_points(&moved));
        report.checks.push(check("conversion_log_density_gain", after - before, 0.0, after > before));
        report.conversion = Some(ConversionResult {
            source: 0,
            target: 1,
            log_density_before: before,
            log_density_after: after,
        });
    }
    report.net = Some(net);
    Ok(report)
}
