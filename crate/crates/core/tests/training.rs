//! Training against distributions whose optimal scores are known in closed form.

mod common;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use scorevc::eval::synthetic::{field_agreement, learned_scores};
use scorevc::eval::{synthetic_validation, GaussianMixture, ValidationSuite};
use scorevc::noise::{train, NoiseSchedule, StepRecord, TrainConfig, TrainingCorpus};
use scorevc::score_net::ScoreNetConfig;

fn point_net(levels: usize) -> ScoreNetConfig {
    ScoreNetConfig {
        feature_dim: 2,
        base_channels: 16,
        max_channels: 32,
        depth: 2,
        kernel_height: 3,
        kernel_width: 1,
        time_stride: 1,
        noise_levels: levels,
        speakers: 1,
    }
}

/// `count` utterances of 64 frames drawn from `N(mean, s^2 I)`.
fn gaussian_corpus(mean: [f64; 2], s: f64, count: usize, seed: u64) -> TrainingCorpus {
    let mut rng = scorevc::seeded_rng(seed);
    let utts = (0..count)
        .map(|_| {
            let z = common::randn_matrix(2, 64, &mut rng);
            Array2::from_shape_fn((2, 64), |(d, m)| mean[d] + s * z[[d, m]])
        })
        .collect();
    TrainingCorpus::new(vec![utts]).unwrap()
}

/// `n` points from `N(center, var I)`.
fn gaussian_points(center: [f64; 2], var: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, var.sqrt()).unwrap();
    let mut rng = scorevc::seeded_rng(seed);
    (0..n).map(|_| center.iter().map(|c| c + normal.sample(&mut rng)).collect()).collect()
}

fn mean_norm(v: &[Vec<f64>]) -> f64 {
    v.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).sum::<f64>() / v.len() as f64
}

/// Mean loss over the first and the last tenth of the run.
fn loss_ends(history: &[StepRecord]) -> (f64, f64) {
    let k = (history.len() / 10).max(1);
    let avg = |r: &[StepRecord]| r.iter().map(|s| s.loss).sum::<f64>() / r.len() as f64;
    (avg(&history[..k]), avg(&history[history.len() - k..]))
}

#[test]
fn single_point_corpus_learns_the_point_score() {
    let x0 = [0.5, -1.0];
    let sigma = 0.5;
    let corpus = gaussian_corpus(x0, 0.0, 16, 1);
    let schedule = NoiseSchedule::from_sigmas(vec![sigma]).unwrap();
    let cfg = TrainConfig {
        max_steps: Some(800),
        batch_size: 16,
        crop_frames: 32,
        seed: 2,
        ..TrainConfig::default()
    };
    let net = train(&corpus, point_net(1), &cfg, &schedule).unwrap().net;
    let pts = gaussian_points(x0, sigma * sigma, 300, 3);
    let learned = learned_scores(&net, &pts, 0, 0).unwrap();
    let analytic: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| vec![(x0[0] - p[0]) / (sigma * sigma), (x0[1] - p[1]) / (sigma * sigma)])
        .collect();
    let (rel, cos) = field_agreement(&learned, &analytic);
    assert!(cos > 0.9 && rel < 0.35, "cosine {cos}, rel err {rel}");
}

#[test]
fn gaussian_corpus_matches_smoothed_optimum_with_calibrated_scale() {
    let (mu, s) = ([1.0, -0.5], 0.3);
    let corpus = gaussian_corpus(mu, s, 64, 11);
    let schedule = NoiseSchedule::geometric(1.0, 0.1, 3).unwrap();
    let cfg = TrainConfig {
        max_steps: Some(1200),
        batch_size: 16,
        crop_frames: 32,
        seed: 12,
        ..TrainConfig::default()
    };
    let outcome = train(&corpus, point_net(3), &cfg, &schedule).unwrap();

    let mut scaled_norms = Vec::new();
    for level in 0..schedule.len() {
        let sigma = schedule.sigma(level);
        let var = s * s + sigma * sigma;
        let pts = gaussian_points(mu, var, 300, 20 + level as u64);
        let learned = learned_scores(&outcome.net, &pts, level, 0).unwrap();
        let analytic: Vec<Vec<f64>> = pts.iter().map(|p| vec![-(p[0] - mu[0]) / var, -(p[1] - mu[1]) / var]).collect();
        let (rel, cos) = field_agreement(&learned, &analytic);
        assert!(cos > 0.9, "level {}: cosine {cos}, rel err {rel}", level + 1);
        let scaled: Vec<Vec<f64>> = learned.iter().map(|v| v.iter().map(|x| sigma * x).collect()).collect();
        scaled_norms.push(mean_norm(&scaled));
    }
    let ratio = scaled_norms[0] / scaled_norms[schedule.len() - 1];
    assert!((0.1..=10.0).contains(&ratio), "norm ratio {ratio} from {scaled_norms:?}");

    let (first, last) = loss_ends(&outcome.history);
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn mixture_model_scores_and_samples_match_the_analytic_mixture() {
    let suite = ValidationSuite::from_toml(
        "seed = 21\n\
         [mixture]\nlabeling = \"single\"\ntrain_draws = 16384\nsample_draws = 1000\nconvert_draws = 0\ngrid_points = 11\n\
         [schedule]\nsigma_first = 1.0\nsigma_last = 0.05\nlevels = 6\n\
         [train]\nsteps = 1200\n",
    )
    .unwrap();
    let report = synthetic_validation(&suite).unwrap();
    assert!(report.training_error.is_none(), "{:?}", report.training_error);

    let (first, last) = loss_ends(&report.loss_history);
    assert!(last < first, "loss {first} -> {last}");

    let mix = suite.mixture.mixture().unwrap();
    let net = report.net.as_ref().expect("trained net");
    let schedule = suite.noise_schedule().unwrap();
    let pts = mix.sample(500, &mut scorevc::seeded_rng(22));
    let cosines: Vec<f64> = [schedule.len() - 2, schedule.len() - 1]
        .into_iter()
        .map(|level| {
            let smoothed: GaussianMixture = mix.smoothed(schedule.sigma(level)).unwrap();
            let learned = learned_scores(net, &pts, level, 0).unwrap();
            let analytic: Vec<Vec<f64>> = pts.iter().map(|p| smoothed.score(p)).collect();
            field_agreement(&learned, &analytic).1
        })
        .collect();
    let sampled = &report.sampling[0];
    let summary = format!(
        "cosines {cosines:?}, mode shares {:?}, mean error {}",
        sampled.mode_shares, sampled.mean_error
    );
    assert!(cosines.iter().all(|&c| c > 0.9), "{summary}");
    assert!(sampled.mode_shares.iter().all(|&s| s >= 0.2), "{summary}");
    assert!(sampled.mean_error < 0.15, "{summary}");
}
