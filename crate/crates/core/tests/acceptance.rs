//! Acceptance criteria, run as a plain binary so that every criterion prints
//! one PASS/FAIL line regardless of output capture.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use scorevc::eval::synthetic::{field_agreement, learned_scores};
use scorevc::eval::{dtw_align, euclidean, mcd, synthetic_validation, ValidationSuite, MCD_SCALE};
use scorevc::features::{
    adjust_mean_variance, compute_speaker_stats, convert_log_f0, convert_utterance, decode_features,
    denormalize_mcc, encode_features, normalize_mcc, SpeakerStats,
};
use scorevc::langevin::{annealed_langevin, convert, step_size, LangevinConfig};
use scorevc::noise::{train, NoiseSchedule, TrainConfig, TrainingCorpus};
use scorevc::score_net::{ConditioningIndices, ForwardHooks, NormMode, ScoreNet, ScoreNetConfig};
use scorevc::tensor::kernels::ConvGeometry;
use scorevc::tensor::{Tape, Tensor, Var};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

const TRIALS: usize = 20;
const GRAD_TOL: f64 = 1e-4;

fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::randn(shape.to_vec(), rng)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// One random instance of each differentiable primitive.
fn primitive_cases(rng: &mut scorevc::Rng) -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let b = rng.random_range(1..3usize);
    let c = rng.random_range(1..4usize);
    let h = rng.random_range(2..6usize);
    let w = rng.random_range(3..7usize);
    let co = rng.random_range(1..4usize);
    let kh = rng.random_range(1..=h.min(3));
    let kw = rng.random_range(1..=w.min(3));
    let geom = ConvGeometry::new((rng.random_range(1..3), rng.random_range(1..3)), (rng.random_range(0..2), rng.random_range(0..2)));
    let rows = 3;
    let row_idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..rows)).collect();
    let factors: Vec<f64> = (0..b).map(|_| rng.random_range(0.2..2.0)).collect();
    let shift: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spread: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
    let x = randn(&[b, c, h, w], rng);
    vec![
        (
            "conv2d",
            vec![x.clone(), randn(&[co, c, kh, kw], rng), randn(&[co], rng)],
            Box::new(move |t: &mut Tape, v: &[Var]| t.conv2d(v[0], v[1], Some(v[2]), geom).unwrap()),
        ),
        (
            "deconv2d",
            vec![x.clone(), randn(&[c, co, kh, kw], rng), randn(&[co], rng)],
            Box::new(move |t: &mut Tape, v: &[Var]| t.deconv2d(v[0], v[1], Some(v[2]), ConvGeometry::new(geom.stride, (0, 0))).unwrap()),
        ),
        (
            "glu",
            vec![randn(&[b, 2 * c, h, w], rng)],
            Box::new(|t: &mut Tape, v: &[Var]| t.glu(v[0]).unwrap()),
        ),
        (
            "standardize",
            vec![x.clone()],
            Box::new(|t: &mut Tape, v: &[Var]| t.standardize(v[0]).unwrap().0),
        ),
        (
            "normalize",
            vec![x.clone()],
            Box::new(move |t: &mut Tape, v: &[Var]| t.normalize(v[0], &shift, &spread).unwrap()),
        ),
        (
            "row_affine",
            vec![x.clone(), randn(&[rows, c], rng), randn(&[rows, c], rng)],
            Box::new(move |t: &mut Tape, v: &[Var]| t.row_affine(v[0], v[1], v[2], row_idx.clone()).unwrap()),
        ),
        (
            "concat",
            vec![x.clone(), randn(&[b, co, h, w], rng)],
            Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1]]).unwrap()),
        ),
        (
            "scale_items",
            vec![x.clone()],
            Box::new(move |t: &mut Tape, v: &[Var]| t.scale_items(v[0], &factors).unwrap()),
        ),
        (
            "add",
            vec![x.clone(), randn(&[b, c, h, w], rng)],
            Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1]).unwrap()),
        ),
        (
            "sub",
            vec![x.clone(), randn(&[b, c, h, w], rng)],
            Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1]).unwrap()),
        ),
        (
            "square_mean",
            vec![x.clone()],
            Box::new(|t: &mut Tape, v: &[Var]| t.square_mean(v[0]).unwrap()),
        ),
        (
            "sum",
            vec![x],
            Box::new(|t: &mut Tape, v: &[Var]| t.sum(v[0]).unwrap()),
        ),
    ]
}

fn gradient_correctness() -> Outcome {
    let mut rng = scorevc::seeded_rng(101);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for _ in 0..TRIALS {
        for (name, inputs, build) in primitive_cases(&mut rng) {
            let e = common::fd_max_rel_error(&inputs, build, &mut rng);
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(entry) => entry.1 = entry.1.max(e),
                None => worst.push((name, e)),
            }
        }
    }
    let cfg = ScoreNetConfig {
        feature_dim: 8,
        base_channels: 2,
        max_channels: 4,
        depth: 2,
        kernel_height: 3,
        kernel_width: 4,
        time_stride: 2,
        noise_levels: 3,
        speakers: 2,
    };
    let net = ScoreNet::new(cfg, &mut rng).unwrap();
    let mut inputs = vec![randn(&[1, 1, 8, 16], &mut rng)];
    inputs.extend(net.params().tensors.iter().cloned());
    let conds = [ConditioningIndices::new(1, 1)];
    let net_err = common::fd_max_rel_error(
        &inputs,
        |tape, vars| {
            net.forward_on_tape(tape, &vars[1..], vars[0], &conds, NormMode::Batch, &ForwardHooks::default())
                .unwrap()
                .output
        },
        &mut rng,
    );
    worst.push(("score_net", net_err));
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let listing: Vec<String> = worst.iter().map(|(n, e)| format!("{n}={e:.1e}")).collect();
    outcome(max < GRAD_TOL, format!("max rel err {max:.2e} ({})", listing.join(" ")))
}

fn schedule_exactness() -> Outcome {
    let s = NoiseSchedule::geometric(1.0, 0.01, 11).unwrap();
    let alpha = step_size(1e-5, 1.0, 0.01);
    let ok = s.len() == 11 && s.sigma(0) == 1.0 && s.sigma(10) == 0.01 && (s.sigma(5) - 0.1).abs() <= 1e-12 && alpha == 0.1;
    outcome(
        ok,
        format!("sigma_1={} sigma_6={:.17} sigma_11={} alpha={}", s.sigma(0), s.sigma(5), s.sigma(10), alpha),
    )
}

/// Small score network over single 2-D points (kernel width and stride 1).
fn toy_net_config(levels: usize, speakers: usize) -> ScoreNetConfig {
    ScoreNetConfig {
        feature_dim: 2,
        base_channels: 16,
        max_channels: 32,
        depth: 2,
        kernel_height: 3,
        kernel_width: 1,
        time_stride: 1,
        noise_levels: levels,
        speakers,
    }
}

fn dsm_oracle() -> Outcome {
    let mut rng = scorevc::seeded_rng(303);
    let utterances: Vec<Array2<f64>> = (0..64).map(|_| common::randn_matrix(2, 64, &mut rng)).collect();
    let corpus = TrainingCorpus::new(vec![utterances]).unwrap();
    let schedule = NoiseSchedule::from_sigmas(vec![1.0]).unwrap();
    let cfg = TrainConfig {
        max_steps: Some(2000),
        batch_size: 16,
        crop_frames: 32,
        seed: 7,
        ..TrainConfig::default()
    };
    let net = match train(&corpus, toy_net_config(1, 1), &cfg, &schedule) {
        Ok(o) => o.net,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let grid: Vec<Vec<f64>> = (0..21)
        .flat_map(|i| (0..21).map(move |j| vec![-2.0 + 0.2 * j as f64, -2.0 + 0.2 * i as f64]))
        .filter(|p| {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            r <= 2.0 + 1e-12 && r > 1e-12
        })
        .collect();
    let learned = learned_scores(&net, &grid, 0, 0).unwrap();
    let analytic: Vec<Vec<f64>> = grid.iter().map(|p| vec![-p[0] / 2.0, -p[1] / 2.0]).collect();
    let (rel, cosine) = field_agreement(&learned, &analytic);
    outcome(
        cosine > 0.95,
        format!("mean cosine {cosine:.4} over {} grid points (rel err {rel:.3})", grid.len()),
    )
}

fn mixture_validation() -> Outcome {
    let report = match synthetic_validation(&ValidationSuite::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("suite failed: {e}")),
    };
    if let Some(e) = &report.training_error {
        return outcome(false, format!("training diverged: {e}"));
    }
    let coverage: Vec<f64> = report.sampling.iter().map(|s| s.coverage).collect();
    let conv = report.conversion.as_ref().expect("conversion ran");
    let ok = coverage.len() == 2
        && coverage.iter().all(|&c| c >= 0.8)
        && conv.log_density_after > conv.log_density_before;
    outcome(
        ok,
        format!(
            "coverage {:?}, log-density {:.4} -> {:.4}",
            coverage.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>(),
            conv.log_density_before,
            conv.log_density_after
        ),
    )
}

fn langevin_closed_form() -> Outcome {
    let mut rng = scorevc::seeded_rng(505);
    let (d, m) = (3, 5);
    let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = 1.7;
    let x0 = randn(&[1, 1, d, m], &mut rng);
    let schedule = NoiseSchedule::geometric(1.0, 0.01, 11).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    // Single level at the smallest sigma, then the full sweep.
    for (start, eps) in [(11, 0.05), (1, 2e-4)] {
        let seen = std::cell::RefCell::new(Vec::new());
        let score = |x: &Tensor, _: usize, _: usize| {
            seen.borrow_mut().push(x.clone());
            Ok(Tensor::from_fn(x.shape().to_vec(), |i| -(x.data()[i] - mu[(i / m) % d]) / v))
        };
        let cfg = LangevinConfig {
            epsilon: eps,
            steps_per_level: 120,
            start_level: start,
            noisy: false,
            ..LangevinConfig::default()
        };
        let out = annealed_langevin(&score, &x0, &schedule, &cfg, 0).unwrap();
        let mut iterates = seen.into_inner();
        iterates.push(out.x);
        let mut factor = 1.0;
        let mut t = 0;
        for level in (start - 1)..schedule.len() {
            let alpha = step_size(eps, schedule.sigma(level), schedule.last());
            for _ in 0..120 {
                let x = &iterates[t];
                for i in 0..x.len() {
                    let expected = factor * (x0.data()[i] - mu[(i / m) % d]);
                    let residual = x.data()[i] - mu[(i / m) % d];
                    worst = worst.max((residual - expected).abs());
                }
                factor *= 1.0 - alpha / v;
                t += 1;
                checked += 1;
            }
        }
        let last = iterates.last().unwrap();
        for i in 0..last.len() {
            let expected = factor * (x0.data()[i] - mu[(i / m) % d]);
            worst = worst.max((last.data()[i] - mu[(i / m) % d] - expected).abs());
        }
    }
    outcome(worst <= 1e-10, format!("max residual deviation {worst:.2e} over {checked} steps"))
}

fn dtw_mcd_oracle() -> Outcome {
    let mut rng = scorevc::seeded_rng(606);
    let mut mismatches = 0;
    for _ in 0..200 {
        let d = rng.random_range(1..4);
        let a = common::randn_matrix(d, rng.random_range(1..=8), &mut rng);
        let b = common::randn_matrix(d, rng.random_range(1..=8), &mut rng);
        let cost = Array2::from_shape_fn((a.ncols(), b.ncols()), |(i, j)| euclidean(a.column(i), b.column(j)));
        let (best, _, _) = common::brute_force_dtw(&cost);
        let got = dtw_align(&a, &b, euclidean);
        // Exact ties between distinct paths occur (e.g. 1-D rows offset by a
        // constant), so the path must be a valid optimum, not a specific one.
        let tol = 1e-12 * best.max(1.0);
        let path_cost: f64 = got.path.iter().map(|&(i, j)| cost[[i, j]]).sum();
        if (got.cost - best).abs() > tol || (path_cost - best).abs() > tol || !common::is_warping_path(&got.path, cost.dim()) {
            mismatches += 1;
        }
    }
    let mut a = vec![0.0; 25];
    let b = a.clone();
    a[1] = 1.0;
    let value = mcd(&a, &b).unwrap();
    let expected = 10.0 / std::f64::consts::LN_10 * 2f64.sqrt();
    let ok = mismatches == 0 && (value - expected).abs() <= 1e-9 && (MCD_SCALE * 2f64.sqrt() - expected).abs() <= 1e-12;
    outcome(ok, format!("{mismatches}/200 DTW mismatches, unit MCD {value:.10} dB"))
}

fn stats_for(seq: &[scorevc::features::FeatureSequence]) -> SpeakerStats {
    compute_speaker_stats(seq).unwrap()
}

fn pipeline_round_trips() -> Outcome {
    let mut rng = scorevc::seeded_rng(707);
    let mut worst = 0.0f64;
    let mut lossless = true;
    for trial in 0..50 {
        let dim = rng.random_range(1..30);
        let frames = rng.random_range(3..40);
        let seq = common::f32_exact_sequence(dim, frames, trial % 4, 0.5, &mut rng);
        let decoded = decode_features(&encode_features(&seq).unwrap()).unwrap();
        lossless &= decoded == seq;

        let src = stats_for(std::slice::from_ref(&seq));
        let other = common::f32_exact_sequence(dim, frames + 5, 0, -1.5, &mut rng);
        let tgt = stats_for(std::slice::from_ref(&other));
        let back = denormalize_mcc(&normalize_mcc(seq.mcc(), &src).unwrap(), &src).unwrap();
        worst = worst.max((&back - seq.mcc()).mapv(f64::abs).fold(0.0, |a, &b| a.max(b)));

        let once = adjust_mean_variance(seq.mcc(), &seq.voiced(), &tgt).unwrap();
        let twice = adjust_mean_variance(&once, &seq.voiced(), &tgt).unwrap();
        worst = worst.max((&twice - &once).mapv(f64::abs).fold(0.0, |a, &b| a.max(b)));

        let fwd = convert_log_f0(seq.log_f0(), &src, &tgt).unwrap();
        let inv = convert_log_f0(&fwd, &tgt, &src).unwrap();
        for (a, b) in inv.iter().zip(seq.log_f0()) {
            match (a, b) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => lossless = false,
            }
        }
    }
    outcome(
        lossless && worst <= 1e-10,
        format!("file round trip lossless={lossless}, max identity error {worst:.2e}"),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_scorevc"))
        .args(args)
        .env_remove(scorevc::cli::DATA_ROOT_ENV)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn train_and_convert(data: &Path, run: &Path, input: &Path, out: &Path) -> Result<(), String> {
    let d = |p: &Path| p.to_str().unwrap().to_string();
    run_cli(&[
        "train", "--data-dir", &d(data), "--speakers", "alice,bob", "--steps", "50", "--seed", "11",
        "--batch", "4", "--crop", "16", "--base-channels", "4", "--max-channels", "8", "--depth", "2",
        "--out", &d(run),
    ])?;
    run_cli(&[
        "convert", "--input", &d(input), "--target-speaker", "bob", "--checkpoint",
        &d(&run.join("model.ckpt")), "--steps", "10", "--out", &d(out),
    ])
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_corpus(&data, &["alice", "bob"], 4, 6, 24, 808);
    let d = |p: &Path| p.to_str().unwrap().to_string();
    for s in ["alice", "bob"] {
        if let Err(e) = run_cli(&["stats", "--data-dir", &d(&data), "--speaker", s]) {
            return outcome(false, e);
        }
    }
    let input = data.join("alice").join("utt01.vgf");
    let runs = [dir.path().join("run1"), dir.path().join("run2")];
    for (i, run) in runs.iter().enumerate() {
        if let Err(e) = train_and_convert(&data, run, &input, &dir.path().join(format!("conv{i}.vgf"))) {
            return outcome(false, e);
        }
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    let same_ckpt = read(&runs[0].join("model.ckpt")) == read(&runs[1].join("model.ckpt"));
    let same_out = read(&dir.path().join("conv0.vgf")) == read(&dir.path().join("conv1.vgf"));
    let loss_rows = std::fs::read_to_string(runs[0].join("loss.csv")).unwrap().lines().count() - 1;
    outcome(
        same_ckpt && same_out && loss_rows == 50,
        format!("checkpoints identical={same_ckpt}, converted identical={same_out}, {loss_rows} loss rows"),
    )
}

fn conversion_contract() -> Outcome {
    let mut rng = scorevc::seeded_rng(909);
    let schedule = NoiseSchedule::geometric(1.0, 0.01, 11).unwrap();
    let cfg = ScoreNetConfig {
        feature_dim: 5,
        base_channels: 4,
        max_channels: 8,
        depth: 2,
        kernel_height: 3,
        kernel_width: 4,
        time_stride: 2,
        noise_levels: 11,
        speakers: 2,
    };
    let net = ScoreNet::new(cfg, &mut rng).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for frames in [1, 7, 13, 16] {
        let seq = common::f32_exact_sequence(5, frames.max(3), 2, 0.0, &mut rng);
        let src = stats_for(std::slice::from_ref(&seq));
        let tgt_seq = common::f32_exact_sequence(5, 20, 0, 1.0, &mut rng);
        let tgt = stats_for(std::slice::from_ref(&tgt_seq));
        let lc = LangevinConfig {
            steps_per_level: 5,
            ..LangevinConfig::default()
        };
        let out = convert_utterance(&net, &seq, 1, &src, &tgt, &schedule, &lc).unwrap();
        ok &= out.dim() == seq.dim() && out.frames() == seq.frames() && out.ap() == seq.ap();

        let zero = |x: &Tensor, _: usize, _: usize| Ok(Tensor::zeros(x.shape().to_vec()));
        let normalized = normalize_mcc(seq.mcc(), &src).unwrap();
        let (refined, _) = convert(&zero, &normalized, 1, &schedule, &LangevinConfig::default()).unwrap();
        ok &= refined == normalized;
        let full = convert_utterance(&zero, &seq, 1, &src, &tgt, &schedule, &LangevinConfig::default()).unwrap();
        ok &= full.mcc() == &adjust_mean_variance(&normalized, &seq.voiced(), &tgt).unwrap();
        notes.push(format!("{}x{}", out.dim(), out.frames()));
    }
    outcome(ok, format!("shapes preserved for {}; zero score is the identity", notes.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("1 gradient correctness", gradient_correctness, Duration::from_secs(60)),
        ("2 schedule exactness", schedule_exactness, Duration::MAX),
        ("3 DSM single-Gaussian oracle", dsm_oracle, Duration::from_secs(300)),
        ("4 mixture validation", mixture_validation, Duration::from_secs(900)),
        ("5 Langevin closed form", langevin_closed_form, Duration::MAX),
        ("6 DTW/MCD oracles", dtw_mcd_oracle, Duration::MAX),
        ("7 pipeline round trips", pipeline_round_trips, Duration::MAX),
        ("8 end-to-end determinism", end_to_end_determinism, Duration::MAX),
        ("9 conversion contract", conversion_contract, Duration::MAX),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let mut result = run();
        let elapsed = start.elapsed();
        if elapsed > budget {
            result.passed = false;
            result.detail.push_str(&format!("; exceeded runtime budget of {}s", budget.as_secs()));
        }
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if result.passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
        if !result.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
