//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use scorevc::features::{write_feature_file, FeatureSequence};
use scorevc::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// Entries whose autodiff and finite-difference values are both below this
/// magnitude are compared absolutely; everything else relatively.
pub const FD_FLOOR: f64 = 1e-6;

/// Worst relative disagreement between reverse-mode gradients and central
/// differences of `loss = mean((f(inputs) - target)^2)`, with `target` a
/// fixed random tensor so that no op sees a degenerate upstream gradient.
pub fn fd_max_rel_error<F>(inputs: &[Tensor], f: F, rng: &mut impl Rng) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let target = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        Tensor::randn(tape.value(out).shape().to_vec(), rng)
    };
    let loss_of = |values: &[Tensor], track: bool| -> (Tape, Var, Vec<Var>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| if track { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let out = f(&mut tape, &vars);
        let c = tape.constant(target.clone());
        let diff = tape.sub(out, c).expect("target matches output shape");
        let loss = tape.square_mean(diff).expect("finite loss");
        (tape, loss, vars)
    };
    let (tape, loss, vars) = loss_of(inputs, true);
    let grads = tape.backward(loss).expect("backward");

    let mut worst = 0.0f64;
    let mut values = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in 0..inputs[k].len() {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + FD_STEP;
            let (t, l, _) = loss_of(&values, false);
            let plus = t.value(l).data()[0];
            values[k].data_mut()[i] = orig - FD_STEP;
            let (t, l, _) = loss_of(&values, false);
            let minus = t.value(l).data()[0];
            values[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Minimal cost over every monotone, continuous path from `(0,0)` to the
/// far corner, found by exhaustive depth-first enumeration, together with
/// the first minimizing path and the number of paths visited.
pub fn brute_force_dtw(cost: &Array2<f64>) -> (f64, Vec<(usize, usize)>, usize) {
    fn walk(
        cost: &Array2<f64>,
        path: &mut Vec<(usize, usize)>,
        acc: f64,
        best: &mut (f64, Vec<(usize, usize)>),
        count: &mut usize,
    ) {
        let (n, m) = cost.dim();
        let (i, j) = *path.last().unwrap();
        if (i, j) == (n - 1, m - 1) {
            *count += 1;
            if acc < best.0 {
                *best = (acc, path.clone());
            }
            return;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            let (a, b) = (i + di, j + dj);
            if a < n && b < m {
                path.push((a, b));
                walk(cost, path, acc + cost[[a, b]], best, count);
                path.pop();
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    let mut count = 0;
    walk(cost, &mut vec![(0, 0)], cost[[0, 0]], &mut best, &mut count);
    (best.0, best.1, count)
}

pub fn randn_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), Tensor::randn([rows * cols], rng).into_data()).unwrap()
}

/// A feature sequence whose values survive the f32 file encoding exactly.
pub fn f32_exact_sequence(dim: usize, frames: usize, ap_dim: usize, shift: f64, rng: &mut impl Rng) -> FeatureSequence {
    let mcc = randn_matrix(dim, frames, rng).mapv(|v| (v + shift) as f32 as f64);
    let ap = randn_matrix(ap_dim, frames, rng).mapv(|v| v as f32 as f64);
    let f0 = (0..frames)
        .map(|m| {
            let voiced = m % 5 != 2;
            voiced.then(|| (4.8 + 0.2 * rng.random::<f64>() + 0.1 * shift) as f32 as f64)
        })
        .collect();
    FeatureSequence::new(mcc, f0, ap).unwrap()
}

/// Writes `utterances` feature files per speaker under `root/<speaker>/`.
/// Speaker `k` has its MCCs shifted by `k`.
pub fn write_corpus(root: &Path, speakers: &[&str], utterances: usize, dim: usize, frames: usize, seed: u64) {
    let mut rng = scorevc::seeded_rng(seed);
    for (k, s) in speakers.iter().enumerate() {
        let dir = root.join(s);
        std::fs::create_dir_all(&dir).unwrap();
        for u in 0..utterances {
            let seq = f32_exact_sequence(dim, frames + 3 * u, 1, k as f64, &mut rng);
            write_feature_file(dir.join(format!("utt{u:02}.vgf")), &seq).unwrap();
        }
    }
}

/// Starts at `(0, 0)`, ends at the far corner of an `n x m` grid and moves by
/// `(1,0)`, `(0,1)` or `(1,1)`.
pub fn is_warping_path(path: &[(usize, usize)], (n, m): (usize, usize)) -> bool {
    path.first() == Some(&(0, 0))
        && path.last() == Some(&(n - 1, m - 1))
        && path
            .windows(2)
            .all(|w| matches!((w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1)), (1, 0) | (0, 1) | (1, 1)))
}
