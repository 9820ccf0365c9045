//! Noise schedule, Gaussian perturbation, the weighted denoising score
//! matching objective, and the training loop.

mod adam;
mod dsm;
mod train;

pub use adam::{Adam, AdamConfig};
pub use dsm::{dsm_loss, dsm_loss_with, DsmOutput};
pub use train::{train, write_loss_csv, StepRecord, TrainConfig, TrainOutcome, Trainer, TrainingCorpus};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Noise standard deviations `sigma_1 >= ... >= sigma_L > 0`, stored
/// zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Geometric sequence from `first` down to `last` over `levels` entries.
    ///
    /// A single level is accepted only when `first == last`.
    pub fn geometric(first: f64, last: f64, levels: usize) -> Result<Self> {
        if !(first.is_finite() && last.is_finite()) || last <= 0.0 {
            return Err(Error::invalid(
                "noise schedule",
                format!("bounds must be finite and positive (got {first}, {last})"),
            ));
        }
        if first < last {
            return Err(Error::invalid(
                "noise schedule",
                format!("sigma_first {first} is smaller than sigma_last {last}"),
            ));
        }
        match levels {
            0 => Err(Error::invalid("noise schedule", "at least one level is required")),
            1 if first != last => Err(Error::invalid(
                "noise schedule",
                format!("a single level needs sigma_first == sigma_last (got {first}, {last})"),
            )),
            1 => Ok(Self { sigmas: vec![first] }),
            _ => {
                let ratio = (last / first).powf(1.0 / (levels - 1) as f64);
                let mut sigmas: Vec<f64> = (0..levels).map(|l| first * ratio.powi(l as i32)).collect();
                sigmas[levels - 1] = last;
                Ok(Self { sigmas })
            }
        }
    }

    /// Arbitrary non-increasing positive levels.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::invalid("noise schedule", "at least one level is required"));
        }
        if sigmas.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid("noise schedule", "every sigma must be finite and positive"));
        }
        if sigmas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("noise schedule", "sigmas must be non-increasing"));
        }
        Ok(Self { sigmas })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// Standard deviation at zero-based `level`.
    pub fn sigma(&self, level: usize) -> f64 {
        self.sigmas[level]
    }

    pub fn first(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn last(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }
}

/// `x + sigma * z` with `z` standard normal, drawn in row-major order.
pub fn perturb<R: Rng + ?Sized>(x: &Tensor, sigma: f64, rng: &mut R) -> Result<Tensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("{sigma} is not a non-negative number")));
    }
    let mut out = x.clone();
    for v in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_schedule_endpoints_and_midpoint() {
        let s = NoiseSchedule::geometric(1.0, 0.01, 11).unwrap();
        assert_eq!(s.len(), 11);
        assert_eq!(s.first(), 1.0);
        assert_eq!(s.last(), 0.01);
        assert!((s.sigma(5) - 0.1).abs() < 1e-12);
        let r = 10f64.powf(-0.2);
        for w in s.sigmas().windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_bounds_give_constant_schedule() {
        let s = NoiseSchedule::geometric(0.3, 0.3, 5).unwrap();
        assert!(s.sigmas().iter().all(|&v| v == 0.3));
        assert_eq!(NoiseSchedule::geometric(0.3, 0.3, 1).unwrap().sigmas(), &[0.3]);
    }

    #[test]
    fn invalid_bounds_are_rejected() {
        assert!(NoiseSchedule::geometric(0.01, 1.0, 11).is_err());
        assert!(NoiseSchedule::geometric(1.0, 0.0, 11).is_err());
        assert!(NoiseSchedule::geometric(1.0, 0.01, 1).is_err());
        assert!(NoiseSchedule::geometric(1.0, 0.01, 0).is_err());
        assert!(NoiseSchedule::geometric(f64::NAN, 0.01, 3).is_err());
        assert!(NoiseSchedule::from_sigmas(vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut rng = crate::seeded_rng(1);
        let x = Tensor::randn([2, 3], &mut rng);
        assert_eq!(perturb(&x, 0.0, &mut rng).unwrap(), x);
        assert!(perturb(&x, -1.0, &mut rng).is_err());
    }

    #[test]
    fn perturbation_moments() {
        let n = 100_000;
        let sigma = 0.7;
        let mut rng = crate::seeded_rng(2);
        let x = Tensor::full([n], 3.0);
        let xt = perturb(&x, sigma, &mut rng).unwrap();
        let d: Vec<f64> = xt.data().iter().map(|v| v - 3.0).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "var {var}");
    }

    proptest::proptest! {
        #[test]
        fn geometric_ratio_is_constant(first in 0.05f64..10.0, shrink in 1.0f64..1e4, levels in 2usize..30) {
            let last = first / shrink;
            let s = NoiseSchedule::geometric(first, last, levels).unwrap();
            proptest::prop_assert_eq!(s.first(), first);
            proptest::prop_assert_eq!(s.last(), last);
            let r0 = s.sigma(1) / s.sigma(0);
            for w in s.sigmas().windows(2) {
                proptest::prop_assert!((w[1] / w[0] - r0).abs() < 1e-12);
                proptest::prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
