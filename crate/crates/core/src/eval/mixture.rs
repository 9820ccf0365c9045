use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        let chol = Cholesky::new(cov).ok_or_else(|| Error::invalid("mixture", "covariance is not positive definite"))?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            weight,
            mean,
            chol,
            log_norm,
        })
    }

    /// `(log N(x), -Sigma^{-1} (x - mu))`.
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let diff = x - &self.mean;
        let solved = self.chol.solve(&diff);
        (self.log_norm - 0.5 * diff.dot(&solved), -solved)
    }
}

/// Gaussian mixture with analytic density and score.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
    covs: Vec<DMatrix<f64>>,
}

impl GaussianMixture {
    /// Weights must be positive and sum to 1 (within 1e-9); covariances
    /// must be symmetric positive definite.
    pub fn new(weights: &[f64], means: &[Vec<f64>], covs: &[Vec<Vec<f64>>]) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::invalid("mixture", "need equal, non-zero numbers of weights, means and covariances"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture", "weights must be positive and sum to 1"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("mixture", "dimension must be at least 1"));
        }
        let mut components = Vec::with_capacity(weights.len());
        let mut cov_mats = Vec::with_capacity(weights.len());
        for ((&w, m), c) in weights.iter().zip(means).zip(covs) {
            if m.len() != dim || c.len() != dim || c.iter().any(|r| r.len() != dim) {
                return Err(Error::invalid("mixture", format!("every mean and covariance must have dimension {dim}")));
            }
            let cov = DMatrix::from_fn(dim, dim, |i, j| c[i][j]);
            if (&cov - cov.transpose()).abs().max() > 1e-12 {
                return Err(Error::invalid("mixture", "covariance is not symmetric"));
            }
            components.push(Component::new(w, DVector::from_column_slice(m), cov.clone())?);
            cov_mats.push(cov);
        }
        Ok(Self {
            dim,
            components,
            covs: cov_mats,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.components[i].weight
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        self.components[i].mean.as_slice()
    }

    pub fn covariance(&self, i: usize) -> &DMatrix<f64> {
        &self.covs[i]
    }

    /// Component `i` alone, as a one-component mixture.
    pub fn component(&self, i: usize) -> GaussianMixture {
        let mut c = self.components[i].clone();
        c.weight = 1.0;
        Self {
            dim: self.dim,
            components: vec![c],
            covs: vec![self.covs[i].clone()],
        }
    }

    /// Density of `x + sigma z`: every covariance grows by `sigma^2 I`.
    pub fn smoothed(&self, sigma: f64) -> Result<GaussianMixture> {
        let mut components = Vec::with_capacity(self.len());
        let mut covs = Vec::with_capacity(self.len());
        for (c, cov) in self.components.iter().zip(&self.covs) {
            let grown = cov + DMatrix::identity(self.dim, self.dim) * (sigma * sigma);
            components.push(Component::new(c.weight, c.mean.clone(), grown.clone())?);
            covs.push(grown);
        }
        Ok(Self {
            dim: self.dim,
            components,
            covs,
        })
    }

    fn evaluate(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let x = DVector::from_column_slice(x);
        let parts: Vec<(f64, DVector<f64>)> = self
            .components
            .iter()
            .map(|c| {
                let (lp, g) = c.eval(&x);
                (c.weight.ln() + lp, g)
            })
            .collect();
        let top = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = parts.iter().map(|p| (p.0 - top).exp()).sum();
        let mut score = DVector::zeros(self.dim);
        for (lp, g) in &parts {
            score += g * ((lp - top).exp() / total);
        }
        (top + total.ln(), score.as_slice().to_vec())
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.evaluate(x).0
    }

    /// `grad_x log p(x)`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        self.evaluate(x).1
    }

    /// Squared Mahalanobis distance of `x` to component `i`.
    pub fn mahalanobis_sq(&self, i: usize, x: &[f64]) -> f64 {
        let c = &self.components[i];
        let diff = DVector::from_column_slice(x) - &c.mean;
        diff.dot(&c.chol.solve(&diff))
    }

    /// Mean of the whole mixture.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let mut m = DVector::zeros(self.dim);
        for c in &self.components {
            m += &c.mean * c.weight;
        }
        m.as_slice().to_vec()
    }

    /// `n` draws; per draw the component index is drawn first, then `dim`
    /// standard normals.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = self.components.len() - 1;
                for (i, c) in self.components.iter().enumerate() {
                    acc += c.weight;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                let c = &self.components[pick];
                let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                (&c.mean + c.chol.l_dirty().lower_triangle() * z).as_slice().to_vec()
            })
            .collect()
    }
}
