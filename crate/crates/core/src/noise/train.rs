use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use super::{dsm_loss, Adam, AdamConfig, NoiseSchedule};
use crate::error::{Error, Result};
use crate::score_net::{ConditioningIndices, ScoreNet, ScoreNetConfig};
use crate::tensor::{Tape, Tensor};
use crate::Rng as CrateRng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// One epoch is `ceil(utterances / batch_size)` steps.
    pub epochs: usize,
    /// Overrides the epoch-derived step count when set.
    pub max_steps: Option<usize>,
    /// Frames per training crop.
    pub crop_frames: usize,
    /// Momentum of the batch-norm running statistics.
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 1,
            max_steps: None,
            crop_frames: 128,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train config", "learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train config", "batch_size must be at least 1"));
        }
        if self.crop_frames == 0 {
            return Err(Error::invalid("train config", "crop_frames must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("train config", "moment decays must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("train config", "bn_momentum must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn total_steps(&self, corpus: &TrainingCorpus) -> usize {
        self.max_steps
            .unwrap_or_else(|| self.epochs * corpus.utterance_count().div_ceil(self.batch_size))
    }
}

/// Normalized `D x M` feature matrices grouped by speaker; speaker `k` is
/// the `k`-th group.
#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    feature_dim: usize,
    speakers: Vec<Vec<Array2<f64>>>,
}

impl TrainingCorpus {
    pub fn new(speakers: Vec<Vec<Array2<f64>>>) -> Result<Self> {
        let first = speakers
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| Error::invalid("corpus", "no utterances"))?;
        let feature_dim = first.nrows();
        for (k, utts) in speakers.iter().enumerate() {
            if utts.is_empty() {
                return Err(Error::invalid("corpus", format!("speaker {k} has no utterances")));
            }
            for (n, u) in utts.iter().enumerate() {
                if u.nrows() != feature_dim {
                    return Err(Error::invalid(
                        "corpus",
                        format!("speaker {k} utterance {n} has {} rows, expected {feature_dim}", u.nrows()),
                    ));
                }
                if u.ncols() == 0 {
                    return Err(Error::invalid("corpus", format!("speaker {k} utterance {n} is empty")));
                }
                if u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(
                        "corpus",
                        format!("speaker {k} utterance {n} has non-finite values"),
                    ));
                }
            }
        }
        Ok(Self { feature_dim, speakers })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn speaker_count(&self) -> usize {
        self.speakers.len()
    }

    pub fn utterance_count(&self) -> usize {
        self.speakers.iter().map(Vec::len).sum()
    }

    pub fn speaker(&self, k: usize) -> &[Array2<f64>] {
        &self.speakers[k]
    }

    /// Draws a `[batch, 1, D, crop]` minibatch.
    ///
    /// Per item the draws are, in order: speaker (uniform), utterance of that
    /// speaker (uniform), crop start (uniform), noise level (uniform).
    /// Utterances shorter than the crop are padded by repeating their last frame.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch: usize,
        crop: usize,
        levels: usize,
        rng: &mut R,
    ) -> (Tensor, Vec<ConditioningIndices>) {
        let d = self.feature_dim;
        let mut data = Vec::with_capacity(batch * d * crop);
        let mut conds = Vec::with_capacity(batch);
        for _ in 0..batch {
            let k = rng.random_range(0..self.speakers.len());
            let utts = &self.speakers[k];
            let u = &utts[rng.random_range(0..utts.len())];
            let m = u.ncols();
            let start = if m > crop { rng.random_range(0..=m - crop) } else { 0 };
            let level = rng.random_range(0..levels);
            for row in u.rows() {
                for t in 0..crop {
                    data.push(row[(start + t).min(m - 1)]);
                }
            }
            conds.push(ConditioningIndices::new(level, k));
        }
        let t = Tensor::new([batch, 1, d, crop], data).expect("sized above");
        (t, conds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// One-based step number.
    pub step: usize,
    /// Items per noise level in this step's minibatch.
    pub level_histogram: Vec<usize>,
    pub loss: f64,
}

/// Owns the network, optimizer state and random stream of one training run.
pub struct Trainer {
    net: ScoreNet,
    adam: Adam,
    config: TrainConfig,
    schedule: NoiseSchedule,
    rng: CrateRng,
    history: Vec<StepRecord>,
}

impl Trainer {
    /// Seeds the run's generator from `config.seed` and initializes the
    /// network from it before any batch is drawn.
    pub fn new(net_config: ScoreNetConfig, config: TrainConfig, schedule: NoiseSchedule) -> Result<Self> {
        config.validate()?;
        if net_config.noise_levels != schedule.len() {
            return Err(Error::invalid(
                "score net config",
                format!(
                    "network has {} noise levels, schedule has {}",
                    net_config.noise_levels,
                    schedule.len()
                ),
            ));
        }
        if config.crop_frames % net_config.time_multiple() != 0 {
            return Err(Error::invalid(
                "train config",
                format!(
                    "crop_frames {} must be a multiple of {}",
                    config.crop_frames,
                    net_config.time_multiple()
                ),
            ));
        }
        let mut rng = crate::seeded_rng(config.seed);
        let net = ScoreNet::new(net_config, &mut rng)?;
        let adam = Adam::new(config.adam(), &net.params().tensors);
        Ok(Self {
            net,
            adam,
            config,
            schedule,
            rng,
            history: Vec::new(),
        })
    }

    pub fn net(&self) -> &ScoreNet {
        &self.net
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            net: self.net,
            history: self.history,
        }
    }

    fn check_corpus(&self, corpus: &TrainingCorpus) -> Result<()> {
        let cfg = self.net.config();
        if corpus.feature_dim() != cfg.feature_dim || corpus.speaker_count() != cfg.speakers {
            return Err(Error::invalid(
                "corpus",
                format!(
                    "corpus has D={} and {} speakers; network expects D={} and {} speakers",
                    corpus.feature_dim(),
                    corpus.speaker_count(),
                    cfg.feature_dim,
                    cfg.speakers
                ),
            ));
        }
        Ok(())
    }

    /// One optimizer step on a fresh minibatch.
    pub fn step(&mut self, corpus: &TrainingCorpus) -> Result<&StepRecord> {
        self.check_corpus(corpus)?;
        let step = self.history.len() + 1;
        let levels = self.schedule.len();
        let (clean, conds) = corpus.sample_batch(self.config.batch_size, self.config.crop_frames, levels, &mut self.rng);
        let mut histogram = vec![0; levels];
        for c in &conds {
            histogram[c.level] += 1;
        }

        let mut tape = Tape::new();
        let params = self.net.bind(&mut tape, true);
        let (out, forward) = dsm_loss(&mut tape, &self.net, &params, &clean, &conds, &self.schedule, &mut self.rng)
            .map_err(|e| match e {
                Error::Tensor(crate::tensor::TensorError::NonFinite { .. }) => Error::NonFiniteLoss { step },
                other => other,
            })?;
        let loss = tape.value(out.loss).item().unwrap_or(f64::NAN);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let mut grads = tape.backward(out.loss)?;
        let grads = self.net.collect_grads(&mut grads, &forward.params);
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        self.adam.step(&mut self.net.params_mut().tensors, &grads);
        self.net
            .update_running_stats(&forward.batch_stats, self.config.bn_momentum);

        self.history.push(StepRecord {
            step,
            level_histogram: histogram,
            loss,
        });
        Ok(self.history.last().expect("just pushed"))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ScoreNet,
    pub history: Vec<StepRecord>,
}

/// Trains a freshly initialized network for `config.total_steps(corpus)` steps.
pub fn train(
    corpus: &TrainingCorpus,
    net_config: ScoreNetConfig,
    config: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(net_config, config.clone(), schedule.clone())?;
    trainer.check_corpus(corpus)?;
    for _ in 0..config.total_steps(corpus) {
        trainer.step(corpus)?;
    }
    Ok(trainer.into_outcome())
}

/// `step,level_histogram,loss` rows; the histogram is `;`-separated.
pub fn write_loss_csv(path: impl AsRef<Path>, history: &[StepRecord]) -> Result<()> {
    let mut out = String::from("step,level_histogram,loss\n");
    for r in history {
        let hist: Vec<String> = r.level_histogram.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{},{},{}", r.step, hist.join(";"), r.loss);
    }
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path, e))
}
