//! The noise-level- and speaker-conditional U-Net score approximator.
//!
//! A feature sequence is laid out as a one-channel image of height `D`
//! (cepstral dimension) and width `M` (frames), i.e. a `[b, 1, D, M]` tensor.
//! Encoder blocks downsample along time only; each one is
//! convolution, conditional batch norm, GLU. Decoder blocks mirror them with
//! transposed convolutions and consume the matching encoder activation as a
//! skip connection. The output layer is a plain 1x1 convolution so the score
//! is unconstrained in sign and magnitude.
//!
//! Every convolution input is extended with one-hot noise-level and speaker
//! planes repeated over height and width.

mod checkpoint;
mod condition;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use condition::{
    condition_planes, conditional_batch_norm, crop_time, one_hot_condition, pad_time, ConditioningIndices,
};

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::{Gradients, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreNetConfig {
    /// Height of the input image (feature dimension `D`).
    pub feature_dim: usize,
    pub base_channels: usize,
    /// Channel widths double per encoder block up to this cap.
    pub max_channels: usize,
    /// Number of encoder (and decoder) blocks.
    pub depth: usize,
    pub kernel_height: usize,
    pub kernel_width: usize,
    /// Downsampling factor along time in every encoder block.
    pub time_stride: usize,
    pub noise_levels: usize,
    pub speakers: usize,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        Self {
            feature_dim: 28,
            base_channels: 32,
            max_channels: 128,
            depth: 4,
            kernel_height: 3,
            kernel_width: 4,
            time_stride: 2,
            noise_levels: 11,
            speakers: 4,
        }
    }
}

impl ScoreNetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("base_channels", self.base_channels),
            ("depth", self.depth),
            ("kernel_height", self.kernel_height),
            ("kernel_width", self.kernel_width),
            ("time_stride", self.time_stride),
            ("noise_levels", self.noise_levels),
            ("speakers", self.speakers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid("score net config", format!("{name} must be at least 1")));
            }
        }
        if self.max_channels < self.base_channels {
            return Err(Error::invalid(
                "score net config",
                "max_channels must be at least base_channels",
            ));
        }
        if self.kernel_height % 2 == 0 {
            return Err(Error::invalid("score net config", "kernel_height must be odd"));
        }
        if self.kernel_width < self.time_stride || (self.kernel_width - self.time_stride) % 2 != 0 {
            return Err(Error::invalid(
                "score net config",
                format!(
                    "kernel_width {} must be >= time_stride {} with an even difference",
                    self.kernel_width, self.time_stride
                ),
            ));
        }
        Ok(())
    }

    /// Frame counts fed to the network must be multiples of this.
    pub fn time_multiple(&self) -> usize {
        self.time_stride.pow(self.depth as u32)
    }

    pub fn cond_channels(&self) -> usize {
        self.noise_levels + self.speakers
    }

    fn width(&self, block: usize) -> usize {
        (self.base_channels << block.min(24)).min(self.max_channels)
    }

    /// Layer layout in parameter declaration order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let kh = self.kernel_height;
        let kw = self.kernel_width;
        let s = self.time_stride;
        let cond = self.cond_channels();
        let strided = ConvGeometry::new((1, s), (kh / 2, (kw - s) / 2));
        let odd_kw = if kw % 2 == 0 { kw - 1 } else { kw };
        let flat = ConvGeometry::new((1, 1), (kh / 2, (odd_kw - 1) / 2));

        let mut layers = Vec::with_capacity(2 * self.depth + 2);
        for i in 0..self.depth {
            layers.push(LayerSpec {
                name: format!("down{i}"),
                role: LayerRole::Down,
                in_channels: if i == 0 { 1 } else { self.width(i - 1) },
                cond_channels: cond,
                out_channels: self.width(i),
                kernel: (kh, kw),
                geom: strided,
            });
        }
        let deepest = self.width(self.depth - 1);
        layers.push(LayerSpec {
            name: "bottleneck".into(),
            role: LayerRole::Bottleneck,
            in_channels: deepest,
            cond_channels: cond,
            out_channels: deepest,
            kernel: (kh, odd_kw),
            geom: flat,
        });
        let mut prev = deepest;
        for j in (0..self.depth).rev() {
            let out = self.width(j.saturating_sub(1));
            layers.push(LayerSpec {
                name: format!("up{j}"),
                role: LayerRole::Up,
                in_channels: prev + self.width(j),
                cond_channels: cond,
                out_channels: out,
                kernel: (kh, kw),
                geom: strided,
            });
            prev = out;
        }
        layers.push(LayerSpec {
            name: "output".into(),
            role: LayerRole::Output,
            in_channels: prev,
            cond_channels: cond,
            out_channels: 1,
            kernel: (1, 1),
            geom: ConvGeometry::UNIT,
        });
        layers
    }

    /// Names and shapes of all learnable tensors, in declaration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let rows = self.noise_levels * self.speakers;
        let mut out = Vec::new();
        for layer in self.layers() {
            let (kh, kw) = layer.kernel;
            let cin = layer.in_channels + layer.cond_channels;
            let cout = layer.conv_out_channels();
            let weight = match layer.role {
                LayerRole::Up => vec![cin, cout, kh, kw],
                _ => vec![cout, cin, kh, kw],
            };
            out.push((format!("{}.weight", layer.name), weight));
            if layer.role.is_gated() {
                out.push((format!("{}.gamma", layer.name), vec![rows, cout]));
                out.push((format!("{}.beta", layer.name), vec![rows, cout]));
            } else {
                out.push((format!("{}.bias", layer.name), vec![cout]));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    Down,
    Bottleneck,
    Up,
    Output,
}

impl LayerRole {
    /// Gated layers are followed by conditional batch norm and a GLU.
    pub fn is_gated(self) -> bool {
        self != LayerRole::Output
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub role: LayerRole,
    /// Feature channels entering the layer, excluding conditioning planes.
    pub in_channels: usize,
    pub cond_channels: usize,
    /// Feature channels leaving the layer (after the GLU for gated layers).
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub geom: ConvGeometry,
}

impl LayerSpec {
    /// Channels produced by the convolution itself (twice the output for GLU layers).
    pub fn conv_out_channels(&self) -> usize {
        if self.role.is_gated() {
            2 * self.out_channels
        } else {
            self.out_channels
        }
    }
}

/// Exponential moving averages of batch-norm statistics, used at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| (v + crate::tensor::BN_EPS).sqrt()).collect()
    }
}

/// All learnable tensors plus the batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetParams {
    pub tensors: Vec<Tensor>,
    pub names: Vec<String>,
    pub running: Vec<RunningStats>,
}

impl ScoreNetParams {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// How batch norm obtains its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Statistics of the current batch (training).
    Batch,
    /// Running averages collected during training (inference).
    Running,
}

/// Test hooks altering the forward wiring.
#[derive(Debug, Clone, Default)]
pub struct ForwardHooks {
    /// Replace the skip connection from encoder block `i` with zeros.
    pub drop_skip: Option<usize>,
}

/// Result of a forward pass recorded on a tape.
#[derive(Debug)]
pub struct Forward {
    pub output: Var,
    /// One tape handle per parameter tensor, in declaration order.
    pub params: Vec<Var>,
    /// `(mean, std)` per normalization layer; empty in [`NormMode::Running`].
    pub batch_stats: Vec<(Tensor, Tensor)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    config: ScoreNetConfig,
    params: ScoreNetParams,
}

impl ScoreNet {
    /// Fresh network: kernels drawn from `N(0, 1/fan_in)` in declaration
    /// order, `gamma = 1`, `beta = 0`, output bias 0.
    pub fn new<R: Rng + ?Sized>(config: ScoreNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut tensors = Vec::new();
        let mut names = Vec::new();
        for (name, shape) in config.param_shapes() {
            let t = if name.ends_with(".weight") {
                let fan_in = if name.starts_with("up") {
                    shape[0] * shape[2] * shape[3]
                } else {
                    shape[1] * shape[2] * shape[3]
                };
                let scale = 1.0 / (fan_in as f64).sqrt();
                Tensor::randn(shape, rng).map(|v| v * scale)
            } else if name.ends_with(".gamma") {
                Tensor::full(shape, 1.0)
            } else {
                Tensor::zeros(shape)
            };
            tensors.push(t);
            names.push(name);
        }
        let running = config
            .layers()
            .iter()
            .filter(|l| l.role.is_gated())
            .map(|l| RunningStats::new(l.conv_out_channels()))
            .collect();
        Ok(Self {
            config,
            params: ScoreNetParams {
                tensors,
                names,
                running,
            },
        })
    }

    /// Assembles a network from stored parameters, checking every shape.
    pub fn from_parts(config: ScoreNetConfig, params: ScoreNetParams) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.tensors.len() {
            return Err(Error::invalid(
                "parameters",
                format!("expected {} tensors, got {}", shapes.len(), params.tensors.len()),
            ));
        }
        for ((name, shape), t) in shapes.iter().zip(&params.tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::invalid(
                    "parameters",
                    format!("{name}: expected shape {shape:?}, got {:?}", t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::invalid("parameters", format!("{name} holds non-finite values")));
            }
        }
        let gated: Vec<usize> = config
            .layers()
            .iter()
            .filter(|l| l.role.is_gated())
            .map(|l| l.conv_out_channels())
            .collect();
        if gated.len() != params.running.len()
            || gated
                .iter()
                .zip(&params.running)
                .any(|(&c, r)| r.mean.len() != c || r.var.len() != c)
        {
            return Err(Error::invalid("parameters", "running statistics do not match the layer layout"));
        }
        let names = shapes.into_iter().map(|(n, _)| n).collect();
        Ok(Self {
            config,
            params: ScoreNetParams { names, ..params },
        })
    }

    pub fn config(&self) -> &ScoreNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ScoreNetParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ScoreNetParams {
        &mut self.params
    }

    /// Puts every parameter tensor on the tape, as leaves when `track` is set.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .map(|t| {
                if track {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor, conds: &[ConditioningIndices]) -> Result<()> {
        let [b, c, h, w] = x.dims4("score_forward")?;
        if c != 1 {
            return Err(TensorError::Axis {
                op: "score_forward",
                axis: "channel",
                expected: 1,
                actual: c,
            }
            .into());
        }
        if h != self.config.feature_dim {
            return Err(TensorError::Axis {
                op: "score_forward",
                axis: "height",
                expected: self.config.feature_dim,
                actual: h,
            }
            .into());
        }
        let multiple = self.config.time_multiple();
        if w == 0 || w % multiple != 0 {
            return Err(TensorError::TimeMultiple {
                op: "score_forward",
                length: w,
                multiple,
            }
            .into());
        }
        if conds.len() != b {
            return Err(Error::invalid(
                "conditioning",
                format!("{} conditions for a batch of {b}", conds.len()),
            ));
        }
        for cond in conds {
            cond.check(self.config.noise_levels, self.config.speakers)?;
        }
        Ok(())
    }

    /// Records a forward pass of `x [b, 1, D, W]` on `tape`, with a separate
    /// condition for every batch item.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        conds: &[ConditioningIndices],
        mode: NormMode,
        hooks: &ForwardHooks,
    ) -> Result<Forward> {
        self.check_input(tape.value(x), conds)?;
        let cfg = &self.config;
        let rows: Vec<usize> = conds.iter().map(|c| c.table_row(cfg.speakers)).collect();
        let mut planes: HashMap<(usize, usize), Var> = HashMap::new();
        let mut batch_stats = Vec::new();
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut h = x;
        let mut p = 0;
        let mut norm_idx = 0;

        for layer in cfg.layers() {
            if layer.role == LayerRole::Up {
                let j = skips.len() - 1;
                let skip: Var = skips.pop().expect("one skip per encoder block");
                let skip = if hooks.drop_skip == Some(j) {
                    let zeros = Tensor::zeros(tape.value(skip).shape().to_vec());
                    tape.constant(zeros)
                } else {
                    skip
                };
                h = tape.concat(&[h, skip])?;
            }
            let [_, _, hh, ww] = tape.value(h).dims4("score_forward")?;
            let cond = match planes.get(&(hh, ww)) {
                Some(&v) => v,
                None => {
                    let t = condition_planes(conds, cfg.noise_levels, cfg.speakers, hh, ww)?;
                    let v = tape.constant(t);
                    planes.insert((hh, ww), v);
                    v
                }
            };
            let input = tape.concat(&[h, cond])?;
            let weight = params[p];
            h = match layer.role {
                LayerRole::Up => tape.deconv2d(input, weight, None, layer.geom)?,
                LayerRole::Output => tape.conv2d(input, weight, Some(params[p + 1]), layer.geom)?,
                _ => tape.conv2d(input, weight, None, layer.geom)?,
            };
            if layer.role.is_gated() {
                let (gamma, beta) = (params[p + 1], params[p + 2]);
                let normed = match mode {
                    NormMode::Batch => {
                        let (v, mean, std) = tape.standardize(h)?;
                        batch_stats.push((mean, std));
                        v
                    }
                    NormMode::Running => {
                        let stats = &self.params.running[norm_idx];
                        tape.normalize(h, &stats.mean, &stats.std())?
                    }
                };
                norm_idx += 1;
                h = tape.row_affine(normed, gamma, beta, rows.clone())?;
                h = tape.glu(h)?;
                p += 3;
            } else {
                p += 2;
            }
            if layer.role == LayerRole::Down {
                skips.push(h);
            }
        }
        Ok(Forward {
            output: h,
            params: params.to_vec(),
            batch_stats,
        })
    }

    /// Scores for a batch with per-item conditions, without recording gradients.
    pub fn score_batch(&self, x: &Tensor, conds: &[ConditioningIndices], mode: NormMode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let fwd = self.forward_on_tape(&mut tape, &params, xv, conds, mode, &ForwardHooks::default())?;
        Ok(tape.value(fwd.output).clone())
    }

    /// Score of every batch item of `x` at one noise level and speaker,
    /// using the running normalization statistics.
    pub fn score(&self, x: &Tensor, cond: ConditioningIndices) -> Result<Tensor> {
        let b = x.dims4("score_forward")?[0];
        self.score_batch(x, &vec![cond; b], NormMode::Running)
    }

    /// Folds batch statistics from a training step into the running averages.
    pub fn update_running_stats(&mut self, batch_stats: &[(Tensor, Tensor)], momentum: f64) {
        for (running, (mean, std)) in self.params.running.iter_mut().zip(batch_stats) {
            for c in 0..running.mean.len() {
                let var = (std.data()[c].powi(2) - crate::tensor::BN_EPS).max(0.0);
                running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * mean.data()[c];
                running.var[c] = (1.0 - momentum) * running.var[c] + momentum * var;
            }
        }
    }

    /// Gradient tensors for each parameter, zero-filled where the loss does
    /// not depend on a parameter.
    pub fn collect_grads(&self, grads: &mut Gradients, params: &[Var]) -> Vec<Tensor> {
        params
            .iter()
            .zip(&self.params.tensors)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect()
    }
}
