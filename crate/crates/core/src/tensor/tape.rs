use super::kernels::{self, ConvGeometry};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Deconv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Glu(Var),
    Standardize {
        input: Var,
        std: Vec<f64>,
    },
    Normalize {
        input: Var,
        std: Vec<f64>,
    },
    RowAffine {
        input: Var,
        gamma: Var,
        beta: Var,
        rows: Vec<usize>,
    },
    Concat(Vec<Var>),
    ScaleItems {
        input: Var,
        factors: Vec<f64>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    SquareMean(Var),
    Sum(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Conv2d {
                input, kernel, bias, ..
            }
            | Op::Deconv2d {
                input, kernel, bias, ..
            } => std::iter::once(*input)
                .chain(std::iter::once(*kernel))
                .chain(*bias)
                .collect(),
            Op::Glu(x) | Op::SquareMean(x) | Op::Sum(x) => vec![*x],
            Op::Standardize { input, .. } | Op::Normalize { input, .. } | Op::ScaleItems { input, .. } => {
                vec![*input]
            }
            Op::RowAffine {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Concat(parts) => parts.clone(),
            Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records primitive operations in creation order so that the reverse pass
/// can walk them back exactly once each.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Constant, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push_node(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let tracked = op.inputs().iter().any(|v| self.nodes[v.0].tracked);
        Ok(self.push_node(value, op, tracked))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let out = kernels::conv2d(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), geom)?;
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        )
    }

    pub fn deconv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let out = kernels::deconv2d(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), geom)?;
        self.push(
            "deconv2d",
            out,
            Op::Deconv2d {
                input,
                kernel,
                bias,
                geom,
            },
        )
    }

    pub fn glu(&mut self, input: Var) -> Result<Var> {
        let out = kernels::glu(self.value(input))?;
        self.push("glu", out, Op::Glu(input))
    }

    /// Per-channel standardization with statistics of the batch itself.
    /// Returns the output and the batch mean and deviation.
    pub fn standardize(&mut self, input: Var) -> Result<(Var, Tensor, Tensor)> {
        let (mean, std) = kernels::batch_stats(self.value(input))?;
        let out = kernels::normalize_channels(self.value(input), mean.data(), std.data())?;
        let var = self.push(
            "standardize",
            out,
            Op::Standardize {
                input,
                std: std.data().to_vec(),
            },
        )?;
        Ok((var, mean, std))
    }

    /// Per-channel standardization with fixed statistics.
    pub fn normalize(&mut self, input: Var, mean: &[f64], std: &[f64]) -> Result<Var> {
        let out = kernels::normalize_channels(self.value(input), mean, std)?;
        self.push(
            "normalize",
            out,
            Op::Normalize {
                input,
                std: std.to_vec(),
            },
        )
    }

    pub fn row_affine(&mut self, input: Var, gamma: Var, beta: Var, rows: Vec<usize>) -> Result<Var> {
        let out = kernels::row_affine(self.value(input), self.value(gamma), self.value(beta), &rows)?;
        self.push(
            "row_affine",
            out,
            Op::RowAffine {
                input,
                gamma,
                beta,
                rows,
            },
        )
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = kernels::concat_channels(&values)?;
        self.push("concat", out, Op::Concat(parts.to_vec()))
    }

    pub fn scale_items(&mut self, input: Var, factors: &[f64]) -> Result<Var> {
        let out = kernels::scale_items(self.value(input), factors)?;
        self.push(
            "scale_items",
            out,
            Op::ScaleItems {
                input,
                factors: factors.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Mean of squared entries, as a scalar.
    pub fn square_mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let n = x.len().max(1) as f64;
        let out = Tensor::scalar(x.data().iter().map(|v| v * v).sum::<f64>() / n);
        self.push("square_mean", out, Op::SquareMean(input))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(input).sum());
        self.push("sum", out, Op::Sum(input))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (var, contrib) in self.local_grads(node, &g)? {
                if !self.nodes[var.0].tracked {
                    continue;
                }
                accumulate(&mut grads[var.0], contrib)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let tracked = |v: Var| self.nodes[v.0].tracked;
        Ok(match &node.op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let mut out = Vec::with_capacity(3);
                if tracked(*input) {
                    out.push((*input, kernels::conv2d_grad_input(g, k, x.dims4("conv2d")?, *geom)?));
                }
                if tracked(*kernel) {
                    out.push((*kernel, kernels::conv2d_grad_kernel(x, g, k.dims4("conv2d")?, *geom)?));
                }
                if let Some(b) = bias.filter(|&b| tracked(b)) {
                    out.push((b, kernels::channel_sum(g)?));
                }
                out
            }
            Op::Deconv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (dx, dk) = kernels::deconv2d_grads(self.value(*input), self.value(*kernel), g, *geom)?;
                let mut out = vec![(*input, dx), (*kernel, dk)];
                if let Some(b) = bias {
                    out.push((*b, kernels::channel_sum(g)?));
                }
                out
            }
            Op::Glu(x) => vec![(*x, kernels::glu_grad(self.value(*x), g)?)],
            Op::Standardize { input, std } => {
                vec![(*input, kernels::standardize_grad(&node.value, std, g)?)]
            }
            Op::Normalize { input, std } => {
                let zeros = vec![0.0; std.len()];
                vec![(*input, kernels::normalize_channels(g, &zeros, std)?)]
            }
            Op::RowAffine {
                input,
                gamma,
                beta,
                rows,
            } => {
                let (dx, dg, db) = kernels::row_affine_grads(self.value(*input), self.value(*gamma), rows, g)?;
                vec![(*input, dx), (*gamma, dg), (*beta, db)]
            }
            Op::Concat(parts) => {
                let channels: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[1]).collect();
                parts
                    .iter()
                    .copied()
                    .zip(kernels::split_channels(g, &channels)?)
                    .collect()
            }
            Op::ScaleItems { input, factors } => vec![(*input, kernels::scale_items(g, factors)?)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::SquareMean(x) => {
                let xv = self.value(*x);
                let scale = 2.0 * g.data()[0] / xv.len().max(1) as f64;
                vec![(*x, xv.map(|v| scale * v))]
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                vec![(*x, Tensor::full(self.value(*x).shape().to_vec(), gv))]
            }
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) -> Result<()> {
    match slot {
        Some(existing) => {
            if existing.shape() != contrib.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "backward",
                    lhs: existing.shape().to_vec(),
                    rhs: contrib.shape().to_vec(),
                });
            }
            for (a, b) in existing.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        None => *slot = Some(contrib),
    }
    Ok(())
}
