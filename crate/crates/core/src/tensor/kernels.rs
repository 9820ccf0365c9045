//! Forward and backward kernels on plain tensors.
//!
//! Everything here is a pure function; the tape composes them. All 4-D
//! tensors use the `[batch, channel, height, width]` layout.

use super::{Result, Tensor, TensorError};

/// Stabilizer added to the variance under the square root in batch norm.
pub const BN_EPS: f64 = 1e-5;

/// Stride and zero padding of a 2-D (transposed) convolution, as
/// `(height, width)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub const UNIT: Self = Self {
        stride: (1, 1),
        padding: (0, 0),
    };

    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self { stride, padding }
    }

    fn check(&self, op: &'static str) -> Result<()> {
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(TensorError::ZeroStride { op });
        }
        Ok(())
    }
}

fn conv_out_extent(
    op: &'static str,
    axis: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    let padded = input + 2 * pad;
    if kernel > padded || kernel == 0 {
        return Err(TensorError::KernelTooLarge {
            op,
            axis,
            kernel,
            padded,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output positions `lo..hi` for which kernel tap `tap` lands inside the input.
#[inline]
fn tap_range(out_len: usize, in_len: usize, stride: usize, pad: usize, tap: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    if in_len + pad <= tap {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - tap) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    h_in: usize,
    w_in: usize,
    c_out: usize,
    h_out: usize,
    w_out: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeometry,
}

impl ConvDims {
    /// Visits every run of the cross-correlation as
    /// `(input start, output start, length, kernel index)`: output positions
    /// `out..out + len` read input positions `inp, inp + stride_w, ...`.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (sh, sw) = self.geom.stride;
        let (ph, pw) = self.geom.padding;
        for b in 0..self.batch {
            for co in 0..self.c_out {
                let out_base = (b * self.c_out + co) * self.h_out * self.w_out;
                for ci in 0..self.c_in {
                    let in_base = (b * self.c_in + ci) * self.h_in * self.w_in;
                    let k_base = (co * self.c_in + ci) * self.kh * self.kw;
                    for i in 0..self.kh {
                        let (oh_lo, oh_hi) = tap_range(self.h_out, self.h_in, sh, ph, i);
                        for j in 0..self.kw {
                            let (ow_lo, ow_hi) = tap_range(self.w_out, self.w_in, sw, pw, j);
                            if ow_lo >= ow_hi {
                                continue;
                            }
                            let k_idx = k_base + i * self.kw + j;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * sh + i - ph;
                                let iw = ow_lo * sw + j - pw;
                                f(
                                    in_base + ih * self.w_in + iw,
                                    out_base + oh * self.w_out + ow_lo,
                                    ow_hi - ow_lo,
                                    k_idx,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `dst[t] += a * src[t * stride]` for `t < dst.len()`.
#[inline]
fn axpy_gather(dst: &mut [f64], a: f64, src: &[f64], stride: usize) {
    if stride == 1 {
        let n = dst.len();
        for (d, s) in dst.iter_mut().zip(&src[..n]) {
            *d += a * s;
        }
    } else {
        for (d, s) in dst.iter_mut().zip(src.iter().step_by(stride)) {
            *d += a * s;
        }
    }
}

/// `dst[t * stride] += a * src[t]` for `t < src.len()`.
#[inline]
fn axpy_scatter(dst: &mut [f64], a: f64, src: &[f64], stride: usize) {
    if stride == 1 {
        let n = src.len();
        for (d, s) in dst[..n].iter_mut().zip(src) {
            *d += a * s;
        }
    } else {
        for (d, s) in dst.iter_mut().step_by(stride).zip(src) {
            *d += a * s;
        }
    }
}

#[inline]
fn dot_strided(a: &[f64], b: &[f64], stride: usize) -> f64 {
    if stride == 1 {
        a.iter().zip(&b[..a.len()]).map(|(x, y)| x * y).sum()
    } else {
        a.iter().zip(b.iter().step_by(stride)).map(|(x, y)| x * y).sum()
    }
}

fn conv_dims(
    op: &'static str,
    input: [usize; 4],
    kernel: &Tensor,
    geom: ConvGeometry,
) -> Result<ConvDims> {
    geom.check(op)?;
    let [batch, c_in, h_in, w_in] = input;
    let [c_out, kc, kh, kw] = kernel.dims4(op)?;
    if kc != c_in {
        return Err(TensorError::Axis {
            op,
            axis: "channel",
            expected: kc,
            actual: c_in,
        });
    }
    let h_out = conv_out_extent(op, "height", h_in, kh, geom.stride.0, geom.padding.0)?;
    let w_out = conv_out_extent(op, "width", w_in, kw, geom.stride.1, geom.padding.1)?;
    Ok(ConvDims {
        batch,
        c_in,
        h_in,
        w_in,
        c_out,
        h_out,
        w_out,
        kh,
        kw,
        geom,
    })
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(TensorError::Axis {
                op,
                axis: "bias",
                expected: channels,
                actual: b.len(),
            });
        }
    }
    Ok(())
}

fn add_channel_bias(out: &mut Tensor, bias: Option<&Tensor>) {
    if let Some(bias) = bias {
        let [b, c, h, w] = out.dims4("bias").expect("rank checked by caller");
        let plane = h * w;
        let data = out.data_mut();
        for bi in 0..b {
            for (ci, &bv) in bias.data().iter().enumerate().take(c) {
                let base = (bi * c + ci) * plane;
                data[base..base + plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

/// Cross-correlation of `input [b, c, h, w]` with `kernel [c_out, c, kh, kw]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, geom: ConvGeometry) -> Result<Tensor> {
    let d = conv_dims("conv2d", input.dims4("conv2d")?, kernel, geom)?;
    check_bias("conv2d", bias, d.c_out)?;
    let mut out = Tensor::zeros([d.batch, d.c_out, d.h_out, d.w_out]);
    {
        let x = input.data();
        let k = kernel.data();
        let y = out.data_mut();
        let sw = d.geom.stride.1;
        d.for_each_run(|xi, yi, n, ki| axpy_gather(&mut y[yi..yi + n], k[ki], &x[xi..], sw));
    }
    add_channel_bias(&mut out, bias);
    Ok(out)
}

/// Gradient of `conv2d` with respect to its input, for an input of shape
/// `input_shape`.
pub fn conv2d_grad_input(
    grad_out: &Tensor,
    kernel: &Tensor,
    input_shape: [usize; 4],
    geom: ConvGeometry,
) -> Result<Tensor> {
    let d = conv_dims("conv2d_grad_input", input_shape, kernel, geom)?;
    let expected = [d.batch, d.c_out, d.h_out, d.w_out];
    if grad_out.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_grad_input",
            lhs: expected.to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(input_shape);
    {
        let g = grad_out.data();
        let k = kernel.data();
        let dxd = dx.data_mut();
        let sw = d.geom.stride.1;
        d.for_each_run(|xi, yi, n, ki| axpy_scatter(&mut dxd[xi..], k[ki], &g[yi..yi + n], sw));
    }
    Ok(dx)
}

/// Gradient of `conv2d` with respect to its kernel.
pub fn conv2d_grad_kernel(
    input: &Tensor,
    grad_out: &Tensor,
    kernel_shape: [usize; 4],
    geom: ConvGeometry,
) -> Result<Tensor> {
    let mut dk = Tensor::zeros(kernel_shape);
    let d = conv_dims("conv2d_grad_kernel", input.dims4("conv2d_grad_kernel")?, &dk, geom)?;
    let expected = [d.batch, d.c_out, d.h_out, d.w_out];
    if grad_out.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_grad_kernel",
            lhs: expected.to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    {
        let x = input.data();
        let g = grad_out.data();
        let dkd = dk.data_mut();
        let sw = d.geom.stride.1;
        d.for_each_run(|xi, yi, n, ki| dkd[ki] += dot_strided(&g[yi..yi + n], &x[xi..], sw));
    }
    Ok(dk)
}

/// Per-channel sum over batch, height and width.
pub fn channel_sum(t: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = t.dims4("channel_sum")?;
    let plane = h * w;
    let mut out = vec![0.0; c];
    for bi in 0..b {
        for (ci, o) in out.iter_mut().enumerate() {
            let base = (bi * c + ci) * plane;
            *o += t.data()[base..base + plane].iter().sum::<f64>();
        }
    }
    Tensor::new([c], out)
}

/// Output spatial extents of a transposed convolution.
pub fn deconv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (input.checked_sub(1)?) * stride + kernel;
    full.checked_sub(2 * pad).filter(|&n| n > 0)
}

fn deconv_output_shape(input: &Tensor, kernel: &Tensor, geom: ConvGeometry) -> Result<[usize; 4]> {
    geom.check("deconv2d")?;
    let [b, c_in, h, w] = input.dims4("deconv2d")?;
    let [kc_in, c_out, kh, kw] = kernel.dims4("deconv2d")?;
    if kc_in != c_in {
        return Err(TensorError::Axis {
            op: "deconv2d",
            axis: "channel",
            expected: kc_in,
            actual: c_in,
        });
    }
    let h_out = deconv_out_extent(h, kh, geom.stride.0, geom.padding.0).ok_or(TensorError::KernelTooLarge {
        op: "deconv2d",
        axis: "height",
        kernel: kh,
        padded: h,
    })?;
    let w_out = deconv_out_extent(w, kw, geom.stride.1, geom.padding.1).ok_or(TensorError::KernelTooLarge {
        op: "deconv2d",
        axis: "width",
        kernel: kw,
        padded: w,
    })?;
    Ok([b, c_out, h_out, w_out])
}

/// Transposed convolution of `input [b, c_in, h, w]` with `kernel [c_in, c_out, kh, kw]`.
///
/// This is the adjoint of [`conv2d`] with the same kernel and geometry, so
/// the output extent is `(h - 1) * stride - 2 * pad + kh`.
pub fn deconv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, geom: ConvGeometry) -> Result<Tensor> {
    let out_shape = deconv_output_shape(input, kernel, geom)?;
    check_bias("deconv2d", bias, out_shape[1])?;
    let mut out = conv2d_grad_input(input, kernel, out_shape, geom)?;
    add_channel_bias(&mut out, bias);
    Ok(out)
}

/// `(grad_input, grad_kernel)` of [`deconv2d`].
pub fn deconv2d_grads(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    geom: ConvGeometry,
) -> Result<(Tensor, Tensor)> {
    let dx = conv2d(grad_out, kernel, None, geom)?;
    let kshape = kernel.dims4("deconv2d")?;
    let dk = conv2d_grad_kernel(grad_out, input, kshape, geom)?;
    Ok((dx, dk))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated linear unit over the channel axis: first half times sigmoid of the second half.
pub fn glu(input: &Tensor) -> Result<Tensor> {
    let [b, c2, h, w] = input.dims4("glu")?;
    if c2 % 2 != 0 {
        return Err(TensorError::OddChannels(c2));
    }
    let c = c2 / 2;
    let plane = c * h * w;
    let x = input.data();
    let mut out = Vec::with_capacity(b * plane);
    for bi in 0..b {
        let base = bi * 2 * plane;
        let (lin, gate) = x[base..base + 2 * plane].split_at(plane);
        out.extend(lin.iter().zip(gate).map(|(&a, &g)| a * sigmoid(g)));
    }
    Tensor::new([b, c, h, w], out)
}

pub fn glu_grad(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let [b, c2, h, w] = input.dims4("glu")?;
    let plane = (c2 / 2) * h * w;
    let x = input.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    for bi in 0..b {
        let base = bi * 2 * plane;
        for p in 0..plane {
            let a = x[base + p];
            let s = sigmoid(x[base + plane + p]);
            let gy = g[bi * plane + p];
            dx[base + p] = gy * s;
            dx[base + plane + p] = gy * a * s * (1.0 - s);
        }
    }
    Tensor::new(input.shape().to_vec(), dx)
}

/// Per-channel mean and standard deviation over batch, height and width.
///
/// The variance is the population (biased) variance; the returned deviation
/// is `sqrt(var + BN_EPS)`.
pub fn batch_stats(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let [b, c, h, w] = x.dims4("batch_stats")?;
    let plane = h * w;
    let n = (b * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ci in 0..c {
        let values = (0..b).flat_map(|bi| {
            let base = (bi * c + ci) * plane;
            x.data()[base..base + plane].iter().copied()
        });
        // Welford keeps this single-pass and stable.
        let (mut count, mut m, mut m2) = (0.0, 0.0, 0.0);
        for v in values {
            count += 1.0;
            let delta = v - m;
            m += delta / count;
            m2 += delta * (v - m);
        }
        mean[ci] = m;
        std[ci] = (m2 / n + BN_EPS).sqrt();
    }
    Ok((Tensor::new([c], mean)?, Tensor::new([c], std)?))
}

/// `(x - mean_c) / std_c` with per-channel statistics.
pub fn normalize_channels(x: &Tensor, mean: &[f64], std: &[f64]) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4("normalize")?;
    if mean.len() != c || std.len() != c {
        return Err(TensorError::Axis {
            op: "normalize",
            axis: "channel",
            expected: c,
            actual: mean.len().min(std.len()),
        });
    }
    let plane = h * w;
    let mut out = x.clone();
    let data = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let (m, s) = (mean[ci], std[ci]);
            data[base..base + plane].iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
    Ok(out)
}

/// Backward of batch standardization given its output `y` and per-channel deviation.
pub fn standardize_grad(y: &Tensor, std: &[f64], grad_out: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = y.dims4("standardize")?;
    let plane = h * w;
    let n = (b * plane) as f64;
    let yd = y.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; yd.len()];
    for ci in 0..c {
        let idx = |bi: usize| (bi * c + ci) * plane;
        let (mut sum_g, mut sum_gy) = (0.0, 0.0);
        for bi in 0..b {
            let base = idx(bi);
            for p in base..base + plane {
                sum_g += g[p];
                sum_gy += g[p] * yd[p];
            }
        }
        let (mean_g, mean_gy) = (sum_g / n, sum_gy / n);
        let inv = 1.0 / std[ci];
        for bi in 0..b {
            let base = idx(bi);
            for p in base..base + plane {
                dx[p] = inv * (g[p] - mean_g - yd[p] * mean_gy);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), dx)
}

/// Per-item, per-channel affine map `gamma[row_b, c] * x + beta[row_b, c]`.
pub fn row_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4("row_affine")?;
    check_table("row_affine", gamma, c, rows)?;
    if gamma.shape() != beta.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "row_affine",
            lhs: gamma.shape().to_vec(),
            rhs: beta.shape().to_vec(),
        });
    }
    if rows.len() != b {
        return Err(TensorError::Axis {
            op: "row_affine",
            axis: "batch",
            expected: b,
            actual: rows.len(),
        });
    }
    let plane = h * w;
    let mut out = x.clone();
    let data = out.data_mut();
    for (bi, &r) in rows.iter().enumerate() {
        for ci in 0..c {
            let (gm, bt) = (gamma.data()[r * c + ci], beta.data()[r * c + ci]);
            let base = (bi * c + ci) * plane;
            data[base..base + plane].iter_mut().for_each(|v| *v = gm * *v + bt);
        }
    }
    Ok(out)
}

fn check_table(op: &'static str, table: &Tensor, channels: usize, rows: &[usize]) -> Result<()> {
    let [n_rows, tc] = match table.shape() {
        &[r, c] => [r, c],
        other => {
            return Err(TensorError::Rank {
                op,
                expected: 2,
                actual: other.to_vec(),
            })
        }
    };
    if tc != channels {
        return Err(TensorError::Axis {
            op,
            axis: "channel",
            expected: tc,
            actual: channels,
        });
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
        return Err(TensorError::RowIndex {
            op,
            index: bad,
            rows: n_rows,
        });
    }
    Ok(())
}

/// `(grad_x, grad_gamma, grad_beta)` of [`row_affine`].
pub fn row_affine_grads(
    x: &Tensor,
    gamma: &Tensor,
    rows: &[usize],
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [_, c, h, w] = x.dims4("row_affine")?;
    let plane = h * w;
    let mut dx = grad_out.clone();
    let mut dg = Tensor::zeros(gamma.shape().to_vec());
    let mut db = Tensor::zeros(gamma.shape().to_vec());
    for (bi, &r) in rows.iter().enumerate() {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let gm = gamma.data()[r * c + ci];
            let (mut sg, mut sb) = (0.0, 0.0);
            for p in base..base + plane {
                let gy = grad_out.data()[p];
                sg += gy * x.data()[p];
                sb += gy;
                dx.data_mut()[p] = gy * gm;
            }
            dg.data_mut()[r * c + ci] += sg;
            db.data_mut()[r * c + ci] += sb;
        }
    }
    Ok((dx, dg, db))
}

/// Concatenates 4-D tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(TensorError::Rank {
        op: "concat",
        expected: 4,
        actual: Vec::new(),
    })?;
    let [b, _, h, w] = first.dims4("concat")?;
    let mut total_c = 0;
    for p in parts {
        let [pb, pc, ph, pw] = p.dims4("concat")?;
        for (axis, expected, actual) in [("batch", b, pb), ("height", h, ph), ("width", w, pw)] {
            if expected != actual {
                return Err(TensorError::Axis {
                    op: "concat",
                    axis,
                    expected,
                    actual,
                });
            }
        }
        total_c += pc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(b * total_c * plane);
    for bi in 0..b {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[bi * pc * plane..(bi + 1) * pc * plane]);
        }
    }
    Tensor::new([b, total_c, h, w], out)
}

/// Splits a channel-axis gradient back into the pieces of a concatenation.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let [b, c, h, w] = grad.dims4("concat")?;
    let plane = h * w;
    let mut parts: Vec<Vec<f64>> = channels.iter().map(|&pc| Vec::with_capacity(b * pc * plane)).collect();
    for bi in 0..b {
        let mut offset = bi * c * plane;
        for (part, &pc) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[offset..offset + pc * plane]);
            offset += pc * plane;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &pc)| Tensor::new([b, pc, h, w], data))
        .collect()
}

/// Multiplies every element of batch item `b` by `factors[b]`.
pub fn scale_items(x: &Tensor, factors: &[f64]) -> Result<Tensor> {
    let b = *x.shape().first().unwrap_or(&0);
    if factors.len() != b || b == 0 {
        return Err(TensorError::Axis {
            op: "scale_items",
            axis: "batch",
            expected: b,
            actual: factors.len(),
        });
    }
    let per = x.len() / b;
    let mut out = x.clone();
    for (chunk, &f) in out.data_mut().chunks_mut(per).zip(factors) {
        chunk.iter_mut().for_each(|v| *v *= f);
    }
    Ok(out)
}
