use crate::error::{Error, Result};
use crate::tensor::kernels::{self, concat_channels};
use crate::tensor::{Tensor, TensorError};

/// Noise level and speaker a score is conditioned on. Both are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConditioningIndices {
    pub level: usize,
    pub speaker: usize,
}

impl ConditioningIndices {
    pub fn new(level: usize, speaker: usize) -> Self {
        Self { level, speaker }
    }

    pub fn check(&self, levels: usize, speakers: usize) -> Result<()> {
        if self.level >= levels {
            return Err(Error::invalid(
                "noise level",
                format!("index {} out of range for {levels} levels", self.level),
            ));
        }
        if self.speaker >= speakers {
            return Err(Error::invalid(
                "speaker",
                format!("index {} out of range for {speakers} speakers", self.speaker),
            ));
        }
        Ok(())
    }

    /// Row of the `[levels * speakers, channels]` affine tables.
    pub fn table_row(&self, speakers: usize) -> usize {
        self.level * speakers + self.speaker
    }
}

/// One-hot planes `[b, levels + speakers, h, w]`, one condition per batch item.
pub fn condition_planes(
    conds: &[ConditioningIndices],
    levels: usize,
    speakers: usize,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let planes = levels + speakers;
    let area = height * width;
    let mut data = vec![0.0; conds.len() * planes * area];
    for (b, c) in conds.iter().enumerate() {
        c.check(levels, speakers)?;
        for ch in [c.level, levels + c.speaker] {
            let base = (b * planes + ch) * area;
            data[base..base + area].fill(1.0);
        }
    }
    Ok(Tensor::new([conds.len(), planes, height, width], data)?)
}

/// Appends one-hot noise-level and speaker planes to `x` along the channel axis.
pub fn one_hot_condition(x: &Tensor, cond: ConditioningIndices, levels: usize, speakers: usize) -> Result<Tensor> {
    let [b, _, h, w] = x.dims4("one_hot_condition")?;
    let planes = condition_planes(&vec![cond; b], levels, speakers, h, w)?;
    Ok(concat_channels(&[x, &planes])?)
}

/// Batch-statistics normalization followed by the `(level, speaker)` affine
/// rows of `gamma` and `beta` (each `[levels * speakers, channels]`).
pub fn conditional_batch_norm(
    x: &Tensor,
    cond: ConditioningIndices,
    speakers: usize,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<Tensor> {
    let [b, ..] = x.dims4("conditional_batch_norm")?;
    let (mean, std) = kernels::batch_stats(x)?;
    let standardized = kernels::normalize_channels(x, mean.data(), std.data())?;
    let rows = vec![cond.table_row(speakers); b];
    kernels::row_affine(&standardized, gamma, beta, &rows).map_err(|e| match e {
        TensorError::RowIndex { rows, .. } => Error::invalid(
            "conditioning",
            format!(
                "affine tables hold {rows} rows, none for level {} / speaker {}",
                cond.level, cond.speaker
            ),
        ),
        other => other.into(),
    })
}

/// Right-pads the time (last) axis by repeating the final frame up to the
/// next multiple of `multiple`. Returns the padded tensor and the original
/// length.
pub fn pad_time(x: &Tensor, multiple: usize) -> Result<(Tensor, usize)> {
    let [b, c, h, w] = x.dims4("pad_time")?;
    if multiple == 0 {
        return Err(Error::invalid("time multiple", "must be positive"));
    }
    if w == 0 {
        return Err(Error::invalid("sequence", "time axis is empty"));
    }
    let padded = w.div_ceil(multiple) * multiple;
    if padded == w {
        return Ok((x.clone(), w));
    }
    let mut data = Vec::with_capacity(b * c * h * padded);
    for row in x.data().chunks_exact(w) {
        data.extend_from_slice(row);
        let last = row[w - 1];
        data.extend(std::iter::repeat_n(last, padded - w));
    }
    Ok((Tensor::new([b, c, h, padded], data)?, w))
}

/// Inverse of [`pad_time`]: keeps the first `length` frames.
pub fn crop_time(x: &Tensor, length: usize) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4("crop_time")?;
    if length > w {
        return Err(TensorError::Axis {
            op: "crop_time",
            axis: "width",
            expected: length,
            actual: w,
        }
        .into());
    }
    let data = x
        .data()
        .chunks_exact(w)
        .flat_map(|row| row[..length].iter().copied())
        .collect();
    Ok(Tensor::new([b, c, h, length], data)?)
}
