//! Binary checkpoint container.
//!
//! Layout (all integers `u32` little-endian, all values IEEE-754 `f32` LE):
//!
//! ```text
//! "SCORNET1"
//! field_count (= 9)
//! feature_dim base_channels max_channels depth kernel_height kernel_width
//! time_stride noise_levels speakers
//! tensor_count
//! repeated tensor_count times:
//!     rank, dims[rank], values[product(dims)]
//! ```
//!
//! Tensors are the learnable parameters in declaration order, followed by
//! the running mean and running variance of every normalization layer.

use std::path::Path;

use super::{RunningStats, ScoreNet, ScoreNetConfig, ScoreNetParams};
use crate::binio::{to_u32, ByteReader, ByteWriter};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCORNET1";
const CONFIG_FIELDS: u32 = 9;

fn config_fields(c: &ScoreNetConfig) -> [usize; 9] {
    [
        c.feature_dim,
        c.base_channels,
        c.max_channels,
        c.depth,
        c.kernel_height,
        c.kernel_width,
        c.time_stride,
        c.noise_levels,
        c.speakers,
    ]
}

pub fn encode_checkpoint(net: &ScoreNet) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CONFIG_FIELDS);
    for v in config_fields(net.config()) {
        w.u32(to_u32(v, "config field")?);
    }
    let params = net.params();
    let mut tensors: Vec<Tensor> = params.tensors.clone();
    for r in &params.running {
        tensors.push(Tensor::new([r.mean.len()], r.mean.clone())?);
        tensors.push(Tensor::new([r.var.len()], r.var.clone())?);
    }
    w.u32(to_u32(tensors.len(), "tensor count")?);
    for t in &tensors {
        w.u32(to_u32(t.shape().len(), "rank")?);
        for &d in t.shape() {
            w.u32(to_u32(d, "extent")?);
        }
        w.f32s(t.data().iter().copied());
    }
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ScoreNet> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let nfields = r.u32("config field count")?;
    if nfields != CONFIG_FIELDS {
        return Err(FormatError::Value {
            offset: at,
            reason: format!("expected {CONFIG_FIELDS} config fields, found {nfields}"),
        }
        .into());
    }
    let mut f = [0usize; 9];
    for v in f.iter_mut() {
        *v = r.u32("config field")? as usize;
    }
    let config = ScoreNetConfig {
        feature_dim: f[0],
        base_channels: f[1],
        max_channels: f[2],
        depth: f[3],
        kernel_height: f[4],
        kernel_width: f[5],
        time_stride: f[6],
        noise_levels: f[7],
        speakers: f[8],
    };
    config.validate()?;

    let shapes = config.param_shapes();
    let norm_channels: Vec<usize> = config
        .layers()
        .iter()
        .filter(|l| l.role.is_gated())
        .map(|l| l.conv_out_channels())
        .collect();
    let expected = shapes.len() + 2 * norm_channels.len();
    let at = r.offset();
    let count = r.u32("tensor count")? as usize;
    if count != expected {
        return Err(FormatError::Dimension(format!(
            "checkpoint at byte {at} declares {count} tensors; configuration implies {expected}"
        ))
        .into());
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("tensor extent")? as usize);
        }
        let n: usize = dims.iter().product();
        let data = r.f32s(n, "tensor values")?;
        tensors.push(Tensor::new(dims, data)?);
    }
    if r.remaining() != 0 {
        return Err(FormatError::Dimension(format!("{} trailing bytes after the last tensor", r.remaining())).into());
    }
    let stats = tensors.split_off(shapes.len());
    let mut running = Vec::with_capacity(norm_channels.len());
    for (pair, &c) in stats.chunks_exact(2).zip(&norm_channels) {
        if pair[0].shape() != [c] || pair[1].shape() != [c] {
            return Err(FormatError::Dimension(format!(
                "running statistics shaped {:?}/{:?}, layer has {c} channels",
                pair[0].shape(),
                pair[1].shape()
            ))
            .into());
        }
        running.push(RunningStats {
            mean: pair[0].data().to_vec(),
            var: pair[1].data().to_vec(),
        });
    }
    ScoreNet::from_parts(
        config,
        ScoreNetParams {
            tensors,
            names: Vec::new(),
            running,
        },
    )
}

pub fn write_checkpoint(path: impl AsRef<Path>, net: &ScoreNet) -> Result<()> {
    let bytes = encode_checkpoint(net)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ScoreNet> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_checkpoint(&bytes)
}
