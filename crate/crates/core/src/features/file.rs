//! `VGFEAT01` feature files.
//!
//! ```text
//! "VGFEAT01"
//! D: u32, M: u32
//! mcc: D*M f32, row-major (row d holds coefficient d for every frame)
//! log_f0: M f32 (0.0 on unvoiced frames)
//! voiced: M bytes, 0 or 1
//! A: u32
//! ap: A*M f32, row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use ndarray::Array2;

use super::FeatureSequence;
use crate::binio::{to_u32, ByteReader, ByteWriter};
use crate::error::{Error, FormatError, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"VGFEAT01";

/// File extension used when scanning directories for feature files.
pub const FEATURE_EXTENSION: &str = "vgf";

pub fn encode_features(seq: &FeatureSequence) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.bytes(FEATURE_MAGIC);
    w.u32(to_u32(seq.dim(), "feature dimension")?);
    w.u32(to_u32(seq.frames(), "frame count")?);
    w.f32s(seq.mcc().iter().copied());
    w.f32s(seq.log_f0().iter().map(|v| v.unwrap_or(0.0)));
    w.bytes(&seq.log_f0().iter().map(|v| u8::from(v.is_some())).collect::<Vec<_>>());
    w.u32(to_u32(seq.ap().nrows(), "aperiodicity dimension")?);
    w.f32s(seq.ap().iter().copied());
    Ok(w.buf)
}

fn decode_with_dim(bytes: &[u8], dim: usize, frames: usize) -> Result<FeatureSequence> {
    let mut r = ByteReader::new(bytes);
    r.take(16, "header")?;
    let mcc = r.f32s(dim * frames, "mcc matrix")?;
    let f0 = r.f32s(frames, "log-F0 track")?;
    let flags_at = r.offset();
    let flags = r.take(frames, "voiced mask")?;
    if let Some(m) = flags.iter().position(|&b| b > 1) {
        return Err(FormatError::Value {
            offset: flags_at + m,
            reason: format!("voiced flag {} is not 0 or 1", flags[m]),
        }
        .into());
    }
    let ap_dim = r.u32("aperiodicity dimension")? as usize;
    let ap = r.f32s(ap_dim * frames, "aperiodicity payload")?;
    if r.remaining() != 0 {
        return Err(FormatError::Dimension(format!(
            "{} bytes follow the aperiodicity payload",
            r.remaining()
        ))
        .into());
    }
    let log_f0 = f0.iter().zip(flags).map(|(&v, &b)| (b == 1).then_some(v)).collect();
    let mcc = Array2::from_shape_vec((dim, frames), mcc).expect("sized by header");
    let ap = Array2::from_shape_vec((ap_dim, frames), ap).expect("sized by header");
    FeatureSequence::new(mcc, log_f0, ap)
}

/// Parses a feature file. When the payload does not fit the header's row
/// count but would fit another one, a dimension error naming both counts is
/// reported instead of the raw parse failure.
pub fn decode_features(bytes: &[u8]) -> Result<FeatureSequence> {
    let mut r = ByteReader::new(bytes);
    r.magic(FEATURE_MAGIC)?;
    let dim = r.u32("feature dimension")? as usize;
    let frames = r.u32("frame count")? as usize;
    match decode_with_dim(bytes, dim, frames) {
        Ok(seq) => Ok(seq),
        Err(err) if frames > 0 => {
            let max_rows = bytes.len() / (4 * frames);
            let fits = (1..=max_rows).find(|&d| d != dim && decode_with_dim(bytes, d, frames).is_ok());
            match fits {
                Some(rows) => Err(FormatError::Dimension(format!(
                    "header declares D={dim} but the payload holds {rows} rows of {frames} frames"
                ))
                .into()),
                None => Err(err),
            }
        }
        Err(err) => Err(err),
    }
}

pub fn write_feature_file(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let bytes = encode_features(seq)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_features(&bytes)
}
