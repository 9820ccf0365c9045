//! C ABI over `scorevc`.
//!
//! Objects cross the boundary as opaque heap handles created by `svc_*_new`,
//! `svc_*_read` or `svc_*_load` and released by the matching `svc_*_free`.
//! Every fallible call returns an [`SvcStatus`]; on failure the message is
//! kept per thread and can be copied out with [`svc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use scorevc::features::{
    compute_speaker_stats, convert_utterance, read_feature_file, read_stats_file, write_feature_file,
    write_stats_file, FeatureSequence, SpeakerStats,
};
use scorevc::langevin::LangevinConfig;
use scorevc::noise::NoiseSchedule;
use scorevc::score_net::{read_checkpoint, ScoreNet};
use scorevc::{Error, FormatError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument or configuration value was rejected.
    InvalidArgument = 2,
    /// A file was malformed.
    Format = 3,
    /// A file could not be read or written.
    Io = 4,
    /// Training or sampling produced non-finite values.
    Numerical = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

/// Trained score network plus the noise schedule it was trained with.
pub struct SvcModel {
    net: ScoreNet,
    schedule: NoiseSchedule,
}

/// One utterance of features.
pub struct SvcFeatures(FeatureSequence);

/// Per-speaker normalization statistics.
pub struct SvcStats(SpeakerStats);

/// Langevin settings for [`svc_convert`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SvcLangevinParams {
    pub epsilon: f64,
    pub steps_per_level: usize,
    /// One-based noise level the sweep starts at.
    pub start_level: usize,
    /// Nonzero adds Gaussian noise to every update.
    pub noisy: i32,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(SvcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Format(FormatError::Dimension(_)) | Error::Format(_) => SvcStatus::Format,
            Error::Io { .. } => SvcStatus::Io,
            Error::NonFiniteLoss { .. } | Error::NonFiniteIterate { .. } => SvcStatus::Numerical,
            _ if !e.is_validation() => SvcStatus::Numerical,
            _ => SvcStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SvcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SvcStatus::InvalidArgument, msg.into())
}

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SvcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SvcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            SvcStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn svc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length in
/// bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn svc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Defaults for conversion: epsilon 1e-5, 120 steps per level, start at
/// level 4, noiseless, seed 0.
///
/// # Safety
/// `out` must be null or point to writable memory for one struct.
#[no_mangle]
pub unsafe extern "C" fn svc_langevin_defaults(out: *mut SvcLangevinParams) -> SvcStatus {
    guard(|| {
        let c = LangevinConfig::default();
        *out_arg(out, "out")? = SvcLangevinParams {
            epsilon: c.epsilon,
            steps_per_level: c.steps_per_level,
            start_level: c.start_level,
            noisy: i32::from(c.noisy),
            seed: c.seed,
        };
        Ok(())
    })
}

/// Loads a checkpoint and pairs it with the geometric schedule from
/// `sigma_first` to `sigma_last`; the level count comes from the checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn svc_model_load(
    path: *const c_char,
    sigma_first: f64,
    sigma_last: f64,
    out: *mut *mut SvcModel,
) -> SvcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = path_arg(path, "path")?;
        let net = read_checkpoint(&path)?;
        let schedule = NoiseSchedule::geometric(sigma_first, sigma_last, net.config().noise_levels)?;
        *out = boxed(SvcModel { net, schedule });
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`svc_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn svc_model_free(model: *mut SvcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature dimension, speaker count and noise-level count of a model.
///
/// # Safety
/// `model` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn svc_model_info(
    model: *const SvcModel,
    feature_dim: *mut usize,
    speakers: *mut usize,
    levels: *mut usize,
) -> SvcStatus {
    guard(|| {
        let cfg = ref_arg(model, "model")?.net.config();
        for (ptr, value) in [(feature_dim, cfg.feature_dim), (speakers, cfg.speakers), (levels, cfg.noise_levels)] {
            if let Some(p) = ptr.as_mut() {
                *p = value;
            }
        }
        Ok(())
    })
}

/// Builds a feature sequence from row-major `dim x frames` MCCs and a
/// log-F0 track of `frames` values where NaN marks unvoiced frames. The
/// aperiodicity payload is empty.
///
/// # Safety
/// `mcc` must hold `dim * frames` doubles and `log_f0` `frames` doubles.
#[no_mangle]
pub unsafe extern "C" fn svc_features_new(
    mcc: *const f64,
    log_f0: *const f64,
    dim: usize,
    frames: usize,
    out: *mut *mut SvcFeatures,
) -> SvcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if mcc.is_null() || log_f0.is_null() {
            return Err(null("mcc or log_f0"));
        }
        let len = dim.checked_mul(frames).ok_or_else(|| invalid("dim * frames overflows"))?;
        let values = std::slice::from_raw_parts(mcc, len).to_vec();
        let f0 = std::slice::from_raw_parts(log_f0, frames)
            .iter()
            .map(|&v| (!v.is_nan()).then_some(v))
            .collect();
        let mcc = ndarray::Array2::from_shape_vec((dim, frames), values).map_err(|e| invalid(e.to_string()))?;
        *out = boxed(SvcFeatures(FeatureSequence::without_ap(mcc, f0)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn svc_features_read(path: *const c_char, out: *mut *mut SvcFeatures) -> SvcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let seq = read_feature_file(path_arg(path, "path")?)?;
        *out = boxed(SvcFeatures(seq));
        Ok(())
    })
}

/// # Safety
/// `features` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn svc_features_write(features: *const SvcFeatures, path: *const c_char) -> SvcStatus {
    guard(|| {
        let seq = &ref_arg(features, "features")?.0;
        write_feature_file(path_arg(path, "path")?, seq)?;
        Ok(())
    })
}

/// # Safety
/// `features` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn svc_features_free(features: *mut SvcFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// # Safety
/// `features` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn svc_features_shape(
    features: *const SvcFeatures,
    dim: *mut usize,
    frames: *mut usize,
) -> SvcStatus {
    guard(|| {
        let seq = &ref_arg(features, "features")?.0;
        if let Some(d) = dim.as_mut() {
            *d = seq.dim();
        }
        if let Some(m) = frames.as_mut() {
            *m = seq.frames();
        }
        Ok(())
    })
}

/// Copies the row-major MCC matrix into `out`, which must hold exactly
/// `dim * frames` doubles (`len`).
///
/// # Safety
/// `out` must be valid for `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn svc_features_mcc(features: *const SvcFeatures, out: *mut f64, len: usize) -> SvcStatus {
    guard(|| {
        let seq = &ref_arg(features, "features")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != seq.mcc().len() {
            return Err(invalid(format!("buffer holds {len} values, matrix has {}", seq.mcc().len())));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, v) in dst.iter_mut().zip(seq.mcc().iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Statistics over `count` feature sequences.
///
/// # Safety
/// `sequences` must point to `count` live handles.
#[no_mangle]
pub unsafe extern "C" fn svc_stats_compute(
    sequences: *const *const SvcFeatures,
    count: usize,
    out: *mut *mut SvcStats,
) -> SvcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if sequences.is_null() {
            return Err(null("sequences"));
        }
        let seqs = std::slice::from_raw_parts(sequences, count)
            .iter()
            .map(|&p| ref_arg(p, "sequence").map(|s| s.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        *out = boxed(SvcStats(compute_speaker_stats(&seqs)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn svc_stats_read(path: *const c_char, out: *mut *mut SvcStats) -> SvcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = boxed(SvcStats(read_stats_file(path_arg(path, "path")?)?));
        Ok(())
    })
}

/// # Safety
/// `stats` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn svc_stats_write(stats: *const SvcStats, path: *const c_char) -> SvcStatus {
    guard(|| {
        let stats = &ref_arg(stats, "stats")?.0;
        write_stats_file(path_arg(path, "path")?, stats)?;
        Ok(())
    })
}

/// # Safety
/// `stats` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn svc_stats_free(stats: *mut SvcStats) {
    if !stats.is_null() {
        drop(Box::from_raw(stats));
    }
}

/// Converts `input` toward zero-based speaker `target`: Langevin refinement
/// of the normalized MCCs, moment matching to `target_stats`, log-F0
/// transform, aperiodicity passthrough. `params` may be null for defaults.
///
/// # Safety
/// All handles must be live; `params` must be null or readable; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn svc_convert(
    model: *const SvcModel,
    input: *const SvcFeatures,
    target: usize,
    source_stats: *const SvcStats,
    target_stats: *const SvcStats,
    params: *const SvcLangevinParams,
    out: *mut *mut SvcFeatures,
) -> SvcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = ref_arg(model, "model")?;
        let input = &ref_arg(input, "input")?.0;
        let source = &ref_arg(source_stats, "source_stats")?.0;
        let tgt = &ref_arg(target_stats, "target_stats")?.0;
        let cfg = match params.as_ref() {
            None => LangevinConfig::default(),
            Some(p) => LangevinConfig {
                epsilon: p.epsilon,
                steps_per_level: p.steps_per_level,
                start_level: p.start_level,
                noisy: p.noisy != 0,
                seed: p.seed,
                record_trajectory: false,
            },
        };
        let seq = convert_utterance(&model.net, input, target, source, tgt, &model.schedule, &cfg)?;
        *out = boxed(SvcFeatures(seq));
        Ok(())
    })
}

/// DTW-aligned mel-cepstral distortion in dB between two sequences.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn svc_mcd(converted: *const SvcFeatures, reference: *const SvcFeatures, out: *mut f64) -> SvcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let a = &ref_arg(converted, "converted")?.0;
        let b = &ref_arg(reference, "reference")?.0;
        *out = scorevc::eval::utterance_mcd(a.mcc(), b.mcc())?;
        Ok(())
    })
}
