//! C ABI over the ctacl engine.
//!
//! Datasets and encoders cross the boundary as opaque handles that the caller
//! releases with the matching `_free`. Every fallible call returns a
//! [`CtaclStatus`]; the message of the last failure on the calling thread is
//! available from [`ctacl_last_error`]. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ctacl::encoder::{Checkpoint, Encoder};
use ctacl::eval::EvalReport;
use ctacl::rng::{stream, RngState, Stream};
use ctacl::synthdata::{self, Dataset, GenConfig};
use ctacl::trainer::{self, Experiment, TrainConfig, Variant};
use ctacl::Error;

/// Dataset handle.
pub struct CtaclDataset {
    inner: Dataset,
}

/// Encoder handle.
pub struct CtaclEncoder {
    inner: Encoder,
    /// Epoch and batching-stream position recorded in saved checkpoints.
    state: (u32, RngState),
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtaclStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Integrity = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtaclVariant {
    Sscl = 0,
    Ctacl = 1,
    CtaclDa = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtaclGenParams {
    pub seed: u64,
    pub n_vehicles: u32,
    pub n_cameras: u32,
    pub min_cameras_per_vehicle: u32,
    pub max_cameras_per_vehicle: u32,
    pub min_tracklet_len: u32,
    pub max_tracklet_len: u32,
    pub d_in: usize,
    pub domain_gap_strength: f64,
    pub intra_tracklet_noise: f64,
    pub tracklet_drift: f64,
    pub frame_variation: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtaclTrainParams {
    pub seed: u64,
    pub variant: CtaclVariant,
    pub epochs: u32,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub k: usize,
    pub exclude_own_camera: bool,
    pub warmup_epochs: u32,
    pub overhaul_every: u32,
    /// Width of every hidden layer.
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub embed_dim: usize,
    /// Fraction of vehicles held out when the dataset carries vehicle ids.
    pub eval_fraction: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CtaclMetrics {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
    pub camera_probe_accuracy: f64,
    pub n_queries: usize,
    pub n_excluded_queries: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(CtaclStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => CtaclStatus::Io,
            Error::Format(_) | Error::Json(_) => CtaclStatus::Format,
            Error::Integrity(_) => CtaclStatus::Integrity,
            Error::ZeroNorm | Error::NonFinite(_) | Error::NonFiniteActivation { .. } => CtaclStatus::Numeric,
            _ => CtaclStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CtaclStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtaclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            CtaclStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            CtaclStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CtaclStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn metrics(r: &EvalReport) -> CtaclMetrics {
    CtaclMetrics {
        rank1: r.rank(1),
        rank5: r.rank(5),
        rank10: r.rank(10),
        map: r.map,
        camera_probe_accuracy: r.camera_probe_accuracy,
        n_queries: r.n_queries,
        n_excluded_queries: r.n_excluded_queries,
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ctacl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ctacl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn ctacl_gen_params_default() -> CtaclGenParams {
    let g = GenConfig::default();
    CtaclGenParams {
        seed: g.seed,
        n_vehicles: g.n_vehicles,
        n_cameras: g.n_cameras,
        min_cameras_per_vehicle: g.min_cameras_per_vehicle,
        max_cameras_per_vehicle: g.max_cameras_per_vehicle,
        min_tracklet_len: g.min_tracklet_len,
        max_tracklet_len: g.max_tracklet_len,
        d_in: g.d_in,
        domain_gap_strength: g.domain_gap_strength,
        intra_tracklet_noise: g.intra_tracklet_noise,
        tracklet_drift: g.tracklet_drift,
        frame_variation: g.frame_variation,
    }
}

#[no_mangle]
pub extern "C" fn ctacl_train_params_default() -> CtaclTrainParams {
    let t = TrainConfig::default();
    CtaclTrainParams {
        seed: t.seed,
        variant: CtaclVariant::CtaclDa,
        epochs: t.optim.epochs,
        batch_size: t.optim.batch_size,
        base_lr: t.optim.base_lr,
        momentum: t.optim.momentum,
        tau: t.hyper.tau,
        lambda: t.hyper.lambda,
        gamma: t.hyper.mining.gamma,
        k: t.hyper.mining.k,
        exclude_own_camera: t.hyper.mining.exclude_own_camera,
        warmup_epochs: t.warmup_epochs,
        overhaul_every: t.overhaul_every,
        hidden_width: t.hidden.first().copied().unwrap_or(0),
        hidden_layers: t.hidden.len(),
        embed_dim: t.embed_dim,
        eval_fraction: t.eval_fraction,
    }
}

fn gen_config(p: &CtaclGenParams) -> GenConfig {
    GenConfig {
        seed: p.seed,
        n_vehicles: p.n_vehicles,
        n_cameras: p.n_cameras,
        min_cameras_per_vehicle: p.min_cameras_per_vehicle,
        max_cameras_per_vehicle: p.max_cameras_per_vehicle,
        min_tracklet_len: p.min_tracklet_len,
        max_tracklet_len: p.max_tracklet_len,
        d_in: p.d_in,
        domain_gap_strength: p.domain_gap_strength,
        intra_tracklet_noise: p.intra_tracklet_noise,
        tracklet_drift: p.tracklet_drift,
        frame_variation: p.frame_variation,
        ..GenConfig::default()
    }
}

fn train_config(p: &CtaclTrainParams) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed: p.seed,
        variant: match p.variant {
            CtaclVariant::Sscl => Variant::Sscl,
            CtaclVariant::Ctacl => Variant::Ctacl,
            CtaclVariant::CtaclDa => Variant::CtaclDa,
        },
        warmup_epochs: p.warmup_epochs,
        overhaul_every: p.overhaul_every,
        eval_every: 0,
        hidden: vec![p.hidden_width; p.hidden_layers],
        embed_dim: p.embed_dim,
        eval_fraction: p.eval_fraction,
        ..TrainConfig::default()
    };
    cfg.optim.epochs = p.epochs;
    cfg.optim.batch_size = p.batch_size;
    cfg.optim.base_lr = p.base_lr;
    cfg.optim.momentum = p.momentum;
    cfg.hyper.tau = p.tau;
    cfg.hyper.lambda = p.lambda;
    cfg.hyper.mining.gamma = p.gamma;
    cfg.hyper.mining.k = p.k;
    cfg.hyper.mining.exclude_own_camera = p.exclude_own_camera;
    cfg
}

/// # Safety
/// `params` must point to a valid struct and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ctacl_dataset_generate(params: *const CtaclGenParams, out: *mut *mut CtaclDataset) -> CtaclStatus {
    guard(|| {
        let p = handle(params, "params")?;
        let ds = synthdata::generate(&gen_config(p))?;
        put(out, CtaclDataset { inner: ds })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctacl_dataset_load(path: *const c_char, out: *mut *mut CtaclDataset) -> CtaclStatus {
    guard(|| {
        let ds = Dataset::load(&path_arg(path)?)?;
        put(out, CtaclDataset { inner: ds })
    })
}

/// Writes the dataset and its JSON sidecar.
///
/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctacl_dataset_save(ds: *const CtaclDataset, path: *const c_char) -> CtaclStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        ds.inner.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Number of samples, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctacl_dataset_len(ds: *const CtaclDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.data.len())
}

/// Input dimension, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctacl_dataset_dim(ds: *const CtaclDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.data.d_in)
}

/// Number of cameras, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctacl_dataset_n_cameras(ds: *const CtaclDataset) -> u32 {
    ds.as_ref().map_or(0, |d| d.inner.data.n_cameras)
}

/// Copies sample `index` into `out`, which holds `out_len` doubles.
///
/// # Safety
/// `ds` must be a live handle and `out` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn ctacl_dataset_sample(
    ds: *const CtaclDataset,
    index: usize,
    out: *mut f64,
    out_len: usize,
) -> CtaclStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let s = ds
            .inner
            .data
            .samples
            .get(index)
            .ok_or_else(|| Failure(CtaclStatus::InvalidArgument, format!("sample {index} out of range")))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < s.input.len() {
            return Err(Failure(CtaclStatus::BufferTooSmall, format!("need {} doubles, got {out_len}", s.input.len())));
        }
        ptr::copy_nonoverlapping(s.input.as_ptr(), out, s.input.len());
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctacl_dataset_free(ds: *mut CtaclDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fresh encoder with layer widths `dims[0..n_dims]` (input first).
///
/// # Safety
/// `dims` must be valid for `n_dims` reads and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctacl_encoder_init(
    dims: *const usize,
    n_dims: usize,
    seed: u64,
    out: *mut *mut CtaclEncoder,
) -> CtaclStatus {
    guard(|| {
        if dims.is_null() {
            return Err(null("dims"));
        }
        let dims = std::slice::from_raw_parts(dims, n_dims);
        let enc = Encoder::init(dims, &mut stream(seed, Stream::Init))?;
        put(out, CtaclEncoder { inner: enc, state: (0, RngState::capture(&stream(seed, Stream::Batching))) })
    })
}

/// Loads a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctacl_encoder_load(path: *const c_char, out: *mut *mut CtaclEncoder) -> CtaclStatus {
    guard(|| {
        let ck = Checkpoint::load(&path_arg(path)?)?;
        put(out, CtaclEncoder { inner: ck.encoder, state: (ck.epoch, ck.rng) })
    })
}

/// Writes the encoder as a checkpoint.
///
/// # Safety
/// `enc` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctacl_encoder_save(enc: *const CtaclEncoder, path: *const c_char) -> CtaclStatus {
    guard(|| {
        let enc = handle(enc, "encoder")?;
        let (epoch, rng) = enc.state;
        Checkpoint { encoder: enc.inner.clone(), epoch, rng }.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `enc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctacl_encoder_input_dim(enc: *const CtaclEncoder) -> usize {
    enc.as_ref().map_or(0, |e| e.inner.input_dim())
}

/// # Safety
/// `enc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctacl_encoder_output_dim(enc: *const CtaclEncoder) -> usize {
    enc.as_ref().map_or(0, |e| e.inner.output_dim())
}

/// Embeds `n_rows` row-major inputs of width `in_dim` into `out`, which holds
/// `out_len` doubles (at least `n_rows * output_dim`).
///
/// # Safety
/// `x` must be valid for `n_rows * in_dim` reads and `out` for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn ctacl_encoder_forward(
    enc: *const CtaclEncoder,
    x: *const f64,
    n_rows: usize,
    in_dim: usize,
    out: *mut f64,
    out_len: usize,
) -> CtaclStatus {
    guard(|| {
        let enc = &handle(enc, "encoder")?.inner;
        if x.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        if in_dim != enc.input_dim() {
            return Err(Error::Dimension { expected: enc.input_dim(), got: in_dim }.into());
        }
        let d = enc.output_dim();
        let need = n_rows
            .checked_mul(d)
            .ok_or_else(|| Failure(CtaclStatus::InvalidArgument, "output size overflows".into()))?;
        if out_len < need {
            return Err(Failure(CtaclStatus::BufferTooSmall, format!("need {need} doubles, got {out_len}")));
        }
        let x = std::slice::from_raw_parts(x, n_rows * in_dim);
        let out = std::slice::from_raw_parts_mut(out, need);
        for (row, dst) in x.chunks_exact(in_dim).zip(out.chunks_exact_mut(d)) {
            dst.copy_from_slice(enc.embed(row)?.as_slice());
        }
        Ok(())
    })
}

/// # Safety
/// `enc` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctacl_encoder_free(enc: *mut CtaclEncoder) {
    if !enc.is_null() {
        drop(Box::from_raw(enc));
    }
}

/// Trains an encoder. When the dataset carries vehicle ids a share of the
/// vehicles is held out, and `metrics_out` (nullable) receives the final held-out
/// evaluation; otherwise training uses every sample and `metrics_out` is zeroed.
///
/// # Safety
/// `ds` and `params` must be valid, `out` writable, `metrics_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ctacl_train(
    ds: *const CtaclDataset,
    params: *const CtaclTrainParams,
    out: *mut *mut CtaclEncoder,
    metrics_out: *mut CtaclMetrics,
) -> CtaclStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.inner;
        let cfg = train_config(handle(params, "params")?);
        cfg.validate()?;
        if out.is_null() {
            return Err(null("output handle"));
        }
        let (ck, m) = if ds.labels.is_some() {
            let exp = Experiment::prepare(ds, cfg.seed, cfg.eval_fraction)?;
            let o = trainer::run_experiment(&exp, &cfg, |_, _| Ok(()))?;
            (o.checkpoint, metrics(&o.final_eval))
        } else {
            (trainer::fit(&cfg, &ds.data, None, |_, _| Ok(()))?.checkpoint, CtaclMetrics::default())
        };
        if !metrics_out.is_null() {
            *metrics_out = m;
        }
        put(out, CtaclEncoder { inner: ck.encoder, state: (ck.epoch, ck.rng) })
    })
}

/// Evaluates on the held-out split a training run with `seed` and
/// `eval_fraction` would use.
///
/// # Safety
/// `enc` and `ds` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctacl_evaluate(
    enc: *const CtaclEncoder,
    ds: *const CtaclDataset,
    seed: u64,
    eval_fraction: f64,
    out: *mut CtaclMetrics,
) -> CtaclStatus {
    guard(|| {
        let enc = &handle(enc, "encoder")?.inner;
        let ds = &handle(ds, "dataset")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = ctacl::cli::evaluate_checkpoint(ds, enc, seed, eval_fraction, ctacl::eval::DEFAULT_K_MAX)?;
        *out = metrics(&r);
        Ok(())
    })
}
