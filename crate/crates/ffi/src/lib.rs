//! C ABI over `kairos`.
//!
//! Conventions:
//! - every fallible call returns a [`KairosStatus`]; results go through out
//!   pointers, which are written only on success;
//! - on failure, [`kairos_last_error`] describes the most recent error on the
//!   calling thread;
//! - objects are opaque handles owned by the caller and released with the
//!   matching `*_free` (passing NULL is a no-op);
//! - panics never cross the boundary; they surface as `KAIROS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use kairos::controller::{
    adjust_prediction, mpc_decide, offline_optimal, ControllerConfig, ControllerError, PlayerState, Policy,
};
use kairos::predictor::{padded_window, Model, Observation, PredictorError, QuantilePrediction};
use kairos::simulator::{run_session, SessionResult, SimConfig, SimError};
use kairos::trace_io::{NetworkTrace, TraceError, VideoManifest};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KairosStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument or configuration.
    InvalidArgument = 2,
    /// Unreadable or malformed input data.
    Data = 3,
    /// Non-finite numbers or a diverged computation.
    Numeric = 4,
    Panic = 5,
}

/// Controller and player settings. Start from [`kairos_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KairosParams {
    pub lookahead: usize,
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub buffer_floor: f64,
    pub gamma_cap: f64,
    pub buffer_max: f64,
    pub hm_window: usize,
    pub robust_horizon: usize,
    pub rtt: f64,
    pub start_offset: f64,
}

/// One completed download, as input to [`kairos_model_predict`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KairosObservation {
    pub throughput: f64,
    pub buffer: f64,
    pub rebuffer: f64,
    pub latency: f64,
    pub completed_at: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KairosQoe {
    pub utility: f64,
    pub rebuffer_penalty: f64,
    pub smoothness_penalty: f64,
    pub average: f64,
    pub total: f64,
}

/// One chunk of a simulated session. `point` and `estimate` are NaN when the
/// controller did not produce them.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KairosChunk {
    pub index: usize,
    pub level: usize,
    pub bitrate: f64,
    pub size: f64,
    pub start: f64,
    pub end: f64,
    pub duration: f64,
    pub throughput: f64,
    pub rebuffer: f64,
    pub buffer_before: f64,
    pub buffer_after: f64,
    pub sleep: f64,
    pub point: f64,
    pub estimate: f64,
}

pub struct KairosTrace(NetworkTrace);
pub struct KairosManifest(VideoManifest);
pub struct KairosModel(Arc<Model>);
pub struct KairosPolicy(Policy);
pub struct KairosSession(SessionResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (KairosStatus, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KairosStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KairosStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KairosStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (KairosStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    (KairosStatus::InvalidArgument, msg.into())
}

fn trace_err(e: TraceError) -> Failure {
    (KairosStatus::Data, e.to_string())
}

fn predictor_err(e: PredictorError) -> Failure {
    let status = match e {
        PredictorError::Diverged { .. } | PredictorError::Autodiff(_) => KairosStatus::Numeric,
        PredictorError::Config(_) => KairosStatus::InvalidArgument,
        _ => KairosStatus::Data,
    };
    (status, e.to_string())
}

fn controller_err(e: ControllerError) -> Failure {
    invalid(e.to_string())
}

fn sim_err(e: SimError) -> Failure {
    match e {
        SimError::Predictor { chunk, source } => {
            let (s, m) = predictor_err(source);
            (s, format!("chunk {chunk}: {m}"))
        }
        SimError::Baseline { .. } => (KairosStatus::Numeric, e.to_string()),
        SimError::Controller(_) | SimError::Config(_) => invalid(e.to_string()),
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes NULL or a live pointer produced by this crate.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated by contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `n` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and writable by contract.
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    // SAFETY: forwarded caller contract.
    unsafe { put(out, Box::into_raw(Box::new(value)), "out") }
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` in this crate and is freed once.
        drop(unsafe { Box::from_raw(p) });
    }
}

impl From<&ControllerConfig> for KairosParams {
    fn from(c: &ControllerConfig) -> Self {
        let sim = SimConfig::default();
        Self {
            lookahead: c.lookahead,
            lambda: c.lambda,
            mu: c.mu,
            alpha: c.alpha,
            beta: c.beta,
            buffer_floor: c.buffer_floor,
            gamma_cap: c.gamma_cap,
            buffer_max: c.buffer_max,
            hm_window: c.hm_window,
            robust_horizon: c.robust_horizon,
            rtt: sim.rtt,
            start_offset: sim.start_offset,
        }
    }
}

/// NULL means defaults.
unsafe fn params(p: *const KairosParams) -> Result<(ControllerConfig, SimConfig), Failure> {
    // SAFETY: forwarded caller contract.
    let Some(p) = (unsafe { p.as_ref() }) else {
        return Ok((ControllerConfig::default(), SimConfig::default()));
    };
    let ctrl = ControllerConfig {
        lookahead: p.lookahead,
        lambda: p.lambda,
        mu: p.mu,
        alpha: p.alpha,
        beta: p.beta,
        buffer_floor: p.buffer_floor,
        gamma_cap: p.gamma_cap,
        buffer_max: p.buffer_max,
        hm_window: p.hm_window,
        robust_horizon: p.robust_horizon,
    };
    let sim = SimConfig {
        buffer_max: p.buffer_max,
        rtt: p.rtt,
        start_offset: p.start_offset,
    };
    ctrl.validate().map_err(controller_err)?;
    sim.validate().map_err(sim_err)?;
    Ok((ctrl, sim))
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kairos_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kairos_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn kairos_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_params_default(out: *mut KairosParams) -> KairosStatus {
    guard(|| unsafe { put(out, KairosParams::from(&ControllerConfig::default()), "out") })
}

/// Loads a `time bandwidth` text trace.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_trace_load(path: *const c_char, out: *mut *mut KairosTrace) -> KairosStatus {
    guard(|| unsafe {
        let path = PathBuf::from(string(path, "path")?);
        let t = NetworkTrace::load(&path).map_err(trace_err)?;
        put_handle(out, KairosTrace(t))
    })
}

/// Builds a trace from `n` (time s, bandwidth Mbps) samples.
///
/// # Safety
/// `id` NUL-terminated; `times` and `mbps` hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_trace_from_samples(
    id: *const c_char,
    times: *const f64,
    mbps: *const f64,
    n: usize,
    out: *mut *mut KairosTrace,
) -> KairosStatus {
    guard(|| unsafe {
        let id = string(id, "id")?;
        let times = slice(times, n, "times")?;
        let mbps = slice(mbps, n, "mbps")?;
        let pairs: Vec<(f64, f64)> = times.iter().copied().zip(mbps.iter().copied()).collect();
        let t = NetworkTrace::new(id, &pairs, None).map_err(trace_err)?;
        put_handle(out, KairosTrace(t))
    })
}

/// # Safety
/// `trace` is NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kairos_trace_free(trace: *mut KairosTrace) {
    unsafe { free(trace) }
}

/// # Safety
/// `trace` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kairos_trace_sample_count(trace: *const KairosTrace) -> usize {
    unsafe { trace.as_ref() }.map_or(0, |t| t.0.samples().len())
}

/// # Safety
/// `trace` live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_trace_mean_bandwidth(trace: *const KairosTrace, out: *mut f64) -> KairosStatus {
    guard(|| unsafe { put(out, deref(trace, "trace")?.0.mean_bandwidth(), "out") })
}

/// The built-in six-rung ladder.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_manifest_default(out: *mut *mut KairosManifest) -> KairosStatus {
    guard(|| unsafe { put_handle(out, KairosManifest(VideoManifest::default())) })
}

/// Constant-bitrate manifest: chunk size is rung bitrate times duration.
///
/// # Safety
/// `ladder` holds `levels` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_manifest_new(
    ladder: *const f64,
    levels: usize,
    chunk_duration: f64,
    num_chunks: usize,
    out: *mut *mut KairosManifest,
) -> KairosStatus {
    guard(|| unsafe {
        let ladder = slice(ladder, levels, "ladder")?.to_vec();
        let m = VideoManifest::new(ladder, chunk_duration, num_chunks, None).map_err(trace_err)?;
        put_handle(out, KairosManifest(m))
    })
}

/// # Safety
/// `path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_manifest_load(path: *const c_char, out: *mut *mut KairosManifest) -> KairosStatus {
    guard(|| unsafe {
        let path = PathBuf::from(string(path, "path")?);
        let m = VideoManifest::load(&path).map_err(trace_err)?;
        put_handle(out, KairosManifest(m))
    })
}

/// # Safety
/// `manifest` is NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kairos_manifest_free(manifest: *mut KairosManifest) {
    unsafe { free(manifest) }
}

/// # Safety
/// `manifest` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kairos_manifest_levels(manifest: *const KairosManifest) -> usize {
    unsafe { manifest.as_ref() }.map_or(0, |m| m.0.levels())
}

/// # Safety
/// `manifest` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kairos_manifest_num_chunks(manifest: *const KairosManifest) -> usize {
    unsafe { manifest.as_ref() }.map_or(0, |m| m.0.num_chunks())
}

/// Loads a trained checkpoint.
///
/// # Safety
/// `path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_model_load(path: *const c_char, out: *mut *mut KairosModel) -> KairosStatus {
    guard(|| unsafe {
        let path = PathBuf::from(string(path, "path")?);
        let ck = kairos::predictor::Checkpoint::load(&path).map_err(predictor_err)?;
        put_handle(out, KairosModel(Arc::new(ck.model)))
    })
}

/// # Safety
/// `model` is NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kairos_model_free(model: *mut KairosModel) {
    unsafe { free(model) }
}

/// Number of quantile levels the model predicts.
///
/// # Safety
/// `model` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kairos_model_quantile_count(model: *const KairosModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.0.config().levels.len())
}

/// Predicts next-chunk throughput quantiles (Mbps, ascending level order)
/// from the session history so far, oldest first. Writes
/// `kairos_model_quantile_count` values into `out`.
///
/// # Safety
/// `history` holds `n` values; `out` has room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn kairos_model_predict(
    model: *const KairosModel,
    history: *const KairosObservation,
    n: usize,
    chunk_duration: f64,
    out: *mut f64,
    capacity: usize,
) -> KairosStatus {
    guard(|| unsafe {
        let model = &deref(model, "model")?.0;
        let obs: Vec<Observation> = slice(history, n, "history")?
            .iter()
            .map(|o| Observation {
                throughput: o.throughput,
                buffer: o.buffer,
                rebuffer: o.rebuffer,
                latency: o.latency,
                completed_at: o.completed_at,
            })
            .collect();
        let cfg = model.config();
        let w = padded_window(&obs, cfg.k, cfg.eta, model.normalization(), chunk_duration).map_err(predictor_err)?;
        let pred = model.predict(&w).map_err(predictor_err)?;
        if capacity < pred.values.len() {
            return Err(invalid(format!("need room for {} values", pred.values.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::ptr::copy_nonoverlapping(pred.values.as_ptr(), out, pred.values.len());
        Ok(())
    })
}

/// Named controller: `hm-mpc`, `robust-hm-mpc` or `bola` (model ignored),
/// `kairos` or `kairos-na` (model required).
///
/// # Safety
/// `name` NUL-terminated; `model` NULL or live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_policy_new(
    name: *const c_char,
    model: *const KairosModel,
    out: *mut *mut KairosPolicy,
) -> KairosStatus {
    guard(|| unsafe {
        let name = string(name, "name")?;
        let model = || deref(model, "model").map(|m| m.0.clone());
        let policy = match name.as_str() {
            "hm-mpc" => Policy::hm_mpc(),
            "robust-hm-mpc" => Policy::robust_mpc(),
            "bola" => Policy::bola(),
            "kairos" => Policy::kairos("kairos", model()?),
            "kairos-na" => Policy::kairos_robust("kairos-na", model()?),
            other => return Err(invalid(format!("unknown controller {other}"))),
        };
        put_handle(out, KairosPolicy(policy))
    })
}

/// # Safety
/// `policy` is NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kairos_policy_free(policy: *mut KairosPolicy) {
    unsafe { free(policy) }
}

/// Buffer-aware throughput estimate from the 0.1 and 0.5 quantiles.
///
/// # Safety
/// `params` NULL (defaults) or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_adjust_prediction(
    q10: f64,
    q50: f64,
    buffer: f64,
    params: *const KairosParams,
    out: *mut f64,
) -> KairosStatus {
    guard(|| unsafe {
        let (ctrl, _) = self::params(params)?;
        if !(q10.is_finite() && q50.is_finite() && buffer.is_finite()) {
            return Err((KairosStatus::Numeric, "non-finite input".into()));
        }
        let pred = QuantilePrediction {
            levels: vec![0.1, 0.5],
            values: vec![q10, q50],
        };
        put(out, adjust_prediction(&pred, buffer, &ctrl).map_err(controller_err)?, "out")
    })
}

/// Ladder index chosen by the lookahead planner. `prev_level < 0` means no
/// chunk has been played yet.
///
/// # Safety
/// `manifest` live; `params` NULL or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_mpc_decide(
    manifest: *const KairosManifest,
    params: *const KairosParams,
    buffer: f64,
    prev_level: i64,
    next_chunk: usize,
    estimate: f64,
    out: *mut usize,
) -> KairosStatus {
    guard(|| unsafe {
        let m = &deref(manifest, "manifest")?.0;
        let (ctrl, _) = self::params(params)?;
        if next_chunk >= m.num_chunks() {
            return Err(invalid(format!("chunk {next_chunk} is past the end")));
        }
        let prev = match prev_level {
            p if p < 0 => None,
            p if (p as usize) < m.levels() => Some(p as usize),
            p => return Err(invalid(format!("no ladder rung {p}"))),
        };
        if !(estimate > 0.0 && estimate.is_finite() && buffer >= 0.0 && buffer.is_finite()) {
            return Err(invalid("estimate must be positive and buffer nonnegative"));
        }
        let state = PlayerState {
            buffer,
            wall_time: 0.0,
            prev_level: prev,
            next_chunk,
        };
        put(out, mpc_decide(&state, estimate, m, &ctrl), "out")
    })
}

/// Plays the whole video over `trace`.
///
/// # Safety
/// Handles live; `params` NULL or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_simulate(
    trace: *const KairosTrace,
    manifest: *const KairosManifest,
    policy: *const KairosPolicy,
    params: *const KairosParams,
    out: *mut *mut KairosSession,
) -> KairosStatus {
    guard(|| unsafe {
        let (ctrl, sim) = self::params(params)?;
        let s = run_session(
            &deref(trace, "trace")?.0,
            &deref(manifest, "manifest")?.0,
            &deref(policy, "policy")?.0,
            &ctrl,
            &sim,
        )
        .map_err(sim_err)?;
        put_handle(out, KairosSession(s))
    })
}

/// Plays the clairvoyant plan found by dynamic programming over buffer
/// buckets of `resolution` seconds.
///
/// # Safety
/// Handles live; `params` NULL or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_offline_optimal(
    trace: *const KairosTrace,
    manifest: *const KairosManifest,
    params: *const KairosParams,
    resolution: f64,
    out: *mut *mut KairosSession,
) -> KairosStatus {
    guard(|| unsafe {
        let (ctrl, sim) = self::params(params)?;
        if !(resolution >= 0.0 && resolution.is_finite()) {
            return Err(invalid("resolution must be finite and nonnegative"));
        }
        let (t, m) = (&deref(trace, "trace")?.0, &deref(manifest, "manifest")?.0);
        let plan = offline_optimal(t, m, &ctrl, &sim, resolution);
        let policy = Policy::FixedPlan {
            name: "offline-optimal".into(),
            levels: plan.levels,
        };
        let s = run_session(t, m, &policy, &ctrl, &sim).map_err(sim_err)?;
        put_handle(out, KairosSession(s))
    })
}

/// # Safety
/// `session` is NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kairos_session_free(session: *mut KairosSession) {
    unsafe { free(session) }
}

/// # Safety
/// `session` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kairos_session_chunk_count(session: *const KairosSession) -> usize {
    unsafe { session.as_ref() }.map_or(0, |s| s.0.records.len())
}

/// # Safety
/// `session` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_session_qoe(session: *const KairosSession, out: *mut KairosQoe) -> KairosStatus {
    guard(|| unsafe {
        let q = &deref(session, "session")?.0.qoe;
        let qoe = KairosQoe {
            utility: q.utility,
            rebuffer_penalty: q.rebuffer_penalty,
            smoothness_penalty: q.smoothness_penalty,
            average: q.average,
            total: q.total,
        };
        put(out, qoe, "out")
    })
}

/// Wall-clock seconds from the first request to the end of the last idle.
///
/// # Safety
/// `session` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_session_wall_time(session: *const KairosSession, out: *mut f64) -> KairosStatus {
    guard(|| unsafe { put(out, deref(session, "session")?.0.wall_time(), "out") })
}

/// # Safety
/// `session` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kairos_session_chunk(
    session: *const KairosSession,
    index: usize,
    out: *mut KairosChunk,
) -> KairosStatus {
    guard(|| unsafe {
        let s = &deref(session, "session")?.0;
        let r = s
            .records
            .get(index)
            .ok_or_else(|| invalid(format!("chunk {index} of {}", s.records.len())))?;
        let chunk = KairosChunk {
            index: r.index,
            level: r.level,
            bitrate: r.bitrate,
            size: r.size,
            start: r.start,
            end: r.end,
            duration: r.duration,
            throughput: r.throughput,
            rebuffer: r.rebuffer,
            buffer_before: r.buffer_before,
            buffer_after: r.buffer_after,
            sleep: r.sleep,
            point: r.point.unwrap_or(f64::NAN),
            estimate: r.estimate.unwrap_or(f64::NAN),
        };
        put(out, chunk, "out")
    })
}
