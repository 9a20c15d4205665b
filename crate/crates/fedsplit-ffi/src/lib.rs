//! C ABI over the `fedsplit` simulator.
//!
//! Every fallible call returns an [`FsStatus`] code; `FS_OK` is zero. The
//! message of the most recent failure on the calling thread is available
//! through [`fs_last_error`]. Handles are opaque and must be released with
//! their matching `*_free` function. Passing a null handle to a `*_free`
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedsplit::orchestrator::{self, FLConfig, RunOptions, RunOutput, Setup};
use fedsplit::quantizer::{self, codec, QuantizerState};
use fedsplit::Error;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsStatus {
    FsOk = 0,
    /// A required pointer argument was null.
    FsErrNull = 1,
    /// A string argument was not valid UTF-8.
    FsErrUtf8 = 2,
    /// A configuration or argument was rejected before running.
    FsErrInvalid = 3,
    /// A protocol invariant was violated while running.
    FsErrInvariant = 4,
    /// A caller-provided buffer is too small.
    FsErrBuffer = 5,
    /// Malformed wire message.
    FsErrCodec = 6,
    /// A Rust panic was caught at the boundary.
    FsErrPanic = 7,
}

/// A validated configuration.
pub struct FsSetup {
    setup: Setup,
}

/// The result of one training run.
pub struct FsRun {
    out: RunOutput,
}

/// A fixed-interval stochastic quantizer.
pub struct FsQuantizer {
    state: QuantizerState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> FsStatus {
    match err {
        Error::Codec(_) => FsStatus::FsErrCodec,
        e if e.is_validation() => FsStatus::FsErrInvalid,
        _ => FsStatus::FsErrInvariant,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FsStatus, String)>) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsStatus::FsOk,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside fedsplit".into());
            FsStatus::FsErrPanic
        }
    }
}

fn fail(err: Error) -> (FsStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (FsStatus, String) {
    (FsStatus::FsErrNull, format!("`{what}` is null"))
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses and validates a JSON configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_setup_from_json(json: *const c_char, out: *mut *mut FsSetup) -> FsStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (FsStatus::FsErrUtf8, e.to_string()))?;
        let setup = FLConfig::from_json(text).and_then(|c| c.resolve()).map_err(fail)?;
        *out = Box::into_raw(Box::new(FsSetup { setup }));
        Ok(())
    })
}

/// # Safety
/// `setup` must be null or a handle from [`fs_setup_from_json`].
#[no_mangle]
pub unsafe extern "C" fn fs_setup_free(setup: *mut FsSetup) {
    if !setup.is_null() {
        drop(Box::from_raw(setup));
    }
}

/// Model dimension `d`, or 0 for a null handle.
///
/// # Safety
/// `setup` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_setup_dim(setup: *const FsSetup) -> usize {
    setup.as_ref().map_or(0, |s| s.setup.problem.dim())
}

/// Writes `w*` into `buf`, which must hold `len >= d` doubles.
///
/// # Safety
/// `setup` must be a live handle and `buf` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_setup_optimum(setup: *const FsSetup, buf: *mut f64, len: usize) -> FsStatus {
    guard(|| {
        let s = setup.as_ref().ok_or_else(|| null("setup"))?;
        copy_out(s.setup.constants.w_star.as_slice(), buf, len)
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), (FsStatus, String)> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < src.len() {
        return Err((FsStatus::FsErrBuffer, format!("buffer holds {len} values, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Trains with the configured mode under `seed`.
///
/// # Safety
/// `setup` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_run(setup: *const FsSetup, seed: u64, out: *mut *mut FsRun) -> FsStatus {
    guard(|| {
        let s = setup.as_ref().ok_or_else(|| null("setup"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut st = s.setup.clone();
        st.config.seed = seed;
        let run = orchestrator::run(&st, &RunOptions::default()).map_err(fail)?;
        *out = Box::into_raw(Box::new(FsRun { out: run }));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle from [`fs_run`].
#[no_mangle]
pub unsafe extern "C" fn fs_run_free(run: *mut FsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of learning rounds recorded, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_run_rounds(run: *const FsRun) -> usize {
    run.as_ref().map_or(0, |r| r.out.metrics.len())
}

/// Total uploads across all rounds.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_run_uploads(run: *const FsRun) -> u64 {
    run.as_ref().map_or(0, |r| orchestrator::comm_counter(&r.out.metrics))
}

/// Optimality gap after learning round `t` (1-based).
///
/// # Safety
/// `run` must be a live handle and `gap` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_run_gap(run: *const FsRun, t: usize, gap: *mut f64) -> FsStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        if gap.is_null() {
            return Err(null("gap"));
        }
        let row = t
            .checked_sub(1)
            .and_then(|i| r.out.metrics.get(i))
            .ok_or_else(|| (FsStatus::FsErrInvalid, format!("round {t} outside 1..={}", r.out.metrics.len())))?;
        *gap = row.gap;
        Ok(())
    })
}

/// Writes the final global model into `buf`.
///
/// # Safety
/// `run` must be a live handle and `buf` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_run_final_model(run: *const FsRun, buf: *mut f64, len: usize) -> FsStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        copy_out(r.out.final_model.as_slice(), buf, len)
    })
}

/// Quantizer with interval `[lo, hi]` on each of `dim` coordinates and
/// `levels` knobs.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_quantizer_new(
    dim: usize,
    lo: f64,
    hi: f64,
    levels: usize,
    out: *mut *mut FsQuantizer,
) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 || levels > (1usize << 32) {
            return Err((FsStatus::FsErrInvalid, "dim must be positive and levels at most 2^32".into()));
        }
        let state = QuantizerState::uniform(dim, lo, hi, levels).map_err(fail)?;
        *out = Box::into_raw(Box::new(FsQuantizer { state }));
        Ok(())
    })
}

/// # Safety
/// `q` must be null or a handle from [`fs_quantizer_new`].
#[no_mangle]
pub unsafe extern "C" fn fs_quantizer_free(q: *mut FsQuantizer) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Bytes needed by [`fs_quantize_encode`] for this quantizer.
///
/// # Safety
/// `q` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_quantizer_message_len(q: *const FsQuantizer) -> usize {
    q.as_ref()
        .map_or(0, |q| codec::HEADER_LEN + codec::payload_len(q.state.bits, q.state.dim()))
}

/// Quantizes `w` with randomness from `seed` and writes the wire message.
/// `written` receives the message length.
///
/// # Safety
/// `q` must be a live handle, `w` point to `dim` doubles, `buf` to `cap`
/// writable bytes and `written` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_quantize_encode(
    q: *const FsQuantizer,
    w: *const f64,
    dim: usize,
    seed: u64,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> FsStatus {
    guard(|| {
        let q = q.as_ref().ok_or_else(|| null("q"))?;
        if w.is_null() || buf.is_null() || written.is_null() {
            return Err(null("w, buf or written"));
        }
        if dim != q.state.dim() {
            return Err((FsStatus::FsErrInvalid, format!("vector has {dim} coordinates, quantizer {}", q.state.dim())));
        }
        let v = DVector::from_column_slice(std::slice::from_raw_parts(w, dim));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qv = quantizer::quantize(&v, &q.state, &mut rng).map_err(fail)?;
        let bytes = codec::encode(&qv).map_err(|e| fail(e.into()))?;
        if cap < bytes.len() {
            return Err((FsStatus::FsErrBuffer, format!("buffer holds {cap} bytes, need {}", bytes.len())));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        *written = bytes.len();
        Ok(())
    })
}

/// Decodes a wire message into knob values.
///
/// # Safety
/// `q` must be a live handle, `msg` point to `len` bytes and `values` to
/// `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_decode(
    q: *const FsQuantizer,
    msg: *const u8,
    len: usize,
    values: *mut f64,
    dim: usize,
) -> FsStatus {
    guard(|| {
        let q = q.as_ref().ok_or_else(|| null("q"))?;
        if msg.is_null() {
            return Err(null("msg"));
        }
        let qv = codec::decode(std::slice::from_raw_parts(msg, len), &q.state).map_err(|e| fail(e.into()))?;
        copy_out(qv.values().as_slice(), values, dim)
    })
}
