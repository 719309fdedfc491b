//! C interface to `pcpg`: edit distance, rewards and returns, windowed
//! policy-gradient losses, and decoding with a saved model.
//!
//! Every function returns a [`PcpgStatus`]. On failure the message is
//! available from [`pcpg_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use pcpg::checkpoint::Checkpoint;
use pcpg::grad::Tensor;
use pcpg::metrics;
use pcpg::model::{BeamConfig, Hypothesis, Seq2Seq};
use pcpg::pcpg::{self as loss, Padding};
use pcpg::reward::{self, DiscountMode};
use pcpg::Error;

pub const PCPG_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcpgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Format = 4,
    Io = 5,
    NonFinite = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcpgPadding {
    Zero = 0,
    Truncate = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcpgDiscount {
    FromEnd = 0,
    Conventional = 1,
}

/// Opaque window kernel.
pub struct PcpgKernel(loss::PcpgKernel);

/// Opaque trained model.
pub struct PcpgModel(Seq2Seq);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(PcpgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Format(_) => PcpgStatus::Format,
            Error::Io { .. } => PcpgStatus::Io,
            Error::NonFinite { .. } => PcpgStatus::NonFinite,
            _ => PcpgStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(PcpgStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PcpgStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcpgStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PcpgStatus::Panic
        }
    }
}

/// Reads `len` items; a null pointer is allowed only for `len == 0`.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(PcpgStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(PcpgStatus::NullPointer, format!("{what} is null")))
}

unsafe fn output_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail(PcpgStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn padding(p: PcpgPadding) -> Padding {
    match p {
        PcpgPadding::Zero => Padding::Zero,
        PcpgPadding::Truncate => Padding::Truncate,
    }
}

#[no_mangle]
pub extern "C" fn pcpg_abi_version() -> u32 {
    PCPG_ABI_VERSION
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pcpg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Levenshtein distance between two token arrays.
///
/// # Safety
/// `a` and `b` point to `a_len` and `b_len` readable values (or are null
/// with length 0); `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn pcpg_edit_distance(
    a: *const u32,
    a_len: usize,
    b: *const u32,
    b_len: usize,
    out: *mut usize,
) -> PcpgStatus {
    guard(|| {
        let a = input(a, a_len, "a")?;
        let b = input(b, b_len, "b")?;
        *output(out, "out")? = metrics::edit_distance(a, b);
        Ok(())
    })
}

/// Character error rate of `hyp` against a non-empty `reference`.
///
/// # Safety
/// As for [`pcpg_edit_distance`].
#[no_mangle]
pub unsafe extern "C" fn pcpg_cer(
    hyp: *const u32,
    hyp_len: usize,
    reference: *const u32,
    ref_len: usize,
    out: *mut f64,
) -> PcpgStatus {
    guard(|| {
        let h = input(hyp, hyp_len, "hyp")?;
        let r = input(reference, ref_len, "reference")?;
        *output(out, "out")? = metrics::cer_tokens(h, r)?;
        Ok(())
    })
}

/// Per-step rewards of a prediction. The prediction is cut after its first
/// `EOS`, so `*written <= pred_len` values are stored in `out`.
///
/// # Safety
/// `pred` and `reference` are readable for their lengths; `out` is
/// writable for `pred_len` values; `written` is writable.
#[no_mangle]
pub unsafe extern "C" fn pcpg_immediate_rewards(
    pred: *const u32,
    pred_len: usize,
    reference: *const u32,
    ref_len: usize,
    out: *mut f64,
    written: *mut usize,
) -> PcpgStatus {
    guard(|| {
        let p = input(pred, pred_len, "pred")?;
        let r = input(reference, ref_len, "reference")?;
        let rewards = reward::immediate_rewards(p, r)?;
        output_slice(out, pred_len, "out")?[..rewards.len()].copy_from_slice(&rewards);
        *output(written, "written")? = rewards.len();
        Ok(())
    })
}

/// Discounted returns of `len` immediate rewards, written to `out`.
///
/// # Safety
/// `immediate` is readable and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pcpg_discounted_returns(
    immediate: *const f64,
    len: usize,
    gamma: f64,
    mode: PcpgDiscount,
    out: *mut f64,
) -> PcpgStatus {
    guard(|| {
        let r = input(immediate, len, "immediate")?;
        let mode = match mode {
            PcpgDiscount::FromEnd => DiscountMode::FromEnd,
            PcpgDiscount::Conventional => DiscountMode::Conventional,
        };
        let returns = reward::discounted_returns(r, gamma, mode)?;
        output_slice(out, len, "out")?.copy_from_slice(&returns);
        Ok(())
    })
}

/// Creates a kernel of `size` taps and `stride`. `weights` may be null for
/// uniform weights; otherwise it holds `size` positive values, which are
/// normalized to sum to 1.
///
/// # Safety
/// `weights` is null or readable for `size` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn pcpg_kernel_new(
    size: usize,
    stride: usize,
    weights: *const f64,
    out: *mut *mut PcpgKernel,
) -> PcpgStatus {
    guard(|| {
        let slot = output(out, "out")?;
        *slot = ptr::null_mut();
        let k = if weights.is_null() {
            loss::PcpgKernel::uniform(size, stride)?
        } else {
            loss::PcpgKernel::new(size, stride, input(weights, size, "weights")?.to_vec())?
        };
        *slot = Box::into_raw(Box::new(PcpgKernel(k)));
        Ok(())
    })
}

/// # Safety
/// `kernel` is null or came from [`pcpg_kernel_new`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn pcpg_kernel_free(kernel: *mut PcpgKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Normalized weights, `size` values.
///
/// # Safety
/// `kernel` is a live handle; `out` is writable for the kernel size.
#[no_mangle]
pub unsafe extern "C" fn pcpg_kernel_weights(kernel: *const PcpgKernel, out: *mut f64) -> PcpgStatus {
    guard(|| {
        let k = &input(kernel, 1, "kernel")?[0].0;
        output_slice(out, k.size(), "out")?.copy_from_slice(k.weights());
        Ok(())
    })
}

/// Windowed policy-gradient loss of one episode: the windows slide over the
/// per-step losses `-returns[u] * log_probs[u]` and their outputs are summed.
///
/// # Safety
/// `kernel` is a live handle; `returns` and `log_probs` are readable for
/// `len` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn pcpg_kernel_loss(
    kernel: *const PcpgKernel,
    returns: *const f64,
    log_probs: *const f64,
    len: usize,
    pad: PcpgPadding,
    out: *mut f64,
) -> PcpgStatus {
    guard(|| {
        let k = &input(kernel, 1, "kernel")?[0].0;
        let r = input(returns, len, "returns")?;
        let lp = input(log_probs, len, "log_probs")?;
        *output(out, "out")? = loss::pcpg_loss(r, lp, k, padding(pad))?;
        Ok(())
    })
}

/// Weight with which each of `len` per-step losses enters the loss.
///
/// # Safety
/// `kernel` is a live handle; `out` is writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pcpg_kernel_coefficients(
    kernel: *const PcpgKernel,
    len: usize,
    pad: PcpgPadding,
    out: *mut f64,
) -> PcpgStatus {
    guard(|| {
        let k = &input(kernel, 1, "kernel")?[0].0;
        let c = loss::coefficient_map(k, len, padding(pad));
        output_slice(out, len, "out")?.copy_from_slice(&c);
        Ok(())
    })
}

/// Loads a checkpoint written by `pcpg train`.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn pcpg_model_load(path: *const c_char, out: *mut *mut PcpgModel) -> PcpgStatus {
    guard(|| {
        let slot = output(out, "out")?;
        *slot = ptr::null_mut();
        if path.is_null() {
            return Err(Fail(PcpgStatus::NullPointer, "path is null".into()));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let model = Seq2Seq::from_checkpoint(&Checkpoint::load(Path::new(path))?)?;
        *slot = Box::into_raw(Box::new(PcpgModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` is null or came from [`pcpg_model_load`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn pcpg_model_free(model: *mut PcpgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Frame width `F` the model expects.
///
/// # Safety
/// `model` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn pcpg_model_feature_dim(model: *const PcpgModel, out: *mut usize) -> PcpgStatus {
    guard(|| {
        let m = &input(model, 1, "model")?[0].0;
        *output(out, "out")? = m.config().feature_dim;
        Ok(())
    })
}

unsafe fn decode(
    model: *const PcpgModel,
    frames: *const f64,
    steps: usize,
    width: usize,
    f: impl FnOnce(&Seq2Seq, &Tensor) -> pcpg::Result<Hypothesis>,
    tokens: *mut u32,
    capacity: usize,
    len: *mut usize,
    log_prob: *mut f64,
) -> PcpgStatus {
    guard(|| {
        let m = &input(model, 1, "model")?[0].0;
        if steps == 0 || width != m.config().feature_dim {
            return Err(invalid(format!(
                "frames must be T x {} with T >= 1, got {steps} x {width}",
                m.config().feature_dim
            )));
        }
        let data = input(frames, steps * width, "frames")?.to_vec();
        let hyp = f(m, &Tensor::new(&[steps, width], data)?)?;
        *output(len, "len")? = hyp.tokens.len();
        if !log_prob.is_null() {
            *log_prob = hyp.log_prob;
        }
        if hyp.tokens.len() > capacity {
            return Err(Fail(
                PcpgStatus::BufferTooSmall,
                format!("{} tokens do not fit in {capacity}", hyp.tokens.len()),
            ));
        }
        output_slice(tokens, hyp.tokens.len(), "tokens")?.copy_from_slice(&hyp.tokens);
        Ok(())
    })
}

/// Greedy decode of a `steps x width` row-major frame matrix. Writes the
/// tokens (ending in `EOS` unless `max_len` was hit) and their count. When
/// `capacity` is too small, `*len` holds the needed size and
/// `PcpgStatus::BufferTooSmall` is returned. `log_prob` may be null.
///
/// # Safety
/// `model` is a live handle; `frames` is readable for `steps * width`
/// values; `tokens` is writable for `capacity` values; `len` is writable.
#[no_mangle]
pub unsafe extern "C" fn pcpg_model_greedy(
    model: *const PcpgModel,
    frames: *const f64,
    steps: usize,
    width: usize,
    max_len: usize,
    tokens: *mut u32,
    capacity: usize,
    len: *mut usize,
    log_prob: *mut f64,
) -> PcpgStatus {
    let f = |m: &Seq2Seq, x: &Tensor| m.greedy_decode(x, max_len);
    decode(model, frames, steps, width, f, tokens, capacity, len, log_prob)
}

/// Length-normalized beam search; otherwise as [`pcpg_model_greedy`].
///
/// # Safety
/// As for [`pcpg_model_greedy`].
#[no_mangle]
pub unsafe extern "C" fn pcpg_model_beam(
    model: *const PcpgModel,
    frames: *const f64,
    steps: usize,
    width: usize,
    beam_width: usize,
    max_len: usize,
    tokens: *mut u32,
    capacity: usize,
    len: *mut usize,
    log_prob: *mut f64,
) -> PcpgStatus {
    let cfg = BeamConfig {
        width: beam_width,
        max_len,
        ..Default::default()
    };
    let f = |m: &Seq2Seq, x: &Tensor| m.beam_search(x, &cfg);
    decode(model, frames, steps, width, f, tokens, capacity, len, log_prob)
}
