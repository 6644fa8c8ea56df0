//! C ABI for `dpdme`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every function returns a [`DpdmeStatus`];
//! on failure, [`dpdme_last_error_message`] describes the error for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dpdme::accountant::{binomial_epsilon, gaussian_epsilon, BinomialSpec};
use dpdme::dme::{comm_cost_bits, privacy_of_run, theoretical_mse_bound, Aggregator, DmeConfig, Encoder};
use dpdme::quantize::wire::{Rational, HEADER_LEN};
use dpdme::sensitivity::SensitivityBounds;
use dpdme::Error;

/// Result code of every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpdmeStatus {
    Ok = 0,
    InvalidArgument = 1,
    InvalidConfig = 2,
    Wire = 3,
    Protocol = 4,
    Infeasible = 5,
    NullPointer = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Protocol configuration shared by clients and server.
pub struct DpdmeConfig {
    cfg: DmeConfig,
    encoder: Encoder,
}

/// Server-side accumulator for one round.
pub struct DpdmeAggregator {
    inner: Option<Aggregator>,
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DpdmeStatus, msg: impl Into<String>) -> DpdmeStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> DpdmeStatus {
    let status = match &e {
        Error::InvalidArgument(_) => DpdmeStatus::InvalidArgument,
        Error::InvalidConfig(_) => DpdmeStatus::InvalidConfig,
        Error::Wire(_) => DpdmeStatus::Wire,
        Error::Protocol(_) => DpdmeStatus::Protocol,
        Error::Infeasible(_) => DpdmeStatus::Infeasible,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> DpdmeStatus) -> DpdmeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == DpdmeStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(_) => fail(DpdmeStatus::Panic, "internal panic"),
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(
            if $p.is_null() {
                return fail(DpdmeStatus::NullPointer, concat!(stringify!($p), " is null"));
            }
        )+
    };
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return from_error(err.into()),
        }
    };
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dpdme_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dpdme_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a configuration; `p = p_num / p_den`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dpdme_config_new(
    n: usize,
    d: usize,
    clip_bound: f64,
    levels: u32,
    trials: u32,
    p_num: u32,
    p_den: u32,
    delta: f64,
    rotate: bool,
    seed: u64,
    out: *mut *mut DpdmeConfig,
) -> DpdmeStatus {
    guard(|| {
        non_null!(out);
        let p = try_status!(Rational::probability(p_num, p_den));
        let cfg = DmeConfig {
            n,
            d,
            clip_bound,
            levels,
            trials,
            p,
            delta,
            rotate,
            master_seed: seed,
        };
        let encoder = try_status!(Encoder::new(&cfg));
        *out = Box::into_raw(Box::new(DpdmeConfig { cfg, encoder }));
        DpdmeStatus::Ok
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from [`dpdme_config_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dpdme_config_free(cfg: *mut DpdmeConfig) {
    if !cfg.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(cfg))));
    }
}

/// Size in bytes of every client message under `cfg`.
///
/// # Safety
/// `cfg` must be a live handle and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn dpdme_message_len(cfg: *const DpdmeConfig, out_len: *mut usize) -> DpdmeStatus {
    guard(|| {
        non_null!(cfg, out_len);
        *out_len = HEADER_LEN + (*cfg).cfg.header().payload_bytes();
        DpdmeStatus::Ok
    })
}

/// Privacy of one run: epsilon (infinite when a condition fails) and the total delta.
///
/// # Safety
/// `cfg` must be a live handle and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn dpdme_config_privacy(
    cfg: *const DpdmeConfig,
    out_epsilon: *mut f64,
    out_delta_total: *mut f64,
) -> DpdmeStatus {
    guard(|| {
        non_null!(cfg, out_epsilon, out_delta_total);
        let r = try_status!(privacy_of_run(&(*cfg).cfg));
        *out_epsilon = r.report.epsilon;
        *out_delta_total = r.delta_total;
        DpdmeStatus::Ok
    })
}

/// Upper bound on the mean squared error and the total bits sent per run.
///
/// # Safety
/// `cfg` must be a live handle and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn dpdme_config_cost(
    cfg: *const DpdmeConfig,
    out_mse_bound: *mut f64,
    out_comm_bits: *mut u64,
) -> DpdmeStatus {
    guard(|| {
        non_null!(cfg, out_mse_bound, out_comm_bits);
        *out_mse_bound = theoretical_mse_bound(&(*cfg).cfg);
        *out_comm_bits = comm_cost_bits(&(*cfg).cfg);
        DpdmeStatus::Ok
    })
}

/// Encodes the `d` values at `x` for client `client_index` into `buf`.
/// On success `*out_written` holds the message length; if `buf_len` is too
/// small the call fails with `BufferTooSmall` and reports the needed length.
///
/// # Safety
/// `cfg` must be a live handle, `x` must point to `d` doubles, `buf` to
/// `buf_len` writable bytes and `out_written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpdme_client_encode(
    cfg: *const DpdmeConfig,
    x: *const f64,
    d: usize,
    client_index: u64,
    buf: *mut u8,
    buf_len: usize,
    out_written: *mut usize,
) -> DpdmeStatus {
    guard(|| {
        non_null!(cfg, x, buf, out_written);
        let cfg = &*cfg;
        if d != cfg.cfg.d {
            return fail(
                DpdmeStatus::InvalidArgument,
                format!("expected {} values, got {d}", cfg.cfg.d),
            );
        }
        let xs = std::slice::from_raw_parts(x, d);
        let msg = try_status!(cfg.encoder.encode(xs, client_index));
        *out_written = msg.bytes.len();
        if buf_len < msg.bytes.len() {
            return fail(
                DpdmeStatus::BufferTooSmall,
                format!("message needs {} bytes, buffer has {buf_len}", msg.bytes.len()),
            );
        }
        ptr::copy_nonoverlapping(msg.bytes.as_ptr(), buf, msg.bytes.len());
        DpdmeStatus::Ok
    })
}

/// Creates an aggregator expecting the `n` messages of one run.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpdme_aggregator_new(cfg: *const DpdmeConfig, out: *mut *mut DpdmeAggregator) -> DpdmeStatus {
    guard(|| {
        non_null!(cfg, out);
        let inner = try_status!(Aggregator::new(&(*cfg).cfg));
        *out = Box::into_raw(Box::new(DpdmeAggregator {
            inner: Some(inner),
            dim: (*cfg).cfg.d,
        }));
        DpdmeStatus::Ok
    })
}

/// Adds one client message.
///
/// # Safety
/// `agg` must be a live handle and `bytes` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn dpdme_aggregator_push(agg: *mut DpdmeAggregator, bytes: *const u8, len: usize) -> DpdmeStatus {
    guard(|| {
        non_null!(agg, bytes);
        let Some(inner) = (*agg).inner.as_mut() else {
            return fail(DpdmeStatus::Protocol, "aggregator already finished");
        };
        try_status!(inner.push(std::slice::from_raw_parts(bytes, len)));
        DpdmeStatus::Ok
    })
}

/// Writes the `d`-dimensional mean estimate to `out`. The aggregator
/// accepts no further messages afterwards but must still be freed.
///
/// # Safety
/// `agg` must be a live handle and `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dpdme_aggregator_finish(
    agg: *mut DpdmeAggregator,
    out: *mut f64,
    out_len: usize,
) -> DpdmeStatus {
    guard(|| {
        non_null!(agg, out);
        let agg = &mut *agg;
        if out_len < agg.dim {
            return fail(
                DpdmeStatus::BufferTooSmall,
                format!("estimate needs {} doubles, buffer has {out_len}", agg.dim),
            );
        }
        let Some(inner) = agg.inner.take() else {
            return fail(DpdmeStatus::Protocol, "aggregator already finished");
        };
        let result = try_status!(inner.finish());
        ptr::copy_nonoverlapping(result.estimate.as_ptr(), out, result.estimate.len());
        DpdmeStatus::Ok
    })
}

/// Releases an aggregator. Null is ignored.
///
/// # Safety
/// `agg` must come from [`dpdme_aggregator_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dpdme_aggregator_free(agg: *mut DpdmeAggregator) {
    if !agg.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(agg))));
    }
}

/// Epsilon of the Gaussian mechanism; `*out_precondition_ok` is false when
/// `sigma` is below the level at which the bound is proven.
///
/// # Safety
/// The outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpdme_gaussian_epsilon(
    delta_2: f64,
    sigma: f64,
    delta: f64,
    out_epsilon: *mut f64,
    out_precondition_ok: *mut bool,
) -> DpdmeStatus {
    guard(|| {
        non_null!(out_epsilon, out_precondition_ok);
        let g = try_status!(gaussian_epsilon(delta_2, sigma, delta));
        *out_epsilon = g.epsilon;
        *out_precondition_ok = g.precondition_ok;
        DpdmeStatus::Ok
    })
}

/// Epsilon of the Binomial mechanism with `trials` draws of probability `p`
/// at scale `s`; infinite when a condition fails.
///
/// # Safety
/// The outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpdme_binomial_epsilon(
    trials: u64,
    p: f64,
    s: f64,
    d: usize,
    delta: f64,
    delta_1: f64,
    delta_2: f64,
    delta_inf: f64,
    out_epsilon: *mut f64,
    out_conditions_ok: *mut bool,
) -> DpdmeStatus {
    guard(|| {
        non_null!(out_epsilon, out_conditions_ok);
        let spec = try_status!(BinomialSpec::new(trials, p, s));
        let bounds = SensitivityBounds {
            delta_1,
            delta_2,
            delta_inf,
            holds_with_delta: 0.0,
        };
        let r = try_status!(binomial_epsilon(&spec, &bounds, d, delta));
        *out_epsilon = r.epsilon;
        *out_conditions_ok = r.conditions_ok;
        DpdmeStatus::Ok
    })
}
