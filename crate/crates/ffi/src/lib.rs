//! C ABI over the payload calculator and the label-leakage estimator.
//!
//! Every fallible call returns an [`FbftlStatus`]; on failure the message is
//! available from [`fbftl_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fbftl_core::model::ArchitectureSpec;
use fbftl_core::payload::{downlink_total, format_bits, uplink_total, FedAvgBatches, Method, PayloadInputs};
use fbftl_core::privacy::{
    expected_leakage_curve, posterior_identity_check, prior_entropy, CurveConfig, LabelDistribution, LeakageCurve,
    DEFAULT_TYPE_CAP,
};
use fbftl_core::Error;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbftlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    /// A result does not fit the output type.
    Overflow = 5,
    BufferTooSmall = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbftlMethod {
    Fl = 0,
    FtlFull = 1,
    FtlHead = 2,
    Fbftl = 3,
}

impl From<FbftlMethod> for Method {
    fn from(m: FbftlMethod) -> Self {
        match m {
            FbftlMethod::Fl => Method::Fl,
            FbftlMethod::FtlFull => Method::FtlFull,
            FbftlMethod::FtlHead => Method::FtlHead,
            FbftlMethod::Fbftl => Method::Fbftl,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FbftlParamCounts {
    pub full: u64,
    pub head: u64,
    pub extractor: u64,
    pub cut_input: u64,
    pub cut_output: u64,
}

/// Calculator inputs; parameter counts come from the architecture handle.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FbftlPayloadInputs {
    /// 0 uses the architecture's own bit width.
    pub bit_width: u64,
    pub clients_per_round: u64,
    pub fl_batches: u64,
    pub ftl_full_batches: u64,
    pub ftl_head_batches: u64,
    pub total_samples: u64,
    pub sample_count_bits: u64,
    pub label_bits: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FbftlLeakagePoint {
    pub clients: u64,
    pub mean_bits: f64,
    pub stderr_bits: f64,
}

/// Parsed architecture.
pub struct FbftlArchitecture(ArchitectureSpec);

/// Expected leakage at several client counts.
pub struct FbftlLeakageCurve(LeakageCurve);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: FbftlStatus, msg: impl Into<String>) -> FbftlStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> FbftlStatus {
    match e {
        Error::InvalidInput(_) | Error::CapExceeded { .. } | Error::EmptyDataset => FbftlStatus::InvalidArgument,
        Error::Config(_) | Error::Csv { .. } => FbftlStatus::Config,
        Error::NumericFault(_) | Error::Diverged { .. } => FbftlStatus::Numeric,
        Error::Io { .. } => FbftlStatus::Io,
    }
}

/// Runs `f` with panics and core errors turned into status codes.
fn guard(f: impl FnOnce() -> Result<(), FbftlStatus>) -> FbftlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FbftlStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(FbftlStatus::Panic, "internal panic"),
    }
}

fn core<T>(r: fbftl_core::Result<T>) -> Result<T, FbftlStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, FbftlStatus> {
    p.as_ref()
        .ok_or_else(|| fail(FbftlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, FbftlStatus> {
    p.as_mut()
        .ok_or_else(|| fail(FbftlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, FbftlStatus> {
    if p.is_null() {
        return Err(fail(FbftlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FbftlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], FbftlStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FbftlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fbftl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Parses an architecture from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbftl_architecture_from_toml(
    toml: *const c_char,
    out_arch: *mut *mut FbftlArchitecture,
) -> FbftlStatus {
    guard(|| {
        let slot = out(out_arch, "out_arch")?;
        let spec = core(ArchitectureSpec::from_toml_str(text(toml, "toml")?))?;
        *slot = Box::into_raw(Box::new(FbftlArchitecture(spec)));
        Ok(())
    })
}

/// Loads an architecture TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbftl_architecture_load(
    path: *const c_char,
    out_arch: *mut *mut FbftlArchitecture,
) -> FbftlStatus {
    guard(|| {
        let slot = out(out_arch, "out_arch")?;
        let spec = core(ArchitectureSpec::load(Path::new(text(path, "path")?)))?;
        *slot = Box::into_raw(Box::new(FbftlArchitecture(spec)));
        Ok(())
    })
}

/// # Safety
/// `arch` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fbftl_architecture_free(arch: *mut FbftlArchitecture) {
    if !arch.is_null() {
        drop(Box::from_raw(arch));
    }
}

/// # Safety
/// `arch` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fbftl_architecture_counts(
    arch: *const FbftlArchitecture,
    out_counts: *mut FbftlParamCounts,
) -> FbftlStatus {
    guard(|| {
        let c = deref(arch, "arch")?.0.counts();
        *out(out_counts, "out_counts")? = FbftlParamCounts {
            full: c.full,
            head: c.head,
            extractor: c.extractor,
            cut_input: c.cut_input,
            cut_output: c.cut_output,
        };
        Ok(())
    })
}

/// Total uplink and downlink bits of `method` over a whole training run.
/// Fails with `Overflow` when a total exceeds 2^64 - 1.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbftl_payload_totals(
    arch: *const FbftlArchitecture,
    inputs: *const FbftlPayloadInputs,
    method: FbftlMethod,
    out_uplink_bits: *mut u64,
    out_downlink_bits: *mut u64,
) -> FbftlStatus {
    guard(|| {
        let spec = &deref(arch, "arch")?.0;
        let i = deref(inputs, "inputs")?;
        let up_slot = out(out_uplink_bits, "out_uplink_bits")?;
        let down_slot = out(out_downlink_bits, "out_downlink_bits")?;
        let bit_width = if i.bit_width == 0 { spec.bit_width } else { i.bit_width };
        let batches = FedAvgBatches {
            fl: i.fl_batches,
            ftl_f: i.ftl_full_batches,
            ftl_c: i.ftl_head_batches,
        };
        let mut p = core(PayloadInputs::new(
            bit_width,
            i.clients_per_round,
            batches,
            i.total_samples,
            spec.counts(),
        ))?;
        p.sample_count_bits = i.sample_count_bits;
        p.label_bits = i.label_bits;
        let m = Method::from(method);
        let narrow = |v: u128| {
            u64::try_from(v).map_err(|_| fail(FbftlStatus::Overflow, format!("{v} bits exceed 64-bit output")))
        };
        *up_slot = narrow(uplink_total(m, &p))?;
        *down_slot = narrow(downlink_total(m, &p))?;
        Ok(())
    })
}

/// Writes a bit count with a one-decimal b/Kb/Mb/Gb/Tb unit as a
/// NUL-terminated string into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fbftl_format_bits(bits: u64, buf: *mut c_char, len: usize) -> FbftlStatus {
    guard(|| {
        if buf.is_null() {
            return Err(fail(FbftlStatus::NullPointer, "buf is null"));
        }
        let s = format_bits(u128::from(bits));
        if s.len() + 1 > len {
            return Err(fail(
                FbftlStatus::BufferTooSmall,
                format!("need {} bytes, got {len}", s.len() + 1),
            ));
        }
        std::ptr::copy_nonoverlapping(s.as_ptr().cast::<c_char>(), buf, s.len());
        *buf.add(s.len()) = 0;
        Ok(())
    })
}

unsafe fn labels(probs: *const f64, classes: usize) -> Result<LabelDistribution, FbftlStatus> {
    if probs.is_null() {
        core(LabelDistribution::uniform(classes))
    } else {
        core(LabelDistribution::new(slice(probs, classes, "probs")?.to_vec()))
    }
}

/// Prior entropy in bits of a `batch`-sample type under the label
/// distribution `probs` (length `classes`, null for uniform). Exact when
/// the types can be enumerated, otherwise a seeded Monte Carlo estimate;
/// `out_exact` (nullable) reports which.
///
/// # Safety
/// `probs`, when non-null, must point to `classes` doubles; `out_bits` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn fbftl_prior_entropy(
    probs: *const f64,
    classes: usize,
    batch: u64,
    seed: u64,
    out_bits: *mut f64,
    out_exact: *mut bool,
) -> FbftlStatus {
    guard(|| {
        let slot = out(out_bits, "out_bits")?;
        let y = labels(probs, classes)?;
        let p = core(prior_entropy(&y, batch, DEFAULT_TYPE_CAP, 100_000, seed))?;
        *slot = p.bits;
        if let Some(e) = out_exact.as_mut() {
            *e = p.exact;
        }
        Ok(())
    })
}

/// Monte Carlo expected leakage for every entry of `clients`.
///
/// # Safety
/// `probs` as for [`fbftl_prior_entropy`]; `clients` must point to
/// `n_clients` values; `out_curve` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbftl_leakage_curve_new(
    probs: *const f64,
    classes: usize,
    batch: u64,
    clients: *const u64,
    n_clients: usize,
    repetitions: usize,
    seed: u64,
    out_curve: *mut *mut FbftlLeakageCurve,
) -> FbftlStatus {
    guard(|| {
        let slot = out(out_curve, "out_curve")?;
        let y = labels(probs, classes)?;
        let cfg = CurveConfig {
            batch,
            clients: slice(clients, n_clients, "clients")?.to_vec(),
            repetitions,
            seed,
            cap: DEFAULT_TYPE_CAP,
            prior_samples: 100_000,
        };
        let curve = core(expected_leakage_curve(&y, &cfg))?;
        *slot = Box::into_raw(Box::new(FbftlLeakageCurve(curve)));
        Ok(())
    })
}

/// # Safety
/// `curve` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fbftl_leakage_curve_free(curve: *mut FbftlLeakageCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Number of points; 0 for a null handle.
///
/// # Safety
/// `curve` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn fbftl_leakage_curve_len(curve: *const FbftlLeakageCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.0.points.len())
}

/// # Safety
/// `curve` and `out_bits` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbftl_leakage_curve_prior_bits(
    curve: *const FbftlLeakageCurve,
    out_bits: *mut f64,
) -> FbftlStatus {
    guard(|| {
        *out(out_bits, "out_bits")? = deref(curve, "curve")?.0.prior.bits;
        Ok(())
    })
}

/// # Safety
/// `curve` and `out_point` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbftl_leakage_curve_point(
    curve: *const FbftlLeakageCurve,
    index: usize,
    out_point: *mut FbftlLeakagePoint,
) -> FbftlStatus {
    guard(|| {
        let c = &deref(curve, "curve")?.0;
        let slot = out(out_point, "out_point")?;
        let p = c.points.get(index).ok_or_else(|| {
            fail(
                FbftlStatus::InvalidArgument,
                format!("index {index} out of range for {} points", c.points.len()),
            )
        })?;
        *slot = FbftlLeakagePoint {
            clients: p.clients,
            mean_bits: p.mean_bits,
            stderr_bits: p.stderr_bits,
        };
        Ok(())
    })
}

/// Exhaustively checks that the posterior of each client's type given the
/// shuffled multiset equals its empirical frequency. `out_mismatches`
/// receives the number of (observation, type) pairs that disagree.
///
/// # Safety
/// `out_mismatches` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbftl_posterior_identity_check(
    classes: usize,
    batch: u64,
    clients: u32,
    out_mismatches: *mut u64,
) -> FbftlStatus {
    guard(|| {
        let slot = out(out_mismatches, "out_mismatches")?;
        *slot = core(posterior_identity_check(classes, batch, clients))?.mismatches as u64;
        Ok(())
    })
}
