//! C ABI over `permexp`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `_free`. Every entry point returns a
//! [`PermexpStatus`]; on failure [`permexp_last_error`] describes what went
//! wrong on the calling thread. Indices and permutation images are
//! 0-based. Panics never unwind into C.
//!
//! # Safety
//!
//! The contract is the same for every function. Pointer arguments are
//! either null (reported as `NullPointer` where a value is required) or
//! valid for the stated length. Handles come from this library and are
//! freed exactly once.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use permexp::limiting::{limiting_log_partition, limiting_z_vector, sandwich_from, sigma_and_a, sinkhorn_density};
use permexp::model::GridTable;
use permexp::sampler::replication_rng;
use permexp::{
    center_components, confidence_interval, exact_log_partition, sample, solve_ple, sufficient_statistic, Component,
    PermexpError, Permutation, SamplerConfig, SamplerMethod, SinkhornOptions, SolveOptions, StatisticSpec,
    ThetaVector,
};

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PermexpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PermexpSampler {
    Gibbs = 0,
    HitAndRun = 1,
    Uniform = 2,
}

/// Statistic `f = (f_1, …, f_L)`.
pub struct PermexpSpec(StatisticSpec);

pub struct PermexpPermutation(Permutation);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PermexpSolveInfo {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PermexpInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub half_width: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Failure(PermexpStatus, String);

impl From<PermexpError> for Failure {
    fn from(e: PermexpError) -> Self {
        let status = if e.is_numerical() {
            PermexpStatus::Numerical
        } else if matches!(e, PermexpError::Io(_)) {
            PermexpStatus::Io
        } else {
            PermexpStatus::InvalidArgument
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PermexpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PermexpStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PermexpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            PermexpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PermexpStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn theta_of(spec: &StatisticSpec, theta: *const f64, len: usize) -> Result<ThetaVector, Failure> {
    let t = ThetaVector::new(slice(theta, len, "theta")?.to_vec())?;
    t.check_dimension(spec)?;
    Ok(t)
}

fn need(out_len: usize, required: usize) -> Result<(), Failure> {
    if out_len < required {
        return Err(Failure(
            PermexpStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, {required} needed"),
        ));
    }
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator. `buf` may be null to query the length.
#[no_mangle]
pub unsafe extern "C" fn permexp_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn permexp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a statistic from comma-separated builtin names, e.g. `"xy,neg_abs_diff"`.
#[no_mangle]
pub unsafe extern "C" fn permexp_spec_from_names(names: *const c_char, out: *mut *mut PermexpSpec) -> PermexpStatus {
    guard(|| {
        if names.is_null() {
            return Err(null("names"));
        }
        let names = CStr::from_ptr(names).to_str().map_err(|_| invalid("names is not UTF-8"))?;
        put(out, PermexpSpec(StatisticSpec::from_names(names)?))
    })
}

/// One-component statistic from an `m x m` table, row-major in `x`,
/// evaluated by bilinear interpolation.
#[no_mangle]
pub unsafe extern "C" fn permexp_spec_from_table(
    m: usize,
    values: *const f64,
    out: *mut *mut PermexpSpec,
) -> PermexpStatus {
    guard(|| {
        let len = m.checked_mul(m).ok_or_else(|| invalid("table size overflows"))?;
        let table = GridTable::new(m, slice(values, len, "values")?.to_vec())?;
        let spec = StatisticSpec::new(vec![Component::Table(Arc::new(table))])?;
        put(out, PermexpSpec(spec))
    })
}

/// New handle holding the doubly-centered version of `spec`.
#[no_mangle]
pub unsafe extern "C" fn permexp_spec_centered(spec: *const PermexpSpec, out: *mut *mut PermexpSpec) -> PermexpStatus {
    guard(|| {
        let spec = as_ref(spec, "spec")?;
        put(out, PermexpSpec(center_components(&spec.0)))
    })
}

/// Number of components `L`, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn permexp_spec_dimension(spec: *const PermexpSpec) -> usize {
    spec.as_ref().map_or(0, |s| s.0.dimension())
}

#[no_mangle]
pub unsafe extern "C" fn permexp_spec_free(spec: *mut PermexpSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Permutation from 0-based images.
#[no_mangle]
pub unsafe extern "C" fn permexp_permutation_new(
    images: *const usize,
    n: usize,
    out: *mut *mut PermexpPermutation,
) -> PermexpStatus {
    guard(|| {
        let pi = Permutation::from_zero_indexed(slice(images, n, "images")?.to_vec())?;
        put(out, PermexpPermutation(pi))
    })
}

#[no_mangle]
pub unsafe extern "C" fn permexp_permutation_len(pi: *const PermexpPermutation) -> usize {
    pi.as_ref().map_or(0, |p| p.0.len())
}

/// Writes the 0-based images into `out`, which must hold `len(pi)` entries.
#[no_mangle]
pub unsafe extern "C" fn permexp_permutation_images(
    pi: *const PermexpPermutation,
    out: *mut usize,
    out_len: usize,
) -> PermexpStatus {
    guard(|| {
        let pi = &as_ref(pi, "pi")?.0;
        need(out_len, pi.len())?;
        slice_mut(out, pi.len(), "out")?.copy_from_slice(pi.images());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn permexp_permutation_free(pi: *mut PermexpPermutation) {
    if !pi.is_null() {
        drop(Box::from_raw(pi));
    }
}

/// `T(π)`, `L` values.
#[no_mangle]
pub unsafe extern "C" fn permexp_statistic(
    spec: *const PermexpSpec,
    pi: *const PermexpPermutation,
    out: *mut f64,
    out_len: usize,
) -> PermexpStatus {
    guard(|| {
        let spec = &as_ref(spec, "spec")?.0;
        let pi = &as_ref(pi, "pi")?.0;
        need(out_len, spec.dimension())?;
        let t = sufficient_statistic(spec, pi);
        slice_mut(out, t.len(), "out")?.copy_from_slice(&t);
        Ok(())
    })
}

/// Draws replication `rep` of the stream identified by `seed`. The same
/// `(seed, rep)` always gives the same permutation.
#[no_mangle]
pub unsafe extern "C" fn permexp_sample(
    spec: *const PermexpSpec,
    theta: *const f64,
    theta_len: usize,
    n: usize,
    method: PermexpSampler,
    sweeps: usize,
    seed: u64,
    rep: u64,
    out: *mut *mut PermexpPermutation,
) -> PermexpStatus {
    guard(|| {
        let spec = &as_ref(spec, "spec")?.0;
        let theta = theta_of(spec, theta, theta_len)?;
        let config = SamplerConfig {
            method: match method {
                PermexpSampler::Gibbs => SamplerMethod::Gibbs,
                PermexpSampler::HitAndRun => SamplerMethod::HitAndRun,
                PermexpSampler::Uniform => SamplerMethod::Uniform,
            },
            sweeps,
            proposals_per_sweep: None,
            seed,
        };
        config.validate()?;
        let pi = sample(spec, &theta, n, &config, &mut replication_rng(seed, rep))?;
        put(out, PermexpPermutation(pi))
    })
}

/// Maximum pseudo-likelihood estimate. `root` receives `L` values; `info`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn permexp_solve_ple(
    spec: *const PermexpSpec,
    pi: *const PermexpPermutation,
    root: *mut f64,
    root_len: usize,
    info: *mut PermexpSolveInfo,
) -> PermexpStatus {
    guard(|| {
        let spec = &as_ref(spec, "spec")?.0;
        let pi = &as_ref(pi, "pi")?.0;
        need(root_len, spec.dimension())?;
        let out = slice_mut(root, spec.dimension(), "root")?;
        let report = solve_ple(spec, pi, &SolveOptions::default())?;
        out.copy_from_slice(&report.root);
        if let Some(info) = info.as_mut() {
            *info = PermexpSolveInfo {
                iterations: report.iterations,
                gradient_norm: report.gradient_norm,
                converged: report.converged,
            };
        }
        Ok(())
    })
}

/// Level `1 − alpha` sandwich interval for `dᵀθ`.
#[no_mangle]
pub unsafe extern "C" fn permexp_confidence_interval(
    spec: *const PermexpSpec,
    pi: *const PermexpPermutation,
    d: *const f64,
    d_len: usize,
    alpha: f64,
    out: *mut PermexpInterval,
) -> PermexpStatus {
    guard(|| {
        let spec = &as_ref(spec, "spec")?.0;
        let pi = &as_ref(pi, "pi")?.0;
        let d = slice(d, d_len, "d")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ci = confidence_interval(spec, pi, d, alpha, &SolveOptions::default())?;
        *out = PermexpInterval {
            estimate: ci.estimate,
            lo: ci.lo,
            hi: ci.hi,
            half_width: ci.half_width,
        };
        Ok(())
    })
}

/// `log Σ_π exp(θᵀT(π))` by enumeration; small `n` only.
#[no_mangle]
pub unsafe extern "C" fn permexp_exact_log_partition(
    spec: *const PermexpSpec,
    theta: *const f64,
    theta_len: usize,
    n: usize,
    out: *mut f64,
) -> PermexpStatus {
    guard(|| {
        let spec = &as_ref(spec, "spec")?.0;
        let theta = theta_of(spec, theta, theta_len)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = exact_log_partition(spec, &theta, n)?;
        Ok(())
    })
}

/// Continuum limit on a `resolution x resolution` grid: the limiting
/// log-partition `Z`, its gradient `z` (`L` values) and, when `sandwich` is
/// non-null, the asymptotic PLE covariance (`L*L` values, row-major).
#[no_mangle]
pub unsafe extern "C" fn permexp_limiting(
    spec: *const PermexpSpec,
    theta: *const f64,
    theta_len: usize,
    resolution: usize,
    log_partition: *mut f64,
    z: *mut f64,
    z_len: usize,
    sandwich: *mut f64,
    sandwich_len: usize,
) -> PermexpStatus {
    guard(|| {
        let spec = &as_ref(spec, "spec")?.0;
        let theta = theta_of(spec, theta, theta_len)?;
        let dim = spec.dimension();
        if log_partition.is_null() {
            return Err(null("log_partition"));
        }
        need(z_len, dim)?;
        let z_out = slice_mut(z, dim, "z")?;
        let grid = sinkhorn_density(spec, &theta, &SinkhornOptions::with_resolution(resolution))?;
        if !sandwich.is_null() {
            need(sandwich_len, dim * dim)?;
            let (s, a) = sigma_and_a(&grid, spec)?;
            let v = sandwich_from(&s, &a)?;
            let out = slice_mut(sandwich, dim * dim, "sandwich")?;
            for p in 0..dim {
                for q in 0..dim {
                    out[p * dim + q] = v[(p, q)];
                }
            }
        }
        *log_partition = limiting_log_partition(&grid, spec)?;
        z_out.copy_from_slice(&limiting_z_vector(&grid, spec)?);
        Ok(())
    })
}
