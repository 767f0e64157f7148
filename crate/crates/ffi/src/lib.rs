//! C interface to `latfun`.
//!
//! Every function returns a [`LatfunStatus`]. On failure the message is kept
//! per thread and readable through [`latfun_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use latfun::codec::{build_two_user_codec, run_two_user_experiment, SimOptions};
use latfun::entropy::epi_entropy_sandwich;
use latfun::lattice::Lattice;
use latfun::regions::{bt_min_sum_rate, bt_optimal_q, lattice_two_user_min_sum, sum_rate_gap, BtRegime};
use latfun::{Error, SourceModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatfunStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    OutOfRange = 4,
    Singular = 5,
    Unsupported = 6,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatfunRegime {
    Interior = 0,
    Q2Infinite = 1,
    Q1Infinite = 2,
    ZeroRate = 3,
}

/// Lattice handle.
pub struct LatfunLattice {
    inner: Lattice,
}

/// Source model handle.
pub struct LatfunModel {
    inner: SourceModel,
}

/// Optimal Berger-Tung operating point. Infinite noise variances are
/// reported as `INFINITY`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LatfunBtOptimum {
    pub q1_star: f64,
    pub q2_star: f64,
    pub sum_rate: f64,
    pub regime: LatfunRegime,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LatfunSimReport {
    pub trials: u64,
    pub empirical_distortion: f64,
    pub distortion_std_error: f64,
    pub overload_rate: f64,
    pub conditional_distortion: f64,
    pub conditional_std_error: f64,
    pub dither_moment_check: f64,
    pub dither_moment_std_error: f64,
    pub rate1: f64,
    pub rate2: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LatfunStatus {
    match e {
        Error::DimensionMismatch { .. } => LatfunStatus::DimensionMismatch,
        Error::UnsupportedDimension(_) => LatfunStatus::Unsupported,
        Error::SingularGenerator(_) | Error::SingularObservationGram(_) => LatfunStatus::Singular,
        Error::DistortionOutOfRange { .. } | Error::QOutOfRange { .. } => LatfunStatus::OutOfRange,
        _ => LatfunStatus::InvalidArgument,
    }
}

fn guard<F>(f: F) -> LatfunStatus
where
    F: FnOnce() -> Result<(), LatfunStatus>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LatfunStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            LatfunStatus::Panic
        }
    }
}

fn fail(e: Error) -> LatfunStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn null(what: &str) -> LatfunStatus {
    set_error(&format!("{what} is null"));
    LatfunStatus::NullPointer
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn latfun_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a lattice from a row-major `dim x dim` generator (rows are basis
/// vectors).
///
/// # Safety
/// `gen` must point to `dim * dim` readable doubles and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn latfun_lattice_new(gen: *const f64, dim: usize, out: *mut *mut LatfunLattice) -> LatfunStatus {
    guard(|| {
        if gen.is_null() {
            return Err(null("gen"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let data = slice::from_raw_parts(gen, dim * dim);
        let rows: Vec<Vec<f64>> = data.chunks(dim.max(1)).map(|r| r.to_vec()).collect();
        let lat = Lattice::from_rows(&rows).map_err(fail)?;
        *out = Box::into_raw(Box::new(LatfunLattice { inner: lat }));
        Ok(())
    })
}

/// # Safety
/// `lat` must come from [`latfun_lattice_new`] and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn latfun_lattice_free(lat: *mut LatfunLattice) {
    if !lat.is_null() {
        drop(Box::from_raw(lat));
    }
}

unsafe fn lattice_map(
    lat: *const LatfunLattice,
    x: *const f64,
    len: usize,
    out: *mut f64,
    f: fn(&Lattice, &[f64]) -> latfun::Result<Vec<f64>>,
) -> LatfunStatus {
    guard(|| {
        let lat = lat.as_ref().ok_or_else(|| null("lattice"))?;
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let xs = slice::from_raw_parts(x, len);
        let y = f(&lat.inner, xs).map_err(fail)?;
        ptr::copy_nonoverlapping(y.as_ptr(), out, y.len());
        Ok(())
    })
}

/// Nearest lattice point to `x`, written to `out` (`len` doubles).
///
/// # Safety
/// `x` and `out` must each hold `len` doubles; `lat` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn latfun_lattice_nearest_point(
    lat: *const LatfunLattice,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> LatfunStatus {
    lattice_map(lat, x, len, out, |l, x| l.nearest_point(x))
}

/// `x mod lattice`, written to `out` (`len` doubles).
///
/// # Safety
/// As for [`latfun_lattice_nearest_point`].
#[no_mangle]
pub unsafe extern "C" fn latfun_lattice_mod(
    lat: *const LatfunLattice,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> LatfunStatus {
    lattice_map(lat, x, len, out, |l, x| l.mod_lattice(x).map(|v| v.into_vec()))
}

/// Normalized second moment and its standard error (0 when exact).
///
/// # Safety
/// `lat` must be a live handle; `nsm` and `std_error` writable.
#[no_mangle]
pub unsafe extern "C" fn latfun_lattice_nsm(
    lat: *const LatfunLattice,
    samples: usize,
    seed: u64,
    nsm: *mut f64,
    std_error: *mut f64,
) -> LatfunStatus {
    guard(|| {
        let lat = lat.as_ref().ok_or_else(|| null("lattice"))?;
        if nsm.is_null() || std_error.is_null() {
            return Err(null("output"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, se) = lat.inner.normalized_second_moment(samples, &mut rng).map_err(fail)?;
        *nsm = g;
        *std_error = se;
        Ok(())
    })
}

/// Unit-variance pair with correlation `rho` and `Z = X1 - c X2`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn latfun_model_two_user(rho: f64, c: f64, out: *mut *mut LatfunModel) -> LatfunStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = SourceModel::two_user(rho, c).map_err(fail)?;
        *out = Box::into_raw(Box::new(LatfunModel { inner: m }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from a `latfun_model_*` constructor and not be freed
/// already.
#[no_mangle]
pub unsafe extern "C" fn latfun_model_free(model: *mut LatfunModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_scalar(
    model: *const LatfunModel,
    out: *mut f64,
    f: impl FnOnce(&SourceModel) -> latfun::Result<f64>,
) -> LatfunStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = f(&m.inner).map_err(fail)?;
        Ok(())
    })
}

/// Lattice-binning minimum sum rate in bits.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latfun_lattice_min_sum(model: *const LatfunModel, d: f64, out: *mut f64) -> LatfunStatus {
    model_scalar(model, out, |m| lattice_two_user_min_sum(m, d))
}

/// Berger-Tung minimum sum rate in bits; zero for `d >= sigma_Z^2`.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latfun_bt_min_sum(model: *const LatfunModel, d: f64, out: *mut f64) -> LatfunStatus {
    model_scalar(model, out, |m| bt_min_sum_rate(m, d))
}

/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latfun_bt_optimal_q(
    model: *const LatfunModel,
    d: f64,
    out: *mut LatfunBtOptimum,
) -> LatfunStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let o = bt_optimal_q(&m.inner, d).map_err(fail)?;
        *out = LatfunBtOptimum {
            q1_star: o.q1_star,
            q2_star: o.q2_star,
            sum_rate: o.sum_rate,
            regime: match o.regime {
                BtRegime::Interior => LatfunRegime::Interior,
                BtRegime::Q2Infinite => LatfunRegime::Q2Infinite,
                BtRegime::Q1Infinite => LatfunRegime::Q1Infinite,
                BtRegime::ZeroRate => LatfunRegime::ZeroRate,
            },
        };
        Ok(())
    })
}

/// Berger-Tung minus lattice-binning minimum sum rate, in bits.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn latfun_sum_rate_gap(rho: f64, c: f64, d: f64, out: *mut f64) -> LatfunStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = sum_rate_gap(rho, c, d).map_err(fail)?.gap_bits;
        Ok(())
    })
}

/// Monte Carlo run of the two-user codec on scaled integer lattices.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latfun_simulate_two_user(
    model: *const LatfunModel,
    d: f64,
    q1: f64,
    n: usize,
    margin: f64,
    trials: u64,
    seed: u64,
    out: *mut LatfunSimReport,
) -> LatfunStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let codec = build_two_user_codec(&m.inner, d, q1, n, margin, None).map_err(fail)?;
        let r = run_two_user_experiment(&codec, &SimOptions::new(trials, seed)).map_err(fail)?;
        *out = LatfunSimReport {
            trials: r.trials,
            empirical_distortion: r.empirical_distortion,
            distortion_std_error: r.distortion_std_error,
            overload_rate: r.overload_rate,
            conditional_distortion: r.conditional_distortion,
            conditional_std_error: r.conditional_std_error,
            dither_moment_check: r.dither_moment_check,
            dither_moment_std_error: r.dither_moment_std_error,
            rate1: r.rates.rates[0],
            rate2: r.rates.rates[1],
        };
        Ok(())
    })
}

/// Entropy bounds in bits for the difference of two uniforms with variances
/// `q1`, `q2`.
///
/// # Safety
/// `lower`, `estimate` and `upper` must be writable.
#[no_mangle]
pub unsafe extern "C" fn latfun_epi_sandwich(
    q1: f64,
    q2: f64,
    panels: usize,
    lower: *mut f64,
    estimate: *mut f64,
    upper: *mut f64,
) -> LatfunStatus {
    guard(|| {
        if lower.is_null() || estimate.is_null() || upper.is_null() {
            return Err(null("output"));
        }
        let s = epi_entropy_sandwich(q1, q2, panels).map_err(fail)?;
        *lower = s.lower;
        *estimate = s.estimate;
        *upper = s.upper;
        Ok(())
    })
}
