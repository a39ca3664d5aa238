//! C interface to `spectral-kl`.
//!
//! Problems and reports are opaque handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns an
//! `SklStatus`; on failure the message is available from
//! `skl_last_error_message` until the next failing call on the same thread.
//! Matrices cross the boundary as separate row-major arrays of real and
//! imaginary parts.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spectral_kl::cli::exit_code_for;
use spectral_kl::solver::{output_spectrum, SolverReport};
use spectral_kl::{
    check_feasibility, solve, KlError, NormalizedProblem, ProblemConfig, SolverConfig, Termination,
    UnitCircleGrid,
};

/// Status codes. The numeric values of the problem-level codes agree with
/// the exit codes of the command line tool.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SklStatus {
    Ok = 0,
    InvalidInput = 1,
    Infeasible = 2,
    NonsingularA = 3,
    NotAFixedPoint = 6,
    NullPointer = 10,
    BufferTooSmall = 11,
    Numerical = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SklTermination {
    Converged = 0,
    MaxIterations = 1,
    BoundaryApproach = 2,
}

/// A normalized problem: filter bank, prior and solver settings.
pub struct SklProblem {
    problem: NormalizedProblem,
    solver: SolverConfig,
}

/// Result of `skl_solve`.
pub struct SklReport {
    report: SolverReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_for(e: &KlError) -> SklStatus {
    match e {
        KlError::NoStabilizingSolution(_)
        | KlError::LyapunovSolveFailure(_)
        | KlError::EvaluationSingular { .. }
        | KlError::SpectrumNotPositive { .. }
        | KlError::SingularBase { .. } => SklStatus::Numerical,
        _ => match exit_code_for(e) {
            2 => SklStatus::Infeasible,
            3 => SklStatus::NonsingularA,
            6 => SklStatus::NotAFixedPoint,
            _ => SklStatus::InvalidInput,
        },
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (SklStatus, String)>) -> SklStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SklStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SklStatus::Panic
        }
    }
}

fn kl(e: KlError) -> (SklStatus, String) {
    (status_for(&e), e.to_string())
}

fn null(what: &str) -> (SklStatus, String) {
    (SklStatus::NullPointer, format!("{what} is null"))
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn skl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn skl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON problem configuration and normalizes it. A nonzero
/// `allow_nonsingular_a` waives the requirement that `A` be singular.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skl_problem_from_json(
    json: *const c_char,
    allow_nonsingular_a: c_int,
    out: *mut *mut SklProblem,
) -> SklStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (SklStatus::InvalidInput, format!("json is not UTF-8: {e}")))?;
        let cfg = ProblemConfig::from_json(text).map_err(kl)?;
        let problem = cfg.normalized(allow_nonsingular_a != 0).map_err(kl)?;
        *out = Box::into_raw(Box::new(SklProblem {
            problem,
            solver: cfg.solver,
        }));
        Ok(())
    })
}

/// Releases a problem. Null is ignored.
///
/// # Safety
/// `p` must come from `skl_problem_from_json` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn skl_problem_free(p: *mut SklProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// State dimension `n`, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn skl_problem_dim(p: *const SklProblem) -> usize {
    p.as_ref().map_or(0, |p| p.problem.fb.n())
}

/// Feasibility of the normalized problem. Writes 1 or 0 to `feasible` and
/// the dimension of the null space of the moment map to `n_perp`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn skl_feasibility(p: *const SklProblem, feasible: *mut c_int, n_perp: *mut usize) -> SklStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        if feasible.is_null() || n_perp.is_null() {
            return Err(null("output"));
        }
        let v = check_feasibility(&p.problem.fb).map_err(kl)?;
        *feasible = v.feasible() as c_int;
        *n_perp = v.n_perp;
        Ok(())
    })
}

/// Runs the fixed-point iteration with the settings from the configuration.
/// `max_iters` overrides the iteration budget when nonzero.
///
/// # Safety
/// `p` must be a live problem handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skl_solve(p: *const SklProblem, max_iters: usize, out: *mut *mut SklReport) -> SklStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let mut cfg = p.solver.clone();
        if max_iters > 0 {
            cfg.max_iters = max_iters;
        }
        let report = solve(&p.problem.fb, &p.problem.psi, &cfg).map_err(kl)?;
        *out = Box::into_raw(Box::new(SklReport { report }));
        Ok(())
    })
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `r` must come from `skl_solve` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn skl_report_free(r: *mut SklReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// 1 when the limit satisfies the optimality conditions, 0 otherwise or for
/// a null handle.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn skl_report_converged(r: *const SklReport) -> c_int {
    r.as_ref().map_or(0, |r| r.report.converged as c_int)
}

/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn skl_report_iterations(r: *const SklReport) -> usize {
    r.as_ref().map_or(0, |r| r.report.iterations)
}

/// # Safety
/// `r` must be a live report handle.
#[no_mangle]
pub unsafe extern "C" fn skl_report_termination(r: *const SklReport) -> SklTermination {
    match r.as_ref().map(|r| r.report.termination) {
        Some(Termination::Converged) => SklTermination::Converged,
        Some(Termination::MaxIterations) | None => SklTermination::MaxIterations,
        Some(Termination::BoundaryApproach) => SklTermination::BoundaryApproach,
    }
}

/// Final constraint residual `‖M(Λ̂) − I‖_F`, NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn skl_report_residual(r: *const SklReport) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.report.last().residual)
}

/// Copies `Λ̂` into `re` and `im`, each of length at least `n * n`, row major.
///
/// # Safety
/// `re` and `im` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn skl_report_lambda(r: *const SklReport, re: *mut f64, im: *mut f64, len: usize) -> SklStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("report"))?;
        if re.is_null() || im.is_null() {
            return Err(null("output"));
        }
        let m = r.report.lambda_hat.matrix();
        let n = m.nrows();
        if len < n * n {
            return Err((SklStatus::BufferTooSmall, format!("need {} entries, got {len}", n * n)));
        }
        for i in 0..n {
            for j in 0..n {
                *re.add(i * n + j) = m[(i, j)].re;
                *im.add(i * n + j) = m[(i, j)].im;
            }
        }
        Ok(())
    })
}

/// Samples `Φ̂ = Ψ / G*Λ̂G` on `grid` equally spaced angles `2πk/grid`.
///
/// # Safety
/// `phi` must point to `grid` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn skl_report_spectrum(
    p: *const SklProblem,
    r: *const SklReport,
    grid: usize,
    phi: *mut f64,
) -> SklStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        let r = r.as_ref().ok_or_else(|| null("report"))?;
        if phi.is_null() {
            return Err(null("phi"));
        }
        let g = UnitCircleGrid::new(grid).map_err(kl)?;
        let values = output_spectrum(&p.problem.fb, &p.problem.psi, &r.report.lambda_hat, &g).map_err(kl)?;
        ptr::copy_nonoverlapping(values.as_ptr(), phi, values.len());
        Ok(())
    })
}
