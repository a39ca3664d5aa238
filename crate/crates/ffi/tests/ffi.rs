use std::ffi::{CStr, CString};
use std::ptr;

use spectral_kl_ffi::*;

const NILPOTENT: &str = r#"{"filter": {"A": [[0, 1], [0, 0]], "B": [0, 1]}, "prior": "white"}"#;

fn problem(json: &str, allow: i32) -> (SklStatus, *mut SklProblem) {
    let text = CString::new(json).unwrap();
    let mut p = ptr::null_mut();
    let st = unsafe { skl_problem_from_json(text.as_ptr(), allow, &mut p) };
    (st, p)
}

fn last_error() -> String {
    let m = skl_last_error_message();
    assert!(!m.is_null());
    unsafe { CStr::from_ptr(m) }.to_string_lossy().into_owned()
}

#[test]
fn solve_round_trip() {
    let (st, p) = problem(NILPOTENT, 0);
    assert_eq!(st, SklStatus::Ok);
    unsafe {
        assert_eq!(skl_problem_dim(p), 2);
        let (mut feasible, mut n_perp) = (0, usize::MAX);
        assert_eq!(skl_feasibility(p, &mut feasible, &mut n_perp), SklStatus::Ok);
        assert_eq!(feasible, 1);

        let mut r = ptr::null_mut();
        assert_eq!(skl_solve(p, 0, &mut r), SklStatus::Ok);
        assert!(!r.is_null());
        assert_eq!(skl_report_converged(r), 1);
        assert_eq!(skl_report_termination(r), SklTermination::Converged);
        assert!(skl_report_iterations(r) >= 1);
        assert!(skl_report_residual(r) < 1e-8);

        let (mut re, mut im) = ([0.0; 4], [0.0; 4]);
        assert_eq!(skl_report_lambda(r, re.as_mut_ptr(), im.as_mut_ptr(), 4), SklStatus::Ok);
        assert!((re[1] - re[2]).abs() < 1e-14 && (im[1] + im[2]).abs() < 1e-14);

        // White prior on a feasible bank: the optimum reproduces it exactly.
        let mut phi = [0.0; 32];
        assert_eq!(skl_report_spectrum(p, r, 32, phi.as_mut_ptr()), SklStatus::Ok);
        assert!(phi.iter().all(|v| (v - 1.0).abs() < 1e-8), "{phi:?}");

        skl_report_free(r);
        skl_problem_free(p);
    }
}

#[test]
fn error_codes_match_cli() {
    let (st, p) = problem(r#"{"filter": {"A": [[0.5]], "B": [1]}}"#, 0);
    assert_eq!(st, SklStatus::NonsingularA);
    assert!(p.is_null());
    assert!(!last_error().is_empty());

    let (st, p) = problem(r#"{"filter": {"A": [[0.5]], "B": [1]}}"#, 1);
    assert_eq!(st, SklStatus::Ok);
    unsafe { skl_problem_free(p) };

    let (st, _) = problem(r#"{"filter": {"A": [[0, 1], [0]], "B": [0, 1]}}"#, 0);
    assert_eq!(st, SklStatus::InvalidInput);
    assert!(last_error().contains("A"));

    let (st, _) = problem("{not json", 0);
    assert_eq!(st, SklStatus::InvalidInput);

    let (st, p) = problem(r#"{"filter": {"A": [[0, 0], [0, 0.5]], "B": [1, 1]}}"#, 0);
    assert_eq!(st, SklStatus::Ok);
    unsafe {
        let (mut feasible, mut n_perp) = (1, 0);
        assert_eq!(skl_feasibility(p, &mut feasible, &mut n_perp), SklStatus::Ok);
        assert_eq!(feasible, 0);
        let mut r = ptr::null_mut();
        assert_eq!(skl_solve(p, 0, &mut r), SklStatus::Infeasible);
        assert!(r.is_null());
        skl_problem_free(p);
    }
}

#[test]
fn null_and_short_buffers_are_rejected() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(skl_problem_from_json(ptr::null(), 0, &mut p), SklStatus::NullPointer);
        let mut r = ptr::null_mut();
        assert_eq!(skl_solve(ptr::null(), 0, &mut r), SklStatus::NullPointer);
        assert_eq!(skl_problem_dim(ptr::null()), 0);
        assert_eq!(skl_report_converged(ptr::null()), 0);
        assert!(skl_report_residual(ptr::null()).is_nan());
        skl_problem_free(ptr::null_mut());
        skl_report_free(ptr::null_mut());

        let (_, p) = problem(NILPOTENT, 0);
        assert_eq!(skl_solve(p, 3, &mut r), SklStatus::Ok);
        assert!(skl_report_iterations(r) <= 3);
        let (mut re, mut im) = ([0.0; 3], [0.0; 3]);
        assert_eq!(
            skl_report_lambda(r, re.as_mut_ptr(), im.as_mut_ptr(), 3),
            SklStatus::BufferTooSmall
        );
        assert!(last_error().contains("need 4"));
        assert_eq!(skl_report_spectrum(p, r, 0, re.as_mut_ptr()), SklStatus::InvalidInput);
        skl_report_free(r);
        skl_problem_free(p);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spectral_kl.h")).unwrap();
    for f in [
        "skl_last_error_message",
        "skl_version",
        "skl_problem_from_json",
        "skl_problem_free",
        "skl_problem_dim",
        "skl_feasibility",
        "skl_solve",
        "skl_report_free",
        "skl_report_converged",
        "skl_report_iterations",
        "skl_report_termination",
        "skl_report_residual",
        "skl_report_lambda",
        "skl_report_spectrum",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing");
    }
    assert!(header.contains("typedef struct SklProblem SklProblem;"));
    assert!(header.contains("SKL_STATUS_NONSINGULAR_A = 3"));
    let v = unsafe { CStr::from_ptr(skl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
