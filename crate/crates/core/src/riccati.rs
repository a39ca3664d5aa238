//! Stabilizing solution of the discrete Riccati equation
//!
//! `P = A*PA − A*PB (B*PB)^{-1} B*PA + Λ`
//!
//! with `Λ` Hermitian but possibly indefinite, and the spectral factor of
//! `G*ΛG` built from it.
//!
//! The primary method computes the stable deflating subspace of the extended
//! pencil `H − λJ` of size `2n+1`. There is no generalized Schur routine in
//! `nalgebra`, so the pencil is turned into an ordinary eigenproblem by a
//! Cayley-type shift `K = (H − sJ)^{-1} J` with `|s| = 1` (the pencil has no
//! unimodular eigenvalues when `G*ΛG > 0`), and the complex Schur form of `K`
//! is reordered. The Riccati recursion started at `Λ` is a fallback.

use log::debug;
use num_complex::Complex64;

use crate::error::{KlError, Result};
use crate::filter_bank::FilterBank;
use crate::hermitian::HermitianMatrix;
use crate::linalg::{c, complex_schur, frobenius, reorder_schur, spectral_radius, CMatrix, CVector};
use crate::spectral::{StateSpace, UnitCircleGrid, POSITIVITY_FLOOR, VALIDATION_GRID};

/// Smallest admissible `|B*PB|`.
pub const GAIN_FLOOR: f64 = 1e-14;
/// Relative DARE residual accepted from either method.
pub const DARE_RESIDUAL_TOL: f64 = 1e-8;
/// Relative tolerance of `|W|² = G*ΛG` on the validation grid.
pub const FACTOR_TOL: f64 = 1e-8;

const RECURSION_STEP_TOL: f64 = 1e-12;
const RECURSION_MAX_ITER: usize = 20_000;
const SHIFT_ANGLES: [f64; 4] = [0.37, 1.91, 3.53, 5.11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DareMethod {
    /// Subspace method, then the recursion if it fails.
    #[default]
    Auto,
    Subspace,
    Recursion,
}

/// Stabilizing solution `P`, the factor `W` with `W*W = G*ΛG`, the
/// closed-loop matrix `Z = A − B b^{-1} B*PA` and `b = B*PB`.
#[derive(Debug, Clone)]
pub struct FactorizationResult {
    p: HermitianMatrix,
    w: StateSpace,
    z: CMatrix,
    b: f64,
    residual: f64,
    rho_z: f64,
    min_glg: f64,
    method: DareMethod,
}

impl FactorizationResult {
    pub fn p(&self) -> &HermitianMatrix {
        &self.p
    }

    /// Quadruple `(A, B, b^{-1/2} B*PA, b^{1/2})`.
    pub fn w(&self) -> &StateSpace {
        &self.w
    }

    pub fn z(&self) -> &CMatrix {
        &self.z
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Relative DARE residual `‖R(P)‖_F / ‖P‖_F`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn spectral_radius_z(&self) -> f64 {
        self.rho_z
    }

    /// Minimum of `G*ΛG` on the validation grid.
    pub fn min_glg(&self) -> f64 {
        self.min_glg
    }

    /// Method that produced `P` (never `Auto`).
    pub fn method(&self) -> DareMethod {
        self.method
    }
}

/// `G*ΛG` sampled on a grid.
pub fn spectrum_on_grid(fb: &FilterBank, lambda: &HermitianMatrix, grid: &UnitCircleGrid) -> Result<Vec<f64>> {
    fb.samples(grid)?.iter().map(|g| Ok(lambda.quadratic_form(g))).collect()
}

pub fn solve_dare(fb: &FilterBank, lambda: &HermitianMatrix) -> Result<FactorizationResult> {
    solve_dare_with(fb, lambda, DareMethod::Auto)
}

pub fn solve_dare_with(fb: &FilterBank, lambda: &HermitianMatrix, method: DareMethod) -> Result<FactorizationResult> {
    if lambda.dim() != fb.n() {
        return Err(KlError::DimensionMismatch(format!(
            "lambda is {0}x{0}, filter bank has n = {1}",
            lambda.dim(),
            fb.n()
        )));
    }
    let grid = UnitCircleGrid::new(VALIDATION_GRID)?;
    let samples = fb.samples(&grid)?;
    let glg: Vec<f64> = samples.iter().map(|g| lambda.quadratic_form(g)).collect();
    let min_glg = glg.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_glg > POSITIVITY_FLOOR) {
        return Err(KlError::SpectrumNotPositive { min_value: min_glg });
    }

    let attempt = |m: DareMethod| -> Result<HermitianMatrix> {
        match m {
            DareMethod::Subspace => subspace_solution(fb, lambda),
            _ => riccati_recursion(fb, lambda, lambda, RECURSION_MAX_ITER),
        }
    };
    let order: &[DareMethod] = match method {
        DareMethod::Auto => &[DareMethod::Subspace, DareMethod::Recursion],
        DareMethod::Subspace => &[DareMethod::Subspace],
        DareMethod::Recursion => &[DareMethod::Recursion],
    };
    let mut last_err = KlError::NoStabilizingSolution("no method attempted".into());
    for &m in order {
        match attempt(m).and_then(|p| assemble(fb, lambda, p, m, &samples, &glg, min_glg)) {
            Ok(fr) => return Ok(fr),
            Err(e) => {
                debug!("DARE method {m:?} failed: {e}");
                last_err = e;
            }
        }
    }
    Err(last_err)
}

/// `‖P − A*PA + A*PB (B*PB)^{-1} B*PA − Λ‖_F`.
pub fn dare_residual(fb: &FilterBank, lambda: &HermitianMatrix, p: &HermitianMatrix) -> Result<f64> {
    let next = riccati_step(fb, lambda, p.matrix())?;
    Ok(frobenius(&(p.matrix() - next)))
}

fn riccati_step(fb: &FilterBank, lambda: &HermitianMatrix, p: &CMatrix) -> Result<CMatrix> {
    let a = fb.a();
    let b = fb.b();
    let pb = p * b;
    let bpb = (b.adjoint() * &pb)[(0, 0)];
    if bpb.norm() <= GAIN_FLOOR {
        return Err(KlError::NoStabilizingSolution(format!("B*PB = {bpb:.3e} is singular")));
    }
    let apb = a.adjoint() * &pb;
    Ok(a.adjoint() * p * a - (&apb * apb.adjoint()) / bpb + lambda.matrix())
}

/// Fixed point of the Riccati difference recursion from `Π₀`.
pub fn riccati_recursion(
    fb: &FilterBank,
    lambda: &HermitianMatrix,
    pi0: &HermitianMatrix,
    max_iter: usize,
) -> Result<HermitianMatrix> {
    let mut p = pi0.matrix().clone();
    for _ in 0..max_iter {
        let next = crate::linalg::hermitian_part(&riccati_step(fb, lambda, &p)?);
        let step = frobenius(&(&next - &p));
        p = next;
        if !step.is_finite() {
            break;
        }
        if step < RECURSION_STEP_TOL {
            return Ok(HermitianMatrix::from_hermitian_part(&p));
        }
    }
    Err(KlError::NoStabilizingSolution(
        "Riccati recursion did not converge".into(),
    ))
}

fn subspace_solution(fb: &FilterBank, lambda: &HermitianMatrix) -> Result<HermitianMatrix> {
    let n = fb.n();
    let d = 2 * n + 1;
    let mut h = CMatrix::zeros(d, d);
    let mut j = CMatrix::zeros(d, d);
    h.view_mut((0, 0), (n, n)).copy_from(fb.a());
    h.view_mut((0, 2 * n), (n, 1)).copy_from(fb.b());
    h.view_mut((n, 0), (n, n)).copy_from(&(-lambda.matrix()));
    for i in 0..n {
        h[(n + i, n + i)] = c(1.0, 0.0);
        j[(i, i)] = c(1.0, 0.0);
    }
    j.view_mut((n, n), (n, n)).copy_from(&fb.a().adjoint());
    j.view_mut((2 * n, n), (1, n)).copy_from(&(-fb.b().adjoint()));

    let mut best: Option<(f64, HermitianMatrix)> = None;
    for &phi in &SHIFT_ANGLES {
        let s = Complex64::from_polar(1.0, phi);
        let Some(p) = shifted_subspace(&h, &j, s, n) else {
            continue;
        };
        let Ok(res) = dare_residual(fb, lambda, &p) else {
            continue;
        };
        let rel = res / p.frobenius_norm().max(f64::MIN_POSITIVE);
        if best.as_ref().is_none_or(|(r, _)| rel < *r) {
            best = Some((rel, p));
        }
        if rel < 1e-12 {
            break;
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| {
        KlError::NoStabilizingSolution("stable deflating subspace not found".into())
    })
}

fn shifted_subspace(h: &CMatrix, j: &CMatrix, s: Complex64, n: usize) -> Option<HermitianMatrix> {
    let shifted = h - j * s;
    let k = shifted.lu().solve(j)?;
    if k.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return None;
    }
    let (mut q, mut t) = complex_schur(&k).ok()?;
    let scale = t.diagonal().iter().map(|v| v.norm()).fold(0.0, f64::max);
    // λ = s + 1/μ; |λ| < 1 ⇔ |sμ + 1| < |μ|, and μ ≈ 0 is the infinite eigenvalue
    let stable = |mu: Complex64| mu.norm() > 1e-13 * scale && (s * mu + 1.0).norm() < mu.norm();
    if reorder_schur(&mut q, &mut t, stable) != n {
        return None;
    }
    let u1 = q.view((0, 0), (n, n)).into_owned();
    let u2 = q.view((n, 0), (n, n)).into_owned();
    // P U1 = U2  ⇔  U1* P = U2*
    let p = u1.adjoint().lu().solve(&u2.adjoint())?;
    if p.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return None;
    }
    Some(HermitianMatrix::from_hermitian_part(&p))
}

fn assemble(
    fb: &FilterBank,
    lambda: &HermitianMatrix,
    p: HermitianMatrix,
    method: DareMethod,
    samples: &[CVector],
    glg: &[f64],
    min_glg: f64,
) -> Result<FactorizationResult> {
    let pb = p.matrix() * fb.b();
    let b = (fb.b().adjoint() * &pb)[(0, 0)].re;
    if !(b > GAIN_FLOOR) {
        return Err(KlError::NoStabilizingSolution(format!("B*PB = {b:.3e} is not positive")));
    }
    let bpa = fb.b().adjoint() * p.matrix() * fb.a();
    let bpa = CMatrix::from_iterator(1, fb.n(), bpa.iter().copied());
    let z = fb.a() - fb.b() * &bpa / c(b, 0.0);
    let rho_z = spectral_radius(&z)?;
    if !(rho_z < 1.0) {
        return Err(KlError::NoStabilizingSolution(format!(
            "closed loop is not stable (spectral radius {rho_z:.6})"
        )));
    }
    let residual = dare_residual(fb, lambda, &p)? / p.frobenius_norm().max(f64::MIN_POSITIVE);
    if !(residual <= DARE_RESIDUAL_TOL) {
        return Err(KlError::NoStabilizingSolution(format!(
            "relative residual {residual:.3e} too large"
        )));
    }
    let w = StateSpace::new(
        fb.a().clone(),
        fb.b().clone(),
        bpa.unscale(b.sqrt()),
        c(b.sqrt(), 0.0),
    )?;
    let max_glg = glg.iter().copied().fold(0.0, f64::max);
    for (g, &v) in samples.iter().zip(glg) {
        let wv = (&w.h * g)[(0, 0)] + w.d;
        if (wv.norm_sqr() - v).abs() > FACTOR_TOL * max_glg {
            return Err(KlError::NoStabilizingSolution(format!(
                "factorization mismatch {:.3e}",
                (wv.norm_sqr() - v).abs()
            )));
        }
    }
    Ok(FactorizationResult {
        p,
        w,
        z,
        b,
        residual,
        rho_z,
        min_glg,
        method,
    })
}

/// Maximum modulus over the grid of
/// `[G*  1] [[A*ΠA − Π, A*ΠB], [B*ΠA, B*ΠB]] [G; 1]`, which vanishes for every
/// Hermitian `Π`.
pub fn verify_popov_identity(fb: &FilterBank, pi: &HermitianMatrix, grid: &UnitCircleGrid) -> Result<f64> {
    let (a, b, p) = (fb.a(), fb.b(), pi.matrix());
    let top_left = a.adjoint() * p * a - p;
    let top_right = a.adjoint() * p * b;
    let corner = (b.adjoint() * p * b)[(0, 0)];
    let mut worst: f64 = 0.0;
    for g in fb.samples(grid)? {
        let quad = (g.adjoint() * &top_left * &g)[(0, 0)];
        let cross = (g.adjoint() * &top_right)[(0, 0)];
        let v = quad + cross + cross.conj() + corner;
        worst = worst.max(v.norm());
    }
    Ok(worst)
}

/// Quadruple `(Z, B, −b^{-3/2} B*PA, b^{-1/2})` of `W^{-1}`.
pub fn factor_inverse(fr: &FactorizationResult) -> StateSpace {
    let sb = fr.b.sqrt();
    // w.h = b^{-1/2} B*PA
    let h = fr.w.h.unscale(-fr.b);
    StateSpace {
        f: fr.z.clone(),
        g: fr.w.g.clone(),
        h,
        d: c(1.0 / sb, 0.0),
    }
}

/// `C∘ = b^{-1/2} P B`, so that `|C∘* G|² = G*ΛG` on the circle.
pub fn construct_c_vector(fr: &FactorizationResult) -> CVector {
    (fr.p.matrix() * &fr.w.g).unscale(fr.b.sqrt())
}
