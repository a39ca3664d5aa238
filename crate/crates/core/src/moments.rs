//! The integral `M(Λ) = ∫ G (Ψ / G*ΛG) G*`, the map
//! `Θ(Λ) = Λ^{1/2} M(Λ) Λ^{1/2}` and the dual functional
//! `J(Λ) = −∫ Ψ log G*ΛG + tr Λ`.
//!
//! `M(Λ)` is the steady-state covariance of white noise passed through
//! `W_Ψ`, then `W^{-1}`, then `G`, where `W*W = G*ΛG`. Because
//! `G W^{-1} = (zI − Z)^{-1} B b^{-1/2}`, the cascade has a realization with
//! a block-triangular stable state matrix and `M(Λ)` is a block of the
//! solution of one Stein equation. A quadrature on the circle is kept as an
//! oracle and as a fallback.

use log::debug;

use crate::error::{KlError, Result};
use crate::filter_bank::FilterBank;
use crate::hermitian::{DensityMatrix, HermitianMatrix, DEFAULT_PSD_TOL};
use crate::linalg::{solve_stein, spectral_radius, CMatrix, CVector};
use crate::riccati::{solve_dare, FactorizationResult};
use crate::spectral::{AdaptiveQuadrature, Quadrature, SpectralDensity, UnitCircleGrid};

/// Convergence tolerance of the quadrature oracle.
pub const QUADRATURE_TOL: f64 = 1e-9;
/// Trace tolerance of `Θ(Λ)`.
pub const THETA_TRACE_TOL: f64 = 1e-10;
/// Eigenvalues in `[−CLAMP, 0)` are set to zero before square roots.
pub const CLAMP: f64 = 1e-12;
/// Relative size below which an eigenvalue of `Λ` counts as kernel in `Θ`.
pub const KERNEL_TOL: f64 = 1e-13;

/// `F̂ = [[F, 0], [K H, Z]]`, `Ĝ = [G_f; K D]` with `K = B b^{-1/2}`.
#[derive(Debug, Clone)]
pub struct AugmentedRealization {
    pub f_hat: CMatrix,
    pub g_hat: CVector,
    prior_order: usize,
}

impl AugmentedRealization {
    pub fn new(fb: &FilterBank, psi: &SpectralDensity, fr: &FactorizationResult) -> Result<Self> {
        let ss = psi.factor().state_space();
        let m = ss.order();
        let n = fb.n();
        let k = fb.b().unscale(fr.b().sqrt());
        let mut f_hat = CMatrix::zeros(m + n, m + n);
        f_hat.view_mut((0, 0), (m, m)).copy_from(&ss.f);
        f_hat.view_mut((m, m), (n, n)).copy_from(fr.z());
        if m > 0 {
            f_hat.view_mut((m, 0), (n, m)).copy_from(&(&k * &ss.h));
        }
        let mut g_hat = CVector::zeros(m + n);
        g_hat.rows_mut(0, m).copy_from(&ss.g);
        g_hat.rows_mut(m, n).copy_from(&(k * ss.d));
        Ok(Self {
            f_hat,
            g_hat,
            prior_order: m,
        })
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.f_hat)
    }

    /// Bottom-right `n x n` block of the solution of `Ξ = F̂ΞF̂* + ĜĜ*`.
    pub fn output_covariance(&self) -> Result<HermitianMatrix> {
        let m = self.prior_order;
        let n = self.f_hat.nrows() - m;
        let q = &self.g_hat * self.g_hat.adjoint();
        let xi = solve_stein(&self.f_hat, &q).map_err(|e| match e {
            KlError::DimensionMismatch(s) => KlError::LyapunovSolveFailure(s),
            other => KlError::LyapunovSolveFailure(other.to_string()),
        })?;
        Ok(HermitianMatrix::from_hermitian_part(&xi.view((m, m), (n, n)).into_owned()))
    }
}

fn check_dims(fb: &FilterBank, lambda: &HermitianMatrix) -> Result<()> {
    if lambda.dim() != fb.n() {
        return Err(KlError::DimensionMismatch(format!(
            "lambda is {0}x{0}, filter bank has n = {1}",
            lambda.dim(),
            fb.n()
        )));
    }
    Ok(())
}

/// `M(Λ)` through the Riccati factorization and one Stein solve.
pub fn moment_integral_lyapunov(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda: &HermitianMatrix,
) -> Result<HermitianMatrix> {
    check_dims(fb, lambda)?;
    let fr = solve_dare(fb, lambda)?;
    AugmentedRealization::new(fb, psi, &fr)?.output_covariance()
}

/// `M(Λ)` by the trapezoidal rule on a fixed grid.
pub fn moment_integral_on_grid(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda: &HermitianMatrix,
    grid: &UnitCircleGrid,
) -> Result<HermitianMatrix> {
    check_dims(fb, lambda)?;
    let n = fb.n();
    let mut acc = crate::linalg::MatrixAccumulator::new(n, n);
    for k in 0..grid.len() {
        integrand(fb, psi, lambda, grid.angle(k), &mut acc)?;
    }
    Ok(HermitianMatrix::from_hermitian_part(&acc.value().unscale(grid.len() as f64)))
}

fn integrand(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda: &HermitianMatrix,
    theta: f64,
    acc: &mut crate::linalg::MatrixAccumulator,
) -> Result<()> {
    let g = fb.transfer_at(theta)?;
    let glg = lambda.quadratic_form(&g);
    if !(glg > 0.0) {
        return Err(KlError::SpectrumNotPositive { min_value: glg });
    }
    acc.add_outer(&g, &g, psi.value_at(theta)? / glg);
    Ok(())
}

/// `M(Λ)` by grid doubling until successive values differ by less than
/// `QUADRATURE_TOL` in Frobenius norm.
pub fn moment_integral_quadrature(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda: &HermitianMatrix,
) -> Result<Quadrature<HermitianMatrix>> {
    moment_integral_adaptive(fb, psi, lambda, AdaptiveQuadrature::with_tol(QUADRATURE_TOL))
}

pub fn moment_integral_adaptive(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda: &HermitianMatrix,
    rule: AdaptiveQuadrature,
) -> Result<Quadrature<HermitianMatrix>> {
    check_dims(fb, lambda)?;
    let n = fb.n();
    let q = rule.mean_matrix(n, n, |t, acc| integrand(fb, psi, lambda, t, acc))?;
    Ok(Quadrature {
        value: HermitianMatrix::from_hermitian_part(&q.value),
        points: q.points,
        last_change: q.last_change,
        converged: q.converged,
    })
}

/// `M(Λ)` by the Lyapunov route, falling back to quadrature when the Riccati
/// solver cannot produce a stabilizing solution.
pub fn moment_integral(fb: &FilterBank, psi: &SpectralDensity, lambda: &HermitianMatrix) -> Result<HermitianMatrix> {
    match moment_integral_lyapunov(fb, psi, lambda) {
        Ok(m) => Ok(m),
        Err(KlError::NoStabilizingSolution(why)) | Err(KlError::LyapunovSolveFailure(why)) => {
            debug!("Lyapunov route failed ({why}), using quadrature");
            Ok(moment_integral_quadrature(fb, psi, lambda)?.value)
        }
        Err(e) => Err(e),
    }
}

/// One application of the map, keeping the intermediate integral.
#[derive(Debug, Clone)]
pub struct ThetaEvaluation {
    pub theta: DensityMatrix,
    pub moment: HermitianMatrix,
}

/// Sets eigenvalues in `[−CLAMP, 0)` to zero.
pub fn clamp_small_negative(m: &HermitianMatrix) -> HermitianMatrix {
    m.map_eigenvalues(|v| if (-CLAMP..0.0).contains(&v) { 0.0 } else { v })
}

/// `Λ^{1/2} M Λ^{1/2}` assembled in the eigenbasis of the range of `Λ`.
///
/// Eigenvalues up to `KERNEL_TOL` times the largest are treated as exact
/// zeros, so the result lies in the range of `Λ`. Without the cut, round-off
/// in a kernel direction is amplified when that direction is repelling.
fn root_congruence(lambda: &HermitianMatrix, moment: &HermitianMatrix) -> Result<HermitianMatrix> {
    let (values, u) = lambda.eigen();
    let top = values.last().copied().unwrap_or(0.0).max(0.0);
    if let Some(&lo) = values.first() {
        if lo < -DEFAULT_PSD_TOL * top {
            return Err(KlError::NotPositiveSemidefinite { min_eigenvalue: lo });
        }
    }
    let keep: Vec<usize> = (0..values.len()).filter(|&j| values[j] > KERNEL_TOL * top).collect();
    let range = u.select_columns(&keep);
    let mut scaled = range.clone();
    for (col, &j) in keep.iter().enumerate() {
        scaled.column_mut(col).scale_mut(values[j].sqrt());
    }
    let inner = scaled.adjoint() * moment.matrix() * &scaled;
    Ok(HermitianMatrix::from_hermitian_part(&(&range * inner * range.adjoint())))
}

pub fn evaluate_theta(fb: &FilterBank, psi: &SpectralDensity, lambda: &DensityMatrix) -> Result<ThetaEvaluation> {
    let l = lambda.as_hermitian();
    let moment = moment_integral(fb, psi, l)?;
    let theta = clamp_small_negative(&root_congruence(l, &moment)?);
    let theta = DensityMatrix::with_tolerances(theta, DEFAULT_PSD_TOL, THETA_TRACE_TOL)?;
    Ok(ThetaEvaluation { theta, moment })
}

/// `Θ(Λ) = Λ^{1/2} M(Λ) Λ^{1/2}`.
pub fn theta(fb: &FilterBank, psi: &SpectralDensity, lambda: &DensityMatrix) -> Result<DensityMatrix> {
    Ok(evaluate_theta(fb, psi, lambda)?.theta)
}

/// `Λ^{1/2} M(Λ) Λ^{1/2}` for any positive semidefinite `Λ`, without the
/// unit-trace check.
pub fn theta_unnormalized(fb: &FilterBank, psi: &SpectralDensity, lambda: &HermitianMatrix) -> Result<HermitianMatrix> {
    let moment = moment_integral(fb, psi, lambda)?;
    root_congruence(lambda, &moment)
}

/// `−∫ Ψ log G*ΛG + tr Λ` by adaptive quadrature.
pub fn dual_value(fb: &FilterBank, psi: &SpectralDensity, lambda: &HermitianMatrix) -> Result<f64> {
    check_dims(fb, lambda)?;
    let q = AdaptiveQuadrature::with_tol(1e-12).mean(|t| {
        let g = fb.transfer_at(t)?;
        let glg = lambda.quadratic_form(&g);
        if !(glg > 0.0) {
            return Err(KlError::SpectrumNotPositive { min_value: glg });
        }
        Ok(-psi.value_at(t)? * glg.ln())
    })?;
    Ok(q.value + lambda.trace())
}

/// `‖M(Λ) − I‖_F`.
pub fn constraint_residual(fb: &FilterBank, psi: &SpectralDensity, lambda: &HermitianMatrix) -> Result<f64> {
    let m = moment_integral(fb, psi, lambda)?;
    Ok((&m - &HermitianMatrix::identity(fb.n())).frobenius_norm())
}

/// Directional derivative of `J` at `Λ` along `Θ(Λ) − Λ`, i.e.
/// `tr((I − M(Λ))(Θ(Λ) − Λ))`. Non-positive along the iteration.
pub fn descent_derivative(moment: &HermitianMatrix, lambda: &HermitianMatrix, theta: &HermitianMatrix) -> f64 {
    let grad = &HermitianMatrix::identity(moment.dim()) - moment;
    grad.inner(&(theta - lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter_bank::{gamma_decomposition, steady_state_covariance};
    use crate::instances::random_feasible_instance;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar() -> FilterBank {
        FilterBank::from_real(&[vec![0.0]], &[1.0]).unwrap()
    }

    fn nilpotent() -> FilterBank {
        FilterBank::from_real(&[vec![0.0, 1.0], vec![0.0, 0.0]], &[0.0, 1.0]).unwrap()
    }

    fn half() -> HermitianMatrix {
        HermitianMatrix::identity(2).scale(0.5)
    }

    fn cosine_prior() -> SpectralDensity {
        // (1.25 + cos θ) / 1.25
        SpectralDensity::from_rational(&[1.0, 0.4], &[1.0]).unwrap()
    }

    fn rel(a: &HermitianMatrix, b: &HermitianMatrix) -> f64 {
        (a - b).frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn integral_examples() {
        let white = SpectralDensity::white();
        let one = HermitianMatrix::identity(1);
        for m in [
            moment_integral_lyapunov(&scalar(), &white, &one).unwrap(),
            moment_integral_quadrature(&scalar(), &white, &one).unwrap().value,
        ] {
            assert!((m.matrix()[(0, 0)].re - 1.0).abs() < 1e-12);
        }
        let eye = HermitianMatrix::identity(2);
        assert!(rel(&moment_integral_lyapunov(&nilpotent(), &white, &half()).unwrap(), &eye) < 1e-12);
        // the oracle for ∫GG* is the Stein solution itself
        let xi = steady_state_covariance(&nilpotent()).unwrap();
        assert!(rel(&xi, &eye) < 1e-14);
    }

    #[test]
    fn cosine_prior_matches_closed_form() {
        // G = [z^{-2}, z^{-1}], G*ΛG ≡ 1, so M = ∫GΨG* = [[1, 0.4], [0.4, 1]]
        let psi = cosine_prior();
        assert!((psi.zeroth_moment().unwrap().value - 1.0).abs() < 1e-12);
        let expected = HermitianMatrix::from_real_rows(&[vec![1.0, 0.4], vec![0.4, 1.0]]).unwrap();
        let lyap = moment_integral_lyapunov(&nilpotent(), &psi, &half()).unwrap();
        let quad = moment_integral_quadrature(&nilpotent(), &psi, &half()).unwrap();
        assert!(quad.converged);
        assert!(rel(&lyap, &expected) < 1e-12);
        assert!(rel(&quad.value, &expected) < 1e-9);
        assert!(rel(&lyap, &quad.value) < 1e-6);
    }

    #[test]
    fn quadrature_grid_doubling() {
        let inst = random_feasible_instance(&mut ChaCha8Rng::seed_from_u64(5), 3, 2).unwrap();
        let lambda = HermitianMatrix::identity(3).scale(1.0 / 3.0);
        let q = moment_integral_quadrature(&inst.fb, &inst.psi, &lambda).unwrap();
        assert!(q.converged && q.last_change < QUADRATURE_TOL);
        let coarse = UnitCircleGrid::new(q.points / 2).unwrap();
        let fine = UnitCircleGrid::new(q.points).unwrap();
        let a = moment_integral_on_grid(&inst.fb, &inst.psi, &lambda, &coarse).unwrap();
        let b = moment_integral_on_grid(&inst.fb, &inst.psi, &lambda, &fine).unwrap();
        assert!((&a - &b).frobenius_norm() < QUADRATURE_TOL);
    }

    #[test]
    fn theta_examples() {
        let white = SpectralDensity::white();
        let t = theta(&scalar(), &white, &DensityMatrix::maximally_mixed(1)).unwrap();
        assert!((t.as_hermitian().matrix()[(0, 0)].re - 1.0).abs() < 1e-12);
        let t = theta(&nilpotent(), &white, &DensityMatrix::maximally_mixed(2)).unwrap();
        assert!(rel(t.as_hermitian(), &half()) < 1e-12);
    }

    #[test]
    fn theta_preserves_kernel() {
        // Λ = diag(1, 0) is singular yet G*ΛG = |z^{-2}|² = 1
        let lambda = DensityMatrix::new(HermitianMatrix::from_real_diagonal(&[1.0, 0.0])).unwrap();
        let t = theta(&nilpotent(), &cosine_prior(), &lambda).unwrap();
        assert_eq!(t.as_hermitian().numerical_rank(1e-9), 1);
        assert!(t.as_hermitian().matrix()[(1, 1)].norm() < 1e-12);
        assert!((t.as_hermitian().trace() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_shift_invariance() {
        let fb = nilpotent();
        let gd = gamma_decomposition(&fb, 32).unwrap();
        let p = &gd.perp_basis()[0];
        let white = SpectralDensity::white();
        for eps in [0.1, 0.3, -0.4] {
            let shifted = &half() + &p.scale(eps);
            let lambda = DensityMatrix::new(shifted.clone()).unwrap();
            let t = theta(&fb, &white, &lambda).unwrap();
            assert!((t.as_hermitian() - &shifted).frobenius_norm() < 1e-8);
            assert!(constraint_residual(&fb, &white, &shifted).unwrap() < 1e-8);
        }
    }

    #[test]
    fn dual_examples_and_ray() {
        let white = SpectralDensity::white();
        assert!((dual_value(&scalar(), &white, &HermitianMatrix::identity(1)).unwrap() - 1.0).abs() < 1e-12);
        assert!((dual_value(&nilpotent(), &white, &half()).unwrap() - 1.0).abs() < 1e-12);
        // J(cΛ) − J(Λ) = c − 1 − log c when tr Λ = 1 and ∫Ψ = 1
        let inst = random_feasible_instance(&mut ChaCha8Rng::seed_from_u64(11), 3, 1).unwrap();
        let lambda = HermitianMatrix::identity(3).scale(1.0 / 3.0);
        let base = dual_value(&inst.fb, &inst.psi, &lambda).unwrap();
        let mut prev = base;
        for c in [1.01, 1.1, 1.5, 3.0] {
            let v = dual_value(&inst.fb, &inst.psi, &lambda.scale(c)).unwrap();
            assert!((v - base - (c - 1.0 - f64::ln(c))).abs() < 1e-9);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn residual_examples() {
        let white = SpectralDensity::white();
        for l in [0.5, 1.0, 2.0] {
            let r = constraint_residual(&scalar(), &white, &HermitianMatrix::from_real_diagonal(&[l])).unwrap();
            assert!((r - (1.0 / l - 1.0).abs()).abs() < 1e-12);
        }
        assert!(constraint_residual(&nilpotent(), &white, &half()).unwrap() < 1e-8);
    }

    #[test]
    fn spectrum_not_positive_propagates() {
        let lambda = HermitianMatrix::from_real_rows(&[vec![0.5, 0.6], vec![0.6, 0.5]]).unwrap();
        let white = SpectralDensity::white();
        assert!(matches!(
            moment_integral_lyapunov(&nilpotent(), &white, &lambda),
            Err(KlError::SpectrumNotPositive { .. })
        ));
        assert!(matches!(
            dual_value(&nilpotent(), &white, &lambda),
            Err(KlError::SpectrumNotPositive { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn routes_agree_and_theta_is_a_density(seed in any::<u64>(), n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_feasible_instance(&mut rng, n, 3).unwrap();
            // random point of the cone: a convex mix of I/n and a random density
            let w = crate::linalg::CMatrix::from_fn(n, n, |_, _| crate::linalg::c(rand::Rng::random::<f64>(&mut rng) - 0.5, rand::Rng::random::<f64>(&mut rng) - 0.5));
            let raw = HermitianMatrix::from_hermitian_part(&(&w * w.adjoint()));
            let raw = raw.scale(1.0 / raw.trace());
            let lambda = &HermitianMatrix::identity(n).scale(0.5 / n as f64) + &raw.scale(0.5);
            let lyap = moment_integral_lyapunov(&inst.fb, &inst.psi, &lambda).unwrap();
            let quad = moment_integral_quadrature(&inst.fb, &inst.psi, &lambda).unwrap();
            prop_assert!(rel(&lyap, &quad.value) < 1e-6, "rel = {:e}", rel(&lyap, &quad.value));
            prop_assert!(lyap.min_eigenvalue() > 0.0);
            let density = DensityMatrix::new(lambda.clone()).unwrap();
            let ev = evaluate_theta(&inst.fb, &inst.psi, &density).unwrap();
            let t = ev.theta.as_hermitian();
            prop_assert!((t.trace() - 1.0).abs() < 1e-10);
            prop_assert!(t.min_eigenvalue() >= -1e-12);
            prop_assert_eq!(t.numerical_rank(1e-9), lambda.numerical_rank(1e-9));
            prop_assert!(descent_derivative(&ev.moment, &lambda, t) <= 1e-12);
        }
    }
}
