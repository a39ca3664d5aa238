//! Rational spectral densities on the unit circle.
//!
//! A density is stored through a stable minimum-phase factor
//! `W(z) = H (zI − F)^{-1} G + D`, with `Ψ(e^{jθ}) = |W(e^{jθ})|²`.
//! All circle integrals are means over uniform grids (the trapezoidal rule
//! for periodic integrands, normalized measure `dθ/2π`).

use std::f64::consts::PI;

use log::warn;
use num_complex::Complex64;

use crate::error::{KlError, Result};
use crate::linalg::{c, eigenvalues, spectral_radius, CMatrix, CVector, CompensatedSum, MatrixAccumulator, ONE, ZERO};

/// Points used by validation checks on the unit circle.
pub const VALIDATION_GRID: usize = 512;
/// Floor under which a density is considered to vanish.
pub const POSITIVITY_FLOOR: f64 = 1e-10;

/// Uniform grid `θ_k = 2πk/N`, `k = 0..N-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitCircleGrid {
    n: usize,
}

impl UnitCircleGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(KlError::GridTooCoarse { grid: n, required: 2 });
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn angle(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n as f64
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|k| self.angle(k))
    }

    pub fn point(&self, k: usize) -> Complex64 {
        Complex64::from_polar(1.0, self.angle(k))
    }

    /// Trapezoidal mean of grid samples.
    pub fn mean(&self, values: &[f64]) -> f64 {
        let mut s = CompensatedSum::default();
        for &v in values {
            s.add(v);
        }
        s.value() / values.len() as f64
    }
}

/// Grid-doubling quadrature on the circle.
///
/// Starts from `start` points and doubles (reusing previous samples) until two
/// successive means differ by less than `tol`, or `max` points are reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveQuadrature {
    pub start: usize,
    pub max: usize,
    pub tol: f64,
}

impl Default for AdaptiveQuadrature {
    fn default() -> Self {
        Self {
            start: 512,
            max: 65536,
            tol: 1e-10,
        }
    }
}

/// Result of an adaptive circle integral.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature<T> {
    pub value: T,
    pub points: usize,
    pub last_change: f64,
    pub converged: bool,
}

impl AdaptiveQuadrature {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    /// Mean of a scalar function of the angle.
    pub fn mean(&self, f: impl Fn(f64) -> Result<f64>) -> Result<Quadrature<f64>> {
        let mut n = self.start.max(2);
        let mut sum = CompensatedSum::default();
        for k in 0..n {
            sum.add(f(2.0 * PI * k as f64 / n as f64)?);
        }
        let mut value = sum.value() / n as f64;
        loop {
            if 2 * n > self.max.max(self.start) {
                warn!("circle quadrature stopped at {n} points without meeting tolerance");
                return Ok(Quadrature {
                    value,
                    points: n,
                    last_change: f64::INFINITY,
                    converged: false,
                });
            }
            for k in 0..n {
                sum.add(f(PI * (2 * k + 1) as f64 / n as f64)?);
            }
            n *= 2;
            let next = sum.value() / n as f64;
            let change = (next - value).abs();
            value = next;
            if change < self.tol {
                return Ok(Quadrature {
                    value,
                    points: n,
                    last_change: change,
                    converged: true,
                });
            }
        }
    }

    /// Mean of a matrix-valued function. `f(θ, acc)` adds its sample into
    /// `acc`; convergence is judged on the Frobenius norm of the change.
    pub fn mean_matrix(
        &self,
        rows: usize,
        cols: usize,
        f: impl Fn(f64, &mut MatrixAccumulator) -> Result<()>,
    ) -> Result<Quadrature<CMatrix>> {
        let mut n = self.start.max(2);
        let mut acc = MatrixAccumulator::new(rows, cols);
        for k in 0..n {
            f(2.0 * PI * k as f64 / n as f64, &mut acc)?;
        }
        let mut value = acc.value().unscale(n as f64);
        loop {
            if 2 * n > self.max.max(self.start) {
                warn!("matrix circle quadrature stopped at {n} points without meeting tolerance");
                return Ok(Quadrature {
                    value,
                    points: n,
                    last_change: f64::INFINITY,
                    converged: false,
                });
            }
            for k in 0..n {
                f(PI * (2 * k + 1) as f64 / n as f64, &mut acc)?;
            }
            n *= 2;
            let next = acc.value().unscale(n as f64);
            let change = crate::linalg::frobenius(&(&next - &value));
            value = next;
            if change < self.tol {
                return Ok(Quadrature {
                    value,
                    points: n,
                    last_change: change,
                    converged: true,
                });
            }
        }
    }
}

/// State-space quadruple of `W(z) = H (zI − F)^{-1} G + D`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub f: CMatrix,
    pub g: CVector,
    pub h: CMatrix,
    pub d: Complex64,
}

impl StateSpace {
    pub fn new(f: CMatrix, g: CVector, h: CMatrix, d: Complex64) -> Result<Self> {
        let m = f.nrows();
        if f.ncols() != m || g.len() != m || h.nrows() != 1 || h.ncols() != m {
            return Err(KlError::DimensionMismatch(format!(
                "state-space data: F {}x{}, G {}, H {}x{}",
                f.nrows(),
                f.ncols(),
                g.len(),
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(Self { f, g, h, d })
    }

    /// Constant transfer function `d`.
    pub fn constant(d: Complex64) -> Self {
        Self {
            f: CMatrix::zeros(0, 0),
            g: CVector::zeros(0),
            h: CMatrix::zeros(1, 0),
            d,
        }
    }

    pub fn order(&self) -> usize {
        self.f.nrows()
    }

    pub fn eval(&self, z: Complex64) -> Option<Complex64> {
        let m = self.order();
        if m == 0 {
            return Some(self.d);
        }
        let mut zi = -self.f.clone();
        for i in 0..m {
            zi[(i, i)] += z;
        }
        let x = zi.lu().solve(&self.g)?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return None;
        }
        Some((&self.h * x)[(0, 0)] + self.d)
    }
}

/// Stable minimum-phase spectral factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFactor {
    ss: StateSpace,
}

impl SpectralFactor {
    /// Validates stability of `F`, the minimum-phase property and
    /// non-vanishing on the validation grid.
    pub fn new(ss: StateSpace) -> Result<Self> {
        let rho = spectral_radius(&ss.f)?;
        if rho >= 1.0 {
            return Err(KlError::InvalidFactor(format!(
                "F is not stable (spectral radius {rho:.6})"
            )));
        }
        if ss.d != ZERO && ss.order() > 0 {
            let zf = &ss.f - (&ss.g * &ss.h) / ss.d;
            let worst = eigenvalues(&zf)?.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if worst > 1.0 + 1e-8 {
                return Err(KlError::InvalidFactor(format!(
                    "factor is not minimum phase (zero of modulus {worst:.6})"
                )));
            }
        }
        let grid = UnitCircleGrid::new(VALIDATION_GRID)?;
        for k in 0..grid.len() {
            let w = ss
                .eval(grid.point(k))
                .ok_or(KlError::EvaluationSingular { theta: grid.angle(k) })?;
            if w.norm() <= POSITIVITY_FLOOR {
                return Err(KlError::InvalidFactor(format!(
                    "factor vanishes at θ = {:.6}",
                    grid.angle(k)
                )));
            }
        }
        Ok(Self { ss })
    }

    pub fn white() -> Self {
        Self {
            ss: StateSpace::constant(ONE),
        }
    }

    /// Causal ARMA factor `b(z^{-1}) / a(z^{-1})` with real coefficients
    /// `b_0 + b_1 z^{-1} + ...` and `a_0 + a_1 z^{-1} + ...`, realized in
    /// controllable canonical form.
    pub fn from_arma(b: &[f64], a: &[f64]) -> Result<Self> {
        let a = trim_trailing_zeros(a);
        let b = trim_trailing_zeros(b);
        if a.is_empty() || a[0] == 0.0 {
            return Err(KlError::InvalidFactor("denominator must have a_0 ≠ 0".into()));
        }
        if b.is_empty() {
            return Err(KlError::InvalidFactor("numerator is zero".into()));
        }
        let a0 = a[0];
        let m = (a.len().max(b.len())) - 1;
        let an: Vec<f64> = (0..=m).map(|k| a.get(k).copied().unwrap_or(0.0) / a0).collect();
        let bn: Vec<f64> = (0..=m).map(|k| b.get(k).copied().unwrap_or(0.0) / a0).collect();
        let mut f = CMatrix::zeros(m, m);
        for j in 0..m {
            f[(0, j)] = c(-an[j + 1], 0.0);
        }
        for i in 1..m {
            f[(i, i - 1)] = ONE;
        }
        let mut g = CVector::zeros(m);
        if m > 0 {
            g[0] = ONE;
        }
        let h = CMatrix::from_fn(1, m, |_, j| c(bn[j + 1] - an[j + 1] * bn[0], 0.0));
        Self::new(StateSpace::new(f, g, h, c(bn[0], 0.0))?)
    }

    pub fn state_space(&self) -> &StateSpace {
        &self.ss
    }

    pub fn order(&self) -> usize {
        self.ss.order()
    }

    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        self.ss.eval(z).ok_or(KlError::EvaluationSingular { theta: z.arg() })
    }

    /// Multiplies the transfer function by a real scalar.
    pub fn scaled(&self, s: f64) -> Self {
        let mut ss = self.ss.clone();
        ss.h = ss.h.scale(s);
        ss.d *= s;
        Self { ss }
    }
}

fn trim_trailing_zeros(v: &[f64]) -> &[f64] {
    let mut end = v.len();
    while end > 0 && v[end - 1] == 0.0 {
        end -= 1;
    }
    &v[..end]
}

/// Real symmetric Laurent polynomial `c_0 + Σ_{k≥1} c_k (z^k + z^{-k})`,
/// i.e. `c_0 + 2 Σ c_k cos kθ` on the circle.
fn laurent_value(coeffs: &[f64], theta: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, &ck)| if k == 0 { ck } else { 2.0 * ck * (k as f64 * theta).cos() })
        .sum()
}

/// Roots of `Σ p_k z^k` (ascending coefficients) via the companion matrix.
fn polynomial_roots(p: &[Complex64]) -> Result<Vec<Complex64>> {
    let deg = p.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = p[deg];
    let mut comp = CMatrix::zeros(deg, deg);
    for j in 0..deg {
        comp[(0, j)] = -p[deg - 1 - j] / lead;
    }
    for i in 1..deg {
        comp[(i, i - 1)] = ONE;
    }
    eigenvalues(&comp)
}

/// Minimum-phase factor `b(z^{-1})` (real coefficients, ascending powers of
/// `z^{-1}`) of a positive symmetric Laurent polynomial.
fn laurent_spectral_factor(coeffs: &[f64]) -> Result<Vec<f64>> {
    let coeffs = trim_trailing_zeros(coeffs);
    if coeffs.is_empty() {
        return Err(KlError::InvalidFactor("Laurent polynomial is zero".into()));
    }
    let m = coeffs.len() - 1;
    let grid = UnitCircleGrid::new(VALIDATION_GRID.max(8 * (m + 1)))?;
    let samples: Vec<f64> = grid.angles().map(|t| laurent_value(coeffs, t)).collect();
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= POSITIVITY_FLOOR {
        return Err(KlError::SpectrumNotPositive { min_value: min });
    }
    if m == 0 {
        return Ok(vec![coeffs[0].sqrt()]);
    }
    // z^m N(z) has ascending coefficients p_{m+j} = c_|j|
    let p: Vec<Complex64> = (0..=2 * m)
        .map(|k| c(coeffs[(k as isize - m as isize).unsigned_abs()], 0.0))
        .collect();
    let mut roots = polynomial_roots(&p)?;
    roots.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    roots.truncate(m);
    // Π (1 − r_i z^{-1})
    let mut poly = vec![ONE];
    for r in &roots {
        let mut next = vec![ZERO; poly.len() + 1];
        for (k, &pk) in poly.iter().enumerate() {
            next[k] += pk;
            next[k + 1] -= pk * r;
        }
        poly = next;
    }
    // least-squares gain: N ≈ κ² |P|²
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &nk) in samples.iter().enumerate() {
        let zinv = grid.point(k).conj();
        let mut acc = ZERO;
        for pk in poly.iter().rev() {
            acc = acc * zinv + pk;
        }
        let p2 = acc.norm_sqr();
        num += nk * p2;
        den += p2 * p2;
    }
    let kappa = (num / den).sqrt();
    Ok(poly.iter().map(|z| kappa * z.re).collect())
}

/// Spectral density `Ψ = |W|²` of a validated factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    factor: SpectralFactor,
}

impl SpectralDensity {
    pub fn new(factor: SpectralFactor) -> Self {
        Self { factor }
    }

    /// `Ψ ≡ 1`.
    pub fn white() -> Self {
        Self::new(SpectralFactor::white())
    }

    /// Rational density `N/D` where `num` and `den` hold the coefficients
    /// `c_0, c_1, ...` of `c_0 + Σ c_k (z^k + z^{-k})`. A minimum-phase
    /// factor is obtained from the roots of `z^m N(z)` and `z^m D(z)`.
    pub fn from_rational(num: &[f64], den: &[f64]) -> Result<Self> {
        let b = laurent_spectral_factor(num)?;
        let a = laurent_spectral_factor(den)?;
        Ok(Self::new(SpectralFactor::from_arma(&b, &a)?))
    }

    pub fn factor(&self) -> &SpectralFactor {
        &self.factor
    }

    pub fn value_at(&self, theta: f64) -> Result<f64> {
        Ok(self.factor.eval(Complex64::from_polar(1.0, theta))?.norm_sqr())
    }

    /// `Ψ(θ_k)` on the grid; every value must exceed the positivity floor.
    pub fn evaluate(&self, grid: &UnitCircleGrid) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let w = self
                .factor
                .ss
                .eval(grid.point(k))
                .ok_or(KlError::EvaluationSingular { theta: grid.angle(k) })?;
            let v = w.norm_sqr();
            if !(v > POSITIVITY_FLOOR) {
                return Err(KlError::SpectrumNotPositive { min_value: v });
            }
            out.push(v);
        }
        Ok(out)
    }

    /// `∫Ψ` by adaptive quadrature.
    pub fn zeroth_moment(&self) -> Result<Quadrature<f64>> {
        AdaptiveQuadrature::default().mean(|t| self.value_at(t))
    }

    /// Rescales the factor by `√(α / ∫Ψ)` so that `∫Ψ = α`.
    pub fn normalize_zeroth_moment(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(KlError::InvalidConfig(format!("zeroth moment target {alpha} must be positive")));
        }
        let moment = self.zeroth_moment()?.value;
        Ok(Self::new(self.factor.scaled((alpha / moment).sqrt())))
    }
}

/// `∫ Ψ log(Ψ/Φ)` from samples on a uniform grid.
pub fn kl_divergence(psi: &[f64], phi: &[f64], grid: &UnitCircleGrid) -> Result<f64> {
    if psi.len() != grid.len() || phi.len() != grid.len() {
        return Err(KlError::DimensionMismatch(format!(
            "grid has {} points, got {} and {} samples",
            grid.len(),
            psi.len(),
            phi.len()
        )));
    }
    let mut sum = CompensatedSum::default();
    for (&p, &q) in psi.iter().zip(phi) {
        if !(p > 0.0) || !(q > 0.0) {
            return Err(KlError::SpectrumNotPositive { min_value: p.min(q) });
        }
        sum.add(p * (p / q).ln());
    }
    Ok(sum.value() / grid.len() as f64)
}
