//! The filter bank `G(z) = (zI − A)^{-1} B`, problem normalization,
//! feasibility of the moment constraint and the decomposition of the
//! Hermitian matrices into `Range Γ` and its orthogonal complement.

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{KlError, Result};
use crate::hermitian::{HermitianBasis, HermitianMatrix};
use crate::linalg::{c, frobenius, numerical_rank, singular_values, solve_stein, spectral_radius, CMatrix, CVector};
use crate::spectral::{SpectralFactor, UnitCircleGrid};

/// Relative SVD threshold for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-10;
/// Relative SVD threshold for the null space of `X ↦ G*XG`.
pub const NULLSPACE_TOL: f64 = 1e-8;

/// `G(z) = (zI − A)^{-1} B` with a stable `A` and a reachable pair `(A, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    a: CMatrix,
    b: CVector,
    spectral_radius: f64,
    sigma_min: f64,
}

impl FilterBank {
    pub fn new(a: CMatrix, b: CVector) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || b.len() != n {
            return Err(KlError::DimensionMismatch(format!(
                "filter bank needs A n x n and B n x 1 with n ≥ 1, got A {}x{} and B {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(KlError::InvalidConfig("filter bank has non-finite entries".into()));
        }
        let rho = spectral_radius(&a)?;
        if rho >= 1.0 {
            return Err(KlError::UnstableA { spectral_radius: rho });
        }
        let mut reach = CMatrix::zeros(n, n);
        let mut col = b.clone();
        for j in 0..n {
            reach.set_column(j, &col);
            col = &a * col;
        }
        let rank = numerical_rank(&reach, RANK_TOL);
        if rank < n {
            return Err(KlError::NotReachable { rank, n });
        }
        let sv = singular_values(&a);
        let sigma_min = sv.last().copied().unwrap_or(0.0);
        Ok(Self {
            a,
            b,
            spectral_radius: rho,
            sigma_min,
        })
    }

    pub fn from_real(a: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let n = a.len();
        if a.iter().any(|r| r.len() != n) {
            return Err(KlError::DimensionMismatch("A must be square".into()));
        }
        Self::new(
            DMatrix::from_fn(n, n, |i, j| c(a[i][j], 0.0)),
            DVector::from_iterator(b.len(), b.iter().map(|&v| c(v, 0.0))),
        )
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    pub fn b(&self) -> &CVector {
        &self.b
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// Smallest singular value of `A`.
    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// Whether `A` has an eigenvalue at the origin (numerically singular).
    pub fn has_singular_a(&self) -> bool {
        let scale = frobenius(&self.a).max(1.0);
        self.sigma_min <= RANK_TOL * scale
    }

    /// Errors unless `A` is singular; the zeroth moment of feasible spectra
    /// is only pinned in that case.
    pub fn require_singular_a(&self) -> Result<()> {
        if self.has_singular_a() {
            Ok(())
        } else {
            Err(KlError::NonsingularA {
                sigma_min: self.sigma_min,
            })
        }
    }

    /// `G(z)`.
    pub fn transfer(&self, z: Complex64) -> Result<CVector> {
        let n = self.n();
        let mut m = -self.a.clone();
        for i in 0..n {
            m[(i, i)] += z;
        }
        m.lu()
            .solve(&self.b)
            .ok_or(KlError::EvaluationSingular { theta: z.arg() })
    }

    pub fn transfer_at(&self, theta: f64) -> Result<CVector> {
        self.transfer(Complex64::from_polar(1.0, theta))
    }

    /// `G(e^{jθ_k})` for every grid point.
    pub fn samples(&self, grid: &UnitCircleGrid) -> Result<Vec<CVector>> {
        (0..grid.len()).map(|k| self.transfer(grid.point(k))).collect()
    }

    /// Left null vector `v` of `A` (`v* A = 0`), unit norm.
    fn left_null_vector(&self) -> Result<CVector> {
        self.require_singular_a()?;
        let aa = HermitianMatrix::from_hermitian_part(&(&self.a * self.a.adjoint()));
        let (_, u) = aa.eigen();
        Ok(u.column(0).into_owned())
    }

    /// Zeroth moment `∫Φ` shared by every `Φ` with `∫GΦG* = Σ`, computed as
    /// `v*Σv / |v*B|²` from a left null vector of `A`.
    pub fn zeroth_moment_for(&self, sigma: &HermitianMatrix) -> Result<f64> {
        let v = self.left_null_vector()?;
        let vb = (v.adjoint() * &self.b)[(0, 0)].norm_sqr();
        Ok(sigma.quadratic_form(&v) / vb)
    }
}

/// Maps the problem with covariance `Σ` and zeroth moment `α` to the
/// equivalent one with `Σ = I` and `∫Ψ = 1`:
/// `A' = Σ^{-1/2} A Σ^{1/2}`, `B' = √α Σ^{-1/2} B`.
pub fn normalize_problem(fb: &FilterBank, sigma: &HermitianMatrix, alpha: f64) -> Result<FilterBank> {
    if sigma.dim() != fb.n() {
        return Err(KlError::DimensionMismatch(format!(
            "sigma is {}x{}, filter bank has n = {}",
            sigma.dim(),
            sigma.dim(),
            fb.n()
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(KlError::InvalidConfig(format!("alpha = {alpha} must be positive")));
    }
    let inv_sqrt = sigma.inverse_sqrt().map_err(|_| KlError::SigmaNotPD {
        min_eigenvalue: sigma.min_eigenvalue(),
    })?;
    let sqrt = sigma.sqrt().map_err(|_| KlError::SigmaNotPD {
        min_eigenvalue: sigma.min_eigenvalue(),
    })?;
    let a = inv_sqrt.matrix() * fb.a() * sqrt.matrix();
    let b = (inv_sqrt.matrix() * fb.b()).scale(alpha.sqrt());
    FilterBank::new(a, b)
}

/// Solution `Ξ` of `Ξ − AΞA* = BB*`, i.e. `∫GG*`.
pub fn steady_state_covariance(fb: &FilterBank) -> Result<HermitianMatrix> {
    let q = fb.b() * fb.b().adjoint();
    let xi = solve_stein(fb.a(), &q).map_err(|_| KlError::UnstableA {
        spectral_radius: fb.spectral_radius(),
    })?;
    Ok(HermitianMatrix::from_hermitian_part(&xi))
}

/// Steady-state covariance of the cascade `x' = Fx + Gu`, `y = Hx + Du`,
/// `s' = Z s + K y`, i.e. `∫ (zI−Z)^{-1} K |W|² K* (zI−Z)^{-*}`.
pub(crate) fn cascade_covariance(
    factor: &SpectralFactor,
    z: &CMatrix,
    k: &CVector,
) -> Result<HermitianMatrix> {
    let ss = factor.state_space();
    let m = ss.order();
    let n = z.nrows();
    let mut f_hat = CMatrix::zeros(m + n, m + n);
    f_hat.view_mut((0, 0), (m, m)).copy_from(&ss.f);
    f_hat.view_mut((m, m), (n, n)).copy_from(z);
    if m > 0 {
        f_hat.view_mut((m, 0), (n, m)).copy_from(&(k * &ss.h));
    }
    let mut g_hat = CVector::zeros(m + n);
    g_hat.rows_mut(0, m).copy_from(&ss.g);
    g_hat.rows_mut(m, n).copy_from(&k.map(|v| v * ss.d));
    let xi = solve_stein(&f_hat, &(&g_hat * g_hat.adjoint()))?;
    Ok(HermitianMatrix::from_hermitian_part(
        &xi.view((m, m), (n, n)).into_owned(),
    ))
}

/// `∫ G Φ G*` for `Φ = |W|²`: the state covariance of the bank driven by a
/// process with spectral factor `W`.
pub fn output_covariance(fb: &FilterBank, factor: &SpectralFactor) -> Result<HermitianMatrix> {
    cascade_covariance(factor, fb.a(), fb.b())
}

/// Outcome of the feasibility tests for `∫GΦG* = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityVerdict {
    /// Rank of `[[I − AA*, B], [B*, 0]]`.
    pub rank_lhs: usize,
    /// Rank of `[[0, B], [B*, 0]]`.
    pub rank_rhs: usize,
    pub rank_condition: bool,
    /// `‖I − proj_{Range Γ}(I)‖_F`.
    pub identity_distance: f64,
    pub identity_in_range: bool,
    pub n_perp: usize,
    pub singular_a: bool,
    /// The two tests agree.
    pub consistent: bool,
}

impl FeasibilityVerdict {
    pub fn feasible(&self) -> bool {
        self.rank_condition && self.identity_in_range
    }
}

pub fn check_feasibility(fb: &FilterBank) -> Result<FeasibilityVerdict> {
    let n = fb.n();
    let aa = CMatrix::identity(n, n) - fb.a() * fb.a().adjoint();
    let mut lhs = CMatrix::zeros(n + 1, n + 1);
    let mut rhs = CMatrix::zeros(n + 1, n + 1);
    lhs.view_mut((0, 0), (n, n)).copy_from(&aa);
    for m in [&mut lhs, &mut rhs] {
        m.view_mut((0, n), (n, 1)).copy_from(fb.b());
        m.view_mut((n, 0), (1, n)).copy_from(&fb.b().adjoint());
    }
    let rank_lhs = numerical_rank(&lhs, RANK_TOL);
    let rank_rhs = numerical_rank(&rhs, RANK_TOL);
    let rank_condition = rank_lhs == rank_rhs;

    let gd = gamma_decomposition(fb, default_gamma_grid(n))?;
    let identity = HermitianMatrix::identity(n);
    let identity_distance = gd.project_perp(&identity).frobenius_norm();
    let identity_in_range = identity_distance <= 1e-8 * (n as f64).sqrt();
    let consistent = rank_condition == identity_in_range;
    if !consistent {
        warn!(
            "feasibility tests disagree: rank condition {rank_condition}, I ∈ Range Γ {identity_in_range} (distance {identity_distance:.3e})"
        );
    }
    Ok(FeasibilityVerdict {
        rank_lhs,
        rank_rhs,
        rank_condition,
        identity_distance,
        identity_in_range,
        n_perp: gd.n_perp(),
        singular_a: fb.has_singular_a(),
        consistent,
    })
}

/// Orthonormal bases of `Range Γ⊥ = {X : G*XG ≡ 0}` and of `Range Γ`.
#[derive(Debug, Clone)]
pub struct GammaDecomposition {
    n: usize,
    perp_basis: Vec<HermitianMatrix>,
    range_basis: Vec<HermitianMatrix>,
}

/// Grid used when the caller does not choose one.
pub fn default_gamma_grid(n: usize) -> usize {
    (8 * n).max(64)
}

impl GammaDecomposition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_perp(&self) -> usize {
        self.perp_basis.len()
    }

    pub fn perp_basis(&self) -> &[HermitianMatrix] {
        &self.perp_basis
    }

    pub fn range_basis(&self) -> &[HermitianMatrix] {
        &self.range_basis
    }

    /// `perp_basis` followed by `range_basis`, as one orthonormal basis.
    pub fn adapted_basis(&self) -> Result<HermitianBasis> {
        HermitianBasis::new(
            self.perp_basis
                .iter()
                .chain(self.range_basis.iter())
                .cloned()
                .collect(),
        )
    }

    fn project(basis: &[HermitianMatrix], m: &HermitianMatrix) -> HermitianMatrix {
        let mut out = HermitianMatrix::zeros(m.dim());
        for e in basis {
            out = &out + &e.scale(e.inner(m));
        }
        out
    }

    pub fn project_perp(&self, m: &HermitianMatrix) -> HermitianMatrix {
        Self::project(&self.perp_basis, m)
    }

    pub fn project_range(&self, m: &HermitianMatrix) -> HermitianMatrix {
        Self::project(&self.range_basis, m)
    }
}

/// Null space of `X ↦ (G*XG)(θ_k)` sampled on a grid, by SVD in the
/// standard coordinates of the Hermitian matrices.
pub fn gamma_decomposition(fb: &FilterBank, grid_size: usize) -> Result<GammaDecomposition> {
    let n = fb.n();
    if grid_size < 2 * n {
        return Err(KlError::GridTooCoarse {
            grid: grid_size,
            required: 2 * n,
        });
    }
    let grid = UnitCircleGrid::new(grid_size)?;
    let basis = HermitianBasis::standard(n);
    let dim = n * n;
    let rows = grid_size.max(dim);
    let mut s = DMatrix::<f64>::zeros(rows, dim);
    for k in 0..grid.len() {
        let g = fb.transfer(grid.point(k))?;
        let w = 1.0 / g.norm_squared();
        for (j, e) in basis.elements().iter().enumerate() {
            s[(k, j)] = w * e.quadratic_form(&g);
        }
    }
    let svd = s.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| KlError::DimensionMismatch("SVD failed".into()))?;
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut perp_basis = Vec::new();
    let mut range_basis = Vec::new();
    for (idx, &sv) in svd.singular_values.iter().enumerate() {
        let coords = v_t.row(idx).transpose();
        let m = basis.from_coordinates(&coords)?;
        if sv <= NULLSPACE_TOL * smax {
            perp_basis.push(m);
        } else {
            range_basis.push(m);
        }
    }
    Ok(GammaDecomposition {
        n,
        perp_basis,
        range_basis,
    })
}

/// Sample state covariance of `x(t+1) = A x(t) + B y(t)` from `x(0) = 0`,
/// over `t > burn_in`. The process is zero mean, so no centering is applied.
pub fn estimate_sigma(fb: &FilterBank, samples: &[Complex64], burn_in: usize) -> Result<HermitianMatrix> {
    let n = fb.n();
    let required = burn_in + 10 * n;
    if samples.len() <= required {
        return Err(KlError::InsufficientData {
            got: samples.len(),
            required,
        });
    }
    let mut x = CVector::zeros(n);
    let mut acc = CMatrix::zeros(n, n);
    let mut count = 0usize;
    for (t, &y) in samples.iter().enumerate() {
        x = fb.a() * &x + fb.b().map(|b| b * y);
        // x now holds x(t + 1)
        if t + 1 > burn_in {
            acc += &x * x.adjoint();
            count += 1;
        }
    }
    Ok(HermitianMatrix::from_hermitian_part(&acc.unscale(count as f64)))
}

/// Parses one complex sample per line as `re,im` (a lone `re` is accepted).
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_time_series(text: &str) -> Result<Vec<Complex64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| -> Result<f64> {
            s.unwrap_or("0").parse::<f64>().map_err(|e| {
                KlError::InvalidConfig(format!("line {}: cannot parse `{line}`: {e}", lineno + 1))
            })
        };
        let re = parse(parts.next())?;
        let im = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(KlError::InvalidConfig(format!(
                "line {}: expected `re,im`, got `{line}`",
                lineno + 1
            )));
        }
        out.push(c(re, im));
    }
    Ok(out)
}
