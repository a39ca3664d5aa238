//! Linearization of `Θ` at a fixed point `Λ∘ ≻ 0`:
//!
//! `𝓜(X) = X − Λ∘^{1/2} ∫ G (Ψ / (G*Λ∘G)²) (G*XG) G* Λ∘^{1/2}`.
//!
//! The integral is evaluated by quadrature on a grid fine enough that the
//! constraint integral at `Λ∘` is resolved to about `1e-13`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{KlError, Result};
use crate::filter_bank::{FilterBank, GammaDecomposition};
use crate::hermitian::{HermitianBasis, HermitianMatrix};
use crate::linalg::{c, complex_schur, CMatrix, CVector, MatrixAccumulator};
use crate::moments::{moment_integral, moment_integral_adaptive, theta_unnormalized};
use crate::spectral::{AdaptiveQuadrature, SpectralDensity, UnitCircleGrid};

/// Largest constraint residual accepted at `Λ∘`.
pub const FIXED_POINT_TOL: f64 = 1e-6;
/// Eigenvalues within this distance of one belong to the identity block.
pub const IDENTITY_TOL: f64 = 1e-7;

const GRID_TOL: f64 = 1e-13;

/// `𝓜` at a fixed point, with the quadrature nodes precomputed.
#[derive(Debug, Clone)]
pub struct LinearizedMap {
    n: usize,
    sqrt_lambda: HermitianMatrix,
    lambda: HermitianMatrix,
    g: Vec<CVector>,
    /// `Ψ / (G*Λ∘G)²` at each node.
    weight: Vec<f64>,
    psi: Vec<f64>,
    glg: Vec<f64>,
    residual: f64,
}

impl LinearizedMap {
    /// Checks the fixed-point residual and picks the quadrature grid.
    pub fn new(fb: &FilterBank, psi: &SpectralDensity, lambda_circ: &HermitianMatrix) -> Result<Self> {
        let n = fb.n();
        if lambda_circ.dim() != n {
            return Err(KlError::DimensionMismatch(format!(
                "lambda is {0}x{0}, filter bank has n = {n}",
                lambda_circ.dim()
            )));
        }
        let min = lambda_circ.min_eigenvalue();
        if !(min > 0.0) {
            return Err(KlError::SingularBase { min_eigenvalue: min });
        }
        let residual = (&moment_integral(fb, psi, lambda_circ)? - &HermitianMatrix::identity(n)).frobenius_norm();
        if residual > FIXED_POINT_TOL {
            return Err(KlError::NotAFixedPoint { residual });
        }
        let rule = AdaptiveQuadrature {
            start: 256,
            max: 1 << 17,
            tol: GRID_TOL,
        };
        let points = moment_integral_adaptive(fb, psi, lambda_circ, rule)?.points;
        Self::on_grid(fb, psi, lambda_circ, &UnitCircleGrid::new(points)?, residual)
    }

    fn on_grid(
        fb: &FilterBank,
        psi: &SpectralDensity,
        lambda: &HermitianMatrix,
        grid: &UnitCircleGrid,
        residual: f64,
    ) -> Result<Self> {
        let g = fb.samples(grid)?;
        let psi_values = psi.evaluate(grid)?;
        let glg: Vec<f64> = g.iter().map(|g| lambda.quadratic_form(g)).collect();
        if let Some(&bad) = glg.iter().find(|v| !(**v > 0.0)) {
            return Err(KlError::SpectrumNotPositive { min_value: bad });
        }
        let weight = psi_values.iter().zip(&glg).map(|(p, q)| p / (q * q)).collect();
        Ok(Self {
            n: fb.n(),
            sqrt_lambda: lambda.sqrt()?,
            lambda: lambda.clone(),
            g,
            weight,
            psi: psi_values,
            glg,
            residual,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid_points(&self) -> usize {
        self.g.len()
    }

    /// `‖∫G(Ψ/G*Λ∘G)G* − I‖_F` at construction.
    pub fn fixed_point_residual(&self) -> f64 {
        self.residual
    }

    pub fn lambda(&self) -> &HermitianMatrix {
        &self.lambda
    }

    /// `∫ G (Ψ/(G*ΛG)²)(G*XG) G*`.
    fn kernel_integral(&self, x: &HermitianMatrix) -> CMatrix {
        let mut acc = MatrixAccumulator::new(self.n, self.n);
        for (g, w) in self.g.iter().zip(&self.weight) {
            acc.add_outer(g, g, w * x.quadratic_form(g));
        }
        acc.value().unscale(self.g.len() as f64)
    }

    pub fn apply(&self, x: &HermitianMatrix) -> Result<HermitianMatrix> {
        if x.dim() != self.n {
            return Err(KlError::DimensionMismatch("argument has wrong size".into()));
        }
        let s = self.sqrt_lambda.matrix();
        let inner = s * self.kernel_integral(x) * s;
        Ok(x - &HermitianMatrix::from_hermitian_part(&inner))
    }

    /// `∫ Ψ (G*YG)² / (G*Λ∘G)²`.
    pub fn rayleigh_numerator(&self, y: &HermitianMatrix) -> f64 {
        let mut s = crate::linalg::CompensatedSum::default();
        for (g, w) in self.g.iter().zip(&self.weight) {
            let v = y.quadratic_form(g);
            s.add(w * v * v);
        }
        s.value() / self.g.len() as f64
    }

    /// `L(θ_k) = Λ∘^{1/2} G (Ψ^{1/2} / G*Λ∘G) G*` at every node.
    pub fn lindblad_samples(&self) -> Vec<CMatrix> {
        self.g
            .iter()
            .zip(self.psi.iter().zip(&self.glg))
            .map(|(g, (p, q))| (self.sqrt_lambda.matrix() * g * g.adjoint()).scale(p.sqrt() / q))
            .collect()
    }
}

pub fn apply_m(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda_circ: &HermitianMatrix,
    x: &HermitianMatrix,
) -> Result<HermitianMatrix> {
    LinearizedMap::new(fb, psi, lambda_circ)?.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenClass {
    IdentityBlock,
    Contractive,
}

impl EigenClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            EigenClass::IdentityBlock => "identity-block",
            EigenClass::Contractive => "contractive",
        }
    }
}

/// Matrix of `𝓜` in the basis `perp_basis ∪ range_basis`.
#[derive(Debug, Clone)]
pub struct LinearizedMapRep {
    pub matrix: DMatrix<f64>,
    pub basis: HermitianBasis,
    pub n_perp: usize,
    /// Sorted by decreasing real part.
    pub eigenvalues: Vec<Complex64>,
    pub classes: Vec<EigenClass>,
    /// `1 − max Re λ` over the contractive eigenvalues; `1` when there are none.
    pub spectral_gap: f64,
    /// `max |M[perp, perp] − I|`.
    pub perp_block_deviation: f64,
    /// `max |M[range, perp]|`.
    pub lower_left_norm: f64,
    /// `max |tr 𝓜(E_j)|` over the basis.
    pub max_column_trace: f64,
    pub lindblad_samples: Vec<CMatrix>,
}

impl LinearizedMapRep {
    pub fn max_imaginary(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn min_real(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
    }

    pub fn max_real(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn identity_count(&self) -> usize {
        self.classes.iter().filter(|c| **c == EigenClass::IdentityBlock).count()
    }

    /// Hermitian matrix `Y` with `𝓜(Y) ≈ αY`, from the smallest right
    /// singular vector of `M − αI`.
    pub fn eigenmatrix(&self, alpha: f64) -> Result<HermitianMatrix> {
        let d = self.matrix.nrows();
        let shifted = &self.matrix - DMatrix::identity(d, d) * alpha;
        let svd = shifted.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| KlError::DimensionMismatch("SVD did not return vectors".into()))?;
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let x: DVector<f64> = v_t.row(k).transpose();
        self.basis.from_coordinates(&x)
    }
}

pub fn build_matrix_rep(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda_circ: &HermitianMatrix,
    gd: &GammaDecomposition,
) -> Result<LinearizedMapRep> {
    let map = LinearizedMap::new(fb, psi, lambda_circ)?;
    matrix_rep_of(&map, gd)
}

pub fn matrix_rep_of(map: &LinearizedMap, gd: &GammaDecomposition) -> Result<LinearizedMapRep> {
    if gd.n() != map.n() {
        return Err(KlError::DimensionMismatch("decomposition has wrong size".into()));
    }
    let basis = gd.adapted_basis()?;
    let d = basis.len();
    let mut matrix = DMatrix::zeros(d, d);
    let mut max_column_trace: f64 = 0.0;
    for (j, e) in basis.elements().iter().enumerate() {
        let image = map.apply(e)?;
        max_column_trace = max_column_trace.max(image.trace().abs());
        matrix.set_column(j, &basis.coordinates(&image)?);
    }
    let n_perp = gd.n_perp();
    let mut perp_block_deviation: f64 = 0.0;
    let mut lower_left_norm: f64 = 0.0;
    for j in 0..n_perp {
        for i in 0..d {
            let v = matrix[(i, j)];
            if i < n_perp {
                let target = if i == j { 1.0 } else { 0.0 };
                perp_block_deviation = perp_block_deviation.max((v - target).abs());
            } else {
                lower_left_norm = lower_left_norm.max(v.abs());
            }
        }
    }

    let (_, t) = complex_schur(&matrix.map(|v| c(v, 0.0)))?;
    let mut eigenvalues: Vec<Complex64> = t.diagonal().iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re));
    let classes: Vec<EigenClass> = eigenvalues
        .iter()
        .map(|z| {
            if (z - 1.0).norm() <= IDENTITY_TOL {
                EigenClass::IdentityBlock
            } else {
                EigenClass::Contractive
            }
        })
        .collect();
    let spectral_gap = 1.0
        - eigenvalues
            .iter()
            .zip(&classes)
            .filter(|(_, c)| **c == EigenClass::Contractive)
            .map(|(z, _)| z.re)
            .fold(0.0, f64::max);
    Ok(LinearizedMapRep {
        matrix,
        basis,
        n_perp,
        eigenvalues,
        classes,
        spectral_gap,
        perp_block_deviation,
        lower_left_norm,
        max_column_trace,
        lindblad_samples: map.lindblad_samples(),
    })
}

/// Both sides of `(1 − α) tr[(Λ∘^{-1/4} Y Λ∘^{-1/4})²] = ∫Ψ(G*YG)²/(G*Λ∘G)²`
/// after division by the trace; returns `|lhs − rhs|`.
pub fn eigenvalue_rayleigh_check(map: &LinearizedMap, y: &HermitianMatrix, alpha: f64) -> Result<f64> {
    let quarter = map.lambda.map_eigenvalues(|v| v.powf(-0.25));
    let z = quarter.matrix() * y.matrix() * quarter.matrix();
    let denom = (&z * &z).trace().re;
    if !(denom > 0.0) {
        return Err(KlError::DimensionMismatch("eigenmatrix is zero".into()));
    }
    let rhs = map.rayleigh_numerator(y) / denom;
    Ok(((1.0 - alpha) - rhs).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladResiduals {
    /// `‖∫L*L − I‖_F`.
    pub normalization: f64,
    /// `max ‖(X − ∫LXL*) − 𝓜(X)‖_F / ‖X‖_F` over the tested `X`.
    pub generator: f64,
}

/// Evaluates the Lindblad form directly from samples of `L` on `grid`, and
/// compares it with `𝓜` on the standard basis and on `Λ∘`.
pub fn lindblad_check(map: &LinearizedMap, grid: &UnitCircleGrid, fb: &FilterBank, psi: &SpectralDensity) -> Result<LindbladResiduals> {
    let n = map.n();
    let lam = &map.lambda;
    let root = lam.sqrt()?;
    let g = fb.samples(grid)?;
    let psi_values = psi.evaluate(grid)?;
    let ls: Vec<CMatrix> = g
        .iter()
        .zip(&psi_values)
        .map(|(g, p)| (root.matrix() * g * g.adjoint()).scale(p.sqrt() / lam.quadratic_form(g)))
        .collect();
    let mean = |f: &dyn Fn(&CMatrix) -> CMatrix| -> CMatrix {
        let mut acc = MatrixAccumulator::new(n, n);
        for l in &ls {
            acc.add(&f(l));
        }
        acc.value().unscale(ls.len() as f64)
    };
    let normalization = crate::linalg::frobenius(&(mean(&|l| l.adjoint() * l) - CMatrix::identity(n, n)));
    let mut tests: Vec<HermitianMatrix> = HermitianBasis::standard(n).elements().to_vec();
    tests.push(lam.clone());
    let mut generator: f64 = 0.0;
    for x in &tests {
        let lxl = mean(&|l| l * x.matrix() * l.adjoint());
        let lhs = x.matrix() - lxl;
        let rhs = map.apply(x)?;
        generator = generator.max(crate::linalg::frobenius(&(lhs - rhs.matrix())) / x.frobenius_norm());
    }
    Ok(LindbladResiduals {
        normalization,
        generator,
    })
}

/// `‖(Θ(Λ∘ + εX) − Θ(Λ∘))/ε − 𝓜(X)‖_F` for each `ε`.
pub fn sqrt_derivative_consistency(
    map: &LinearizedMap,
    fb: &FilterBank,
    psi: &SpectralDensity,
    x: &HermitianMatrix,
    eps: &[f64],
) -> Result<Vec<f64>> {
    let base = theta_unnormalized(fb, psi, &map.lambda)?;
    let mx = map.apply(x)?;
    eps.iter()
        .map(|&e| {
            let moved = theta_unnormalized(fb, psi, &(&map.lambda + &x.scale(e)))?;
            let fd = (&moved - &base).scale(1.0 / e);
            Ok((&fd - &mx).frobenius_norm())
        })
        .collect()
}
