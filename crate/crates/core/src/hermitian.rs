//! Hermitian matrices, density matrices and the real coordinate system of
//! the space of `n x n` Hermitian matrices.
//!
//! The Hermitian matrices form a real vector space of dimension `n²` with
//! inner product `<P, Q> = tr(PQ)`. [`HermitianBasis::standard`] is an
//! orthonormal basis for it, so coordinates are an isometry onto `R^{n²}`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DVector, SymmetricEigen};

use crate::error::{KlError, Result};
use crate::linalg::{c, frobenius, hermitian_part, CMatrix, CVector, ZERO};

/// Relative tolerance on the Hermitian deviation accepted at construction.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Relative tolerance below which negative eigenvalues are treated as zero.
pub const DEFAULT_PSD_TOL: f64 = 1e-10;
/// Absolute tolerance on the trace of a density matrix.
pub const DEFAULT_TRACE_TOL: f64 = 1e-12;

/// An `n x n` complex Hermitian matrix.
#[derive(Clone, PartialEq)]
pub struct HermitianMatrix {
    m: CMatrix,
}

impl fmt::Debug for HermitianMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HermitianMatrix{}", self.m)
    }
}

impl HermitianMatrix {
    /// Stores `(M + M*)/2`, rejecting `M` when `‖M − M*‖_F > 1e-12 ‖M‖_F`.
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_tolerance(m, HERMITIAN_TOL)
    }

    pub fn with_tolerance(m: CMatrix, rel_tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(KlError::DimensionMismatch(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(KlError::InvalidConfig("matrix has non-finite entries".into()));
        }
        let norm = frobenius(&m);
        let dev = frobenius(&(&m - m.adjoint()));
        if dev > rel_tol * norm {
            return Err(KlError::NotHermitian {
                deviation: if norm > 0.0 { dev / norm } else { dev },
            });
        }
        Ok(Self {
            m: hermitian_part(&m),
        })
    }

    /// Hermitian part of a matrix that is Hermitian in exact arithmetic.
    pub fn from_hermitian_part(m: &CMatrix) -> Self {
        Self {
            m: hermitian_part(m),
        }
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(KlError::DimensionMismatch("rows of unequal length".into()));
        }
        Self::new(CMatrix::from_fn(n, n, |i, j| c(rows[i][j], 0.0)))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            m: CMatrix::from_fn(n, n, |i, j| if i == j { c(d[i], 0.0) } else { ZERO }),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: CMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            m: CMatrix::zeros(n, n),
        }
    }

    /// `v v*`.
    pub fn outer(v: &CVector) -> Self {
        Self::from_hermitian_part(&(v * v.adjoint()))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.diagonal().iter().map(|z| z.re).sum()
    }

    /// `tr(PQ)`, real for Hermitian arguments.
    pub fn inner(&self, other: &HermitianMatrix) -> f64 {
        // tr(PQ) = sum_ij P_ij Q_ji = sum_ij P_ij conj(Q_ij)
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(p, q)| (p * q.conj()).re)
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.m)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { m: self.m.scale(s) }
    }

    /// `v* M v`.
    pub fn quadratic_form(&self, v: &CVector) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            let mut col = ZERO;
            for i in 0..n {
                col += v[i].conj() * self.m[(i, j)];
            }
            acc += (col * v[j]).re;
        }
        acc
    }

    /// Eigenvalues in ascending order together with unitary eigenvectors.
    pub fn eigen(&self) -> (Vec<f64>, CMatrix) {
        let n = self.dim();
        if n == 0 {
            return (Vec::new(), CMatrix::zeros(0, 0));
        }
        let eig = SymmetricEigen::new(self.m.clone());
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, idx[j])]);
        (values, vectors)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    /// Number of eigenvalues above `rel_tol` times the largest modulus.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let ev = self.eigenvalues();
        let scale = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale == 0.0 {
            return 0;
        }
        ev.iter().filter(|v| v.abs() > rel_tol * scale).count()
    }

    pub fn is_psd(&self, rel_tol: f64) -> bool {
        let ev = self.eigenvalues();
        let top = ev.last().copied().unwrap_or(0.0).max(0.0);
        ev.first().is_none_or(|&lo| lo >= -rel_tol * top)
    }

    /// `U f(D) U*` for the eigendecomposition `M = U D U*`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> Self {
        let (values, u) = self.eigen();
        let n = self.dim();
        let mut scaled = u.clone();
        for j in 0..n {
            let fj = f(values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        Self::from_hermitian_part(&(scaled * u.adjoint()))
    }

    /// Principal square root with the default PSD tolerance.
    pub fn sqrt(&self) -> Result<Self> {
        principal_sqrt(self, DEFAULT_PSD_TOL)
    }

    /// `M^{-1/2}` for a strictly positive definite matrix.
    pub fn inverse_sqrt(&self) -> Result<Self> {
        let ev = self.eigenvalues();
        let lo = ev.first().copied().unwrap_or(0.0);
        let hi = ev.last().copied().unwrap_or(0.0);
        if lo <= 1e-12 * hi.max(0.0) || hi <= 0.0 {
            return Err(KlError::SingularBase { min_eigenvalue: lo });
        }
        Ok(self.map_eigenvalues(|v| 1.0 / v.sqrt()))
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix { m: &self.m + &rhs.m }
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix { m: &self.m - &rhs.m }
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        self.scale(rhs)
    }
}

/// Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Clone, PartialEq, Debug)]
pub struct DensityMatrix {
    base: HermitianMatrix,
}

impl DensityMatrix {
    pub fn new(base: HermitianMatrix) -> Result<Self> {
        Self::with_tolerances(base, DEFAULT_PSD_TOL, DEFAULT_TRACE_TOL)
    }

    pub fn with_tolerances(base: HermitianMatrix, psd_tol: f64, trace_tol: f64) -> Result<Self> {
        let ev = base.eigenvalues();
        let top = ev.last().copied().unwrap_or(0.0).max(0.0);
        if let Some(&lo) = ev.first() {
            if lo < -psd_tol * top {
                return Err(KlError::NotPositiveSemidefinite { min_eigenvalue: lo });
            }
        }
        let tr = base.trace();
        if (tr - 1.0).abs() > trace_tol {
            return Err(KlError::TraceNotUnit { trace: tr });
        }
        Ok(Self { base })
    }

    /// `I / n`.
    pub fn maximally_mixed(n: usize) -> Self {
        Self {
            base: HermitianMatrix::identity(n).scale(1.0 / n as f64),
        }
    }

    pub fn as_hermitian(&self) -> &HermitianMatrix {
        &self.base
    }

    pub fn into_hermitian(self) -> HermitianMatrix {
        self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }
}

/// Principal square root of a PSD matrix.
///
/// Eigenvalues below `-rel_tol * λ_max` are an error; those in
/// `[-rel_tol * λ_max, 0]` are clamped to zero.
pub fn principal_sqrt(m: &HermitianMatrix, rel_tol: f64) -> Result<HermitianMatrix> {
    let ev = m.eigenvalues();
    let top = ev.last().copied().unwrap_or(0.0).max(0.0);
    if let Some(&lo) = ev.first() {
        if lo < -rel_tol * top {
            return Err(KlError::NotPositiveSemidefinite { min_eigenvalue: lo });
        }
    }
    Ok(m.map_eigenvalues(|v| v.max(0.0).sqrt()))
}

/// Directional derivative of the principal square root at `lambda` along
/// `x`: the solution `D` of `D S + S D = X` with `S = lambda^{1/2}`.
pub fn sqrt_derivative(lambda: &HermitianMatrix, x: &HermitianMatrix) -> Result<HermitianMatrix> {
    if lambda.dim() != x.dim() {
        return Err(KlError::DimensionMismatch(format!(
            "sqrt_derivative: base is {}x{}, direction is {}x{}",
            lambda.dim(),
            lambda.dim(),
            x.dim(),
            x.dim()
        )));
    }
    let (values, u) = lambda.eigen();
    let n = lambda.dim();
    let lo = values.first().copied().unwrap_or(0.0);
    let hi = values.last().copied().unwrap_or(0.0);
    if n > 0 && (hi <= 0.0 || lo <= 1e-12 * hi) {
        return Err(KlError::SingularBase { min_eigenvalue: lo });
    }
    let sigma: Vec<f64> = values.iter().map(|v| v.sqrt()).collect();
    let mut xt = u.adjoint() * x.matrix() * &u;
    for j in 0..n {
        for i in 0..n {
            xt[(i, j)] /= sigma[i] + sigma[j];
        }
    }
    Ok(HermitianMatrix::from_hermitian_part(&(&u * xt * u.adjoint())))
}

/// Ordered orthonormal basis of the real space of Hermitian matrices.
#[derive(Clone, Debug)]
pub struct HermitianBasis {
    dim: usize,
    elements: Vec<HermitianMatrix>,
    standard: bool,
}

impl HermitianBasis {
    /// `{E_ii}`, then `{(E_ij + E_ji)/√2}`, then `{(iE_ij − iE_ji)/√2}` for `i < j`.
    pub fn standard(n: usize) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut elements = Vec::with_capacity(n * n);
        for i in 0..n {
            let mut m = CMatrix::zeros(n, n);
            m[(i, i)] = c(1.0, 0.0);
            elements.push(HermitianMatrix { m });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let mut m = CMatrix::zeros(n, n);
                m[(i, j)] = c(s, 0.0);
                m[(j, i)] = c(s, 0.0);
                elements.push(HermitianMatrix { m });
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let mut m = CMatrix::zeros(n, n);
                m[(i, j)] = c(0.0, s);
                m[(j, i)] = c(0.0, -s);
                elements.push(HermitianMatrix { m });
            }
        }
        Self {
            dim: n,
            elements,
            standard: true,
        }
    }

    /// Validates that `elements` are `n²` pairwise orthonormal `n x n` matrices.
    pub fn new(elements: Vec<HermitianMatrix>) -> Result<Self> {
        let count = elements.len();
        let n = (count as f64).sqrt().round() as usize;
        if n * n != count || elements.iter().any(|e| e.dim() != n) {
            return Err(KlError::DimensionMismatch(format!(
                "a basis of n x n Hermitian matrices needs n² elements, got {count}"
            )));
        }
        for a in 0..count {
            for b in a..count {
                let expected = if a == b { 1.0 } else { 0.0 };
                let ip = elements[a].inner(&elements[b]);
                if (ip - expected).abs() > 1e-10 {
                    return Err(KlError::DimensionMismatch(format!(
                        "basis elements {a} and {b} are not orthonormal (inner product {ip:.3e})"
                    )));
                }
            }
        }
        Ok(Self {
            dim: n,
            elements,
            standard: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[HermitianMatrix] {
        &self.elements
    }

    /// Real coordinates `x_k = <E_k, M>`.
    pub fn coordinates(&self, m: &HermitianMatrix) -> Result<DVector<f64>> {
        if m.dim() != self.dim {
            return Err(KlError::DimensionMismatch(format!(
                "basis is for {}x{} matrices, got {}x{}",
                self.dim,
                self.dim,
                m.dim(),
                m.dim()
            )));
        }
        if !self.standard {
            return Ok(DVector::from_iterator(
                self.elements.len(),
                self.elements.iter().map(|e| e.inner(m)),
            ));
        }
        let n = self.dim;
        let r2 = std::f64::consts::SQRT_2;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            out.push(m.m[(i, i)].re);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(r2 * m.m[(i, j)].re);
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(r2 * m.m[(i, j)].im);
            }
        }
        Ok(DVector::from_vec(out))
    }

    pub fn from_coordinates(&self, x: &DVector<f64>) -> Result<HermitianMatrix> {
        if x.len() != self.elements.len() {
            return Err(KlError::DimensionMismatch(format!(
                "expected {} coordinates, got {}",
                self.elements.len(),
                x.len()
            )));
        }
        let n = self.dim;
        let mut m = CMatrix::zeros(n, n);
        for (e, &xk) in self.elements.iter().zip(x.iter()) {
            if xk != 0.0 {
                m += e.m.scale(xk);
            }
        }
        Ok(HermitianMatrix::from_hermitian_part(&m))
    }
}
