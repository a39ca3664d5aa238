//! The fixed-point iteration `Λ_{k+1} = Θ(Λ_k)` and what is built from its
//! limit: the approximant `Φ̂ = Ψ / G*Λ̂G`, strictly positive representatives
//! of the solution family, and distances within that family.

use log::{debug, info, warn};

use crate::error::{KlError, Result};
use crate::filter_bank::{check_feasibility, FilterBank, GammaDecomposition};
use crate::hermitian::{DensityMatrix, HermitianMatrix};
use crate::linalg::{CVector, CompensatedSum};
use crate::moments::{descent_derivative, evaluate_theta, ThetaEvaluation};
use crate::riccati::{construct_c_vector, solve_dare};
use crate::spectral::{SpectralDensity, UnitCircleGrid};

/// Allowed deviation of `∫Ψ` from one.
pub const PRIOR_NORMALIZATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Bound on `‖Θ(Λ) − Λ‖_F`.
    pub fp_tol: f64,
    /// Bound on `‖∫G(Ψ/G*ΛG)G* − I‖_F`.
    pub residual_tol: f64,
    /// Starting point; `I/n` when absent.
    pub initial: Option<DensityMatrix>,
    /// Lower bound on `min G*ΛG` and on the smallest eigenvalue of `Λ`
    /// before the run is flagged as approaching the boundary.
    pub min_spectrum_guard: f64,
    /// Grid used for the log (dual value, `min G*ΛG`) and for `Φ̂`.
    pub grid_size: usize,
    /// Known solution against which `family_distance` is reported.
    pub reference: Option<HermitianMatrix>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            fp_tol: 1e-9,
            residual_tol: 1e-7,
            initial: None,
            min_spectrum_guard: 1e-10,
            grid_size: 1024,
            reference: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, v) in [
            ("fp_tol", self.fp_tol),
            ("residual_tol", self.residual_tol),
            ("min_spectrum_guard", self.min_spectrum_guard),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(KlError::InvalidConfig(format!("{name} = {v} must be positive")));
            }
        }
        if self.grid_size < 16 {
            return Err(KlError::GridTooCoarse {
                grid: self.grid_size,
                required: 16,
            });
        }
        if let Some(init) = &self.initial {
            if init.dim() != n {
                return Err(KlError::DimensionMismatch(format!(
                    "initial condition is {0}x{0}, filter bank has n = {n}",
                    init.dim()
                )));
            }
            let min = init.as_hermitian().min_eigenvalue();
            if !(min > 0.0) {
                return Err(KlError::SingularBase { min_eigenvalue: min });
            }
        }
        if let Some(r) = &self.reference {
            if r.dim() != n {
                return Err(KlError::DimensionMismatch("reference solution has wrong size".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// `Λ_k` became numerically singular or `G*Λ_kG` nearly vanished.
    BoundaryApproach,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "Converged",
            Termination::MaxIterations => "MaxIterations",
            Termination::BoundaryApproach => "BoundaryApproach",
        }
    }
}

/// Diagnostics evaluated at `Λ_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub fp_gap: f64,
    pub residual: f64,
    pub dual_value: f64,
    pub min_glg: f64,
    pub min_eigenvalue: f64,
    /// `tr((I − M(Λ_k))(Θ(Λ_k) − Λ_k))`; `NaN` when `Θ` could not be evaluated.
    pub descent: f64,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    pub lambda_hat: HermitianMatrix,
    pub log: Vec<IterationRecord>,
    pub termination: Termination,
    pub family_distance: Option<f64>,
    /// Iterations where the directional derivative of the dual was positive.
    pub descent_violations: usize,
    /// Iterations where the dual value went up.
    pub monotonicity_violations: usize,
}

impl SolverReport {
    pub fn last(&self) -> &IterationRecord {
        self.log.last().expect("log is never empty")
    }
}

/// `G(e^{jθ_k})` and `Ψ(θ_k)` on a fixed grid.
struct Samples {
    g: Vec<CVector>,
    psi: Vec<f64>,
}

impl Samples {
    fn new(fb: &FilterBank, psi: &SpectralDensity, grid: &UnitCircleGrid) -> Result<Self> {
        Ok(Self {
            g: fb.samples(grid)?,
            psi: psi.evaluate(grid)?,
        })
    }

    fn glg(&self, lambda: &HermitianMatrix) -> Vec<f64> {
        self.g.iter().map(|g| lambda.quadratic_form(g)).collect()
    }

    /// `−mean(Ψ log G*ΛG) + tr Λ`.
    fn dual(&self, lambda: &HermitianMatrix, glg: &[f64]) -> f64 {
        let mut s = CompensatedSum::default();
        for (p, v) in self.psi.iter().zip(glg) {
            s.add(-p * v.ln());
        }
        s.value() / glg.len() as f64 + lambda.trace()
    }
}

fn check_prior(psi: &SpectralDensity) -> Result<()> {
    let m = psi.zeroth_moment()?.value;
    if (m - 1.0).abs() > PRIOR_NORMALIZATION_TOL {
        return Err(KlError::InvalidConfig(format!(
            "prior must satisfy ∫Ψ = 1, got {m:.12}"
        )));
    }
    Ok(())
}

pub fn solve(fb: &FilterBank, psi: &SpectralDensity, cfg: &SolverConfig) -> Result<SolverReport> {
    let n = fb.n();
    cfg.validate(n)?;
    let verdict = check_feasibility(fb)?;
    if !verdict.feasible() {
        return Err(KlError::InfeasibleProblem(format!(
            "rank condition {}, identity distance {:.3e}",
            verdict.rank_condition, verdict.identity_distance
        )));
    }
    check_prior(psi)?;
    let grid = UnitCircleGrid::new(cfg.grid_size)?;
    let samples = Samples::new(fb, psi, &grid)?;

    let mut lambda = cfg
        .initial
        .clone()
        .unwrap_or_else(|| DensityMatrix::maximally_mixed(n));
    let mut log = Vec::new();
    let mut descent_violations = 0;
    let mut monotonicity_violations = 0;

    let (termination, converged) = loop {
        let k = log.len();
        let (record, eval) = diagnose(fb, psi, &samples, &lambda)?;
        if k == 0 && (eval.is_none() || !(record.min_glg > 0.0)) {
            return Err(KlError::SpectrumNotPositive { min_value: record.min_glg });
        }
        if record.descent > 1e-12 {
            descent_violations += 1;
        }
        if let Some(prev) = log.last().map(|r: &IterationRecord| r.dual_value) {
            if record.dual_value > prev + 1e-12 * prev.abs().max(1.0) {
                monotonicity_violations += 1;
            }
        }
        log.push(record);
        debug!(
            "iteration {k}: gap {:.3e} residual {:.3e} dual {:.12} min G*ΛG {:.3e}",
            record.fp_gap, record.residual, record.dual_value, record.min_glg
        );

        let optimal = record.min_glg > 0.0 && record.residual <= cfg.residual_tol;
        if record.fp_gap <= cfg.fp_tol && optimal {
            // report Θ(Λ_k) itself, with its own diagnostics
            lambda = eval.expect("gap is finite").theta;
            let (last, _) = diagnose(fb, psi, &samples, &lambda)?;
            log.push(last);
            let ok = last.min_glg > 0.0 && last.residual <= cfg.residual_tol;
            break (Termination::Converged, ok);
        }
        let near_boundary = record.min_glg <= cfg.min_spectrum_guard || record.min_eigenvalue < cfg.min_spectrum_guard;
        if eval.is_none() || near_boundary {
            warn!(
                "iterate {k} is close to the boundary (min eig {:.3e}, min G*ΛG {:.3e})",
                record.min_eigenvalue, record.min_glg
            );
            break (Termination::BoundaryApproach, optimal);
        }
        if k >= cfg.max_iters {
            break (Termination::MaxIterations, false);
        }
        lambda = eval.expect("checked above").theta;
    };

    let iterations = log.len() - 1;
    let lambda_hat = lambda.into_hermitian();
    let family_distance = match &cfg.reference {
        Some(r) => {
            let gd = crate::filter_bank::gamma_decomposition(fb, crate::filter_bank::default_gamma_grid(n))?;
            Some(family_distance(&gd, &lambda_hat, r))
        }
        None => None,
    };
    info!("solver stopped after {iterations} iterations: {}", termination.as_str());
    Ok(SolverReport {
        converged,
        iterations,
        lambda_hat,
        log,
        termination,
        family_distance,
        descent_violations,
        monotonicity_violations,
    })
}

/// Log entry at `Λ`, and `Θ(Λ)` unless `G*ΛG` fails to be positive.
fn diagnose(
    fb: &FilterBank,
    psi: &SpectralDensity,
    samples: &Samples,
    lambda: &DensityMatrix,
) -> Result<(IterationRecord, Option<ThetaEvaluation>)> {
    let l = lambda.as_hermitian();
    let glg = samples.glg(l);
    let min_glg = glg.iter().copied().fold(f64::INFINITY, f64::min);
    let mut record = IterationRecord {
        fp_gap: f64::NAN,
        residual: f64::NAN,
        dual_value: if min_glg > 0.0 { samples.dual(l, &glg) } else { f64::NAN },
        min_glg,
        min_eigenvalue: l.min_eigenvalue(),
        descent: f64::NAN,
    };
    let eval = match evaluate_theta(fb, psi, lambda) {
        Ok(ev) => ev,
        Err(KlError::SpectrumNotPositive { min_value }) => {
            record.min_glg = record.min_glg.min(min_value);
            return Ok((record, None));
        }
        Err(e) => return Err(e),
    };
    record.fp_gap = (eval.theta.as_hermitian() - l).frobenius_norm();
    record.residual = (&eval.moment - &HermitianMatrix::identity(fb.n())).frobenius_norm();
    record.descent = descent_derivative(&eval.moment, l, eval.theta.as_hermitian());
    Ok((record, Some(eval)))
}

/// `Φ̂(θ_k) = Ψ(θ_k) / G*Λ̂G(θ_k)`.
pub fn output_spectrum(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda_hat: &HermitianMatrix,
    grid: &UnitCircleGrid,
) -> Result<Vec<f64>> {
    Ok(spectrum_table(fb, psi, lambda_hat, grid)?
        .into_iter()
        .map(|r| r.phi_hat)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumRow {
    pub theta: f64,
    pub psi: f64,
    pub phi_hat: f64,
    pub g_lambda_g: f64,
}

pub fn spectrum_table(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda_hat: &HermitianMatrix,
    grid: &UnitCircleGrid,
) -> Result<Vec<SpectrumRow>> {
    let samples = Samples::new(fb, psi, grid)?;
    let glg = samples.glg(lambda_hat);
    let mut rows = Vec::with_capacity(grid.len());
    for (k, &g) in glg.iter().enumerate() {
        if !(g > 0.0) {
            return Err(KlError::SpectrumNotPositive { min_value: g });
        }
        rows.push(SpectrumRow {
            theta: grid.angle(k),
            psi: samples.psi[k],
            phi_hat: samples.psi[k] / g,
            g_lambda_g: g,
        });
    }
    Ok(rows)
}

/// `∫Ψ log G*Λ̂G`, which equals the divergence of `Ψ` from `Φ̂` when the
/// zeroth moments match.
pub fn kl_at_solution(
    fb: &FilterBank,
    psi: &SpectralDensity,
    lambda_hat: &HermitianMatrix,
    grid: &UnitCircleGrid,
) -> Result<f64> {
    let rows = spectrum_table(fb, psi, lambda_hat, grid)?;
    let mut s = CompensatedSum::default();
    for r in &rows {
        s.add(r.psi * r.g_lambda_g.ln());
    }
    Ok(s.value() / rows.len() as f64)
}

/// Positive definite member of the family of `Λ∘`:
/// `½C∘C∘* + εI + C₁C₁*` with `ε = μ/(4ν)`, `μ = min G*Λ∘G`,
/// `ν = max G*G`, where `|C∘*G|² = G*Λ∘G` and `|C₁*G|² = G*(½Λ∘ − εI)G`.
pub fn make_strictly_pd(
    fb: &FilterBank,
    lambda_circ: &HermitianMatrix,
    grid: &UnitCircleGrid,
) -> Result<HermitianMatrix> {
    let n = fb.n();
    let g = fb.samples(grid)?;
    let mu = g.iter().map(|g| lambda_circ.quadratic_form(g)).fold(f64::INFINITY, f64::min);
    if !(mu > 0.0) {
        return Err(KlError::SpectrumNotPositive { min_value: mu });
    }
    let nu = g.iter().map(|g| g.norm_squared()).fold(0.0, f64::max);
    let eps = mu / (4.0 * nu);
    let c0 = construct_c_vector(&solve_dare(fb, lambda_circ)?);
    let shifted = &lambda_circ.scale(0.5) - &HermitianMatrix::identity(n).scale(eps);
    let c1 = construct_c_vector(&solve_dare(fb, &shifted)?);
    let out = &(&HermitianMatrix::outer(&c0).scale(0.5) + &HermitianMatrix::identity(n).scale(eps))
        + &HermitianMatrix::outer(&c1);
    Ok(out)
}

/// `‖P_{Range Γ}(Λ_a − Λ_b)‖_F`; zero exactly when both describe the same
/// approximant.
pub fn family_distance(gd: &GammaDecomposition, lambda_a: &HermitianMatrix, lambda_b: &HermitianMatrix) -> f64 {
    gd.project_range(&(lambda_a - lambda_b)).frobenius_norm()
}
