//! Random problem instances for tests, benchmarks and the acceptance suite.
//!
//! A feasible instance is built backwards: pick a bank with singular `A`,
//! pick a "true" spectrum `Φ`, take `Σ = ∫GΦG*` and normalize so that
//! `Σ = I` and `∫Φ = 1`.

use rand::Rng;

use crate::error::Result;
use crate::filter_bank::{check_feasibility, normalize_problem, output_covariance, FilterBank};
use crate::linalg::{c, singular_values, CMatrix, CVector};
use crate::spectral::{SpectralDensity, SpectralFactor};

/// Normalized problem together with a spectrum that satisfies its moment
/// constraint exactly.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub fb: FilterBank,
    pub psi: SpectralDensity,
    pub phi_true: SpectralDensity,
}

fn standard_complex(rng: &mut impl Rng) -> num_complex::Complex64 {
    c(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
}

/// Real polynomial `∏(1 − r_k x)` in `x = z^{-1}` with roots of modulus at
/// most `max_modulus`; complex roots come in conjugate pairs.
pub fn random_stable_polynomial(rng: &mut impl Rng, order: usize, max_modulus: f64) -> Vec<f64> {
    let mut poly = vec![1.0];
    let mut left = order;
    while left > 0 {
        if left >= 2 && rng.random::<bool>() {
            let r = rng.random::<f64>() * max_modulus;
            let phi = rng.random::<f64>() * std::f64::consts::PI;
            // (1 − r e^{jφ} x)(1 − r e^{−jφ} x) = 1 − 2r cos φ x + r² x²
            poly = convolve(&poly, &[1.0, -2.0 * r * phi.cos(), r * r]);
            left -= 2;
        } else {
            let r = (rng.random::<f64>() * 2.0 - 1.0) * max_modulus;
            poly = convolve(&poly, &[1.0, -r]);
            left -= 1;
        }
    }
    poly
}

fn convolve(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

/// ARMA spectrum `|b/a|²` with numerator and denominator of order at most
/// `max_order` and all roots inside the disk of radius 0.8.
pub fn random_density(rng: &mut impl Rng, max_order: usize) -> Result<SpectralDensity> {
    let (nb, na) = (rng.random_range(0..=max_order), rng.random_range(0..=max_order));
    let b = random_stable_polynomial(rng, nb, 0.8);
    let a = random_stable_polynomial(rng, na, 0.8);
    Ok(SpectralDensity::new(SpectralFactor::from_arma(&b, &a)?))
}

/// Reachable bank with `A = M(I − vv*)` rescaled to `‖A‖₂ ∈ [0.5, 0.95]`.
pub fn random_singular_bank(rng: &mut impl Rng, n: usize) -> FilterBank {
    loop {
        let m = CMatrix::from_fn(n, n, |_, _| standard_complex(rng));
        let v = CVector::from_fn(n, |_, _| standard_complex(rng)).normalize();
        let a = m * (CMatrix::identity(n, n) - &v * v.adjoint());
        let norm = singular_values(&a).first().copied().unwrap_or(0.0);
        if norm == 0.0 && n > 1 {
            continue;
        }
        let target = rng.random_range(0.5..0.95);
        let a = if norm > 0.0 { a.scale(target / norm) } else { a };
        let b = CVector::from_fn(n, |_, _| standard_complex(rng));
        if let Ok(fb) = FilterBank::new(a, b) {
            if fb.has_singular_a() {
                return fb;
            }
        }
    }
}

/// Feasible normalized instance of dimension `n` with a prior of order at
/// most `prior_order`.
pub fn random_feasible_instance(rng: &mut impl Rng, n: usize, prior_order: usize) -> Result<ProblemInstance> {
    loop {
        let raw = random_singular_bank(rng, n);
        let phi = random_density(rng, 2)?;
        let sigma = output_covariance(&raw, phi.factor())?;
        let alpha = raw.zeroth_moment_for(&sigma)?;
        let Ok(first) = normalize_problem(&raw, &sigma, alpha) else {
            continue;
        };
        let phi_first = SpectralDensity::new(phi.factor().scaled(1.0 / alpha.sqrt()));
        // a second whitening pass removes most of the round-off of the first
        let sigma = output_covariance(&first, phi_first.factor())?;
        let beta = first.zeroth_moment_for(&sigma)?;
        let Ok(fb) = normalize_problem(&first, &sigma, beta) else {
            continue;
        };
        // whitening by a badly conditioned Σ can leave the numerical rank
        // test undecided; such draws are discarded
        match check_feasibility(&fb) {
            Ok(v) if v.feasible() && v.consistent => {}
            _ => continue,
        }
        let phi_true = SpectralDensity::new(phi_first.factor().scaled(1.0 / beta.sqrt()));
        let psi = random_density(rng, prior_order)?.normalize_zeroth_moment(1.0)?;
        return Ok(ProblemInstance { fb, psi, phi_true });
    }
}
