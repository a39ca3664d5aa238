//! Problem configuration read from a JSON document.
//!
//! ```json
//! {
//!   "filter": { "A": [[0, 1], [0, 0]], "B": [0, 1] },
//!   "sigma": "identity",
//!   "prior": { "rational": { "num": [1.25, 0.5], "den": [1] } },
//!   "solver": { "max_iters": 5000, "fp_tol": 1e-9 },
//!   "seed": 7
//! }
//! ```
//!
//! Matrix entries are numbers or `[re, im]` pairs. The prior is `"white"`,
//! `{"rational": {"num", "den"}}` with the coefficients of
//! `c_0 + Σ c_k (z^k + z^{-k})`, or `{"factor": {"F", "G", "H", "D"}}`.
//! Errors name the offending field, e.g. `filter.A[1][0]`.

use log::warn;
use num_complex::Complex64;
use serde_json::{Map, Value};

use crate::error::{KlError, Result};
use crate::filter_bank::{normalize_problem, FilterBank};
use crate::hermitian::{DensityMatrix, HermitianMatrix};
use crate::linalg::{c, CMatrix, CVector};
use crate::solver::SolverConfig;
use crate::spectral::{SpectralDensity, SpectralFactor, StateSpace};

#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub fb: FilterBank,
    /// `None` stands for `Σ = I`.
    pub sigma: Option<HermitianMatrix>,
    pub prior: SpectralDensity,
    pub solver: SolverConfig,
    pub seed: u64,
    pub allow_nonsingular_a: bool,
}

/// Problem with `Σ = I` and `∫Ψ = 1`, ready for the solver.
#[derive(Debug, Clone)]
pub struct NormalizedProblem {
    pub fb: FilterBank,
    pub psi: SpectralDensity,
    /// Zeroth moment implied by `Σ`; one when `A` is nonsingular.
    pub alpha: f64,
}

fn err(path: &str, msg: impl std::fmt::Display) -> KlError {
    KlError::InvalidConfig(format!("{path}: {msg}"))
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| err(path, format!("missing field `{key}`")))
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| err(path, "expected an object"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| err(path, "expected an array"))
}

fn real(v: &Value, path: &str) -> Result<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(err(path, format!("expected a finite number, got {v}"))),
    }
}

fn complex(v: &Value, path: &str) -> Result<Complex64> {
    if v.is_number() {
        return Ok(c(real(v, path)?, 0.0));
    }
    match v.as_array() {
        Some(pair) if pair.len() == 2 => Ok(c(
            real(&pair[0], &format!("{path}[0]"))?,
            real(&pair[1], &format!("{path}[1]"))?,
        )),
        _ => Err(err(path, format!("expected a number or [re, im], got {v}"))),
    }
}

fn real_vector(v: &Value, path: &str) -> Result<Vec<f64>> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| real(x, &format!("{path}[{i}]")))
        .collect()
}

fn complex_vector(v: &Value, path: &str) -> Result<CVector> {
    let items = array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| complex(x, &format!("{path}[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    Ok(CVector::from_vec(items))
}

fn complex_matrix(v: &Value, path: &str) -> Result<CMatrix> {
    let rows = array(v, path)?;
    let mut data = Vec::new();
    let mut width = None;
    for (i, row) in rows.iter().enumerate() {
        let row_path = format!("{path}[{i}]");
        let entries = array(row, &row_path)?;
        match width {
            None => width = Some(entries.len()),
            Some(w) if w != entries.len() => {
                return Err(err(&row_path, format!("row has {} entries, expected {w}", entries.len())));
            }
            _ => {}
        }
        for (j, x) in entries.iter().enumerate() {
            data.push(complex(x, &format!("{row_path}[{j}]"))?);
        }
    }
    let width = width.unwrap_or(0);
    Ok(CMatrix::from_row_slice(rows.len(), width, &data))
}

fn hermitian(v: &Value, path: &str) -> Result<HermitianMatrix> {
    let m = complex_matrix(v, path)?;
    if m.nrows() != m.ncols() {
        return Err(err(path, format!("matrix is {}x{}, expected square", m.nrows(), m.ncols())));
    }
    HermitianMatrix::new(m).map_err(|e| err(path, e))
}

fn parse_prior(v: &Value, path: &str) -> Result<SpectralDensity> {
    if v.as_str() == Some("white") {
        return Ok(SpectralDensity::white());
    }
    let obj = object(v, path)?;
    if let Some(r) = obj.get("rational") {
        let rp = format!("{path}.rational");
        let r = object(r, &rp)?;
        let num = real_vector(field(r, &rp, "num")?, &format!("{rp}.num"))?;
        let den = real_vector(field(r, &rp, "den")?, &format!("{rp}.den"))?;
        return SpectralDensity::from_rational(&num, &den).map_err(|e| err(&rp, e));
    }
    if let Some(f) = obj.get("factor") {
        let fp = format!("{path}.factor");
        let f = object(f, &fp)?;
        let mf = complex_matrix(field(f, &fp, "F")?, &format!("{fp}.F"))?;
        let g = complex_vector(field(f, &fp, "G")?, &format!("{fp}.G"))?;
        let h = complex_vector(field(f, &fp, "H")?, &format!("{fp}.H"))?;
        let d = complex(field(f, &fp, "D")?, &format!("{fp}.D"))?;
        let h = CMatrix::from_row_slice(1, h.len(), h.as_slice());
        let ss = StateSpace::new(mf, g, h, d).map_err(|e| err(&fp, e))?;
        return Ok(SpectralDensity::new(SpectralFactor::new(ss).map_err(|e| err(&fp, e))?));
    }
    Err(err(path, "expected \"white\", {\"rational\": ...} or {\"factor\": ...}"))
}

fn parse_solver(v: &Value, path: &str, n: usize) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    let obj = object(v, path)?;
    for (key, val) in obj {
        let p = format!("{path}.{key}");
        match key.as_str() {
            "max_iters" => cfg.max_iters = count(val, &p)?,
            "grid_size" => cfg.grid_size = count(val, &p)?,
            "fp_tol" => cfg.fp_tol = real(val, &p)?,
            "residual_tol" => cfg.residual_tol = real(val, &p)?,
            "min_spectrum_guard" => cfg.min_spectrum_guard = real(val, &p)?,
            "initial" => {
                let m = hermitian(val, &p)?;
                cfg.initial = Some(DensityMatrix::new(m).map_err(|e| err(&p, e))?);
            }
            _ => return Err(err(&p, "unknown solver option")),
        }
    }
    cfg.validate(n).map_err(|e| err(path, e))?;
    Ok(cfg)
}

fn count(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| err(path, format!("expected a non-negative integer, got {v}")))
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| {
            KlError::InvalidConfig(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        let obj = object(&root, "config")?;
        let filter = object(field(obj, "config", "filter")?, "filter")?;
        let a = complex_matrix(field(filter, "filter", "A")?, "filter.A")?;
        let b = complex_vector(field(filter, "filter", "B")?, "filter.B")?;
        let fb = FilterBank::new(a, b).map_err(|e| err("filter", e))?;
        let n = fb.n();

        let sigma = match obj.get("sigma") {
            None => None,
            Some(Value::String(s)) if s == "identity" => None,
            Some(v) => {
                let s = hermitian(v, "sigma")?;
                if s.dim() != n {
                    return Err(err("sigma", format!("expected {n}x{n}, got {0}x{0}", s.dim())));
                }
                Some(s)
            }
        };
        let prior = match obj.get("prior") {
            None => SpectralDensity::white(),
            Some(v) => parse_prior(v, "prior")?,
        };
        let solver = match obj.get("solver") {
            None => SolverConfig::default(),
            Some(v) => parse_solver(v, "solver", n)?,
        };
        let seed = match obj.get("seed") {
            None => 0,
            Some(v) => v.as_u64().ok_or_else(|| err("seed", "expected a non-negative integer"))?,
        };
        let allow_nonsingular_a = match obj.get("allow_nonsingular_a") {
            None => false,
            Some(v) => v.as_bool().ok_or_else(|| err("allow_nonsingular_a", "expected a boolean"))?,
        };
        Ok(Self {
            fb,
            sigma,
            prior,
            solver,
            seed,
            allow_nonsingular_a,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KlError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Whitens the bank by `Σ`, rescales `B` by `√α` and the prior to unit
    /// mass. With a nonsingular `A` (waived) `α` is not determined by `Σ`
    /// and is taken as one.
    pub fn normalized(&self, allow_nonsingular_a: bool) -> Result<NormalizedProblem> {
        let allow = allow_nonsingular_a || self.allow_nonsingular_a;
        let sigma = self.sigma.clone().unwrap_or_else(|| HermitianMatrix::identity(self.fb.n()));
        let alpha = if self.fb.has_singular_a() {
            self.fb.zeroth_moment_for(&sigma)?
        } else if allow {
            warn!(
                "A is nonsingular (smallest singular value {:.3e}); the zeroth moment is not pinned by sigma",
                self.fb.sigma_min()
            );
            1.0
        } else {
            return Err(KlError::NonsingularA {
                sigma_min: self.fb.sigma_min(),
            });
        };
        let fb = normalize_problem(&self.fb, &sigma, alpha)?;
        let psi = self.prior.normalize_zeroth_moment(1.0)?;
        Ok(NormalizedProblem { fb, psi, alpha })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NILPOTENT: &str = r#"{
        "filter": { "A": [[0, 1], [0, 0]], "B": [0, 1] },
        "sigma": "identity",
        "prior": { "rational": { "num": [1.25, 0.5], "den": [1] } },
        "solver": { "max_iters": 50, "fp_tol": 1e-8 },
        "seed": 3
    }"#;

    fn message(e: KlError) -> String {
        match e {
            KlError::InvalidConfig(m) => m,
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parses_full_document() {
        let cfg = ProblemConfig::from_json(NILPOTENT).unwrap();
        assert_eq!(cfg.fb.n(), 2);
        assert!(cfg.sigma.is_none());
        assert_eq!(cfg.solver.max_iters, 50);
        assert_eq!(cfg.solver.fp_tol, 1e-8);
        assert_eq!(cfg.seed, 3);
        let v = cfg.prior.value_at(0.0).unwrap();
        assert!((v - 2.25).abs() < 1e-12, "{v}");
    }

    #[test]
    fn complex_entries_and_defaults() {
        let cfg = ProblemConfig::from_json(r#"{"filter": {"A": [[[0, 0]]], "B": [[0, 1]]}}"#).unwrap();
        assert_eq!(cfg.fb.b()[0], c(0.0, 1.0));
        assert_eq!(cfg.prior, SpectralDensity::white());
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn errors_name_the_field() {
        let m = message(ProblemConfig::from_json(r#"{"filter": {"A": [[0, 1], [0, "x"]], "B": [0, 1]}}"#).unwrap_err());
        assert!(m.starts_with("filter.A[1][1]"), "{m}");
        let m = message(ProblemConfig::from_json(r#"{"filter": {"A": [[0, 1], [0]], "B": [0, 1]}}"#).unwrap_err());
        assert!(m.starts_with("filter.A[1]"), "{m}");
        let m = message(ProblemConfig::from_json(r#"{"filter": {"B": [1]}}"#).unwrap_err());
        assert!(m.contains("`A`"), "{m}");
        let m = message(
            ProblemConfig::from_json(r#"{"filter": {"A": [[0]], "B": [1]}, "solver": {"fp_tol": -1}}"#).unwrap_err(),
        );
        assert!(m.starts_with("solver"), "{m}");
        let m = message(ProblemConfig::from_json("{\"filter\":\n  [}").unwrap_err());
        assert!(m.starts_with("line 2"), "{m}");
    }

    #[test]
    fn factor_prior() {
        let text = r#"{"filter": {"A": [[0]], "B": [1]},
            "prior": {"factor": {"F": [[0.5]], "G": [1], "H": [0.5], "D": 1}}}"#;
        let cfg = ProblemConfig::from_json(text).unwrap();
        // W(1) = 0.5 / (1 − 0.5) + 1 = 2
        assert!((cfg.prior.value_at(0.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_scales_b_by_alpha() {
        let text = r#"{"filter": {"A": [[0]], "B": [1]}, "sigma": [[4]]}"#;
        let p = ProblemConfig::from_json(text).unwrap().normalized(false).unwrap();
        assert!((p.alpha - 4.0).abs() < 1e-12);
        // Σ^{-1/2} B √α = 1
        assert!((p.fb.b()[0].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonsingular_a_needs_waiver() {
        let text = r#"{"filter": {"A": [[0.5]], "B": [1]}}"#;
        let cfg = ProblemConfig::from_json(text).unwrap();
        assert!(matches!(cfg.normalized(false), Err(KlError::NonsingularA { .. })));
        assert_eq!(cfg.normalized(true).unwrap().alpha, 1.0);
    }
}
