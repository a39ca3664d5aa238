//! `spectral-kl` command line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 infeasible problem, 3 nonsingular
//! `A` without waiver, 4 iteration budget exhausted, 5 boundary approach
//! whose limit is not optimal, 6 not a fixed point, 7 an analysis check
//! failed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    eigenvalue_rayleigh_check, lindblad_check, matrix_rep_of, EigenClass, LinearizedMap,
};
use crate::config::{NormalizedProblem, ProblemConfig};
use crate::error::{KlError, Result};
use crate::filter_bank::{
    check_feasibility, default_gamma_grid, estimate_sigma, gamma_decomposition, parse_time_series,
};
use crate::hermitian::HermitianMatrix;
use crate::io::{
    eigenvalue_csv, fmt_f64, iterations_csv, matrix_csv, parse_matrix_csv, spectrum_csv, write_atomic,
};
use crate::linalg::{c, CMatrix};
use crate::solver::{kl_at_solution, solve, spectrum_table, Termination};
use crate::spectral::{kl_divergence, UnitCircleGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NONSINGULAR_A: i32 = 3;
pub const EXIT_MAX_ITERATIONS: i32 = 4;
pub const EXIT_BOUNDARY: i32 = 5;
pub const EXIT_NOT_A_FIXED_POINT: i32 = 6;
pub const EXIT_CHECK_FAILED: i32 = 7;

/// Samples discarded before `Σ` is accumulated.
pub const DEFAULT_BURN_IN: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "spectral-kl", version, about = "Kullback-Leibler spectral approximation by fixed-point iteration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Problem configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Fixed point to analyze, as written by `solve` (lambda_hat.csv).
    #[arg(long, global = true)]
    pub lambda: Option<PathBuf>,
    /// Time series, one `re[,im]` sample per line.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Accept a bank whose `A` has no eigenvalue at the origin.
    #[arg(long = "allow-nonsingular-A", global = true)]
    pub allow_nonsingular_a: bool,
    /// Grid size for the log and the exported spectrum.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Seed for randomized diagnostics; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Samples dropped before estimating the covariance.
    #[arg(long, global = true, default_value_t = DEFAULT_BURN_IN)]
    pub burn_in: usize,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Check the rank condition and whether I lies in Range Γ.
    Feasibility,
    /// Run the fixed-point iteration and write the report files.
    Solve,
    /// Spectrum of the linearized map at a fixed point.
    Analyze,
    /// Estimate the state covariance from data.
    EstimateSigma,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Feasibility => cmd_feasibility(&cli),
        Command::Solve => cmd_solve(&cli),
        Command::Analyze => cmd_analyze(&cli),
        Command::EstimateSigma => cmd_estimate_sigma(&cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &KlError) -> i32 {
    match e {
        KlError::InfeasibleProblem(_) => EXIT_INFEASIBLE,
        KlError::NonsingularA { .. } => EXIT_NONSINGULAR_A,
        KlError::NotAFixedPoint { .. } => EXIT_NOT_A_FIXED_POINT,
        _ => EXIT_INPUT,
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| KlError::InvalidConfig(format!("--{flag} is required")))
}

fn load(cli: &Cli) -> Result<ProblemConfig> {
    let mut cfg = ProblemConfig::load(required(&cli.config, "config")?)?;
    if let Some(g) = cli.grid {
        cfg.solver.grid_size = g;
        cfg.solver.validate(cfg.fb.n())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn normalized(cli: &Cli, cfg: &ProblemConfig) -> Result<NormalizedProblem> {
    match cfg.normalized(cli.allow_nonsingular_a) {
        Err(e @ KlError::NonsingularA { .. }) => {
            warn!("{e}");
            eprintln!("warning: {e}; pass --allow-nonsingular-A to proceed outside the KL setting");
            Err(e)
        }
        other => other,
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    let dir = required(&cli.out, "out")?;
    fs::create_dir_all(dir).map_err(|e| KlError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Verdict text for a normalized problem and whether it is feasible.
fn feasibility_text(p: &NormalizedProblem) -> Result<(String, bool)> {
    let v = check_feasibility(&p.fb)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "rank condition: {} (rank {} vs {})",
        if v.rank_condition { "holds" } else { "fails" },
        v.rank_lhs,
        v.rank_rhs
    );
    let _ = writeln!(
        s,
        "identity in Range Gamma: {} (distance {:.3e})",
        yes_no(v.identity_in_range),
        v.identity_distance
    );
    let _ = writeln!(s, "n_perp: {}", v.n_perp);
    let _ = writeln!(s, "singular A: {}", yes_no(v.singular_a));
    let _ = writeln!(s, "zeroth moment: {}", fmt_f64(p.alpha));
    if !v.consistent {
        let _ = writeln!(s, "warning: the rank test and the range test disagree");
    }
    let _ = writeln!(s, "verdict: {}", if v.feasible() { "feasible" } else { "infeasible" });
    Ok((s, v.feasible()))
}

pub fn cmd_feasibility(cli: &Cli) -> Result<i32> {
    let cfg = load(cli)?;
    let p = normalized(cli, &cfg)?;
    let (text, feasible) = feasibility_text(&p)?;
    print!("{text}");
    Ok(if feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

pub fn cmd_solve(cli: &Cli) -> Result<i32> {
    let cfg = load(cli)?;
    let dir = out_dir(cli)?;
    let p = normalized(cli, &cfg)?;
    let report = solve(&p.fb, &p.psi, &cfg.solver)?;
    let last = report.last();
    let grid = UnitCircleGrid::new(cfg.solver.grid_size)?;

    let mut text = String::new();
    let _ = writeln!(text, "termination: {}", report.termination.as_str());
    let _ = writeln!(text, "converged: {}", report.converged);
    let _ = writeln!(text, "iterations: {}", report.iterations);
    let _ = writeln!(text, "fp_gap: {}", fmt_f64(last.fp_gap));
    let _ = writeln!(text, "residual: {}", fmt_f64(last.residual));
    let _ = writeln!(text, "dual_value: {}", fmt_f64(last.dual_value));
    let _ = writeln!(text, "min_glg: {}", fmt_f64(last.min_glg));
    let _ = writeln!(text, "min_eig: {}", fmt_f64(last.min_eigenvalue));
    let _ = writeln!(text, "zeroth_moment: {}", fmt_f64(p.alpha));
    let _ = writeln!(text, "grid_size: {}", grid.len());
    let _ = writeln!(text, "monotonicity_violations: {}", report.monotonicity_violations);
    let _ = writeln!(text, "descent_violations: {}", report.descent_violations);

    match spectrum_table(&p.fb, &p.psi, &report.lambda_hat, &grid) {
        Ok(rows) => {
            let psi: Vec<f64> = rows.iter().map(|r| r.psi).collect();
            let phi: Vec<f64> = rows.iter().map(|r| r.phi_hat).collect();
            let kl = kl_divergence(&psi, &phi, &grid)?;
            let kl_log = kl_at_solution(&p.fb, &p.psi, &report.lambda_hat, &grid)?;
            let _ = writeln!(text, "kl_divergence: {}", fmt_f64(kl));
            let _ = writeln!(text, "kl_from_log_glg: {}", fmt_f64(kl_log));
            write_atomic(&dir.join("spectrum.csv"), &spectrum_csv(&rows))?;
        }
        Err(e) => {
            let _ = writeln!(text, "spectrum: unavailable ({e})");
        }
    }
    write_atomic(&dir.join("report.txt"), &text)?;
    write_atomic(&dir.join("iterations.csv"), &iterations_csv(&report.log))?;
    write_atomic(&dir.join("lambda_hat.csv"), &matrix_csv(&report.lambda_hat))?;
    print!("{text}");
    info!("wrote results to {}", dir.display());

    Ok(match report.termination {
        _ if report.converged => EXIT_OK,
        Termination::MaxIterations => EXIT_MAX_ITERATIONS,
        _ => EXIT_BOUNDARY,
    })
}

/// Random Hermitian matrix with unit Frobenius norm.
fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
    let m = CMatrix::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let h = HermitianMatrix::from_hermitian_part(&m);
    let norm = h.frobenius_norm();
    h.scale(1.0 / norm)
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

pub fn cmd_analyze(cli: &Cli) -> Result<i32> {
    let cfg = load(cli)?;
    let dir = out_dir(cli)?;
    let p = normalized(cli, &cfg)?;
    let lambda_path = required(&cli.lambda, "lambda")?;
    let text = fs::read_to_string(lambda_path)
        .map_err(|e| KlError::Io(format!("{}: {e}", lambda_path.display())))?;
    let lambda = parse_matrix_csv(&text)?;
    let n = p.fb.n();
    if lambda.dim() != n {
        return Err(KlError::DimensionMismatch(format!(
            "lambda is {0}x{0}, filter bank has n = {n}",
            lambda.dim()
        )));
    }
    let map = LinearizedMap::new(&p.fb, &p.psi, &lambda)?;
    let gd = gamma_decomposition(&p.fb, default_gamma_grid(n))?;
    let rep = matrix_rep_of(&map, &gd)?;

    let mut rayleigh: f64 = 0.0;
    for (z, class) in rep.eigenvalues.iter().zip(&rep.classes) {
        if *class == EigenClass::Contractive {
            let y = rep.eigenmatrix(z.re)?;
            rayleigh = rayleigh.max(eigenvalue_rayleigh_check(&map, &y, z.re)?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace: f64 = rep.max_column_trace;
    for _ in 0..8 {
        let x = random_direction(&mut rng, n);
        trace = trace.max(map.apply(&x)?.trace().abs());
    }
    let grid = UnitCircleGrid::new(map.grid_points())?;
    let lindblad = lindblad_check(&map, &grid, &p.fb, &p.psi)?;

    let checks = [
        Check {
            name: "realness",
            pass: rep.max_imaginary() <= 1e-7,
            detail: format!("max |Im| = {:.3e}", rep.max_imaginary()),
        },
        Check {
            name: "nonnegativity",
            pass: rep.min_real() >= -1e-7 && rep.max_real() <= 1.0 + 1e-9,
            detail: format!("Re in [{:.3e}, {:.12}]", rep.min_real(), rep.max_real()),
        },
        Check {
            name: "identity multiplicity",
            pass: rep.identity_count() == gd.n_perp(),
            detail: format!("{} eigenvalues at 1, n_perp = {}", rep.identity_count(), gd.n_perp()),
        },
        Check {
            name: "spectral gap",
            pass: rep.spectral_gap > 0.0,
            detail: format!("delta = {:.6e}", rep.spectral_gap),
        },
        Check {
            name: "rayleigh identity",
            pass: rayleigh <= 1e-6,
            detail: format!("max residual = {rayleigh:.3e}"),
        },
        Check {
            name: "trace annihilation",
            pass: trace <= 1e-10,
            detail: format!("max |tr M(X)| / |X| = {trace:.3e}"),
        },
        Check {
            name: "lindblad form",
            pass: lindblad.normalization <= 1e-6 && lindblad.generator <= 1e-6,
            detail: format!(
                "|int L*L - I| = {:.3e}, generator residual = {:.3e}",
                lindblad.normalization, lindblad.generator
            ),
        },
    ];

    let mut summary = String::new();
    let _ = writeln!(summary, "n: {n}");
    let _ = writeln!(summary, "n_perp: {}", gd.n_perp());
    let _ = writeln!(summary, "fixed_point_residual: {:.3e}", map.fixed_point_residual());
    let _ = writeln!(summary, "quadrature_points: {}", map.grid_points());
    let _ = writeln!(summary, "block_deviation: {:.3e}", rep.perp_block_deviation);
    let _ = writeln!(summary, "lower_left: {:.3e}", rep.lower_left_norm);
    for ch in &checks {
        let _ = writeln!(summary, "{} {}: {}", if ch.pass { "PASS" } else { "FAIL" }, ch.name, ch.detail);
    }
    let classes: Vec<&str> = rep.classes.iter().map(EigenClass::as_str).collect();
    write_atomic(&dir.join("m_spectrum.csv"), &eigenvalue_csv(&rep.eigenvalues, &classes))?;
    write_atomic(&dir.join("analysis.txt"), &summary)?;
    print!("{summary}");
    Ok(if checks.iter().all(|ch| ch.pass) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

pub fn cmd_estimate_sigma(cli: &Cli) -> Result<i32> {
    let cfg = load(cli)?;
    let dir = out_dir(cli)?;
    let data_path = required(&cli.data, "data")?;
    let text = fs::read_to_string(data_path)
        .map_err(|e| KlError::Io(format!("{}: {e}", data_path.display())))?;
    let samples = parse_time_series(&text)?;
    let sigma = estimate_sigma(&cfg.fb, &samples, cli.burn_in)?;
    write_atomic(&dir.join("sigma.csv"), &matrix_csv(&sigma))?;
    println!("samples: {}", samples.len());
    let estimated = ProblemConfig {
        sigma: Some(sigma),
        ..cfg
    };
    let feasible = match normalized(cli, &estimated) {
        Ok(p) => {
            let (verdict, feasible) = feasibility_text(&p)?;
            print!("{verdict}");
            feasible
        }
        Err(e @ KlError::NonsingularA { .. }) => return Err(e),
        Err(e) => {
            println!("verdict: infeasible ({e})");
            false
        }
    };
    Ok(if feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}
