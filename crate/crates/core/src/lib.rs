//! Kullback-Leibler approximation of a prior spectral density under
//! generalized moment constraints, solved by the fixed-point iteration
//! `Λ_{k+1} = Θ(Λ_k)` on density matrices, together with the linearization
//! of `Θ` at its fixed points.

// `!(x > t)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod filter_bank;
pub mod hermitian;
pub mod instances;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod riccati;
pub mod solver;
pub mod spectral;

pub use config::{NormalizedProblem, ProblemConfig};
pub use error::{KlError, Result};
pub use filter_bank::{check_feasibility, gamma_decomposition, FeasibilityVerdict, FilterBank, GammaDecomposition};
pub use hermitian::{DensityMatrix, HermitianMatrix};
pub use solver::{solve, SolverConfig, SolverReport, Termination};
pub use spectral::{SpectralDensity, SpectralFactor, UnitCircleGrid};
