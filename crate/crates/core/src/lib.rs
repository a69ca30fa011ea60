//! High-precision solvers for entropy-regularized optimal transport.
//!
//! The problem: given a cost matrix `C`, marginals `r`, `c`, and a
//! regularization strength `eta`, find the transport plan minimizing
//! `C·P + (1/eta)·Σ p_ij log p_ij` subject to `P1 = r`, `Pᵀ1 = c`.
//!
//! Behind the scenes everything works on the concave dual potential
//! `f(x, y) = -(1/eta)·Σ exp(eta(-c_ij + x_i + y_j) - 1) + rᵀx + cᵀy`,
//! whose maximizer yields the optimal plan entrywise as
//! `p_ij = exp(eta(-c_ij + x_i + y_j) - 1)`.
//!
//! Four solvers share that formulation:
//!
//! - [`sinkhorn`]: alternating row/column scaling in log domain (exact
//!   coordinate maximization of `f`).
//! - [`sparse_newton`]: the two-stage method — Sinkhorn warm-up, then Newton
//!   steps on a thresholded (sparse + rank-1) Hessian solved by conjugate
//!   gradient. This is the main solver.
//! - [`baselines::run_dense_newton`]: same Newton loop with a dense direct
//!   factorization, O(n³) per iteration.
//! - [`baselines::run_lbfgs`]: limited-memory quasi-Newton on the same
//!   objective.
//!
//! The [`oracle`] module provides desk-scale ground truth (exhaustive
//! assignment enumeration, closed-form 2×2 reference, sparsity
//! measurement); [`problems`] generates and round-trips instances;
//! [`solvers`] is the front end the CLI and benchmarks drive.
//!
//! All plans are kept in log domain throughout: `eta` in the thousands
//! overflows `exp` in double precision if plans are materialized naively.

pub mod baselines;
pub mod lyapunov;
pub mod oracle;
pub mod plan;
pub mod problem;
pub mod problems;
pub mod sinkhorn;
pub mod solvers;
pub mod sparse_newton;
pub mod trace;

mod logsum;

pub use plan::{entropy, l1_marginal_error, marginal_kl, transport_cost, LogPlan};
pub use problem::{DualPotentials, Problem, SolverConfig};
pub use trace::{Stage, TraceRecord, TraceSink};

use thiserror::Error;

/// Errors produced by validation, solvers, and file ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("marginal entry {index} is {value}; all entries must be strictly positive")]
    NonPositiveMarginal { index: usize, value: f64 },

    #[error("{which} marginal sums to {sum}, more than 1e-12 away from 1")]
    MarginalSum { which: &'static str, sum: f64 },

    #[error("cost matrix contains a non-finite entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("regularization eta must be positive and finite, got {0}")]
    InvalidEta(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("dense factorization failed: matrix not positive definite at pivot {pivot}")]
    FactorizationFailed { pivot: usize },

    #[error("instance too large for exhaustive enumeration: n = {n}, limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("{path}:{line}:{col}: {message}")]
    Parse {
        path: String,
        line: usize,
        col: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
