//! Problem instances, dual variables, and solver configuration.

use crate::{Error, Result};

/// Tolerance on |Σr - 1| and |Σc - 1|. Callers normalize before building.
pub const MARGINAL_SUM_TOL: f64 = 1e-12;

/// An entropy-regularized transport instance: square cost matrix, strictly
/// positive marginals summing to one, and regularization strength `eta`.
///
/// Immutable after construction; construction validates every invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    n: usize,
    cost: Vec<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    eta: f64,
}

impl Problem {
    /// Build and validate an instance. `cost` is row-major `n×n`.
    pub fn new(
        n: usize,
        cost: Vec<f64>,
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
        eta: f64,
    ) -> Result<Self> {
        let p = Problem {
            n,
            cost,
            row_marginal,
            col_marginal,
            eta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Re-check every invariant: square finite cost, strictly positive
    /// marginals summing to one within [`MARGINAL_SUM_TOL`], positive `eta`.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::DimensionMismatch("n must be at least 1".into()));
        }
        if self.cost.len() != self.n * self.n {
            return Err(Error::DimensionMismatch(format!(
                "cost has {} entries, expected {}x{}",
                self.cost.len(),
                self.n,
                self.n
            )));
        }
        if self.row_marginal.len() != self.n || self.col_marginal.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "marginals have lengths {} and {}, expected {}",
                self.row_marginal.len(),
                self.col_marginal.len(),
                self.n
            )));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidEta(self.eta));
        }
        for (k, &v) in self.cost.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteCost {
                    row: k / self.n,
                    col: k % self.n,
                });
            }
        }
        for (which, m) in [("row", &self.row_marginal), ("col", &self.col_marginal)] {
            let mut sum = 0.0;
            for (i, &v) in m.iter().enumerate() {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::NonPositiveMarginal { index: i, value: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
                return Err(Error::MarginalSum { which, sum });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Row-major `n×n` cost entries.
    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn cost_at(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    /// Same instance with a different regularization strength.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Problem::new(
            self.n,
            self.cost.clone(),
            self.row_marginal.clone(),
            self.col_marginal.clone(),
            eta,
        )
    }
}

/// Dual variables `(x, y)` of the potential. Finite entries only; the
/// degenerate direction of the unaugmented potential is `v = [1; -1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl DualPotentials {
    pub fn zeros(n: usize) -> Self {
        DualPotentials {
            x: vec![0.0; n],
            y: vec![0.0; n],
        }
    }

    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "dual vectors have lengths {} and {}",
                x.len(),
                y.len()
            )));
        }
        let d = DualPotentials { x, y };
        if !d.is_finite() {
            return Err(Error::NonFinite {
                context: "dual potentials",
            });
        }
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }

    /// Flatten to the stacked vector `z = [x; y]` used by the Newton solvers.
    pub fn to_stacked(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(2 * self.n());
        z.extend_from_slice(&self.x);
        z.extend_from_slice(&self.y);
        z
    }

    pub fn from_stacked(z: &[f64]) -> Self {
        let n = z.len() / 2;
        DualPotentials {
            x: z[..n].to_vec(),
            y: z[n..].to_vec(),
        }
    }

    /// `Σx - Σy`, the coordinate along the degenerate direction.
    pub fn balance(&self) -> f64 {
        let sx: f64 = self.x.iter().sum();
        let sy: f64 = self.y.iter().sum();
        sx - sy
    }
}

/// Knobs for the two-stage solver and its baselines.
///
/// `cg_max_iters` is a cap; the effective limit is `min(2n, cg_max_iters)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Sinkhorn warm-up iterations (stage one).
    pub n1: usize,
    /// Maximum Newton iterations (stage two).
    pub n2: usize,
    /// Fraction of Hessian off-block entries retained, in (0, 1].
    pub target_sparsity: f64,
    /// Relative residual tolerance for conjugate gradient.
    pub cg_rel_tol: f64,
    /// Iteration cap for conjugate gradient (effective: min(2n, this)).
    pub cg_max_iters: usize,
    /// Jacobi (diagonal) preconditioning for conjugate gradient.
    pub cg_jacobi: bool,
    /// Armijo sufficient-increase constant, in (0, 1).
    pub armijo_c1: f64,
    /// Backtracking shrink factor, in (0, 1).
    pub armijo_shrink: f64,
    /// Maximum backtracking trials before declaring failure.
    pub armijo_max_backtracks: usize,
    /// Terminate once the marginal KL divergence falls to this level.
    pub stop_marginal_kl: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n1: 20,
            n2: 200,
            target_sparsity: 1.0,
            cg_rel_tol: 1e-10,
            cg_max_iters: 1000,
            cg_jacobi: false,
            armijo_c1: 1e-4,
            armijo_shrink: 0.5,
            armijo_max_backtracks: 40,
            stop_marginal_kl: 1e-25,
        }
    }
}

impl SolverConfig {
    /// Check bounds, including `target_sparsity · n² ≥ 1` for the given `n`.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        let lambda = self.target_sparsity;
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target_sparsity must be in (0, 1], got {lambda}"
            )));
        }
        if lambda * ((n * n) as f64) < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "target_sparsity {lambda} keeps fewer than one entry at n = {n}"
            )));
        }
        if !(self.cg_rel_tol > 0.0 && self.cg_rel_tol.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cg_rel_tol must be positive, got {}",
                self.cg_rel_tol
            )));
        }
        if self.cg_max_iters == 0 {
            return Err(Error::InvalidConfig("cg_max_iters must be positive".into()));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "armijo_c1 must be in (0, 1), got {}",
                self.armijo_c1
            )));
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "armijo_shrink must be in (0, 1), got {}",
                self.armijo_shrink
            )));
        }
        if self.armijo_max_backtracks == 0 {
            return Err(Error::InvalidConfig(
                "armijo_max_backtracks must be positive".into(),
            ));
        }
        if !(self.stop_marginal_kl >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "stop_marginal_kl must be non-negative, got {}",
                self.stop_marginal_kl
            )));
        }
        Ok(())
    }

    /// Effective conjugate-gradient iteration limit.
    ///
    /// In exact arithmetic `2n` steps would suffice, but on ill-conditioned
    /// systems (large `eta`, plans near a vertex) finite-precision CG keeps
    /// making progress well past the operator dimension, so the cap is not
    /// clamped to `2n`.
    pub fn effective_cg_max_iters(&self, _n: usize) -> usize {
        self.cg_max_iters.max(1)
    }
}
