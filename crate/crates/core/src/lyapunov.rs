//! The dual potential, its gradient, and a matrix-free negated-Hessian
//! operator, plus the augmented variants that remove the degenerate
//! direction `v = [1; -1]`.
//!
//! Sign convention: the potential `f` is concave, so its Hessian is negative
//! semidefinite. Everything downstream (conjugate gradient in particular)
//! wants a positive semidefinite operator, so this module hands out
//! `H = -∇²f = eta·[diag(P1), P; Pᵀ, diag(Pᵀ1)]`, optionally corrected by
//! `+vvᵀ` for the augmented potential. The Newton ascent direction is then
//! the solution of `H·Δz = ∇f`.

use crate::plan::LogPlan;
use crate::problem::{DualPotentials, Problem};

/// `f(x, y) = -(1/eta)·Σ exp(eta(-c_ij + x_i + y_j) - 1) + rᵀx + cᵀy`.
///
/// The exp-sum accumulates per-row log-sum-exps, so no intermediate product
/// overflows for finite duals; wildly infeasible duals yield `-inf`, which
/// the line searches treat as an automatic rejection.
pub fn potential(problem: &Problem, duals: &DualPotentials) -> f64 {
    let plan = LogPlan::from_duals(problem, duals);
    potential_from_plan(problem, duals, &plan)
}

pub(crate) fn potential_from_plan(
    problem: &Problem,
    duals: &DualPotentials,
    plan: &LogPlan,
) -> f64 {
    let mass: f64 = plan.row_log_sums().iter().map(|ls| ls.exp()).sum();
    let rx: f64 = problem
        .row_marginal()
        .iter()
        .zip(&duals.x)
        .map(|(&m, &v)| m * v)
        .sum();
    let cy: f64 = problem
        .col_marginal()
        .iter()
        .zip(&duals.y)
        .map(|(&m, &v)| m * v)
        .sum();
    -mass / problem.eta() + rx + cy
}

/// `∇f = [r - P1; c - Pᵀ1]` as a stacked length-2n vector.
pub fn gradient(problem: &Problem, duals: &DualPotentials) -> Vec<f64> {
    let plan = LogPlan::from_duals(problem, duals);
    gradient_from_plan(problem, &plan)
}

pub(crate) fn gradient_from_plan(problem: &Problem, plan: &LogPlan) -> Vec<f64> {
    let n = problem.n();
    let mut g = Vec::with_capacity(2 * n);
    for (&m, s) in problem.row_marginal().iter().zip(plan.row_sums()) {
        g.push(m - s);
    }
    for (&m, s) in problem.col_marginal().iter().zip(plan.col_sums()) {
        g.push(m - s);
    }
    g
}

/// `f_aug(x, y) = f(x, y) - ½(Σx - Σy)²`, strictly concave along `v`.
pub fn augmented_potential(problem: &Problem, duals: &DualPotentials) -> f64 {
    let gamma = duals.balance();
    potential(problem, duals) - 0.5 * gamma * gamma
}

/// `∇f_aug = ∇f - (Σx - Σy)·v` with `v = [1; -1]`.
pub fn augmented_gradient(problem: &Problem, duals: &DualPotentials) -> Vec<f64> {
    let mut g = gradient(problem, duals);
    apply_balance_penalty(&mut g, duals.balance(), problem.n());
    g
}

pub(crate) fn apply_balance_penalty(g: &mut [f64], gamma: f64, n: usize) {
    for v in &mut g[..n] {
        *v -= gamma;
    }
    for v in &mut g[n..] {
        *v += gamma;
    }
}

/// The negated Hessian `H = eta·[diag(P1), P; Pᵀ, diag(Pᵀ1)] (+ vvᵀ)` held
/// matrix-free: marginal sums, the dense plan block, and flags.
///
/// Without the rank-1 correction `H` is symmetric positive semidefinite with
/// exact null direction `[1; -1]`; with it, positive definite.
#[derive(Debug, Clone)]
pub struct HessianOperator {
    n: usize,
    eta: f64,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    /// Dense `P` entries, row-major (before any thresholding).
    plan_block: Vec<f64>,
    rank1_correction: bool,
}

impl HessianOperator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }

    pub fn plan_block(&self) -> &[f64] {
        &self.plan_block
    }

    pub fn rank1_correction(&self) -> bool {
        self.rank1_correction
    }

    /// Test/bench constructor from raw parts.
    pub fn from_parts(
        n: usize,
        eta: f64,
        row_sums: Vec<f64>,
        col_sums: Vec<f64>,
        plan_block: Vec<f64>,
        rank1_correction: bool,
    ) -> Self {
        assert_eq!(row_sums.len(), n);
        assert_eq!(col_sums.len(), n);
        assert_eq!(plan_block.len(), n * n);
        HessianOperator {
            n,
            eta,
            row_sums,
            col_sums,
            plan_block,
            rank1_correction,
        }
    }
}

/// Build `H` (augmented: `H + vvᵀ`) at the given duals.
pub fn negated_hessian(
    problem: &Problem,
    duals: &DualPotentials,
    augmented: bool,
) -> HessianOperator {
    let plan = LogPlan::from_duals(problem, duals);
    negated_hessian_from_plan(problem, &plan, augmented)
}

pub(crate) fn negated_hessian_from_plan(
    problem: &Problem,
    plan: &LogPlan,
    augmented: bool,
) -> HessianOperator {
    HessianOperator {
        n: problem.n(),
        eta: problem.eta(),
        row_sums: plan.row_sums(),
        col_sums: plan.col_sums(),
        plan_block: plan.to_dense(),
        rank1_correction: augmented,
    }
}

/// Apply `H` to a stacked vector `u = [u_x; u_y]`:
///
/// - top:    `eta·(diag(P1)·u_x + P·u_y)`
/// - bottom: `eta·(Pᵀ·u_x + diag(Pᵀ1)·u_y)`
/// - plus `v·(vᵀu)` when the rank-1 correction is on.
pub fn hessian_matvec(op: &HessianOperator, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * op.n];
    hessian_matvec_into(op, u, &mut out);
    out
}

pub fn hessian_matvec_into(op: &HessianOperator, u: &[f64], out: &mut [f64]) {
    let n = op.n;
    assert_eq!(u.len(), 2 * n, "operand length {} != 2n = {}", u.len(), 2 * n);
    assert_eq!(out.len(), 2 * n);
    let (ux, uy) = u.split_at(n);
    let (top, bottom) = out.split_at_mut(n);
    for i in 0..n {
        let row = &op.plan_block[i * n..(i + 1) * n];
        let mut acc = op.row_sums[i] * ux[i];
        for (&p, &w) in row.iter().zip(uy) {
            acc += p * w;
        }
        top[i] = op.eta * acc;
    }
    for (b, (&cs, &w)) in bottom.iter_mut().zip(op.col_sums.iter().zip(uy)) {
        *b = cs * w;
    }
    for i in 0..n {
        let row = &op.plan_block[i * n..(i + 1) * n];
        let s = ux[i];
        for (b, &p) in bottom.iter_mut().zip(row) {
            *b += p * s;
        }
    }
    for b in bottom.iter_mut() {
        *b *= op.eta;
    }
    if op.rank1_correction {
        let vu: f64 = ux.iter().sum::<f64>() - uy.iter().sum::<f64>();
        for t in top.iter_mut() {
            *t += vu;
        }
        for b in bottom.iter_mut() {
            *b -= vu;
        }
    }
}
