//! Stage two: sparsified Newton ascent.
//!
//! Per iteration: threshold the Hessian plan block to a target nonzero
//! budget, solve the sparse(+rank-1) system with conjugate gradient,
//! backtrack on the augmented potential, update the duals. The threshold is
//! chosen dynamically as the `⌈λn²⌉`-largest plan entry, so the retained
//! fraction never exceeds the budget except through ties.

use crate::lyapunov::{self, HessianOperator};
use crate::plan::{l1_marginal_error, marginal_kl, LogPlan};
use crate::problem::{DualPotentials, Problem, SolverConfig};
use crate::trace::{Stage, TraceRecord, TraceSink};
use crate::{Error, Result};
use std::time::Instant;

/// Symmetric linear operators the conjugate gradient solver accepts.
pub trait SymOp {
    fn dim(&self) -> usize;
    fn apply_into(&self, u: &[f64], out: &mut [f64]);

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(u, &mut out);
        out
    }
}

impl SymOp for HessianOperator {
    fn dim(&self) -> usize {
        2 * self.n()
    }

    fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        lyapunov::hessian_matvec_into(self, u, out);
    }
}

/// Thresholded negated Hessian: full diagonal, retained off-block entries of
/// `eta·P` in CSR, and the optional rank-1 term.
///
/// The off-block is stored once and applied as both `P` and `Pᵀ`, so the
/// operator is symmetric by construction.
#[derive(Debug, Clone)]
pub struct SparseHessian {
    n: usize,
    /// `eta·[P1; Pᵀ1]` plus any Tikhonov shift; always kept in full.
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// Retained `eta·p_ij` values, row-sorted.
    values: Vec<f64>,
    threshold_rho: f64,
    achieved_sparsity: f64,
    dropped_mass: f64,
    rank1: bool,
}

impl SparseHessian {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// The threshold actually used, on the plan-block scale.
    pub fn threshold_rho(&self) -> f64 {
        self.threshold_rho
    }

    /// Retained fraction `nnz / n²` of the off-block.
    pub fn achieved_sparsity(&self) -> f64 {
        self.achieved_sparsity
    }

    /// Fraction of the plan block's L1 mass that was dropped.
    pub fn dropped_mass(&self) -> f64 {
        self.dropped_mass
    }

    pub fn rank1(&self) -> bool {
        self.rank1
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Row-sorted `(row, col, value)` triples of the retained off-block.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    /// Add `delta` to every diagonal entry (keeps the plain, rank-1-free
    /// variant strictly positive definite for conjugate gradient).
    pub fn with_tikhonov(mut self, delta: f64) -> Self {
        for d in &mut self.diag {
            *d += delta;
        }
        self
    }
}

impl SymOp for SparseHessian {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        assert_eq!(u.len(), 2 * n, "operand length {} != 2n = {}", u.len(), 2 * n);
        let (ux, uy) = u.split_at(n);
        for (o, (&d, &w)) in out.iter_mut().zip(self.diag.iter().zip(u.iter())) {
            *o = d * w;
        }
        let (top, bottom) = out.split_at_mut(n);
        for i in 0..n {
            let start = self.row_ptr[i];
            let end = self.row_ptr[i + 1];
            let mut acc = 0.0;
            let s = ux[i];
            for k in start..end {
                let j = self.col_idx[k];
                let v = self.values[k];
                acc += v * uy[j];
                bottom[j] += v * s;
            }
            top[i] += acc;
        }
        if self.rank1 {
            let vu: f64 = ux.iter().sum::<f64>() - uy.iter().sum::<f64>();
            for t in top.iter_mut() {
                *t += vu;
            }
            for b in bottom.iter_mut() {
                *b -= vu;
            }
        }
    }
}

/// `k`-th largest value (1-based) of `values`, by iterative quickselect with
/// median-of-three pivoting. Expected linear time, deterministic.
fn kth_largest(values: &mut [f64], k: usize) -> f64 {
    assert!(k >= 1 && k <= values.len());
    let mut lo = 0;
    let mut hi = values.len();
    let target = k - 1; // index in descending order
    loop {
        if hi - lo <= 1 {
            return values[lo];
        }
        let pivot = median_of_three(values, lo, hi);
        // Partition descending: [> pivot | == pivot | < pivot].
        let (mut i, mut eq, mut j) = (lo, lo, hi);
        while eq < j {
            if values[eq] > pivot {
                values.swap(i, eq);
                i += 1;
                eq += 1;
            } else if values[eq] < pivot {
                j -= 1;
                values.swap(eq, j);
            } else {
                eq += 1;
            }
        }
        if target < i {
            hi = i;
        } else if target < eq {
            return pivot;
        } else {
            lo = eq;
        }
    }
}

fn median_of_three(values: &[f64], lo: usize, hi: usize) -> f64 {
    let a = values[lo];
    let b = values[(lo + hi) / 2];
    let c = values[hi - 1];
    a.max(b).min(a.min(b).max(c))
}

/// Threshold the operator's plan block at the `⌈λn²⌉`-largest entry.
///
/// Entries `≥ ρ` are retained; ties at `ρ` are all kept, so the achieved
/// sparsity can exceed `λ` by at most `(#ties)/n²` (plus the ceiling slack).
/// Diagonal blocks are never thresholded.
pub fn sparsify(op: &HessianOperator, target_sparsity: f64) -> SparseHessian {
    let n = op.n();
    let total_entries = n * n;
    let k = ((target_sparsity * total_entries as f64).ceil() as usize)
        .clamp(1, total_entries);
    let block = op.plan_block();
    let rho = if k == total_entries {
        block.iter().cloned().fold(f64::INFINITY, f64::min)
    } else {
        let mut scratch = block.to_vec();
        kth_largest(&mut scratch, k)
    };

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut kept_mass = 0.0;
    let mut total_mass = 0.0;
    row_ptr.push(0);
    let eta = op.eta();
    for i in 0..n {
        let row = &block[i * n..(i + 1) * n];
        for (j, &p) in row.iter().enumerate() {
            total_mass += p;
            if p >= rho {
                col_idx.push(j);
                values.push(eta * p);
                kept_mass += p;
            }
        }
        row_ptr.push(values.len());
    }

    let mut diag = Vec::with_capacity(2 * n);
    diag.extend(op.row_sums().iter().map(|s| eta * s));
    diag.extend(op.col_sums().iter().map(|s| eta * s));

    let nnz = values.len();
    SparseHessian {
        n,
        diag,
        row_ptr,
        col_idx,
        values,
        threshold_rho: rho,
        achieved_sparsity: nnz as f64 / total_entries as f64,
        dropped_mass: if total_mass > 0.0 {
            (total_mass - kept_mass) / total_mass
        } else {
            0.0
        },
        rank1: op.rank1_correction(),
    }
}

/// Conjugate gradient outcome; `solution` is the best iterate seen.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Solve `op·z = b` to `‖op·z - b‖ ≤ rel_tol·‖b‖` from a zero initial
/// guess, or return the best iterate after `max_iters` matvecs.
///
/// `jacobi_precondition` rescales by the operator diagonal; the default is
/// off (diagonal dominance makes it optional). Fails only if non-finite
/// values appear, which signals an indefinite or broken operator.
pub fn conjugate_gradient(
    op: &dyn SymOp,
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    cg_impl(op, b, rel_tol, max_iters, None)
}

/// [`conjugate_gradient`] with Jacobi (inverse-diagonal) preconditioning.
pub fn jacobi_conjugate_gradient(
    op: &dyn SymOp,
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
    diag: &[f64],
) -> Result<CgOutcome> {
    let inv: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    cg_impl(op, b, rel_tol, max_iters, Some(&inv))
}

fn cg_impl(
    op: &dyn SymOp,
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
    inv_diag: Option<&[f64]>,
) -> Result<CgOutcome> {
    let dim = op.dim();
    assert_eq!(b.len(), dim, "rhs length {} != operator dim {}", b.len(), dim);
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: vec![0.0; dim],
            iterations: 0,
            residual_norm: 0.0,
            converged: true,
        });
    }
    let target = rel_tol * b_norm;

    let mut x = vec![0.0; dim];
    let mut r = b.to_vec();
    let precond = |r: &[f64]| -> Vec<f64> {
        match inv_diag {
            Some(inv) => r.iter().zip(inv).map(|(&v, &d)| v * d).collect(),
            None => r.to_vec(),
        }
    };
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; dim];

    let mut best = x.clone();
    let mut best_res = b_norm;
    let mut iterations = 0;

    for _ in 0..max_iters {
        op.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::NonFinite {
                context: "conjugate gradient curvature",
            });
        }
        if pap <= 0.0 {
            // Null-space or semidefinite breakdown: keep the best iterate.
            break;
        }
        let alpha = rz / pap;
        iterations += 1;
        for ((xi, &pi), (ri, &api)) in
            x.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap))
        {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let res = norm2(&r);
        if !res.is_finite() {
            return Err(Error::NonFinite {
                context: "conjugate gradient residual",
            });
        }
        if res < best_res {
            best.copy_from_slice(&x);
            best_res = res;
        }
        if res <= target {
            return Ok(CgOutcome {
                solution: x,
                iterations,
                residual_norm: res,
                converged: true,
            });
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }

    Ok(CgOutcome {
        solution: best,
        iterations,
        residual_norm: best_res,
        converged: best_res <= target,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Armijo backtracking for a maximization: the largest `α ∈ {1, β, β², …}`
/// with `objective(z + α·dz) ≥ f0 + c1·α·⟨∇objective(z), dz⟩`, trying at
/// most `max_backtracks` values. Returns 0 when no trial succeeds; callers
/// fall back (the potential is never worsened by a zero step).
///
/// The inequality carries a rounding allowance of a few ulps of the
/// objective: near convergence the true increase per step drops below what
/// double-precision evaluation of the objective can resolve, while the
/// gradient (computed from marginal sums, not differences of `f`) still has
/// full resolution. Without the allowance every solver stalls around
/// `marginal_kl ≈ 1e-11`.
pub fn line_search(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    z: &[f64],
    dz: &[f64],
    f0: f64,
    grad_dot_dz: f64,
    c1: f64,
    shrink: f64,
    max_backtracks: usize,
) -> f64 {
    let mut alpha = 1.0;
    let mut trial = vec![0.0; z.len()];
    for _ in 0..max_backtracks {
        for ((t, &zi), &di) in trial.iter_mut().zip(z).zip(dz) {
            *t = zi + alpha * di;
        }
        let ft = objective(&trial);
        let fuzz = 4.0 * f64::EPSILON * (f0.abs() + ft.abs() + 1.0);
        if ft.is_finite() && ft >= f0 + c1 * alpha * grad_dot_dz - fuzz {
            return alpha;
        }
        alpha *= shrink;
    }
    0.0
}

/// Result of a Newton-type run.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub duals: DualPotentials,
    pub iterations: usize,
    /// Iterations where the line search failed and a full Sinkhorn
    /// iteration was substituted.
    pub fallbacks: usize,
    pub converged: bool,
    pub final_kl: f64,
    pub final_l1: f64,
}

/// How a Newton-type loop obtains its search direction.
pub(crate) trait DirectionSolver {
    fn stage(&self) -> Stage;
    /// Direction `Δz` solving (approximately) `H·Δz = g`, plus the achieved
    /// off-block sparsity when the operator was thresholded.
    fn solve(
        &mut self,
        problem: &Problem,
        plan: &LogPlan,
        grad: &[f64],
    ) -> Result<(Vec<f64>, Option<f64>)>;
}

struct SparseDirection<'c> {
    cfg: &'c SolverConfig,
    augmented: bool,
}

impl DirectionSolver for SparseDirection<'_> {
    fn stage(&self) -> Stage {
        Stage::Newton
    }

    fn solve(
        &mut self,
        problem: &Problem,
        plan: &LogPlan,
        grad: &[f64],
    ) -> Result<(Vec<f64>, Option<f64>)> {
        let op = lyapunov::negated_hessian_from_plan(problem, plan, self.augmented);
        let mut sparse = sparsify(&op, self.cfg.target_sparsity);
        if !self.augmented {
            sparse = sparse.with_tikhonov(1e-12 * problem.eta());
        }
        let max_iters = self.cfg.effective_cg_max_iters(problem.n());
        let out = if self.cfg.cg_jacobi {
            let diag: Vec<f64> = sparse
                .diag()
                .iter()
                .map(|&d| if sparse.rank1() { d + 1.0 } else { d })
                .collect();
            jacobi_conjugate_gradient(&sparse, grad, self.cfg.cg_rel_tol, max_iters, &diag)?
        } else {
            conjugate_gradient(&sparse, grad, self.cfg.cg_rel_tol, max_iters)?
        };
        Ok((out.solution, Some(sparse.achieved_sparsity())))
    }
}

/// The shared Newton-stage loop: project onto the balanced slice, then
/// iterate direction → Armijo → update with the Sinkhorn fallback, stopping
/// on the configured marginal-KL target.
pub(crate) fn newton_loop(
    problem: &Problem,
    duals: &DualPotentials,
    cfg: &SolverConfig,
    sink: &mut dyn TraceSink,
    solver: &mut dyn DirectionSolver,
    augmented: bool,
) -> Result<NewtonOutcome> {
    cfg.validate_for(problem.n())?;
    let started = Instant::now();
    let n = problem.n();

    // Project into the non-degenerate directions: z ← z - (vᵀz / 2n)·v.
    let mut z = duals.to_stacked();
    let gamma = (z[..n].iter().sum::<f64>() - z[n..].iter().sum::<f64>()) / (2 * n) as f64;
    for v in &mut z[..n] {
        *v -= gamma;
    }
    for v in &mut z[n..] {
        *v += gamma;
    }

    let objective = |problem: &Problem, zt: &[f64]| -> f64 {
        let plan = LogPlan::from_stacked(problem, zt);
        let d = DualPotentials::from_stacked(zt);
        let f = lyapunov::potential_from_plan(problem, &d, &plan);
        if augmented {
            let g = d.balance();
            f - 0.5 * g * g
        } else {
            f
        }
    };

    let mut plan = LogPlan::from_stacked(problem, &z);
    let mut kl = marginal_kl(&plan, problem);
    let mut l1 = l1_marginal_error(&plan, problem);
    let mut iterations = 0;
    let mut fallbacks = 0;
    let mut converged = crate::solvers::reached_target(kl, l1, cfg.stop_marginal_kl);

    for it in 1..=cfg.n2 {
        if converged {
            break;
        }
        let mut grad = lyapunov::gradient_from_plan(problem, &plan);
        if augmented {
            let bal = z[..n].iter().sum::<f64>() - z[n..].iter().sum::<f64>();
            lyapunov::apply_balance_penalty(&mut grad, bal, n);
        }
        let (dz, sparsity) = solver.solve(problem, &plan, &grad)?;
        let g_dot_dz = dot(&grad, &dz);
        // A non-ascent (or numerically empty) direction means the operator
        // solve failed; go straight to the fallback.
        let alpha = if g_dot_dz > 0.0 && g_dot_dz.is_finite() {
            let f0 = objective(problem, &z);
            line_search(
                &mut |zt| objective(problem, zt),
                &z,
                &dz,
                f0,
                g_dot_dz,
                cfg.armijo_c1,
                cfg.armijo_shrink,
                cfg.armijo_max_backtracks,
            )
        } else {
            0.0
        };
        if alpha > 0.0 {
            for (zi, &di) in z.iter_mut().zip(&dz) {
                *zi += alpha * di;
            }
        } else {
            // Line-search failure: one full Sinkhorn iteration still makes
            // monotone progress on the potential.
            fallbacks += 1;
            let d = DualPotentials::from_stacked(&z);
            let d = crate::sinkhorn::x_step(problem, &d);
            let d = crate::sinkhorn::y_step(problem, &d);
            z = d.to_stacked();
        }

        plan = LogPlan::from_stacked(problem, &z);
        kl = marginal_kl(&plan, problem);
        l1 = l1_marginal_error(&plan, problem);
        iterations = it;
        let d = DualPotentials::from_stacked(&z);
        sink.record(TraceRecord {
            stage: solver.stage(),
            iteration: it,
            elapsed_seconds: started.elapsed().as_secs_f64(),
            potential_value: lyapunov::potential_from_plan(problem, &d, &plan),
            marginal_kl: kl,
            l1_marginal_error: l1,
            hessian_sparsity: sparsity,
        });
        converged = crate::solvers::reached_target(kl, l1, cfg.stop_marginal_kl);
    }

    Ok(NewtonOutcome {
        duals: DualPotentials::from_stacked(&z),
        iterations,
        fallbacks,
        converged,
        final_kl: kl,
        final_l1: l1,
    })
}

/// Sparsified Newton on the augmented potential (the default formulation).
///
/// `duals` should come out of a Sinkhorn warm start; the iterate is first
/// projected onto the balanced slice `Σx = Σy`.
pub fn run(
    problem: &Problem,
    duals: &DualPotentials,
    cfg: &SolverConfig,
    sink: &mut dyn TraceSink,
) -> Result<NewtonOutcome> {
    let mut solver = SparseDirection {
        cfg,
        augmented: true,
    };
    newton_loop(problem, duals, cfg, sink, &mut solver, true)
}

/// The plain variant: no rank-1 term, line search on `f` itself, and a
/// Tikhonov shift `1e-12·eta` on the diagonal to keep conjugate gradient
/// well-posed on the semidefinite operator.
pub fn run_plain(
    problem: &Problem,
    duals: &DualPotentials,
    cfg: &SolverConfig,
    sink: &mut dyn TraceSink,
) -> Result<NewtonOutcome> {
    let mut solver = SparseDirection {
        cfg,
        augmented: false,
    };
    newton_loop(problem, duals, cfg, sink, &mut solver, false)
}
