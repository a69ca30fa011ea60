//! Stage one: alternating row/column scaling in log domain.
//!
//! Each half-step is an exact coordinate maximization of the potential, so
//! the potential value never decreases and the scaled marginal matches its
//! target to rounding immediately after the step.

use crate::lyapunov;
use crate::plan::{l1_marginal_error, marginal_kl, LogPlan};
use crate::problem::{DualPotentials, Problem};
use crate::trace::{Stage, TraceRecord, TraceSink};
use std::time::Instant;

/// `x ← x + (log r - log(P1)) / eta`: after this the row marginals of the
/// implied plan equal `r` up to rounding.
pub fn x_step(problem: &Problem, duals: &DualPotentials) -> DualPotentials {
    let plan = LogPlan::from_duals(problem, duals);
    let eta = problem.eta();
    let x = duals
        .x
        .iter()
        .zip(problem.row_marginal().iter().zip(plan.row_log_sums()))
        .map(|(&xi, (&m, ls))| xi + (m.ln() - ls) / eta)
        .collect();
    DualPotentials {
        x,
        y: duals.y.clone(),
    }
}

/// Column analogue of [`x_step`].
pub fn y_step(problem: &Problem, duals: &DualPotentials) -> DualPotentials {
    let plan = LogPlan::from_duals(problem, duals);
    let eta = problem.eta();
    let y = duals
        .y
        .iter()
        .zip(problem.col_marginal().iter().zip(plan.col_log_sums()))
        .map(|(&yi, (&m, ls))| yi + (m.ln() - ls) / eta)
        .collect();
    DualPotentials {
        x: duals.x.clone(),
        y,
    }
}

/// Run `steps` full (x, y) iterations, recording one trace row per
/// iteration.
///
/// The plan's log entries are cached and shifted in place after each dual
/// update instead of being rebuilt from `(x, y)` — adding `eta·Δx_i` to row
/// `i` is exactly the effect a fresh evaluation would have, so the iterates
/// agree with the literal recomputation to rounding.
pub fn run(
    problem: &Problem,
    duals: &DualPotentials,
    steps: usize,
    sink: &mut dyn TraceSink,
) -> DualPotentials {
    run_with_stop(problem, duals, steps, f64::NEG_INFINITY, sink).duals
}

/// Outcome of a Sinkhorn run with a stopping rule.
#[derive(Debug, Clone)]
pub struct SinkhornOutcome {
    pub duals: DualPotentials,
    pub iterations: usize,
    pub converged: bool,
    pub final_kl: f64,
    pub final_l1: f64,
}

/// Run until the marginal KL divergence reaches `stop_kl` (checked against
/// [`crate::solvers::reached_target`]) or `max_steps` iterations elapse.
pub fn run_with_stop(
    problem: &Problem,
    duals: &DualPotentials,
    max_steps: usize,
    stop_kl: f64,
    sink: &mut dyn TraceSink,
) -> SinkhornOutcome {
    let started = Instant::now();
    let n = problem.n();
    let eta = problem.eta();
    let log_r: Vec<f64> = problem.row_marginal().iter().map(|m| m.ln()).collect();
    let log_c: Vec<f64> = problem.col_marginal().iter().map(|m| m.ln()).collect();

    let mut current = duals.clone();
    let mut plan = LogPlan::from_duals(problem, &current);
    let mut kl = marginal_kl(&plan, problem);
    let mut l1 = l1_marginal_error(&plan, problem);
    let mut converged = crate::solvers::reached_target(kl, l1, stop_kl);
    let mut iterations = 0;

    for it in 1..=max_steps {
        if converged {
            break;
        }
        // x half-step on the cached plan.
        let row_ls = plan.row_log_sums();
        let mut row_shift = vec![0.0; n];
        for i in 0..n {
            let delta = log_r[i] - row_ls[i];
            current.x[i] += delta / eta;
            row_shift[i] = delta;
        }
        plan.shift_rows(&row_shift);

        // y half-step.
        let col_ls = plan.col_log_sums();
        let mut col_shift = vec![0.0; n];
        for j in 0..n {
            let delta = log_c[j] - col_ls[j];
            current.y[j] += delta / eta;
            col_shift[j] = delta;
        }
        plan.shift_cols(&col_shift);

        kl = marginal_kl(&plan, problem);
        l1 = l1_marginal_error(&plan, problem);
        iterations = it;
        sink.record(TraceRecord {
            stage: Stage::Sinkhorn,
            iteration: it,
            elapsed_seconds: started.elapsed().as_secs_f64(),
            potential_value: lyapunov::potential_from_plan(problem, &current, &plan),
            marginal_kl: kl,
            l1_marginal_error: l1,
            hessian_sparsity: None,
        });
        converged = crate::solvers::reached_target(kl, l1, stop_kl);
    }

    SinkhornOutcome {
        duals: current,
        iterations,
        converged,
        final_kl: kl,
        final_l1: l1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{l1_marginal_error, marginal_kl};
    use crate::problems;
    use crate::trace::NullSink;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    fn random_instance(n: usize, eta: f64, seed: u64) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        problems::random_cost_problem(n, &mut rng, eta)
    }

    #[test]
    fn x_step_on_unit_instance() {
        let p = Problem::new(1, vec![0.0], vec![1.0], vec![1.0], 1.0).unwrap();
        let d = sinkhorn_x(&p);
        assert!((d.x[0] - 1.0).abs() < 1e-15);
        let plan = LogPlan::from_duals(&p, &d);
        assert!((plan.log_entry(0, 0) - 0.0).abs() < 1e-15);
    }

    fn sinkhorn_x(p: &Problem) -> DualPotentials {
        x_step(p, &DualPotentials::zeros(p.n()))
    }

    #[test]
    fn x_step_is_idempotent_on_row_feasible_duals() {
        let p = random_instance(3, 2.0, 1);
        let d = x_step(&p, &DualPotentials::zeros(3));
        let d2 = x_step(&p, &d);
        for (a, b) in d.x.iter().zip(&d2.x) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn half_steps_restore_marginals_exactly() {
        let p = random_instance(3, 5.0, 2);
        let d = x_step(&p, &DualPotentials::zeros(3));
        let plan = LogPlan::from_duals(&p, &d);
        let l1_rows: f64 = p
            .row_marginal()
            .iter()
            .zip(plan.row_sums())
            .map(|(&m, s)| (s - m).abs())
            .sum();
        assert!(l1_rows <= 1e-12);

        let d = y_step(&p, &d);
        let plan = LogPlan::from_duals(&p, &d);
        let l1_cols: f64 = p
            .col_marginal()
            .iter()
            .zip(plan.col_sums())
            .map(|(&m, s)| (s - m).abs())
            .sum();
        assert!(l1_cols <= 1e-12);
    }

    #[test]
    fn zero_steps_returns_input() {
        let p = random_instance(4, 1.0, 3);
        let d = DualPotentials::new(vec![0.1, 0.2, 0.3, 0.4], vec![0.0; 4]).unwrap();
        let out = run(&p, &d, 0, &mut NullSink);
        assert_eq!(out, d);
    }

    #[test]
    fn unit_instance_converges_in_one_step() {
        let p = Problem::new(1, vec![0.0], vec![1.0], vec![1.0], 1.0).unwrap();
        let out = run(&p, &DualPotentials::zeros(1), 1, &mut NullSink);
        let plan = LogPlan::from_duals(&p, &out);
        assert_eq!(marginal_kl(&plan, &p), 0.0);
    }

    #[test]
    fn cached_run_matches_literal_half_steps() {
        let p = random_instance(5, 8.0, 4);
        let steps = 25;
        let fast = run(&p, &DualPotentials::zeros(5), steps, &mut NullSink);
        let mut slow = DualPotentials::zeros(5);
        for _ in 0..steps {
            slow = x_step(&p, &slow);
            slow = y_step(&p, &slow);
        }
        for (a, b) in fast.x.iter().chain(&fast.y).zip(slow.x.iter().chain(&slow.y)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn potential_monotone_and_kl_reaches_target() {
        let p = random_instance(50, 100.0, 5);
        let mut trace = Vec::new();
        let out = run_with_stop(&p, &DualPotentials::zeros(50), 500, f64::NEG_INFINITY, &mut trace);
        assert_eq!(out.iterations, 500);
        let mut prev = f64::NEG_INFINITY;
        for rec in &trace {
            assert!(
                rec.potential_value >= prev - 1e-12,
                "potential decreased: {prev} -> {}",
                rec.potential_value
            );
            prev = rec.potential_value;
        }
        // Marginal KL is (weakly) decreasing until it crosses 1e-8.
        let mut below = false;
        let mut prev_kl = f64::INFINITY;
        for rec in &trace {
            if !below {
                assert!(
                    rec.marginal_kl <= prev_kl * (1.0 + 1e-9) || rec.marginal_kl <= 1e-8,
                    "kl increased early: {prev_kl} -> {}",
                    rec.marginal_kl
                );
            }
            if rec.marginal_kl <= 1e-8 {
                below = true;
            }
            prev_kl = rec.marginal_kl;
        }
        assert!(below, "kl never reached 1e-8; final {}", out.final_kl);
    }

    #[test]
    fn deterministic_repeat_runs_bitwise_identical() {
        let p = random_instance(8, 30.0, 6);
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        let a = run_with_stop(&p, &DualPotentials::zeros(8), 50, 1e-30, &mut t1);
        let b = run_with_stop(&p, &DualPotentials::zeros(8), 50, 1e-30, &mut t2);
        assert_eq!(a.duals, b.duals);
        assert_eq!(t1.len(), t2.len());
        for (x, y) in t1.iter().zip(&t2) {
            assert!(x.same_modulo_time(y));
        }
    }

    #[test]
    fn stop_rule_halts_early() {
        let p = random_instance(6, 10.0, 7);
        let out = run_with_stop(&p, &DualPotentials::zeros(6), 100_000, 1e-10, &mut NullSink);
        assert!(out.converged);
        assert!(out.iterations < 100_000);
        let plan = LogPlan::from_duals(&p, &out.duals);
        assert!(marginal_kl(&plan, &p) <= 1e-10 || l1_marginal_error(&plan, &p) <= 1e-12);
    }
}
