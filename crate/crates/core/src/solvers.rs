//! Front end used by the CLI and the benchmark harness: pick a solver, run
//! the stages, collect per-stage summaries.

use crate::baselines;
use crate::lyapunov;
use crate::oracle;
use crate::plan::{l1_marginal_error, marginal_kl, transport_cost, LogPlan};
use crate::problem::{DualPotentials, Problem, SolverConfig};
use crate::sinkhorn;
use crate::sparse_newton;
use crate::trace::{Stage, TraceRecord, TraceSink};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// L1 feasibility level treated as machine accuracy: once
/// `‖P1-r‖₁ + ‖Pᵀ1-c‖₁` is this small the solve is over regardless of the
/// KL threshold.
pub const MACHINE_L1_FLOOR: f64 = 1e-12;

/// The shared stopping rule: the marginal KL divergence at or below the
/// configured threshold, or the L1 feasibility error at the machine floor,
/// whichever happens first.
pub fn reached_target(kl: f64, l1: f64, stop_kl: f64) -> bool {
    (kl >= 0.0 && kl <= stop_kl) || l1 <= MACHINE_L1_FLOOR
}

/// Which solver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Sinkhorn,
    Sns,
    NewtonDense,
    Lbfgs,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Sinkhorn => "sinkhorn",
            SolverKind::Sns => "sns",
            SolverKind::NewtonDense => "newton-dense",
            SolverKind::Lbfgs => "lbfgs",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinkhorn" => Ok(SolverKind::Sinkhorn),
            "sns" => Ok(SolverKind::Sns),
            "newton-dense" => Ok(SolverKind::NewtonDense),
            "lbfgs" => Ok(SolverKind::Lbfgs),
            other => Err(Error::InvalidConfig(format!(
                "unknown solver '{other}' (expected sinkhorn|sns|newton-dense|lbfgs)"
            ))),
        }
    }
}

/// Knobs beyond [`SolverConfig`]: quasi-Newton memory and the iteration cap
/// for the Sinkhorn-only solver.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub config: SolverConfig,
    pub lbfgs_memory: usize,
    pub max_sinkhorn_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            config: SolverConfig::default(),
            lbfgs_memory: 10,
            max_sinkhorn_iters: 200_000,
        }
    }
}

/// Iterations and wall time spent in one stage of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub iterations: usize,
    pub seconds: f64,
}

/// Everything a solve produced.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub kind: SolverKind,
    pub duals: DualPotentials,
    pub stages: Vec<StageSummary>,
    pub converged: bool,
    /// Newton-stage line-search failures that fell back to a Sinkhorn step.
    pub fallbacks: usize,
    pub final_kl: f64,
    pub final_l1: f64,
    pub final_cost: f64,
    pub final_potential: f64,
    pub total_seconds: f64,
}

impl SolveReport {
    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    /// Iterations spent in the second (Newton-type) stage, 0 for plain
    /// Sinkhorn.
    pub fn second_stage_iterations(&self) -> usize {
        self.stages
            .iter()
            .filter(|s| s.stage != Stage::Sinkhorn)
            .map(|s| s.iterations)
            .sum()
    }
}

/// Run the selected solver on a validated problem. Two-stage solvers warm up
/// with `config.n1` Sinkhorn iterations (stopping early if the target is
/// already met) before their second stage.
pub fn solve(
    problem: &Problem,
    kind: SolverKind,
    opts: &SolveOptions,
    sink: &mut dyn TraceSink,
) -> Result<SolveReport> {
    problem.validate()?;
    let cfg = &opts.config;
    let started = Instant::now();
    let init = DualPotentials::zeros(problem.n());
    let mut stages = Vec::new();

    let (duals, converged, fallbacks) = match kind {
        SolverKind::Sinkhorn => {
            let stage_start = Instant::now();
            let out = sinkhorn::run_with_stop(
                problem,
                &init,
                opts.max_sinkhorn_iters,
                cfg.stop_marginal_kl,
                sink,
            );
            stages.push(StageSummary {
                stage: Stage::Sinkhorn,
                iterations: out.iterations,
                seconds: stage_start.elapsed().as_secs_f64(),
            });
            (out.duals, out.converged, 0)
        }
        SolverKind::Sns | SolverKind::NewtonDense | SolverKind::Lbfgs => {
            let stage_start = Instant::now();
            let warm = sinkhorn::run_with_stop(problem, &init, cfg.n1, cfg.stop_marginal_kl, sink);
            stages.push(StageSummary {
                stage: Stage::Sinkhorn,
                iterations: warm.iterations,
                seconds: stage_start.elapsed().as_secs_f64(),
            });
            let stage_start = Instant::now();
            let (outcome, stage) = match kind {
                SolverKind::Sns => (
                    sparse_newton::run(problem, &warm.duals, cfg, sink)?,
                    Stage::Newton,
                ),
                SolverKind::NewtonDense => (
                    baselines::run_dense_newton(problem, &warm.duals, cfg, sink)?,
                    Stage::DenseNewton,
                ),
                SolverKind::Lbfgs => (
                    baselines::run_lbfgs(problem, &warm.duals, opts.lbfgs_memory, cfg, sink)?,
                    Stage::Lbfgs,
                ),
                SolverKind::Sinkhorn => unreachable!(),
            };
            stages.push(StageSummary {
                stage,
                iterations: outcome.iterations,
                seconds: stage_start.elapsed().as_secs_f64(),
            });
            (outcome.duals, outcome.converged, outcome.fallbacks)
        }
    };

    let plan = LogPlan::from_duals(problem, &duals);
    Ok(SolveReport {
        kind,
        converged,
        fallbacks,
        final_kl: marginal_kl(&plan, problem),
        final_l1: l1_marginal_error(&plan, problem),
        final_cost: transport_cost(&plan, problem),
        final_potential: lyapunov::potential_from_plan(problem, &duals, &plan),
        total_seconds: started.elapsed().as_secs_f64(),
        duals,
        stages,
    })
}

/// Optional dynamic stage switch: run Sinkhorn until the per-iteration
/// relative improvement of the potential stalls (below `10·ε·|f|`) or the
/// plan measures as (λ, 0.1)-sparse, whichever comes first, up to
/// `max_steps`. Returns the duals and the number of iterations taken.
pub fn adaptive_warm_start(
    problem: &Problem,
    duals: &DualPotentials,
    lambda: f64,
    max_steps: usize,
    sink: &mut dyn TraceSink,
) -> (DualPotentials, usize) {
    let started = Instant::now();
    let n2 = (problem.n() * problem.n()) as f64;
    let measure_sparsity = lambda * n2 >= 1.0;
    let mut current = duals.clone();
    let mut prev_f = lyapunov::potential(problem, &current);
    for it in 1..=max_steps {
        current = sinkhorn::x_step(problem, &current);
        current = sinkhorn::y_step(problem, &current);
        let plan = LogPlan::from_duals(problem, &current);
        let f = lyapunov::potential_from_plan(problem, &current, &plan);
        let kl = marginal_kl(&plan, problem);
        let l1 = l1_marginal_error(&plan, problem);
        sink.record(TraceRecord {
            stage: Stage::Sinkhorn,
            iteration: it,
            elapsed_seconds: started.elapsed().as_secs_f64(),
            potential_value: f,
            marginal_kl: kl,
            l1_marginal_error: l1,
            hessian_sparsity: None,
        });
        let stalled = (f - prev_f).abs() <= 10.0 * f64::EPSILON * f.abs();
        let sparse_enough = measure_sparsity && {
            let (_, eps) = oracle::sparsity_profile(&plan, lambda);
            eps <= 0.1
        };
        if stalled || sparse_enough {
            return (current, it);
        }
        prev_f = f;
    }
    (current, max_steps)
}
