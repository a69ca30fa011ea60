//! Per-iteration trace records shared by every solver.

use serde::Serialize;
use std::fmt;

/// Which solver loop produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sinkhorn,
    Newton,
    DenseNewton,
    Lbfgs,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Sinkhorn => "sinkhorn",
            Stage::Newton => "newton",
            Stage::DenseNewton => "dense_newton",
            Stage::Lbfgs => "lbfgs",
        };
        f.write_str(s)
    }
}

/// One benchmark row: where the solve is after a full iteration.
///
/// `iteration` counts from 1 within each stage. `elapsed_seconds` is wall
/// time since the solve started (monotonic clock). `hessian_sparsity` is
/// the achieved off-block sparsity of the operator used in that iteration,
/// present only for the sparsified Newton stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub stage: Stage,
    pub iteration: usize,
    pub elapsed_seconds: f64,
    pub potential_value: f64,
    pub marginal_kl: f64,
    pub l1_marginal_error: f64,
    pub hessian_sparsity: Option<f64>,
}

impl TraceRecord {
    /// Equality with the timing column ignored; used by determinism checks.
    pub fn same_modulo_time(&self, other: &TraceRecord) -> bool {
        self.stage == other.stage
            && self.iteration == other.iteration
            && self.potential_value == other.potential_value
            && self.marginal_kl == other.marginal_kl
            && self.l1_marginal_error == other.l1_marginal_error
            && self.hessian_sparsity == other.hessian_sparsity
    }
}

/// Where solvers append their per-iteration records.
pub trait TraceSink {
    fn record(&mut self, record: TraceRecord);
}

/// Discards everything.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _record: TraceRecord) {}
}

impl TraceSink for Vec<TraceRecord> {
    fn record(&mut self, record: TraceRecord) {
        self.push(record);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_are_stable() {
        assert_eq!(Stage::Sinkhorn.to_string(), "sinkhorn");
        assert_eq!(Stage::Newton.to_string(), "newton");
        assert_eq!(Stage::DenseNewton.to_string(), "dense_newton");
        assert_eq!(Stage::Lbfgs.to_string(), "lbfgs");
    }

    #[test]
    fn time_excluded_from_comparison() {
        let a = TraceRecord {
            stage: Stage::Sinkhorn,
            iteration: 1,
            elapsed_seconds: 0.5,
            potential_value: -1.0,
            marginal_kl: 0.1,
            l1_marginal_error: 0.2,
            hessian_sparsity: None,
        };
        let mut b = a.clone();
        b.elapsed_seconds = 2.0;
        assert!(a.same_modulo_time(&b));
        b.marginal_kl = 0.2;
        assert!(!a.same_modulo_time(&b));
    }
}
