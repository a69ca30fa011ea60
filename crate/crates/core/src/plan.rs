//! Transport plans stored entrywise in log domain, and the scalar metrics
//! reported against them.
//!
//! Entry `(i, j)` holds `eta·(-c_ij + x_i + y_j) - 1`, so the plan itself is
//! `p_ij = exp(entry)`. Keeping the logs (never the raw plan) is what lets
//! `eta` in the thousands pass through without overflow; every row/column
//! sum goes through log-sum-exp with per-row max subtraction.

use crate::logsum::{col_logsumexp, logsumexp};
use crate::problem::{DualPotentials, Problem};

/// Log-domain entries below this contribute nothing to entropy or cost sums
/// (`exp` underflows double precision; the 0·log 0 = 0 convention).
pub const LOG_UNDERFLOW_FLOOR: f64 = -745.0;

/// A transport plan as the matrix of `log p_ij`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPlan {
    n: usize,
    entries: Vec<f64>,
}

impl LogPlan {
    /// Evaluate `eta·(-c_ij + x_i + y_j) - 1` for every cell.
    pub fn from_duals(problem: &Problem, duals: &DualPotentials) -> LogPlan {
        let n = problem.n();
        debug_assert_eq!(duals.n(), n);
        debug_assert!(duals.is_finite());
        let eta = problem.eta();
        let cost = problem.cost();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            let xi = duals.x[i];
            let row = &mut entries[i * n..(i + 1) * n];
            let crow = &cost[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] = eta * (-crow[j] + xi + duals.y[j]) - 1.0;
            }
        }
        LogPlan { n, entries }
    }

    /// Same evaluation from a stacked `z = [x; y]` vector.
    pub fn from_stacked(problem: &Problem, z: &[f64]) -> LogPlan {
        let n = problem.n();
        debug_assert_eq!(z.len(), 2 * n);
        let eta = problem.eta();
        let cost = problem.cost();
        let (x, y) = z.split_at(n);
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            let xi = x[i];
            let row = &mut entries[i * n..(i + 1) * n];
            let crow = &cost[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] = eta * (-crow[j] + xi + y[j]) - 1.0;
            }
        }
        LogPlan { n, entries }
    }

    /// Wrap raw log entries (row-major, length `n²`).
    pub fn from_log_entries(n: usize, entries: Vec<f64>) -> LogPlan {
        assert_eq!(entries.len(), n * n);
        LogPlan { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log_entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn log_entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// `log (P1)_i` per row, via log-sum-exp.
    pub fn row_log_sums(&self) -> Vec<f64> {
        self.entries
            .chunks_exact(self.n)
            .map(logsumexp)
            .collect()
    }

    /// `log (Pᵀ1)_j` per column.
    pub fn col_log_sums(&self) -> Vec<f64> {
        col_logsumexp(&self.entries, self.n)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.row_log_sums().iter().map(|v| v.exp()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.col_log_sums().iter().map(|v| v.exp()).collect()
    }

    /// Materialize `P = exp(entries)`. Only safe at moderate magnitudes;
    /// callers in this crate use it for operators and desk-scale oracles.
    pub fn to_dense(&self) -> Vec<f64> {
        self.entries.iter().map(|v| v.exp()).collect()
    }

    /// Add `delta[i]` to every entry of row `i` (the log-domain effect of a
    /// dual x-update scaled by `eta`).
    pub(crate) fn shift_rows(&mut self, deltas: &[f64]) {
        debug_assert_eq!(deltas.len(), self.n);
        for (row, &d) in self.entries.chunks_exact_mut(self.n).zip(deltas) {
            for v in row {
                *v += d;
            }
        }
    }

    /// Add `delta[j]` to every entry of column `j`.
    pub(crate) fn shift_cols(&mut self, deltas: &[f64]) {
        debug_assert_eq!(deltas.len(), self.n);
        for row in self.entries.chunks_exact_mut(self.n) {
            for (v, &d) in row.iter_mut().zip(deltas) {
                *v += d;
            }
        }
    }
}

/// Marginal KL divergence `KL(r‖P1) + KL(c‖Pᵀ1)`, the convergence measure.
///
/// Each marginal contributes the unnormalized (Bregman) KL
/// `Σ mᵢ·ln(mᵢ/sᵢ) - mᵢ + sᵢ`, which matches the textbook
/// `Σ mᵢ·ln(mᵢ/sᵢ)` whenever the plan's marginal sums to one (every
/// Sinkhorn iterate) and stays non-negative in between, with equality
/// exactly at feasibility.
///
/// Each term is evaluated as `m·(δ - ln1p(δ))` with `δ = s/m - 1`: the
/// integrand is purely second order in δ, so readings stay meaningful down
/// to ~1e-27 — differencing `ln m` against the log-sum-exp directly would
/// floor out near 1e-14 and make the deep stopping thresholds unreadable.
pub fn marginal_kl(plan: &LogPlan, problem: &Problem) -> f64 {
    let mut kl = 0.0;
    for (&m, &ls) in problem.row_marginal().iter().zip(plan.row_log_sums().iter()) {
        kl += kl_term(m, ls);
    }
    for (&m, &ls) in problem.col_marginal().iter().zip(plan.col_log_sums().iter()) {
        kl += kl_term(m, ls);
    }
    kl
}

/// `m·ln(m/s) - m + s`, written as `m·(e^x - 1 - x)` for `x = ln(s/m)`.
/// Non-negative for every finite input, exactly 0 when `s` matches `m`.
fn kl_term(m: f64, ls: f64) -> f64 {
    let x = ls - m.ln();
    if x.abs() < 0.5 {
        m * (x.exp_m1() - x)
    } else {
        ls.exp() - m - m * x
    }
}

/// `‖P1 - r‖₁ + ‖Pᵀ1 - c‖₁`, the L1 feasibility error.
pub fn l1_marginal_error(plan: &LogPlan, problem: &Problem) -> f64 {
    let mut err = 0.0;
    for (&m, s) in problem.row_marginal().iter().zip(plan.row_sums()) {
        err += (s - m).abs();
    }
    for (&m, s) in problem.col_marginal().iter().zip(plan.col_sums()) {
        err += (s - m).abs();
    }
    err
}

/// Transport cost `Σ c_ij · p_ij`.
pub fn transport_cost(plan: &LogPlan, problem: &Problem) -> f64 {
    debug_assert_eq!(plan.n(), problem.n());
    let mut total = 0.0;
    for (&le, &c) in plan.log_entries().iter().zip(problem.cost()) {
        if le >= LOG_UNDERFLOW_FLOOR {
            total += c * le.exp();
        }
    }
    total
}

/// Plan entropy `Σ p_ij · log p_ij`, with 0·log 0 = 0 for underflowed cells.
pub fn entropy(plan: &LogPlan) -> f64 {
    let mut total = 0.0;
    for &le in plan.log_entries() {
        if le >= LOG_UNDERFLOW_FLOOR {
            total += le.exp() * le;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{DualPotentials, Problem};
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    /// Plain double-loop oracle over the exponentiated plan.
    fn naive_metrics(plan: &LogPlan, problem: &Problem) -> (f64, f64, f64) {
        let n = plan.n();
        let p = plan.to_dense();
        let mut row = vec![0.0; n];
        let mut col = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                row[i] += p[i * n + j];
                col[j] += p[i * n + j];
            }
        }
        let mut kl = 0.0;
        for i in 0..n {
            let m = problem.row_marginal()[i];
            kl += m * (m / row[i]).ln() - m + row[i];
        }
        for j in 0..n {
            let m = problem.col_marginal()[j];
            kl += m * (m / col[j]).ln() - m + col[j];
        }
        let cost: f64 = (0..n * n).map(|k| problem.cost()[k] * p[k]).sum();
        let ent: f64 = p
            .iter()
            .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
            .sum();
        (kl, cost, ent)
    }

    fn random_instance(n: usize, eta: f64, seed: u64) -> (Problem, DualPotentials) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = crate::problems::random_cost_problem(n, &mut rng, eta);
        // Duals on the natural 1/eta scale keep plan entries sane.
        let x: Vec<f64> = (0..n)
            .map(|_| (crate::problems::unit_f64(&mut rng) - 0.5) / eta)
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|_| (crate::problems::unit_f64(&mut rng) - 0.5) / eta)
            .collect();
        (problem, DualPotentials::new(x, y).unwrap())
    }

    #[test]
    fn kl_zero_when_marginals_match_exactly() {
        // 1x1 optimizer: p = 1 exactly, both marginals [1].
        let problem = Problem::new(1, vec![0.0], vec![1.0], vec![1.0], 1.0).unwrap();
        let duals = DualPotentials::new(vec![1.0], vec![0.0]).unwrap();
        let plan = LogPlan::from_duals(&problem, &duals);
        assert_eq!(marginal_kl(&plan, &problem), 0.0);
    }

    #[test]
    fn kl_single_cell_under_mass() {
        // p = e^{-1}: each marginal contributes 1·ln(1/e^{-1}) - 1 + e^{-1}.
        let problem = Problem::new(1, vec![0.0], vec![1.0], vec![1.0], 1.0).unwrap();
        let duals = DualPotentials::zeros(1);
        let plan = LogPlan::from_duals(&problem, &duals);
        let per_marginal = (-1.0f64).exp();
        assert!((marginal_kl(&plan, &problem) - 2.0 * per_marginal).abs() < 1e-15);
    }

    #[test]
    fn kl_is_non_negative_for_arbitrary_duals() {
        for seed in 0..20 {
            let (problem, duals) = random_instance(4, 5.0, seed);
            // Scale duals up so plans are badly infeasible in both directions.
            let scaled = DualPotentials::new(
                duals.x.iter().map(|v| v * 50.0).collect(),
                duals.y.iter().map(|v| v * 50.0).collect(),
            )
            .unwrap();
            let plan = LogPlan::from_duals(&problem, &scaled);
            assert!(marginal_kl(&plan, &problem) >= 0.0);
        }
    }

    #[test]
    fn metrics_match_naive_summation() {
        let (problem, duals) = random_instance(3, 2.0, 42);
        let plan = LogPlan::from_duals(&problem, &duals);
        let (kl, cost, ent) = naive_metrics(&plan, &problem);
        assert!((marginal_kl(&plan, &problem) - kl).abs() <= 1e-12 * kl.abs().max(1.0));
        assert!((transport_cost(&plan, &problem) - cost).abs() <= 1e-12 * cost.abs().max(1.0));
        assert!((entropy(&plan) - ent).abs() <= 1e-12 * ent.abs().max(1.0));
    }

    #[test]
    fn cost_zero_on_zero_cost_matrix() {
        let problem = Problem::new(2, vec![0.0; 4], vec![0.5, 0.5], vec![0.5, 0.5], 1.0).unwrap();
        let duals = DualPotentials::new(vec![0.3, -0.2], vec![0.1, 0.4]).unwrap();
        let plan = LogPlan::from_duals(&problem, &duals);
        assert_eq!(transport_cost(&plan, &problem), 0.0);
    }

    #[test]
    fn cost_zero_when_support_avoids_positive_costs() {
        // P = I/2 on C = [[0,1],[1,0]] costs nothing.
        let problem = Problem::new(
            2,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            1.0,
        )
        .unwrap();
        let half = (0.5f64).ln();
        let entries = vec![half, f64::MIN, f64::MIN, half];
        let plan = LogPlan::from_log_entries(2, entries);
        assert_eq!(transport_cost(&plan, &problem), 0.0);
    }

    #[test]
    fn entropy_point_mass_and_uniform() {
        let point = LogPlan::from_log_entries(1, vec![0.0]);
        assert_eq!(entropy(&point), 0.0);

        let q = (0.25f64).ln();
        let uniform = LogPlan::from_log_entries(2, vec![q; 4]);
        assert!((entropy(&uniform) - (-(4.0f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn underflowed_entries_do_not_poison_sums() {
        let plan = LogPlan::from_log_entries(1, vec![-800.0]);
        assert_eq!(entropy(&plan), 0.0);
        let problem = Problem::new(1, vec![3.0], vec![1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(transport_cost(&plan, &problem), 0.0);
        // marginal_kl still sees the row via logsumexp (log sum = -800).
        assert!(marginal_kl(&plan, &problem).is_finite());
    }

    #[test]
    fn large_eta_stays_finite_in_log_domain() {
        let (problem, duals) = random_instance(4, 6336.0, 9);
        let plan = LogPlan::from_duals(&problem, &duals);
        assert!(plan.log_entries().iter().all(|v| v.is_finite()));
        assert!(marginal_kl(&plan, &problem).is_finite());
    }
}
