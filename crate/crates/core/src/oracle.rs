//! Desk-scale ground truth: exhaustive assignment enumeration, distance to
//! the optimal vertices, sparsity measurement, and a closed-form 2×2
//! reference plan.

use crate::plan::LogPlan;
use crate::{Error, Result};

/// Largest `n` the exhaustive `n!` enumeration accepts.
pub const BRUTE_FORCE_LIMIT: usize = 10;

/// Everything the exhaustive assignment solve learns about an instance with
/// uniform marginals: every optimal permutation, the optimal cost, and the
/// gap to the second-best vertex.
#[derive(Debug, Clone)]
pub struct AssignmentOracleResult {
    pub n: usize,
    /// `(1/n)·min_σ Σ_i c_{i,σ(i)}` — the LP optimum over the vertices.
    pub optimal_cost: f64,
    /// All permutations achieving the optimum.
    pub optimal_permutations: Vec<Vec<usize>>,
    /// Second-best vertex cost minus the best, absent when all vertices tie.
    pub vertex_gap: Option<f64>,
}

/// Enumerate all `n!` permutations of a square cost matrix (row-major) and
/// collect the optimal vertices of the uniform-marginal assignment problem.
pub fn brute_force_assignment(cost: &[f64], n: usize) -> Result<AssignmentOracleResult> {
    if n == 0 || cost.len() != n * n {
        return Err(Error::DimensionMismatch(format!(
            "cost has {} entries for n = {n}",
            cost.len()
        )));
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    let scale = 1.0 / n as f64;
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    let mut optimal: Vec<Vec<usize>> = Vec::new();

    // Heap's algorithm, permuting in place.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut counters = vec![0usize; n];
    let mut visit = |perm: &[usize]| {
        let raw: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        let v = raw * scale;
        if v < best {
            if best < f64::INFINITY && best > v {
                second = best;
            }
            best = v;
            optimal.clear();
            optimal.push(perm.to_vec());
        } else if v == best {
            optimal.push(perm.to_vec());
        } else if v < second {
            second = v;
        }
    };
    visit(&perm);
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            visit(&perm);
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }

    let vertex_gap = if second.is_finite() {
        Some(second - best)
    } else {
        None
    };
    Ok(AssignmentOracleResult {
        n,
        optimal_cost: best,
        optimal_permutations: optimal,
        vertex_gap,
    })
}

/// `min_V ‖exp(plan) - (1/n)·V‖₁` over the optimal vertices `V`.
///
/// This upper-bounds the L1 distance to the optimal face and equals it when
/// the optimum is unique.
pub fn dist_to_optimal_vertices(plan: &LogPlan, result: &AssignmentOracleResult) -> f64 {
    let n = result.n;
    assert_eq!(plan.n(), n);
    let p = plan.to_dense();
    let mass = 1.0 / n as f64;
    let mut best = f64::INFINITY;
    for perm in &result.optimal_permutations {
        let mut d = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if perm[i] == j { mass } else { 0.0 };
                d += (p[i * n + j] - target).abs();
            }
        }
        best = best.min(d);
    }
    best
}

/// Measure `(τ, ε)`-sparsity: keep the top `⌈λn²⌉` plan entries by
/// magnitude, report the kept fraction `τ` and the L1 mass `ε` of everything
/// dropped — a certified witness that the plan is `(τ, ε)`-sparse.
pub fn sparsity_profile(plan: &LogPlan, lambda: f64) -> (f64, f64) {
    let n = plan.n();
    let total = n * n;
    let k = ((lambda * total as f64).ceil() as usize).clamp(1, total);
    let p = plan.to_dense();
    let mut sorted = p.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let kept: f64 = sorted[..k].iter().sum();
    let all: f64 = sorted.iter().sum();
    (k as f64 / total as f64, (all - kept).max(0.0))
}

/// Closed-form stationary plan of the fixed symmetric instance
/// `C = [[0, 1], [1, 0]]`, `r = c = [1/2, 1/2]`: the diagonal carries
/// `p = e^eta / (2(1 + e^eta))` and the off-diagonal `1/2 - p`.
///
/// Derivation: feasible plans are `[[p, 1/2-p], [1/2-p, p]]`; setting the
/// derivative of `C·P + (1/eta)Σ p log p` in `p` to zero gives
/// `log(p / (1/2 - p)) = eta`.
pub fn entropic_2x2_reference(eta: f64) -> [[f64; 2]; 2] {
    // Logistic form avoids overflow for large eta.
    let p = 0.5 / (1.0 + (-eta).exp());
    let q = 0.5 - p;
    [[p, q], [q, p]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    /// Independent enumerator: recursive column selection with explicit
    /// bookkeeping, unlike the Heap's-algorithm path under test.
    fn recursive_best(cost: &[f64], n: usize) -> (f64, usize) {
        fn go(
            cost: &[f64],
            n: usize,
            row: usize,
            used: &mut Vec<bool>,
            acc: f64,
            best: &mut f64,
            count: &mut usize,
        ) {
            if row == n {
                let v = acc / n as f64;
                if v < *best - 1e-15 {
                    *best = v;
                    *count = 1;
                } else if (v - *best).abs() <= 1e-15 {
                    *count += 1;
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    go(cost, n, row + 1, used, acc + cost[row * n + j], best, count);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        let mut count = 0;
        go(cost, n, 0, &mut vec![false; n], 0.0, &mut best, &mut count);
        (best, count)
    }

    #[test]
    fn two_by_two_swap_cost() {
        let r = brute_force_assignment(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(r.optimal_cost, 0.0);
        assert_eq!(r.optimal_permutations, vec![vec![0, 1]]);
        assert_eq!(r.vertex_gap, Some(1.0));
    }

    #[test]
    fn total_tie_has_no_gap() {
        let r = brute_force_assignment(&[0.0; 4], 2).unwrap();
        assert_eq!(r.optimal_permutations.len(), 2);
        assert_eq!(r.vertex_gap, None);
    }

    #[test]
    fn matches_recursive_enumerator() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for n in [3usize, 4, 5] {
            let p = problems::random_cost_problem(n, &mut rng, 1.0);
            let r = brute_force_assignment(p.cost(), n).unwrap();
            let (best, count) = recursive_best(p.cost(), n);
            assert!((r.optimal_cost - best).abs() <= 1e-15);
            assert_eq!(r.optimal_permutations.len(), count);
        }
    }

    #[test]
    fn rejects_oversized_instances() {
        let n = BRUTE_FORCE_LIMIT + 1;
        let cost = vec![0.0; n * n];
        assert!(matches!(
            brute_force_assignment(&cost, n),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn distance_zero_at_an_optimal_vertex() {
        let r = brute_force_assignment(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        let half = (0.5f64).ln();
        let plan = LogPlan::from_log_entries(2, vec![half, -900.0, -900.0, half]);
        assert!(dist_to_optimal_vertices(&plan, &r) < 1e-12);
    }

    #[test]
    fn distance_of_uniform_plan_to_identity() {
        let r = brute_force_assignment(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        let q = (0.25f64).ln();
        let uniform = LogPlan::from_log_entries(2, vec![q; 4]);
        assert!((dist_to_optimal_vertices(&uniform, &r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sparsity_profile_on_permutation_and_uniform_plans() {
        let n = 5;
        let mass = (1.0 / n as f64).ln();
        let mut entries = vec![-900.0; n * n];
        for i in 0..n {
            entries[i * n + i] = mass;
        }
        let perm_plan = LogPlan::from_log_entries(n, entries);
        let (tau, eps) = sparsity_profile(&perm_plan, 1.0 / n as f64);
        assert_eq!(tau, 1.0 / n as f64);
        assert!(eps < 1e-12);

        let uniform = LogPlan::from_log_entries(n, vec![(1.0 / (n * n) as f64).ln(); n * n]);
        let (tau, eps) = sparsity_profile(&uniform, 1.0 / n as f64);
        assert_eq!(tau, 1.0 / n as f64);
        assert!((eps - (1.0 - 1.0 / n as f64)).abs() < 1e-12);
    }

    #[test]
    fn sparsity_profile_monotone_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 8;
        let entries: Vec<f64> = (0..n * n)
            .map(|_| (problems::unit_f64(&mut rng) * 3.0) - 4.0)
            .collect();
        let plan = LogPlan::from_log_entries(n, entries);
        let mut prev = f64::INFINITY;
        for lambda in [0.1, 0.2, 0.4, 0.8, 1.0] {
            let (_, eps) = sparsity_profile(&plan, lambda);
            assert!(eps <= prev + 1e-15);
            prev = eps;
        }
    }

    #[test]
    fn reference_plan_limits() {
        let near_uniform = entropic_2x2_reference(1e-9);
        assert!((near_uniform[0][0] - 0.25).abs() < 1e-9);

        let p4 = entropic_2x2_reference(4.0);
        assert!((p4[0][0] - 0.4910068950189542).abs() < 1e-12);
        assert!((p4[0][0] + p4[0][1] - 0.5).abs() < 1e-15);

        // Large eta concentrates on the diagonal without overflow.
        let sharp = entropic_2x2_reference(6000.0);
        assert_eq!(sharp[0][0], 0.5);
    }
}
