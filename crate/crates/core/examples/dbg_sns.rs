use sns_ot::baselines;
use sns_ot::oracle;
use sns_ot::plan::LogPlan;
use sns_ot::problem::{DualPotentials, Problem, SolverConfig};
use sns_ot::{problems, sinkhorn, sparse_newton};

fn rank1_problem(n: usize, eta: f64) -> Problem {
    let mut rng_a = 0.37f64;
    let mut rng_b = 0.71f64;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for _ in 0..n {
        rng_a = (rng_a * 997.13).fract();
        rng_b = (rng_b * 631.89).fract();
        a.push(rng_a);
        b.push(rng_b);
    }
    let cost: Vec<f64> = (0..n * n).map(|k| a[k / n] + b[k % n]).collect();
    let center = n as f64 / 2.0;
    let sigma = n as f64 / 10.0;
    let raw: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - center) / sigma).powi(2) / 2.0).exp() + 1e-9)
        .collect();
    let s: f64 = raw.iter().sum();
    let m: Vec<f64> = raw.into_iter().map(|v| v / s).collect();
    Problem::new(n, cost, m.clone(), m, eta).unwrap()
}

fn main() {
    // Rank-1 cold-start Newton.
    let n = 50;
    let p = rank1_problem(n, 200.0);
    let mut cfg = SolverConfig::default();
    cfg.target_sparsity = 15.0 / n as f64;
    cfg.stop_marginal_kl = 1e-20;
    cfg.n2 = 100;
    let out = sparse_newton::run(&p, &DualPotentials::zeros(n), &cfg, &mut sns_ot::trace::NullSink).unwrap();
    println!("rank1 cold: iters {} fallbacks {} conv {} kl {:.2e} l1 {:.2e}", out.iterations, out.fallbacks, out.converged, out.final_kl, out.final_l1);
    let plan = LogPlan::from_duals(&p, &out.duals);
    let (_, eps) = oracle::sparsity_profile(&plan, 15.0 / n as f64);
    println!("rank1 eps at 15/n: {eps:.3e}");

    // Iterate tracking at eta = 100 vs 10, n=12.
    for eta in [100.0, 10.0] {
        let problem = problems::gen_random_assignment(12, 4, eta).unwrap();
        let warm = sinkhorn::run(&problem, &DualPotentials::zeros(12), 5, &mut sns_ot::trace::NullSink);
        for steps in [1usize, 5, 10] {
            let mut cfg = SolverConfig::default();
            cfg.target_sparsity = 1.0;
            cfg.n2 = steps;
            cfg.stop_marginal_kl = 0.0;
            let s = sparse_newton::run(&problem, &warm, &cfg, &mut sns_ot::trace::NullSink).unwrap();
            let d = baselines::run_dense_newton(&problem, &warm, &cfg, &mut sns_ot::trace::NullSink).unwrap();
            let za = s.duals.to_stacked();
            let zb = d.duals.to_stacked();
            let gap: f64 = za.iter().zip(&zb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            println!("eta {eta} steps {steps}: gap {gap:.3e}");
        }
    }
}
