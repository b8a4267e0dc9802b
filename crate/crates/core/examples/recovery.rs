//! Fits one simulated dataset and prints recovery metrics.
//!
//! `cargo run --release -p factm-core --example recovery -- [scenario] [level] [seed] [restarts]`

use std::time::Instant;

use factm_core::{evaluation, fit, generate, scenario, FitConfig, Hyperparams, ScenarioSpec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let spec = match arg(0, 0) {
        0 => ScenarioSpec::baseline(),
        id => scenario(id as u32, arg(1, 0) as usize).expect("known scenario"),
    };
    let seed = arg(2, 1);
    let (data, truth) = generate(&spec, seed);
    let hp = Hyperparams::new(spec.n_factors, vec![spec.n_topics]);
    let cfg = FitConfig {
        seed,
        n_restarts: arg(3, 1) as usize,
        max_sweeps: arg(4, 500) as usize,
        elbo_rel_tol: args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-7),
        ..FitConfig::default()
    };
    let start = Instant::now();
    let (state, report) = fit(&data, &hp, &cfg).expect("fit succeeds");
    let factors = evaluation::match_factors(&truth.z, &state.z.mean).unwrap();
    let xi: Vec<usize> = truth.structured[0].xi.iter().flatten().copied().collect();
    let topics = evaluation::match_topics(&xi, &state.structured[0].hard_assignments()).unwrap();
    let est_sigma = evaluation::permute_topics(&state.structured[0].sigma0, &topics);
    let sigma = evaluation::frobenius_relative(&truth.structured[0].sigma0, &est_sigma, true).unwrap();
    let decreases = report
        .elbo_trace
        .windows(2)
        .filter(|w| w[1].1 < w[0].1 - 1e-6 * w[0].1.abs())
        .count();
    println!(
        "sweeps {} converged {} time {:.1}s ({:.3}s/sweep) elbo {:.3} decreases {}",
        report.sweeps_used,
        report.converged,
        start.elapsed().as_secs_f64(),
        report.wall_time_per_sweep.iter().sum::<f64>() / report.sweeps_used.max(1) as f64,
        report.final_elbo(),
        decreases
    );
    println!(
        "factor |rho| {:.3} {:?}",
        factors.mean_abs_rho,
        factors.pairs.iter().map(|p| (p.2 * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    println!("topic accuracy {:.3}  sigma0 scaled frobenius {:.3}", topics.accuracy, sigma);
}
