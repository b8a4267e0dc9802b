//! Fixtures shared by the benchmarks in `benches/`.

use factm_core::{generate, initialize, run_phase, Dataset, FitConfig, Hyperparams, ScenarioSpec, VariationalState};

/// Simulated data for `spec` plus a state advanced `warm` sweeps past its initialization.
pub fn fixture(spec: &ScenarioSpec, seed: u64, warm: usize) -> (Dataset, Hyperparams, VariationalState) {
    let (data, _) = generate(spec, seed);
    let hp = Hyperparams::new(spec.n_factors, vec![spec.n_topics]);
    let cfg = FitConfig::default();
    let mut state = initialize(&data, &hp, &cfg, seed);
    for _ in 0..warm {
        for &phase in &cfg.update_schedule {
            run_phase(&mut state, &data, &hp, &cfg, phase).expect("sweep succeeds");
        }
    }
    (data, hp, state)
}

/// The baseline design and the three doubled variants used for scaling runs.
pub fn scaling_specs() -> Vec<(&'static str, ScenarioSpec)> {
    let base = ScenarioSpec::baseline();
    vec![
        ("baseline", base.clone()),
        ("2N", ScenarioSpec { n_samples: 2 * base.n_samples, ..base.clone() }),
        ("2D", ScenarioSpec { n_features: 2 * base.n_features, ..base.clone() }),
        ("2I", ScenarioSpec { sentences_per_sample: 2 * base.sentences_per_sample, ..base }),
    ]
}
