//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p factm-core --test acceptance`. The recovery
//! criteria fit 20 simulated datasets with 5 restarts each, which takes a
//! while on one core. `FACTM_ACCEPTANCE=1,3,7` restricts the run to the
//! listed criteria.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use factm_core::ctm::{update_eta_sample, EtaProblem, SentenceCtm};
use factm_core::evaluation::permute_topics;
use factm_core::init::random_orthogonal;
use factm_core::lbfgs::LbfgsConfig;
use factm_core::linalg::{ensure_positive_definite, spd_inverse, symmetrize};
use factm_core::rotation::{pearson, point_biserial_t, supervised_rotation};
use factm_core::special::softmax_in_place;
use factm_core::ctm::{expected_log_beta, update_zeta};
use factm_core::state::StructuredViewState;
use factm_core::{
    apply_rotation, compute_elbo, fit, fit_single, frobenius_relative, generate, initialize, kabsch_rotation,
    match_factors, match_topics, run_phase, scenario, Dataset, FactorInit, Feature, FeatureKind, FeatureSet,
    FitConfig, GroundTruth, Hyperparams, Phase, RotatedSummary, ScenarioSpec, Sentence, VariationalState,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn progress(msg: &str) {
    eprintln!("  .. {msg}");
}

fn hp_for(spec: &ScenarioSpec) -> Hyperparams {
    Hyperparams::new(spec.n_factors, vec![spec.n_topics])
}

fn true_labels(truth: &GroundTruth) -> Vec<usize> {
    truth.structured[0].xi.iter().flatten().copied().collect()
}

struct Fitted {
    truth: GroundTruth,
    state: VariationalState,
}

fn best_of_five(spec: &ScenarioSpec, seed: u64, link: bool) -> Fitted {
    let (data, truth) = generate(spec, seed);
    let cfg = FitConfig {
        seed,
        n_restarts: 5,
        link_enabled: link,
        ..FitConfig::default()
    };
    let start = Instant::now();
    let (state, report) = fit(&data, &hp_for(spec), &cfg).expect("fit succeeds");
    progress(&format!(
        "seed {seed} link {link}: {} sweeps in the best restart, {:.0}s",
        report.sweeps_used,
        start.elapsed().as_secs_f64()
    ));
    Fitted { truth, state }
}

/// Fits shared by the recovery and rotation criteria.
#[derive(Default)]
struct Cache {
    baseline: Option<Vec<Fitted>>,
    baseline_ablation: Option<Vec<Fitted>>,
}

impl Cache {
    fn baseline(&mut self) -> &[Fitted] {
        self.baseline.get_or_insert_with(|| {
            progress("fitting baseline, full model");
            SEEDS.iter().map(|&s| best_of_five(&ScenarioSpec::baseline(), s, true)).collect()
        })
    }

    fn baseline_ablation(&mut self) -> &[Fitted] {
        self.baseline_ablation.get_or_insert_with(|| {
            progress("fitting baseline, link disabled");
            SEEDS.iter().map(|&s| best_of_five(&ScenarioSpec::baseline(), s, false)).collect()
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

// 1

fn elbo_monotonicity() -> Outcome {
    let spec = ScenarioSpec::baseline();
    let hp = hp_for(&spec);
    let cfg = FitConfig {
        max_sweeps: 200,
        elbo_rel_tol: f64::MIN_POSITIVE,
        ..FitConfig::default()
    };
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut longest = 0.0f64;
    for seed in SEEDS {
        let (data, _) = generate(&spec, seed);
        let mut prev = compute_elbo(&initialize(&data, &hp, &cfg, seed), &data, &hp);
        let mut check = |sweep: usize, phase: Phase, s: &VariationalState| {
            let e = compute_elbo(s, &data, &hp);
            let drop = (prev - e) / prev.abs();
            if drop > worst {
                worst = drop;
                worst_at = format!("seed {seed} sweep {sweep} {phase}");
            }
            prev = e;
        };
        let start = Instant::now();
        let (_, report) = fit_single(&data, &hp, &cfg, seed, FactorInit::Principal, Some(&mut check)).unwrap();
        assert_eq!(report.sweeps_used, 200);
        longest = longest.max(start.elapsed().as_secs_f64());
    }
    outcome(
        worst <= 1e-6 && longest < 600.0,
        format!("largest relative drop {worst:.2e} {worst_at}; slowest 200-sweep fit {longest:.0}s"),
    )
}

// 2

fn eta_gradients() -> Outcome {
    let mut r = rng(2000);
    let (l_count, n_sentences, h) = (5, 7, 1e-5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = DMatrix::from_fn(l_count, l_count, |_, _| r.sample::<f64, _>(StandardNormal));
        let precision = &a * a.transpose() / l_count as f64 + DMatrix::identity(l_count, l_count) * 0.5;
        let mut phi_sum = vec![0.0; l_count];
        for _ in 0..n_sentences {
            let mut p: Vec<f64> = (0..l_count).map(|_| r.random_range(-2.0..2.0)).collect();
            softmax_in_place(&mut p);
            phi_sum.iter_mut().zip(&p).for_each(|(s, x)| *s += x);
        }
        let problem = EtaProblem {
            center: (0..l_count).map(|_| r.random_range(-1.0..1.0)).collect(),
            precision,
            phi_sum,
            n_sentences: n_sentences as f64,
        };
        let mu: Vec<f64> = (0..l_count).map(|_| r.random_range(-2.0..2.0)).collect();
        let s2: Vec<f64> = (0..l_count).map(|_| r.random_range(0.1..2.0)).collect();
        let zeta = r.random_range(1.0..20.0);
        let obj = problem.objective(&mu, &s2, zeta);
        let value = |m: &[f64], s: &[f64]| problem.objective(m, s, zeta).value;
        for l in 0..l_count {
            let (mut up, mut dn) = (mu.clone(), mu.clone());
            up[l] += h;
            dn[l] -= h;
            let fd = (value(&up, &s2) - value(&dn, &s2)) / (2.0 * h);
            worst = worst.max((fd - obj.grad_mu[l]).abs() / obj.grad_mu[l].abs().max(1.0));
            let (mut up, mut dn) = (s2.clone(), s2.clone());
            up[l] += h;
            dn[l] -= h;
            let fd = (value(&mu, &up) - value(&mu, &dn)) / (2.0 * h);
            worst = worst.max((fd - obj.grad_sigma2[l]).abs() / obj.grad_sigma2[l].abs().max(1.0));
        }
    }
    outcome(worst < 1e-5, format!("max relative error {worst:.2e} over 100 configurations"))
}

// 3

fn stationarity() -> Outcome {
    let cfg = FitConfig::default();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for seed in 0..10 {
        let (ds, hp) = tiny_problem(300 + seed);
        let mut base = warm_state(&ds, &hp, &cfg, seed, 3);
        jitter(&mut base, seed + 1000, 0.3);
        let mut record = |value: f64, at: String| {
            if value > worst {
                worst = value;
                worst_at = at;
            }
        };
        for (name, phase, coords) in closed_form_blocks() {
            let mut s = base.clone();
            update_to_fixed_point(&mut s, &ds, &hp, &cfg, phase);
            let (d, at) = max_fd(&s, &ds, &hp, &coords(&s), h);
            record(d, format!("instance {seed} {name} ({at})"));
        }
        let mut s = base.clone();
        update_zeta(&mut s.structured[0]);
        let (d, at) = max_fd(&s, &ds, &hp, &zeta_coords(&s), h);
        record(d, format!("instance {seed} zeta ({at})"));
    }
    outcome(worst < 1e-5, format!("largest finite-difference derivative {worst:.2e} at {worst_at}"))
}

// 4

fn factor_recovery(cache: &mut Cache) -> Outcome {
    let rho: Vec<f64> = cache
        .baseline()
        .iter()
        .map(|f| match_factors(&f.truth.z, &f.state.z.mean).unwrap().mean_abs_rho)
        .collect();
    let spec = scenario(1, 3).unwrap();
    progress("fitting scenario 1 (link multiplier 2), full model and link disabled");
    let (mut full, mut ablation) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        for (link, out) in [(true, &mut full), (false, &mut ablation)] {
            let f = best_of_five(&spec, seed, link);
            out.push(match_factors(&f.truth.z, &f.state.z.mean).unwrap().mean_abs_rho);
        }
    }
    let pass = mean(&rho) >= 0.8 && mean(&full) >= mean(&ablation);
    outcome(
        pass,
        format!(
            "baseline mean |rho| {:.3} {}; link multiplier 2: full {:.3} {} vs link disabled {:.3} {}",
            mean(&rho),
            fmt(&rho),
            mean(&full),
            fmt(&full),
            mean(&ablation),
            fmt(&ablation)
        ),
    )
}

// 5

fn topic_recovery(cache: &mut Cache) -> Outcome {
    let mut r = rng(5000);
    let (mut acc, mut null) = (Vec::new(), Vec::new());
    for f in cache.baseline() {
        let xi = true_labels(&f.truth);
        let mut est = f.state.structured[0].hard_assignments();
        acc.push(match_topics(&xi, &est).unwrap().accuracy);
        est.shuffle(&mut r);
        null.push(match_topics(&xi, &est).unwrap().accuracy);
    }
    let pass = acc.iter().all(|&a| a >= 0.7) && null.iter().all(|&a| (0.05..=0.2).contains(&a));
    outcome(
        pass,
        format!("accuracy {} (mean {:.3}); shuffled null {} (mean {:.3})", fmt(&acc), mean(&acc), fmt(&null), mean(&null)),
    )
}

// 6

fn sigma0_error(f: &Fitted) -> f64 {
    let matching = match_topics(&true_labels(&f.truth), &f.state.structured[0].hard_assignments()).unwrap();
    let est = permute_topics(&f.state.structured[0].sigma0, &matching);
    frobenius_relative(&f.truth.structured[0].sigma0, &est, true).unwrap()
}

fn covariance_recovery(cache: &mut Cache) -> Outcome {
    let full: Vec<f64> = cache.baseline().iter().map(sigma0_error).collect();
    let ablation: Vec<f64> = cache.baseline_ablation().iter().map(sigma0_error).collect();
    let wins = full.iter().zip(&ablation).filter(|(a, b)| a <= b).count();
    outcome(
        wins >= 4,
        format!("full {} vs link disabled {}; full no worse on {wins} of 5 seeds", fmt(&full), fmt(&ablation)),
    )
}

// 7

fn pooled_t(x: &[f64], group: &[f64]) -> f64 {
    let pick = |g: f64| x.iter().zip(group).filter(|(_, &c)| c == g).map(|(v, _)| *v).collect::<Vec<_>>();
    let (a, b) = (pick(0.0), pick(1.0));
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ss = |v: &[f64], c: f64| v.iter().map(|x| (x - c).powi(2)).sum::<f64>();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (ss(&a, m(&a)) + ss(&b, m(&b))) / (na + nb - 2.0);
    (m(&b) - m(&a)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt()
}

fn rotation_optimality() -> Outcome {
    let mut r = rng(7000);
    let k = 8;
    let mut worst_gap = f64::INFINITY;
    for _ in 0..50 {
        let h = DMatrix::from_fn(k, k, |_, _| r.random_range(-1.0..1.0));
        let score = (h.transpose() * kabsch_rotation(&h)).trace();
        for _ in 0..1000 {
            let q = random_orthogonal(k, &mut r);
            worst_gap = worst_gap.min(score - (h.transpose() * q).trace());
        }
    }
    let mut worst_t = 0.0f64;
    for case in 0..100 {
        let n = 20 + case * 3;
        let mut group: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        group[0] = 0.0;
        group[1] = 0.0;
        group[2] = 1.0;
        group[3] = 1.0;
        let shift = r.random_range(-1.0..1.0);
        let x: Vec<f64> = group.iter().map(|&g| g * shift + r.sample::<f64, _>(StandardNormal)).collect();
        let t = point_biserial_t(pearson(&x, &group).unwrap(), n);
        let oracle = pooled_t(&x, &group);
        worst_t = worst_t.max((t - oracle).abs() / oracle.abs().max(1.0));
    }
    outcome(
        worst_gap >= -1e-12 && worst_t < 1e-10,
        format!("smallest trace margin {worst_gap:.3e} over 50 x 1000; t identity max error {worst_t:.1e}"),
    )
}

// 8

fn max_reconstruction_gap(a: &RotatedSummary, b: &RotatedSummary) -> f64 {
    a.reconstructions()
        .iter()
        .zip(b.reconstructions())
        .map(|(x, y)| max_abs_diff(x, &y))
        .fold(0.0, f64::max)
}

fn reconstruction_invariance(cache: &mut Cache) -> Outcome {
    let mut r = rng(8000);
    let mut worst = 0.0f64;
    for f in cache.baseline() {
        let base = RotatedSummary::from_state(&f.state);
        let k = f.state.n_factors();
        let features = FeatureSet::new(
            (0..k)
                .map(|j| Feature {
                    name: format!("true_{j}"),
                    kind: FeatureKind::Numeric,
                    values: f.truth.z.column(j).into_owned(),
                })
                .collect(),
        )
        .unwrap();
        let supervised = supervised_rotation(&f.state.z.mean, &features).unwrap();
        for rot in [supervised, random_orthogonal(k, &mut r)] {
            worst = worst.max(max_reconstruction_gap(&base, &apply_rotation(&f.state, &rot).unwrap()));
        }
    }
    outcome(worst < 1e-10, format!("max |Z~W~' - ZW'| {worst:.2e} over 5 fitted models, all views"))
}

// 9

/// A sentence-level correlated topic model written against plain arrays.
/// Units are sentences or, for the word-level model, distinct words of a
/// document weighted by their multiplicity. The logistic-normal inner
/// optimization is the library's, everything else is separate code.
struct PlainCtm {
    /// Per sample: `(weight, entries)` for every unit.
    units: Vec<Vec<(f64, Vec<(u32, f64)>)>>,
    vocab: usize,
    t: f64,
    alpha0: f64,
    inner: LbfgsConfig,
    eta_mean: DMatrix<f64>,
    eta_var: DMatrix<f64>,
    zeta: Vec<f64>,
    /// L x units, samples concatenated.
    phi: DMatrix<f64>,
    beta: DMatrix<f64>,
    shift_mean: DMatrix<f64>,
    shift_cov: DMatrix<f64>,
    mu0: DVector<f64>,
    sigma0: DMatrix<f64>,
}

impl PlainCtm {
    fn from_state(view: &StructuredViewState, units: Vec<Vec<(f64, Vec<(u32, f64)>)>>, t: f64, alpha0: f64, inner: LbfgsConfig) -> Self {
        let total: usize = units.iter().map(Vec::len).sum();
        Self {
            vocab: view.vocab_size(),
            t,
            alpha0,
            inner,
            eta_mean: view.eta_mean.clone(),
            eta_var: view.eta_var.clone(),
            zeta: view.zeta.iter().copied().collect(),
            phi: DMatrix::from_element(view.n_topics(), total, 1.0 / view.n_topics() as f64),
            beta: view.beta.clone(),
            shift_mean: view.mu_link_mean.clone(),
            shift_cov: view.mu_link_cov.clone(),
            mu0: view.mu0.clone(),
            sigma0: view.sigma0.clone(),
            units,
        }
    }

    fn n_topics(&self) -> usize {
        self.beta.nrows()
    }

    fn assignments(&mut self) {
        let l_count = self.n_topics();
        let elog: Vec<Vec<f64>> = (0..l_count)
            .map(|l| expected_log_beta(&self.beta.row(l).iter().copied().collect::<Vec<_>>()))
            .collect();
        let mut col = 0;
        for (n, units) in self.units.iter().enumerate() {
            for (_, entries) in units {
                let mut logits: Vec<f64> = (0..l_count).map(|l| self.eta_mean[(n, l)]).collect();
                for &(g, count) in entries {
                    for l in 0..l_count {
                        logits[l] += count * elog[l][g as usize];
                    }
                }
                softmax_in_place(&mut logits);
                for l in 0..l_count {
                    self.phi[(l, col)] = logits[l];
                }
                col += 1;
            }
        }
    }

    fn logistic_normal(&mut self) {
        let l_count = self.n_topics();
        let (precision, _) = spd_inverse(&self.sigma0, "sigma0").unwrap();
        let mut col = 0;
        for (n, units) in self.units.iter().enumerate() {
            let mut phi_sum = vec![0.0; l_count];
            let mut weight = 0.0;
            for (w, _) in units {
                for l in 0..l_count {
                    phi_sum[l] += w * self.phi[(l, col)];
                }
                weight += w;
                col += 1;
            }
            let problem = EtaProblem {
                center: (0..l_count).map(|l| self.shift_mean[(n, l)] + self.mu0[l]).collect(),
                precision: precision.clone(),
                phi_sum,
                n_sentences: weight,
            };
            let mut mu: Vec<f64> = self.eta_mean.row(n).iter().copied().collect();
            let mut s2: Vec<f64> = self.eta_var.row(n).iter().copied().collect();
            update_eta_sample(&problem, &mut mu, &mut s2, &mut self.zeta[n], &self.inner);
            for l in 0..l_count {
                self.eta_mean[(n, l)] = mu[l];
                self.eta_var[(n, l)] = s2[l];
            }
        }
    }

    /// Shift with a N(0, I/t) prior.
    fn shift(&mut self) {
        let l_count = self.n_topics();
        let (sigma_inv, _) = spd_inverse(&self.sigma0, "sigma0").unwrap();
        let mut precision = sigma_inv.clone();
        for l in 0..l_count {
            precision[(l, l)] += self.t;
        }
        let (cov, _) = spd_inverse(&precision, "shift").unwrap();
        let prior_mean = DVector::<f64>::zeros(l_count);
        for n in 0..self.units.len() {
            let centered = DVector::from_fn(l_count, |l, _| self.eta_mean[(n, l)] - self.mu0[l]);
            let mean = &cov * (&sigma_inv * centered + &prior_mean * self.t);
            for l in 0..l_count {
                self.shift_mean[(n, l)] = mean[l];
            }
        }
        self.shift_cov = symmetrize(&cov);
    }

    fn topics(&mut self) {
        let l_count = self.n_topics();
        self.beta = DMatrix::from_element(l_count, self.vocab, self.alpha0);
        for l in 0..l_count {
            let mut col = 0;
            for units in &self.units {
                for (w, entries) in units {
                    let p = w * self.phi[(l, col)];
                    for &(g, count) in entries {
                        self.beta[(l, g as usize)] += p * count;
                    }
                    col += 1;
                }
            }
        }
    }

    fn population(&mut self) {
        let l_count = self.n_topics();
        let nf = self.units.len() as f64;
        let resid = &self.eta_mean - &self.shift_mean;
        let mut mu0 = DVector::zeros(l_count);
        for n in 0..self.units.len() {
            for l in 0..l_count {
                mu0[l] += resid[(n, l)];
            }
        }
        mu0 /= nf;
        let mut scatter = DMatrix::<f64>::zeros(l_count, l_count);
        for n in 0..self.units.len() {
            let c: Vec<f64> = (0..l_count).map(|l| resid[(n, l)] - mu0[l]).collect();
            for j in 0..l_count {
                for i in 0..=j {
                    scatter[(i, j)] += c[i] * c[j];
                }
                scatter[(j, j)] += self.eta_var[(n, j)];
            }
        }
        let mut sigma0 = DMatrix::from_fn(l_count, l_count, |i, j| {
            let (a, b) = (i.min(j), i.max(j));
            self.shift_cov[(a, b)] + scatter[(a, b)] / nf
        });
        ensure_positive_definite(&mut sigma0).unwrap();
        self.mu0 = mu0;
        self.sigma0 = sigma0;
    }

    fn sweep(&mut self) {
        self.assignments();
        self.logistic_normal();
        self.shift();
        self.topics();
        self.population();
    }
}

fn sentence_units(data: &Dataset) -> Vec<Vec<(f64, Vec<(u32, f64)>)>> {
    data.structured_views[0]
        .samples
        .iter()
        .map(|s| s.iter().map(|x| (1.0, x.entries.clone())).collect())
        .collect()
}

/// Distinct words of each document with their multiplicities.
fn word_units(data: &Dataset) -> Vec<Vec<(f64, Vec<(u32, f64)>)>> {
    data.structured_views[0]
        .samples
        .iter()
        .map(|s| {
            let mut counts = std::collections::BTreeMap::<u32, f64>::new();
            for sentence in s {
                for &(g, c) in &sentence.entries {
                    *counts.entry(g).or_default() += c;
                }
            }
            counts.into_iter().map(|(g, c)| (c, vec![(g, 1.0)])).collect()
        })
        .collect()
}

fn same_bits(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn rel_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max)
}

fn special_cases() -> Outcome {
    let spec = ScenarioSpec {
        n_samples: 40,
        n_topics: 4,
        vocab_size: 30,
        sentences_per_sample: 6,
        words_per_sentence: 5,
        ..ScenarioSpec::baseline()
    };
    let hp = hp_for(&spec);
    let cfg = FitConfig {
        link_enabled: false,
        ..FitConfig::default()
    };
    let inner = LbfgsConfig {
        max_iters: cfg.inner_opt_max_iters,
        grad_tol: cfg.inner_opt_grad_tol,
        ..LbfgsConfig::default()
    };

    // Full model, link off, every phase of the schedule vs the plain model.
    let (data, _) = generate(&spec, 90);
    let mut state = initialize(&data, &hp, &cfg, 90);
    let mut plain = PlainCtm::from_state(&state.structured[0], sentence_units(&data), hp.t, hp.alpha0_beta, inner);
    let mut bitwise = true;
    for _ in 0..5 {
        for &phase in &cfg.update_schedule {
            run_phase(&mut state, &data, &hp, &cfg, phase).unwrap();
        }
        plain.sweep();
        let v = &state.structured[0];
        bitwise &= same_bits(&v.phi, &plain.phi)
            && same_bits(&v.eta_mean, &plain.eta_mean)
            && same_bits(&v.eta_var, &plain.eta_var)
            && v.zeta.iter().zip(&plain.zeta).all(|(a, b)| a.to_bits() == b.to_bits())
            && same_bits(&v.mu_link_mean, &plain.shift_mean)
            && same_bits(&v.mu_link_cov, &plain.shift_cov)
            && same_bits(&v.beta, &plain.beta)
            && same_bits(&DMatrix::from_column_slice(4, 1, v.mu0.as_slice()), &DMatrix::from_column_slice(4, 1, plain.mu0.as_slice()))
            && same_bits(&v.sigma0, &plain.sigma0);
    }

    // One word per sentence: sentence-level updates vs a word-level model.
    let (data, _) = generate(&ScenarioSpec { words_per_sentence: 1, sentences_per_sample: 25, ..spec.clone() }, 91);
    assert!(data.structured_views[0].samples.iter().flatten().all(|s: &Sentence| s.total() == 1.0));
    let mut state = initialize(&data, &hp, &cfg, 91);
    let mut words = PlainCtm::from_state(&state.structured[0], word_units(&data), hp.t, hp.alpha0_beta, inner);
    let ctm = SentenceCtm {
        data: &data.structured_views[0],
        t: hp.t,
        alpha0_beta: hp.alpha0_beta,
        inner,
    };
    let zero_link = DMatrix::zeros(spec.n_samples, spec.n_topics);
    let mut gap = 0.0f64;
    for _ in 0..5 {
        ctm.sweep(&mut state.structured[0], &zero_link, &Phase::DEFAULT_SCHEDULE).unwrap();
        words.sweep();
        let v = &state.structured[0];
        gap = gap
            .max(rel_gap(&v.eta_mean, &words.eta_mean))
            .max(rel_gap(&v.eta_var, &words.eta_var))
            .max(rel_gap(&v.beta, &words.beta))
            .max(rel_gap(&v.sigma0, &words.sigma0));
        // Each one-word sentence carries the topic distribution of its word.
        let mut word_col = 0;
        for (n, sample) in data.structured_views[0].samples.iter().enumerate() {
            let lookup: Vec<u32> = words.units[n].iter().map(|u| u.1[0].0).collect();
            for (i, sentence) in sample.iter().enumerate() {
                let j = lookup.binary_search(&sentence.entries[0].0).unwrap();
                let a = v.phi.column(v.sentence_offsets[n] + i);
                let b = words.phi.column(word_col + j);
                gap = gap.max((a - b).amax());
            }
            word_col += lookup.len();
        }
    }
    outcome(
        bitwise && gap < 1e-9,
        format!("link off vs plain sentence model bitwise equal: {bitwise}; one-word sentences vs word-level model max gap {gap:.1e}"),
    )
}

// 10

fn mean_sweep_time(spec: &ScenarioSpec, seed: u64) -> f64 {
    let (data, _) = generate(spec, seed);
    let cfg = FitConfig {
        max_sweeps: 10,
        elbo_rel_tol: f64::MIN_POSITIVE,
        ..FitConfig::default()
    };
    let (_, report) = fit_single(&data, &hp_for(spec), &cfg, seed, FactorInit::Principal, None).unwrap();
    mean(&report.wall_time_per_sweep)
}

fn runtime_scaling() -> Outcome {
    let base = ScenarioSpec::baseline();
    let variants = [
        ("2N", ScenarioSpec { n_samples: 2 * base.n_samples, ..base.clone() }),
        ("2D", ScenarioSpec { n_features: 2 * base.n_features, ..base.clone() }),
        ("2I", ScenarioSpec { sentences_per_sample: 2 * base.sentences_per_sample, ..base.clone() }),
    ];
    let trials = [1u64, 2, 3];
    let base_time = mean(&trials.map(|s| mean_sweep_time(&base, s)));
    let mut pass = true;
    let mut parts = vec![format!("baseline {:.1} ms/sweep", base_time * 1e3)];
    for (name, spec) in variants {
        let ratio = mean(&trials.map(|s| mean_sweep_time(&spec, s))) / base_time;
        pass &= (1.3..=3.0).contains(&ratio);
        parts.push(format!("{name} x{ratio:.2}"));
    }
    outcome(pass, parts.join(", "))
}

fn main() -> ExitCode {
    let selected: Option<Vec<usize>> = std::env::var("FACTM_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| selected.as_ref().is_none_or(|s| s.contains(&i));
    // libtest-style flags (e.g. --nocapture, filters) are accepted and ignored.
    let mut cache = Cache::default();
    let criteria: [(usize, &str, fn(&mut Cache) -> Outcome); 10] = [
        (1, "ELBO monotonicity", |_| elbo_monotonicity()),
        (2, "eta gradient correctness", |_| eta_gradients()),
        (3, "closed-form stationarity", |_| stationarity()),
        (4, "factor recovery", factor_recovery),
        (5, "topic recovery", topic_recovery),
        (6, "covariance recovery", covariance_recovery),
        (7, "rotation optimality", |_| rotation_optimality()),
        (8, "reconstruction invariance", reconstruction_invariance),
        (9, "special-case equivalence", |_| special_cases()),
        (10, "runtime scaling", |_| runtime_scaling()),
    ];
    let mut failed = Vec::new();
    for (i, name, run) in criteria {
        if !wanted(i) {
            continue;
        }
        let start = Instant::now();
        let o = run(&mut cache);
        println!(
            "criterion {i:>2} {name}: {} ({}) [{:.0}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(i);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
