#![allow(dead_code)]

use factm_core::{compute_elbo, generate, initialize, run_phase, Dataset, FitConfig, Hyperparams, Phase, ScenarioSpec, VariationalState};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small simulated problem: N=20, D=5, L=3, G=8, K=3.
pub fn tiny_spec() -> ScenarioSpec {
    ScenarioSpec {
        n_samples: 20,
        n_features: 5,
        n_topics: 3,
        n_factors: 3,
        vocab_size: 8,
        sentences_per_sample: 4,
        words_per_sentence: 3,
        ..ScenarioSpec::baseline()
    }
}

pub fn tiny_problem(seed: u64) -> (Dataset, Hyperparams) {
    let spec = tiny_spec();
    let (ds, _) = generate(&spec, seed);
    (ds, Hyperparams::new(spec.n_factors, vec![spec.n_topics]))
}

pub fn sweep(state: &mut VariationalState, ds: &Dataset, hp: &Hyperparams, cfg: &FitConfig) {
    for &phase in &cfg.update_schedule {
        run_phase(state, ds, hp, cfg, phase).unwrap();
    }
}

/// Initial state moved away from its symmetric start by a few sweeps.
pub fn warm_state(ds: &Dataset, hp: &Hyperparams, cfg: &FitConfig, seed: u64, sweeps: usize) -> VariationalState {
    let mut state = initialize(ds, hp, cfg, seed);
    for _ in 0..sweeps {
        sweep(&mut state, ds, hp, cfg);
    }
    state
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// A one-dimensional move through parameter space, `apply(state, h)`.
pub struct Coord {
    pub name: String,
    pub apply: Box<dyn Fn(&mut VariationalState, f64)>,
}

impl Coord {
    fn new(name: String, apply: impl Fn(&mut VariationalState, f64) + 'static) -> Self {
        Self { name, apply: Box::new(apply) }
    }
}

/// Central difference of the bound along `coord`.
pub fn fd_derivative(state: &VariationalState, ds: &Dataset, hp: &Hyperparams, coord: &Coord, h: f64) -> f64 {
    let mut plus = state.clone();
    (coord.apply)(&mut plus, h);
    let mut minus = state.clone();
    (coord.apply)(&mut minus, -h);
    (compute_elbo(&plus, ds, hp) - compute_elbo(&minus, ds, hp)) / (2.0 * h)
}

/// Largest finite-difference derivative over `coords`, with its name.
pub fn max_fd(state: &VariationalState, ds: &Dataset, hp: &Hyperparams, coords: &[Coord], h: f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for c in coords {
        let d = fd_derivative(state, ds, hp, c, h).abs();
        if !(d <= worst.0) {
            worst = (d, c.name.clone());
        }
    }
    worst
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Coordinates of the factor posterior: means directly, variances in log scale.
pub fn z_coords(state: &VariationalState) -> Vec<Coord> {
    let (n, k) = state.z.mean.shape();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..k {
            out.push(Coord::new(format!("z.mean[{i},{j}]"), move |s, h| s.z.mean[(i, j)] += h));
            out.push(Coord::new(format!("z.var[{i},{j}]"), move |s, h| s.z.var[(i, j)] *= h.exp()));
        }
    }
    out
}

/// Inclusion probabilities in logit scale, slab means directly, slab variances in log scale.
pub fn w_coords(state: &VariationalState, m: usize) -> Vec<Coord> {
    let (d_count, k_count) = state.simple[m].gamma.shape();
    let mut out = Vec::new();
    for d in 0..d_count {
        for k in 0..k_count {
            let g = state.simple[m].gamma[(d, k)];
            if g > 1e-8 && g < 1.0 - 1e-8 {
                out.push(Coord::new(format!("gamma[{m}][{d},{k}]"), move |s, h| {
                    let v = &mut s.simple[m].gamma[(d, k)];
                    *v = sigmoid(logit(*v) + h);
                }));
            }
            out.push(Coord::new(format!("slab_mean[{m}][{d},{k}]"), move |s, h| s.simple[m].slab_mean[(d, k)] += h));
            out.push(Coord::new(format!("slab_var[{m}][{d},{k}]"), move |s, h| s.simple[m].slab_var[(d, k)] *= h.exp()));
        }
    }
    for k in 0..k_count {
        out.push(Coord::new(format!("spike_var[{m}][{k}]"), move |s, h| s.simple[m].spike_var[k] *= h.exp()));
    }
    out
}

/// Shape and rate of every Gamma and both Beta parameters, in log scale.
pub fn conjugate_coords(state: &VariationalState) -> Vec<Coord> {
    let mut out = Vec::new();
    for (m, v) in state.simple.iter().enumerate() {
        for k in 0..v.alpha.len() {
            out.push(Coord::new(format!("alpha[{m}][{k}].shape"), move |s, h| s.simple[m].alpha[k].shape *= h.exp()));
            out.push(Coord::new(format!("alpha[{m}][{k}].rate"), move |s, h| s.simple[m].alpha[k].rate *= h.exp()));
            out.push(Coord::new(format!("theta[{m}][{k}].a"), move |s, h| s.simple[m].theta[k].a *= h.exp()));
            out.push(Coord::new(format!("theta[{m}][{k}].b"), move |s, h| s.simple[m].theta[k].b *= h.exp()));
        }
        for d in 0..v.tau.len() {
            out.push(Coord::new(format!("tau[{m}][{d}].shape"), move |s, h| s.simple[m].tau[d].shape *= h.exp()));
            out.push(Coord::new(format!("tau[{m}][{d}].rate"), move |s, h| s.simple[m].tau[d].rate *= h.exp()));
        }
    }
    for (sv, v) in state.structured.iter().enumerate() {
        for k in 0..v.alphabar.len() {
            out.push(Coord::new(format!("alphabar[{sv}][{k}].shape"), move |s, h| s.structured[sv].alphabar[k].shape *= h.exp()));
            out.push(Coord::new(format!("alphabar[{sv}][{k}].rate"), move |s, h| s.structured[sv].alphabar[k].rate *= h.exp()));
        }
    }
    out
}

pub fn wbar_coords(state: &VariationalState, sv: usize) -> Vec<Coord> {
    let (l_count, k_count) = state.structured[sv].wbar_mean.shape();
    let mut out = Vec::new();
    for l in 0..l_count {
        for k in 0..k_count {
            out.push(Coord::new(format!("wbar.mean[{l},{k}]"), move |s, h| s.structured[sv].wbar_mean[(l, k)] += h));
            out.push(Coord::new(format!("wbar.var[{l},{k}]"), move |s, h| s.structured[sv].wbar_var[(l, k)] *= h.exp()));
        }
    }
    out
}

/// Symmetric perturbation of entry `(i, j)` and `(j, i)` of an L x L matrix.
fn symmetric_coords(
    l_count: usize,
    label: &'static str,
    get: fn(&mut VariationalState) -> &mut DMatrix<f64>,
) -> Vec<Coord> {
    let mut out = Vec::new();
    for j in 0..l_count {
        for i in 0..=j {
            out.push(Coord::new(format!("{label}[{i},{j}]"), move |s, h| {
                let m = get(s);
                m[(i, j)] += h;
                if i != j {
                    m[(j, i)] += h;
                }
            }));
        }
    }
    out
}

pub fn mu_link_coords(state: &VariationalState) -> Vec<Coord> {
    let v = &state.structured[0];
    let (n_count, l_count) = v.mu_link_mean.shape();
    let mut out = Vec::new();
    for n in 0..n_count {
        for l in 0..l_count {
            out.push(Coord::new(format!("mu_link[{n},{l}]"), move |s, h| s.structured[0].mu_link_mean[(n, l)] += h));
        }
    }
    out.extend(symmetric_coords(l_count, "mu_link_cov", |s| &mut s.structured[0].mu_link_cov));
    out
}

pub fn population_coords(state: &VariationalState) -> Vec<Coord> {
    let l_count = state.structured[0].n_topics();
    let mut out: Vec<Coord> = (0..l_count)
        .map(|l| Coord::new(format!("mu0[{l}]"), move |s, h| s.structured[0].mu0[l] += h))
        .collect();
    out.extend(symmetric_coords(l_count, "sigma0", |s| &mut s.structured[0].sigma0));
    out
}

/// Sentence topic probabilities in softmax coordinates.
pub fn phi_coords(state: &VariationalState) -> Vec<Coord> {
    let (l_count, cols) = state.structured[0].phi.shape();
    let mut out = Vec::new();
    for c in 0..cols {
        for l in 0..l_count {
            out.push(Coord::new(format!("phi[{l},{c}]"), move |s, h| {
                let phi = &mut s.structured[0].phi;
                let mut logits: Vec<f64> = (0..l_count).map(|j| phi[(j, c)].max(1e-300).ln()).collect();
                logits[l] += h;
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = logits.iter().map(|x| (x - max).exp()).sum();
                for j in 0..l_count {
                    phi[(j, c)] = (logits[j] - max).exp() / total;
                }
            }));
        }
    }
    out
}

pub fn beta_coords(state: &VariationalState) -> Vec<Coord> {
    let (l_count, g_count) = state.structured[0].beta.shape();
    let mut out = Vec::new();
    for l in 0..l_count {
        for g in 0..g_count {
            out.push(Coord::new(format!("beta[{l},{g}]"), move |s, h| s.structured[0].beta[(l, g)] *= h.exp()));
        }
    }
    out
}

pub fn zeta_coords(state: &VariationalState) -> Vec<Coord> {
    (0..state.structured[0].zeta.len())
        .map(|n| Coord::new(format!("zeta[{n}]"), move |s, h| s.structured[0].zeta[n] *= h.exp()))
        .collect()
}

/// Applies `phase` until the touched parameters stop moving; needed for the
/// blocks that sweep their factors sequentially.
pub fn update_to_fixed_point(state: &mut VariationalState, ds: &Dataset, hp: &Hyperparams, cfg: &FitConfig, phase: Phase) {
    for _ in 0..2000 {
        let before = state.clone();
        run_phase(state, ds, hp, cfg, phase).unwrap();
        let moved = max_abs_diff(&before.z.mean, &state.z.mean)
            .max(
                before
                    .simple
                    .iter()
                    .zip(&state.simple)
                    .map(|(a, b)| max_abs_diff(&a.slab_mean, &b.slab_mean).max(max_abs_diff(&a.gamma, &b.gamma)))
                    .fold(0.0, f64::max),
            )
            .max(
                before
                    .structured
                    .iter()
                    .zip(&state.structured)
                    .map(|(a, b)| max_abs_diff(&a.wbar_mean, &b.wbar_mean))
                    .fold(0.0, f64::max),
            );
        if moved < 1e-14 {
            return;
        }
    }
}

/// Parameter block and coordinates checked after each closed-form update.
pub fn closed_form_blocks() -> Vec<(&'static str, Phase, fn(&VariationalState) -> Vec<Coord>)> {
    vec![
        ("z", Phase::Z, z_coords),
        ("w", Phase::W, |s| (0..s.simple.len()).flat_map(|m| w_coords(s, m)).collect()),
        ("wbar", Phase::Wbar, |s| wbar_coords(s, 0)),
        ("mu_link", Phase::MuLink, mu_link_coords),
        ("phi", Phase::Phi, phi_coords),
        ("beta", Phase::Beta, beta_coords),
        ("conjugates", Phase::Conjugates, conjugate_coords),
        ("population", Phase::Population, population_coords),
    ]
}

/// Random small moves of every parameter that keep the state valid, so no
/// block starts at its own optimum.
pub fn jitter(state: &mut VariationalState, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let add = |m: &mut DMatrix<f64>, r: &mut ChaCha8Rng| m.iter_mut().for_each(|x| *x += scale * r.random_range(-1.0..1.0));
    let mult = |x: &mut f64, r: &mut ChaCha8Rng| *x *= (scale * r.random_range(-1.0..1.0)).exp();
    add(&mut state.z.mean, &mut r);
    state.z.var.iter_mut().for_each(|x| mult(x, &mut r));
    for v in &mut state.simple {
        add(&mut v.slab_mean, &mut r);
        v.slab_var.iter_mut().for_each(|x| mult(x, &mut r));
        v.spike_var.iter_mut().for_each(|x| mult(x, &mut r));
        v.gamma.iter_mut().for_each(|g| *g = sigmoid(logit(g.clamp(1e-6, 1.0 - 1e-6)) + scale * r.random_range(-1.0..1.0)));
        for a in v.alpha.iter_mut().chain(v.tau.iter_mut()) {
            mult(&mut a.shape, &mut r);
            mult(&mut a.rate, &mut r);
        }
        for t in &mut v.theta {
            mult(&mut t.a, &mut r);
            mult(&mut t.b, &mut r);
        }
    }
    for v in &mut state.structured {
        add(&mut v.wbar_mean, &mut r);
        v.wbar_var.iter_mut().for_each(|x| mult(x, &mut r));
        for a in &mut v.alphabar {
            mult(&mut a.shape, &mut r);
            mult(&mut a.rate, &mut r);
        }
        add(&mut v.mu_link_mean, &mut r);
        add(&mut v.eta_mean, &mut r);
        v.eta_var.iter_mut().for_each(|x| mult(x, &mut r));
        v.zeta.iter_mut().for_each(|x| mult(x, &mut r));
        v.beta.iter_mut().for_each(|x| mult(x, &mut r));
        v.mu0.iter_mut().for_each(|x| *x += scale * r.random_range(-1.0..1.0));
        let l_count = v.n_topics();
        // Congruence by a near-identity matrix keeps both covariances SPD.
        for cov in [&mut v.sigma0, &mut v.mu_link_cov] {
            let a = DMatrix::<f64>::identity(l_count, l_count) + random_matrix(&mut r, l_count, l_count) * (0.5 * scale);
            let c = &a * &*cov * a.transpose();
            *cov = (&c + c.transpose()) * 0.5;
        }
        for mut col in v.phi.column_iter_mut() {
            col.iter_mut().for_each(|p| *p = (p.max(1e-300).ln() + scale * r.random_range(-1.0..1.0)).exp());
            let total: f64 = col.sum();
            col /= total;
        }
    }
}

fn gamma_expect_log(a: f64, b: f64) -> f64 {
    statrs::function::gamma::digamma(a) - b.ln()
}

fn gamma_entropy(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::{digamma, ln_gamma};
    a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a)
}

fn gamma_log_prior(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    a0 * b0.ln() - statrs::function::gamma::ln_gamma(a0) + (a0 - 1.0) * gamma_expect_log(a, b) - b0 * a / b
}

fn ent_normal(var: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln()
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Straight-line evaluation of the surrogate bound, written independently of
/// the library's term bookkeeping.
pub fn naive_elbo(state: &VariationalState, ds: &Dataset, hp: &Hyperparams) -> f64 {
    use statrs::function::beta::ln_beta;
    use statrs::function::gamma::{digamma, ln_gamma};
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let (n_count, k_count) = state.z.mean.shape();
    let ez = |n: usize, k: usize| state.z.mean[(n, k)];
    let ez2 = |n: usize, k: usize| state.z.mean[(n, k)].powi(2) + state.z.var[(n, k)];
    let mut total = 0.0;

    for n in 0..n_count {
        for k in 0..k_count {
            total += -0.5 * ln2pi - 0.5 * ez2(n, k) + ent_normal(state.z.var[(n, k)]);
        }
    }

    for (v, view) in state.simple.iter().zip(&ds.simple_views) {
        let d_count = v.gamma.nrows();
        let ew = |d: usize, k: usize| v.gamma[(d, k)] * v.slab_mean[(d, k)];
        let ew2 = |d: usize, k: usize| v.gamma[(d, k)] * (v.slab_mean[(d, k)].powi(2) + v.slab_var[(d, k)]);
        for d in 0..d_count {
            let (a, b) = (v.tau[d].shape, v.tau[d].rate);
            for n in 0..n_count {
                let y = view.data[(n, d)];
                // E[(y - sum_k z_k w_k)^2] expanded pairwise.
                let mut e = y * y;
                for k in 0..k_count {
                    e -= 2.0 * y * ez(n, k) * ew(d, k);
                    for j in 0..k_count {
                        e += if j == k { ez2(n, k) * ew2(d, k) } else { ez(n, k) * ez(n, j) * ew(d, k) * ew(d, j) };
                    }
                }
                total += 0.5 * gamma_expect_log(a, b) - 0.5 * ln2pi - 0.5 * (a / b) * e;
            }
            total += gamma_log_prior(a, b, hp.a0_tau, hp.b0_tau) + gamma_entropy(a, b);
        }
        for k in 0..k_count {
            let (aa, ab) = (v.alpha[k].shape, v.alpha[k].rate);
            let (ta, tb) = (v.theta[k].a, v.theta[k].b);
            let e_log_theta = digamma(ta) - digamma(ta + tb);
            let e_log_1m = digamma(tb) - digamma(ta + tb);
            for d in 0..d_count {
                let g = v.gamma[(d, k)];
                let e_wt2 = g * (v.slab_mean[(d, k)].powi(2) + v.slab_var[(d, k)]) + (1.0 - g) * v.spike_var[k];
                total += 0.5 * gamma_expect_log(aa, ab) - 0.5 * ln2pi - 0.5 * (aa / ab) * e_wt2;
                total += g * e_log_theta + (1.0 - g) * e_log_1m;
                total += -plogp(g) - plogp(1.0 - g) + g * ent_normal(v.slab_var[(d, k)]) + (1.0 - g) * ent_normal(v.spike_var[k]);
            }
            total += gamma_log_prior(aa, ab, hp.a0_alpha, hp.b0_alpha) + gamma_entropy(aa, ab);
            total += (hp.a0_theta - 1.0) * e_log_theta + (hp.b0_theta - 1.0) * e_log_1m - ln_beta(hp.a0_theta, hp.b0_theta);
            total += ln_beta(ta, tb) - (ta - 1.0) * digamma(ta) - (tb - 1.0) * digamma(tb) + (ta + tb - 2.0) * digamma(ta + tb);
        }
    }

    for (v, view) in state.structured.iter().zip(&ds.structured_views) {
        let l_count = v.beta.nrows();
        let g_count = v.beta.ncols();
        let linked = v.link_enabled;
        if linked {
            for k in 0..k_count {
                let (a, b) = (v.alphabar[k].shape, v.alphabar[k].rate);
                for l in 0..l_count {
                    let e2 = v.wbar_mean[(l, k)].powi(2) + v.wbar_var[(l, k)];
                    total += 0.5 * gamma_expect_log(a, b) - 0.5 * ln2pi - 0.5 * (a / b) * e2 + ent_normal(v.wbar_var[(l, k)]);
                }
                total += gamma_log_prior(a, b, hp.abar0, hp.bbar0) + gamma_entropy(a, b);
            }
        }
        let t = hp.t;
        for n in 0..n_count {
            for l in 0..l_count {
                let m = v.mu_link_mean[(n, l)];
                let mut e = m * m + v.mu_link_cov[(l, l)];
                if linked {
                    for k in 0..k_count {
                        e -= 2.0 * m * ez(n, k) * v.wbar_mean[(l, k)];
                        for j in 0..k_count {
                            e += if j == k {
                                ez2(n, k) * (v.wbar_mean[(l, k)].powi(2) + v.wbar_var[(l, k)])
                            } else {
                                ez(n, k) * ez(n, j) * v.wbar_mean[(l, k)] * v.wbar_mean[(l, j)]
                            };
                        }
                    }
                }
                total += 0.5 * t.ln() - 0.5 * ln2pi - 0.5 * t * e;
            }
        }
        let cov_chol = v.mu_link_cov.clone().cholesky().expect("link covariance SPD");
        let cov_logdet: f64 = 2.0 * cov_chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        total += n_count as f64 * (0.5 * l_count as f64 * (ln2pi + 1.0) + 0.5 * cov_logdet);

        let s_chol = v.sigma0.clone().cholesky().expect("population covariance SPD");
        let s_logdet: f64 = 2.0 * s_chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let prec = s_chol.inverse();
        let elog_beta = DMatrix::from_fn(l_count, g_count, |l, g| {
            digamma(v.beta[(l, g)]) - digamma(v.beta.row(l).sum())
        });
        let mut col = 0;
        for n in 0..n_count {
            let diff = DMatrix::from_fn(l_count, 1, |l, _| v.eta_mean[(n, l)] - v.mu_link_mean[(n, l)] - v.mu0[l]);
            let mut cov = v.mu_link_cov.clone();
            for l in 0..l_count {
                cov[(l, l)] += v.eta_var[(n, l)];
            }
            let quad = (diff.transpose() * &prec * &diff)[(0, 0)];
            total += -0.5 * l_count as f64 * ln2pi - 0.5 * s_logdet - 0.5 * (quad + (&prec * cov).trace());
            for l in 0..l_count {
                total += ent_normal(v.eta_var[(n, l)]);
            }
            let zeta = v.zeta[n];
            let bound: f64 = (0..l_count).map(|l| (v.eta_mean[(n, l)] + 0.5 * v.eta_var[(n, l)]).exp()).sum::<f64>() / zeta;
            let sentences = &view.samples[n];
            for sentence in sentences {
                for l in 0..l_count {
                    let p = v.phi[(l, col)];
                    total += p * v.eta_mean[(n, l)] - plogp(p);
                    for &(g, c) in &sentence.entries {
                        total += p * c * elog_beta[(l, g as usize)];
                    }
                }
                total -= zeta.ln() + bound - 1.0;
                col += 1;
            }
        }
        let a0 = hp.alpha0_beta;
        let gf = g_count as f64;
        for l in 0..l_count {
            let row: Vec<f64> = v.beta.row(l).iter().copied().collect();
            let sum: f64 = row.iter().sum();
            total += ln_gamma(gf * a0) - gf * ln_gamma(a0) + (a0 - 1.0) * elog_beta.row(l).sum();
            let ln_b: f64 = row.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(sum);
            total += ln_b + (sum - gf) * digamma(sum) - row.iter().map(|&a| (a - 1.0) * digamma(a)).sum::<f64>();
        }
    }
    total
}
