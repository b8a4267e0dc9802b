use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::ctm::optimal_zeta;
use crate::state::{BetaParams, FactorState, GammaParams, SimpleViewState, StructuredViewState, VariationalState};
use crate::types::{Dataset, FitConfig, Hyperparams};

/// Scale of the jitter added to the principal-component factor start.
const FACTOR_JITTER: f64 = 0.05;
const LOADING_JITTER: f64 = 0.01;

/// Column-standardized concatenation of all simple views (N x sum D).
fn standardized_concat(dataset: &Dataset) -> Option<DMatrix<f64>> {
    let n = dataset.n_samples;
    let total: usize = dataset.simple_views.iter().map(|v| v.n_features()).sum();
    if total == 0 || n < 2 {
        return None;
    }
    let mut x = DMatrix::zeros(n, total);
    let mut col = 0;
    for view in &dataset.simple_views {
        for d in 0..view.n_features() {
            let c = view.data.column(d);
            let mean = c.mean();
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..n {
                x[(i, col)] = (c[i] - mean) / sd;
            }
            col += 1;
        }
    }
    Some(x)
}

/// Starting factors: leading left singular vectors scaled to unit variance,
/// padded with standard normal draws where the data rank runs out.
fn initial_factors(dataset: &Dataset, k_count: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = dataset.n_samples;
    let mut z = DMatrix::from_fn(n, k_count, |_, _| rng.sample::<f64, _>(StandardNormal));
    if let Some(x) = standardized_concat(dataset) {
        let svd = x.svd(true, false);
        if let Some(u) = svd.u {
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
            let scale = (n as f64).sqrt();
            for (k, &j) in order.iter().take(k_count).enumerate() {
                if svd.singular_values[j] <= 1e-10 * svd.singular_values[order[0]].max(1e-300) {
                    break;
                }
                for i in 0..n {
                    z[(i, k)] = scale * u[(i, j)] + FACTOR_JITTER * z[(i, k)];
                }
            }
        }
    }
    z
}

/// How the factor means are started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorInit {
    /// Leading principal directions of the standardized simple views.
    #[default]
    Principal,
    /// Principal directions mixed by a uniformly random orthogonal matrix.
    RotatedPrincipal,
    /// Independent standard normal draws.
    Random,
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of R's diagonal folded into Q.
pub fn random_orthogonal(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Builds a starting posterior with principal-direction factors.
/// Deterministic given `seed`.
pub fn initialize(dataset: &Dataset, hp: &Hyperparams, cfg: &FitConfig, seed: u64) -> VariationalState {
    initialize_with(dataset, hp, cfg, seed, FactorInit::Principal)
}

pub fn initialize_with(
    dataset: &Dataset,
    hp: &Hyperparams,
    cfg: &FitConfig,
    seed: u64,
    factors: FactorInit,
) -> VariationalState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_count = hp.n_factors;
    let n = dataset.n_samples;

    let z_mean = match factors {
        FactorInit::Principal => initial_factors(dataset, k_count, &mut rng),
        FactorInit::RotatedPrincipal => {
            let z = initial_factors(dataset, k_count, &mut rng);
            z * random_orthogonal(k_count, &mut rng)
        }
        FactorInit::Random => DMatrix::from_fn(n, k_count, |_, _| rng.sample::<f64, _>(StandardNormal)),
    };
    let z = FactorState {
        mean: z_mean,
        var: DMatrix::from_element(n, k_count, 1.0),
    };

    let simple = dataset
        .simple_views
        .iter()
        .map(|view| {
            let d_count = view.n_features();
            SimpleViewState {
                gamma: DMatrix::from_element(d_count, k_count, 0.5),
                slab_mean: DMatrix::from_fn(d_count, k_count, |_, _| {
                    LOADING_JITTER * rng.sample::<f64, _>(StandardNormal)
                }),
                slab_var: DMatrix::from_element(d_count, k_count, 1.0),
                spike_var: DVector::from_element(k_count, hp.b0_alpha / hp.a0_alpha),
                alpha: vec![GammaParams::new(hp.a0_alpha, hp.b0_alpha); k_count],
                theta: vec![BetaParams::new(hp.a0_theta, hp.b0_theta); k_count],
                tau: vec![GammaParams::new(hp.a0_tau, hp.b0_tau); d_count],
            }
        })
        .collect();

    let structured = dataset
        .structured_views
        .iter()
        .zip(&hp.n_topics)
        .map(|(view, &l_count)| {
            let g_count = view.vocab_size;
            let offsets = view.sentence_offsets();
            let n_sentences = *offsets.last().unwrap_or(&0);
            let (wbar_mean, wbar_var) = if cfg.link_enabled {
                (
                    DMatrix::from_fn(l_count, k_count, |_, _| {
                        LOADING_JITTER * rng.sample::<f64, _>(StandardNormal)
                    }),
                    DMatrix::from_element(l_count, k_count, hp.bbar0 / hp.abar0),
                )
            } else {
                (DMatrix::zeros(l_count, k_count), DMatrix::zeros(l_count, k_count))
            };
            let beta = DMatrix::from_fn(l_count, g_count, |_, _| {
                hp.alpha0_beta + cfg.init_topic_noise * rng.sample::<f64, _>(Exp1)
            });
            let zeta0 = optimal_zeta(&vec![0.0; l_count], &vec![1.0; l_count]);
            StructuredViewState {
                link_enabled: cfg.link_enabled,
                wbar_mean,
                wbar_var,
                alphabar: vec![GammaParams::new(hp.abar0, hp.bbar0); k_count],
                mu_link_mean: DMatrix::zeros(n, l_count),
                mu_link_cov: DMatrix::identity(l_count, l_count) / (hp.t + 1.0),
                eta_mean: DMatrix::zeros(n, l_count),
                eta_var: DMatrix::from_element(n, l_count, 1.0),
                zeta: DVector::from_element(n, zeta0),
                phi: DMatrix::from_element(l_count, n_sentences, 1.0 / l_count as f64),
                sentence_offsets: offsets,
                beta,
                mu0: DVector::zeros(l_count),
                sigma0: DMatrix::identity(l_count, l_count),
            }
        })
        .collect();

    VariationalState { z, simple, structured }
}
