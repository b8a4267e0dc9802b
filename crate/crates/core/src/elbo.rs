//! The surrogate evidence lower bound, assembled term by term.
//!
//! "Surrogate" because the expectation of the log-softmax normalizer is
//! replaced by its first-order bound around `zeta`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::linalg::spd_inverse;
use crate::special::{dirichlet_entropy, ln_gamma, logsumexp, xlogx, LN_2PI};
use crate::state::{GammaParams, VariationalState};
use crate::types::{Dataset, Hyperparams};

/// `ln(2 pi e)`
const LN_2PI_E: f64 = LN_2PI + 1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimpleTerms {
    pub likelihood: f64,
    pub loading_prior: f64,
    pub loading_entropy: f64,
    pub alpha: f64,
    pub theta: f64,
    pub tau: f64,
}

impl SimpleTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.loading_prior + self.loading_entropy + self.alpha + self.theta + self.tau
    }
}

/// Every term attached to one structured view.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StructuredTerms {
    /// Prior and entropy of the link loadings and their ARD precisions.
    pub wbar: f64,
    /// `E log N(mu_n | z_n wbar', 1/t)`
    pub link: f64,
    pub link_entropy: f64,
    /// `E log N(eta_n | mu_n + mu0, Sigma0)`
    pub eta_normal: f64,
    /// Bounded `E log Mult(xi | softmax(eta))`.
    pub topic_assignment: f64,
    pub word_likelihood: f64,
    pub beta_prior: f64,
    pub eta_entropy: f64,
    pub xi_entropy: f64,
    pub beta_entropy: f64,
}

impl StructuredTerms {
    pub fn total(&self) -> f64 {
        self.wbar
            + self.link
            + self.link_entropy
            + self.eta_normal
            + self.topic_assignment
            + self.word_likelihood
            + self.beta_prior
            + self.eta_entropy
            + self.xi_entropy
            + self.beta_entropy
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElboBreakdown {
    /// Prior and entropy of the latent factors.
    pub factors: f64,
    pub simple: Vec<SimpleTerms>,
    pub structured: Vec<StructuredTerms>,
}

impl ElboBreakdown {
    pub fn total(&self) -> f64 {
        self.factors
            + self.simple.iter().map(SimpleTerms::total).sum::<f64>()
            + self.structured.iter().map(StructuredTerms::total).sum::<f64>()
    }
}

fn gamma_terms(p: &GammaParams, a0: f64, b0: f64) -> f64 {
    p.expected_log_prior(a0, b0) + p.entropy()
}

pub fn factor_terms(state: &VariationalState) -> f64 {
    let z = &state.z;
    let mut acc = 0.0;
    for k in 0..z.mean.ncols() {
        for n in 0..z.mean.nrows() {
            acc += -0.5 * LN_2PI - 0.5 * z.second_moment(n, k) + 0.5 * (LN_2PI_E + z.var[(n, k)].ln());
        }
    }
    acc
}

pub fn simple_view_terms(state: &VariationalState, dataset: &Dataset, hp: &Hyperparams, m: usize) -> SimpleTerms {
    let view = &state.simple[m];
    let y = &dataset.simple_views[m].data;
    let z = &state.z;
    let (n_count, k_count, d_count) = (state.n_samples(), state.n_factors(), view.n_features());
    let mean_w = view.mean_loadings();
    let second_w = view.second_moment_loadings();

    let sq_err: Vec<f64> = (0..d_count)
        .into_par_iter()
        .map(|d| {
            let mut acc = 0.0;
            for n in 0..n_count {
                let mut pred = 0.0;
                let mut var_term = 0.0;
                for k in 0..k_count {
                    let ez = z.mean[(n, k)];
                    let ew = mean_w[(d, k)];
                    pred += ez * ew;
                    var_term += z.second_moment(n, k) * second_w[(d, k)] - ez * ez * ew * ew;
                }
                let r = y[(n, d)] - pred;
                acc += r * r + var_term;
            }
            acc
        })
        .collect();

    let mut terms = SimpleTerms::default();
    for (d, err) in sq_err.into_iter().enumerate() {
        let tau = &view.tau[d];
        terms.likelihood += n_count as f64 * 0.5 * (tau.mean_log() - LN_2PI) - 0.5 * tau.mean() * err;
        terms.tau += gamma_terms(tau, hp.a0_tau, hp.b0_tau);
    }
    for k in 0..k_count {
        let alpha = &view.alpha[k];
        let theta = &view.theta[k];
        let (e_alpha, e_log_alpha) = (alpha.mean(), alpha.mean_log());
        let (e_log_theta, e_log_1m) = (theta.mean_log(), theta.mean_log1m());
        let spike = view.spike_var[k];
        for d in 0..d_count {
            let g = view.gamma[(d, k)];
            terms.loading_prior += 0.5 * e_log_alpha - 0.5 * LN_2PI - 0.5 * e_alpha * view.second_moment_slab(d, k)
                + g * e_log_theta
                + (1.0 - g) * e_log_1m;
            terms.loading_entropy += -xlogx(g) - xlogx(1.0 - g)
                + g * 0.5 * (LN_2PI_E + view.slab_var[(d, k)].ln())
                + (1.0 - g) * 0.5 * (LN_2PI_E + spike.ln());
        }
        terms.alpha += gamma_terms(alpha, hp.a0_alpha, hp.b0_alpha);
        terms.theta += theta.expected_log_prior(hp.a0_theta, hp.b0_theta) + theta.entropy();
    }
    terms
}

/// All bound terms attached to structured view `s`: link loadings, the link
/// variable, the logistic-normal proportions, sentence assignments and topics.
pub fn structured_elbo_terms(state: &VariationalState, dataset: &Dataset, hp: &Hyperparams, s: usize) -> StructuredTerms {
    let view = &state.structured[s];
    let data = &dataset.structured_views[s];
    let z = &state.z;
    let (n_count, k_count, l_count) = (state.n_samples(), state.n_factors(), view.n_topics());
    let g_count = view.vocab_size();
    let mut terms = StructuredTerms::default();

    if view.link_enabled {
        for k in 0..k_count {
            let ab = &view.alphabar[k];
            for l in 0..l_count {
                terms.wbar += 0.5 * ab.mean_log() - 0.5 * LN_2PI - 0.5 * ab.mean() * view.second_moment_wbar(l, k)
                    + 0.5 * (LN_2PI_E + view.wbar_var[(l, k)].ln());
            }
            terms.wbar += gamma_terms(ab, hp.abar0, hp.bbar0);
        }
    }

    // Link variable.
    let t = hp.t;
    for n in 0..n_count {
        for l in 0..l_count {
            let mut pred = 0.0;
            let mut var_term = 0.0;
            if view.link_enabled {
                for k in 0..k_count {
                    let ez = z.mean[(n, k)];
                    let ew = view.wbar_mean[(l, k)];
                    pred += ez * ew;
                    var_term += z.second_moment(n, k) * view.second_moment_wbar(l, k) - ez * ez * ew * ew;
                }
            }
            let r = view.mu_link_mean[(n, l)] - pred;
            terms.link += 0.5 * (t.ln() - LN_2PI) - 0.5 * t * (r * r + view.mu_link_cov[(l, l)] + var_term);
        }
    }
    let cov_logdet = match spd_inverse(&view.mu_link_cov, "link covariance") {
        Ok((_, logdet)) => logdet,
        Err(_) => f64::NEG_INFINITY,
    };
    terms.link_entropy = n_count as f64 * 0.5 * (l_count as f64 * LN_2PI_E + cov_logdet);

    // Logistic-normal proportions.
    let (precision, sigma0_logdet) = match spd_inverse(&view.sigma0, "population covariance") {
        Ok(v) => v,
        Err(_) => (DMatrix::from_element(l_count, l_count, f64::NAN), f64::NAN),
    };
    let trace_link: f64 = (0..l_count)
        .flat_map(|i| (0..l_count).map(move |j| (i, j)))
        .map(|(i, j)| view.mu_link_cov[(i, j)] * precision[(j, i)])
        .sum();
    for n in 0..n_count {
        let diff: Vec<f64> = (0..l_count)
            .map(|l| view.eta_mean[(n, l)] - view.mu_link_mean[(n, l)] - view.mu0[l])
            .collect();
        let mut quad = 0.0;
        let mut trace = trace_link;
        for i in 0..l_count {
            trace += view.eta_var[(n, i)] * precision[(i, i)];
            for j in 0..l_count {
                quad += diff[i] * precision[(i, j)] * diff[j];
            }
        }
        terms.eta_normal += -0.5 * l_count as f64 * LN_2PI - 0.5 * sigma0_logdet - 0.5 * (trace + quad);

        let phi_sum = view.phi_sum(n);
        let mu: Vec<f64> = (0..l_count).map(|l| view.eta_mean[(n, l)]).collect();
        let a: Vec<f64> = (0..l_count).map(|l| mu[l] + 0.5 * view.eta_var[(n, l)]).collect();
        let log_zeta = view.zeta[n].ln();
        let bound = (logsumexp(&a) - log_zeta).exp();
        let i_n = (view.sentence_offsets[n + 1] - view.sentence_offsets[n]) as f64;
        terms.topic_assignment += (0..l_count).map(|l| mu[l] * phi_sum[l]).sum::<f64>() - i_n * (log_zeta + bound - 1.0);
        for l in 0..l_count {
            terms.eta_entropy += 0.5 * (LN_2PI_E + view.eta_var[(n, l)].ln());
        }
    }

    // Sentences and topics.
    let elog_beta = view.expected_log_beta();
    let per_sample: Vec<(f64, f64)> = (0..n_count)
        .into_par_iter()
        .map(|n| {
            let mut lik = 0.0;
            let mut ent = 0.0;
            for (i, sentence) in data.samples[n].iter().enumerate() {
                let col = view.sentence_offsets[n] + i;
                for l in 0..l_count {
                    let p = view.phi[(l, col)];
                    ent -= xlogx(p);
                    if p > 0.0 {
                        let mut e = 0.0;
                        for &(g, count) in &sentence.entries {
                            e += count * elog_beta[(l, g as usize)];
                        }
                        lik += p * e;
                    }
                }
            }
            (lik, ent)
        })
        .collect();
    for (lik, ent) in per_sample {
        terms.word_likelihood += lik;
        terms.xi_entropy += ent;
    }

    let a0 = hp.alpha0_beta;
    let g = g_count as f64;
    for l in 0..l_count {
        let row: Vec<f64> = view.beta.row(l).iter().copied().collect();
        terms.beta_prior += ln_gamma(g * a0) - g * ln_gamma(a0) + (a0 - 1.0) * elog_beta.row(l).sum();
        terms.beta_entropy += dirichlet_entropy(&row);
    }
    terms
}

pub fn elbo_breakdown(state: &VariationalState, dataset: &Dataset, hp: &Hyperparams) -> ElboBreakdown {
    ElboBreakdown {
        factors: factor_terms(state),
        simple: (0..state.simple.len())
            .map(|m| simple_view_terms(state, dataset, hp, m))
            .collect(),
        structured: (0..state.structured.len())
            .map(|s| structured_elbo_terms(state, dataset, hp, s))
            .collect(),
    }
}

/// The full surrogate evidence lower bound.
pub fn compute_elbo(state: &VariationalState, dataset: &Dataset, hp: &Hyperparams) -> f64 {
    elbo_breakdown(state, dataset, hp).total()
}
