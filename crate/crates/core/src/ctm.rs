//! Updates for the structured views: a correlated topic model over
//! sentences whose topic-proportion logits are shifted by a link variable.
//!
//! All functions act on one view's [`StructuredViewState`]. The link enters
//! only through `link_mean`, the N x L prior mean `E[z] E[wbar]'` of the link
//! variable; passing zeros gives a plain sentence-level correlated topic model.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsConfig};
use crate::linalg::{ensure_positive_definite, spd_inverse, symmetrize};
use crate::special::{expected_log_dirichlet, logsumexp, softmax_in_place};
use crate::state::StructuredViewState;
use crate::types::{Phase, Sentence, StructuredView};

/// `E[log beta_l]` for a Dirichlet posterior with parameters `alpha_beta_l`.
pub fn expected_log_beta(alpha_beta_l: &[f64]) -> Vec<f64> {
    expected_log_dirichlet(alpha_beta_l)
}

/// Closed-form maximizer of the log-sum-exp bound over its auxiliary variable.
pub fn optimal_zeta(mu_eta: &[f64], sigma2_eta: &[f64]) -> f64 {
    log_optimal_zeta(mu_eta, sigma2_eta).exp()
}

fn log_optimal_zeta(mu: &[f64], sigma2: &[f64]) -> f64 {
    let a: Vec<f64> = mu.iter().zip(sigma2).map(|(m, s)| m + 0.5 * s).collect();
    logsumexp(&a)
}

/// `Z E[wbar]'`, or zeros when the view is not linked.
pub fn link_prior_mean(z_mean: &DMatrix<f64>, view: &StructuredViewState) -> DMatrix<f64> {
    if view.link_enabled {
        z_mean * view.wbar_mean.transpose()
    } else {
        DMatrix::zeros(z_mean.nrows(), view.n_topics())
    }
}

/// Updates `q(mu_n)` for every sample. The covariance is shared across samples.
pub fn update_mu_link(view: &mut StructuredViewState, link_mean: &DMatrix<f64>, t: f64) -> Result<()> {
    let l_count = view.n_topics();
    let (sigma0_inv, _) = spd_inverse(&view.sigma0, "population covariance")?;
    let mut precision = sigma0_inv.clone();
    for l in 0..l_count {
        precision[(l, l)] += t;
    }
    let (cov, _) = spd_inverse(&precision, "link precision")?;
    for n in 0..view.n_samples() {
        let centered = DVector::from_fn(l_count, |l, _| view.eta_mean[(n, l)] - view.mu0[l]);
        let rhs = &sigma0_inv * centered + DVector::from_fn(l_count, |l, _| t * link_mean[(n, l)]);
        let mean = &cov * rhs;
        for l in 0..l_count {
            view.mu_link_mean[(n, l)] = mean[l];
        }
    }
    view.mu_link_cov = symmetrize(&cov);
    if view.mu_link_mean.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { phase: "mu_link".into() })
    }
}

/// Value and gradients of the per-sample bound on the logistic-normal terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaObjective {
    pub value: f64,
    pub grad_mu: Vec<f64>,
    pub grad_sigma2: Vec<f64>,
}

/// The fixed inputs of the logistic-normal bound for one sample.
#[derive(Debug, Clone)]
pub struct EtaProblem {
    /// `mu_link_n + mu0`
    pub center: Vec<f64>,
    /// Inverse of the population covariance.
    pub precision: DMatrix<f64>,
    /// Sum of the sentence topic probabilities.
    pub phi_sum: Vec<f64>,
    pub n_sentences: f64,
}

impl EtaProblem {
    pub fn for_sample(view: &StructuredViewState, precision: &DMatrix<f64>, n: usize) -> Self {
        let l_count = view.n_topics();
        Self {
            center: (0..l_count).map(|l| view.mu_link_mean[(n, l)] + view.mu0[l]).collect(),
            precision: precision.clone(),
            phi_sum: view.phi_sum(n).iter().copied().collect(),
            n_sentences: (view.sentence_offsets[n + 1] - view.sentence_offsets[n]) as f64,
        }
    }

    pub fn objective(&self, mu: &[f64], sigma2: &[f64], zeta: f64) -> EtaObjective {
        self.objective_log_zeta(mu, sigma2, zeta.ln())
    }

    fn objective_log_zeta(&self, mu: &[f64], sigma2: &[f64], log_zeta: f64) -> EtaObjective {
        let l_count = mu.len();
        let diff: Vec<f64> = mu.iter().zip(&self.center).map(|(m, c)| m - c).collect();
        let mut p_diff = vec![0.0; l_count];
        for j in 0..l_count {
            for (i, pd) in p_diff.iter_mut().enumerate() {
                *pd += self.precision[(i, j)] * diff[j];
            }
        }
        // zeta^{-1} exp(mu + sigma2 / 2), evaluated in shifted form.
        let scaled: Vec<f64> = mu
            .iter()
            .zip(sigma2)
            .map(|(m, s)| (m + 0.5 * s - log_zeta).exp())
            .collect();
        let bound_sum: f64 = scaled.iter().sum();

        let mut value = 0.0;
        let mut quad = 0.0;
        for l in 0..l_count {
            value -= 0.5 * sigma2[l] * self.precision[(l, l)];
            quad += diff[l] * p_diff[l];
            value += mu[l] * self.phi_sum[l];
            value += 0.5 * sigma2[l].ln();
        }
        value -= 0.5 * quad;
        value -= self.n_sentences * (log_zeta + bound_sum - 1.0);

        let grad_mu = (0..l_count)
            .map(|l| -p_diff[l] + self.phi_sum[l] - self.n_sentences * scaled[l])
            .collect();
        let grad_sigma2 = (0..l_count)
            .map(|l| {
                -0.5 * self.precision[(l, l)] - 0.5 * self.n_sentences * scaled[l] + 0.5 / sigma2[l]
            })
            .collect();
        EtaObjective {
            value,
            grad_mu,
            grad_sigma2,
        }
    }

    /// Bound with the auxiliary variable at its optimum.
    pub fn profiled(&self, mu: &[f64], sigma2: &[f64]) -> EtaObjective {
        self.objective_log_zeta(mu, sigma2, log_optimal_zeta(mu, sigma2))
    }
}

/// Outcome of optimizing one sample's logistic-normal parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaStep {
    pub value_before: f64,
    pub value_after: f64,
    /// Max-norm of the gradient in `(mu, log sigma2)` coordinates.
    pub grad_inf: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximizes the bound over `(mu, log sigma2)` for one sample, with the
/// auxiliary variable reset to its closed form before and after.
pub fn update_eta_sample(
    problem: &EtaProblem,
    mu: &mut [f64],
    sigma2: &mut [f64],
    zeta: &mut f64,
    cfg: &LbfgsConfig,
) -> EtaStep {
    let l_count = mu.len();
    *zeta = optimal_zeta(mu, sigma2);
    let value_before = problem.profiled(mu, sigma2).value;

    let mut x0 = Vec::with_capacity(2 * l_count);
    x0.extend_from_slice(mu);
    x0.extend(sigma2.iter().map(|s| s.ln()));
    let objective = |x: &[f64], grad: &mut [f64]| {
        let (m, log_s) = x.split_at(l_count);
        let s: Vec<f64> = log_s.iter().map(|v| v.exp()).collect();
        if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let obj = problem.profiled(m, &s);
        grad[..l_count].copy_from_slice(&obj.grad_mu);
        for l in 0..l_count {
            grad[l_count + l] = s[l] * obj.grad_sigma2[l];
        }
        obj.value
    };
    let out = lbfgs::maximize(objective, &x0, cfg);
    mu.copy_from_slice(&out.x[..l_count]);
    for l in 0..l_count {
        sigma2[l] = out.x[l_count + l].exp();
    }
    *zeta = optimal_zeta(mu, sigma2);
    EtaStep {
        value_before,
        value_after: out.value,
        grad_inf: out.grad_inf,
        iterations: out.iterations,
        converged: out.converged,
    }
}

/// Updates `q(eta_n)` and `zeta_n` for every sample; returns the number of
/// samples whose inner optimization stopped before reaching the gradient tolerance.
pub fn update_eta(view: &mut StructuredViewState, cfg: &LbfgsConfig) -> Result<usize> {
    let l_count = view.n_topics();
    let (precision, _) = spd_inverse(&view.sigma0, "population covariance")?;
    let results: Vec<(Vec<f64>, Vec<f64>, f64, bool)> = (0..view.n_samples())
        .into_par_iter()
        .map(|n| {
            let problem = EtaProblem::for_sample(view, &precision, n);
            let mut mu: Vec<f64> = (0..l_count).map(|l| view.eta_mean[(n, l)]).collect();
            let mut s2: Vec<f64> = (0..l_count).map(|l| view.eta_var[(n, l)]).collect();
            let mut zeta = view.zeta[n];
            let step = update_eta_sample(&problem, &mut mu, &mut s2, &mut zeta, cfg);
            (mu, s2, zeta, step.converged)
        })
        .collect();
    let mut not_converged = 0;
    for (n, (mu, s2, zeta, converged)) in results.into_iter().enumerate() {
        for l in 0..l_count {
            view.eta_mean[(n, l)] = mu[l];
            view.eta_var[(n, l)] = s2[l];
        }
        view.zeta[n] = zeta;
        if !converged {
            not_converged += 1;
        }
    }
    if view.eta_mean.iter().chain(view.eta_var.iter()).all(|x| x.is_finite()) {
        Ok(not_converged)
    } else {
        Err(Error::NonFinite { phase: "eta".into() })
    }
}

/// Resets every `zeta_n` to its closed-form optimum.
pub fn update_zeta(view: &mut StructuredViewState) {
    let l_count = view.n_topics();
    for n in 0..view.n_samples() {
        let mu: Vec<f64> = (0..l_count).map(|l| view.eta_mean[(n, l)]).collect();
        let s2: Vec<f64> = (0..l_count).map(|l| view.eta_var[(n, l)]).collect();
        view.zeta[n] = optimal_zeta(&mu, &s2);
    }
}

fn sentence_logits(out: &mut [f64], sentence: &Sentence, eta_mean: &[f64], elog_beta: &DMatrix<f64>) {
    out.copy_from_slice(eta_mean);
    for &(g, count) in &sentence.entries {
        let col = elog_beta.column(g as usize);
        for (o, e) in out.iter_mut().zip(col.iter()) {
            *o += count * e;
        }
    }
}

/// Updates the topic distribution of every sentence of sample `n`.
pub fn update_xi_sample(view: &mut StructuredViewState, data: &StructuredView, n: usize, elog_beta: &DMatrix<f64>) {
    let l_count = view.n_topics();
    let eta: Vec<f64> = (0..l_count).map(|l| view.eta_mean[(n, l)]).collect();
    let mut buf = vec![0.0; l_count];
    for (i, sentence) in data.samples[n].iter().enumerate() {
        sentence_logits(&mut buf, sentence, &eta, elog_beta);
        softmax_in_place(&mut buf);
        let col = view.sentence_offsets[n] + i;
        for l in 0..l_count {
            view.phi[(l, col)] = buf[l];
        }
    }
}

/// Updates the topic distribution of every sentence of the view.
pub fn update_xi(view: &mut StructuredViewState, data: &StructuredView) {
    let l_count = view.n_topics();
    let elog_beta = view.expected_log_beta();
    // The transposed layout (L x G) keeps each word's topic column contiguous.
    let eta = view.eta_mean.transpose();
    let sentences: Vec<(usize, &Sentence)> = data
        .samples
        .iter()
        .enumerate()
        .flat_map(|(n, s)| s.iter().map(move |x| (n, x)))
        .collect();
    view.phi
        .as_mut_slice()
        .par_chunks_mut(l_count)
        .zip(sentences.par_iter())
        .for_each(|(col, (n, sentence))| {
            let eta_n = eta.column(*n);
            sentence_logits(col, sentence, eta_n.as_slice(), &elog_beta);
            softmax_in_place(col);
        });
}

/// Updates the topic Dirichlets from the current sentence assignments.
pub fn update_beta(view: &mut StructuredViewState, data: &StructuredView, alpha0_beta: f64) {
    let l_count = view.n_topics();
    let g_count = view.vocab_size();
    let phi = &view.phi;
    let rows: Vec<Vec<f64>> = (0..l_count)
        .into_par_iter()
        .map(|l| {
            let mut row = vec![alpha0_beta; g_count];
            let mut col = 0;
            for sample in &data.samples {
                for sentence in sample {
                    let p = phi[(l, col)];
                    if p > 0.0 {
                        for &(g, count) in &sentence.entries {
                            row[g as usize] += p * count;
                        }
                    }
                    col += 1;
                }
            }
            row
        })
        .collect();
    for (l, row) in rows.into_iter().enumerate() {
        for (g, v) in row.into_iter().enumerate() {
            view.beta[(l, g)] = v;
        }
    }
}

/// Maximum-likelihood update of the population mean and covariance.
pub fn update_population(view: &mut StructuredViewState) -> Result<()> {
    let l_count = view.n_topics();
    let n_count = view.n_samples();
    let nf = n_count as f64;
    let mut mu0 = DVector::zeros(l_count);
    for n in 0..n_count {
        for l in 0..l_count {
            mu0[l] += view.eta_mean[(n, l)] - view.mu_link_mean[(n, l)];
        }
    }
    mu0 /= nf;

    let mut scatter = DMatrix::<f64>::zeros(l_count, l_count);
    let mut centered = vec![0.0; l_count];
    for n in 0..n_count {
        for l in 0..l_count {
            centered[l] = view.eta_mean[(n, l)] - view.mu_link_mean[(n, l)] - mu0[l];
        }
        for j in 0..l_count {
            for i in 0..=j {
                scatter[(i, j)] += centered[i] * centered[j];
            }
            scatter[(j, j)] += view.eta_var[(n, j)];
        }
    }
    let mut sigma0 = DMatrix::zeros(l_count, l_count);
    for j in 0..l_count {
        for i in 0..=j {
            let v = view.mu_link_cov[(i, j)] + scatter[(i, j)] / nf;
            sigma0[(i, j)] = v;
            sigma0[(j, i)] = v;
        }
    }
    ensure_positive_definite(&mut sigma0)?;
    view.mu0 = mu0;
    view.sigma0 = sigma0;
    Ok(())
}

/// Diagnostics of one structured-view phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseStats {
    pub inner_not_converged: usize,
}

/// A sentence-level correlated topic model over one structured view, with
/// an externally supplied prior mean for the per-sample link variable.
#[derive(Debug, Clone, Copy)]
pub struct SentenceCtm<'a> {
    pub data: &'a StructuredView,
    pub t: f64,
    pub alpha0_beta: f64,
    pub inner: LbfgsConfig,
}

impl SentenceCtm<'_> {
    /// Applies one structured-view phase; other phases are no-ops.
    pub fn run_phase(&self, state: &mut StructuredViewState, link_mean: &DMatrix<f64>, phase: Phase) -> Result<PhaseStats> {
        let mut stats = PhaseStats::default();
        match phase {
            Phase::Phi => update_xi(state, self.data),
            Phase::Eta => stats.inner_not_converged = update_eta(state, &self.inner)?,
            Phase::MuLink => update_mu_link(state, link_mean, self.t)?,
            Phase::Beta => update_beta(state, self.data, self.alpha0_beta),
            Phase::Population => update_population(state)?,
            _ => {}
        }
        Ok(stats)
    }

    /// Runs the structured phases of `schedule` in order.
    pub fn sweep(&self, state: &mut StructuredViewState, link_mean: &DMatrix<f64>, schedule: &[Phase]) -> Result<PhaseStats> {
        let mut total = PhaseStats::default();
        for &phase in schedule {
            total.inner_not_converged += self.run_phase(state, link_mean, phase)?.inner_not_converged;
        }
        Ok(total)
    }
}
