//! Coordinate-ascent updates for the factor-analysis half of the model.
//!
//! Each function is an exact coordinate maximization of the evidence lower
//! bound with every other block held fixed. Within a block the factor index
//! `k` is visited sequentially because the optimum for one factor depends on
//! the current means of the others.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::special::sigmoid;
use crate::state::{BetaParams, GammaParams, VariationalState};
use crate::types::{Dataset, Hyperparams};

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, phase: &str) -> Result<()> {
    if values.into_iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { phase: phase.into() })
    }
}

/// Per-view quantities reused by the factor update.
struct SimpleSummary<'a> {
    y: &'a DMatrix<f64>,
    mean_w: DMatrix<f64>,
    tau: Vec<f64>,
}

struct LinkSummary<'a> {
    target: &'a DMatrix<f64>,
    mean_w: &'a DMatrix<f64>,
}

/// Updates `q(z)` for every sample.
pub fn update_z(state: &mut VariationalState, dataset: &Dataset, hp: &Hyperparams) -> Result<()> {
    let k_count = state.n_factors();
    let n_count = state.n_samples();

    let simple: Vec<SimpleSummary> = state
        .simple
        .iter()
        .zip(&dataset.simple_views)
        .map(|(vs, view)| SimpleSummary {
            y: &view.data,
            mean_w: vs.mean_loadings(),
            tau: vs.tau.iter().map(GammaParams::mean).collect(),
        })
        .collect();
    let links: Vec<LinkSummary> = state
        .structured
        .iter()
        .filter(|s| s.link_enabled)
        .map(|s| LinkSummary {
            target: &s.mu_link_mean,
            mean_w: &s.wbar_mean,
        })
        .collect();

    // The posterior precision of z_{n,k} does not depend on n.
    let mut precision = vec![1.0; k_count];
    for (vs, summary) in state.simple.iter().zip(&simple) {
        for (k, p) in precision.iter_mut().enumerate() {
            for d in 0..vs.n_features() {
                *p += summary.tau[d] * vs.second_moment_w(d, k);
            }
        }
    }
    for s in state.structured.iter().filter(|s| s.link_enabled) {
        for (k, p) in precision.iter_mut().enumerate() {
            for l in 0..s.n_topics() {
                *p += hp.t * s.second_moment_wbar(l, k);
            }
        }
    }

    let old_mean = &state.z.mean;
    let t = hp.t;
    let rows: Vec<Vec<f64>> = (0..n_count)
        .into_par_iter()
        .map(|n| {
            let mut z: Vec<f64> = (0..k_count).map(|k| old_mean[(n, k)]).collect();
            let mut preds: Vec<Vec<f64>> = simple
                .iter()
                .map(|v| {
                    (0..v.mean_w.nrows())
                        .map(|d| (0..k_count).map(|k| z[k] * v.mean_w[(d, k)]).sum())
                        .collect()
                })
                .collect();
            let mut link_preds: Vec<Vec<f64>> = links
                .iter()
                .map(|v| {
                    (0..v.mean_w.nrows())
                        .map(|l| (0..k_count).map(|k| z[k] * v.mean_w[(l, k)]).sum())
                        .collect()
                })
                .collect();
            for k in 0..k_count {
                let zk = z[k];
                let mut lin = 0.0;
                for (v, pred) in simple.iter().zip(&preds) {
                    for d in 0..v.mean_w.nrows() {
                        let w = v.mean_w[(d, k)];
                        lin += v.tau[d] * w * (v.y[(n, d)] - pred[d] + zk * w);
                    }
                }
                for (v, pred) in links.iter().zip(&link_preds) {
                    for l in 0..v.mean_w.nrows() {
                        let w = v.mean_w[(l, k)];
                        lin += t * w * (v.target[(n, l)] - pred[l] + zk * w);
                    }
                }
                let new = lin / precision[k];
                let delta = new - zk;
                z[k] = new;
                for (v, pred) in simple.iter().zip(preds.iter_mut()) {
                    for (d, p) in pred.iter_mut().enumerate() {
                        *p += delta * v.mean_w[(d, k)];
                    }
                }
                for (v, pred) in links.iter().zip(link_preds.iter_mut()) {
                    for (l, p) in pred.iter_mut().enumerate() {
                        *p += delta * v.mean_w[(l, k)];
                    }
                }
            }
            z
        })
        .collect();

    for (n, row) in rows.iter().enumerate() {
        for k in 0..k_count {
            state.z.mean[(n, k)] = row[k];
            state.z.var[(n, k)] = 1.0 / precision[k];
        }
    }
    check_finite(state.z.mean.iter(), "z")
}

/// Updates the spike-and-slab posterior `q(w~, s)` of simple view `m`.
pub fn update_w_spike_slab(
    state: &mut VariationalState,
    dataset: &Dataset,
    _hp: &Hyperparams,
    m: usize,
) -> Result<()> {
    let k_count = state.n_factors();
    let n_count = state.n_samples();
    let z = &state.z;
    let y = &dataset.simple_views[m].data;
    let view = &state.simple[m];

    let z_sq = z.column_second_moments();
    let alpha: Vec<f64> = view.alpha.iter().map(GammaParams::mean).collect();
    let logit_prior: Vec<f64> = view
        .theta
        .iter()
        .map(|th| th.mean_log() - th.mean_log1m())
        .collect();
    let tau: Vec<f64> = view.tau.iter().map(GammaParams::mean).collect();

    // Each feature row is independent given z.
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..view.n_features())
        .into_par_iter()
        .map(|d| {
            let mut mean_w: Vec<f64> = (0..k_count).map(|k| view.mean_w(d, k)).collect();
            let mut pred: Vec<f64> = (0..n_count)
                .map(|n| (0..k_count).map(|k| z.mean[(n, k)] * mean_w[k]).sum())
                .collect();
            let mut gamma = vec![0.0; k_count];
            let mut mu = vec![0.0; k_count];
            let mut var = vec![0.0; k_count];
            for k in 0..k_count {
                let old = mean_w[k];
                let mut s1 = 0.0;
                for n in 0..n_count {
                    let zn = z.mean[(n, k)];
                    s1 += zn * (y[(n, d)] - pred[n] + zn * old);
                }
                let precision = tau[d] * z_sq[k] + alpha[k];
                assert!(precision > 0.0, "slab precision must be positive");
                let v = 1.0 / precision;
                let m_hat = v * tau[d] * s1;
                let logit = logit_prior[k] + 0.5 * (v * alpha[k]).ln() + 0.5 * m_hat * m_hat / v;
                let g = sigmoid(logit);
                gamma[k] = g;
                mu[k] = m_hat;
                var[k] = v;
                let new = g * m_hat;
                mean_w[k] = new;
                let delta = new - old;
                if delta != 0.0 {
                    for (n, p) in pred.iter_mut().enumerate() {
                        *p += delta * z.mean[(n, k)];
                    }
                }
            }
            (gamma, mu, var)
        })
        .collect();

    let view = &mut state.simple[m];
    for (d, (g, mu, v)) in rows.into_iter().enumerate() {
        for k in 0..k_count {
            view.gamma[(d, k)] = g[k];
            view.slab_mean[(d, k)] = mu[k];
            view.slab_var[(d, k)] = v[k];
        }
    }
    for k in 0..k_count {
        view.spike_var[k] = 1.0 / alpha[k];
    }
    check_finite(
        view.gamma.iter().chain(view.slab_mean.iter()).chain(view.slab_var.iter()),
        "w",
    )
}

/// Updates the Gamma/Beta posteriors `q(alpha)`, `q(theta)`, `q(tau)` of every
/// simple view and `q(alphabar)` of every linked structured view.
pub fn update_conjugates(state: &mut VariationalState, dataset: &Dataset, hp: &Hyperparams) -> Result<()> {
    let k_count = state.n_factors();
    let n_count = state.n_samples();
    let z = &state.z;

    for (view, data) in state.simple.iter_mut().zip(&dataset.simple_views) {
        let d_count = view.n_features();
        for k in 0..k_count {
            let sum_sq: f64 = (0..d_count).map(|d| view.second_moment_slab(d, k)).sum();
            view.alpha[k] = GammaParams::new(
                hp.a0_alpha + 0.5 * d_count as f64,
                hp.b0_alpha + 0.5 * sum_sq,
            );
            let included: f64 = view.gamma.column(k).iter().sum();
            view.theta[k] = BetaParams::new(hp.a0_theta + included, hp.b0_theta + d_count as f64 - included);
        }

        let mean_w = view.mean_loadings();
        let second_w = view.second_moment_loadings();
        let y = &data.data;
        let rates: Vec<f64> = (0..d_count)
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
        for (d, rate) in rates.into_iter().enumerate() {
            view.tau[d] = GammaParams::new(hp.a0_tau + 0.5 * n_count as f64, hp.b0_tau + 0.5 * rate);
        }
    }

    for view in state.structured.iter_mut().filter(|s| s.link_enabled) {
        let l_count = view.n_topics();
        for k in 0..k_count {
            let sum_sq: f64 = (0..l_count).map(|l| view.second_moment_wbar(l, k)).sum();
            view.alphabar[k] = GammaParams::new(hp.abar0 + 0.5 * l_count as f64, hp.bbar0 + 0.5 * sum_sq);
        }
    }

    for view in &state.simple {
        check_finite(view.tau.iter().map(|p| &p.rate), "conjugates")?;
        check_finite(view.alpha.iter().map(|p| &p.rate), "conjugates")?;
    }
    Ok(())
}

/// Updates `q(wbar)` of structured view `s`, treating the link means as
/// pseudo-observations with precision `t`.
pub fn update_wbar(state: &mut VariationalState, hp: &Hyperparams, s: usize) -> Result<()> {
    if !state.structured[s].link_enabled {
        return Ok(());
    }
    let k_count = state.n_factors();
    let n_count = state.n_samples();
    let z = &state.z;
    let view = &state.structured[s];
    let z_sq = z.column_second_moments();
    let precision: Vec<f64> = (0..k_count)
        .map(|k| hp.t * z_sq[k] + view.alphabar[k].mean())
        .collect();

    let rows: Vec<Vec<f64>> = (0..view.n_topics())
        .map(|l| {
            let mut w: Vec<f64> = (0..k_count).map(|k| view.wbar_mean[(l, k)]).collect();
            let mut pred: Vec<f64> = (0..n_count)
                .map(|n| (0..k_count).map(|k| z.mean[(n, k)] * w[k]).sum())
                .collect();
            for k in 0..k_count {
                let old = w[k];
                let mut lin = 0.0;
                for n in 0..n_count {
                    let zn = z.mean[(n, k)];
                    lin += zn * (view.mu_link_mean[(n, l)] - pred[n] + zn * old);
                }
                let new = hp.t * lin / precision[k];
                w[k] = new;
                let delta = new - old;
                for (n, p) in pred.iter_mut().enumerate() {
                    *p += delta * z.mean[(n, k)];
                }
            }
            w
        })
        .collect();

    let view = &mut state.structured[s];
    for (l, row) in rows.into_iter().enumerate() {
        for k in 0..k_count {
            view.wbar_mean[(l, k)] = row[k];
            view.wbar_var[(l, k)] = 1.0 / precision[k];
        }
    }
    check_finite(view.wbar_mean.iter(), "wbar")
}
