//! Sweep schedule, convergence, restarts and post-fit factor ordering.

use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ctm::{link_prior_mean, SentenceCtm};
use crate::elbo::compute_elbo;
use crate::error::{Error, Result};
use crate::fa;
use crate::init::{initialize_with, FactorInit};
use crate::lbfgs::LbfgsConfig;
use crate::state::VariationalState;
use crate::types::{validate, Dataset, FitConfig, Hyperparams, Phase};

/// Number of sweeps the convergence criterion averages over.
const CONVERGENCE_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `(sweep index, ELBO)` after each completed sweep, starting at 1.
    pub elbo_trace: Vec<(usize, f64)>,
    pub initial_elbo: f64,
    pub converged: bool,
    pub sweeps_used: usize,
    /// `factor_order[k]` is the pre-ordering index of output factor `k`.
    pub factor_order: Vec<usize>,
    /// Indexed `[view][factor]`, simple views first, then structured views.
    pub variance_explained: Vec<Vec<f64>>,
    pub view_names: Vec<String>,
    pub wall_time_per_sweep: Vec<f64>,
    /// Total count of per-sample inner optimizations that hit the iteration cap.
    pub inner_opt_nonconverged: usize,
    pub seed: u64,
    pub restart_elbos: Vec<f64>,
}

impl FitReport {
    pub fn final_elbo(&self) -> f64 {
        self.elbo_trace.last().map_or(self.initial_elbo, |&(_, e)| e)
    }
}

/// Called after every phase with `(sweep index, phase, state)`.
pub type SweepObserver<'a> = dyn FnMut(usize, Phase, &VariationalState) + 'a;

fn inner_config(cfg: &FitConfig) -> LbfgsConfig {
    LbfgsConfig {
        max_iters: cfg.inner_opt_max_iters,
        grad_tol: cfg.inner_opt_grad_tol,
        ..LbfgsConfig::default()
    }
}

fn all_finite(state: &VariationalState) -> bool {
    let fin = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
    fin(&state.z.mean)
        && fin(&state.z.var)
        && state.simple.iter().all(|v| {
            fin(&v.gamma)
                && fin(&v.slab_mean)
                && fin(&v.slab_var)
                && v.alpha.iter().chain(&v.tau).all(|g| g.shape.is_finite() && g.rate.is_finite())
                && v.theta.iter().all(|b| b.a.is_finite() && b.b.is_finite())
        })
        && state.structured.iter().all(|v| {
            fin(&v.wbar_mean)
                && fin(&v.mu_link_mean)
                && fin(&v.eta_mean)
                && fin(&v.eta_var)
                && fin(&v.phi)
                && fin(&v.beta)
                && fin(&v.sigma0)
                && v.mu0.iter().all(|x| x.is_finite())
                && v.zeta.iter().all(|x| x.is_finite())
        })
}

/// Applies one block of the sweep to every view it touches. Returns the
/// number of inner optimizations that stopped at the iteration cap.
pub fn run_phase(
    state: &mut VariationalState,
    dataset: &Dataset,
    hp: &Hyperparams,
    cfg: &FitConfig,
    phase: Phase,
) -> Result<usize> {
    let mut not_converged = 0;
    match phase {
        Phase::Phi | Phase::Eta | Phase::MuLink | Phase::Beta | Phase::Population => {
            let inner = inner_config(cfg);
            for (s, data) in dataset.structured_views.iter().enumerate() {
                let ctm = SentenceCtm {
                    data,
                    t: hp.t,
                    alpha0_beta: hp.alpha0_beta,
                    inner,
                };
                let link = if phase == Phase::MuLink {
                    link_prior_mean(&state.z.mean, &state.structured[s])
                } else {
                    DMatrix::zeros(0, 0)
                };
                not_converged += ctm.run_phase(&mut state.structured[s], &link, phase)?.inner_not_converged;
            }
        }
        Phase::W => {
            for m in 0..dataset.simple_views.len() {
                fa::update_w_spike_slab(state, dataset, hp, m)?;
            }
        }
        Phase::Conjugates => fa::update_conjugates(state, dataset, hp)?,
        Phase::Z => fa::update_z(state, dataset, hp)?,
        Phase::Wbar => {
            for s in 0..dataset.structured_views.len() {
                fa::update_wbar(state, hp, s)?;
            }
        }
    }
    if !all_finite(state) {
        return Err(Error::NonFinite { phase: phase.name().into() });
    }
    Ok(not_converged)
}

struct RunOutcome {
    trace: Vec<(usize, f64)>,
    initial_elbo: f64,
    converged: bool,
    wall: Vec<f64>,
    not_converged: usize,
}

fn run_sweeps(
    state: &mut VariationalState,
    dataset: &Dataset,
    hp: &Hyperparams,
    cfg: &FitConfig,
    mut observer: Option<&mut SweepObserver<'_>>,
) -> Result<RunOutcome> {
    let initial_elbo = compute_elbo(state, dataset, hp);
    if !initial_elbo.is_finite() {
        return Err(Error::NonFinite { phase: "initialization".into() });
    }
    let mut out = RunOutcome {
        trace: Vec::new(),
        initial_elbo,
        converged: false,
        wall: Vec::new(),
        not_converged: 0,
    };
    let mut prev = initial_elbo;
    let mut rel_changes = Vec::new();
    for sweep in 1..=cfg.max_sweeps {
        let start = Instant::now();
        let mut last_phase = None;
        for &phase in &cfg.update_schedule {
            out.not_converged += run_phase(state, dataset, hp, cfg, phase)?;
            last_phase = Some(phase);
            if let Some(obs) = observer.as_deref_mut() {
                obs(sweep, phase, state);
            }
        }
        out.wall.push(start.elapsed().as_secs_f64());
        let elbo = compute_elbo(state, dataset, hp);
        if !elbo.is_finite() {
            let phase = last_phase.map_or("sweep", Phase::name);
            return Err(Error::NonFinite { phase: format!("elbo after {phase}") });
        }
        if elbo < prev - 1e-6 * prev.abs() {
            warn!("ELBO decreased at sweep {sweep}: {prev} -> {elbo}");
        }
        out.trace.push((sweep, elbo));
        rel_changes.push(((elbo - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs());
        prev = elbo;
        debug!("sweep {sweep}: elbo {elbo:.6}");
        if rel_changes.len() >= CONVERGENCE_WINDOW {
            let recent = &rel_changes[rel_changes.len() - CONVERGENCE_WINDOW..];
            if recent.iter().sum::<f64>() / (CONVERGENCE_WINDOW as f64) < cfg.elbo_rel_tol {
                out.converged = true;
                break;
            }
        }
    }
    Ok(out)
}

fn check_inputs(dataset: &Dataset, hp: &Hyperparams, cfg: &FitConfig) -> Result<()> {
    let mut violations = validate(dataset, hp);
    violations.extend(cfg.violations());
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(violations))
    }
}

/// One fit from one seed, without factor reordering. The observer, if any,
/// sees the state after every phase.
pub fn fit_single(
    dataset: &Dataset,
    hp: &Hyperparams,
    cfg: &FitConfig,
    seed: u64,
    init: FactorInit,
    observer: Option<&mut SweepObserver<'_>>,
) -> Result<(VariationalState, FitReport)> {
    check_inputs(dataset, hp, cfg)?;
    let mut state = initialize_with(dataset, hp, cfg, seed, init);
    let run = run_sweeps(&mut state, dataset, hp, cfg, observer)?;
    let report = FitReport {
        sweeps_used: run.trace.len(),
        elbo_trace: run.trace,
        initial_elbo: run.initial_elbo,
        converged: run.converged,
        factor_order: (0..hp.n_factors).collect(),
        variance_explained: variance_explained(&state, dataset),
        view_names: view_names(dataset),
        wall_time_per_sweep: run.wall,
        inner_opt_nonconverged: run.not_converged,
        seed,
        restart_elbos: Vec::new(),
    };
    Ok((state, report))
}

/// Fits from `cfg.n_restarts` seeds (`cfg.seed`, `cfg.seed + 1`, ...), keeps
/// the fit with the highest final ELBO, and orders its factors by total
/// variance explained. The first restart starts the factors from principal
/// directions, later ones from randomly rotated principal directions.
pub fn fit(dataset: &Dataset, hp: &Hyperparams, cfg: &FitConfig) -> Result<(VariationalState, FitReport)> {
    check_inputs(dataset, hp, cfg)?;
    let mut best: Option<(VariationalState, FitReport)> = None;
    let mut elbos = Vec::with_capacity(cfg.n_restarts);
    for r in 0..cfg.n_restarts {
        let seed = cfg.seed.wrapping_add(r as u64);
        let init = if r == 0 { FactorInit::Principal } else { FactorInit::RotatedPrincipal };
        let (state, report) = fit_single(dataset, hp, cfg, seed, init, None)?;
        let elbo = report.final_elbo();
        info!(
            "restart {r} (seed {seed}): elbo {elbo:.6} after {} sweeps{}",
            report.sweeps_used,
            if report.converged { "" } else { " (not converged)" }
        );
        elbos.push(elbo);
        if best.as_ref().is_none_or(|(_, b)| elbo > b.final_elbo()) {
            best = Some((state, report));
        }
    }
    let (mut state, mut report) = best.expect("n_restarts validated to be positive");
    report.restart_elbos = elbos;
    if cfg.max_sweeps > 0 {
        let order = factor_order(&report.variance_explained);
        permute_factors(&mut state, &order);
        normalize_signs(&mut state);
        report.variance_explained = variance_explained(&state, dataset);
        report.factor_order = order;
    }
    Ok((state, report))
}

fn view_names(dataset: &Dataset) -> Vec<String> {
    dataset
        .simple_views
        .iter()
        .map(|v| v.name.clone())
        .chain(dataset.structured_views.iter().map(|v| v.name.clone()))
        .collect()
}

fn fraction_explained(target: &DMatrix<f64>, z: &DMatrix<f64>, w: &DMatrix<f64>, k: usize) -> f64 {
    let total: f64 = target.iter().map(|x| x * x).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut resid = 0.0;
    for j in 0..target.ncols() {
        for n in 0..target.nrows() {
            let r = target[(n, j)] - z[(n, k)] * w[(j, k)];
            resid += r * r;
        }
    }
    (1.0 - resid / total).clamp(0.0, 1.0)
}

/// Fraction of each view explained by each factor alone,
/// `1 - |Y - z_k w_k'|^2 / |Y|^2` clamped to `[0, 1]`. Structured views use
/// the link means in place of `Y`. Indexed `[view][factor]`.
pub fn variance_explained(state: &VariationalState, dataset: &Dataset) -> Vec<Vec<f64>> {
    let k_count = state.n_factors();
    let z = &state.z.mean;
    let mut out = Vec::new();
    for (view, vs) in dataset.simple_views.iter().zip(&state.simple) {
        let w = vs.mean_loadings();
        out.push((0..k_count).map(|k| fraction_explained(&view.data, z, &w, k)).collect());
    }
    for vs in &state.structured {
        out.push((0..k_count).map(|k| fraction_explained(&vs.mu_link_mean, z, &vs.wbar_mean, k)).collect());
    }
    out
}

/// Factors sorted by descending total variance explained, ties by index.
fn factor_order(ve: &[Vec<f64>]) -> Vec<usize> {
    let k_count = ve.first().map_or(0, Vec::len);
    let totals: Vec<f64> = (0..k_count).map(|k| ve.iter().map(|v| v[k]).sum()).collect();
    let mut order: Vec<usize> = (0..k_count).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
    order
}

fn permute_cols(m: &mut DMatrix<f64>, order: &[usize]) {
    let src = m.clone();
    for (k, &j) in order.iter().enumerate() {
        m.set_column(k, &src.column(j));
    }
}

fn permute_vec<T: Clone>(v: &mut [T], order: &[usize]) {
    let src = v.to_vec();
    for (k, &j) in order.iter().enumerate() {
        v[k] = src[j].clone();
    }
}

/// Re-indexes every factor-indexed quantity so that new factor `k` is old
/// factor `order[k]`.
pub fn permute_factors(state: &mut VariationalState, order: &[usize]) {
    permute_cols(&mut state.z.mean, order);
    permute_cols(&mut state.z.var, order);
    for v in &mut state.simple {
        permute_cols(&mut v.gamma, order);
        permute_cols(&mut v.slab_mean, order);
        permute_cols(&mut v.slab_var, order);
        permute_vec(v.spike_var.as_mut_slice(), order);
        permute_vec(&mut v.alpha, order);
        permute_vec(&mut v.theta, order);
    }
    for v in &mut state.structured {
        permute_cols(&mut v.wbar_mean, order);
        permute_cols(&mut v.wbar_var, order);
        permute_vec(&mut v.alphabar, order);
    }
}

/// Flips each factor so that its largest-magnitude mean loading across all
/// views is positive. Leaves the ELBO unchanged.
pub fn normalize_signs(state: &mut VariationalState) {
    for k in 0..state.n_factors() {
        let mut best = 0.0f64;
        for v in &state.simple {
            for d in 0..v.n_features() {
                let w = v.mean_w(d, k);
                if w.abs() > best.abs() {
                    best = w;
                }
            }
        }
        for v in &state.structured {
            for l in 0..v.n_topics() {
                let w = v.wbar_mean[(l, k)];
                if w.abs() > best.abs() {
                    best = w;
                }
            }
        }
        if best < 0.0 {
            state.z.mean.column_mut(k).neg_mut();
            for v in &mut state.simple {
                v.slab_mean.column_mut(k).neg_mut();
            }
            for v in &mut state.structured {
                v.wbar_mean.column_mut(k).neg_mut();
            }
        }
    }
}
