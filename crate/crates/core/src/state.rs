//! Variational posterior parameters.

use nalgebra::{DMatrix, DVector};

use crate::special::{digamma, ln_beta, ln_gamma};

/// Gamma posterior in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn mean_log(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }

    pub fn entropy(&self) -> f64 {
        self.shape - self.rate.ln() + ln_gamma(self.shape) + (1.0 - self.shape) * digamma(self.shape)
    }

    /// `E_q[log Gamma(x | a0, b0)]` under this posterior.
    pub fn expected_log_prior(&self, a0: f64, b0: f64) -> f64 {
        a0 * b0.ln() - ln_gamma(a0) + (a0 - 1.0) * self.mean_log() - b0 * self.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// `E[ln x]`
    pub fn mean_log(&self) -> f64 {
        digamma(self.a) - digamma(self.a + self.b)
    }

    /// `E[ln(1 - x)]`
    pub fn mean_log1m(&self) -> f64 {
        digamma(self.b) - digamma(self.a + self.b)
    }

    pub fn entropy(&self) -> f64 {
        let (a, b) = (self.a, self.b);
        ln_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b)
            + (a + b - 2.0) * digamma(a + b)
    }

    pub fn expected_log_prior(&self, a0: f64, b0: f64) -> f64 {
        (a0 - 1.0) * self.mean_log() + (b0 - 1.0) * self.mean_log1m() - ln_beta(a0, b0)
    }
}

/// Independent Normal posteriors of the latent factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    /// N x K means.
    pub mean: DMatrix<f64>,
    /// N x K variances.
    pub var: DMatrix<f64>,
}

impl FactorState {
    pub fn second_moment(&self, n: usize, k: usize) -> f64 {
        let m = self.mean[(n, k)];
        m * m + self.var[(n, k)]
    }

    /// Per-factor sums over samples of `E[z^2]`.
    pub fn column_second_moments(&self) -> Vec<f64> {
        (0..self.mean.ncols())
            .map(|k| (0..self.mean.nrows()).map(|n| self.second_moment(n, k)).sum())
            .collect()
    }
}

/// Posterior for one simple view: spike-and-slab loadings plus their
/// conjugate precision, inclusion and noise variables.
///
/// The loading posterior is stored conditionally: `gamma` is the inclusion
/// probability, `slab_mean`/`slab_var` the Normal given inclusion, and
/// `spike_var[k]` the variance of the Normal component when the weight is
/// switched off (its mean is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleViewState {
    pub gamma: DMatrix<f64>,
    pub slab_mean: DMatrix<f64>,
    pub slab_var: DMatrix<f64>,
    pub spike_var: DVector<f64>,
    pub alpha: Vec<GammaParams>,
    pub theta: Vec<BetaParams>,
    pub tau: Vec<GammaParams>,
}

impl SimpleViewState {
    #[inline]
    pub fn mean_w(&self, d: usize, k: usize) -> f64 {
        self.gamma[(d, k)] * self.slab_mean[(d, k)]
    }

    #[inline]
    pub fn second_moment_w(&self, d: usize, k: usize) -> f64 {
        let m = self.slab_mean[(d, k)];
        self.gamma[(d, k)] * (m * m + self.slab_var[(d, k)])
    }

    /// `E[w~^2]` of the Normal component, mixing both indicator states.
    #[inline]
    pub fn second_moment_slab(&self, d: usize, k: usize) -> f64 {
        let g = self.gamma[(d, k)];
        let m = self.slab_mean[(d, k)];
        g * (m * m + self.slab_var[(d, k)]) + (1.0 - g) * self.spike_var[k]
    }

    /// D x K matrix of `E[w]`.
    pub fn mean_loadings(&self) -> DMatrix<f64> {
        self.gamma.component_mul(&self.slab_mean)
    }

    pub fn second_moment_loadings(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.gamma.nrows(), self.gamma.ncols(), |d, k| {
            self.second_moment_w(d, k)
        })
    }

    pub fn n_features(&self) -> usize {
        self.gamma.nrows()
    }
}

/// Posterior for one structured view.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredViewState {
    /// When false, the loadings `wbar` are held at exactly zero and excluded
    /// from the objective; the view then reduces to a correlated topic model.
    pub link_enabled: bool,
    /// L x K
    pub wbar_mean: DMatrix<f64>,
    pub wbar_var: DMatrix<f64>,
    pub alphabar: Vec<GammaParams>,
    /// N x L means of the link variable.
    pub mu_link_mean: DMatrix<f64>,
    /// L x L covariance shared by every sample.
    pub mu_link_cov: DMatrix<f64>,
    /// N x L
    pub eta_mean: DMatrix<f64>,
    pub eta_var: DMatrix<f64>,
    pub zeta: DVector<f64>,
    /// L x (total sentences); column `i` is the topic distribution of sentence `i`.
    pub phi: DMatrix<f64>,
    /// Sample `n` owns the columns `offsets[n]..offsets[n + 1]` of `phi`.
    pub sentence_offsets: Vec<usize>,
    /// L x G Dirichlet parameters, one row per topic.
    pub beta: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

impl StructuredViewState {
    pub fn n_topics(&self) -> usize {
        self.mu0.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.eta_mean.nrows()
    }

    #[inline]
    pub fn second_moment_wbar(&self, l: usize, k: usize) -> f64 {
        let m = self.wbar_mean[(l, k)];
        m * m + self.wbar_var[(l, k)]
    }

    /// L x G matrix of `E[log beta]`.
    pub fn expected_log_beta(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.beta.nrows(), self.beta.ncols());
        for l in 0..self.beta.nrows() {
            let row: Vec<f64> = self.beta.row(l).iter().copied().collect();
            let e = crate::ctm::expected_log_beta(&row);
            for (g, v) in e.into_iter().enumerate() {
                out[(l, g)] = v;
            }
        }
        out
    }

    /// Topic-word distributions at the Dirichlet means.
    pub fn topic_means(&self) -> DMatrix<f64> {
        let mut out = self.beta.clone();
        for mut row in out.row_iter_mut() {
            let total: f64 = row.iter().sum();
            row /= total;
        }
        out
    }

    /// Sum of `phi` over the sentences of sample `n`.
    pub fn phi_sum(&self, n: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(self.n_topics());
        for i in self.sentence_offsets[n]..self.sentence_offsets[n + 1] {
            acc += self.phi.column(i);
        }
        acc
    }

    /// Most probable topic for every sentence, in sentence order.
    pub fn hard_assignments(&self) -> Vec<usize> {
        self.phi
            .column_iter()
            .map(|c| c.argmax().0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub z: FactorState,
    pub simple: Vec<SimpleViewState>,
    pub structured: Vec<StructuredViewState>,
}

impl VariationalState {
    pub fn n_factors(&self) -> usize {
        self.z.mean.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.z.mean.nrows()
    }

    /// Describes every broken positivity / simplex / symmetry invariant.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = |name: &str, x: f64, out: &mut Vec<String>| {
            if !(x > 0.0) || !x.is_finite() {
                out.push(format!("{name} must be positive and finite, got {x}"));
            }
        };
        for &v in self.z.var.iter() {
            positive("factor variance", v, &mut out);
        }
        for (m, v) in self.simple.iter().enumerate() {
            for &x in v.slab_var.iter().chain(v.spike_var.iter()) {
                positive(&format!("view {m} loading variance"), x, &mut out);
            }
            for &g in v.gamma.iter() {
                if !(0.0..=1.0).contains(&g) {
                    out.push(format!("view {m} inclusion probability {g} outside [0, 1]"));
                }
            }
            for p in v.alpha.iter().chain(v.tau.iter()) {
                positive(&format!("view {m} gamma shape"), p.shape, &mut out);
                positive(&format!("view {m} gamma rate"), p.rate, &mut out);
            }
            for p in &v.theta {
                positive(&format!("view {m} beta a"), p.a, &mut out);
                positive(&format!("view {m} beta b"), p.b, &mut out);
            }
        }
        for (s, v) in self.structured.iter().enumerate() {
            if v.link_enabled {
                for &x in v.wbar_var.iter() {
                    positive(&format!("structured view {s} loading variance"), x, &mut out);
                }
            }
            for &x in v.eta_var.iter().chain(v.zeta.iter()).chain(v.beta.iter()) {
                positive(&format!("structured view {s} parameter"), x, &mut out);
            }
            for (i, col) in v.phi.column_iter().enumerate() {
                let total: f64 = col.iter().sum();
                if (total - 1.0).abs() > 1e-9 || col.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    out.push(format!("structured view {s} sentence {i} not on the simplex"));
                }
            }
            for (name, m) in [("sigma0", &v.sigma0), ("mu_link_cov", &v.mu_link_cov)] {
                if m != &m.transpose() {
                    out.push(format!("structured view {s} {name} not symmetric"));
                }
                if m.clone().cholesky().is_none() {
                    out.push(format!("structured view {s} {name} not positive definite"));
                }
            }
        }
        out
    }
}
