//! Synthetic data drawn from the generative model, with the benchmark
//! scenarios used to study recovery.
//!
//! Factor-wise sparsity uses a fixed activity mask for the baseline layout
//! (K = 5 factors; views ordered simple 1, simple 2, structured):
//!
//! ```text
//!              k0 k1 k2 k3 k4
//! simple 1      1  1  1  0  1
//! simple 2      1  1  0  1  0
//! structured    0  1  1  1  1
//! ```
//!
//! Every factor is active in at least one view, each view switches off a
//! different subset, and the structured view shares two or more active
//! factors with each simple view. Other layouts use all factors in all views.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dataset, Sentence, SimpleView, StructuredView};

/// Activity mask for 5 factors over [simple 1, simple 2, structured].
pub const BASELINE_MASK: [[bool; 5]; 3] = [
    [true, true, true, false, true],
    [true, true, false, true, false],
    [false, true, true, true, true],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_samples: usize,
    pub n_simple_views: usize,
    pub n_structured_views: usize,
    pub n_features: usize,
    pub n_topics: usize,
    pub n_factors: usize,
    pub vocab_size: usize,
    pub sentences_per_sample: usize,
    pub words_per_sentence: usize,
    /// Multiplier of the link variable.
    pub lambda_link: f64,
    /// Symmetric Dirichlet concentration of the topics.
    pub dirichlet_alpha: f64,
    /// Multiplier of the population mean; 0 gives a zero mean.
    pub lambda_mu0: f64,
    /// Multiplier of the population covariance.
    pub lambda_sigma0: f64,
    /// Fraction of active simple-view loadings set to zero.
    pub feature_sparsity: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_samples: 250,
            n_simple_views: 2,
            n_structured_views: 1,
            n_features: 10,
            n_topics: 10,
            n_factors: 5,
            vocab_size: 100,
            sentences_per_sample: 100,
            words_per_sentence: 10,
            lambda_link: 1.0,
            dirichlet_alpha: 1.0,
            lambda_mu0: 0.0,
            lambda_sigma0: 1.0,
            feature_sparsity: 0.1,
        }
    }
}

impl ScenarioSpec {
    pub fn baseline() -> Self {
        Self::default()
    }

    pub fn check(&self) -> Result<()> {
        let sizes = [
            ("n_samples", self.n_samples),
            ("n_features", self.n_features),
            ("n_topics", self.n_topics),
            ("n_factors", self.n_factors),
            ("vocab_size", self.vocab_size),
            ("sentences_per_sample", self.sentences_per_sample),
            ("words_per_sentence", self.words_per_sentence),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Shape(format!("{name} must be at least 1")));
            }
        }
        if self.n_simple_views + self.n_structured_views == 0 {
            return Err(Error::Shape("at least one view is required".into()));
        }
        if !(0.0..=1.0).contains(&self.feature_sparsity) {
            return Err(Error::Shape("feature_sparsity must lie in [0, 1]".into()));
        }
        if !(self.dirichlet_alpha > 0.0) || !(self.lambda_sigma0 > 0.0) {
            return Err(Error::Shape("dirichlet_alpha and lambda_sigma0 must be positive".into()));
        }
        if !self.lambda_link.is_finite() || !self.lambda_mu0.is_finite() {
            return Err(Error::Shape("lambda_link and lambda_mu0 must be finite".into()));
        }
        Ok(())
    }

    /// Activity mask, one row per view (simple views first).
    pub fn mask(&self) -> Vec<Vec<bool>> {
        if self.n_factors == 5 && self.n_simple_views == 2 && self.n_structured_views == 1 {
            BASELINE_MASK.iter().map(|r| r.to_vec()).collect()
        } else {
            vec![vec![true; self.n_factors]; self.n_simple_views + self.n_structured_views]
        }
    }
}

/// Benchmark scenario `id` (1 to 6) at `level`; each changes one knob of the baseline.
pub fn scenario(id: u32, level: usize) -> Result<ScenarioSpec> {
    let unknown = || Error::UnknownScenario { id, level };
    let pick = |values: &[f64]| values.get(level).copied().ok_or_else(unknown);
    let mut spec = ScenarioSpec::baseline();
    match id {
        1 => spec.lambda_link = pick(&[0.0, 0.5, 1.5, 2.0])?,
        2 => spec.dirichlet_alpha = pick(&[5.0, 10.0])?,
        3 => spec.n_topics = pick(&[5.0, 15.0])? as usize,
        4 => spec.lambda_mu0 = pick(&[0.25, 0.5, 0.75, 1.0])?,
        5 => spec.lambda_sigma0 = pick(&[0.2, 0.6])?,
        6 => {
            spec.n_features = 500;
            spec.feature_sparsity = pick(&[0.25, 0.4, 0.55, 0.7])?;
        }
        _ => return Err(unknown()),
    }
    Ok(spec)
}

/// Population covariance: 5 on the diagonal, 2.5 on the first off-diagonals.
pub fn baseline_sigma0(l_count: usize) -> DMatrix<f64> {
    DMatrix::from_fn(l_count, l_count, |i, j| match i.abs_diff(j) {
        0 => 5.0,
        1 => 2.5,
        _ => 0.0,
    })
}

/// Unscaled population mean: `L` equally spaced values in [1, 3], logged,
/// divided by their sum, then centered.
pub fn base_mu0(l_count: usize) -> DVector<f64> {
    let raw: Vec<f64> = (0..l_count)
        .map(|l| {
            let x = if l_count == 1 { 1.0 } else { 1.0 + 2.0 * l as f64 / (l_count - 1) as f64 };
            x.ln()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let scaled: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let mean = scaled.iter().sum::<f64>() / l_count as f64;
    DVector::from_iterator(l_count, scaled.iter().map(|v| v - mean))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredTruth {
    pub wbar: DMatrix<f64>,
    /// Link variable, N x L.
    pub mu_link: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    /// Topic of each sentence, per sample.
    pub xi: Vec<Vec<usize>>,
    /// Topic-word probabilities, L x G.
    pub beta: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub z: DMatrix<f64>,
    pub loadings: Vec<DMatrix<f64>>,
    pub structured: Vec<StructuredTruth>,
    pub mask: Vec<Vec<bool>>,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: f64, len: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    loop {
        let draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

fn masked_loadings(rng: &mut ChaCha8Rng, rows: usize, active: &[bool], sparsity: f64) -> DMatrix<f64> {
    let mut w = normal_matrix(rng, rows, active.len());
    for (k, &on) in active.iter().enumerate() {
        if !on {
            w.column_mut(k).fill(0.0);
        }
    }
    let active_entries: Vec<(usize, usize)> = (0..active.len())
        .filter(|&k| active[k])
        .flat_map(|k| (0..rows).map(move |d| (d, k)))
        .collect();
    let n_zero = (sparsity * active_entries.len() as f64).round() as usize;
    for i in sample(rng, active_entries.len(), n_zero.min(active_entries.len())) {
        w[active_entries[i]] = 0.0;
    }
    w
}

/// Draws a dataset and its generating parameters. Deterministic given `seed`.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> (Dataset, GroundTruth) {
    spec.check().expect("invalid scenario spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k_count, l_count) = (spec.n_samples, spec.n_factors, spec.n_topics);
    let mask = spec.mask();

    let z = normal_matrix(&mut rng, n, k_count);

    let mut simple_views = Vec::with_capacity(spec.n_simple_views);
    let mut loadings = Vec::with_capacity(spec.n_simple_views);
    for m in 0..spec.n_simple_views {
        let w = masked_loadings(&mut rng, spec.n_features, &mask[m], spec.feature_sparsity);
        let y = &z * w.transpose() + normal_matrix(&mut rng, n, spec.n_features);
        simple_views.push(SimpleView::new(format!("simple_{}", m + 1), y));
        loadings.push(w);
    }

    let sigma0 = baseline_sigma0(l_count);
    let mu0 = base_mu0(l_count) * spec.lambda_mu0;
    let eta_chol = (&sigma0 * spec.lambda_sigma0)
        .cholesky()
        .expect("scaled population covariance is positive definite")
        .l();

    let mut structured_views = Vec::with_capacity(spec.n_structured_views);
    let mut structured = Vec::with_capacity(spec.n_structured_views);
    for s in 0..spec.n_structured_views {
        let wbar = masked_loadings(&mut rng, l_count, &mask[spec.n_simple_views + s], 0.0);
        let mu_link = (&z * wbar.transpose() + normal_matrix(&mut rng, n, l_count)) * spec.lambda_link;

        let beta_rows: Vec<Vec<f64>> = (0..l_count)
            .map(|_| dirichlet(&mut rng, spec.dirichlet_alpha, spec.vocab_size))
            .collect();
        let word_dists: Vec<WeightedIndex<f64>> = beta_rows
            .iter()
            .map(|row| WeightedIndex::new(row).expect("topic has positive mass"))
            .collect();

        let mut eta = DMatrix::zeros(n, l_count);
        let mut xi = Vec::with_capacity(n);
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let eps = DVector::from_fn(l_count, |_, _| rng.sample::<f64, _>(StandardNormal));
            let draw = &eta_chol * eps;
            let mut props = vec![0.0; l_count];
            for l in 0..l_count {
                eta[(i, l)] = mu_link[(i, l)] + mu0[l] + draw[l];
                props[l] = eta[(i, l)];
            }
            crate::special::softmax_in_place(&mut props);
            let topic_dist = WeightedIndex::new(&props).expect("softmax has positive mass");
            let mut topics = Vec::with_capacity(spec.sentences_per_sample);
            let mut sentences = Vec::with_capacity(spec.sentences_per_sample);
            for _ in 0..spec.sentences_per_sample {
                let topic = topic_dist.sample(&mut rng);
                let tokens: Vec<u32> = (0..spec.words_per_sentence)
                    .map(|_| word_dists[topic].sample(&mut rng) as u32)
                    .collect();
                topics.push(topic);
                sentences.push(Sentence::from_tokens(&tokens));
            }
            xi.push(topics);
            samples.push(sentences);
        }

        let name = if spec.n_structured_views == 1 { "structured".to_string() } else { format!("structured_{}", s + 1) };
        structured_views.push(StructuredView::new(name, spec.vocab_size, samples));
        structured.push(StructuredTruth {
            wbar,
            mu_link,
            eta,
            xi,
            beta: DMatrix::from_fn(l_count, spec.vocab_size, |l, g| beta_rows[l][g]),
            mu0: mu0.clone(),
            sigma0: &sigma0 * spec.lambda_sigma0,
        });
    }

    let dataset = Dataset::new(simple_views, structured_views);
    (dataset, GroundTruth { z, loadings, structured, mask })
}
