//! Data model, hyperparameters and fitting configuration.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A dense view: one row per sample, one column per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleView {
    pub name: String,
    pub data: DMatrix<f64>,
}

impl SimpleView {
    pub fn new(name: impl Into<String>, data: DMatrix<f64>) -> Self {
        Self { name: name.into(), data }
    }

    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }
}

/// A data point of a structured view: sparse non-negative weights over the vocabulary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sentence {
    pub entries: Vec<(u32, f64)>,
}

impl Sentence {
    pub fn new(entries: Vec<(u32, f64)>) -> Self {
        Self { entries }
    }

    /// Builds a sentence from a list of token occurrences (repeats are summed).
    pub fn from_tokens(tokens: &[u32]) -> Self {
        let mut entries: Vec<(u32, f64)> = Vec::new();
        for &tok in tokens {
            match entries.iter_mut().find(|(g, _)| *g == tok) {
                Some(e) => e.1 += 1.0,
                None => entries.push((tok, 1.0)),
            }
        }
        entries.sort_by_key(|e| e.0);
        Self { entries }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

/// A structured view: for each sample, a bag of sentences over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredView {
    pub name: String,
    pub vocab_size: usize,
    pub samples: Vec<Vec<Sentence>>,
}

impl StructuredView {
    pub fn new(name: impl Into<String>, vocab_size: usize, samples: Vec<Vec<Sentence>>) -> Self {
        Self {
            name: name.into(),
            vocab_size,
            samples,
        }
    }

    /// Prefix sums of sentence counts; sample `n` owns rows `offsets[n]..offsets[n + 1]`.
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.samples.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for s in &self.samples {
            acc += s.len();
            offsets.push(acc);
        }
        offsets
    }

    pub fn n_sentences(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_samples: usize,
    pub simple_views: Vec<SimpleView>,
    pub structured_views: Vec<StructuredView>,
}

impl Dataset {
    /// Infers the sample count from the first view present.
    pub fn new(simple_views: Vec<SimpleView>, structured_views: Vec<StructuredView>) -> Self {
        let n_samples = simple_views
            .first()
            .map(|v| v.data.nrows())
            .or_else(|| structured_views.first().map(|v| v.samples.len()))
            .unwrap_or(0);
        Self {
            n_samples,
            simple_views,
            structured_views,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub n_factors: usize,
    /// Topic count for each structured view.
    pub n_topics: Vec<usize>,
    /// Precision of the link variable around its factor prediction.
    pub t: f64,
    pub a0_alpha: f64,
    pub b0_alpha: f64,
    pub a0_theta: f64,
    pub b0_theta: f64,
    pub a0_tau: f64,
    pub b0_tau: f64,
    pub abar0: f64,
    pub bbar0: f64,
    pub alpha0_beta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_factors: 5,
            n_topics: Vec::new(),
            t: 1.0,
            a0_alpha: 1e-3,
            b0_alpha: 1e-3,
            a0_theta: 1.0,
            b0_theta: 1.0,
            a0_tau: 1e-3,
            b0_tau: 1e-3,
            abar0: 1e-3,
            bbar0: 1e-3,
            alpha0_beta: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn new(n_factors: usize, n_topics: Vec<usize>) -> Self {
        Self {
            n_factors,
            n_topics,
            ..Self::default()
        }
    }

    fn positive_scalars(&self) -> [(&'static str, f64); 11] {
        [
            ("t", self.t),
            ("a0_alpha", self.a0_alpha),
            ("b0_alpha", self.b0_alpha),
            ("a0_theta", self.a0_theta),
            ("b0_theta", self.b0_theta),
            ("a0_tau", self.a0_tau),
            ("b0_tau", self.b0_tau),
            ("abar0", self.abar0),
            ("bbar0", self.bbar0),
            ("alpha0_beta", self.alpha0_beta),
            ("n_factors", self.n_factors as f64),
        ]
    }
}

/// One block of the coordinate-ascent sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Phi,
    Eta,
    MuLink,
    Beta,
    Population,
    W,
    Conjugates,
    Z,
    Wbar,
}

impl Phase {
    pub const DEFAULT_SCHEDULE: [Phase; 9] = [
        Phase::Phi,
        Phase::Eta,
        Phase::MuLink,
        Phase::Beta,
        Phase::Population,
        Phase::W,
        Phase::Conjugates,
        Phase::Z,
        Phase::Wbar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Phi => "phi",
            Phase::Eta => "eta",
            Phase::MuLink => "mu_link",
            Phase::Beta => "beta",
            Phase::Population => "population",
            Phase::W => "w",
            Phase::Conjugates => "conjugates",
            Phase::Z => "z",
            Phase::Wbar => "wbar",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_sweeps: usize,
    pub elbo_rel_tol: f64,
    pub inner_opt_max_iters: usize,
    pub inner_opt_grad_tol: f64,
    pub seed: u64,
    pub n_restarts: usize,
    pub update_schedule: Vec<Phase>,
    /// Scale of the positive noise added to the initial topic Dirichlets.
    pub init_topic_noise: f64,
    /// When false the structured views are fitted without the factor link
    /// (loadings of the link fixed at zero).
    pub link_enabled: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            elbo_rel_tol: 1e-9,
            inner_opt_max_iters: 25,
            inner_opt_grad_tol: 1e-6,
            seed: 0,
            n_restarts: 1,
            update_schedule: Phase::DEFAULT_SCHEDULE.to_vec(),
            init_topic_noise: 0.5,
            link_enabled: true,
        }
    }
}

impl FitConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.elbo_rel_tol > 0.0) {
            out.push(Violation::NonPositiveSetting { name: "elbo_rel_tol" });
        }
        if !(self.inner_opt_grad_tol > 0.0) {
            out.push(Violation::NonPositiveSetting { name: "inner_opt_grad_tol" });
        }
        if self.n_restarts == 0 {
            out.push(Violation::NonPositiveSetting { name: "n_restarts" });
        }
        if !(self.init_topic_noise >= 0.0) {
            out.push(Violation::NonPositiveSetting { name: "init_topic_noise" });
        }
        out
    }
}

/// A single broken invariant of a dataset or hyperparameter set.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoSamples,
    SampleCountMismatch { view: String, expected: usize, found: usize },
    NonFiniteValue { view: String, row: usize, col: usize },
    EmptySentence { view: String, sample: usize, sentence: usize },
    InvalidCount { view: String, sample: usize, sentence: usize, token: u32 },
    TokenOutOfRange { view: String, sample: usize, sentence: usize, token: u32, vocab_size: usize },
    NoSentences { view: String, sample: usize },
    EmptyVocabulary { view: String },
    TopicCountMismatch { expected: usize, found: usize },
    ZeroTopics { view: usize },
    NonPositiveHyperparameter { name: &'static str },
    NonPositiveSetting { name: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoSamples => write!(f, "dataset has no samples"),
            SampleCountMismatch { view, expected, found } => write!(
                f,
                "sample count mismatch in view '{view}': expected {expected}, found {found}"
            ),
            NonFiniteValue { view, row, col } => {
                write!(f, "non-finite or missing value in view '{view}' at ({row}, {col})")
            }
            EmptySentence { view, sample, sentence } => write!(
                f,
                "sentence with zero total count in view '{view}' (sample {sample}, sentence {sentence})"
            ),
            InvalidCount { view, sample, sentence, token } => write!(
                f,
                "negative or non-finite count for token {token} in view '{view}' (sample {sample}, sentence {sentence})"
            ),
            TokenOutOfRange { view, sample, sentence, token, vocab_size } => write!(
                f,
                "token {token} outside vocabulary of size {vocab_size} in view '{view}' (sample {sample}, sentence {sentence})"
            ),
            NoSentences { view, sample } => {
                write!(f, "sample {sample} has no sentences in view '{view}'")
            }
            EmptyVocabulary { view } => write!(f, "view '{view}' has an empty vocabulary"),
            TopicCountMismatch { expected, found } => write!(
                f,
                "topic counts given for {found} structured views, dataset has {expected}"
            ),
            ZeroTopics { view } => write!(f, "structured view {view} has zero topics"),
            NonPositiveHyperparameter { name } => {
                write!(f, "hyperparameter {name} must be strictly positive")
            }
            NonPositiveSetting { name } => write!(f, "fit setting {name} is out of range"),
        }
    }
}

/// Checks every dataset and hyperparameter invariant; an empty result means valid.
pub fn validate(dataset: &Dataset, hp: &Hyperparams) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = dataset.n_samples;
    if n == 0 {
        out.push(Violation::NoSamples);
    }

    for view in &dataset.simple_views {
        if view.data.nrows() != n {
            out.push(Violation::SampleCountMismatch {
                view: view.name.clone(),
                expected: n,
                found: view.data.nrows(),
            });
        }
        for col in 0..view.data.ncols() {
            for row in 0..view.data.nrows() {
                if !view.data[(row, col)].is_finite() {
                    out.push(Violation::NonFiniteValue {
                        view: view.name.clone(),
                        row,
                        col,
                    });
                }
            }
        }
    }

    for view in &dataset.structured_views {
        if view.samples.len() != n {
            out.push(Violation::SampleCountMismatch {
                view: view.name.clone(),
                expected: n,
                found: view.samples.len(),
            });
        }
        if view.vocab_size == 0 {
            out.push(Violation::EmptyVocabulary { view: view.name.clone() });
        }
        for (sample, sentences) in view.samples.iter().enumerate() {
            if sentences.is_empty() {
                out.push(Violation::NoSentences {
                    view: view.name.clone(),
                    sample,
                });
            }
            for (sentence, s) in sentences.iter().enumerate() {
                let mut total = 0.0;
                for &(token, count) in &s.entries {
                    if (token as usize) >= view.vocab_size {
                        out.push(Violation::TokenOutOfRange {
                            view: view.name.clone(),
                            sample,
                            sentence,
                            token,
                            vocab_size: view.vocab_size,
                        });
                    }
                    if !(count >= 0.0) || !count.is_finite() {
                        out.push(Violation::InvalidCount {
                            view: view.name.clone(),
                            sample,
                            sentence,
                            token,
                        });
                    } else {
                        total += count;
                    }
                }
                if !(total > 0.0) {
                    out.push(Violation::EmptySentence {
                        view: view.name.clone(),
                        sample,
                        sentence,
                    });
                }
            }
        }
    }

    if hp.n_topics.len() != dataset.structured_views.len() {
        out.push(Violation::TopicCountMismatch {
            expected: dataset.structured_views.len(),
            found: hp.n_topics.len(),
        });
    }
    for (view, &l) in hp.n_topics.iter().enumerate() {
        if l == 0 {
            out.push(Violation::ZeroTopics { view });
        }
    }
    for (name, value) in hp.positive_scalars() {
        if !(value > 0.0) || !value.is_finite() {
            out.push(Violation::NonPositiveHyperparameter { name });
        }
    }
    out
}
