//! Joint Bayesian factor analysis and sentence-level correlated topic
//! modelling, fitted by mean-field coordinate-ascent variational inference.
//!
//! Simple views (feature matrices) are explained by shared latent factors
//! with spike-and-slab loadings. Structured views (samples made of sentences
//! of word counts) follow a correlated topic model whose per-sample topic
//! logits are shifted by a link variable that is linear in the same factors.
//!
//! The main entry point is [`fit`]:
//!
//! ```no_run
//! use factm_core::{fit, scenario, generate, FitConfig, Hyperparams};
//!
//! let (data, _truth) = generate(&scenario(1, 2).unwrap(), 7);
//! let hp = Hyperparams::new(5, vec![10]);
//! let (state, report) = fit(&data, &hp, &FitConfig::default()).unwrap();
//! println!("{} sweeps, final ELBO {:?}", report.sweeps_used, report.elbo_trace.last());
//! # let _ = state;
//! ```

pub mod codec;
pub mod ctm;
pub mod driver;
pub mod elbo;
pub mod error;
pub mod evaluation;
pub mod fa;
pub mod init;
pub mod lbfgs;
pub mod linalg;
pub mod rotation;
pub mod simulation;
pub mod special;
pub mod state;
pub mod types;

pub use driver::{fit, fit_single, run_phase, variance_explained, FitReport, SweepObserver};
pub use elbo::compute_elbo;
pub use error::{Error, Result};
pub use evaluation::{frobenius_relative, hungarian_match, match_factors, match_topics, FactorMatch, TopicMatch};
pub use init::{initialize, initialize_with, FactorInit};
pub use rotation::{apply_rotation, cross_correlation, kabsch_rotation, Feature, FeatureKind, FeatureSet, RotatedSummary};
pub use simulation::{generate, scenario, GroundTruth, ScenarioSpec};
pub use state::VariationalState;
pub use types::{validate, Dataset, FitConfig, Hyperparams, Phase, Sentence, SimpleView, StructuredView, Violation};
