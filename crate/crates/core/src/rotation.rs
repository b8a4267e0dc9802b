//! Supervised rotation of fitted factors towards known sample features.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::VariationalState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    /// Encoded as 0/1.
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub values: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub features: Vec<Feature>,
}

impl FeatureSet {
    /// Checks that binary features hold both 0 and 1 (and nothing else),
    /// numeric features are finite with nonzero variance, and all lengths agree.
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let n = features.first().map_or(0, |f| f.values.len());
        for f in &features {
            if f.values.len() != n {
                return Err(Error::Shape(format!("feature {} has {} values, expected {n}", f.name, f.values.len())));
            }
            match f.kind {
                FeatureKind::Binary => {
                    if f.values.iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(Error::Shape(format!("binary feature {} must be coded 0/1", f.name)));
                    }
                    let ones = f.values.iter().filter(|&&v| v == 1.0).count();
                    if ones == 0 || ones == n {
                        return Err(Error::Shape(format!("binary feature {} needs both classes", f.name)));
                    }
                }
                FeatureKind::Numeric => {
                    if f.values.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Shape(format!("numeric feature {} has non-finite values", f.name)));
                    }
                    if centered(f.values.as_slice()).iter().all(|&v| v == 0.0) {
                        return Err(Error::Shape(format!("numeric feature {} has zero variance", f.name)));
                    }
                }
            }
        }
        Ok(Self { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Pearson correlation; `None` when either argument has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (cx, cy) = (centered(x), centered(y));
    let sxy: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum();
    let sxx: f64 = cx.iter().map(|a| a * a).sum();
    let syy: f64 = cy.iter().map(|b| b * b).sum();
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Two-sample t statistic implied by a point-biserial correlation `r` over `n` samples.
pub fn point_biserial_t(r: f64, n: usize) -> f64 {
    r * ((n as f64 - 2.0) / (1.0 - r * r)).sqrt()
}

/// `H[k, p]` = correlation of factor `k` with feature `p` (point-biserial
/// for binary features), zero-padded to K x K.
pub fn cross_correlation(factors: &DMatrix<f64>, features: &FeatureSet) -> Result<DMatrix<f64>> {
    let (n, k_count) = factors.shape();
    if features.len() > k_count {
        return Err(Error::Shape(format!("{} features exceed {k_count} factors", features.len())));
    }
    if n < 3 {
        return Err(Error::Shape(format!("need at least 3 samples, got {n}")));
    }
    let mut h = DMatrix::zeros(k_count, k_count);
    for f in features.features.iter() {
        if f.values.len() != n {
            return Err(Error::Shape(format!("feature {} has {} values, expected {n}", f.name, f.values.len())));
        }
    }
    for k in 0..k_count {
        let col: Vec<f64> = factors.column(k).iter().copied().collect();
        for (p, f) in features.features.iter().enumerate() {
            match pearson(&col, f.values.as_slice()) {
                Some(r) => h[(k, p)] = r,
                None => {
                    warn!("factor {k} has zero variance; its correlations are set to 0");
                    break;
                }
            }
        }
    }
    Ok(h)
}

/// `R = U V'` from `H = U S V'`. Reflections are allowed.
pub fn kabsch_rotation(h: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = h.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    u * v_t
}

/// Largest entry of `|R R' - I|`.
pub fn orthogonality_error(r: &DMatrix<f64>) -> f64 {
    if !r.is_square() {
        return f64::INFINITY;
    }
    let gram = r * r.transpose();
    let id = DMatrix::<f64>::identity(r.nrows(), r.ncols());
    (gram - id).amax()
}

fn check_rotation(r: &DMatrix<f64>, k_count: usize) -> Result<()> {
    if r.shape() != (k_count, k_count) {
        return Err(Error::Shape(format!("rotation is {:?}, expected {k_count}x{k_count}", r.shape())));
    }
    let deviation = orthogonality_error(r);
    if deviation > 1e-8 || deviation.is_nan() {
        return Err(Error::NotOrthogonal { deviation });
    }
    Ok(())
}

/// Point summaries of a fit in (possibly rotated) factor coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedSummary {
    pub factors: DMatrix<f64>,
    /// Mean loadings `E[w]` of each simple view.
    pub loadings: Vec<DMatrix<f64>>,
    /// Mean link loadings `E[wbar]` of each structured view.
    pub link_loadings: Vec<DMatrix<f64>>,
}

impl RotatedSummary {
    pub fn from_state(state: &VariationalState) -> Self {
        Self {
            factors: state.z.mean.clone(),
            loadings: state.simple.iter().map(|v| v.mean_loadings()).collect(),
            link_loadings: state.structured.iter().map(|v| v.wbar_mean.clone()).collect(),
        }
    }

    /// Right-multiplies factors and every loading matrix by `r`.
    pub fn rotated(&self, r: &DMatrix<f64>) -> Result<Self> {
        check_rotation(r, self.factors.ncols())?;
        Ok(Self {
            factors: &self.factors * r,
            loadings: self.loadings.iter().map(|w| w * r).collect(),
            link_loadings: self.link_loadings.iter().map(|w| w * r).collect(),
        })
    }

    /// `Z W'` for each simple view.
    pub fn reconstructions(&self) -> Vec<DMatrix<f64>> {
        self.loadings.iter().map(|w| &self.factors * w.transpose()).collect()
    }
}

/// Rotated posterior means of a fitted state. Variances and inclusion
/// probabilities are not rotated; the state itself is left untouched.
pub fn apply_rotation(state: &VariationalState, r: &DMatrix<f64>) -> Result<RotatedSummary> {
    RotatedSummary::from_state(state).rotated(r)
}

/// Cross-correlation followed by the orthogonal alignment.
pub fn supervised_rotation(factors: &DMatrix<f64>, features: &FeatureSet) -> Result<DMatrix<f64>> {
    Ok(kabsch_rotation(&cross_correlation(factors, features)?))
}
