//! Treatment propensity `e(x) = P(T = 1 | x)`.
//!
//! Emitted propensities are always clipped to `[ε, 1 − ε]` because the causal
//! estimators divide by both `e` and `1 − e`.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, MatchRecord};
use crate::error::{Error, Result};
use crate::math::sigmoid;

pub const DEFAULT_CLIP_EPSILON: f64 = 0.01;

/// Which features the propensity model conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityFeatures {
    /// Subject features `x` only.
    #[default]
    Subject,
    /// Concatenated `[x, y]`.
    SubjectCandidate,
}

impl PropensityFeatures {
    pub fn extract(self, r: &MatchRecord) -> Vec<f64> {
        match self {
            PropensityFeatures::Subject => r.x.clone(),
            PropensityFeatures::SubjectCandidate => r.joint_features(),
        }
    }

    fn dim(self, ds: &Dataset) -> usize {
        match self {
            PropensityFeatures::Subject => ds.subject_dim(),
            PropensityFeatures::SubjectCandidate => ds.subject_dim() + ds.candidate_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityFit {
    Constant { rate: f64 },
    Logistic { weights: Vec<f64>, bias: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub fit: PropensityFit,
    pub features: PropensityFeatures,
    pub clip_epsilon: f64,
}

impl PropensityModel {
    pub fn constant(rate: f64, clip_epsilon: f64) -> Self {
        PropensityModel {
            fit: PropensityFit::Constant { rate },
            features: PropensityFeatures::Subject,
            clip_epsilon,
        }
    }

    /// Unclipped model output.
    pub fn raw(&self, features: &[f64]) -> Result<f64> {
        match &self.fit {
            PropensityFit::Constant { rate } => Ok(*rate),
            PropensityFit::Logistic { weights, bias } => {
                if features.len() != weights.len() {
                    return Err(Error::Shape {
                        context: "PropensityModel::estimate",
                        expected: weights.len(),
                        got: features.len(),
                    });
                }
                let z = bias
                    + weights
                        .iter()
                        .zip(features)
                        .map(|(w, x)| w * x)
                        .sum::<f64>();
                Ok(sigmoid(z))
            }
        }
    }

    /// Clipped propensity for a feature vector laid out per `self.features`.
    pub fn estimate(&self, features: &[f64]) -> Result<f64> {
        let eps = self.clip_epsilon;
        Ok(self.raw(features)?.clamp(eps, 1.0 - eps))
    }

    pub fn estimate_record(&self, r: &MatchRecord) -> Result<f64> {
        match self.fit {
            PropensityFit::Constant { .. } => self.estimate(&[]),
            PropensityFit::Logistic { .. } => self.estimate(&self.features.extract(r)),
        }
    }

    pub fn estimate_all(&self, ds: &Dataset) -> Result<Vec<f64>> {
        ds.records.iter().map(|r| self.estimate_record(r)).collect()
    }
}

fn check_clip(clip_epsilon: f64) -> Result<()> {
    if !(0.0..0.5).contains(&clip_epsilon) {
        return Err(Error::InvalidArgument(format!(
            "clip epsilon must lie in [0, 0.5), got {clip_epsilon}"
        )));
    }
    Ok(())
}

/// Constant propensity equal to the treated fraction of `train`.
pub fn fit_constant(train: &Dataset, clip_epsilon: f64) -> Result<PropensityModel> {
    check_clip(clip_epsilon)?;
    train.require_both_cohorts()?;
    let rate = train.treated_count() as f64 / train.len() as f64;
    Ok(PropensityModel::constant(rate, clip_epsilon))
}

/// Logistic regression on the cohort indicator by full-batch gradient
/// descent on the mean cross-entropy, starting from zero.
pub fn fit_logistic(
    train: &Dataset,
    features: PropensityFeatures,
    iterations: usize,
    learning_rate: f64,
    clip_epsilon: f64,
) -> Result<PropensityModel> {
    check_clip(clip_epsilon)?;
    train.require_both_cohorts()?;
    let dim = features.dim(train);
    let rows: Vec<(Vec<f64>, f64)> = train
        .records
        .iter()
        .map(|r| (features.extract(r), if r.treatment { 1.0 } else { 0.0 }))
        .collect();
    let n = rows.len() as f64;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut gw = vec![0.0; dim];
    for it in 0..iterations {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (x, t) in &rows {
            let z = b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
            let p = sigmoid(z);
            // -[t ln p + (1-t) ln(1-p)] = softplus(z) - t z
            loss += crate::math::softplus(z) - t * z;
            let d = p - t;
            gb += d;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += d * v;
            }
        }
        if !loss.is_finite() {
            return Err(Error::non_finite(format!(
                "propensity cross-entropy at iteration {it}"
            )));
        }
        b -= learning_rate * gb / n;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= learning_rate * g / n;
        }
    }
    Ok(PropensityModel {
        fit: PropensityFit::Logistic {
            weights: w,
            bias: b,
        },
        features,
        clip_epsilon,
    })
}
