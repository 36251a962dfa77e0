use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl FeatureStats {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        FeatureStats {
            mean,
            std: var.sqrt(),
        }
    }

    /// z-score; zero-variance features map to 0.
    pub fn apply(&self, v: f64) -> f64 {
        if self.std > 0.0 {
            (v - self.mean) / self.std
        } else {
            0.0
        }
    }
}

/// Per-feature z-score parameters, fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub subject: Vec<FeatureStats>,
    pub candidate: Vec<FeatureStats>,
}

pub fn fit_normalizer(train: &Dataset) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::Data(
            "cannot fit normalizer on an empty split".into(),
        ));
    }
    let subject = (0..train.subject_dim())
        .map(|k| FeatureStats::fit(train.records.iter().map(move |r| r.x[k])))
        .collect();
    let candidate = (0..train.candidate_dim())
        .map(|k| FeatureStats::fit(train.records.iter().map(move |r| r.y[k])))
        .collect();
    Ok(NormalizationStats { subject, candidate })
}

pub fn apply_normalizer(stats: &NormalizationStats, ds: &Dataset) -> Result<Dataset> {
    if stats.subject.len() != ds.subject_dim() || stats.candidate.len() != ds.candidate_dim() {
        return Err(Error::Shape {
            context: "apply_normalizer",
            expected: stats.subject.len() + stats.candidate.len(),
            got: ds.subject_dim() + ds.candidate_dim(),
        });
    }
    let mut out = ds.clone();
    for r in &mut out.records {
        for (v, s) in r.x.iter_mut().zip(&stats.subject) {
            *v = s.apply(*v);
        }
        for (v, s) in r.y.iter_mut().zip(&stats.candidate) {
            *v = s.apply(*v);
        }
    }
    Ok(out)
}
