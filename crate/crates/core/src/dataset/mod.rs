//! Match records, tabular ingestion, splitting, normalization, and a
//! synthetic generator with planted ground truth.

mod normalize;
mod split;
mod synth;
mod table;

pub use normalize::{apply_normalizer, fit_normalizer, FeatureStats, NormalizationStats};
pub use split::{split, Splits};
pub use synth::{
    generate_synthetic, write_ground_truth, write_ground_truth_to, PlantedResponse,
    SyntheticConfig, SyntheticGroundTruth,
};
pub use table::{
    load_table, load_table_from, write_table, write_table_to, TableSchema, TreatmentSource,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// One treatment session: a subject matched with a candidate, the cohort
/// indicator, the logged intensity, and the observed outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub subject_id: String,
    pub candidate_id: String,
    /// Subject features.
    pub x: Vec<f64>,
    /// Candidate features.
    pub y: Vec<f64>,
    pub treatment: bool,
    /// Treatment intensity in `[0, 1]`.
    pub intensity: f64,
    /// Outcome values, aligned with [`Dataset::outcome_names`].
    pub outcomes: Vec<f64>,
}

impl MatchRecord {
    /// Concatenated `[x, y]`.
    pub fn joint_features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.x.len() + self.y.len());
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.y);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<MatchRecord>,
    pub subject_features: Vec<String>,
    pub candidate_features: Vec<String>,
    pub outcome_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking every record against the declared shape.
    pub fn new(
        records: Vec<MatchRecord>,
        subject_features: Vec<String>,
        candidate_features: Vec<String>,
        outcome_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Dataset {
            records,
            subject_features,
            candidate_features,
            outcome_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let bad = |message: String| Error::Row { row: i, message };
            if r.x.len() != self.subject_features.len() {
                return Err(bad(format!(
                    "expected {} subject features, found {}",
                    self.subject_features.len(),
                    r.x.len()
                )));
            }
            if r.y.len() != self.candidate_features.len() {
                return Err(bad(format!(
                    "expected {} candidate features, found {}",
                    self.candidate_features.len(),
                    r.y.len()
                )));
            }
            if r.outcomes.len() != self.outcome_names.len() {
                return Err(bad(format!(
                    "expected {} outcomes, found {}",
                    self.outcome_names.len(),
                    r.outcomes.len()
                )));
            }
            if !(0.0..=1.0).contains(&r.intensity) {
                return Err(bad(format!("intensity {} outside [0, 1]", r.intensity)));
            }
            if r.x
                .iter()
                .chain(&r.y)
                .chain(&r.outcomes)
                .any(|v| !v.is_finite())
            {
                return Err(bad("non-finite feature or outcome".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subject_dim(&self) -> usize {
        self.subject_features.len()
    }

    pub fn candidate_dim(&self) -> usize {
        self.candidate_features.len()
    }

    pub fn outcome_index(&self, name: &str) -> Result<usize> {
        self.outcome_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("outcome '{name}' not present in dataset")))
    }

    pub fn outcome(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.outcome_index(name)?;
        Ok(self.records.iter().map(|r| r.outcomes[k]).collect())
    }

    pub fn treated_count(&self) -> usize {
        self.records.iter().filter(|r| r.treatment).count()
    }

    /// Same schema, selected records.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            subject_features: self.subject_features.clone(),
            candidate_features: self.candidate_features.clone(),
            outcome_names: self.outcome_names.clone(),
        }
    }

    /// Fails unless both cohorts are present.
    pub fn require_both_cohorts(&self) -> Result<()> {
        let treated = self.treated_count();
        if treated == 0 {
            return Err(Error::SingleCohort { present: "control" });
        }
        if treated == self.len() {
            return Err(Error::SingleCohort { present: "treated" });
        }
        Ok(())
    }

    /// Median of the logged intensities.
    pub fn intensity_median(&self) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().map(|r| r.intensity).collect();
        math::median(&v)
    }

    /// Sets `treatment = intensity > threshold` on every record.
    pub fn assign_treatment_by_threshold(&mut self, threshold: f64) {
        for r in &mut self.records {
            r.treatment = r.intensity > threshold;
        }
    }
}
