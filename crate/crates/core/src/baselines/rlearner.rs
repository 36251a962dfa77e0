//! Linear R-learner.
//!
//! With a constant propensity `ê`, each outcome `Y` is handled in two
//! least-squares stages over `x̃ = [1, x, y]` (the intensity is not a
//! covariate):
//!
//! 1. `m̂(x̃)`: regression of `Y` on `x̃`;
//! 2. `τ̂(x̃) = θ·x̃` minimizing `Σ ((Y − m̂) − (T − ê) θ·x̃)²`.
//!
//! No regularization; rank-deficient systems get the minimum-norm solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ctpm::{guarded, ObjectiveForm, ObjectiveSpec, Role};
use crate::dataset::{Dataset, MatchRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEffect {
    pub outcome: String,
    /// `[intercept, x..., y...]` of the outcome regression.
    pub outcome_coefficients: Vec<f64>,
    /// `[intercept, x..., y...]` of the effect regression.
    pub effect_coefficients: Vec<f64>,
}

impl LinearEffect {
    pub fn effect(&self, x: &[f64], y: &[f64]) -> f64 {
        let (b, w) = self
            .effect_coefficients
            .split_first()
            .expect("intercept present");
        b + w
            .iter()
            .zip(x.iter().chain(y))
            .map(|(a, v)| a * v)
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RLearnerModel {
    pub propensity: f64,
    pub effects: Vec<LinearEffect>,
}

fn design_row(r: &MatchRecord) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(1.0)
        .chain(r.x.iter().copied())
        .chain(r.y.iter().copied())
}

/// Minimum-norm least-squares solution of `a · β ≈ b` via SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let largest = svd.singular_values.max();
    let tolerance = largest * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let beta = svd
        .solve(b, tolerance)
        .map_err(|e| Error::Degenerate(format!("least squares: {e}")))?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("least-squares coefficients"));
    }
    Ok(beta)
}

pub fn fit_rlearner_dimension(
    train: &Dataset,
    outcome: &str,
    propensity: f64,
) -> Result<LinearEffect> {
    train.require_both_cohorts()?;
    if !(propensity > 0.0 && propensity < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "propensity must lie in (0, 1), got {propensity}"
        )));
    }
    let d = train.outcome_index(outcome)?;
    let n = train.len();
    let p = 1 + train.subject_dim() + train.candidate_dim();
    let rows: Vec<f64> = train.records.iter().flat_map(design_row).collect();
    let design = DMatrix::from_row_slice(n, p, &rows);
    let target = DVector::from_iterator(n, train.records.iter().map(|r| r.outcomes[d]));

    let m = least_squares(&design, &target)?;
    let residual = &target - &design * &m;
    let mut scaled = design.clone();
    for (i, r) in train.records.iter().enumerate() {
        let t = if r.treatment { 1.0 } else { 0.0 };
        scaled.row_mut(i).scale_mut(t - propensity);
    }
    let theta = least_squares(&scaled, &residual)?;
    Ok(LinearEffect {
        outcome: outcome.to_string(),
        outcome_coefficients: m.iter().copied().collect(),
        effect_coefficients: theta.iter().copied().collect(),
    })
}

/// One effect model per outcome role that `spec` reads.
pub fn fit_rlearner(
    train: &Dataset,
    spec: &ObjectiveSpec,
    propensity: f64,
) -> Result<RLearnerModel> {
    let effects = spec
        .active_roles()
        .into_iter()
        .map(|(_, name)| fit_rlearner_dimension(train, name, propensity))
        .collect::<Result<_>>()?;
    Ok(RLearnerModel {
        propensity,
        effects,
    })
}

impl RLearnerModel {
    pub fn effect(&self, outcome: &str, x: &[f64], y: &[f64]) -> Result<f64> {
        self.effects
            .iter()
            .find(|e| e.outcome == outcome)
            .map(|e| e.effect(x, y))
            .ok_or_else(|| Error::Data(format!("no R-learner fitted for outcome '{outcome}'")))
    }

    /// Per-record composite score, higher is better: `τq(τr − λτc)` for the
    /// net-benefit form, `−(τc/τr + λτm)` for the cost-efficiency form.
    pub fn score(&self, spec: &ObjectiveSpec, x: &[f64], y: &[f64]) -> Result<f64> {
        let mut t = crate::ctpm::RoleValues::default();
        for (role, name) in spec.active_roles() {
            t.set(role, self.effect(name, x, y)?);
        }
        let lambda = spec.lambda;
        Ok(match spec.form {
            ObjectiveForm::NetBenefit => {
                let q = if spec.active_roles().iter().any(|(r, _)| *r == Role::Weight) {
                    t.weight
                } else {
                    1.0
                };
                q * (t.reward - lambda * t.cost)
            }
            ObjectiveForm::CostEfficiency => {
                -(t.cost / guarded(t.reward).0 + lambda * t.extra_cost)
            }
        })
    }

    pub fn score_dataset(&self, spec: &ObjectiveSpec, ds: &Dataset) -> Result<Vec<f64>> {
        ds.records
            .iter()
            .map(|r| self.score(spec, &r.x, &r.y))
            .collect()
    }
}
