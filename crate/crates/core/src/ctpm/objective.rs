//! Composite causal objectives and the weighted ATE estimator they are built
//! from.
//!
//! Given un-normalized match weights `w_m` over a batch, with `Z = Σ w` and
//! `w̃ = w / Z`, the treatment effect on an outcome `Y` is
//!
//! ```text
//! τ = ê · Σ_{T=1} Y w̃ / e  −  (1 − ê) · Σ_{T=0} Y w̃ / (1 − e)
//! ```
//!
//! where `e` is the per-record propensity and `ê` the overall treated rate.
//! Writing `τ = Σ_m a_m w̃_m`, the derivative with respect to a raw weight is
//! `(a_m − τ) / Z`, which is all the models need to backpropagate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::propensity::PropensityModel;

/// Smallest admissible partition value.
pub const MIN_PARTITION: f64 = 1e-300;

/// Magnitude floor for the reward effect in the cost-efficiency ratio.
pub const RATIO_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveForm {
    /// Maximize `τq · (τr − λ τc)`.
    NetBenefit,
    /// Minimize `τc / τr + λ τm`.
    CostEfficiency,
}

/// Outcome columns playing each role in the objective.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRoles {
    pub reward: String,
    pub cost: String,
    /// Multiplier `q` of the net-benefit form; treated as 1 when absent.
    #[serde(default)]
    pub weight: Option<String>,
    /// Additive term `m` of the cost-efficiency form; treated as 0 when absent.
    #[serde(default)]
    pub extra_cost: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub form: ObjectiveForm,
    pub outcomes: OutcomeRoles,
    pub lambda: f64,
}

/// Effect values (or their loss partials) for each role.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoleValues {
    pub reward: f64,
    pub cost: f64,
    pub weight: f64,
    pub extra_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Reward,
    Cost,
    Weight,
    ExtraCost,
}

impl RoleValues {
    pub fn get(&self, role: Role) -> f64 {
        match role {
            Role::Reward => self.reward,
            Role::Cost => self.cost,
            Role::Weight => self.weight,
            Role::ExtraCost => self.extra_cost,
        }
    }

    pub fn set(&mut self, role: Role, v: f64) {
        match role {
            Role::Reward => self.reward = v,
            Role::Cost => self.cost = v,
            Role::Weight => self.weight = v,
            Role::ExtraCost => self.extra_cost = v,
        }
    }
}

/// Sign-preserving magnitude floor; the derivative is zero where clamped.
pub fn guarded(v: f64) -> (f64, f64) {
    if v.abs() >= RATIO_GUARD {
        (v, 1.0)
    } else if v < 0.0 {
        (-RATIO_GUARD, 0.0)
    } else {
        (RATIO_GUARD, 0.0)
    }
}

impl ObjectiveSpec {
    pub fn net_benefit(reward: &str, cost: &str, lambda: f64) -> Self {
        ObjectiveSpec {
            form: ObjectiveForm::NetBenefit,
            outcomes: OutcomeRoles {
                reward: reward.into(),
                cost: cost.into(),
                weight: None,
                extra_cost: None,
            },
            lambda,
        }
    }

    pub fn cost_efficiency(reward: &str, cost: &str, lambda: f64) -> Self {
        ObjectiveSpec {
            form: ObjectiveForm::CostEfficiency,
            ..Self::net_benefit(reward, cost, lambda)
        }
    }

    /// Roles that read an outcome column, with the column name.
    pub fn active_roles(&self) -> Vec<(Role, &str)> {
        let mut roles = vec![
            (Role::Reward, self.outcomes.reward.as_str()),
            (Role::Cost, self.outcomes.cost.as_str()),
        ];
        match self.form {
            ObjectiveForm::NetBenefit => {
                if let Some(q) = &self.outcomes.weight {
                    roles.push((Role::Weight, q.as_str()));
                }
            }
            ObjectiveForm::CostEfficiency => {
                if let Some(m) = &self.outcomes.extra_cost {
                    roles.push((Role::ExtraCost, m.as_str()));
                }
            }
        }
        roles
    }

    /// Defaults for roles that read no column (`q = 1`, `m = 0`).
    fn fill_defaults(&self, mut v: RoleValues) -> RoleValues {
        let roles = self.active_roles();
        if !roles.iter().any(|(r, _)| *r == Role::Weight) {
            v.weight = 1.0;
        }
        if !roles.iter().any(|(r, _)| *r == Role::ExtraCost) {
            v.extra_cost = 0.0;
        }
        v
    }

    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be finite, got {}",
                self.lambda
            )));
        }
        for (_, name) in self.active_roles() {
            ds.outcome_index(name)?;
        }
        Ok(())
    }

    /// Loss to minimize.
    pub fn loss(&self, effects: &RoleValues) -> f64 {
        let t = self.fill_defaults(*effects);
        match self.form {
            ObjectiveForm::NetBenefit => -t.weight * (t.reward - self.lambda * t.cost),
            ObjectiveForm::CostEfficiency => {
                t.cost / guarded(t.reward).0 + self.lambda * t.extra_cost
            }
        }
    }

    /// `∂loss/∂τ` for each role.
    pub fn loss_partials(&self, effects: &RoleValues) -> RoleValues {
        let t = self.fill_defaults(*effects);
        match self.form {
            ObjectiveForm::NetBenefit => RoleValues {
                reward: -t.weight,
                cost: t.weight * self.lambda,
                weight: -(t.reward - self.lambda * t.cost),
                extra_cost: 0.0,
            },
            ObjectiveForm::CostEfficiency => {
                let (r, dr) = guarded(t.reward);
                RoleValues {
                    reward: -t.cost / (r * r) * dr,
                    cost: 1.0 / r,
                    weight: 0.0,
                    extra_cost: self.lambda,
                }
            }
        }
    }

    /// Higher-is-better metric: the negated loss for both forms.
    pub fn metric(&self, effects: &RoleValues) -> f64 {
        -self.loss(effects)
    }
}

/// A batch laid out for vectorized model evaluation.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `N × dx`.
    pub subject: DMatrix<f64>,
    /// `N × dy`.
    pub candidate: DMatrix<f64>,
    /// `N × (dx + dy)`.
    pub joint: DMatrix<f64>,
    pub intensity: Vec<f64>,
    pub treatment: Vec<bool>,
    /// Clipped per-record propensity.
    pub propensity: Vec<f64>,
    pub outcome_names: Vec<String>,
    /// One column per outcome name.
    pub outcomes: Vec<Vec<f64>>,
}

impl Batch {
    pub fn new(ds: &Dataset, propensity: &PropensityModel) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Data("batch must be nonempty".into()));
        }
        let n = ds.len();
        let (dx, dy) = (ds.subject_dim(), ds.candidate_dim());
        let subject = DMatrix::from_fn(n, dx, |i, k| ds.records[i].x[k]);
        let candidate = DMatrix::from_fn(n, dy, |i, k| ds.records[i].y[k]);
        let joint = DMatrix::from_fn(n, dx + dy, |i, k| {
            let r = &ds.records[i];
            if k < dx {
                r.x[k]
            } else {
                r.y[k - dx]
            }
        });
        let outcomes = (0..ds.outcome_names.len())
            .map(|d| ds.records.iter().map(|r| r.outcomes[d]).collect())
            .collect();
        Ok(Batch {
            subject,
            candidate,
            joint,
            intensity: ds.records.iter().map(|r| r.intensity).collect(),
            treatment: ds.records.iter().map(|r| r.treatment).collect(),
            propensity: propensity.estimate_all(ds)?,
            outcome_names: ds.outcome_names.clone(),
            outcomes,
        })
    }

    pub fn len(&self) -> usize {
        self.intensity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensity.is_empty()
    }

    pub fn outcome(&self, name: &str) -> Result<&[f64]> {
        self.outcome_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.outcomes[i].as_slice())
            .ok_or_else(|| Error::Data(format!("unknown outcome dimension '{name}'")))
    }

    pub fn require_both_cohorts(&self) -> Result<()> {
        let treated = self.treatment.iter().filter(|t| **t).count();
        match treated {
            0 => Err(Error::SingleCohort { present: "control" }),
            t if t == self.len() => Err(Error::SingleCohort { present: "treated" }),
            _ => Ok(()),
        }
    }

    /// Per-record coefficients `a_m` with `τ = Σ a_m w̃_m`.
    pub fn effect_coefficients(&self, outcome: &[f64], overall_propensity: f64) -> Vec<f64> {
        let eh = overall_propensity;
        outcome
            .iter()
            .zip(&self.treatment)
            .zip(&self.propensity)
            .map(|((&y, &t), &e)| {
                if t {
                    eh * y / e
                } else {
                    -(1.0 - eh) * y / (1.0 - e)
                }
            })
            .collect()
    }
}

/// Un-normalized weights with their partition value and normalized form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights {
    pub raw: Vec<f64>,
    pub partition: f64,
    pub normalized: Vec<f64>,
}

pub fn normalize_weights(raw: Vec<f64>) -> Result<NormalizedWeights> {
    if raw.is_empty() {
        return Err(Error::Data("batch must be nonempty".into()));
    }
    if let Some(i) = raw.iter().position(|w| !w.is_finite()) {
        return Err(Error::non_finite(format!("batch weight of record {i}")));
    }
    let partition: f64 = raw.iter().sum();
    if !(partition >= MIN_PARTITION) {
        return Err(Error::Degenerate(format!(
            "partition value {partition:e} below {MIN_PARTITION:e}"
        )));
    }
    let normalized = raw.iter().map(|w| w / partition).collect();
    Ok(NormalizedWeights {
        raw,
        partition,
        normalized,
    })
}

/// Weighted effect estimate for one outcome column.
pub fn weighted_effect(
    batch: &Batch,
    normalized: &[f64],
    outcome: &[f64],
    overall_propensity: f64,
) -> Result<f64> {
    batch.require_both_cohorts()?;
    Ok(batch
        .effect_coefficients(outcome, overall_propensity)
        .iter()
        .zip(normalized)
        .map(|(a, w)| a * w)
        .sum())
}

/// Loss, its gradient with respect to the raw weights, and the role effects.
#[derive(Debug, Clone)]
pub struct WeightedLoss {
    pub loss: f64,
    pub d_weights: Vec<f64>,
    pub effects: RoleValues,
}

/// Evaluates `spec` on a batch given raw weights.
pub fn weighted_loss(
    spec: &ObjectiveSpec,
    batch: &Batch,
    raw: Vec<f64>,
    overall_propensity: f64,
) -> Result<WeightedLoss> {
    batch.require_both_cohorts()?;
    let weights = normalize_weights(raw)?;
    let mut effects = RoleValues::default();
    let mut coefficients = Vec::new();
    for (role, name) in spec.active_roles() {
        let a = batch.effect_coefficients(batch.outcome(name)?, overall_propensity);
        let tau: f64 = a.iter().zip(&weights.normalized).map(|(a, w)| a * w).sum();
        effects.set(role, tau);
        coefficients.push((role, a));
    }
    let loss = spec.loss(&effects);
    if !loss.is_finite() {
        return Err(Error::non_finite("composite objective"));
    }
    let partials = spec.loss_partials(&effects);
    let mut d_weights = vec![0.0; batch.len()];
    for (role, a) in &coefficients {
        let (dl, tau) = (partials.get(*role), effects.get(*role));
        for (d, am) in d_weights.iter_mut().zip(a) {
            *d += dl * (am - tau) / weights.partition;
        }
    }
    Ok(WeightedLoss {
        loss,
        d_weights,
        effects,
    })
}
