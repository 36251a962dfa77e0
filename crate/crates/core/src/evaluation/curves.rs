use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctpm::{Batch, ObjectiveSpec, RoleValues};
use crate::error::{Error, Result};

/// Full-coverage effects smaller than this cannot normalize a cost curve.
pub const MIN_NORMALIZING_EFFECT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Coverage grid `k / grid_points`, `k = 1..=grid_points`.
    pub grid_points: usize,
    /// Seed of the shuffle that breaks score ties.
    pub tie_seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            grid_points: 20,
            tie_seed: 0,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points == 0 {
            return Err(Error::Config("grid_points must be positive".into()));
        }
        Ok(())
    }

    /// `(coverage, selection size)` for every grid point of an `n`-record set.
    fn grid(&self, n: usize) -> Vec<(f64, usize)> {
        (1..=self.grid_points)
            .map(|k| {
                let rho = k as f64 / self.grid_points as f64;
                let size = ((k * n) as f64 / self.grid_points as f64 - 1e-9).ceil() as usize;
                (rho, size.clamp(1, n))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// `(coverage, composite metric)`.
    Atetp,
    /// `(normalized cost effect, normalized reward effect)`.
    Cost,
}

impl CurveKind {
    pub fn file_suffix(self) -> &'static str {
        match self {
            CurveKind::Atetp => "atetp",
            CurveKind::Cost => "cost",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            CurveKind::Atetp => "effect by coverage",
            CurveKind::Cost => "cost curve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCurve {
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl EvaluationCurve {
    pub fn column_names(&self) -> [&'static str; 2] {
        match self.kind {
            CurveKind::Atetp => ["coverage", "metric"],
            CurveKind::Cost => ["cost", "reward"],
        }
    }
}

/// Indices ordered by descending score. Ties keep the order of a seeded
/// shuffle, so equal scores give a random but reproducible prefix.
pub fn rank_order(scores: &[f64], tie_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(tie_seed));
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    order
}

/// Inverse-propensity difference of cohort means over `selection`:
/// `mean_T(Y / e) − mean_C(Y / (1 − e))`.
pub fn subset_ate(batch: &Batch, selection: &[usize], outcome: &[f64]) -> Result<f64> {
    let (mut st, mut nt, mut sc, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for &i in selection {
        let e = batch.propensity[i];
        if batch.treatment[i] {
            st += outcome[i] / e;
            nt += 1;
        } else {
            sc += outcome[i] / (1.0 - e);
            nc += 1;
        }
    }
    match (nt, nc) {
        (0, _) => Err(Error::SingleCohort { present: "control" }),
        (_, 0) => Err(Error::SingleCohort { present: "treated" }),
        _ => Ok(st / nt as f64 - sc / nc as f64),
    }
}

fn has_both_cohorts(batch: &Batch, selection: &[usize]) -> bool {
    let treated = selection.iter().filter(|&&i| batch.treatment[i]).count();
    treated > 0 && treated < selection.len()
}

fn check_scores(batch: &Batch, scores: &[f64]) -> Result<()> {
    if scores.len() != batch.len() {
        return Err(Error::Shape {
            context: "evaluation scores",
            expected: batch.len(),
            got: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::non_finite(format!("score of record {i}")));
    }
    Ok(())
}

/// Trapezoid area of a polyline, traversed in point order.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Composite metric (higher is better) of the top-ranked fraction, over the
/// coverage grid. Coverages whose selection lacks a cohort are skipped. The
/// area holds the first point's value back to coverage 0, so a flat curve's
/// area equals its level.
pub fn atetp_curve(
    batch: &Batch,
    scores: &[f64],
    spec: &ObjectiveSpec,
    config: &EvaluationConfig,
) -> Result<EvaluationCurve> {
    config.validate()?;
    check_scores(batch, scores)?;
    let columns: Vec<_> = spec
        .active_roles()
        .into_iter()
        .map(|(role, name)| Ok((role, batch.outcome(name)?)))
        .collect::<Result<_>>()?;
    let order = rank_order(scores, config.tie_seed);
    let mut points = Vec::new();
    for (rho, size) in config.grid(batch.len()) {
        let selection = &order[..size];
        if !has_both_cohorts(batch, selection) {
            continue;
        }
        let mut effects = RoleValues::default();
        for (role, column) in &columns {
            effects.set(*role, subset_ate(batch, selection, column)?);
        }
        points.push((rho, spec.metric(&effects)));
    }
    let first = *points.first().ok_or(Error::SingleCohort {
        present: if batch.treatment[0] {
            "treated"
        } else {
            "control"
        },
    })?;
    let auc = first.0 * first.1 + trapezoid(&points);
    Ok(EvaluationCurve {
        kind: CurveKind::Atetp,
        points,
        auc,
    })
}

/// Cumulative reward effect against cumulative cost effect as coverage
/// grows, each normalized by its full-coverage value: at coverage `ρ` with
/// selection `S`, the point is `(ρ τc(S) / τc(all), ρ τr(S) / τr(all))`.
/// Starts at `(0, 0)` and ends at `(1, 1)`; random ranking gives the
/// diagonal.
pub fn cost_curve(
    batch: &Batch,
    scores: &[f64],
    reward: &str,
    cost: &str,
    config: &EvaluationConfig,
) -> Result<EvaluationCurve> {
    config.validate()?;
    check_scores(batch, scores)?;
    let (r, c) = (batch.outcome(reward)?, batch.outcome(cost)?);
    let all: Vec<usize> = (0..batch.len()).collect();
    let (tr, tc) = (subset_ate(batch, &all, r)?, subset_ate(batch, &all, c)?);
    for (name, v) in [(reward, tr), (cost, tc)] {
        if v.abs() < MIN_NORMALIZING_EFFECT {
            return Err(Error::Degenerate(format!(
                "full-coverage effect on '{name}' is {v:e}; cost curve cannot be normalized"
            )));
        }
    }
    let order = rank_order(scores, config.tie_seed);
    let mut points = vec![(0.0, 0.0)];
    for (rho, size) in config.grid(batch.len()) {
        let selection = &order[..size];
        if !has_both_cohorts(batch, selection) {
            continue;
        }
        let x = rho * subset_ate(batch, selection, c)? / tc;
        let y = rho * subset_ate(batch, selection, r)? / tr;
        points.push((x, y));
    }
    let auc = trapezoid(&points);
    Ok(EvaluationCurve {
        kind: CurveKind::Cost,
        points,
        auc,
    })
}
