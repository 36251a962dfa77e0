//! Synthetic match data with planted causal structure.
//!
//! Subjects and candidates are drawn from finite pools of Gaussian feature
//! vectors; every record pairs a random subject with a random candidate,
//! draws an intensity uniformly on `[0, 1]`, and assigns treatment by a coin
//! with the configured rate. For a record with subject features `x` and
//! candidate features `y`:
//!
//! * affinity `a(x, y) = σ(γ · ⟨Ux, Vy⟩ / √L)`, bilinear in latent factors
//! * optimal intensity `P*(x, y) = σ(κ · ⟨w, [x, y]⟩ / ‖w‖)`
//! * responsiveness `ρ(x) = softplus(⟨v, x⟩ / ‖v‖)`
//! * price `π(y) = exp(η · y₀)`
//!
//! The treated reward gains `reward_effect · ρ · a · bell(P − P*)` with a
//! Gaussian bell of width `bell_width` (constant 1 when the intensity effect
//! is disabled); the treated cost gains `cost_effect · P · π`. Controls carry
//! only the baseline `⟨b, x⟩` plus noise. When `engagement_effect > 0` a third
//! outcome, `engagement`, is emitted whose treated uplift is
//! `engagement_effect · a`; it is meant as the weight outcome of the
//! net-benefit objective.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, MatchRecord};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_records: usize,
    pub n_subjects: usize,
    pub n_candidates: usize,
    pub subject_dim: usize,
    pub candidate_dim: usize,
    pub latent_dim: usize,
    /// Standard deviation of the Gaussian noise added to every outcome.
    pub noise: f64,
    pub treatment_rate: f64,
    pub reward_effect: f64,
    pub cost_effect: f64,
    /// Zero disables the engagement outcome.
    pub engagement_effect: f64,
    /// When false the reward uplift does not depend on intensity.
    pub intensity_effect: bool,
    pub bell_width: f64,
    /// Gain γ inside the affinity sigmoid.
    pub affinity_gain: f64,
    /// Gain κ inside the optimal-intensity sigmoid.
    pub intensity_gain: f64,
    /// Spread η of the log-price.
    pub price_spread: f64,
    /// Scale of the baseline (treatment-independent) reward.
    pub baseline_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_records: 20_000,
            n_subjects: 4_000,
            n_candidates: 40,
            subject_dim: 5,
            candidate_dim: 4,
            latent_dim: 3,
            noise: 0.5,
            treatment_rate: 0.5,
            reward_effect: 1.0,
            cost_effect: 1.0,
            engagement_effect: 0.0,
            intensity_effect: true,
            bell_width: 0.12,
            affinity_gain: 3.0,
            intensity_gain: 1.5,
            price_spread: 0.5,
            baseline_scale: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_records", self.n_records),
            ("n_subjects", self.n_subjects),
            ("n_candidates", self.n_candidates),
            ("subject_dim", self.subject_dim),
            ("candidate_dim", self.candidate_dim),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!(
                    "synthetic.{name} must be at least 1"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.treatment_rate) {
            return Err(Error::Config(
                "synthetic.treatment_rate must lie in [0, 1]".into(),
            ));
        }
        if !(self.engagement_effect >= 0.0) {
            return Err(Error::Config(
                "synthetic.engagement_effect must be >= 0".into(),
            ));
        }
        if !(self.noise >= 0.0) || !(self.bell_width > 0.0) {
            return Err(Error::Config(
                "synthetic.noise must be >= 0 and synthetic.bell_width > 0".into(),
            ));
        }
        Ok(())
    }
}

/// The planted response functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedResponse {
    pub reward_effect: f64,
    pub cost_effect: f64,
    #[serde(default)]
    pub engagement_effect: f64,
    pub intensity_effect: bool,
    pub bell_width: f64,
}

impl PlantedResponse {
    pub fn bell(&self, intensity: f64, p_star: f64) -> f64 {
        if self.intensity_effect {
            let d = (intensity - p_star) / self.bell_width;
            (-0.5 * d * d).exp()
        } else {
            1.0
        }
    }
}

/// Ground truth aligned with the generated records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    /// Reward-optimal intensity per record.
    pub p_star: Vec<f64>,
    /// True match affinity per record.
    pub affinity: Vec<f64>,
    pub responsiveness: Vec<f64>,
    pub price: Vec<f64>,
    pub response: PlantedResponse,
}

impl SyntheticGroundTruth {
    pub fn len(&self) -> usize {
        self.p_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_star.is_empty()
    }

    /// Noiseless expected reward uplift of record `i` at `intensity`.
    pub fn reward_uplift(&self, i: usize, intensity: f64) -> f64 {
        self.response.reward_effect
            * self.responsiveness[i]
            * self.affinity[i]
            * self.response.bell(intensity, self.p_star[i])
    }

    /// Noiseless expected cost uplift of record `i` at `intensity`.
    pub fn cost_uplift(&self, i: usize, intensity: f64) -> f64 {
        self.response.cost_effect * intensity * self.price[i]
    }

    /// Noiseless expected engagement uplift of record `i`.
    pub fn engagement_uplift(&self, i: usize) -> f64 {
        self.response.engagement_effect * self.affinity[i]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect();
        SyntheticGroundTruth {
            p_star: pick(&self.p_star),
            affinity: pick(&self.affinity),
            responsiveness: pick(&self.responsiveness),
            price: pick(&self.price),
            response: self.response.clone(),
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(Dataset, SyntheticGroundTruth)> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    let u = DMatrix::from_fn(c.latent_dim, c.subject_dim, |_, _| {
        rng.sample(StandardNormal)
    });
    let v = DMatrix::from_fn(c.latent_dim, c.candidate_dim, |_, _| {
        rng.sample(StandardNormal)
    });
    let w_star = unit(gaussian_vec(&mut rng, c.subject_dim + c.candidate_dim));
    let w_resp = unit(gaussian_vec(&mut rng, c.subject_dim));
    let w_base = unit(gaussian_vec(&mut rng, c.subject_dim)) * c.baseline_scale;

    let subjects: Vec<DVector<f64>> = (0..c.n_subjects)
        .map(|_| gaussian_vec(&mut rng, c.subject_dim))
        .collect();
    let candidates: Vec<DVector<f64>> = (0..c.n_candidates)
        .map(|_| gaussian_vec(&mut rng, c.candidate_dim))
        .collect();
    let latent_s: Vec<DVector<f64>> = subjects.iter().map(|x| &u * x).collect();
    let latent_c: Vec<DVector<f64>> = candidates.iter().map(|y| &v * y).collect();

    let response = PlantedResponse {
        reward_effect: c.reward_effect,
        cost_effect: c.cost_effect,
        engagement_effect: c.engagement_effect,
        intensity_effect: c.intensity_effect,
        bell_width: c.bell_width,
    };
    let mut truth = SyntheticGroundTruth {
        p_star: Vec::with_capacity(c.n_records),
        affinity: Vec::with_capacity(c.n_records),
        responsiveness: Vec::with_capacity(c.n_records),
        price: Vec::with_capacity(c.n_records),
        response,
    };
    let mut records = Vec::with_capacity(c.n_records);
    let latent_scale = (c.latent_dim as f64).sqrt();

    for _ in 0..c.n_records {
        let i = rng.random_range(0..c.n_subjects);
        let j = rng.random_range(0..c.n_candidates);
        let intensity: f64 = rng.random();
        let treatment = rng.random::<f64>() < c.treatment_rate;
        let (x, y) = (&subjects[i], &candidates[j]);

        let affinity = sigmoid(c.affinity_gain * latent_s[i].dot(&latent_c[j]) / latent_scale);
        let index = w_star.rows(0, c.subject_dim).dot(x)
            + w_star.rows(c.subject_dim, c.candidate_dim).dot(y);
        let p_star = sigmoid(c.intensity_gain * index);
        let responsiveness = softplus(w_resp.dot(x));
        let price = (c.price_spread * y[0]).exp();
        truth.p_star.push(p_star);
        truth.affinity.push(affinity);
        truth.responsiveness.push(responsiveness);
        truth.price.push(price);
        let k = truth.len() - 1;

        let mut reward = w_base.dot(x) + c.noise * rng.sample::<f64, _>(StandardNormal);
        let mut cost = c.noise * rng.sample::<f64, _>(StandardNormal);
        if treatment {
            reward += truth.reward_uplift(k, intensity);
            cost += truth.cost_uplift(k, intensity);
        }
        let mut outcomes = vec![reward, cost];
        if c.engagement_effect > 0.0 {
            let mut engagement = c.noise * rng.sample::<f64, _>(StandardNormal);
            if treatment {
                engagement += truth.engagement_uplift(k);
            }
            outcomes.push(engagement);
        }
        records.push(MatchRecord {
            subject_id: format!("s{i}"),
            candidate_id: format!("c{j}"),
            x: x.iter().copied().collect(),
            y: y.iter().copied().collect(),
            treatment,
            intensity,
            outcomes,
        });
    }

    let mut outcome_names = vec!["reward".to_string(), "cost".to_string()];
    if c.engagement_effect > 0.0 {
        outcome_names.push("engagement".into());
    }
    let ds = Dataset::new(
        records,
        (0..c.subject_dim).map(|k| format!("x{k}")).collect(),
        (0..c.candidate_dim).map(|k| format!("y{k}")).collect(),
        outcome_names,
    )?;
    Ok((ds, truth))
}

/// Sidecar table keyed by record index.
pub fn write_ground_truth(
    truth: &SyntheticGroundTruth,
    ds: &Dataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_ground_truth_to(truth, ds, File::create(path.as_ref())?)
}

pub fn write_ground_truth_to<W: Write>(
    truth: &SyntheticGroundTruth,
    ds: &Dataset,
    writer: W,
) -> Result<()> {
    if ds.len() != truth.len() {
        return Err(Error::Shape {
            context: "write_ground_truth",
            expected: truth.len(),
            got: ds.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "index",
        "p_star",
        "affinity",
        "responsiveness",
        "price",
        "reward_uplift",
        "cost_uplift",
        "engagement_uplift",
    ])?;
    for (i, r) in ds.records.iter().enumerate() {
        w.write_record([
            i.to_string(),
            truth.p_star[i].to_string(),
            truth.affinity[i].to_string(),
            truth.responsiveness[i].to_string(),
            truth.price[i].to_string(),
            truth.reward_uplift(i, r.intensity).to_string(),
            truth.cost_uplift(i, r.intensity).to_string(),
            truth.engagement_uplift(i).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
