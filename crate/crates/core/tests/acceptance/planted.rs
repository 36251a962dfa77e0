//! Planted-data setups shared by the acceptance checks, and the grid oracle
//! behind the intensity-recovery threshold.

use ctpm::ctpm::{Batch, ObjectiveSpec, TrainConfig};
use ctpm::dataset::{
    apply_normalizer, fit_normalizer, generate_synthetic, split, Dataset, SyntheticConfig,
    SyntheticGroundTruth,
};
use ctpm::math::spearman;
use ctpm::propensity::{fit_constant, PropensityModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Threshold the trained model's Spearman correlation must exceed: the
/// midpoint between the permutation null and the grid oracle's correlation
/// on the recovery test split. Frozen from [`oracle_threshold`].
pub const SPEARMAN_THRESHOLD: f64 = 0.528_428_193_413_682_5;

pub const LAMBDA: f64 = 0.5;

/// The recovery objective ignores cost, so the planted optimum is also the
/// optimum of what the model is trained on.
pub const RECOVERY_LAMBDA: f64 = 0.0;

pub struct Planted {
    pub train: Dataset,
    pub test: Dataset,
    pub train_batch: Batch,
    pub validation_batch: Batch,
    pub test_batch: Batch,
    pub propensity: PropensityModel,
    pub overall: f64,
    pub test_truth: SyntheticGroundTruth,
}

impl Planted {
    pub fn objective() -> ObjectiveSpec {
        ObjectiveSpec::net_benefit("reward", "cost", LAMBDA)
    }

    pub fn recovery_objective() -> ObjectiveSpec {
        ObjectiveSpec::net_benefit("reward", "cost", RECOVERY_LAMBDA)
    }

    pub fn build(cfg: &SyntheticConfig) -> Planted {
        let (ds, truth) = generate_synthetic(cfg).unwrap();
        let s = split(&ds, [0.6, 0.2, 0.2], cfg.seed).unwrap();
        let stats = fit_normalizer(&s.train).unwrap();
        let train = apply_normalizer(&stats, &s.train).unwrap();
        let validation = apply_normalizer(&stats, &s.validation).unwrap();
        let test = apply_normalizer(&stats, &s.test).unwrap();
        let propensity = fit_constant(&train, 0.01).unwrap();
        let overall = train.treated_count() as f64 / train.len() as f64;
        Planted {
            train_batch: Batch::new(&train, &propensity).unwrap(),
            validation_batch: Batch::new(&validation, &propensity).unwrap(),
            test_batch: Batch::new(&test, &propensity).unwrap(),
            train,
            test,
            propensity,
            overall,
            test_truth: truth.subset(&s.test_indices),
        }
    }

    /// 20,000 records with light outcome noise.
    pub fn ordering_setup() -> Planted {
        Planted::build(&SyntheticConfig {
            n_records: 20_000,
            noise: 0.1,
            baseline_scale: 0.1,
            seed: 0,
            ..Default::default()
        })
    }

    /// Noiseless outcomes.
    pub fn recovery_config() -> SyntheticConfig {
        SyntheticConfig {
            n_records: 10_000,
            n_subjects: 2_000,
            noise: 0.0,
            seed: 5,
            ..Default::default()
        }
    }

    pub fn recovery_setup() -> Planted {
        Planted::build(&Planted::recovery_config())
    }

    pub fn recovery_training() -> TrainConfig {
        TrainConfig {
            iterations: 300,
            restarts: 2,
            ..TrainConfig::default()
        }
    }

    pub fn small_setup() -> Planted {
        Planted::build(&SyntheticConfig {
            n_records: 5_000,
            seed: 8,
            ..Default::default()
        })
    }
}

/// Intensity maximizing the noiseless net uplift of record `i` under the
/// recovery objective, by exhaustive search over a grid of step 0.001.
fn grid_optimum(truth: &SyntheticGroundTruth, i: usize) -> f64 {
    (0..=1000)
        .map(|k| k as f64 / 1000.0)
        .map(|p| {
            (
                p,
                truth.reward_uplift(i, p) - RECOVERY_LAMBDA * truth.cost_uplift(i, p),
            )
        })
        .fold((0.0, f64::NEG_INFINITY), |best, c| {
            if c.1 > best.1 {
                c
            } else {
                best
            }
        })
        .0
}

/// `(null, oracle, threshold)`: the 99th percentile of |Spearman| between
/// the planted optimum and 200 permutations of itself, the oracle's
/// Spearman correlation with the planted optimum, and their midpoint.
pub fn oracle_threshold() -> (f64, f64, f64) {
    let p = Planted::recovery_setup();
    let truth = &p.test_truth;
    let oracle: Vec<f64> = (0..truth.len()).map(|i| grid_optimum(truth, i)).collect();
    let rho_oracle = spearman(&oracle, &truth.p_star);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut shuffled = truth.p_star.clone();
    let mut null: Vec<f64> = (0..200)
        .map(|_| {
            shuffled.shuffle(&mut rng);
            spearman(&shuffled, &truth.p_star).abs()
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let rho_null = null[197];
    (
        rho_null,
        rho_oracle,
        rho_null + 0.5 * (rho_oracle - rho_null),
    )
}
