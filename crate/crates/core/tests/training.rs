//! Training and baseline behaviour on small synthetic problems.

use ctpm::baselines::{fit_rlearner_dimension, random_scores, train_simple_ct};
use ctpm::ctpm::{
    train_restarts, Batch, BatchWeighting, CtpmModel, ModelConfig, ObjectiveSpec, RankingIntensity,
    TrainConfig,
};
use ctpm::dataset::{
    apply_normalizer, fit_normalizer, generate_synthetic, split, Dataset, SyntheticConfig,
    SyntheticGroundTruth,
};
use ctpm::evaluation::{atetp_curve, EvaluationConfig};
use ctpm::propensity::{fit_constant, PropensityModel};

struct Setup {
    train: Dataset,
    train_batch: Batch,
    validation_batch: Batch,
    test_batch: Batch,
    propensity: PropensityModel,
    overall: f64,
    test_truth: SyntheticGroundTruth,
}

fn setup(config: &SyntheticConfig) -> Setup {
    let (ds, truth) = generate_synthetic(config).unwrap();
    let s = split(&ds, [0.6, 0.2, 0.2], config.seed).unwrap();
    let stats = fit_normalizer(&s.train).unwrap();
    let train = apply_normalizer(&stats, &s.train).unwrap();
    let validation = apply_normalizer(&stats, &s.validation).unwrap();
    let test = apply_normalizer(&stats, &s.test).unwrap();
    let propensity = fit_constant(&train, 0.01).unwrap();
    Setup {
        overall: train.treated_count() as f64 / train.len() as f64,
        train_batch: Batch::new(&train, &propensity).unwrap(),
        validation_batch: Batch::new(&validation, &propensity).unwrap(),
        test_batch: Batch::new(&test, &propensity).unwrap(),
        train,
        propensity,
        test_truth: truth.subset(&s.test_indices),
    }
}

fn train_ctpm(
    s: &Setup,
    spec: &ObjectiveSpec,
    config: &TrainConfig,
) -> ctpm::ctpm::Trained<CtpmModel> {
    let (dx, dy) = (s.train.subject_dim(), s.train.candidate_dim());
    train_restarts(
        |rng| {
            CtpmModel::init(
                dx,
                dy,
                &ModelConfig::default(),
                s.propensity.clone(),
                s.overall,
                rng,
            )
        },
        &s.train_batch,
        &s.validation_batch,
        spec,
        config,
    )
    .unwrap()
}

/// Mean and twice the standard deviation of random-scorer a-AUCs.
fn null_band(batch: &Batch, spec: &ObjectiveSpec) -> (f64, f64) {
    let ec = EvaluationConfig::default();
    let v: Vec<f64> = (0..40)
        .map(|seed| {
            atetp_curve(batch, &random_scores(batch.len(), seed), spec, &ec)
                .unwrap()
                .auc
        })
        .collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
    (m, 2.0 * sd)
}

fn short() -> TrainConfig {
    TrainConfig {
        iterations: 100,
        restarts: 2,
        ..TrainConfig::default()
    }
}

fn small(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_records: 4_000,
        n_subjects: 800,
        seed,
        ..Default::default()
    }
}

#[test]
fn every_restart_gets_a_history() {
    let s = setup(&small(1));
    let spec = ObjectiveSpec::net_benefit("reward", "cost", 0.5);
    let t = train_ctpm(
        &s,
        &spec,
        &TrainConfig {
            iterations: 5,
            ..TrainConfig::default()
        },
    );
    assert_eq!(t.histories.len(), 6);
    for h in &t.histories {
        assert_eq!(h.train_loss.len(), 5);
        assert_eq!(h.validation_loss.len(), 5);
        assert!(h.aborted.is_none());
    }
}

#[test]
fn planted_signal_training_loss_improves_early() {
    let s = setup(&small(2));
    let spec = ObjectiveSpec::net_benefit("reward", "cost", 0.5);
    let t = train_ctpm(
        &s,
        &spec,
        &TrainConfig {
            iterations: 51,
            restarts: 1,
            keep_best: false,
            ..TrainConfig::default()
        },
    );
    // entry 50 is measured after 50 updates
    let loss = &t.histories[0].train_loss;
    assert!(loss[50] < loss[0], "{} -> {}", loss[0], loss[50]);
}

#[test]
fn same_seed_gives_identical_parameters() {
    let s = setup(&small(3));
    let spec = ObjectiveSpec::net_benefit("reward", "cost", 0.5);
    let config = TrainConfig {
        iterations: 20,
        ..short()
    };
    let a = train_ctpm(&s, &spec, &config);
    let b = train_ctpm(&s, &spec, &config);
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.histories, b.histories);
}

#[test]
fn zero_effect_model_ranks_like_noise() {
    let s = setup(&SyntheticConfig {
        reward_effect: 0.0,
        cost_effect: 0.0,
        ..small(4)
    });
    let spec = ObjectiveSpec::net_benefit("reward", "cost", 0.5);
    let t = train_ctpm(&s, &spec, &short());
    let scores = t
        .model
        .score_batch(&s.validation_batch, RankingIntensity::Observed)
        .unwrap();
    let a = atetp_curve(
        &s.validation_batch,
        &scores,
        &spec,
        &EvaluationConfig::default(),
    )
    .unwrap()
    .auc;
    let (m, band) = null_band(&s.validation_batch, &spec);
    assert!((a - m).abs() <= band, "a-AUC {a} vs random {m} ± {band}");
}

#[test]
fn oracle_scorer_beats_random() {
    let s = setup(&small(5));
    let spec = ObjectiveSpec::net_benefit("reward", "cost", 0.5);
    let truth = &s.test_truth;
    let oracle: Vec<f64> = (0..truth.len())
        .map(|i| {
            let p = s.test_batch.intensity[i];
            truth.reward_uplift(i, p) - 0.5 * truth.cost_uplift(i, p)
        })
        .collect();
    let a = atetp_curve(&s.test_batch, &oracle, &spec, &EvaluationConfig::default())
        .unwrap()
        .auc;
    let (m, band) = null_band(&s.test_batch, &spec);
    assert!(a > m + band, "oracle {a} vs random {m} ± {band}");
}

#[test]
fn simple_ct_matches_full_model_without_intensity_effect() {
    let s = setup(&SyntheticConfig {
        intensity_effect: false,
        ..small(6)
    });
    let spec = ObjectiveSpec::net_benefit("reward", "cost", 0.5);
    let config = short();
    let full = train_ctpm(&s, &spec, &config);
    let simple = train_simple_ct(
        &s.train_batch,
        &s.validation_batch,
        &spec,
        &config,
        s.overall,
    )
    .unwrap();
    let ec = EvaluationConfig::default();
    let a_full = atetp_curve(
        &s.test_batch,
        &full
            .model
            .score_batch(&s.test_batch, RankingIntensity::Observed)
            .unwrap(),
        &spec,
        &ec,
    )
    .unwrap()
    .auc;
    let a_simple = atetp_curve(
        &s.test_batch,
        &simple.model.score_batch(&s.test_batch).unwrap(),
        &spec,
        &ec,
    )
    .unwrap()
    .auc;
    let (_, band) = null_band(&s.test_batch, &spec);
    assert!(
        (a_full - a_simple).abs() <= band,
        "full {a_full} vs simple {a_simple}, band {band}"
    );
}

#[test]
fn rlearner_zero_effect_coefficients_are_noise() {
    let fits: Vec<Vec<f64>> = (0..30)
        .map(|seed| {
            let (ds, _) = generate_synthetic(&SyntheticConfig {
                n_records: 2_000,
                reward_effect: 0.0,
                cost_effect: 0.0,
                seed: 100 + seed,
                ..Default::default()
            })
            .unwrap();
            fit_rlearner_dimension(&ds, "reward", 0.5)
                .unwrap()
                .effect_coefficients
        })
        .collect();
    // the spread of the other fits estimates the first fit's standard error
    let (first, rest) = fits.split_first().unwrap();
    for (j, c) in first.iter().enumerate() {
        let col: Vec<f64> = rest.iter().map(|f| f[j]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let se = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
        assert!(
            c.abs() < 3.0 * se,
            "coefficient {j}: {c} vs standard error {se}"
        );
    }
}
