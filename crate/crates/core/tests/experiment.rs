//! End-to-end runs of the experiment pipeline on small configs.

use std::path::Path;

use ctpm::dataset::TreatmentSource;
use ctpm::experiment::{Checkpoint, DataSource, Experiment, ExperimentConfig, Manifest, Overrides};
use ctpm::{Error, ErrorClass};

const SYNTH: &str = r#"
[data.synthetic]
n_records = 900
n_subjects = 150
n_candidates = 8
seed = 11

[objective]
form = "net_benefit"
lambda = 0.5
outcomes = { reward = "reward", cost = "cost" }

[train]
iterations = 15
restarts = 2
"#;

fn synth_experiment(dir: &Path) -> Experiment {
    Experiment::new(
        ExperimentConfig::from_toml_str(SYNTH).unwrap(),
        dir,
        Overrides::default(),
    )
}

/// A file-backed config reading what `synth` wrote.
fn file_config(run_dir: &Path, treatment: TreatmentSource) -> ExperimentConfig {
    let text = std::fs::read_to_string(run_dir.join("data/source.toml")).unwrap();
    let DataSource::File(mut source) = DataSource::from_toml_section(&text).unwrap() else {
        panic!("synth wrote a non-file source");
    };
    assert_eq!(source.path, Path::new("matches.csv"));
    source.path = run_dir.join("data/matches.csv");
    source.schema.treatment = treatment;
    let mut config = ExperimentConfig::from_toml_str(SYNTH).unwrap();
    config.data = DataSource::File(source);
    config
}

#[test]
fn synth_writes_table_source_and_truth_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let exp = synth_experiment(dir.path());
    let m = exp.synth().unwrap();
    let paths: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(
        paths,
        [
            "data/ground_truth.csv",
            "data/matches.csv",
            "data/source.toml"
        ]
    );
    let on_disk: Manifest = serde_json::from_str(
        &std::fs::read_to_string(exp.run_dir().join("synth.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(on_disk, m);
    let rows = std::fs::read_to_string(exp.run_dir().join("data/matches.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 901);
}

#[test]
fn file_source_reproduces_synthetic_training() {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = synth_experiment(dir.path());
    synthetic.synth().unwrap();
    let (from_memory, _) = synthetic.train().unwrap();

    let file = Experiment::new(
        file_config(
            &synthetic.run_dir(),
            TreatmentSource::Column("treatment".into()),
        ),
        dir.path().join("file"),
        Overrides::default(),
    );
    let (from_file, _) = file.train().unwrap();
    assert_eq!(from_file.ctpm, from_memory.ctpm);
    assert_eq!(from_file.rlearner, from_memory.rlearner);
}

#[test]
fn median_treatment_comes_from_the_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = synth_experiment(dir.path());
    synthetic.synth().unwrap();
    let exp = Experiment::new(
        file_config(&synthetic.run_dir(), TreatmentSource::IntensityMedian),
        dir.path().join("median"),
        Overrides::default(),
    );
    let prep = exp.prepare().unwrap();
    let threshold = prep.treatment_threshold.unwrap();
    let mut train_p: Vec<f64> = prep.train.records.iter().map(|r| r.intensity).collect();
    train_p.sort_by(f64::total_cmp);
    let n = train_p.len();
    let median = if n.is_multiple_of(2) {
        (train_p[n / 2 - 1] + train_p[n / 2]) / 2.0
    } else {
        train_p[n / 2]
    };
    assert_eq!(threshold, median);
    for part in [&prep.train, &prep.validation, &prep.test] {
        assert!(part
            .records
            .iter()
            .all(|r| r.treatment == (r.intensity > threshold)));
    }
}

#[test]
fn evaluate_rejects_a_checkpoint_from_another_config() {
    let dir = tempfile::tempdir().unwrap();
    let exp = synth_experiment(dir.path());
    exp.train().unwrap();
    let other = Experiment::new(
        ExperimentConfig::from_toml_str(&SYNTH.replace("seed = 11", "seed = 12")).unwrap(),
        dir.path(),
        Overrides::default(),
    );
    let err = other.evaluate(Some(&exp.default_checkpoint())).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Config);
}

#[test]
fn evaluate_writes_report_curves_and_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let exp = synth_experiment(dir.path());
    exp.train().unwrap();
    let (report, m) = exp.evaluate(None).unwrap();
    let models: Vec<&str> = report.rows.iter().map(|r| r.model.as_str()).collect();
    for name in ["ctpm", "simple_ct", "rlearner", "random"] {
        assert!(models.contains(&name));
        for suffix in ["atetp", "cost"] {
            for ext in ["csv", "svg"] {
                let p = format!("curves/{name}_{suffix}.{ext}");
                assert!(m.files.iter().any(|f| f.path == p), "{p} missing");
            }
        }
    }
    for f in &m.files {
        let bytes = std::fs::read(exp.run_dir().join(&f.path)).unwrap();
        assert_eq!(bytes.len() as u64, f.bytes);
    }
    let text = std::fs::read_to_string(exp.run_dir().join("report.json")).unwrap();
    assert_eq!(ctpm::evaluation::Report::from_json(&text).unwrap(), report);
}

#[test]
fn checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let exp = synth_experiment(dir.path());
    let (ck, _) = exp.train().unwrap();
    assert_eq!(Checkpoint::load(exp.default_checkpoint()).unwrap(), ck);
    assert_eq!(ck.ctpm_training.restarts.len(), 2);
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let exp = synth_experiment(dir.path());
    exp.synth().unwrap();
    let mut config = file_config(&exp.run_dir(), TreatmentSource::Column("treatment".into()));
    if let DataSource::File(f) = &mut config.data {
        f.path = dir.path().join("absent.csv");
    }
    let err = Experiment::new(config, dir.path(), Overrides::default())
        .train()
        .unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

#[test]
fn predict_scores_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let exp = synth_experiment(dir.path());
    exp.synth().unwrap();
    exp.train().unwrap();
    let input = exp.run_dir().join("data/matches.csv");
    let out = dir.path().join("pred.csv");
    exp.predict(None, &input, Some(&out)).unwrap();
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        [
            "subject_id",
            "candidate_id",
            "optimal_intensity",
            "score_at_optimum",
            "score_at_observed"
        ]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 900);
    for r in &rows {
        let p: f64 = r[2].parse().unwrap();
        let best: f64 = r[3].parse().unwrap();
        let observed: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(best >= observed * (1.0 - 1e-9));
    }
}

fn toml_blocks(markdown: &str) -> Vec<String> {
    markdown
        .split("```toml\n")
        .skip(1)
        .map(|rest| rest.split_once("```").unwrap().0.to_string())
        .collect()
}

#[test]
fn guide_configs_parse_and_show_the_defaults() {
    let guide = include_str!("../../../book/src/cli.md");
    let blocks = toml_blocks(guide);
    assert_eq!(blocks.len(), 2);

    let full = ExperimentConfig::from_toml_str(&blocks[0]).unwrap();
    let minimal = ExperimentConfig::from_toml_str(
        "[data.synthetic]\n[objective]\nform = \"net_benefit\"\nlambda = 0.5\noutcomes = { reward = \"reward\", cost = \"cost\" }\n",
    )
    .unwrap();
    assert_eq!(full.split, minimal.split);
    assert_eq!(full.model, minimal.model);
    assert_eq!(full.train, minimal.train);
    assert_eq!(full.propensity, minimal.propensity);
    assert_eq!(full.evaluation, minimal.evaluation);
    assert_eq!(full.output, minimal.output);

    let file = format!("{}\n[objective]\nform = \"cost_efficiency\"\nlambda = 1.0\noutcomes = {{ reward = \"revenue\", cost = \"spend\" }}\n", blocks[1]);
    let config = ExperimentConfig::from_toml_str(&file).unwrap();
    let DataSource::File(source) = config.data else {
        panic!("expected a file source")
    };
    assert_eq!(
        source.schema.treatment,
        TreatmentSource::Column("treated".into())
    );
}
