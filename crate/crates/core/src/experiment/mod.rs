//! Config-driven experiment runs: data synthesis, training, evaluation and
//! prediction, each writing into a run directory named by the config's
//! training stamp, with a manifest of every file written.

mod artifacts;
mod config;

use std::path::{Path, PathBuf};

pub use artifacts::{
    history_csv, sha256_hex, write_atomic, ArtifactWriter, Checkpoint, Manifest, ManifestEntry,
    RestartSummary, TrainingSummary, CHECKPOINT_VERSION,
};
pub use config::{
    DataSource, EvaluationSection, ExperimentConfig, FileSource, OutputConfig, PropensityConfig,
    PropensityKind, SplitConfig,
};

use crate::baselines::{fit_rlearner, random_scores, train_simple_ct};
use crate::ctpm::{train_restarts, Batch, CtpmModel};
use crate::dataset::{
    apply_normalizer, fit_normalizer, generate_synthetic, load_table, split, write_ground_truth_to,
    write_table_to, Dataset, NormalizationStats, SyntheticGroundTruth, TableSchema,
    TreatmentSource,
};
use crate::error::{Error, Result};
use crate::evaluation::{curve_csv, curve_svg, evaluate_all, Report};
use crate::propensity::{fit_constant, fit_logistic, PropensityModel};

/// Path overrides taken from the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Replaces the file path of a file data source.
    pub data: Option<PathBuf>,
    /// Replaces `output.dir`.
    pub output_dir: Option<PathBuf>,
}

/// Splits ready for fitting, with features normalized by training
/// statistics.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub test_indices: Vec<usize>,
    pub normalization: NormalizationStats,
    pub treatment_threshold: Option<f64>,
    pub propensity: PropensityModel,
    /// Treated fraction of the training split.
    pub overall_propensity: f64,
    /// Ground truth of the whole generated dataset, synthetic sources only.
    pub truth: Option<SyntheticGroundTruth>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// Directory that relative config paths are resolved against.
    pub base_dir: PathBuf,
    pub overrides: Overrides,
}

impl Experiment {
    pub fn new(
        config: ExperimentConfig,
        base_dir: impl Into<PathBuf>,
        overrides: Overrides,
    ) -> Self {
        Experiment {
            config,
            base_dir: base_dir.into(),
            overrides,
        }
    }

    pub fn load(config_path: impl AsRef<Path>, overrides: Overrides) -> Result<Self> {
        let path = config_path.as_ref();
        let config = ExperimentConfig::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Experiment::new(config, base, overrides))
    }

    pub fn run_stamp(&self) -> String {
        self.config.run_stamp()
    }

    pub fn run_dir(&self) -> PathBuf {
        let root = match &self.overrides.output_dir {
            Some(dir) => dir.clone(),
            None => self.base_dir.join(&self.config.output.dir),
        };
        root.join(format!("run-{}", self.run_stamp()))
    }

    pub fn default_checkpoint(&self) -> PathBuf {
        self.run_dir().join("checkpoint.json")
    }

    fn data_path(&self, source: &FileSource) -> PathBuf {
        match &self.overrides.data {
            Some(p) => p.clone(),
            None => self.base_dir.join(&source.path),
        }
    }

    pub fn load_data(&self) -> Result<(Dataset, Option<SyntheticGroundTruth>)> {
        match &self.config.data {
            DataSource::Synthetic(cfg) => {
                let (ds, truth) = generate_synthetic(cfg)?;
                Ok((ds, Some(truth)))
            }
            DataSource::File(source) => {
                let path = self.data_path(source);
                log::info!("loading {}", path.display());
                if !path.is_file() {
                    return Err(Error::Data(format!(
                        "data file {} not found",
                        path.display()
                    )));
                }
                Ok((load_table(&path, &source.schema)?, None))
            }
        }
    }

    fn derives_treatment(&self) -> bool {
        matches!(&self.config.data, DataSource::File(f) if f.schema.treatment == TreatmentSource::IntensityMedian)
    }

    /// Loads, splits, re-derives median treatment from the training split
    /// when configured, normalizes and fits the propensity model.
    pub fn prepare(&self) -> Result<Prepared> {
        let c = &self.config;
        let (ds, truth) = self.load_data()?;
        let mut s = split(&ds, c.split.ratios, c.split.seed)?;
        let treatment_threshold = if self.derives_treatment() {
            let m = s
                .train
                .intensity_median()
                .expect("non-empty training split");
            for part in [&mut s.train, &mut s.validation, &mut s.test] {
                part.assign_treatment_by_threshold(m);
            }
            Some(m)
        } else {
            None
        };
        for (name, part) in [
            ("train", &s.train),
            ("validation", &s.validation),
            ("test", &s.test),
        ] {
            if part.is_empty() {
                return Err(Error::Data(format!("{name} split is empty")));
            }
        }
        c.objective
            .validate(&s.train)
            .map_err(|e| Error::Config(format!("objective: {e}")))?;

        let normalization = fit_normalizer(&s.train)?;
        let train = apply_normalizer(&normalization, &s.train)?;
        let validation = apply_normalizer(&normalization, &s.validation)?;
        let test = apply_normalizer(&normalization, &s.test)?;
        let p = &c.propensity;
        let propensity = match p.kind {
            PropensityKind::Constant => fit_constant(&train, p.clip_epsilon)?,
            PropensityKind::Logistic => fit_logistic(
                &train,
                p.features,
                p.iterations,
                p.learning_rate,
                p.clip_epsilon,
            )?,
        };
        let overall_propensity = train.treated_count() as f64 / train.len() as f64;
        Ok(Prepared {
            train,
            validation,
            test,
            test_indices: s.test_indices,
            normalization,
            treatment_threshold,
            propensity,
            overall_propensity,
            truth,
        })
    }

    /// Writes the generated records, the ground-truth sidecar and
    /// `data/source.toml`, a `[data.file]` section that reads the records
    /// back. Its path is relative, so adjust it to where the config lives.
    pub fn synth(&self) -> Result<Manifest> {
        let DataSource::Synthetic(cfg) = &self.config.data else {
            return Err(Error::Config(
                "synth requires a [data.synthetic] section".into(),
            ));
        };
        let (ds, truth) = generate_synthetic(cfg)?;
        log::info!("generated {} records", ds.len());
        let schema = TableSchema::for_dataset(&ds);
        let mut w = ArtifactWriter::new(self.run_dir(), "synth", &self.run_stamp());
        let mut table = Vec::new();
        write_table_to(&ds, &schema, &mut table)?;
        w.write("data/matches.csv", &table)?;
        let mut sidecar = Vec::new();
        write_ground_truth_to(&truth, &ds, &mut sidecar)?;
        w.write("data/ground_truth.csv", &sidecar)?;
        let source = DataSource::File(FileSource {
            path: "matches.csv".into(),
            schema,
        });
        w.write("data/source.toml", source.to_toml_section()?.as_bytes())?;
        w.finish()
    }

    pub fn train(&self) -> Result<(Checkpoint, Manifest)> {
        let c = &self.config;
        let prep = self.prepare()?;
        let tb = Batch::new(&prep.train, &prep.propensity)?;
        let vb = Batch::new(&prep.validation, &prep.propensity)?;
        let (dx, dy) = (prep.train.subject_dim(), prep.train.candidate_dim());
        let e = prep.overall_propensity;
        log::info!(
            "training on {} records ({} validation), overall propensity {e:.4}",
            prep.train.len(),
            prep.validation.len()
        );

        log::info!("training the full model");
        let ctpm = train_restarts(
            |rng| CtpmModel::init(dx, dy, &c.model, prep.propensity.clone(), e, rng),
            &tb,
            &vb,
            &c.objective,
            &c.train,
        )?;
        log::info!("training the simple weighting baseline");
        let simple = train_simple_ct(&tb, &vb, &c.objective, &c.train, e)?;
        log::info!("fitting the R-learner");
        let rlearner = fit_rlearner(&prep.train, &c.objective, e)?;

        let checkpoint = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            run_stamp: self.run_stamp(),
            objective: c.objective.clone(),
            subject_features: prep.train.subject_features.clone(),
            candidate_features: prep.train.candidate_features.clone(),
            normalization: prep.normalization,
            treatment_threshold: prep.treatment_threshold,
            propensity: prep.propensity,
            overall_propensity: e,
            ctpm_training: TrainingSummary::new(ctpm.selected_restart, &ctpm.histories),
            ctpm: ctpm.model,
            simple_ct_training: TrainingSummary::new(simple.selected_restart, &simple.histories),
            simple_ct: simple.model,
            rlearner,
        };
        let mut w = ArtifactWriter::new(self.run_dir(), "train", &self.run_stamp());
        w.write("checkpoint.json", checkpoint.to_json()?.as_bytes())?;
        w.write("history/ctpm.csv", &history_csv(&ctpm.histories)?)?;
        w.write("history/simple_ct.csv", &history_csv(&simple.histories)?)?;
        Ok((checkpoint, w.finish()?))
    }

    fn load_checkpoint(&self, path: Option<&Path>) -> Result<Checkpoint> {
        let path = path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.default_checkpoint());
        let ck = Checkpoint::load(&path)?;
        if ck.run_stamp != self.run_stamp() {
            return Err(Error::Config(format!(
                "checkpoint {} was trained under stamp {}, but this config has stamp {}",
                path.display(),
                ck.run_stamp,
                self.run_stamp()
            )));
        }
        Ok(ck)
    }

    /// Scores the test split with every model and the random baseline.
    pub fn evaluate(&self, checkpoint: Option<&Path>) -> Result<(Report, Manifest)> {
        let c = &self.config;
        let ck = self.load_checkpoint(checkpoint)?;
        let prep = self.prepare()?;
        let test = &prep.test;
        let batch = Batch::new(test, &ck.propensity)?;
        let scored = vec![
            (
                "ctpm".to_string(),
                ck.ctpm.score_batch(&batch, c.evaluation.ranking)?,
            ),
            ("simple_ct".to_string(), ck.simple_ct.score_batch(&batch)?),
            (
                "rlearner".to_string(),
                ck.rlearner.score_dataset(&ck.objective, test)?,
            ),
            (
                "random".to_string(),
                random_scores(test.len(), c.evaluation.random_seed),
            ),
        ];
        let report = evaluate_all(&scored, &batch, &ck.objective, &c.evaluation.curves())?;
        log::info!("evaluated {} test records", test.len());

        let mut w = ArtifactWriter::new(self.run_dir(), "eval", &self.run_stamp());
        w.write("report.txt", report.to_table().as_bytes())?;
        let mut json = report.to_json()?;
        json.push('\n');
        w.write("report.json", json.as_bytes())?;
        for row in &report.rows {
            for curve in [&row.atetp, &row.cost] {
                let stem = format!("curves/{}_{}", row.model, curve.kind.file_suffix());
                w.write(&format!("{stem}.csv"), &curve_csv(curve)?)?;
                let title = format!("{} {}", row.model, curve.kind.title());
                w.write(&format!("{stem}.svg"), curve_svg(curve, &title).as_bytes())?;
            }
        }
        let mut embeddings = Vec::new();
        ck.ctpm.export_embeddings_to(test, &mut embeddings)?;
        w.write("embeddings.csv", &embeddings)?;
        Ok((report, w.finish()?))
    }

    /// Per-record optimal intensity and scores for an unlabeled match file.
    pub fn predict(
        &self,
        checkpoint: Option<&Path>,
        input: &Path,
        output: Option<&Path>,
    ) -> Result<Manifest> {
        let ck = self.load_checkpoint(checkpoint)?;
        let columns = match &self.config.data {
            DataSource::File(f) => PredictColumns {
                delimiter: f.schema.delimiter,
                subject_id: f.schema.subject_id.clone(),
                candidate_id: f.schema.candidate_id.clone(),
                intensity: f.schema.intensity.clone(),
            },
            DataSource::Synthetic(_) => PredictColumns::default(),
        };
        let rows = read_prediction_input(input, &columns, &ck)?;
        log::info!("predicting {} records", rows.len());

        let mut out = csv::Writer::from_writer(Vec::new());
        let observed = rows.first().is_some_and(|r| r.intensity.is_some());
        let mut header = vec![
            "subject_id",
            "candidate_id",
            "optimal_intensity",
            "score_at_optimum",
        ];
        if observed {
            header.push("score_at_observed");
        }
        out.write_record(&header)?;
        for r in &rows {
            let p = ck.ctpm.optimal_intensity(&r.x, &r.y)?;
            let mut line = vec![
                r.subject_id.clone(),
                r.candidate_id.clone(),
                p.to_string(),
                ck.ctpm.score(&r.x, &r.y, p)?.to_string(),
            ];
            if let Some(obs) = r.intensity {
                line.push(ck.ctpm.score(&r.x, &r.y, obs)?.to_string());
            }
            out.write_record(&line)?;
        }
        let bytes = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut w = ArtifactWriter::new(self.run_dir(), "predict", &self.run_stamp());
        match output {
            Some(path) => w.write_at(path, &bytes)?,
            None => {
                w.write("predictions.csv", &bytes)?;
            }
        }
        w.finish()
    }
}

#[derive(Debug, Clone)]
struct PredictColumns {
    delimiter: char,
    subject_id: String,
    candidate_id: String,
    intensity: String,
}

impl Default for PredictColumns {
    fn default() -> Self {
        PredictColumns {
            delimiter: ',',
            subject_id: "subject_id".into(),
            candidate_id: "candidate_id".into(),
            intensity: "intensity".into(),
        }
    }
}

struct PredictRow {
    subject_id: String,
    candidate_id: String,
    x: Vec<f64>,
    y: Vec<f64>,
    intensity: Option<f64>,
}

/// Reads ids, features and, when present, the logged intensity; features
/// come out normalized with the checkpoint's statistics.
fn read_prediction_input(
    path: &Path,
    cols: &PredictColumns,
    ck: &Checkpoint,
) -> Result<Vec<PredictRow>> {
    let delimiter = u8::try_from(cols.delimiter)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::Schema(format!("delimiter {:?} is not ASCII", cols.delimiter)))?;
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Data(format!(
            "cannot open prediction input {}: {e}",
            path.display()
        ))
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_reader(file);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::Schema(format!("prediction input lacks column '{name}'")))
    };
    let sid = require(&cols.subject_id)?;
    let cid = require(&cols.candidate_id)?;
    let xs = ck
        .subject_features
        .iter()
        .map(|n| require(n))
        .collect::<Result<Vec<_>>>()?;
    let ys = ck
        .candidate_features
        .iter()
        .map(|n| require(n))
        .collect::<Result<Vec<_>>>()?;
    let p_col = find(&cols.intensity);

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |idx: usize| -> Result<f64> {
            let raw = rec.get(idx).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Row {
                    row: line,
                    message: format!("cannot parse '{raw}' in column '{}'", &header[idx]),
                })
        };
        let x = xs
            .iter()
            .zip(&ck.normalization.subject)
            .map(|(&c, s)| num(c).map(|v| s.apply(v)))
            .collect::<Result<_>>()?;
        let y = ys
            .iter()
            .zip(&ck.normalization.candidate)
            .map(|(&c, s)| num(c).map(|v| s.apply(v)))
            .collect::<Result<_>>()?;
        let intensity = match p_col {
            Some(c) => {
                let p = num(c)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Row {
                        row: line,
                        message: format!("intensity {p} outside [0, 1]"),
                    });
                }
                Some(p)
            }
            None => None,
        };
        rows.push(PredictRow {
            subject_id: rec.get(sid).unwrap_or("").to_string(),
            candidate_id: rec.get(cid).unwrap_or("").to_string(),
            x,
            y,
            intensity,
        });
    }
    if rows.is_empty() {
        return Err(Error::Data("prediction input has no data rows".into()));
    }
    Ok(rows)
}
