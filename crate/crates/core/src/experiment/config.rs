use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ctpm::{ModelConfig, ObjectiveSpec, RankingIntensity, TrainConfig};
use crate::dataset::{SyntheticConfig, TableSchema};
use crate::error::{Error, Result};
use crate::evaluation::EvaluationConfig;
use crate::propensity::{PropensityFeatures, DEFAULT_CLIP_EPSILON};

/// Where the match records come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    File(FileSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    pub schema: TableSchema,
}

/// A document holding only the `[data]` section.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataOnly {
    data: DataSource,
}

impl DataSource {
    /// TOML text of a `[data]` section, ready to paste into a config.
    pub fn to_toml_section(&self) -> Result<String> {
        toml::to_string(&DataOnly { data: self.clone() }).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_section(text: &str) -> Result<Self> {
        Ok(toml::from_str::<DataOnly>(text)?.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Train, validation, test.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.6, 0.2, 0.2],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityKind {
    /// Treated fraction of the training split.
    #[default]
    Constant,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropensityConfig {
    pub kind: PropensityKind,
    pub features: PropensityFeatures,
    pub clip_epsilon: f64,
    /// Logistic fit only.
    pub iterations: usize,
    /// Logistic fit only.
    pub learning_rate: f64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            kind: PropensityKind::Constant,
            features: PropensityFeatures::Subject,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
            iterations: 500,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub grid_points: usize,
    pub tie_seed: u64,
    /// Intensity at which the full model scores each test record.
    pub ranking: RankingIntensity,
    /// Seed of the random baseline.
    pub random_seed: u64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let curves = EvaluationConfig::default();
        EvaluationSection {
            grid_points: curves.grid_points,
            tie_seed: curves.tie_seed,
            ranking: RankingIntensity::Observed,
            random_seed: 0,
        }
    }
}

impl EvaluationSection {
    pub fn curves(&self) -> EvaluationConfig {
        EvaluationConfig {
            grid_points: self.grid_points,
            tie_seed: self.tie_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Runs are written to `<dir>/run-<stamp>/`.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitConfig,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub propensity: PropensityConfig,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub output: OutputConfig,
}

/// The settings that determine a trained checkpoint.
#[derive(Serialize)]
struct TrainingIdentity<'a> {
    data: &'a DataSource,
    split: &'a SplitConfig,
    objective: &'a ObjectiveSpec,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    propensity: &'a PropensityConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        let r = self.split.ratios;
        let total: f64 = r.iter().sum();
        if r.iter().any(|v| !(*v > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split.ratios must be positive and sum to 1, got {r:?}"
            )));
        }
        if !self.objective.lambda.is_finite() {
            return Err(Error::Config("objective.lambda must be finite".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        let p = &self.propensity;
        if !(0.0..0.5).contains(&p.clip_epsilon) {
            return Err(Error::Config(
                "propensity.clip_epsilon must lie in [0, 0.5)".into(),
            ));
        }
        if p.kind == PropensityKind::Logistic && (p.iterations == 0 || !(p.learning_rate > 0.0)) {
            return Err(Error::Config(
                "propensity.iterations and propensity.learning_rate must be positive".into(),
            ));
        }
        if self.evaluation.grid_points == 0 {
            return Err(Error::Config(
                "evaluation.grid_points must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Hex digest of every setting that affects training. Names the run
    /// directory and ties checkpoints to configs.
    pub fn run_stamp(&self) -> String {
        let identity = TrainingIdentity {
            data: &self.data,
            split: &self.split,
            objective: &self.objective,
            model: &self.model,
            train: &self.train,
            propensity: &self.propensity,
        };
        let json = serde_json::to_vec(&identity).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
