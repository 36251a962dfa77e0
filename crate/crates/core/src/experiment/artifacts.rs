use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{RLearnerModel, SimpleCtModel};
use crate::ctpm::{CtpmModel, ObjectiveSpec, RestartHistory};
use crate::dataset::NormalizationStats;
use crate::error::{Error, Result};
use crate::propensity::PropensityModel;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the run directory when inside it.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub run_stamp: String,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }
}

/// Collects the files one command writes and finishes with a manifest.
#[derive(Debug)]
pub struct ArtifactWriter {
    run_dir: PathBuf,
    command: String,
    run_stamp: String,
    files: Vec<ManifestEntry>,
}

impl ArtifactWriter {
    pub fn new(run_dir: impl Into<PathBuf>, command: &str, run_stamp: &str) -> Self {
        ArtifactWriter {
            run_dir: run_dir.into(),
            command: command.into(),
            run_stamp: run_stamp.into(),
            files: Vec::new(),
        }
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    /// Writes a file given relative to the run directory.
    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.run_dir.join(relative);
        write_atomic(&path, bytes)?;
        self.record(relative.to_string(), bytes);
        Ok(path)
    }

    /// Writes a file at an explicit location, recorded by its given path
    /// unless it falls inside the run directory.
    pub fn write_at(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        let shown = match path.strip_prefix(&self.run_dir) {
            Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
            Err(_) => path.to_string_lossy().into_owned(),
        };
        self.record(shown, bytes);
        Ok(())
    }

    fn record(&mut self, path: String, bytes: &[u8]) {
        self.files.retain(|f| f.path != path);
        self.files.push(ManifestEntry {
            path,
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
    }

    pub fn finish(mut self) -> Result<Manifest> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: self.command,
            run_stamp: self.run_stamp,
            files: self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(
            &self.run_dir.join(Manifest::file_name(&manifest.command)),
            text.as_bytes(),
        )?;
        Ok(manifest)
    }
}

/// Which restart and update count a training run kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub selected_restart: usize,
    pub selected_iteration: usize,
    pub validation_loss: f64,
    pub restarts: Vec<RestartSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub selected_iteration: Option<usize>,
    pub validation_loss: Option<f64>,
    pub aborted: Option<String>,
}

impl TrainingSummary {
    pub fn new(selected_restart: usize, histories: &[RestartHistory]) -> Self {
        let chosen = &histories[selected_restart];
        TrainingSummary {
            selected_restart,
            selected_iteration: chosen
                .selected_iteration
                .expect("selected restart completed"),
            validation_loss: chosen
                .selected_validation_loss
                .expect("selected restart completed"),
            restarts: histories
                .iter()
                .map(|h| RestartSummary {
                    restart: h.restart,
                    seed: h.seed,
                    selected_iteration: h.selected_iteration,
                    validation_loss: h.selected_validation_loss,
                    aborted: h.aborted.clone(),
                })
                .collect(),
        }
    }
}

/// Everything `eval` and `predict` need from a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub run_stamp: String,
    pub objective: ObjectiveSpec,
    pub subject_features: Vec<String>,
    pub candidate_features: Vec<String>,
    pub normalization: NormalizationStats,
    /// Set when treatment is derived from the intensity median of the
    /// training split.
    pub treatment_threshold: Option<f64>,
    pub propensity: PropensityModel,
    pub overall_propensity: f64,
    pub ctpm: CtpmModel,
    pub ctpm_training: TrainingSummary,
    pub simple_ct: SimpleCtModel,
    pub simple_ct_training: TrainingSummary,
    pub rlearner: RLearnerModel,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("not a checkpoint: {e}")))?;
        if probe.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
                probe.format_version
            )));
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// One row per restart and update: `restart,seed,iteration,train_loss,validation_loss`.
pub fn history_csv(histories: &[RestartHistory]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "restart",
        "seed",
        "iteration",
        "train_loss",
        "validation_loss",
    ])?;
    for h in histories {
        for (i, (t, v)) in h.train_loss.iter().zip(&h.validation_loss).enumerate() {
            w.write_record([
                h.restart.to_string(),
                h.seed.to_string(),
                i.to_string(),
                t.to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
