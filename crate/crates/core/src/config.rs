//! Pipeline configuration: a TOML file with an explicit schema version,
//! overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::extended::DecodeMode;
use crate::pipeline::PipelineError;
use crate::scenario::DEFAULT_CORPUS_SIZE;
use crate::sim::{ProfileKind, RealizeParams};
use crate::training::TrainConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Master seed; also used as the training seed.
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub paths: PathsConfig,
    pub generation: GenerationConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub simulation: SimulationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 42,
            workers: 0,
            out_dir: PathBuf::from("out"),
            paths: PathsConfig::default(),
            generation: GenerationConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

/// Artifact locations; unset entries live in `out_dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reports_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedPaths {
    pub dataset: PathBuf,
    pub scenarios: PathBuf,
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub reports: PathBuf,
}

impl ResolvedPaths {
    pub fn report(&self, name: &str) -> PathBuf {
        self.reports.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub n_scenarios: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_scenarios: DEFAULT_CORPUS_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeKind {
    ConsistentArgmax,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub mode: DecodeKind,
    /// Used by the `threshold` mode.
    pub threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeKind::ConsistentArgmax,
            threshold: 0.5,
        }
    }
}

impl DecodeConfig {
    pub fn mode(&self) -> DecodeMode {
        match self.mode {
            DecodeKind::ConsistentArgmax => DecodeMode::ConsistentArgmax,
            DecodeKind::Threshold => DecodeMode::Threshold(self.threshold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimScope {
    /// Validation and test scenarios only.
    HeldOut,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub profiles: Vec<ProfileKind>,
    pub scope: SimScope,
    /// Fewer feasible held-out episodes than this widens the scope to all
    /// scenarios.
    pub min_episodes: usize,
    pub realize: RealizeParams,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            profiles: ProfileKind::ALL.to_vec(),
            scope: SimScope::HeldOut,
            min_episodes: 100,
            realize: RealizeParams::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self, PipelineError> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: Option<u32>,
        }
        let v: Version = toml::from_str(s).map_err(|e| PipelineError::ConfigParse(e.to_string()))?;
        if let Some(found) = v.schema_version {
            if found != CONFIG_SCHEMA_VERSION {
                return Err(PipelineError::SchemaVersionMismatch {
                    what: "config".into(),
                    expected: CONFIG_SCHEMA_VERSION.to_string(),
                    found: found.to_string(),
                });
            }
        }
        toml::from_str(s).map_err(|e| PipelineError::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::MissingInput(path.to_path_buf()));
        }
        let s = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&s)
    }

    /// Applies overrides, ties the training seed to the master seed and
    /// validates the result.
    pub fn finalize(mut self, o: &Overrides) -> Result<Self, PipelineError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(p) = &o.out {
            self.out_dir = p.clone();
        }
        self.train.seed = self.seed;
        self.train
            .validate()
            .map_err(|e| PipelineError::ConfigParse(e.to_string()))?;
        if self.generation.n_scenarios == 0 {
            return Err(PipelineError::ConfigParse("generation.n_scenarios must be positive".into()));
        }
        if self.simulation.profiles.is_empty() {
            return Err(PipelineError::ConfigParse("simulation.profiles is empty".into()));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of every setting that affects artifact contents. Paths and
    /// worker counts are excluded.
    pub fn config_hash(&self) -> String {
        let view = serde_json::json!({
            "schema_version": self.schema_version,
            "seed": self.seed,
            "generation": self.generation,
            "train": self.train,
            "decode": self.decode,
            "simulation": self.simulation,
        });
        let digest = Sha256::digest(view.to_string().as_bytes());
        format!("{digest:x}")[..16].to_string()
    }

    pub fn paths(&self) -> ResolvedPaths {
        let d = &self.out_dir;
        let or = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| d.join(name));
        ResolvedPaths {
            dataset: or(&self.paths.dataset, "dataset.jsonl"),
            scenarios: or(&self.paths.scenarios, "scenarios.json"),
            manifest: d.join("manifest.json"),
            checkpoint: or(&self.paths.checkpoint, "checkpoint.json"),
            reports: self.paths.reports_dir.clone().unwrap_or_else(|| d.clone()),
        }
    }
}
