//! Run configuration: JSON on disk, env-var seed override, canonical hash.

use crate::bpm::{BpmConfig, BpmMode};
use crate::decoder::{LossReduction, PredictionHead};
use crate::encoder::BackboneConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::SgdConfig;
use crate::rcam::RcamMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SEED_ENV_VAR: &str = "FSLAB_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEpochs {
    pub spatial: usize,
    pub temporal: usize,
    pub joint: usize,
}

impl Default for StageEpochs {
    fn default() -> Self {
        StageEpochs { spatial: 10, temporal: 10, joint: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub rcam_mode: RcamMode,
    #[serde(default = "default_bpm_n")]
    pub bpm_n: usize,
    #[serde(default)]
    pub bpm_mode: BpmMode,
    #[serde(default)]
    pub share_allocator: bool,
    #[serde(default = "default_true")]
    pub merge_branch: bool,
    #[serde(default)]
    pub prediction_head: PredictionHead,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default = "default_scales")]
    pub multi_scale: Vec<f64>,
    #[serde(default)]
    pub optimizer: SgdConfig,
    #[serde(default)]
    pub epochs: StageEpochs,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub loss_reduction: LossReduction,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
}

fn default_bpm_n() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_input_size() -> usize {
    64
}
fn default_scales() -> Vec<f64> {
    vec![0.75, 1.0, 1.25]
}
fn default_batch() -> usize {
    4
}
fn default_seed() -> u64 {
    7
}

impl RunConfig {
    /// Sensible desk-scale defaults for the given corpus and output paths.
    pub fn desk(corpus: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            backbone: BackboneConfig::default(),
            rcam_mode: RcamMode::default(),
            bpm_n: default_bpm_n(),
            bpm_mode: BpmMode::default(),
            share_allocator: false,
            merge_branch: true,
            prediction_head: PredictionHead::default(),
            input_size: default_input_size(),
            multi_scale: default_scales(),
            optimizer: SgdConfig::default(),
            epochs: StageEpochs::default(),
            batch_size: default_batch(),
            loss_reduction: LossReduction::default(),
            seed: default_seed(),
            corpus: corpus.into(),
            out_dir: out_dir.into(),
        }
    }

    /// Read a config file and apply the seed override from the environment.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let Ok(seed) = std::env::var(SEED_ENV_VAR) {
            cfg.seed = seed
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV_VAR} must be an integer, got {seed}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.input_size % self.backbone.top_stride() != 0 {
            return Err(Error::config(format!(
                "input_size {} is not divisible by the top stride {}",
                self.input_size,
                self.backbone.top_stride()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.multi_scale.is_empty() || self.multi_scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::config("multi_scale must be non-empty and positive"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            rcam_mode: self.rcam_mode,
            bpm: BpmConfig { n: self.bpm_n, mode: self.bpm_mode, share_allocator: self.share_allocator },
            merge_branch: self.merge_branch,
            prediction_head: self.prediction_head,
        }
    }

    /// Canonical JSON with the output directory blanked; what checkpoints
    /// embed, so runs that differ only in where they write are
    /// byte-compatible.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        serde_json::to_string(&c).expect("config serializes")
    }

    /// Hash of everything that shapes the training trajectory: the canonical
    /// config with the stopping point (epochs) normalised away. Resuming
    /// checks this hash, allowing both interrupted and extended runs.
    pub fn trajectory_hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.epochs = StageEpochs { spatial: 0, temporal: 0, joint: 0 };
        let json = serde_json::to_string(&c).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().into()
    }
}
