//! Assembly of the full two-stream network and its partial (single-branch)
//! forward passes used by the pretraining stages.

use crate::bpm::{allocate, Allocator, BpmChain, BpmConfig};
use crate::decoder::{Decoder, PredictionHead};
use crate::encoder::{Backbone, BackboneConfig, MergeBranch};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::ParamStore;
use crate::rcam::{Rcam, RcamMode};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub rcam_mode: RcamMode,
    #[serde(default)]
    pub bpm: BpmConfig,
    /// When false, the merging branch is dropped and the attention outputs
    /// are fused parameter-free (two-branch ablation).
    #[serde(default = "default_true")]
    pub merge_branch: bool,
    #[serde(default)]
    pub prediction_head: PredictionHead,
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            rcam_mode: RcamMode::default(),
            bpm: BpmConfig::default(),
            merge_branch: true,
            prediction_head: PredictionHead::default(),
        }
    }
}

pub struct Network {
    pub appearance: Backbone,
    pub motion: Backbone,
    pub merge: Option<MergeBranch>,
    pub rcam: Rcam,
    pub alloc_f: Allocator,
    pub alloc_g: Allocator,
    pub bpm: BpmChain,
    pub decoder_f: Decoder,
    pub decoder_g: Decoder,
    cfg: ModelConfig,
}

pub struct Predictions {
    pub s_appearance: Var,
    pub s_motion: Var,
}

impl Network {
    /// Register every parameter (in a stable order) and return the wired
    /// network. The order is part of the checkpoint format.
    pub fn build(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Network> {
        cfg.backbone.validate()?;
        let appearance = Backbone::new(store, rng, "app", &cfg.backbone)?;
        let motion = Backbone::new(store, rng, "motion", &cfg.backbone)?;
        let merge = if cfg.merge_branch {
            Some(MergeBranch::new(store, rng, "merge", &cfg.backbone)?)
        } else {
            None
        };
        let rcam = Rcam::new(store, rng, "rcam", &cfg.backbone, cfg.rcam_mode)?;
        let widths = cfg.backbone.widths();
        let alloc_f = Allocator::new(store, rng, "alloc_f", widths)?;
        let alloc_g = Allocator::new(store, rng, "alloc_g", widths)?;
        let bpm = BpmChain::new(store, rng, "bpm", &cfg.bpm)?;
        let decoder_f = Decoder::new(store, rng, "dec_f")?;
        let decoder_g = Decoder::new(store, rng, "dec_g")?;
        Ok(Network {
            appearance,
            motion,
            merge,
            rcam,
            alloc_f,
            alloc_g,
            bpm,
            decoder_f,
            decoder_g,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Full two-stream forward pass. Inputs are the RGB frame and the
    /// colour-encoded flow, both [3,H,W] with H, W divisible by the top
    /// stride.
    pub fn forward_full(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        app_input: Var,
        motion_input: Var,
    ) -> Result<Predictions> {
        let shape = g.shape(app_input).to_vec();
        if g.shape(motion_input) != shape.as_slice() {
            return Err(Error::contract("appearance and motion inputs disagree on size"));
        }
        let (h, w) = (shape[1], shape[2]);
        let x = self.appearance.forward(g, store, app_input)?;
        let y = self.motion.forward(g, store, motion_input)?;
        let z = match &self.merge {
            Some(merge) => self.rcam.forward(g, store, merge, &x, &y)?,
            None => self.rcam.forward_two_branch(g, store, &x, &y)?,
        };
        let state = allocate(g, store, &self.alloc_f, &self.alloc_g, &z, &y)?;
        let state = self.bpm.forward(g, store, &self.alloc_f, &self.alloc_g, state)?;
        let s_appearance = self.decoder_f.decode(g, store, &state.f, h, w)?;
        let s_motion = self.decoder_g.decode(g, store, &state.g, h, w)?;
        Ok(Predictions { s_appearance, s_motion })
    }

    /// Spatial pretraining path: appearance backbone, its allocator and its
    /// decoder only.
    pub fn forward_appearance(&self, g: &mut Graph, store: &ParamStore, input: Var) -> Result<Var> {
        let shape = g.shape(input).to_vec();
        let x = self.appearance.forward(g, store, input)?;
        let f = self.alloc_f.forward(g, store, &x)?;
        self.decoder_f.decode(g, store, &f, shape[1], shape[2])
    }

    /// Temporal pretraining path: motion backbone, its allocator and its
    /// decoder only.
    pub fn forward_motion(&self, g: &mut Graph, store: &ParamStore, input: Var) -> Result<Var> {
        let shape = g.shape(input).to_vec();
        let y = self.motion.forward(g, store, input)?;
        let gg = self.alloc_g.forward(g, store, &y)?;
        self.decoder_g.decode(g, store, &gg, shape[1], shape[2])
    }

    /// Combine the two maps into the reported prediction.
    pub fn select_prediction(&self, g: &mut Graph, preds: &Predictions) -> Result<Var> {
        Ok(match self.cfg.prediction_head {
            PredictionHead::Appearance => preds.s_appearance,
            PredictionHead::Motion => preds.s_motion,
            PredictionHead::Mean => {
                let sum = g.add(preds.s_appearance, preds.s_motion)?;
                g.scale(sum, 0.5)
            }
        })
    }
}
