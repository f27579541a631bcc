//! Top-down decoders with pyramid pooling on each downward transition, plus
//! the training objective.
//!
//! The coarsest 32-channel feature seeds the recursion; at every transition
//! the incoming feature is pyramid-pooled, upsampled to the next finer level,
//! concatenated with that level's skip feature (32 + 32 = 64 channels) and
//! reduced back to 32. A single-filter 1x1 head plus sigmoid produces the
//! prediction, which is then upsampled to the input resolution.

use crate::encoder::ConvBlock;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, ParamStore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LEVELS: usize = crate::data::PYRAMID_LEVELS;
const CH: usize = crate::bpm::BPM_CHANNELS;

/// Epsilon used to keep sigmoid outputs strictly inside (0, 1) for the logs.
pub const LOSS_EPS: f64 = 1e-7;

pub const PPM_BINS: [usize; 4] = [1, 2, 3, 6];
const PPM_BRANCH_CH: usize = 8;

/// Pyramid pooling: pool at fixed bin sizes (clamped to the feature size),
/// map each to a thin branch, upsample, concatenate and fuse back to the
/// input width. Output shape equals input shape.
pub struct Ppm {
    branches: Vec<Conv2d>,
    fuse: Conv2d,
}

impl Ppm {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str) -> Result<Ppm> {
        let mut branches = Vec::with_capacity(PPM_BINS.len());
        for bin in PPM_BINS {
            branches.push(Conv2d::new(
                store,
                rng,
                &format!("{prefix}.bin{bin}"),
                CH,
                PPM_BRANCH_CH,
                1,
                1,
                0,
            )?);
        }
        let fuse = Conv2d::new(
            store,
            rng,
            &format!("{prefix}.fuse"),
            PPM_BRANCH_CH * PPM_BINS.len(),
            CH,
            1,
            1,
            0,
        )?;
        Ok(Ppm { branches, fuse })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[0] != CH {
            return Err(Error::contract(format!("ppm expects [{CH},h,w], got {shape:?}")));
        }
        let (h, w) = (shape[1], shape[2]);
        let mut parts = Vec::with_capacity(PPM_BINS.len());
        for (bin, conv) in PPM_BINS.iter().zip(&self.branches) {
            let bh = (*bin).min(h);
            let bw = (*bin).min(w);
            let pooled = g.adaptive_avg_pool(x, bh, bw)?;
            let mapped = conv.forward(g, store, pooled)?;
            parts.push(g.resize(mapped, h, w)?);
        }
        let cat = g.concat_channels(&parts)?;
        let fused = self.fuse.forward(g, store, cat)?;
        Ok(g.relu(fused))
    }
}

/// One of the two decoders (fused-feature and motion-feature paths each own
/// a full, disjoint parameter set).
pub struct Decoder {
    ppm: Vec<Ppm>,          // indexed by source level 1..=3 (ppm[j-1] pools level j)
    reduce: Vec<ConvBlock>, // indexed by target level 0..=2, 64 -> 32
    head: Conv2d,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str) -> Result<Decoder> {
        let mut ppm = Vec::with_capacity(LEVELS - 1);
        for j in 1..LEVELS {
            ppm.push(Ppm::new(store, rng, &format!("{prefix}.ppm{j}"))?);
        }
        let mut reduce = Vec::with_capacity(LEVELS - 1);
        for j in 0..LEVELS - 1 {
            reduce.push(ConvBlock::new(
                store,
                rng,
                &format!("{prefix}.reduce{j}"),
                2 * CH,
                CH,
                3,
                1,
                1,
            )?);
        }
        let head = Conv2d::new(store, rng, &format!("{prefix}.head"), CH, 1, 1, 1, 0)?;
        // start near the foreground base rate instead of 0.5 so early
        // gradients carry shape information rather than a constant offset
        store.get_mut(head.b).data_mut()[0] = -2.0;
        Ok(Decoder { ppm, reduce, head })
    }

    /// Decode a 32-channel pyramid into a [1, out_h, out_w] map in [0, 1].
    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        levels: &[Var],
        out_h: usize,
        out_w: usize,
    ) -> Result<Var> {
        if levels.len() != LEVELS {
            return Err(Error::contract(format!(
                "decoder expects {LEVELS} levels, got {}",
                levels.len()
            )));
        }
        let mut down = levels[LEVELS - 1];
        for j in (0..LEVELS - 1).rev() {
            let pooled = self.ppm[j].forward(g, store, down)?;
            let shape = g.shape(levels[j]).to_vec();
            let up = g.resize(pooled, shape[1], shape[2])?;
            let cat = g.concat_channels(&[levels[j], up])?;
            down = self.reduce[j].forward(g, store, cat)?;
        }
        let logits = self.head.forward(g, store, down)?;
        let prob = g.sigmoid(logits);
        g.resize(prob, out_h, out_w)
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Sum over pixels, the written form of the objective.
    Sum,
    /// Mean over pixels; keeps learning rates portable across input sizes.
    #[default]
    Mean,
}

/// Binary cross-entropy of a sigmoid map against a binary target. The map is
/// epsilon-clamped so the result stays finite for saturated predictions.
pub fn bce_loss(
    g: &mut Graph,
    s: Var,
    target: &crate::tensor::Tensor,
    reduction: LossReduction,
) -> Result<Var> {
    if g.shape(s) != target.shape() {
        return Err(Error::contract(format!(
            "bce shape mismatch: {:?} vs {:?}",
            g.shape(s),
            target.shape()
        )));
    }
    let clamped = g.clamp(s, LOSS_EPS, 1.0 - LOSS_EPS);
    let sum = g.bce_sum(clamped, target)?;
    Ok(match reduction {
        LossReduction::Sum => sum,
        LossReduction::Mean => {
            let n = target.len() as f64;
            g.scale(sum, 1.0 / n)
        }
    })
}

/// Overall objective: both prediction maps are supervised by the same mask.
pub fn total_loss(
    g: &mut Graph,
    s_appearance: Var,
    s_motion: Var,
    target: &crate::tensor::Tensor,
    reduction: LossReduction,
) -> Result<Var> {
    let la = bce_loss(g, s_appearance, target, reduction)?;
    let lm = bce_loss(g, s_motion, target, reduction)?;
    g.add(la, lm)
}

/// Which decoded map is reported as the final prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PredictionHead {
    #[default]
    #[serde(rename = "SA")]
    Appearance,
    #[serde(rename = "SM")]
    Motion,
    #[serde(rename = "mean")]
    Mean,
}

impl PredictionHead {
    pub fn as_str(&self) -> &'static str {
        match self {
            PredictionHead::Appearance => "SA",
            PredictionHead::Motion => "SM",
            PredictionHead::Mean => "mean",
        }
    }
}
