//! Relational cross-attention between the appearance and motion pyramids.
//!
//! Per level, each branch is squeezed to a channel vector (global average
//! pooling), passed through the other branch's 1x1 transform and a sigmoid,
//! and the resulting attention vector re-weights the opposite feature map.
//! The direction strategy selects which of the two transmissions happen.

use crate::encoder::{BackboneConfig, MergeBranch};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Dense, ParamStore};
use crate::tensor::{self, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Direction strategy for the cross-attention stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RcamMode {
    /// Both branches re-weight each other simultaneously.
    #[default]
    #[serde(rename = "full-duplex")]
    FullDuplex,
    /// Appearance guides motion; appearance passes through untouched.
    #[serde(rename = "simplex-app-to-mo")]
    SimplexAppToMo,
    /// Motion guides appearance; motion passes through untouched.
    #[serde(rename = "simplex-mo-to-app")]
    SimplexMoToApp,
    /// No transmission at all; both branches pass through.
    #[serde(rename = "direction-independent")]
    DirectionIndependent,
}

impl RcamMode {
    pub const ALL: [RcamMode; 4] = [
        RcamMode::FullDuplex,
        RcamMode::SimplexAppToMo,
        RcamMode::SimplexMoToApp,
        RcamMode::DirectionIndependent,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RcamMode::FullDuplex => "full-duplex",
            RcamMode::SimplexAppToMo => "simplex-app-to-mo",
            RcamMode::SimplexMoToApp => "simplex-mo-to-app",
            RcamMode::DirectionIndependent => "direction-independent",
        }
    }
}

impl std::str::FromStr for RcamMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<RcamMode> {
        RcamMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown rcam mode: {s}")))
    }
}

/// Per-level 1x1 channel transforms. `phi` consumes the appearance vector to
/// weight motion, `theta` consumes the motion vector to weight appearance;
/// only the transforms a mode actually uses are allocated.
pub struct RcamLevelParams {
    pub phi: Option<Dense>,
    pub theta: Option<Dense>,
    pub channels: usize,
}

pub struct Rcam {
    pub levels: Vec<RcamLevelParams>,
    pub mode: RcamMode,
}

impl Rcam {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &BackboneConfig,
        mode: RcamMode,
    ) -> Result<Rcam> {
        let widths = cfg.widths();
        let mut levels = Vec::with_capacity(widths.len());
        for (j, &c) in widths.iter().enumerate() {
            let phi = match mode {
                RcamMode::FullDuplex | RcamMode::SimplexAppToMo => {
                    Some(Dense::new(store, rng, &format!("{prefix}.level{j}.phi"), c, c)?)
                }
                _ => None,
            };
            let theta = match mode {
                RcamMode::FullDuplex | RcamMode::SimplexMoToApp => {
                    Some(Dense::new(store, rng, &format!("{prefix}.level{j}.theta"), c, c)?)
                }
                _ => None,
            };
            levels.push(RcamLevelParams { phi, theta, channels: c });
        }
        Ok(Rcam { levels, mode })
    }

    /// Cross-attention at one level: returns the (appearance, motion)
    /// candidate features.
    pub fn cross_attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        level: usize,
        x: Var,
        y: Var,
    ) -> Result<(Var, Var)> {
        let params = self
            .levels
            .get(level)
            .ok_or_else(|| Error::contract(format!("rcam level {level} out of range")))?;
        if g.shape(x) != g.shape(y) {
            return Err(Error::contract(format!(
                "cross_attend shape mismatch: {:?} vs {:?}",
                g.shape(x),
                g.shape(y)
            )));
        }
        if g.shape(x)[0] != params.channels {
            return Err(Error::contract(format!(
                "cross_attend channel mismatch: features {} vs params {}",
                g.shape(x)[0],
                params.channels
            )));
        }
        let weight_by = |g: &mut Graph, feat: Var, other: Var, map: &Dense| -> Result<Var> {
            let vec = g.gap(other)?;
            let logits = map.forward(g, store, vec)?;
            let attn = g.sigmoid(logits);
            g.channel_scale(feat, attn)
        };
        let (qx, qy) = match self.mode {
            RcamMode::FullDuplex => {
                let qx = weight_by(g, x, y, params.theta.as_ref().expect("theta allocated"))?;
                let qy = weight_by(g, y, x, params.phi.as_ref().expect("phi allocated"))?;
                (qx, qy)
            }
            RcamMode::SimplexAppToMo => {
                let qy = weight_by(g, y, x, params.phi.as_ref().expect("phi allocated"))?;
                (x, qy)
            }
            RcamMode::SimplexMoToApp => {
                let qx = weight_by(g, x, y, params.theta.as_ref().expect("theta allocated"))?;
                (qx, y)
            }
            RcamMode::DirectionIndependent => (x, y),
        };
        Ok((qx, qy))
    }

    /// Full pass over both pyramids: cross-attend each level, then run the
    /// merge block chain to produce the merged pyramid.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        merge: &MergeBranch,
        appearance: &[Var; 4],
        motion: &[Var; 4],
    ) -> Result<[Var; 4]> {
        let mut z_prev: Option<Var> = None;
        let mut out = [appearance[0]; 4];
        for j in 0..4 {
            let (qx, qy) = self.cross_attend(g, store, j, appearance[j], motion[j])?;
            let q_sum = g.add(qx, qy)?;
            let z = merge.merge_step(g, store, j, q_sum, z_prev)?;
            out[j] = z;
            z_prev = Some(z);
        }
        Ok(out)
    }

    /// Two-branch ablation: no merge blocks, the merged feature is
    /// `Q_x (+) Q_y (+) down(Z_prev)` with a parameter-free downsample
    /// (2x2 mean pooling plus channel duplication, which matches the
    /// doubling width schedule).
    pub fn forward_two_branch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        appearance: &[Var; 4],
        motion: &[Var; 4],
    ) -> Result<[Var; 4]> {
        let mut z_prev: Option<Var> = None;
        let mut out = [appearance[0]; 4];
        for j in 0..4 {
            let (qx, qy) = self.cross_attend(g, store, j, appearance[j], motion[j])?;
            let mut z = g.add(qx, qy)?;
            if let Some(zp) = z_prev {
                let shape = g.shape(z).to_vec();
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let prev_c = g.shape(zp)[0];
                let pooled = g.adaptive_avg_pool(zp, h, w)?;
                let grown = if prev_c * 2 == c {
                    g.concat_channels(&[pooled, pooled])?
                } else if prev_c == c {
                    pooled
                } else {
                    return Err(Error::contract(format!(
                        "two-branch variant needs doubling widths, got {prev_c} -> {c}"
                    )));
                };
                z = g.add(z, grown)?;
            }
            out[j] = z;
            z_prev = Some(z);
        }
        Ok(out)
    }
}

/// Per-channel spatial mean: the squeeze step of the attention, exposed as a
/// plain tensor op.
pub fn channel_vector(feat: &Tensor) -> Tensor {
    tensor::global_avg_pool(feat)
}
