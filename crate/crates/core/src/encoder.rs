//! Hierarchical feature extraction: the appearance and motion backbones, the
//! merging branch, and the flow-to-RGB encoding that lets a stock 3-channel
//! stem consume 2-channel flow rasters.
//!
//! Every backbone exposes four pyramid levels. With the default stem stride
//! of 4 the levels sit at strides 4/8/16/32 of the input, so inputs must be
//! divisible by 32.

use crate::data::{BranchTag, FeaturePyramid, PYRAMID_LEVELS};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, GroupNorm, ParamStore};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Widest group count <= 8 that divides the channel width.
fn norm_groups(channels: usize) -> usize {
    (1..=8usize.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// Conv -> group norm -> relu, the block every trunk in this module is made
/// of. The norm stands in for the batch norm a full-scale backbone would
/// carry while staying independent of batch composition.
pub(crate) struct ConvBlock {
    pub(crate) conv: Conv2d,
    pub(crate) norm: GroupNorm,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<ConvBlock> {
        Ok(ConvBlock {
            conv: Conv2d::new(store, rng, name, c_in, c_out, kernel, stride, pad)?,
            norm: GroupNorm::new(store, &format!("{name}.norm"), c_out, norm_groups(c_out))?,
        })
    }

    pub(crate) fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let c = self.conv.forward(g, store, x)?;
        let n = self.norm.forward(g, store, c)?;
        Ok(g.relu(n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackbonePreset {
    Toy,
    Resnet50Like,
}

pub const TOY_WIDTHS: [usize; 4] = [16, 32, 64, 128];
pub const RESNET50_LIKE_WIDTHS: [usize; 4] = [256, 512, 1024, 2048];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub preset: BackbonePreset,
    /// Explicit widths override the preset defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_widths: Option<[usize; 4]>,
    #[serde(default = "default_stem_stride")]
    pub stem_stride: usize,
}

fn default_stem_stride() -> usize {
    4
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { preset: BackbonePreset::Toy, channel_widths: None, stem_stride: 4 }
    }
}

impl BackboneConfig {
    pub fn toy() -> Self {
        Self::default()
    }

    pub fn resnet50_like() -> Self {
        BackboneConfig {
            preset: BackbonePreset::Resnet50Like,
            channel_widths: None,
            stem_stride: 4,
        }
    }

    pub fn widths(&self) -> [usize; 4] {
        self.channel_widths.unwrap_or(match self.preset {
            BackbonePreset::Toy => TOY_WIDTHS,
            BackbonePreset::Resnet50Like => RESNET50_LIKE_WIDTHS,
        })
    }

    /// Total stride of the deepest level.
    pub fn top_stride(&self) -> usize {
        self.stem_stride * 8
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.widths();
        if w.iter().any(|&c| c == 0) {
            return Err(Error::config("channel widths must be strictly positive"));
        }
        if w.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::config("channel widths must be non-decreasing"));
        }
        if ![1, 2, 4].contains(&self.stem_stride) {
            return Err(Error::config("stem_stride must be 1, 2 or 4"));
        }
        Ok(())
    }

    /// Spatial size of each pyramid level for a given input size.
    pub fn level_sizes(&self, h: usize, w: usize) -> [(usize, usize); 4] {
        let mut out = [(0, 0); 4];
        for (j, slot) in out.iter_mut().enumerate() {
            let s = self.stem_stride << j;
            *slot = (h / s, w / s);
        }
        out
    }
}

/// Conv stack producing the four pyramid levels of one branch.
pub struct Backbone {
    stem_a: ConvBlock,
    stem_b: ConvBlock,
    refine: [ConvBlock; 4],
    down: [ConvBlock; 3],
    cfg: BackboneConfig,
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &BackboneConfig,
    ) -> Result<Backbone> {
        cfg.validate()?;
        let w = cfg.widths();
        let mid = (w[0] / 2).max(4);
        let (sa, sb) = match cfg.stem_stride {
            4 => (2, 2),
            2 => (2, 1),
            _ => (1, 1),
        };
        let stem_a = ConvBlock::new(store, rng, &format!("{prefix}.stem_a"), 3, mid, 3, sa, 1)?;
        let stem_b = ConvBlock::new(store, rng, &format!("{prefix}.stem_b"), mid, w[0], 3, sb, 1)?;
        let refine = [
            ConvBlock::new(store, rng, &format!("{prefix}.refine0"), w[0], w[0], 3, 1, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.refine1"), w[1], w[1], 3, 1, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.refine2"), w[2], w[2], 3, 1, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.refine3"), w[3], w[3], 3, 1, 1)?,
        ];
        let down = [
            ConvBlock::new(store, rng, &format!("{prefix}.down1"), w[0], w[1], 3, 2, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.down2"), w[1], w[2], 3, 2, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.down3"), w[2], w[3], 3, 2, 1)?,
        ];
        Ok(Backbone { stem_a, stem_b, refine, down, cfg: cfg.clone() })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::contract(format!("backbone expects [3,H,W], got {shape:?}")));
        }
        let div = self.cfg.top_stride();
        if shape[1] % div != 0 || shape[2] % div != 0 {
            return Err(Error::contract(format!(
                "input {}x{} not divisible by {div}",
                shape[1], shape[2]
            )));
        }
        Ok(())
    }

    /// Graph forward returning the four level features, shallow to deep.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<[Var; 4]> {
        self.check_input(g.shape(x))?;
        let h = self.stem_a.forward(g, store, x)?;
        let h = self.stem_b.forward(g, store, h)?;
        let mut level = self.refine[0].forward(g, store, h)?;
        let mut levels = [level; 4];
        for j in 1..PYRAMID_LEVELS {
            let d = self.down[j - 1].forward(g, store, level)?;
            level = self.refine[j].forward(g, store, d)?;
            levels[j] = level;
        }
        Ok(levels)
    }

    /// Convenience wrapper: run a forward pass outside any training graph.
    pub fn extract(&self, store: &ParamStore, input: &Tensor, branch: BranchTag) -> Result<FeaturePyramid> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let levels = self.forward(&mut g, store, x)?;
        let pyramid = FeaturePyramid {
            levels: levels.iter().map(|&v| g.value(v).clone()).collect(),
            branch,
        };
        pyramid.validate()?;
        Ok(pyramid)
    }
}

/// The merging-branch blocks: one per level, each fusing the attention
/// outputs of its level with the downsampled previous merged feature.
pub struct MergeBranch {
    refine: [ConvBlock; 4],
    proj: [ConvBlock; 3],
}

impl MergeBranch {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &BackboneConfig,
    ) -> Result<MergeBranch> {
        let w = cfg.widths();
        let refine = [
            ConvBlock::new(store, rng, &format!("{prefix}.refine0"), w[0], w[0], 3, 1, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.refine1"), w[1], w[1], 3, 1, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.refine2"), w[2], w[2], 3, 1, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.refine3"), w[3], w[3], 3, 1, 1)?,
        ];
        let proj = [
            ConvBlock::new(store, rng, &format!("{prefix}.proj1"), w[0], w[1], 3, 2, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.proj2"), w[1], w[2], 3, 2, 1)?,
            ConvBlock::new(store, rng, &format!("{prefix}.proj3"), w[2], w[3], 3, 2, 1)?,
        ];
        Ok(MergeBranch { refine, proj })
    }

    /// One merge block: `Z_j = relu(R_j(Q_sum (+) proj_j(Z_prev)))`. The
    /// previous merged feature enters at the coarser level's shape and is
    /// brought to this level inside the block; at the first level the
    /// incoming state is the zero tensor and the projection is skipped.
    pub fn merge_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        level: usize,
        q_sum: Var,
        z_prev: Option<Var>,
    ) -> Result<Var> {
        if level >= PYRAMID_LEVELS {
            return Err(Error::contract(format!("merge level {level} out of range")));
        }
        let pre = match z_prev {
            Some(z) => {
                if level == 0 {
                    return Err(Error::contract("level 0 takes no previous merged feature"));
                }
                let p = self.proj[level - 1].forward(g, store, z)?;
                g.add(q_sum, p)?
            }
            None => q_sum,
        };
        self.refine[level].forward(g, store, pre)
    }
}

// ---------------------------------------------------------------------------
// Flow -> 3-channel encoding
// ---------------------------------------------------------------------------

/// 99th-percentile flow magnitude of a clip, used to normalise the colour
/// encoding. Never returns less than a small epsilon.
pub fn clip_flow_normalizer(flows: &[Tensor]) -> f64 {
    let mut mags = Vec::new();
    for f in flows {
        let (c, h, w) = f.chw();
        assert_eq!(c, 2);
        let d = f.data();
        for i in 0..h * w {
            mags.push((d[i] * d[i] + d[h * w + i] * d[h * w + i]).sqrt());
        }
    }
    if mags.is_empty() {
        return 1e-6;
    }
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((mags.len() as f64) * 0.99).ceil() as usize;
    let idx = rank.max(1).min(mags.len()) - 1;
    mags[idx].max(1e-6)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Colour-wheel encoding of a flow field: direction maps to hue, magnitude
/// (relative to `normalizer`) to saturation. Zero flow renders as a neutral
/// constant raster.
pub fn flow_to_input(flow: &Tensor, normalizer: f64) -> Result<Tensor> {
    let (c, h, w) = flow.chw();
    if c != 2 {
        return Err(Error::contract("flow must be [2,H,W]"));
    }
    if !flow.all_finite() {
        return Err(Error::contract("flow contains non-finite values"));
    }
    let norm = normalizer.max(1e-6);
    let d = flow.data();
    let mut out = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        let (u, v) = (d[i], d[h * w + i]);
        let mag = (u * u + v * v).sqrt();
        let hue = v.atan2(u) / (2.0 * std::f64::consts::PI);
        let sat = (mag / norm).min(1.0);
        let rgb = hsv_to_rgb(hue, sat, 1.0);
        for ch in 0..3 {
            out[ch * h * w + i] = rgb[ch];
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], out))
}
