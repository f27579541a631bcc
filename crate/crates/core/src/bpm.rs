//! Cascaded bidirectional purification of the fused and motion features.
//!
//! After allocation to a common 32-channel width, `N` units refine the pair
//! of pyramids. Each unit's level-`j` output consumes levels `j..K` of the
//! guiding branch through an interlaced decremental connection (IDC): the
//! combination branch concatenates, the re-calibration branch multiplies,
//! and both end in a 1x1 map whose output is added residually.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, ParamStore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const BPM_CHANNELS: usize = 32;
const LEVELS: usize = crate::data::PYRAMID_LEVELS;

/// Direction strategy inside each purification unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BpmMode {
    /// Both branches are updated from each other.
    #[default]
    #[serde(rename = "full-duplex")]
    FullDuplex,
    /// Fused features guide motion; only G is updated.
    #[serde(rename = "simplex-FtoG")]
    SimplexFToG,
    /// Motion guides the fused features; only F is updated.
    #[serde(rename = "simplex-GtoF")]
    SimplexGToF,
    /// No interaction: each branch refines from its own levels.
    #[serde(rename = "self-purification")]
    SelfPurification,
}

impl BpmMode {
    pub const ALL: [BpmMode; 4] = [
        BpmMode::FullDuplex,
        BpmMode::SimplexFToG,
        BpmMode::SimplexGToF,
        BpmMode::SelfPurification,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BpmMode::FullDuplex => "full-duplex",
            BpmMode::SimplexFToG => "simplex-FtoG",
            BpmMode::SimplexGToF => "simplex-GtoF",
            BpmMode::SelfPurification => "self-purification",
        }
    }

    fn updates_f(&self) -> bool {
        matches!(self, BpmMode::FullDuplex | BpmMode::SimplexGToF | BpmMode::SelfPurification)
    }

    fn updates_g(&self) -> bool {
        matches!(self, BpmMode::FullDuplex | BpmMode::SimplexFToG | BpmMode::SelfPurification)
    }
}

impl std::str::FromStr for BpmMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<BpmMode> {
        BpmMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown bpm mode: {s}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpmConfig {
    pub n: usize,
    pub mode: BpmMode,
    /// Re-apply the (shared) second allocator conv at every cascade stage.
    pub share_allocator: bool,
}

impl Default for BpmConfig {
    fn default() -> Self {
        BpmConfig { n: 4, mode: BpmMode::FullDuplex, share_allocator: false }
    }
}

/// Number of tensors consumed by the IDC at a level: the level's own feature
/// plus one per guiding level from `level` up to the top.
pub fn idc_member_count(level: usize) -> usize {
    assert!(level < LEVELS);
    (LEVELS - level) + 1
}

/// The carried (F, G) pyramid pair, `n` steps into the cascade.
#[derive(Clone, Copy)]
pub struct BpmState {
    pub f: [Var; 4],
    pub g: [Var; 4],
    pub n: usize,
}

// ---------------------------------------------------------------------------
// Allocator
// ---------------------------------------------------------------------------

/// Feature allocator: two 3x3 convs per level bringing any input width down
/// to the common 32 channels.
pub struct Allocator {
    reduce: Vec<Conv2d>,
    refine: Vec<Conv2d>,
}

impl Allocator {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        widths: [usize; 4],
    ) -> Result<Allocator> {
        let mut reduce = Vec::with_capacity(LEVELS);
        let mut refine = Vec::with_capacity(LEVELS);
        for (j, &w) in widths.iter().enumerate() {
            reduce.push(Conv2d::new(
                store,
                rng,
                &format!("{prefix}.level{j}.reduce"),
                w,
                BPM_CHANNELS,
                3,
                1,
                1,
            )?);
            refine.push(Conv2d::new(
                store,
                rng,
                &format!("{prefix}.level{j}.refine"),
                BPM_CHANNELS,
                BPM_CHANNELS,
                3,
                1,
                1,
            )?);
        }
        Ok(Allocator { reduce, refine })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, pyramid: &[Var; 4]) -> Result<[Var; 4]> {
        let mut out = [pyramid[0]; 4];
        for j in 0..LEVELS {
            let mut h = self.reduce[j].forward(g, store, pyramid[j])?;
            h = g.relu(h);
            h = self.refine[j].forward(g, store, h)?;
            out[j] = g.relu(h);
        }
        Ok(out)
    }

    /// The shared re-application used by the `share_allocator` reading: the
    /// second conv runs again on an already-allocated 32-channel state.
    pub fn reapply(&self, g: &mut Graph, store: &ParamStore, state: &[Var; 4]) -> Result<[Var; 4]> {
        let mut out = [state[0]; 4];
        for j in 0..LEVELS {
            let h = self.refine[j].forward(g, store, state[j])?;
            out[j] = g.relu(h);
        }
        Ok(out)
    }
}

/// Allocate both carriers: F from the merged pyramid, G from the motion
/// pyramid.
pub fn allocate(
    g: &mut Graph,
    store: &ParamStore,
    alloc_f: &Allocator,
    alloc_g: &Allocator,
    merged: &[Var; 4],
    motion: &[Var; 4],
) -> Result<BpmState> {
    Ok(BpmState { f: alloc_f.forward(g, store, merged)?, g: alloc_g.forward(g, store, motion)?, n: 0 })
}

// ---------------------------------------------------------------------------
// Purification units
// ---------------------------------------------------------------------------

/// One IDC pathway at one level: a 1x1 map per guiding level plus the fusing
/// 1x1 map back to 32 channels.
struct LevelPath {
    p: Vec<Conv2d>,
    fuse: Conv2d,
}

struct BranchPath {
    levels: Vec<LevelPath>,
}

impl BranchPath {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        concat_fuse: bool,
    ) -> Result<BranchPath> {
        let mut levels = Vec::with_capacity(LEVELS);
        for j in 0..LEVELS {
            let mut p = Vec::new();
            for i in j..LEVELS {
                p.push(Conv2d::new(
                    store,
                    rng,
                    &format!("{prefix}.level{j}.p{i}"),
                    BPM_CHANNELS,
                    BPM_CHANNELS,
                    1,
                    1,
                    0,
                )?);
            }
            let fuse_in = if concat_fuse {
                BPM_CHANNELS * idc_member_count(j)
            } else {
                BPM_CHANNELS
            };
            // small-gain init keeps the residual update near the identity at
            // the start of joint training, so the pretrained branches are not
            // washed out by the fresh cascade
            let fuse = Conv2d::new_with_gain(
                store,
                rng,
                &format!("{prefix}.level{j}.fuse"),
                fuse_in,
                BPM_CHANNELS,
                1,
                1,
                0,
                0.1,
            )?;
            levels.push(LevelPath { p, fuse });
        }
        Ok(BranchPath { levels })
    }
}

/// One purification unit. Parameters are per unit and never shared across
/// the cascade, so total parameter count grows exactly linearly in N.
pub struct BpmUnit {
    combine: Option<BranchPath>,
    recalibrate: Option<BranchPath>,
    mode: BpmMode,
}

impl BpmUnit {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        mode: BpmMode,
    ) -> Result<BpmUnit> {
        let combine = if mode.updates_f() {
            Some(BranchPath::new(store, rng, &format!("{prefix}.combine"), true)?)
        } else {
            None
        };
        let recalibrate = if mode.updates_g() {
            Some(BranchPath::new(store, rng, &format!("{prefix}.recalibrate"), false)?)
        } else {
            None
        };
        Ok(BpmUnit { combine, recalibrate, mode })
    }
}

/// Upsample a guiding feature to the target level and apply its 1x1 map.
fn project(
    g: &mut Graph,
    store: &ParamStore,
    conv: &Conv2d,
    source: Var,
    target_h: usize,
    target_w: usize,
) -> Result<Var> {
    let up = g.resize(source, target_h, target_w)?;
    conv.forward(g, store, up)
}

/// Spatial-temporal combination: concatenate `f_level` with the projected
/// guiding levels, then map back to 32 channels. `guides` must hold the
/// levels `level..K` of the guiding pyramid, finest first.
pub fn idc_concat(
    g: &mut Graph,
    store: &ParamStore,
    path: &LevelPathRef<'_>,
    level: usize,
    f_level: Var,
    guides: &[Var],
) -> Result<Var> {
    let expected = idc_member_count(level) - 1;
    if guides.len() != expected {
        return Err(Error::contract(format!(
            "idc_concat at level {level} needs {expected} guiding tensors, got {}",
            guides.len()
        )));
    }
    let shape = g.shape(f_level).to_vec();
    let (h, w) = (shape[1], shape[2]);
    let mut members = Vec::with_capacity(guides.len() + 1);
    members.push(f_level);
    for (idx, &src) in guides.iter().enumerate() {
        members.push(project(g, store, &path.p[idx], src, h, w)?);
    }
    let cat = g.concat_channels(&members)?;
    path.fuse.forward(g, store, cat)
}

/// Temporal re-calibration: multiply `g_level` with every projected guiding
/// level, then map to 32 channels.
pub fn idc_multiply(
    g: &mut Graph,
    store: &ParamStore,
    path: &LevelPathRef<'_>,
    level: usize,
    g_level: Var,
    guides: &[Var],
) -> Result<Var> {
    let expected = idc_member_count(level) - 1;
    if guides.len() != expected {
        return Err(Error::contract(format!(
            "idc_multiply at level {level} needs {expected} guiding tensors, got {}",
            guides.len()
        )));
    }
    let shape = g.shape(g_level).to_vec();
    let (h, w) = (shape[1], shape[2]);
    let mut product = g_level;
    for (idx, &src) in guides.iter().enumerate() {
        let proj = project(g, store, &path.p[idx], src, h, w)?;
        product = g.mul(product, proj)?;
    }
    path.fuse.forward(g, store, product)
}

/// Borrowed view of one level's IDC parameters, so the ops can be exercised
/// directly in tests.
pub struct LevelPathRef<'a> {
    pub p: &'a [Conv2d],
    pub fuse: &'a Conv2d,
}

impl BpmUnit {
    pub fn level_path_combine(&self, level: usize) -> Option<LevelPathRef<'_>> {
        self.combine
            .as_ref()
            .map(|b| LevelPathRef { p: &b.levels[level].p, fuse: &b.levels[level].fuse })
    }

    pub fn level_path_recalibrate(&self, level: usize) -> Option<LevelPathRef<'_>> {
        self.recalibrate
            .as_ref()
            .map(|b| LevelPathRef { p: &b.levels[level].p, fuse: &b.levels[level].fuse })
    }

    /// One synchronous update: both branch updates read the pre-step state.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, state: &BpmState) -> Result<BpmState> {
        let mut new_f = state.f;
        let mut new_g = state.g;
        if self.combine.is_some() {
            // F is enriched by concatenation with the guiding branch:
            // G in the duplex/simplex readings, F itself in self-purification.
            let guide_src = match self.mode {
                BpmMode::SelfPurification => &state.f,
                _ => &state.g,
            };
            for j in 0..LEVELS {
                let path = self.level_path_combine(j).expect("combine allocated");
                let guides: Vec<Var> = (j..LEVELS).map(|i| guide_src[i]).collect();
                let inc = idc_concat(g, store, &path, j, state.f[j], &guides)?;
                new_f[j] = g.add(state.f[j], inc)?;
            }
        }
        if self.recalibrate.is_some() {
            let guide_src = match self.mode {
                BpmMode::SelfPurification => &state.g,
                _ => &state.f,
            };
            for j in 0..LEVELS {
                let path = self.level_path_recalibrate(j).expect("recalibrate allocated");
                let guides: Vec<Var> = (j..LEVELS).map(|i| guide_src[i]).collect();
                let inc = idc_multiply(g, store, &path, j, state.g[j], &guides)?;
                new_g[j] = g.add(state.g[j], inc)?;
            }
        }
        Ok(BpmState { f: new_f, g: new_g, n: state.n + 1 })
    }
}

/// The cascade of N units.
pub struct BpmChain {
    pub units: Vec<BpmUnit>,
    cfg: BpmConfig,
}

impl BpmChain {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &BpmConfig,
    ) -> Result<BpmChain> {
        let units = (0..cfg.n)
            .map(|n| BpmUnit::new(store, rng, &format!("{prefix}.unit{n}"), cfg.mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(BpmChain { units, cfg: *cfg })
    }

    pub fn config(&self) -> &BpmConfig {
        &self.cfg
    }

    /// Run the whole cascade; N = 0 returns the allocated state unchanged.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        alloc_f: &Allocator,
        alloc_g: &Allocator,
        state: BpmState,
    ) -> Result<BpmState> {
        let mut s = state;
        for unit in &self.units {
            if self.cfg.share_allocator {
                s = BpmState {
                    f: alloc_f.reapply(g, store, &s.f)?,
                    g: alloc_g.reapply(g, store, &s.g)?,
                    n: s.n,
                };
            }
            s = unit.step(g, store, &s)?;
        }
        Ok(s)
    }
}
