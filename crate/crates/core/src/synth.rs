//! Deterministic moving-shapes clips with exact masks and an analytic flow
//! oracle.
//!
//! A scene is a smooth procedural background (optionally drifting to emulate
//! camera jitter), static distractor shapes that move with the background,
//! and rigidly moving foreground shapes drawn on top. Because every layer's
//! motion is known in closed form, the per-pixel displacement field between
//! consecutive frames is exact rather than estimated.

use crate::data::{self, ClipSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum ShapeKind {
    Disk { radius: f64 },
    Rect { half_w: f64, half_h: f64 },
    Polygon { radius: f64, sides: usize },
}

impl ShapeKind {
    /// Radius of the bounding circle, invariant under rotation.
    pub fn circumradius(&self) -> f64 {
        match self {
            ShapeKind::Disk { radius } => *radius,
            ShapeKind::Rect { half_w, half_h } => (half_w * half_w + half_h * half_h).sqrt(),
            ShapeKind::Polygon { radius, .. } => *radius,
        }
    }

    /// Point-in-shape test for a pose (center, angle).
    fn contains(&self, cx: f64, cy: f64, angle: f64, px: f64, py: f64) -> bool {
        let dx = px - cx;
        let dy = py - cy;
        match self {
            ShapeKind::Disk { radius } => dx * dx + dy * dy <= radius * radius,
            ShapeKind::Rect { half_w, half_h } => {
                let (s, c) = angle.sin_cos();
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                lx.abs() <= *half_w && ly.abs() <= *half_h
            }
            ShapeKind::Polygon { radius, sides } => {
                let n = (*sides).max(3);
                let (s, c) = angle.sin_cos();
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                // convex n-gon with vertices on the circumcircle
                for i in 0..n {
                    let a0 = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    let a1 = 2.0 * std::f64::consts::PI * (i + 1) as f64 / n as f64;
                    let (x0, y0) = (radius * a0.cos(), radius * a0.sin());
                    let (x1, y1) = (radius * a1.cos(), radius * a1.sin());
                    let cross = (x1 - x0) * (ly - y0) - (y1 - y0) * (lx - x0);
                    if cross < 0.0 {
                        return false;
                    }
                }
                true
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MovingShape {
    pub kind: ShapeKind,
    /// Center at t = 0, in pixels.
    pub center: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub angle: f64,
    /// Radians per frame.
    pub angular_velocity: f64,
    pub fill: [f64; 3],
}

impl MovingShape {
    fn pose(&self, t: usize) -> (f64, f64, f64) {
        (
            self.center.0 + self.velocity.0 * t as f64,
            self.center.1 + self.velocity.1 * t as f64,
            self.angle + self.angular_velocity * t as f64,
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StaticShape {
    pub kind: ShapeKind,
    /// Center in world (background) coordinates.
    pub center: (f64, f64),
    pub angle: f64,
    pub fill: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub foreground: Vec<MovingShape>,
    pub distractors: Vec<StaticShape>,
    /// Amplitude of the sinusoidal background drift, px per axis.
    pub camera_amplitude: (f64, f64),
    /// Amplitude of the global per-frame brightness offset.
    pub photometric_jitter: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::Spec("a clip needs at least 2 frames".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Spec("canvas too small".into()));
        }
        for (si, shape) in self.foreground.iter().enumerate() {
            let r = shape.kind.circumradius();
            for t in 0..self.n_frames {
                let (cx, cy, _) = shape.pose(t);
                if cx - r < 1.0
                    || cy - r < 1.0
                    || cx + r > (self.width - 2) as f64
                    || cy + r > (self.height - 2) as f64
                {
                    return Err(Error::Spec(format!(
                        "foreground shape {si} leaves the canvas at frame {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Procedural background
// ---------------------------------------------------------------------------

struct Background {
    base: [f64; 3],
    // three plane waves per channel: (kx, ky, phase, amplitude)
    waves: [[(f64, f64, f64, f64); 3]; 3],
}

impl Background {
    fn from_seed(seed: u64) -> Background {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_7ab5_9f2e_11d3);
        let mut waves = [[(0.0, 0.0, 0.0, 0.0); 3]; 3];
        for ch in waves.iter_mut() {
            for w in ch.iter_mut() {
                let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let freq: f64 = rng.random_range(0.08..0.35);
                *w = (
                    ang.cos() * freq,
                    ang.sin() * freq,
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.015..0.04),
                );
            }
        }
        let base = [
            rng.random_range(0.38..0.5),
            rng.random_range(0.38..0.5),
            rng.random_range(0.38..0.5),
        ];
        Background { base, waves }
    }

    fn sample(&self, ch: usize, x: f64, y: f64) -> f64 {
        let mut v = self.base[ch];
        for &(kx, ky, phase, amp) in &self.waves[ch] {
            v += amp * (kx * x + ky * y + phase).sin();
        }
        v
    }
}

fn camera_offset(spec: &SceneSpec, t: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x00c0_ffee_c0de_cafe);
    let px: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let py: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let period: f64 = rng.random_range(5.0..11.0);
    let tt = t as f64;
    (
        spec.camera_amplitude.0 * (std::f64::consts::TAU * tt / period + px).sin(),
        spec.camera_amplitude.1 * (std::f64::consts::TAU * tt / (period * 1.31) + py).sin(),
    )
}

fn photometric_offset(spec: &SceneSpec, t: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x0bad_5eed_0000_0001);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    spec.photometric_jitter * (0.9 * t as f64 + phase).sin()
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// A fully rendered clip: T frames and masks, T-1 exact flow fields.
pub struct RenderedClip {
    pub frames: Vec<Tensor>,
    pub flows: Vec<Tensor>,
    pub masks: Vec<Tensor>,
}

impl RenderedClip {
    /// Assemble the usable samples: frame t with flow t, last frame dropped.
    pub fn samples(&self, clip_id: &str) -> Vec<ClipSample> {
        (0..self.flows.len())
            .map(|t| ClipSample {
                clip_id: clip_id.to_string(),
                frame_index: t,
                appearance: self.frames[t].clone(),
                flow: self.flows[t].clone(),
                gt_mask: self.masks[t].clone(),
            })
            .collect()
    }
}

/// Render every frame, exact mask and analytic flow field of a scene.
pub fn render_clip(spec: &SceneSpec) -> Result<RenderedClip> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let bg = Background::from_seed(spec.seed);
    let t_total = spec.n_frames;

    let mut frames = Vec::with_capacity(t_total);
    let mut masks = Vec::with_capacity(t_total);
    let mut flows = Vec::with_capacity(t_total - 1);

    for t in 0..t_total {
        let (ox, oy) = camera_offset(spec, t);
        let photo = photometric_offset(spec, t);
        let mut frame = vec![0.0; 3 * h * w];
        let mut mask = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                // world coordinates under the camera drift
                let (wx, wy) = (fx - ox, fy - oy);
                let mut color = [
                    bg.sample(0, wx, wy),
                    bg.sample(1, wx, wy),
                    bg.sample(2, wx, wy),
                ];
                for d in &spec.distractors {
                    if d.kind.contains(d.center.0, d.center.1, d.angle, wx, wy) {
                        color = d.fill;
                    }
                }
                for s in &spec.foreground {
                    let (cx, cy, ang) = s.pose(t);
                    if s.kind.contains(cx, cy, ang, fx, fy) {
                        color = s.fill;
                        mask[y * w + x] = 1.0;
                    }
                }
                for ch in 0..3 {
                    frame[ch * h * w + y * w + x] = (color[ch] + photo).clamp(0.0, 1.0);
                }
            }
        }
        frames.push(Tensor::from_vec(&[3, h, w], frame));
        masks.push(Tensor::from_vec(&[1, h, w], mask));
    }

    for t in 0..t_total - 1 {
        let (ox0, oy0) = camera_offset(spec, t);
        let (ox1, oy1) = camera_offset(spec, t + 1);
        let (bdx, bdy) = (ox1 - ox0, oy1 - oy0);
        let mut flow = vec![0.0; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let mut u = bdx;
                let mut v = bdy;
                // the topmost foreground shape owns the pixel's motion
                for s in &spec.foreground {
                    let (cx0, cy0, a0) = s.pose(t);
                    if s.kind.contains(cx0, cy0, a0, fx, fy) {
                        let (cx1, cy1, _) = s.pose(t + 1);
                        let (sn, cs) = s.angular_velocity.sin_cos();
                        let (dx, dy) = (fx - cx0, fy - cy0);
                        u = cx1 + cs * dx - sn * dy - fx;
                        v = cy1 + sn * dx + cs * dy - fy;
                    }
                }
                flow[y * w + x] = u;
                flow[h * w + y * w + x] = v;
            }
        }
        flows.push(Tensor::from_vec(&[2, h, w], flow));
    }

    Ok(RenderedClip { frames, flows, masks })
}

/// Mean absolute warp residual `|I_{t+1}(p + M_t(p)) - I_t(p)|` over interior
/// pixels, excluding a band around motion discontinuities where occlusion
/// makes the comparison meaningless.
pub fn warp_consistency_error(
    frame_t: &Tensor,
    frame_t1: &Tensor,
    flow: &Tensor,
    mask_t: &Tensor,
    mask_t1: &Tensor,
) -> f64 {
    let (_, h, w) = frame_t.chw();
    let max_flow = flow.max_abs();
    let band = max_flow.ceil() as isize + 1;

    // pixels whose ownership changes between the two frames
    let mut changed = vec![false; h * w];
    for i in 0..h * w {
        if mask_t.data()[i] != mask_t1.data()[i] {
            changed[i] = true;
        }
    }
    let near_change = |x: isize, y: isize| -> bool {
        for dy in -band..=band {
            for dx in -band..=band {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0
                    && ny >= 0
                    && (nx as usize) < w
                    && (ny as usize) < h
                    && changed[ny as usize * w + nx as usize]
                {
                    return true;
                }
            }
        }
        false
    };

    let sample = |t: &Tensor, ch: usize, x: f64, y: f64| -> f64 {
        let x0 = x.floor() as isize;
        let y0 = y.floor() as isize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let at = |xx: isize, yy: isize| -> f64 {
            let xx = xx.clamp(0, w as isize - 1) as usize;
            let yy = yy.clamp(0, h as isize - 1) as usize;
            t.data()[ch * h * w + yy * w + xx]
        };
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    };

    let margin = band.max(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for y in margin..h as isize - margin {
        for x in margin..w as isize - margin {
            if near_change(x, y) {
                continue;
            }
            let i = y as usize * w + x as usize;
            let (u, v) = (flow.data()[i], flow.data()[h * w + i]);
            for ch in 0..3 {
                let warped = sample(frame_t1, ch, x as f64 + u, y as f64 + v);
                acc += (warped - frame_t.data()[ch * h * w + i]).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

// ---------------------------------------------------------------------------
// Random scenes and the corpus builder
// ---------------------------------------------------------------------------

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn random_kind(rng: &mut ChaCha8Rng, r: f64) -> ShapeKind {
    match rng.random_range(0..3) {
        0 => ShapeKind::Disk { radius: r },
        1 => ShapeKind::Rect {
            half_w: r * rng.random_range(0.6..1.0),
            half_h: r * rng.random_range(0.5..0.9),
        },
        _ => ShapeKind::Polygon { radius: r, sides: rng.random_range(3..7) },
    }
}

/// Deterministic random scene for clip `index` of a corpus.
pub fn random_scene(
    corpus_seed: u64,
    index: usize,
    n_frames: usize,
    height: usize,
    width: usize,
) -> SceneSpec {
    let seed = corpus_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64 + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = height.min(width) as f64 / 64.0;

    let n_fg = if rng.random::<f64>() < 0.7 { 1 } else { 2 };
    let mut foreground = Vec::new();
    for _ in 0..n_fg {
        let r = rng.random_range(8.0..14.0) * scale;
        let kind = random_kind(&mut rng, r);
        let rr = kind.circumradius();
        // velocity first, then a start that keeps the whole path inside
        let speed = rng.random_range(0.6..1.8) * scale;
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        let (vx, vy) = (speed * dir.cos(), speed * dir.sin());
        let travel = (n_frames - 1) as f64;
        let lo_x = 1.0 + rr + (-vx * travel).max(0.0) + 0.5;
        let hi_x = (width - 2) as f64 - rr - (vx * travel).max(0.0) - 0.5;
        let lo_y = 1.0 + rr + (-vy * travel).max(0.0) + 0.5;
        let hi_y = (height - 2) as f64 - rr - (vy * travel).max(0.0) - 0.5;
        if lo_x >= hi_x || lo_y >= hi_y {
            // too fast for this canvas; drop to a slow horizontal drift
            foreground.push(MovingShape {
                kind,
                center: (width as f64 / 2.0, height as f64 / 2.0),
                velocity: (0.3 * scale, 0.0),
                angle: rng.random_range(0.0..std::f64::consts::TAU),
                angular_velocity: rng.random_range(-0.1..0.1),
                fill: random_color(&mut rng, 0.6, 0.95),
            });
            continue;
        }
        foreground.push(MovingShape {
            kind,
            center: (rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y)),
            velocity: (vx, vy),
            angle: rng.random_range(0.0..std::f64::consts::TAU),
            angular_velocity: rng.random_range(-0.12..0.12),
            fill: random_color(&mut rng, 0.6, 0.95),
        });
    }

    let n_distractors = rng.random_range(0..3);
    let distractors = (0..n_distractors)
        .map(|_| {
            let r = rng.random_range(3.0..7.0) * scale;
            StaticShape {
                kind: random_kind(&mut rng, r),
                center: (
                    rng.random_range(r + 2.0..width as f64 - r - 2.0),
                    rng.random_range(r + 2.0..height as f64 - r - 2.0),
                ),
                angle: rng.random_range(0.0..std::f64::consts::TAU),
                fill: random_color(&mut rng, 0.2, 0.55),
            }
        })
        .collect();

    let camera_amplitude = if rng.random::<f64>() < 0.5 {
        (0.0, 0.0)
    } else {
        (rng.random_range(0.1..0.5), rng.random_range(0.1..0.5))
    };

    SceneSpec {
        seed,
        n_frames,
        height,
        width,
        foreground,
        distractors,
        camera_amplitude,
        photometric_jitter: rng.random_range(0.0..0.008),
    }
}

pub const SPLIT_NAMES: [&str; 4] = ["pretrain-spatial", "pretrain-temporal", "train", "val"];

/// Default split fractions: 1/15, 1/15, 2/3, 1/5. With the default 30 clips
/// this yields 2 / 2 / 20 / 6.
pub const DEFAULT_SPLIT_RATIOS: [f64; 4] = [1.0 / 15.0, 1.0 / 15.0, 2.0 / 3.0, 0.2];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub canvas: [usize; 2],
    pub n_frames: usize,
    pub splits: BTreeMap<String, Vec<String>>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<CorpusManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::config(format!("corpus has no split named {name}")))
    }
}

#[derive(Clone, Debug)]
pub struct CorpusOptions {
    pub n_clips: usize,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub split_ratios: [f64; 4],
    pub force: bool,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            n_clips: 30,
            n_frames: 8,
            height: 64,
            width: 64,
            split_ratios: DEFAULT_SPLIT_RATIOS,
            force: false,
        }
    }
}

/// Render and write a whole corpus. Fully reproducible: the same seed and
/// options produce byte-identical directories.
pub fn build_corpus(seed: u64, out_dir: &Path, opts: &CorpusOptions) -> Result<CorpusManifest> {
    let ratio_sum: f64 = opts.split_ratios.iter().sum();
    if (ratio_sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios sum to {ratio_sum}, expected 1")));
    }
    if opts.n_clips == 0 {
        return Err(Error::config("corpus needs at least one clip"));
    }
    if out_dir.exists() {
        let non_empty = std::fs::read_dir(out_dir)?.next().is_some();
        if non_empty && !opts.force {
            return Err(Error::config(format!(
                "{} is not empty; pass force to overwrite",
                out_dir.display()
            )));
        }
        if non_empty {
            std::fs::remove_dir_all(out_dir)?;
        }
    }
    std::fs::create_dir_all(out_dir)?;

    // cumulative rounding partitions the clips exactly
    let mut counts = [0usize; 4];
    let mut cum = 0.0;
    let mut prev = 0usize;
    for (i, r) in opts.split_ratios.iter().enumerate() {
        cum += r;
        let upto = (cum * opts.n_clips as f64).round() as usize;
        counts[i] = upto.min(opts.n_clips) - prev;
        prev += counts[i];
    }

    let clip_ids: Vec<String> = (0..opts.n_clips).map(|i| format!("clip_{i:04}")).collect();

    clip_ids.par_iter().enumerate().try_for_each(|(i, id)| -> Result<()> {
        let spec = random_scene(seed, i, opts.n_frames, opts.height, opts.width);
        let clip = render_clip(&spec)?;
        let dir = out_dir.join(id);
        for (t, frame) in clip.frames.iter().enumerate() {
            data::write_frame(frame, &data::frame_path(&dir, t))?;
        }
        for (t, mask) in clip.masks.iter().enumerate() {
            data::write_mask(mask, &data::gt_path(&dir, t), Some(0.5))?;
        }
        for (t, flow) in clip.flows.iter().enumerate() {
            data::write_flow(flow, &data::flow_path(&dir, t))?;
        }
        Ok(())
    })?;

    let mut splits = BTreeMap::new();
    let mut offset = 0;
    for (name, count) in SPLIT_NAMES.iter().zip(counts) {
        splits.insert(name.to_string(), clip_ids[offset..offset + count].to_vec());
        offset += count;
    }
    let manifest =
        CorpusManifest { seed, canvas: [opts.height, opts.width], n_frames: opts.n_frames, splits };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::config(format!("manifest: {e}")))?;
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Load all samples of the named split, clip by clip.
pub fn load_split(corpus: &Path, split: &str) -> Result<Vec<Vec<ClipSample>>> {
    let manifest = CorpusManifest::load(&corpus.join("manifest.json"))?;
    let ids = manifest.split(split)?;
    ids.iter().map(|id| data::load_clip(&corpus.join(id))).collect()
}

pub fn manifest_path(corpus: &Path) -> PathBuf {
    corpus.join("manifest.json")
}
