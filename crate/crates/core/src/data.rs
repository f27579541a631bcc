//! Core data records and bit-exact file I/O for frames, flow rasters and masks.
//!
//! On-disk clip layout:
//!
//! ```text
//! <clip_id>/frames/%05d.png   8-bit RGB appearance frames, t = 0..T-1
//! <clip_id>/flow/%05d.flo     raw float32 flow, t = 0..T-2 (frame t -> t+1)
//! <clip_id>/gt/%05d.png       8-bit single-channel binary masks
//! ```
//!
//! Frame `t` pairs with flow `t`; the last frame of every clip has no flow
//! pair and is dropped when samples are assembled.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use image::{DynamicImage, GrayImage, ImageReader, RgbImage};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const FLOW_MAGIC: &[u8; 4] = b"PIEH";

/// One usable timestep of one clip: paired appearance frame, flow raster and
/// ground-truth mask.
#[derive(Clone, Debug)]
pub struct ClipSample {
    pub clip_id: String,
    pub frame_index: usize,
    /// RGB appearance, [3, H, W], values in [0, 1].
    pub appearance: Tensor,
    /// Pixel displacement to the next frame, [2, H, W] (u, v).
    pub flow: Tensor,
    /// Binary foreground mask, [1, H, W].
    pub gt_mask: Tensor,
}

impl ClipSample {
    /// Check the record invariants: shared spatial size, finite flow,
    /// strictly binary mask, appearance in [0, 1].
    pub fn validate(&self) -> Result<()> {
        let (ca, ha, wa) = self.appearance.chw();
        let (cf, hf, wf) = self.flow.chw();
        let (cg, hg, wg) = self.gt_mask.chw();
        if ca != 3 || cf != 2 || cg != 1 {
            return Err(Error::contract(format!(
                "channel layout must be 3/2/1, got {ca}/{cf}/{cg}"
            )));
        }
        if (ha, wa) != (hf, wf) || (ha, wa) != (hg, wg) {
            return Err(Error::contract(format!(
                "rasters disagree on size: {ha}x{wa} vs {hf}x{wf} vs {hg}x{wg}"
            )));
        }
        if !self.flow.all_finite() {
            return Err(Error::contract("flow contains non-finite values"));
        }
        if !self.gt_mask.is_binary() {
            return Err(Error::contract("ground-truth mask is not strictly binary"));
        }
        if self.appearance.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract("appearance values outside [0, 1]"));
        }
        Ok(())
    }
}

/// Which encoder produced a pyramid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchTag {
    Appearance,
    Motion,
    Merged,
}

/// The number of hierarchy levels every pyramid carries.
pub const PYRAMID_LEVELS: usize = 4;

/// An ordered list of feature tensors from one encoder branch; level `j`
/// halves the spatial extent of level `j - 1`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
    pub branch: BranchTag,
}

impl FeaturePyramid {
    pub fn validate(&self) -> Result<()> {
        if self.levels.len() != PYRAMID_LEVELS {
            return Err(Error::contract(format!(
                "pyramid must have {PYRAMID_LEVELS} levels, got {}",
                self.levels.len()
            )));
        }
        for pair in self.levels.windows(2) {
            let (c0, h0, w0) = pair[0].chw();
            let (c1, h1, w1) = pair[1].chw();
            if h1 != h0 / 2 || w1 != w0 / 2 {
                return Err(Error::contract(format!(
                    "levels must halve spatially: {h0}x{w0} then {h1}x{w1}"
                )));
            }
            if c1 < c0 {
                return Err(Error::contract("channel counts must be non-decreasing"));
            }
        }
        Ok(())
    }
}

/// The two sigmoid prediction maps for one frame.
#[derive(Clone, Debug)]
pub struct PredictionPair {
    pub s_appearance: Tensor,
    pub s_motion: Tensor,
}

impl PredictionPair {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("S_A", &self.s_appearance), ("S_M", &self.s_motion)] {
            if t.shape().len() != 3 || t.shape()[0] != 1 {
                return Err(Error::contract(format!("{name} must be [1,H,W]")));
            }
            if t.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::contract(format!("{name} has values outside [0, 1]")));
            }
        }
        if self.s_appearance.shape() != self.s_motion.shape() {
            return Err(Error::contract("prediction maps disagree on size"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Mask I/O
// ---------------------------------------------------------------------------

/// Read an 8-bit single-channel PNG as a binary mask; pixels > 127 map to 1.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::format(format!(
                "{}: expected 8-bit single-channel PNG, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = gray.dimensions();
    let data = gray
        .into_raw()
        .into_iter()
        .map(|p| if p > 127 { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(&[1, h as usize, w as usize], data))
}

/// Write a [0,1]-valued map as a PNG. With a threshold the output is binary
/// (strict `value > threshold`); without one it is 8-bit grayscale
/// `round(value * 255)` for non-binary evaluation.
pub fn write_mask(mask: &Tensor, path: &Path, threshold: Option<f64>) -> Result<()> {
    let (h, w) = mask.hw()?;
    if mask.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::contract("mask values outside [0, 1]"));
    }
    let pixels: Vec<u8> = mask
        .iter()
        .map(|&v| match threshold {
            Some(t) => {
                if v > t {
                    255
                } else {
                    0
                }
            }
            None => (v * 255.0).round() as u8,
        })
        .collect();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let img = GrayImage::from_raw(w as u32, h as u32, pixels)
        .expect("pixel buffer matches dimensions");
    img.save(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Flow I/O
// ---------------------------------------------------------------------------

/// Read a raw flow raster: magic "PIEH", little-endian i32 width/height, then
/// H*W interleaved (u, v) little-endian f32 pairs, row-major.
pub fn read_flow(path: &Path) -> Result<Tensor> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
        return Err(Error::format(format!("{}: bad flow magic", path.display())));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 || (w as u64) * (h as u64) > (1 << 28) {
        return Err(Error::format(format!("{}: implausible size {w}x{h}", path.display())));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + w * h * 2 * 4;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "{}: truncated payload ({} bytes, expected {expected})",
            path.display(),
            bytes.len()
        )));
    }
    let mut u = vec![0.0f64; h * w];
    let mut v = vec![0.0f64; h * w];
    for i in 0..h * w {
        let off = 12 + i * 8;
        u[i] = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
        v[i] = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()) as f64;
    }
    let mut data = u;
    data.extend_from_slice(&v);
    Ok(Tensor::from_vec(&[2, h, w], data))
}

/// Write a [2,H,W] flow tensor in the raster format read by [`read_flow`].
/// Values are stored as f32; a round trip is bit-exact on f32-representable
/// inputs.
pub fn write_flow(flow: &Tensor, path: &Path) -> Result<()> {
    let (c, h, w) = flow.chw();
    if c != 2 {
        return Err(Error::contract(format!("flow must be [2,H,W], got {c} channels")));
    }
    if !flow.all_finite() {
        return Err(Error::contract("flow contains non-finite values"));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = Vec::with_capacity(12 + h * w * 8);
    bytes.extend_from_slice(FLOW_MAGIC);
    bytes.extend_from_slice(&(w as i32).to_le_bytes());
    bytes.extend_from_slice(&(h as i32).to_le_bytes());
    let d = flow.data();
    for i in 0..h * w {
        bytes.extend_from_slice(&(d[i] as f32).to_le_bytes());
        bytes.extend_from_slice(&(d[h * w + i] as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Frame I/O and clip loading
// ---------------------------------------------------------------------------

/// Read an 8-bit RGB PNG frame as [3,H,W] in [0,1].
pub fn read_frame(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(r) => r,
        other => {
            return Err(Error::format(format!(
                "{}: expected 8-bit RGB PNG, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = rgb.into_raw();
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[c * h * w + y * w + x] = raw[(y * w + x) * 3 + c] as f64 / 255.0;
            }
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], data))
}

/// Write a [3,H,W] tensor in [0,1] as an 8-bit RGB PNG.
pub fn write_frame(frame: &Tensor, path: &Path) -> Result<()> {
    let (c, h, w) = frame.chw();
    if c != 3 {
        return Err(Error::contract("frame must be [3,H,W]"));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let d = frame.data();
    let mut raw = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                raw[(y * w + x) * 3 + ch] = (d[ch * h * w + y * w + x].clamp(0.0, 1.0) * 255.0)
                    .round() as u8;
            }
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dims");
    img.save(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn frame_path(clip_dir: &Path, t: usize) -> PathBuf {
    clip_dir.join("frames").join(format!("{t:05}.png"))
}

pub fn flow_path(clip_dir: &Path, t: usize) -> PathBuf {
    clip_dir.join("flow").join(format!("{t:05}.flo"))
}

pub fn gt_path(clip_dir: &Path, t: usize) -> PathBuf {
    clip_dir.join("gt").join(format!("{t:05}.png"))
}

/// Load every usable sample of a clip directory: frame `t` paired with flow
/// `t`, the final frame discarded.
pub fn load_clip(clip_dir: &Path) -> Result<Vec<ClipSample>> {
    let clip_id = clip_dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::config(format!("bad clip path {}", clip_dir.display())))?
        .to_string();
    let frames_dir = clip_dir.join("frames");
    let mut n_frames = 0;
    while frame_path(clip_dir, n_frames).exists() {
        n_frames += 1;
    }
    if n_frames < 2 {
        return Err(Error::config(format!(
            "{}: need at least 2 frames, found {n_frames}",
            frames_dir.display()
        )));
    }
    let mut samples = Vec::with_capacity(n_frames - 1);
    for t in 0..n_frames - 1 {
        let sample = ClipSample {
            clip_id: clip_id.clone(),
            frame_index: t,
            appearance: read_frame(&frame_path(clip_dir, t))?,
            flow: read_flow(&flow_path(clip_dir, t))?,
            gt_mask: read_mask(&gt_path(clip_dir, t))?,
        };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}
