//! The U-VOS / V-SOD evaluation suite: region similarity, contour accuracy,
//! MAE, precision-recall sweeps with max F-measure, the enhanced-alignment
//! measure and the structure measure, plus per-clip and dataset aggregation.
//!
//! [`oracle`] holds independent brute-force re-implementations used by the
//! test suites; it shares no code with the functions here.

pub mod oracle;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Guard for ratio denominators.
pub const EPS: f64 = 1e-8;

/// Weight of precision in the F-measure (beta squared).
pub const F_BETA_SQ: f64 = 0.3;

/// Balance between object- and region-aware structural similarity.
pub const S_MEASURE_ALPHA: f64 = 0.5;

/// Number of thresholds in every 8-bit sweep.
pub const N_THRESHOLDS: usize = 256;

fn require_binary(name: &str, t: &Tensor) -> Result<()> {
    if !t.is_binary() {
        return Err(Error::contract(format!("{name} must be strictly binary")));
    }
    Ok(())
}

fn require_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "maps disagree on shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Intersection over union of two binary masks; 1.0 when both are empty.
pub fn region_similarity(s_bin: &Tensor, g: &Tensor) -> Result<f64> {
    require_same_shape(s_bin, g)?;
    require_binary("prediction", s_bin)?;
    require_binary("ground truth", g)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in s_bin.iter().zip(g.iter()) {
        if a == 1.0 && b == 1.0 {
            inter += 1;
        }
        if a == 1.0 || b == 1.0 {
            union += 1;
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Contour pixels: mask minus its 1-px erosion (4-neighbourhood, borders
/// treated as background).
pub fn contour(mask: &Tensor) -> Result<Vec<(usize, usize)>> {
    let (h, w) = mask.hw()?;
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mask.data()[y as usize * w + x as usize]
        }
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.data()[y * w + x] != 1.0 {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            let interior = at(xi - 1, yi) == 1.0
                && at(xi + 1, yi) == 1.0
                && at(xi, yi - 1) == 1.0
                && at(xi, yi + 1) == 1.0;
            if !interior {
                out.push((x, y));
            }
        }
    }
    Ok(out)
}

/// Default matching tolerance: a small fraction of the image diagonal.
pub fn default_tol_radius(h: usize, w: usize) -> f64 {
    (0.008 * ((h * h + w * w) as f64).sqrt()).round()
}

/// Contour F-measure: precision/recall of contour pixels matched within
/// `tol_radius` (Euclidean). 1.0 if both contours are empty, 0.0 if exactly
/// one is.
pub fn contour_accuracy(s_bin: &Tensor, g: &Tensor, tol_radius: f64) -> Result<f64> {
    require_same_shape(s_bin, g)?;
    require_binary("prediction", s_bin)?;
    require_binary("ground truth", g)?;
    let (h, w) = s_bin.hw()?;
    let cs = contour(s_bin)?;
    let cg = contour(g)?;
    if cs.is_empty() && cg.is_empty() {
        return Ok(1.0);
    }
    if cs.is_empty() || cg.is_empty() {
        return Ok(0.0);
    }
    // dilate the opposite contour by a disk and count membership
    let dilate = |points: &[(usize, usize)]| -> Vec<bool> {
        let mut hit = vec![false; h * w];
        let r = tol_radius.max(0.0);
        let ri = r.floor() as isize;
        for &(px, py) in points {
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if (dx * dx + dy * dy) as f64 <= r * r {
                        let (nx, ny) = (px as isize + dx, py as isize + dy);
                        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                            hit[ny as usize * w + nx as usize] = true;
                        }
                    }
                }
            }
        }
        hit
    };
    let near_g = dilate(&cg);
    let near_s = dilate(&cs);
    let matched_s = cs.iter().filter(|&&(x, y)| near_g[y * w + x]).count();
    let matched_g = cg.iter().filter(|&&(x, y)| near_s[y * w + x]).count();
    let precision = matched_s as f64 / cs.len() as f64;
    let recall = matched_g as f64 / cg.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean absolute error between a real-valued map in [0,1] and a binary mask.
pub fn mae(s: &Tensor, g: &Tensor) -> Result<f64> {
    require_same_shape(s, g)?;
    let n = s.len() as f64;
    Ok(s.iter().zip(g.iter()).map(|(&a, &b)| (a - b).abs()).sum::<f64>() / n)
}

/// Binarise a [0,1] map on the 255 scale with strict `> t`.
fn binarize_255(s: &Tensor, t: usize) -> Vec<bool> {
    s.iter().map(|&v| v * 255.0 > t as f64).collect()
}

/// Precision/recall at every 8-bit threshold. Precision is 1.0 for an empty
/// prediction; recall is 1.0 for an empty ground truth.
pub fn pr_curve(s: &Tensor, g: &Tensor) -> Result<Vec<(f64, f64)>> {
    require_same_shape(s, g)?;
    require_binary("ground truth", g)?;
    if s.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::contract("prediction values outside [0, 1]"));
    }
    let gt: Vec<bool> = g.iter().map(|&v| v == 1.0).collect();
    let n_gt = gt.iter().filter(|&&b| b).count();
    let mut out = Vec::with_capacity(N_THRESHOLDS);
    for t in 0..N_THRESHOLDS {
        let bin = binarize_255(s, t);
        let n_s = bin.iter().filter(|&&b| b).count();
        let inter = bin.iter().zip(&gt).filter(|(&a, &b)| a && b).count();
        let precision = if n_s == 0 { 1.0 } else { inter as f64 / n_s as f64 };
        let recall = if n_gt == 0 { 1.0 } else { inter as f64 / n_gt as f64 };
        out.push((precision, recall));
    }
    Ok(out)
}

/// Maximum F-measure over a threshold sweep; undefined (P = R = 0) entries
/// count as zero.
pub fn f_beta_max(curve: &[(f64, f64)]) -> f64 {
    curve
        .iter()
        .map(|&(p, r)| {
            if p == 0.0 && r == 0.0 {
                0.0
            } else {
                (1.0 + F_BETA_SQ) * p * r / (F_BETA_SQ * p + r)
            }
        })
        .fold(0.0, f64::max)
}

/// Enhanced-alignment value of one binary prediction against a binary mask.
fn e_measure_binary(bin: &[bool], g: &Tensor) -> f64 {
    let n = g.len() as f64;
    let g_mean = g.mean();
    let bin_mean = bin.iter().filter(|&&b| b).count() as f64 / n;
    if g_mean == 0.0 {
        return 1.0 - bin_mean;
    }
    if g_mean == 1.0 {
        return bin_mean;
    }
    let mut acc = 0.0;
    for (&b, &gv) in bin.iter().zip(g.iter()) {
        let phi_s = (b as usize as f64) - bin_mean;
        let phi_g = gv - g_mean;
        let align = 2.0 * phi_s * phi_g / (phi_s * phi_s + phi_g * phi_g + EPS);
        acc += (align + 1.0) * (align + 1.0) / 4.0;
    }
    acc / n
}

/// Maximum enhanced-alignment measure over the 8-bit threshold sweep.
pub fn e_measure_max(s: &Tensor, g: &Tensor) -> Result<f64> {
    require_same_shape(s, g)?;
    require_binary("ground truth", g)?;
    let mut best: f64 = 0.0;
    for t in 0..N_THRESHOLDS {
        let bin = binarize_255(s, t);
        best = best.max(e_measure_binary(&bin, g));
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Structure measure
// ---------------------------------------------------------------------------

fn mean_of(vals: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut acc = 0.0;
    let mut n = 0;
    for v in vals {
        acc += v;
        n += 1;
    }
    (if n == 0 { 0.0 } else { acc / n as f64 }, n)
}

fn sample_std(vals: &[f64]) -> f64 {
    if vals.len() <= 1 {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
    var.sqrt()
}

fn object_score(vals: &[f64]) -> f64 {
    let (x, n) = mean_of(vals.iter().copied());
    if n == 0 {
        return 0.0;
    }
    let sigma = sample_std(vals);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn s_object(s: &Tensor, g: &Tensor) -> f64 {
    let fg: Vec<f64> = s.iter().zip(g.iter()).filter(|(_, &gv)| gv == 1.0).map(|(&sv, _)| sv).collect();
    let bg: Vec<f64> =
        s.iter().zip(g.iter()).filter(|(_, &gv)| gv == 0.0).map(|(&sv, _)| 1.0 - sv).collect();
    let u = g.mean();
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Foreground centroid in 1-based coordinates, matching the reference
/// formulation; the image centre when the mask is empty.
fn centroid(g: &Tensor) -> Result<(usize, usize)> {
    let (h, w) = g.hw()?;
    let total: f64 = g.sum();
    if total == 0.0 {
        return Ok(((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize));
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = g.data()[y * w + x];
            sx += v * (x + 1) as f64;
            sy += v * (y + 1) as f64;
        }
    }
    Ok((
        (sx / total).round().clamp(1.0, w as f64) as usize,
        (sy / total).round().clamp(1.0, h as f64) as usize,
    ))
}

struct Quad {
    vals_s: Vec<f64>,
    vals_g: Vec<f64>,
    weight: f64,
}

fn divide(s: &Tensor, g: &Tensor, cx: usize, cy: usize) -> Result<Vec<Quad>> {
    let (h, w) = g.hw()?;
    let area = (h * w) as f64;
    let regions = [
        (0, cx, 0, cy),
        (cx, w, 0, cy),
        (0, cx, cy, h),
        (cx, w, cy, h),
    ];
    let mut out = Vec::with_capacity(4);
    for &(x0, x1, y0, y1) in &regions {
        let mut vs = Vec::new();
        let mut vg = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                vs.push(s.data()[y * w + x]);
                vg.push(g.data()[y * w + x]);
            }
        }
        let weight = ((x1 - x0) * (y1 - y0)) as f64 / area;
        out.push(Quad { vals_s: vs, vals_g: vg, weight });
    }
    Ok(out)
}

fn region_ssim(q: &Quad) -> f64 {
    let n = q.vals_s.len();
    if n == 0 {
        return 1.0; // weight is zero; the value never contributes
    }
    let nf = n as f64;
    let x = q.vals_s.iter().sum::<f64>() / nf;
    let y = q.vals_g.iter().sum::<f64>() / nf;
    let denom = nf - 1.0 + EPS;
    let sigma_x2 = q.vals_s.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / denom;
    let sigma_y2 = q.vals_g.iter().map(|v| (v - y) * (v - y)).sum::<f64>() / denom;
    let sigma_xy = q
        .vals_s
        .iter()
        .zip(&q.vals_g)
        .map(|(a, b)| (a - x) * (b - y))
        .sum::<f64>()
        / denom;
    let alpha = 4.0 * x * y * sigma_xy;
    let beta = (x * x + y * y) * (sigma_x2 + sigma_y2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(s: &Tensor, g: &Tensor) -> Result<f64> {
    let (cx, cy) = centroid(g)?;
    let quads = divide(s, g, cx, cy)?;
    Ok(quads.iter().map(|q| q.weight * region_ssim(q)).sum())
}

/// Structural similarity between a non-binary map and a binary mask, with
/// object- and region-aware terms mixed by `alpha`; degenerate masks reduce
/// to mean-based scores.
pub fn s_measure_alpha(s: &Tensor, g: &Tensor, alpha: f64) -> Result<f64> {
    require_same_shape(s, g)?;
    require_binary("ground truth", g)?;
    let y = g.mean();
    let q = if y == 0.0 {
        1.0 - s.mean()
    } else if y == 1.0 {
        s.mean()
    } else {
        (1.0 - alpha) * s_object(s, g) + alpha * s_region(s, g)?
    };
    Ok(q.clamp(0.0, 1.0))
}

pub fn s_measure(s: &Tensor, g: &Tensor) -> Result<f64> {
    s_measure_alpha(s, g, S_MEASURE_ALPHA)
}

// ---------------------------------------------------------------------------
// Per-frame evaluation and aggregation
// ---------------------------------------------------------------------------

/// Every metric for one frame. The PR samples are kept for dataset pooling
/// but skipped when serialising per-frame rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub clip: String,
    pub frame: usize,
    pub j: f64,
    pub f: f64,
    pub mae: f64,
    pub f_beta_max: f64,
    pub e_measure_max: f64,
    pub s_measure: f64,
    #[serde(skip)]
    pub pr: Vec<(f64, f64)>,
}

/// Evaluate one predicted map against its mask. `J`/`F` are computed on the
/// 0.5-binarised map; the remaining metrics use the non-binary map.
pub fn evaluate_frame(
    clip: &str,
    frame: usize,
    s: &Tensor,
    g: &Tensor,
    tol_radius: f64,
) -> Result<FrameMetrics> {
    require_same_shape(s, g)?;
    let s_bin = s.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let pr = pr_curve(s, g)?;
    Ok(FrameMetrics {
        clip: clip.to_string(),
        frame,
        j: region_similarity(&s_bin, g)?,
        f: contour_accuracy(&s_bin, g, tol_radius)?,
        mae: mae(s, g)?,
        f_beta_max: f_beta_max(&pr),
        e_measure_max: e_measure_max(s, g)?,
        s_measure: s_measure(s, g)?,
        pr,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, Default)]
pub struct SummaryMetrics {
    pub mean_j: f64,
    pub mean_f: f64,
    pub mae: f64,
    pub f_beta_max: f64,
    pub e_measure_max: f64,
    pub s_measure: f64,
}

/// Per-clip and dataset-level aggregation plus the pooled PR curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: SummaryMetrics,
    pub per_clip: BTreeMap<String, SummaryMetrics>,
    pub per_frame: Vec<FrameMetrics>,
    /// Mean precision/recall over all frames, one sample per threshold.
    pub pr_curve: Vec<(f64, f64)>,
}

fn summarize(frames: &[&FrameMetrics]) -> SummaryMetrics {
    let n = frames.len().max(1) as f64;
    SummaryMetrics {
        mean_j: frames.iter().map(|f| f.j).sum::<f64>() / n,
        mean_f: frames.iter().map(|f| f.f).sum::<f64>() / n,
        mae: frames.iter().map(|f| f.mae).sum::<f64>() / n,
        f_beta_max: frames.iter().map(|f| f.f_beta_max).sum::<f64>() / n,
        e_measure_max: frames.iter().map(|f| f.e_measure_max).sum::<f64>() / n,
        s_measure: frames.iter().map(|f| f.s_measure).sum::<f64>() / n,
    }
}

/// Aggregate per-frame results: Mean-J / Mean-F average frames within each
/// clip and then clips; the pixel- and threshold-based metrics average over
/// the dataset-pooled frames.
pub fn aggregate(frames: Vec<FrameMetrics>) -> Result<MetricReport> {
    if frames.is_empty() {
        return Err(Error::contract("cannot aggregate zero frames"));
    }
    let mut by_clip: BTreeMap<String, Vec<&FrameMetrics>> = BTreeMap::new();
    for f in &frames {
        by_clip.entry(f.clip.clone()).or_default().push(f);
    }
    let per_clip: BTreeMap<String, SummaryMetrics> =
        by_clip.iter().map(|(k, v)| (k.clone(), summarize(v))).collect();

    let all: Vec<&FrameMetrics> = frames.iter().collect();
    let pooled = summarize(&all);
    let n_clips = per_clip.len() as f64;
    let dataset = SummaryMetrics {
        mean_j: per_clip.values().map(|s| s.mean_j).sum::<f64>() / n_clips,
        mean_f: per_clip.values().map(|s| s.mean_f).sum::<f64>() / n_clips,
        ..pooled
    };

    let n_frames = frames.len() as f64;
    let mut pr = vec![(0.0, 0.0); N_THRESHOLDS];
    for f in &frames {
        for (acc, &(p, r)) in pr.iter_mut().zip(&f.pr) {
            acc.0 += p / n_frames;
            acc.1 += r / n_frames;
        }
    }
    Ok(MetricReport { dataset, per_clip, per_frame: frames, pr_curve: pr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, v)
    }

    fn rand_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(&[1, h, w], (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    fn rand_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(
            &[1, h, w],
            (0..h * w).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect(),
        )
    }

    #[test]
    fn region_similarity_cases() {
        let g = t(&[1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(region_similarity(&g, &g).unwrap(), 1.0);

        let s = t(&[1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(region_similarity(&s, &g).unwrap(), 0.5);

        let empty = Tensor::zeros(&[1, 2, 2]);
        assert_eq!(region_similarity(&empty, &g).unwrap(), 0.0);
        assert_eq!(region_similarity(&empty, &empty).unwrap(), 1.0);

        let bad = t(&[1, 2, 2], vec![0.5, 0.0, 0.0, 0.0]);
        assert!(region_similarity(&bad, &g).is_err());
    }

    #[test]
    fn contour_accuracy_identity_and_shift() {
        // 4x4 square inside 8x8
        let mut m = vec![0.0; 64];
        for y in 2..6 {
            for x in 2..6 {
                m[y * 8 + x] = 1.0;
            }
        }
        let g = t(&[1, 8, 8], m.clone());
        assert_eq!(contour_accuracy(&g, &g, 0.0).unwrap(), 1.0);

        // shifted by one pixel, tolerance 1 still matches fully
        let mut shifted = vec![0.0; 64];
        for y in 2..6 {
            for x in 3..7 {
                shifted[y * 8 + x] = 1.0;
            }
        }
        let s = t(&[1, 8, 8], shifted);
        assert_eq!(contour_accuracy(&s, &g, 1.0).unwrap(), 1.0);
        assert!(contour_accuracy(&s, &g, 0.0).unwrap() < 1.0);
    }

    #[test]
    fn contour_full_canvas_vs_small_square_matches_oracle() {
        let s = Tensor::full(&[1, 8, 8], 1.0);
        let mut m = vec![0.0; 64];
        for y in 3..5 {
            for x in 3..5 {
                m[y * 8 + x] = 1.0;
            }
        }
        let g = t(&[1, 8, 8], m);
        let got = contour_accuracy(&s, &g, 0.0).unwrap();
        let want = oracle::contour_accuracy(&s, &g, 0.0);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn contour_empty_cases() {
        let empty = Tensor::zeros(&[1, 4, 4]);
        let mut m = vec![0.0; 16];
        m[5] = 1.0;
        let g = t(&[1, 4, 4], m);
        assert_eq!(contour_accuracy(&empty, &empty, 1.0).unwrap(), 1.0);
        assert_eq!(contour_accuracy(&empty, &g, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn mae_cases() {
        let g = t(&[1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(mae(&g, &g).unwrap(), 0.0);
        let half = Tensor::full(&[1, 2, 2], 0.5);
        assert_eq!(mae(&half, &g).unwrap(), 0.5);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = rand_map(&mut rng, 4, 4);
        let m = rand_mask(&mut rng, 4, 4);
        assert!((mae(&s, &m).unwrap() - oracle::mae(&s, &m)).abs() < 1e-9);
    }

    #[test]
    fn pr_curve_perfect_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = rand_mask(&mut rng, 4, 4);
        let curve = pr_curve(&g, &g).unwrap();
        for (t, &(p, r)) in curve.iter().enumerate() {
            if t < 255 {
                assert_eq!((p, r), (1.0, 1.0), "threshold {t}");
            }
        }
        // recall is non-increasing in the threshold
        let s = rand_map(&mut rng, 4, 4);
        let curve = pr_curve(&s, &g).unwrap();
        for pair in curve.windows(2) {
            assert!(pair[1].1 <= pair[0].1 + 1e-12);
        }
        assert!(curve[0].1 >= curve[255].1);
        for &(p, r) in &curve {
            assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn pr_curve_matches_brute_force_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let s = rand_map(&mut rng, 4, 4);
            let g = rand_mask(&mut rng, 4, 4);
            let got = pr_curve(&s, &g).unwrap();
            let want = oracle::pr_curve(&s, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f_beta_closed_forms() {
        // perfect map
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = rand_mask(&mut rng, 4, 4);
        let curve = pr_curve(&g, &g).unwrap();
        assert_eq!(f_beta_max(&curve), 1.0);

        // single P=R=0.5 entry: F_beta equals 0.5 for any beta when P = R
        let mut curve = vec![(0.0, 0.0); 256];
        curve[10] = (0.5, 0.5);
        let expect = (1.0 + F_BETA_SQ) * 0.25 / (F_BETA_SQ * 0.5 + 0.5);
        assert!((f_beta_max(&curve) - expect).abs() < 1e-12);
        assert!((expect - 0.5).abs() < 1e-12);

        // agrees with the scan oracle
        let s = rand_map(&mut rng, 4, 4);
        let curve = pr_curve(&s, &g).unwrap();
        assert!((f_beta_max(&curve) - oracle::f_beta_max_scan(&curve)).abs() < 1e-12);
    }

    #[test]
    fn f_beta_max_dominates_the_half_threshold_entry_for_binary_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let s = rand_mask(&mut rng, 4, 4);
            let g = rand_mask(&mut rng, 4, 4);
            let curve = pr_curve(&s, &g).unwrap();
            let fmax = f_beta_max(&curve);
            let (p, r) = curve[127]; // 0.5 on the 255 scale
            let f_half = if p == 0.0 && r == 0.0 {
                0.0
            } else {
                (1.0 + F_BETA_SQ) * p * r / (F_BETA_SQ * p + r)
            };
            assert!(fmax >= f_half - 1e-12);
        }
    }

    #[test]
    fn e_measure_cases() {
        // identical mixed masks align perfectly at the matching threshold
        let g = t(&[1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]);
        assert!((e_measure_max(&g, &g).unwrap() - 1.0).abs() < 1e-6);

        // complement of a half-half mask: frozen brute-force value
        let s = g.map(|v| 1.0 - v);
        let got = e_measure_max(&s, &g).unwrap();
        assert!((got - oracle::e_measure_max(&s, &g)).abs() < 1e-12);
        assert!((got - 0.25).abs() < 1e-12);

        // degenerate: all-zero mask, all-zero prediction
        let z = Tensor::zeros(&[1, 2, 2]);
        assert_eq!(e_measure_max(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn s_measure_cases() {
        let g = t(&[1, 4, 4], {
            let mut v = vec![0.0; 16];
            for i in [5, 6, 9, 10] {
                v[i] = 1.0;
            }
            v
        });
        assert!((s_measure(&g, &g).unwrap() - 1.0).abs() < 1e-6);

        // degenerate all-zero mask
        let z = Tensor::zeros(&[1, 4, 4]);
        let s = Tensor::full(&[1, 4, 4], 0.3);
        assert!((s_measure(&s, &z).unwrap() - 0.7).abs() < 1e-12);

        // matches the independent re-implementation on random maps
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let s = rand_map(&mut rng, 8, 8);
            let m = rand_mask(&mut rng, 8, 8);
            let got = s_measure(&s, &m).unwrap();
            let want = oracle::s_measure(&s, &m);
            assert!((got - want).abs() < 1e-6, "got {got}, oracle {want}");
        }
    }

    #[test]
    fn permutation_invariance_of_pixel_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = rand_map(&mut rng, 4, 4);
        let g = rand_mask(&mut rng, 4, 4);
        // a fixed permutation of the 16 pixels
        let mut perm: Vec<usize> = (0..16).collect();
        for i in (1..16).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let apply = |t: &Tensor| {
            let mut v = vec![0.0; 16];
            for (i, &p) in perm.iter().enumerate() {
                v[i] = t.data()[p];
            }
            Tensor::from_vec(&[1, 4, 4], v)
        };
        let (sp, gp) = (apply(&s), apply(&g));
        let sb = s.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let spb = sp.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        assert_eq!(region_similarity(&sb, &g).unwrap(), region_similarity(&spb, &gp).unwrap());
        assert!((mae(&s, &g).unwrap() - mae(&sp, &gp).unwrap()).abs() < 1e-12);
        let c1 = pr_curve(&s, &g).unwrap();
        let c2 = pr_curve(&sp, &gp).unwrap();
        assert!((f_beta_max(&c1) - f_beta_max(&c2)).abs() < 1e-12);
        assert!(
            (e_measure_max(&s, &g).unwrap() - e_measure_max(&sp, &gp).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn j_and_f_are_one_iff_exact_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = rand_mask(&mut rng, 6, 6);
        assert_eq!(region_similarity(&g, &g).unwrap(), 1.0);
        assert_eq!(contour_accuracy(&g, &g, 0.0).unwrap(), 1.0);
        let mut s = g.clone();
        // flip one pixel
        let i = 13;
        s.data_mut()[i] = 1.0 - s.data_mut()[i];
        assert!(region_similarity(&s, &g).unwrap() < 1.0);
        assert!(contour_accuracy(&s, &g, 0.0).unwrap() < 1.0);
    }

    #[test]
    fn aggregation_matches_loop_oracle_on_three_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut frames = Vec::new();
        for (clip, n_frames) in [("a", 2usize), ("b", 3), ("c", 1)] {
            for t in 0..n_frames {
                let s = rand_map(&mut rng, 6, 6);
                let g = rand_mask(&mut rng, 6, 6);
                frames.push(evaluate_frame(clip, t, &s, &g, 1.0).unwrap());
            }
        }
        let report = aggregate(frames.clone()).unwrap();

        // loop oracle: per-clip means, then clip mean for J/F; frame-pooled
        // means for the rest
        let mut clip_j = Vec::new();
        let mut clip_f = Vec::new();
        for clip in ["a", "b", "c"] {
            let rows: Vec<&FrameMetrics> = frames.iter().filter(|f| f.clip == clip).collect();
            clip_j.push(rows.iter().map(|f| f.j).sum::<f64>() / rows.len() as f64);
            clip_f.push(rows.iter().map(|f| f.f).sum::<f64>() / rows.len() as f64);
        }
        let want_j = clip_j.iter().sum::<f64>() / 3.0;
        let want_f = clip_f.iter().sum::<f64>() / 3.0;
        let want_mae = frames.iter().map(|f| f.mae).sum::<f64>() / frames.len() as f64;
        let want_e =
            frames.iter().map(|f| f.e_measure_max).sum::<f64>() / frames.len() as f64;
        assert!((report.dataset.mean_j - want_j).abs() < 1e-12);
        assert!((report.dataset.mean_f - want_f).abs() < 1e-12);
        assert!((report.dataset.mae - want_mae).abs() < 1e-12);
        assert!((report.dataset.e_measure_max - want_e).abs() < 1e-12);

        // pooled PR curve averages frames at each threshold
        for t in [0usize, 100, 255] {
            let want_p = frames.iter().map(|f| f.pr[t].0).sum::<f64>() / frames.len() as f64;
            assert!((report.pr_curve[t].0 - want_p).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregation_rules() {
        let mk = |clip: &str, frame: usize, j: f64| FrameMetrics {
            clip: clip.into(),
            frame,
            j,
            f: j,
            mae: 0.1,
            f_beta_max: 0.5,
            e_measure_max: 0.5,
            s_measure: 0.5,
            pr: vec![(1.0, 1.0); N_THRESHOLDS],
        };

        // single frame: aggregation is the identity
        let r = aggregate(vec![mk("a", 0, 0.75)]).unwrap();
        assert_eq!(r.dataset.mean_j, 0.75);

        // two clips of one frame each, J = 0 and 1 -> Mean-J = 0.5
        let r = aggregate(vec![mk("a", 0, 0.0), mk("b", 0, 1.0)]).unwrap();
        assert_eq!(r.dataset.mean_j, 0.5);

        // clips weigh equally regardless of frame count
        let frames =
            vec![mk("a", 0, 1.0), mk("a", 1, 1.0), mk("a", 2, 1.0), mk("b", 0, 0.0)];
        let r = aggregate(frames).unwrap();
        assert_eq!(r.dataset.mean_j, 0.5);
        // pooled metrics average over frames instead
        assert!((r.dataset.f_beta_max - 0.5).abs() < 1e-12);
        // matches a loop oracle over the same rows
        assert!((r.per_clip["a"].mean_j - 1.0).abs() < 1e-12);
        assert_eq!(r.pr_curve.len(), N_THRESHOLDS);
        assert!((r.pr_curve[0].0 - 1.0).abs() < 1e-12);
    }
}
