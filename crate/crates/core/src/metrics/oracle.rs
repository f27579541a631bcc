//! Independent brute-force reference implementations of every metric.
//!
//! These exist only to check the production implementations in the test
//! suites. They are written as direct pixel loops with no shared helpers, so
//! an error in one path cannot hide in the other.

use crate::tensor::Tensor;

fn dims(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    (s[s.len() - 2], s[s.len() - 1])
}

pub fn region_similarity(s: &Tensor, g: &Tensor) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for i in 0..s.len() {
        let a = s.data()[i] == 1.0;
        let b = g.data()[i] == 1.0;
        if a && b {
            inter += 1.0;
        }
        if a || b {
            union += 1.0;
        }
    }
    if union == 0.0 {
        1.0
    } else {
        inter / union
    }
}

pub fn mae(s: &Tensor, g: &Tensor) -> f64 {
    let mut acc = 0.0;
    for i in 0..s.len() {
        acc += (s.data()[i] - g.data()[i]).abs();
    }
    acc / s.len() as f64
}

fn contour_points(m: &Tensor) -> Vec<(i64, i64)> {
    let (h, w) = dims(m);
    let get = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            m.data()[y as usize * w + x as usize]
        }
    };
    let mut pts = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if get(x, y) == 1.0 {
                let interior = get(x - 1, y) == 1.0
                    && get(x + 1, y) == 1.0
                    && get(x, y - 1) == 1.0
                    && get(x, y + 1) == 1.0;
                if !interior {
                    pts.push((x, y));
                }
            }
        }
    }
    pts
}

pub fn contour_accuracy(s: &Tensor, g: &Tensor, tol: f64) -> f64 {
    let cs = contour_points(s);
    let cg = contour_points(g);
    if cs.is_empty() && cg.is_empty() {
        return 1.0;
    }
    if cs.is_empty() || cg.is_empty() {
        return 0.0;
    }
    let matched = |pts: &[(i64, i64)], others: &[(i64, i64)]| -> usize {
        pts.iter()
            .filter(|&&(x, y)| {
                others.iter().any(|&(ox, oy)| {
                    let d2 = ((x - ox) * (x - ox) + (y - oy) * (y - oy)) as f64;
                    d2 <= tol * tol
                })
            })
            .count()
    };
    let p = matched(&cs, &cg) as f64 / cs.len() as f64;
    let r = matched(&cg, &cs) as f64 / cg.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn pr_curve(s: &Tensor, g: &Tensor) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(256);
    for t in 0..256usize {
        let mut n_s = 0.0;
        let mut n_g = 0.0;
        let mut inter = 0.0;
        for i in 0..s.len() {
            let a = s.data()[i] * 255.0 > t as f64;
            let b = g.data()[i] == 1.0;
            if a {
                n_s += 1.0;
            }
            if b {
                n_g += 1.0;
            }
            if a && b {
                inter += 1.0;
            }
        }
        let p = if n_s == 0.0 { 1.0 } else { inter / n_s };
        let r = if n_g == 0.0 { 1.0 } else { inter / n_g };
        out.push((p, r));
    }
    out
}

pub fn f_beta_max_scan(curve: &[(f64, f64)]) -> f64 {
    let b2 = 0.3;
    let mut best = 0.0f64;
    for &(p, r) in curve {
        let f = if p == 0.0 && r == 0.0 { 0.0 } else { (1.0 + b2) * p * r / (b2 * p + r) };
        if f > best {
            best = f;
        }
    }
    best
}

pub fn e_measure_max(s: &Tensor, g: &Tensor) -> f64 {
    let n = s.len() as f64;
    let mut g_sum = 0.0;
    for i in 0..g.len() {
        g_sum += g.data()[i];
    }
    let g_mean = g_sum / n;
    let mut best = 0.0f64;
    for t in 0..256usize {
        let bin: Vec<f64> =
            s.data().iter().map(|&v| if v * 255.0 > t as f64 { 1.0 } else { 0.0 }).collect();
        let b_mean = bin.iter().sum::<f64>() / n;
        let score = if g_mean == 0.0 {
            1.0 - b_mean
        } else if g_mean == 1.0 {
            b_mean
        } else {
            let mut acc = 0.0;
            for i in 0..bin.len() {
                let ps = bin[i] - b_mean;
                let pg = g.data()[i] - g_mean;
                let xi = 2.0 * ps * pg / (ps * ps + pg * pg + 1e-8);
                acc += (xi + 1.0) * (xi + 1.0) / 4.0;
            }
            acc / n
        };
        if score > best {
            best = score;
        }
    }
    best
}

/// Direct translation of the published structure-measure algorithm, kept as
/// straight-line code.
pub fn s_measure(s: &Tensor, g: &Tensor) -> f64 {
    let (h, w) = dims(g);
    let n = (h * w) as f64;
    let mut g_sum = 0.0;
    let mut s_sum = 0.0;
    for i in 0..g.len() {
        g_sum += g.data()[i];
        s_sum += s.data()[i];
    }
    let y = g_sum / n;
    if y == 0.0 {
        return (1.0 - s_sum / n).clamp(0.0, 1.0);
    }
    if y == 1.0 {
        return (s_sum / n).clamp(0.0, 1.0);
    }

    // object-aware term
    let object = |vals: &[f64]| -> f64 {
        if vals.is_empty() {
            return 0.0;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = if vals.len() <= 1 {
            0.0
        } else {
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        };
        2.0 * m / (m * m + 1.0 + std + 1e-8)
    };
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for i in 0..g.len() {
        if g.data()[i] == 1.0 {
            fg.push(s.data()[i]);
        } else {
            bg.push(1.0 - s.data()[i]);
        }
    }
    let s_o = y * object(&fg) + (1.0 - y) * object(&bg);

    // region-aware term: split at the (1-based, rounded) foreground centroid
    let mut sx = 0.0;
    let mut sy = 0.0;
    for yy in 0..h {
        for xx in 0..w {
            let v = g.data()[yy * w + xx];
            sx += v * (xx + 1) as f64;
            sy += v * (yy + 1) as f64;
        }
    }
    let cx = (sx / g_sum).round().clamp(1.0, w as f64) as usize;
    let cy = (sy / g_sum).round().clamp(1.0, h as f64) as usize;

    let ssim = |x0: usize, x1: usize, y0: usize, y1: usize| -> f64 {
        let cnt = (x1 - x0) * (y1 - y0);
        if cnt == 0 {
            return 1.0;
        }
        let cf = cnt as f64;
        let mut ms = 0.0;
        let mut mg = 0.0;
        for yy in y0..y1 {
            for xx in x0..x1 {
                ms += s.data()[yy * w + xx];
                mg += g.data()[yy * w + xx];
            }
        }
        ms /= cf;
        mg /= cf;
        let mut vs = 0.0;
        let mut vg = 0.0;
        let mut cov = 0.0;
        for yy in y0..y1 {
            for xx in x0..x1 {
                let ds = s.data()[yy * w + xx] - ms;
                let dg = g.data()[yy * w + xx] - mg;
                vs += ds * ds;
                vg += dg * dg;
                cov += ds * dg;
            }
        }
        let denom = cf - 1.0 + 1e-8;
        vs /= denom;
        vg /= denom;
        cov /= denom;
        let alpha = 4.0 * ms * mg * cov;
        let beta = (ms * ms + mg * mg) * (vs + vg);
        if alpha != 0.0 {
            alpha / (beta + 1e-8)
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let area = n;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let s_r = w1 * ssim(0, cx, 0, cy)
        + w2 * ssim(cx, w, 0, cy)
        + w3 * ssim(0, cx, cy, h)
        + w4 * ssim(cx, w, cy, h);

    // object/region mixing with alpha = 0.5
    let alpha = 0.5;
    ((1.0 - alpha) * s_o + alpha * s_r).clamp(0.0, 1.0)
}
