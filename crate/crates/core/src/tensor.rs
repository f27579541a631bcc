//! Dense row-major f64 tensors and the numeric kernels used by the graph.
//!
//! Everything at desk scale is small enough that a plain `Vec<f64>` with
//! explicit indexing beats pulling in an array library. Convolutions go
//! through im2col + GEMM (`matrixmultiply`), which is where essentially all
//! of the training time is spent.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Interpret as a (channels, height, width) tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected 3-d tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    /// Height/width of a map shaped `[H, W]` or `[1.., H, W]` with unit lead dims.
    pub fn hw(&self) -> Result<(usize, usize)> {
        if self.shape.len() < 2 {
            return Err(Error::contract(format!("expected a 2-d map, got shape {:?}", self.shape)));
        }
        let lead: usize = self.shape[..self.shape.len() - 2].iter().product();
        if lead != 1 {
            return Err(Error::contract(format!(
                "expected singleton leading dims, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[self.shape.len() - 2], self.shape[self.shape.len() - 1]))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every value is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }
}

// ---------------------------------------------------------------------------
// GEMM wrappers (row-major)
// ---------------------------------------------------------------------------

/// c[m x n] = a[m x k] * b[k x n] + beta * c
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// c[m x n] = a[m x k] * b^T where b is stored [n x k] row-major.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// c[m x n] = a^T * b where a is stored [k x m] row-major.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

// ---------------------------------------------------------------------------
// Convolution kernels
// ---------------------------------------------------------------------------

pub(crate) fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfold `x` ([C, H, W]) into a [C*kh*kw, oh*ow] matrix.
pub(crate) fn im2col(
    x: &Tensor,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out: &mut Vec<f64>,
) -> (usize, usize) {
    let (c, h, w) = x.chw();
    let oh = conv_out_size(h, kh, stride, pad);
    let ow = conv_out_size(w, kw, stride, pad);
    let rows = c * kh * kw;
    let cols = oh * ow;
    out.clear();
    out.resize(rows * cols, 0.0);
    let xd = x.data();
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let base = row * cols;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[base + oy * ow + ox] = xd[src_row + ix as usize];
                    }
                }
            }
        }
    }
    (rows, cols)
}

/// Scatter-add the column matrix back into an image-shaped gradient.
pub(crate) fn col2im_add(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dx: &mut [f64],
) {
    let oh = conv_out_size(h, kh, stride, pad);
    let ow = conv_out_size(w, kw, stride, pad);
    let n_cols = oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let base = row * n_cols;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[dst_row + ix as usize] += cols[base + oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Plain convolution forward: x [C,H,W], w [O,C,kh,kw], optional bias [O].
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (c, h, wd) = x.chw();
    assert_eq!(w.shape().len(), 4, "conv weight must be 4-d");
    let o = w.shape()[0];
    assert_eq!(w.shape()[1], c, "channel mismatch: input {c}, weight {}", w.shape()[1]);
    let kh = w.shape()[2];
    let kw = w.shape()[3];
    let oh = conv_out_size(h, kh, stride, pad);
    let ow = conv_out_size(wd, kw, stride, pad);
    let mut out = vec![0.0; o * oh * ow];
    if kh == 1 && kw == 1 && stride == 1 && pad == 0 {
        gemm_nn(o, c, h * wd, w.data(), x.data(), 0.0, &mut out);
    } else {
        let mut cols = Vec::new();
        let (rows, n_cols) = im2col(x, kh, kw, stride, pad, &mut cols);
        gemm_nn(o, rows, n_cols, w.data(), &cols, 0.0, &mut out);
    }
    if let Some(bias) = b {
        assert_eq!(bias.len(), o, "bias length mismatch");
        for (oi, bv) in bias.data().iter().enumerate() {
            for v in &mut out[oi * oh * ow..(oi + 1) * oh * ow] {
                *v += bv;
            }
        }
    }
    Tensor::from_vec(&[o, oh, ow], out)
}

// ---------------------------------------------------------------------------
// Resampling kernels
// ---------------------------------------------------------------------------

/// Per-axis bilinear interpolation table: (lo index, hi index, hi weight).
pub(crate) fn bilinear_table(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    assert!(in_len > 0 && out_len > 0);
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let f = (s - i0 as f64).clamp(0.0, 1.0);
            (i0, i1, f)
        })
        .collect()
}

/// Bilinear resize of a [C,H,W] tensor (half-pixel centers, clamped edges).
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = x.chw();
    if oh == h && ow == w {
        return x.clone();
    }
    let ty = bilinear_table(h, oh);
    let tx = bilinear_table(w, ow);
    let xd = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        let src = &xd[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v00 = src[y0 * w + x0];
                let v01 = src[y0 * w + x1];
                let v10 = src[y1 * w + x0];
                let v11 = src[y1 * w + x1];
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                dst[oy * ow + ox] = top + (bot - top) * fy;
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

/// Nearest-neighbour resize; preserves binarity of masks.
pub fn resize_nearest(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = x.chw();
    if oh == h && ow == w {
        return x.clone();
    }
    let xd = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        let src = &xd[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for oy in 0..oh {
            let iy = ((oy as f64 + 0.5) * h as f64 / oh as f64).floor() as usize;
            let iy = iy.min(h - 1);
            for ox in 0..ow {
                let ix = ((ox as f64 + 0.5) * w as f64 / ow as f64).floor() as usize;
                let ix = ix.min(w - 1);
                dst[oy * ow + ox] = src[iy * w + ix];
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

/// Adaptive average pooling windows: start/end per output index.
pub(crate) fn pool_window(in_len: usize, out_len: usize, i: usize) -> (usize, usize) {
    let start = i * in_len / out_len;
    let end = ((i + 1) * in_len).div_ceil(out_len);
    (start, end.max(start + 1).min(in_len))
}

/// Adaptive average pooling of [C,H,W] to [C,oh,ow].
pub fn adaptive_avg_pool(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = x.chw();
    let xd = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        let src = &xd[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = pool_window(h, oh, oy);
            for ox in 0..ow {
                let (x0, x1) = pool_window(w, ow, ox);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += src[y * w + x];
                    }
                }
                out[(ci * oh + oy) * ow + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

/// Per-channel spatial mean of a [C,H,W] tensor, shaped [C].
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let scale = 1.0 / (h * w) as f64;
    let xd = x.data();
    let data = (0..c)
        .map(|ci| xd[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() * scale)
        .collect();
    Tensor::from_vec(&[c], data)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        gemm_nn(2, 3, 2, &a, &b, 0.0, &mut c);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);

        // a * b^T with b stored [2 x 3]
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c2 = vec![0.0; 4];
        gemm_nt(2, 3, 2, &a, &bt, 0.0, &mut c2);
        assert_eq!(c2, c);

        // a^T stored as a with m/k swapped: (3x2)^T * (3x2) = 2x2
        let mut c3 = vec![0.0; 4];
        gemm_tn(2, 3, 2, &b, &b, 0.0, &mut c3);
        assert_eq!(c3, vec![251.0, 278.0, 278.0, 308.0]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]);
        let y = conv2d(&x, &w, None, 1, 0);
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        // 2-channel 4x4 input, 3 output channels, 3x3 kernel, stride 2, pad 1.
        let mut x = Vec::new();
        for i in 0..32 {
            x.push((i as f64 * 0.37).sin());
        }
        let x = Tensor::from_vec(&[2, 4, 4], x);
        let mut wv = Vec::new();
        for i in 0..(3 * 2 * 9) {
            wv.push((i as f64 * 0.11).cos());
        }
        let w = Tensor::from_vec(&[3, 2, 3, 3], wv);
        let b = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]);
        let y = conv2d(&x, &w, Some(&b), 2, 1);
        assert_eq!(y.shape(), &[3, 2, 2]);

        // scalar loop oracle
        let (c, h, wd) = x.chw();
        for o in 0..3 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut acc = b.data()[o];
                    for ci in 0..c {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * 2 + ki) as isize - 1;
                                let ix = (ox * 2 + kj) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[(ci * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((o * c + ci) * 3 + ki) * 3 + kj];
                                acc += xv * wv;
                            }
                        }
                    }
                    let got = y.data()[(o * 2 + oy) * 2 + ox];
                    assert!((got - acc).abs() < 1e-12, "mismatch at {o},{oy},{ox}");
                }
            }
        }
    }

    #[test]
    fn resize_same_size_is_identity() {
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(resize_bilinear(&x, 2, 3), x);
    }

    #[test]
    fn resize_from_single_pixel_broadcasts() {
        let x = Tensor::from_vec(&[2, 1, 1], vec![3.0, -1.0]);
        let y = resize_bilinear(&x, 4, 4);
        assert!(y.data()[..16].iter().all(|&v| v == 3.0));
        assert!(y.data()[16..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn adaptive_pool_full_window_is_mean() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = adaptive_avg_pool(&x, 1, 1);
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn gap_matches_loop() {
        let x = Tensor::from_vec(&[3, 2, 2], (0..12).map(|i| i as f64).collect());
        let v = global_avg_pool(&x);
        assert_eq!(v.data(), &[1.5, 5.5, 9.5]);
    }
}
