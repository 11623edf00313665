//! Forward and backward kernels on NCHW buffers.

use super::tensor::{gemm, Elem, Mat};

/// Convolution window geometry. The frequency (height) axis is zero padded;
/// the time (width) axis either zero pads or wraps around.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub wrap_time: bool,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, pad: usize, wrap_time: bool) -> Self {
        Self {
            kh: k,
            kw: k,
            sh: stride,
            sw: stride,
            ph: pad,
            pw: pad,
            wrap_time,
        }
    }

    pub fn pointwise() -> Self {
        Self::square(1, 1, 0, false)
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    /// Output `(height, width)`, or `None` when the window does not fit.
    pub fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let hp = h + 2 * self.ph;
        let wp = w + 2 * self.pw;
        if hp < self.kh || wp < self.kw || self.sh == 0 || self.sw == 0 {
            return None;
        }
        Some(((hp - self.kh) / self.sh + 1, (wp - self.kw) / self.sw + 1))
    }
}

/// Copies a `[h, w]` plane into `[h + 2ph, w + 2pw]`: zero rows above and
/// below, and wrapped or zero columns on each side.
fn pad_plane<T: Elem>(plane: &[T], h: usize, w: usize, g: &ConvGeom, out: &mut [T]) {
    let wp = w + 2 * g.pw;
    out[..g.ph * wp].fill(T::zero());
    out[(h + g.ph) * wp..].fill(T::zero());
    for ih in 0..h {
        let dst = &mut out[(ih + g.ph) * wp..(ih + g.ph + 1) * wp];
        let src = &plane[ih * w..(ih + 1) * w];
        dst[g.pw..g.pw + w].copy_from_slice(src);
        for k in 0..g.pw {
            if g.wrap_time {
                dst[k] = src[(w - g.pw % w + k) % w];
                dst[g.pw + w + k] = src[k % w];
            } else {
                dst[k] = T::zero();
                dst[g.pw + w + k] = T::zero();
            }
        }
    }
}

/// Adjoint of [`pad_plane`]: accumulates a padded gradient into `[h, w]`.
fn unpad_add<T: Elem>(padded: &[T], h: usize, w: usize, g: &ConvGeom, plane: &mut [T]) {
    let wp = w + 2 * g.pw;
    for ih in 0..h {
        let src = &padded[(ih + g.ph) * wp..(ih + g.ph + 1) * wp];
        let dst = &mut plane[ih * w..(ih + 1) * w];
        for (d, &v) in dst.iter_mut().zip(&src[g.pw..g.pw + w]) {
            *d += v;
        }
        if g.wrap_time {
            for k in 0..g.pw {
                dst[(w - g.pw % w + k) % w] += src[k];
                dst[k % w] += src[g.pw + w + k];
            }
        }
    }
}

/// Unfolds one image `[c, h, w]` into `[c*kh*kw, ho*wo]`.
fn im2col<T: Elem>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    padded: &mut Vec<T>,
    col: &mut [T],
) {
    let (ho, wo) = g.out_hw(h, w).expect("checked by caller");
    let (hp, wp) = (h + 2 * g.ph, w + 2 * g.pw);
    let p = ho * wo;
    padded.resize(hp * wp, T::zero());
    for ci in 0..c {
        pad_plane(&x[ci * h * w..(ci + 1) * h * w], h, w, g, padded);
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((ci * g.kh + i) * g.kw + j) * p;
                let dst = &mut col[row..row + p];
                for oh in 0..ho {
                    let src = &padded[(oh * g.sh + i) * wp + j..(oh * g.sh + i + 1) * wp];
                    let out = &mut dst[oh * wo..(oh + 1) * wo];
                    if g.sw == 1 {
                        out.copy_from_slice(&src[..wo]);
                    } else {
                        for (o, v) in out.iter_mut().zip(src.chunks(g.sw)) {
                            *o = v[0];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[c*kh*kw, ho*wo]` back into `[c, h, w]`.
fn col2im<T: Elem>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    padded: &mut Vec<T>,
    dx: &mut [T],
) {
    let (ho, wo) = g.out_hw(h, w).expect("checked by caller");
    let (hp, wp) = (h + 2 * g.ph, w + 2 * g.pw);
    let p = ho * wo;
    padded.resize(hp * wp, T::zero());
    for ci in 0..c {
        padded.fill(T::zero());
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((ci * g.kh + i) * g.kw + j) * p;
                let src = &col[row..row + p];
                for oh in 0..ho {
                    let dst = &mut padded[(oh * g.sh + i) * wp + j..(oh * g.sh + i + 1) * wp];
                    for (d, &v) in dst.chunks_mut(g.sw).zip(&src[oh * wo..(oh + 1) * wo]) {
                        d[0] += v;
                    }
                }
            }
        }
        unpad_add(padded, h, w, g, &mut dx[ci * h * w..(ci + 1) * h * w]);
    }
}

pub struct ConvShape {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub ho: usize,
    pub wo: usize,
}

pub fn conv2d_forward<T: Elem>(x: &[T], weight: &[T], s: &ConvShape, g: &ConvGeom) -> Vec<T> {
    let k = s.cin * g.kh * g.kw;
    let (hw, p) = (s.h * s.w, s.ho * s.wo);
    let mut y = vec![T::zero(); s.b * s.cout * p];
    let wmat = Mat::new(weight, s.cout, k);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let mut scratch = Vec::new();
    for bi in 0..s.b {
        let xb = &x[bi * s.cin * hw..(bi + 1) * s.cin * hw];
        let yb = &mut y[bi * s.cout * p..(bi + 1) * s.cout * p];
        if g.is_pointwise() {
            gemm(wmat, Mat::new(xb, s.cin, hw), T::zero(), yb);
        } else {
            im2col(xb, s.cin, s.h, s.w, g, &mut scratch, &mut col);
            gemm(wmat, Mat::new(&col, k, p), T::zero(), yb);
        }
    }
    y
}

/// Returns `(dx, dweight)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward<T: Elem>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    s: &ConvShape,
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let k = s.cin * g.kh * g.kw;
    let (hw, p) = (s.h * s.w, s.ho * s.wo);
    let mut dw = vec![T::zero(); s.cout * k];
    let mut dx = need_dx.then(|| vec![T::zero(); s.b * s.cin * hw]);
    let wmat = Mat::new(weight, s.cout, k);
    let pointwise = g.is_pointwise();
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let mut dcol = if pointwise || !need_dx {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let mut scratch = Vec::new();
    for bi in 0..s.b {
        let xb = &x[bi * s.cin * hw..(bi + 1) * s.cin * hw];
        let dyb = Mat::new(&dy[bi * s.cout * p..(bi + 1) * s.cout * p], s.cout, p);
        let cols = if pointwise {
            Mat::new(xb, s.cin, hw)
        } else {
            im2col(xb, s.cin, s.h, s.w, g, &mut scratch, &mut col);
            Mat::new(&col, k, p)
        };
        gemm(dyb, cols.t(), T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[bi * s.cin * hw..(bi + 1) * s.cin * hw];
            if pointwise {
                gemm(wmat.t(), dyb, T::zero(), dxb);
            } else {
                gemm(wmat.t(), dyb, T::zero(), &mut dcol);
                col2im(&dcol, s.cin, s.h, s.w, g, &mut scratch, dxb);
            }
        }
    }
    (dx, dw)
}

/// `[rows, cols]` to `[cols, rows]`.
fn transpose<T: Elem>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        for (c, &v) in src[r * cols..(r + 1) * cols].iter().enumerate() {
            dst[c * rows + r] = v;
        }
    }
}

/// Source pixel of every `(output pixel, tap)` pair, or `None` in the zero
/// padding. Indexed `[pixel * kk + tap]`.
fn tap_sources(s: &ConvShape, g: &ConvGeom) -> Vec<Option<usize>> {
    let mut out = Vec::with_capacity(s.ho * s.wo * g.kh * g.kw);
    for oh in 0..s.ho {
        for ow in 0..s.wo {
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let ih = (oh * g.sh + i) as isize - g.ph as isize;
                    let iw = (ow * g.sw + j) as isize - g.pw as isize;
                    let iw = if g.wrap_time {
                        Some(iw.rem_euclid(s.w as isize))
                    } else {
                        Some(iw)
                    };
                    out.push(match iw {
                        Some(iw)
                            if ih >= 0 && (ih as usize) < s.h && iw >= 0 && (iw as usize) < s.w =>
                        {
                            Some(ih as usize * s.w + iw as usize)
                        }
                        _ => None,
                    });
                }
            }
        }
    }
    out
}

/// Per-channel convolution with weight `[c, 1, kh, kw]`. Works channel-last
/// internally so the inner loop runs over channels.
pub fn depthwise_forward<T: Elem>(x: &[T], weight: &[T], s: &ConvShape, g: &ConvGeom) -> Vec<T> {
    let c = s.cin;
    let (hw, p) = (s.h * s.w, s.ho * s.wo);
    let kk = g.kh * g.kw;
    let taps = tap_sources(s, g);
    let mut wt = vec![T::zero(); kk * c];
    transpose(weight, c, kk, &mut wt);
    let mut xt = vec![T::zero(); hw * c];
    let mut yt = vec![T::zero(); p * c];
    let mut y = vec![T::zero(); s.b * c * p];
    for bi in 0..s.b {
        transpose(&x[bi * c * hw..(bi + 1) * c * hw], c, hw, &mut xt);
        yt.fill(T::zero());
        for (pix, acc) in yt.chunks_exact_mut(c).enumerate() {
            for (k, src) in taps[pix * kk..(pix + 1) * kk].iter().enumerate() {
                let Some(src) = *src else { continue };
                let xs = &xt[src * c..(src + 1) * c];
                let ws = &wt[k * c..(k + 1) * c];
                for ((a, &xv), &wv) in acc.iter_mut().zip(xs).zip(ws) {
                    *a += xv * wv;
                }
            }
        }
        transpose(&yt, p, c, &mut y[bi * c * p..(bi + 1) * c * p]);
    }
    y
}

pub fn depthwise_backward<T: Elem>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    s: &ConvShape,
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let c = s.cin;
    let (hw, p) = (s.h * s.w, s.ho * s.wo);
    let kk = g.kh * g.kw;
    let taps = tap_sources(s, g);
    let mut wt = vec![T::zero(); kk * c];
    transpose(weight, c, kk, &mut wt);
    let mut dwt = vec![T::zero(); kk * c];
    let mut xt = vec![T::zero(); hw * c];
    let mut dyt = vec![T::zero(); p * c];
    let mut dxt = vec![T::zero(); if need_dx { hw * c } else { 0 }];
    let mut dx = need_dx.then(|| vec![T::zero(); s.b * c * hw]);
    for bi in 0..s.b {
        transpose(&x[bi * c * hw..(bi + 1) * c * hw], c, hw, &mut xt);
        transpose(&dy[bi * c * p..(bi + 1) * c * p], c, p, &mut dyt);
        dxt.fill(T::zero());
        for (pix, grad) in dyt.chunks_exact(c).enumerate() {
            for (k, src) in taps[pix * kk..(pix + 1) * kk].iter().enumerate() {
                let Some(src) = *src else { continue };
                let xs = &xt[src * c..(src + 1) * c];
                for ((d, &gv), &xv) in dwt[k * c..(k + 1) * c].iter_mut().zip(grad).zip(xs) {
                    *d += gv * xv;
                }
                if need_dx {
                    let ws = &wt[k * c..(k + 1) * c];
                    for ((d, &gv), &wv) in dxt[src * c..(src + 1) * c].iter_mut().zip(grad).zip(ws)
                    {
                        *d += gv * wv;
                    }
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            transpose(&dxt, hw, c, &mut dx[bi * c * hw..(bi + 1) * c * hw]);
        }
    }
    let mut dw = vec![T::zero(); c * kk];
    transpose(&dwt, kk, c, &mut dw);
    (dx, dw)
}

/// Per-channel mean and biased variance over batch and space, in `f64`.
pub fn channel_stats<T: Elem>(x: &[T], b: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (b * hw) as f64;
    let mut mean = vec![0f64; c];
    let mut var = vec![0f64; c];
    for ci in 0..c {
        let mut sum = 0f64;
        for bi in 0..b {
            sum += x[(bi * c + ci) * hw..(bi * c + ci + 1) * hw]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        let m = sum / n;
        let mut sq = 0f64;
        for bi in 0..b {
            sq += x[(bi * c + ci) * hw..(bi * c + ci + 1) * hw]
                .iter()
                .map(|v| (v.as_f64() - m).powi(2))
                .sum::<f64>();
        }
        mean[ci] = m;
        var[ci] = sq / n;
    }
    (mean, var)
}

/// `y = gamma * (x - mean) * invstd + beta`, returning `y` and the normalized input.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_apply<T: Elem>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[f64],
    invstd: &[f64],
    b: usize,
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let (m, is) = (mean[ci], invstd[ci]);
            let (ga, be) = (gamma[ci].as_f64(), beta[ci].as_f64());
            let base = (bi * c + ci) * hw;
            for i in base..base + hw {
                let n = (x[i].as_f64() - m) * is;
                xhat[i] = T::from_f64(n);
                y[i] = T::from_f64(ga * n + be);
            }
        }
    }
    (y, xhat)
}

/// Gradients of batch norm. With `batch_stats` the mean and variance are
/// functions of the input (training mode); otherwise they are constants.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_backward<T: Elem>(
    dy: &[T],
    xhat: &[T],
    gamma: &[T],
    invstd: &[f64],
    b: usize,
    c: usize,
    hw: usize,
    batch_stats: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = (b * hw) as f64;
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ci in 0..c {
        let mut sum_dy = 0f64;
        let mut sum_dy_xhat = 0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for i in base..base + hw {
                let d = dy[i].as_f64();
                sum_dy += d;
                sum_dy_xhat += d * xhat[i].as_f64();
            }
        }
        dgamma[ci] = T::from_f64(sum_dy_xhat);
        dbeta[ci] = T::from_f64(sum_dy);
        let scale = gamma[ci].as_f64() * invstd[ci];
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for i in base..base + hw {
                let d = dy[i].as_f64();
                let g = if batch_stats {
                    scale / n * (n * d - sum_dy - xhat[i].as_f64() * sum_dy_xhat)
                } else {
                    scale * d
                };
                dx[i] = T::from_f64(g);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Log-sum-exp softmax of each row, in `f64`.
pub fn softmax_rows<T: Elem>(logits: &[T], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0f64; rows * cols];
    for r in 0..rows {
        let row = &logits[r * cols..(r + 1) * cols];
        let max = row
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in out[r * cols..(r + 1) * cols].iter_mut().zip(exps) {
            *o = e / sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes() {
        let g = ConvGeom::square(3, 2, 1, true);
        assert_eq!(g.out_hw(128, 38), Some((64, 19)));
        assert_eq!(g.out_hw(8, 3), Some((4, 2)));
        let gd = ConvGeom {
            kh: 8,
            kw: 1,
            sh: 1,
            sw: 1,
            ph: 0,
            pw: 0,
            wrap_time: false,
        };
        assert_eq!(gd.out_hw(8, 3), Some((1, 3)));
        assert_eq!(gd.out_hw(4, 3), None);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for any x, c.
        for wrap in [false, true] {
            let g = ConvGeom::square(3, 2, 1, wrap);
            let (c, h, w) = (2, 5, 6);
            let (ho, wo) = g.out_hw(h, w).unwrap();
            let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
            let cv: Vec<f64> = (0..c * 9 * ho * wo)
                .map(|i| (i as f64 * 0.11).cos())
                .collect();
            let mut scratch = Vec::new();
            let mut col = vec![0.0; cv.len()];
            im2col(&x, c, h, w, &g, &mut scratch, &mut col);
            let mut back = vec![0.0; x.len()];
            col2im(&cv, c, h, w, &g, &mut scratch, &mut back);
            let lhs: f64 = col.iter().zip(&cv).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&[1000.0f32, 0.0, -1000.0, 1.0, 2.0, 3.0], 2, 3);
        assert!((p[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.999);
    }
}
