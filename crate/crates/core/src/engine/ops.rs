//! Layer kernels. Spatial activations are stored channel-major as
//! `[C][N][H][W]` so a convolution over the whole batch is one GEMM and batch
//! norm statistics are contiguous per channel. Flat activations are `[N][F]`.

use super::scalar::{gemm_nn, gemm_nt, gemm_tn};
use super::Scalar;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// The input layout already is the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        let (ho, wo) = self.out_hw();
        self.n * ho * wo
    }
}

pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let plane = g.h * g.w;
    let ncols = g.col_cols();
    let mut cols = vec![T::zero(); g.col_rows() * ncols];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let src = &x[(ci * g.n + b) * plane..(ci * g.n + b + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let drow = &mut dst[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let plane = g.h * g.w;
    let ncols = g.col_cols();
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let dst = &mut dx[(ci * g.n + b) * plane..(ci * g.n + b + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let srow = &src[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and, for non-pointwise kernels, the column matrix
/// needed by the weight gradient.
pub(crate) fn conv_forward<T: Scalar>(x: &[T], weight: &[T], g: &ConvGeom) -> (Vec<T>, Option<Vec<T>>) {
    let ncols = g.col_cols();
    let mut out = vec![T::zero(); g.cout * ncols];
    if g.is_pointwise() {
        gemm_nn(g.cout, g.col_rows(), ncols, weight, x, T::zero(), &mut out);
        (out, None)
    } else {
        let cols = im2col(x, g);
        gemm_nn(g.cout, g.col_rows(), ncols, weight, &cols, T::zero(), &mut out);
        (out, Some(cols))
    }
}

/// Accumulates into `dweight` and/or `dx` when given.
pub(crate) fn conv_backward<T: Scalar>(
    dout: &[T],
    cols: &[T],
    weight: &[T],
    g: &ConvGeom,
    dweight: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let ncols = g.col_cols();
    let rows = g.col_rows();
    if let Some(dw) = dweight {
        gemm_nt(g.cout, ncols, rows, dout, cols, T::one(), dw);
    }
    if let Some(dx) = dx {
        if g.is_pointwise() {
            gemm_tn(rows, g.cout, ncols, weight, dout, T::one(), dx);
        } else {
            let mut dcols = vec![T::zero(); rows * ncols];
            gemm_tn(rows, g.cout, ncols, weight, dout, T::zero(), &mut dcols);
            col2im_add(&dcols, g, dx);
        }
    }
}

pub(crate) struct BnBatch<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Batch-statistics normalization; `per_channel` elements per channel.
pub(crate) fn bn_train_forward<T: Scalar>(
    x: &[T],
    channels: usize,
    per_channel: usize,
    gamma: &[T],
    beta: &[T],
) -> BnBatch<T> {
    let eps = T::from_f64_lossy(BN_EPS);
    let m = T::from_usize(per_channel).unwrap();
    let mut out = BnBatch {
        y: vec![T::zero(); x.len()],
        xhat: vec![T::zero(); x.len()],
        inv_std: vec![T::zero(); channels],
        mean: vec![T::zero(); channels],
        var: vec![T::zero(); channels],
    };
    for c in 0..channels {
        let xs = &x[c * per_channel..(c + 1) * per_channel];
        let mean = xs.iter().copied().sum::<T>() / m;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
        let inv_std = (var + eps).sqrt().recip();
        let xh = &mut out.xhat[c * per_channel..(c + 1) * per_channel];
        let ys = &mut out.y[c * per_channel..(c + 1) * per_channel];
        for ((h, y), &v) in xh.iter_mut().zip(ys.iter_mut()).zip(xs) {
            *h = (v - mean) * inv_std;
            *y = gamma[c] * *h + beta[c];
        }
        out.inv_std[c] = inv_std;
        out.mean[c] = mean;
        out.var[c] = var;
    }
    out
}

pub(crate) fn bn_train_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    per_channel: usize,
    mut dgamma: Option<&mut [T]>,
    mut dbeta: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let channels = inv_std.len();
    let m = T::from_usize(per_channel).unwrap();
    let mut dx = dx;
    for c in 0..channels {
        let r = c * per_channel..(c + 1) * per_channel;
        let dys = &dy[r.clone()];
        let xh = &xhat[r.clone()];
        let sum_dy: T = dys.iter().copied().sum();
        let sum_dy_xh: T = dys.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        if let Some(dg) = dgamma.as_deref_mut() {
            dg[c] += sum_dy_xh;
        }
        if let Some(db) = dbeta.as_deref_mut() {
            db[c] += sum_dy;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let scale = gamma[c] * inv_std[c] / m;
            for ((d, &g), &h) in dx[r].iter_mut().zip(dys).zip(xh) {
                *d += scale * (m * g - sum_dy - h * sum_dy_xh);
            }
        }
    }
}

/// Normalization with fixed statistics; returns `(y, xhat)`.
pub(crate) fn bn_fixed_forward<T: Scalar>(
    x: &[T],
    per_channel: usize,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
) -> (Vec<T>, Vec<T>) {
    let eps = T::from_f64_lossy(BN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for c in 0..gamma.len() {
        let inv = (var[c] + eps).sqrt().recip();
        let r = c * per_channel..(c + 1) * per_channel;
        for ((yo, ho), &v) in y[r.clone()].iter_mut().zip(&mut xhat[r.clone()]).zip(&x[r]) {
            *ho = (v - mean[c]) * inv;
            *yo = gamma[c] * *ho + beta[c];
        }
    }
    (y, xhat)
}

pub(crate) fn bn_fixed_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    per_channel: usize,
    gamma: &[T],
    var: &[T],
    mut dgamma: Option<&mut [T]>,
    mut dbeta: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let eps = T::from_f64_lossy(BN_EPS);
    for c in 0..gamma.len() {
        let r = c * per_channel..(c + 1) * per_channel;
        let dys = &dy[r.clone()];
        if let Some(dg) = dgamma.as_deref_mut() {
            dg[c] += dys.iter().zip(&xhat[r.clone()]).map(|(&a, &b)| a * b).sum::<T>();
        }
        if let Some(db) = dbeta.as_deref_mut() {
            db[c] += dys.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_deref_mut() {
            let scale = gamma[c] / (var[c] + eps).sqrt();
            for (d, &g) in dx[r].iter_mut().zip(dys) {
                *d += scale * g;
            }
        }
    }
}

/// 3x3 average pool, stride 1, zero padding 1; always divides by 9.
pub(crate) fn avgpool3_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let ninth = T::from_f64_lossy(1.0 / 9.0);
    let mut y = vec![T::zero(); x.len()];
    for p in 0..planes {
        let xs = &x[p * h * w..(p + 1) * h * w];
        let ys = &mut y[p * h * w..(p + 1) * h * w];
        for oy in 0..h {
            let y0 = oy.saturating_sub(1);
            let y1 = (oy + 1).min(h - 1);
            for ox in 0..w {
                let x0 = ox.saturating_sub(1);
                let x1 = (ox + 1).min(w - 1);
                let mut acc = T::zero();
                for iy in y0..=y1 {
                    for ix in x0..=x1 {
                        acc += xs[iy * w + ix];
                    }
                }
                ys[oy * w + ox] = acc * ninth;
            }
        }
    }
    y
}

pub(crate) fn avgpool3_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let ninth = T::from_f64_lossy(1.0 / 9.0);
    for p in 0..planes {
        let ds = &dy[p * h * w..(p + 1) * h * w];
        let dxs = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..h {
            let y0 = oy.saturating_sub(1);
            let y1 = (oy + 1).min(h - 1);
            for ox in 0..w {
                let g = ds[oy * w + ox] * ninth;
                let x0 = ox.saturating_sub(1);
                let x1 = (ox + 1).min(w - 1);
                for iy in y0..=y1 {
                    for ix in x0..=x1 {
                        dxs[iy * w + ix] += g;
                    }
                }
            }
        }
    }
}

/// `[C][N][HW]` -> `[N][C]`.
pub(crate) fn gap_forward<T: Scalar>(x: &[T], c: usize, n: usize, hw: usize) -> Vec<T> {
    let inv = T::from_usize(hw).unwrap().recip();
    let mut y = vec![T::zero(); n * c];
    for ch in 0..c {
        for b in 0..n {
            let s: T = x[(ch * n + b) * hw..(ch * n + b + 1) * hw].iter().copied().sum();
            y[b * c + ch] = s * inv;
        }
    }
    y
}

pub(crate) fn gap_backward<T: Scalar>(dy: &[T], c: usize, n: usize, hw: usize, dx: &mut [T]) {
    let inv = T::from_usize(hw).unwrap().recip();
    for ch in 0..c {
        for b in 0..n {
            let g = dy[b * c + ch] * inv;
            for d in &mut dx[(ch * n + b) * hw..(ch * n + b + 1) * hw] {
                *d += g;
            }
        }
    }
}

/// `y[N][O] = x[N][F] * W^T + b`, `W` stored `[O][F]`.
pub(crate) fn linear_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], n: usize, f: usize, o: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * o];
    for row in y.chunks_mut(o) {
        row.copy_from_slice(bias);
    }
    gemm_nt(n, f, o, x, weight, T::one(), &mut y);
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    weight: &[T],
    n: usize,
    f: usize,
    o: usize,
    dweight: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    if let Some(dw) = dweight {
        // dW[O][F] += dy^T x
        gemm_tn(o, n, f, dy, x, T::one(), dw);
    }
    if let Some(db) = dbias {
        for row in dy.chunks(o) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
    }
    if let Some(dx) = dx {
        gemm_nn(n, o, f, dy, weight, T::one(), dx);
    }
}

/// Sample-major `[N][C][H][W]` -> channel-major `[C][N][H][W]` (and back,
/// with the roles of `n` and `c` swapped).
pub(crate) fn swap_leading<T: Copy>(x: &[T], outer: usize, inner: usize, plane: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(x.len());
    for i in 0..inner {
        for o in 0..outer {
            let start = (o * inner + i) * plane;
            y.extend_from_slice(&x[start..start + plane]);
        }
    }
    y
}
