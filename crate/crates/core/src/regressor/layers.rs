//! Forward and backward kernels for the fixed layer vocabulary: 2-D
//! convolution (via im2col + GEMM), batch normalization, ReLU, 2×2 max
//! pooling and fully connected layers. Activations are `[N, C, H, W]`
//! row-major; weights follow the same layout as PyTorch.

use rayon::prelude::*;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Geometry of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.out_plane()
    }
}

/// `C[m×n] = alpha·A[m×k]·B[k×n] + beta·C`, all row-major with optional
/// transposition expressed through strides.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked above to cover the strided views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    dx.fill(0.0);
    for ci in 0..g.cin {
        let xc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution without bias. Returns the output and the im2col buffers
/// needed by [`conv_backward`].
pub fn conv_forward(x: &[f64], n: usize, weight: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let col_len = g.col_rows() * g.out_plane();
    let mut cols = vec![0.0; n * col_len];
    let mut out = vec![0.0; n * g.out_len()];
    cols.par_chunks_mut(col_len)
        .zip(out.par_chunks_mut(g.out_len()))
        .enumerate()
        .for_each(|(i, (col, y))| {
            im2col(&x[i * g.in_len()..(i + 1) * g.in_len()], g, col);
            gemm(g.cout, g.col_rows(), g.out_plane(), weight, false, col, false, y, 0.0);
        });
    (out, cols)
}

/// Returns `(dW, dX)`; `dX` is skipped when `need_dx` is false.
pub fn conv_backward(
    dy: &[f64],
    cols: &[f64],
    n: usize,
    weight: &[f64],
    g: &ConvGeom,
    need_dx: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let col_len = g.col_rows() * g.out_plane();
    let wlen = g.cout * g.col_rows();
    let partials: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dyi = &dy[i * g.out_len()..(i + 1) * g.out_len()];
            let col = &cols[i * col_len..(i + 1) * col_len];
            let mut dw = vec![0.0; wlen];
            gemm(g.cout, g.out_plane(), g.col_rows(), dyi, false, col, true, &mut dw, 0.0);
            let dx = need_dx.then(|| {
                let mut dcol = vec![0.0; col_len];
                gemm(g.col_rows(), g.cout, g.out_plane(), weight, true, dyi, false, &mut dcol, 0.0);
                let mut dx = vec![0.0; g.in_len()];
                col2im(&dcol, g, &mut dx);
                dx
            });
            (dw, dx)
        })
        .collect();
    let mut dw = vec![0.0; wlen];
    let mut dx = need_dx.then(|| Vec::with_capacity(n * g.in_len()));
    for (pw, px) in partials {
        for (a, b) in dw.iter_mut().zip(pw.iter()) {
            *a += b;
        }
        if let (Some(acc), Some(px)) = (dx.as_mut(), px) {
            acc.extend_from_slice(&px);
        }
    }
    (dw, dx)
}

/// Per-channel mean and biased variance over batch and spatial positions.
pub fn channel_stats(x: &[f64], n: usize, c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            let off = (i * c + ch) * plane;
            s += x[off..off + plane].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for i in 0..n {
            let off = (i * c + ch) * plane;
            v += x[off..off + plane].iter().map(|t| (t - mu) * (t - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    (mean, var)
}

/// Normalizes `x` in place to `x̂ = (x − mean)·inv_std` and returns
/// `γ·x̂ + β` as a new buffer.
#[allow(clippy::too_many_arguments)]
pub fn bn_apply(
    x: &mut [f64],
    n: usize,
    c: usize,
    plane: usize,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * plane;
            let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for (xv, o) in x[off..off + plane].iter_mut().zip(out[off..off + plane].iter_mut()) {
                let xh = (*xv - mu) * is;
                *xv = xh;
                *o = g * xh + b;
            }
        }
    }
    out
}

/// Returns `(dx, dgamma, dbeta)`. With `batch_stats` the statistics are
/// treated as functions of the batch (train mode); otherwise they are
/// constants (eval mode).
#[allow(clippy::too_many_arguments)]
pub fn bn_backward(
    dz: &[f64],
    xhat: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    inv_std: &[f64],
    gamma: &[f64],
    batch_stats: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (n * plane) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * plane;
            let (dz_s, xh_s) = (&dz[off..off + plane], &xhat[off..off + plane]);
            dbeta[ch] += dz_s.iter().sum::<f64>();
            dgamma[ch] += dz_s.iter().zip(xh_s.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let mut dx = vec![0.0; dz.len()];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * plane;
            let scale = gamma[ch] * inv_std[ch];
            let (mb, mg) = (dbeta[ch] / m, dgamma[ch] / m);
            for k in off..off + plane {
                dx[k] = if batch_stats {
                    scale * (dz[k] - mb - xhat[k] * mg)
                } else {
                    scale * dz[k]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` where the ReLU output is not positive.
pub fn relu_backward_inplace(grad: &mut [f64], out: &[f64]) {
    for (g, o) in grad.iter_mut().zip(out.iter()) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
/// Returns pooled values and the flat argmax index into `x`.
pub fn maxpool_forward(x: &[f64], nc: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; nc * oh * ow];
    let mut arg = vec![0u32; nc * oh * ow];
    for p in 0..nc {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + 2 * oy * w + 2 * ox;
                let mut best = x[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > best {
                        best = x[idx];
                        best_i = idx;
                    }
                }
                let o = (p * oh + oy) * ow + ox;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(dout: &[f64], arg: &[u32], in_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; in_len];
    for (g, &a) in dout.iter().zip(arg.iter()) {
        dx[a as usize] += g;
    }
    dx
}

/// `Y[n×out] = X[n×in]·Wᵀ + b` with `W` stored `[out, in]`.
pub fn linear_forward(x: &[f64], n: usize, fin: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let fout = b.len();
    let mut y = vec![0.0; n * fout];
    for row in y.chunks_exact_mut(fout) {
        row.copy_from_slice(b);
    }
    gemm(n, fin, fout, x, false, w, true, &mut y, 1.0);
    y
}

/// Returns `(dW, db, dX)`.
pub fn linear_backward(
    dy: &[f64],
    x: &[f64],
    n: usize,
    fin: usize,
    w: &[f64],
    fout: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; fout * fin];
    gemm(fout, n, fin, dy, true, x, false, &mut dw, 0.0);
    let mut db = vec![0.0; fout];
    for row in dy.chunks_exact(fout) {
        for (a, b) in db.iter_mut().zip(row.iter()) {
            *a += b;
        }
    }
    let mut dx = vec![0.0; n * fin];
    gemm(n, fout, fin, dy, false, w, false, &mut dx, 0.0);
    (dw, db, dx)
}
