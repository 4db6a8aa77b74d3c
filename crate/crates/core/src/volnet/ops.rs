//! Forward and backward kernels for the layers of the network.
//!
//! Every layer works on `(batch, channels, d, h, w)` tensors. Convolutions are
//! lowered to im2col + GEMM per sample.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::{gemm, Real, Trans};
use crate::tensor::{voxels, Dims3, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn same(k: usize) -> Self {
        Self { k, stride: 1, pad: k / 2 }
    }

    pub fn down2() -> Self {
        Self { k: 2, stride: 2, pad: 0 }
    }

    pub fn out_dims(&self, d: Dims3) -> Dims3 {
        let f = |n: usize| (n + 2 * self.pad - self.k) / self.stride + 1;
        [f(d[0]), f(d[1]), f(d[2])]
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds `x` (`c × dims`) into `col` (`c·k³ × out_vox`).
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, dims: Dims3, g: ConvGeom, col: &mut [T]) {
    let od = g.out_dims(dims);
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let ov = voxels(od);
    let plane = od[1] * od[2];
    for ci in 0..c {
        let xc = &x[ci * voxels(dims)..(ci + 1) * voxels(dims)];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = ((ci * k + kd) * k + kh) * k + kw;
                    let dst = &mut col[row * ov..(row + 1) * ov];
                    for oz in 0..od[0] {
                        let iz = (oz * s + kd) as isize - p;
                        let dz = &mut dst[oz * plane..(oz + 1) * plane];
                        if iz < 0 || iz >= dims[0] as isize {
                            dz.fill(T::zero());
                            continue;
                        }
                        for oy in 0..od[1] {
                            let iy = (oy * s + kh) as isize - p;
                            let dr = &mut dz[oy * od[2]..(oy + 1) * od[2]];
                            if iy < 0 || iy >= dims[1] as isize {
                                dr.fill(T::zero());
                                continue;
                            }
                            let src = &xc[(iz as usize * dims[1] + iy as usize) * dims[2]..][..dims[2]];
                            for (ox, v) in dr.iter_mut().enumerate() {
                                let ix = (ox * s + kw) as isize - p;
                                *v = if ix < 0 || ix >= dims[2] as isize { T::zero() } else { src[ix as usize] };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `x`.
pub(crate) fn col2im<T: Real>(col: &[T], c: usize, dims: Dims3, g: ConvGeom, x: &mut [T]) {
    let od = g.out_dims(dims);
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let ov = voxels(od);
    let plane = od[1] * od[2];
    for ci in 0..c {
        let xc = &mut x[ci * voxels(dims)..(ci + 1) * voxels(dims)];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = ((ci * k + kd) * k + kh) * k + kw;
                    let src = &col[row * ov..(row + 1) * ov];
                    for oz in 0..od[0] {
                        let iz = (oz * s + kd) as isize - p;
                        if iz < 0 || iz >= dims[0] as isize {
                            continue;
                        }
                        for oy in 0..od[1] {
                            let iy = (oy * s + kh) as isize - p;
                            if iy < 0 || iy >= dims[1] as isize {
                                continue;
                            }
                            let sr = &src[oz * plane + oy * od[2]..][..od[2]];
                            let dst = &mut xc[(iz as usize * dims[1] + iy as usize) * dims[2]..][..dims[2]];
                            for (ox, &v) in sr.iter().enumerate() {
                                let ix = (ox * s + kw) as isize - p;
                                if ix >= 0 && ix < dims[2] as isize {
                                    dst[ix as usize] = dst[ix as usize] + v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution: `w` is `(cout, cin, k, k, k)`, `b` is `(cout)`.
pub(crate) fn conv_forward<T: Real>(x: &Tensor<T>, w: &[T], b: &[T], cout: usize, g: ConvGeom) -> Tensor<T> {
    let cin = x.channels();
    let dims = x.spatial();
    let od = g.out_dims(dims);
    let ov = voxels(od);
    let kk = cin * g.k * g.k * g.k;
    let mut y = Tensor::zeros([x.batch(), cout, od[0], od[1], od[2]]);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * ov] };
    for n in 0..x.batch() {
        let xs = x.sample(n);
        let src: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, cin, dims, g, &mut col);
            &col
        };
        let ys = y.sample_mut(n);
        for (co, row) in ys.chunks_exact_mut(ov).enumerate() {
            row.fill(b[co]);
        }
        gemm(cout, kk, ov, T::one(), w, Trans::No, src, Trans::No, T::one(), ys);
    }
    y
}

/// Returns `dx` (if requested) and accumulates into `dw`/`db` (if given).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    dy: &Tensor<T>,
    g: ConvGeom,
    need_dx: bool,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) -> Option<Tensor<T>> {
    let cin = x.channels();
    let cout = dy.channels();
    let dims = x.spatial();
    let ov = dy.voxels();
    let kk = cin * g.k * g.k * g.k;
    let mut dx = if need_dx { Some(Tensor::zeros(x.shape)) } else { None };
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * ov] };
    for n in 0..x.batch() {
        let dys = dy.sample(n);
        if let Some(db) = db.as_deref_mut() {
            for (co, row) in dys.chunks_exact(ov).enumerate() {
                db[co] = db[co] + row.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let src: &[T] = if g.is_pointwise() {
                x.sample(n)
            } else {
                im2col(x.sample(n), cin, dims, g, &mut col);
                &col
            };
            gemm(cout, ov, kk, T::one(), dys, Trans::No, src, Trans::Yes, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            if g.is_pointwise() {
                gemm(kk, cout, ov, T::one(), w, Trans::Yes, dys, Trans::No, T::zero(), dx.sample_mut(n));
            } else {
                gemm(kk, cout, ov, T::one(), w, Trans::Yes, dys, Trans::No, T::zero(), &mut col);
                col2im(&col, cin, dims, g, dx.sample_mut(n));
            }
        }
    }
    dx
}

/// Transposed convolution with kernel 2, stride 2: `w` is `(cin, cout, 2, 2, 2)`.
pub(crate) fn up_forward<T: Real>(x: &Tensor<T>, w: &[T], b: &[T], cout: usize) -> Tensor<T> {
    let cin = x.channels();
    let iv = x.voxels();
    let d = x.spatial();
    let od = [d[0] * 2, d[1] * 2, d[2] * 2];
    let g = ConvGeom::down2();
    let mut y = Tensor::zeros([x.batch(), cout, od[0], od[1], od[2]]);
    let mut col = vec![T::zero(); cout * 8 * iv];
    let ovox = voxels(od);
    for n in 0..x.batch() {
        gemm(cout * 8, cin, iv, T::one(), w, Trans::Yes, x.sample(n), Trans::No, T::zero(), &mut col);
        let ys = y.sample_mut(n);
        col2im(&col, cout, od, g, ys);
        for (co, row) in ys.chunks_exact_mut(ovox).enumerate() {
            for v in row {
                *v = *v + b[co];
            }
        }
    }
    y
}

pub(crate) fn up_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    dy: &Tensor<T>,
    need_dx: bool,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) -> Option<Tensor<T>> {
    let cin = x.channels();
    let cout = dy.channels();
    let iv = x.voxels();
    let od = dy.spatial();
    let ovox = voxels(od);
    let g = ConvGeom::down2();
    let mut dx = if need_dx { Some(Tensor::zeros(x.shape)) } else { None };
    let mut col = vec![T::zero(); cout * 8 * iv];
    for n in 0..x.batch() {
        let dys = dy.sample(n);
        if let Some(db) = db.as_deref_mut() {
            for (co, row) in dys.chunks_exact(ovox).enumerate() {
                db[co] = db[co] + row.iter().copied().sum::<T>();
            }
        }
        im2col(dys, cout, od, g, &mut col);
        if let Some(dw) = dw.as_deref_mut() {
            gemm(cin, iv, cout * 8, T::one(), x.sample(n), Trans::No, &col, Trans::Yes, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(cin, cout * 8, iv, T::one(), w, Trans::No, &col, Trans::No, T::zero(), dx.sample_mut(n));
        }
    }
    dx
}

/// Per-group statistics of a normalization layer.
#[derive(Clone, Debug)]
pub(crate) struct NormStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Unbiased variance, used for running-statistics updates.
    pub var_unbiased: Vec<T>,
    pub per_sample: bool,
    pub from_batch: bool,
}

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Iterates the contiguous slices that make up normalization group `(n, c)`.
fn group_slices<T: Real>(x: &Tensor<T>, c: usize, n: usize) -> &[T] {
    let v = x.voxels();
    &x.sample(n)[c * v..(c + 1) * v]
}

/// Computes batch (`per_sample == false`) or instance statistics.
pub(crate) fn norm_stats<T: Real>(x: &Tensor<T>, per_sample: bool) -> NormStats<T> {
    let (nb, nc) = (x.batch(), x.channels());
    let groups = if per_sample { nb * nc } else { nc };
    let mut mean = vec![T::zero(); groups];
    let mut inv_std = vec![T::zero(); groups];
    let mut var_unbiased = vec![T::zero(); groups];
    let eps = T::from_f64_lossy(NORM_EPS);
    for gi in 0..groups {
        let members: Vec<(usize, usize)> =
            if per_sample { vec![(gi / nc, gi % nc)] } else { (0..nb).map(|n| (n, gi)).collect() };
        let m = members.len() * x.voxels();
        let mf = T::from_usize(m).unwrap();
        let mut s = T::zero();
        for &(n, c) in &members {
            s = s + group_slices(x, c, n).iter().copied().sum::<T>();
        }
        let mu = s / mf;
        let mut sq = T::zero();
        for &(n, c) in &members {
            sq = sq + group_slices(x, c, n).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
        }
        let var = sq / mf;
        mean[gi] = mu;
        inv_std[gi] = T::one() / (var + eps).sqrt();
        var_unbiased[gi] = if m > 1 { sq / T::from_usize(m - 1).unwrap() } else { var };
    }
    NormStats { mean, inv_std, var_unbiased, per_sample, from_batch: true }
}

/// Statistics taken from running buffers (evaluation-mode batch norm).
pub(crate) fn norm_stats_running<T: Real>(mean: &[T], var: &[T]) -> NormStats<T> {
    let eps = T::from_f64_lossy(NORM_EPS);
    NormStats {
        mean: mean.to_vec(),
        inv_std: var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect(),
        var_unbiased: var.to_vec(),
        per_sample: false,
        from_batch: false,
    }
}

impl<T: Real> NormStats<T> {
    fn group(&self, n: usize, c: usize, channels: usize) -> usize {
        if self.per_sample {
            n * channels + c
        } else {
            c
        }
    }
}

pub(crate) fn norm_forward<T: Real>(x: &Tensor<T>, stats: &NormStats<T>, gamma: &[T], beta: &[T]) -> Tensor<T> {
    let mut y = Tensor::zeros(x.shape);
    let v = x.voxels();
    let nc = x.channels();
    for n in 0..x.batch() {
        let xs = x.sample(n);
        let ys = y.sample_mut(n);
        for c in 0..nc {
            let gi = stats.group(n, c, nc);
            let (mu, inv) = (stats.mean[gi], stats.inv_std[gi]);
            let (ga, be) = (gamma[c], beta[c]);
            for (o, &i) in ys[c * v..(c + 1) * v].iter_mut().zip(&xs[c * v..(c + 1) * v]) {
                *o = ga * ((i - mu) * inv) + be;
            }
        }
    }
    y
}

pub(crate) fn norm_backward<T: Real>(
    x: &Tensor<T>,
    stats: &NormStats<T>,
    gamma: &[T],
    dy: &Tensor<T>,
    mut dgamma: Option<&mut [T]>,
    mut dbeta: Option<&mut [T]>,
) -> Tensor<T> {
    let (nb, nc, v) = (x.batch(), x.channels(), x.voxels());
    let mut dx = Tensor::zeros(x.shape);
    let groups = stats.mean.len();
    for gi in 0..groups {
        let members: Vec<(usize, usize)> =
            if stats.per_sample { vec![(gi / nc, gi % nc)] } else { (0..nb).map(|n| (n, gi)).collect() };
        let c = members[0].1;
        let (mu, inv, ga) = (stats.mean[gi], stats.inv_std[gi], gamma[c]);
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for &(n, c) in &members {
            let xs = &x.sample(n)[c * v..(c + 1) * v];
            let ds = &dy.sample(n)[c * v..(c + 1) * v];
            for (&xi, &di) in xs.iter().zip(ds) {
                sum_dy = sum_dy + di;
                sum_dy_xhat = sum_dy_xhat + di * ((xi - mu) * inv);
            }
        }
        if let Some(dg) = dgamma.as_deref_mut() {
            dg[c] = dg[c] + sum_dy_xhat;
        }
        if let Some(db) = dbeta.as_deref_mut() {
            db[c] = db[c] + sum_dy;
        }
        let m = T::from_usize(members.len() * v).unwrap();
        for &(n, c) in &members {
            let xs = &x.sample(n)[c * v..(c + 1) * v];
            let ds = &dy.sample(n)[c * v..(c + 1) * v];
            let out = &mut dx.sample_mut(n)[c * v..(c + 1) * v];
            if stats.from_batch {
                // dx = γ·inv/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
                let scale = ga * inv / m;
                for ((o, &xi), &di) in out.iter_mut().zip(xs).zip(ds) {
                    let xhat = (xi - mu) * inv;
                    *o = scale * (m * di - sum_dy - xhat * sum_dy_xhat);
                }
            } else {
                for (o, &di) in out.iter_mut().zip(ds) {
                    *o = ga * inv * di;
                }
            }
        }
    }
    dx
}

pub(crate) fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor { shape: x.shape, data: x.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect() }
}

/// `y` is the relu output; gradient passes where it is positive.
pub(crate) fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: y.shape,
        data: y.data.iter().zip(&dy.data).map(|(&o, &d)| if o > T::zero() { d } else { T::zero() }).collect(),
    }
}

/// Softmax over the channel axis at every voxel.
pub fn softmax_channels<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(logits.shape);
    let (nc, v) = (logits.channels(), logits.voxels());
    for n in 0..logits.batch() {
        let src = logits.sample(n);
        let dst = out.sample_mut(n);
        for i in 0..v {
            let mut mx = T::neg_infinity();
            for c in 0..nc {
                mx = mx.max(src[c * v + i]);
            }
            let mut s = T::zero();
            for c in 0..nc {
                let e = (src[c * v + i] - mx).exp();
                dst[c * v + i] = e;
                s = s + e;
            }
            for c in 0..nc {
                dst[c * v + i] = dst[c * v + i] / s;
            }
        }
    }
    out
}

/// Pulls a gradient w.r.t. softmax probabilities back to the logits:
/// `dz_c = p_c (dp_c − Σ_j p_j dp_j)`.
pub fn softmax_backward<T: Real>(probs: &Tensor<T>, dprobs: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(probs.shape);
    let (nc, v) = (probs.channels(), probs.voxels());
    for n in 0..probs.batch() {
        let p = probs.sample(n);
        let dp = dprobs.sample(n);
        let dz = out.sample_mut(n);
        for i in 0..v {
            let mut dot = T::zero();
            for c in 0..nc {
                dot = dot + p[c * v + i] * dp[c * v + i];
            }
            for c in 0..nc {
                dz[c * v + i] = p[c * v + i] * (dp[c * v + i] - dot);
            }
        }
    }
    out
}
