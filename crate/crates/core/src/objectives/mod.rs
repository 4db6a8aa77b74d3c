//! Loss terms and the warm-up weight schedule.
//!
//! Each loss has a value-only form and a `_grad` form that also returns the
//! gradient w.r.t. its inputs. Losses on predictions take softmax
//! probabilities; [`supervised_loss_grad`] and [`consistency_loss_grad`] carry
//! the gradient back through the softmax to the logits.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::volnet::{softmax_backward, DualPrediction};

/// Numerical guards shared by the loss functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    pub dice_smooth: f64,
    pub ce_clamp: f64,
    pub norm_eps: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { dice_smooth: 1e-5, ce_clamp: 1e-7, norm_eps: 1e-12 }
    }
}

/// Loss values and weights of one training iteration.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub supervised: f64,
    pub consistency: f64,
    pub decoupling: f64,
    pub lambda_c: f64,
    pub lambda_pd: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.supervised, self.consistency, self.decoupling, self.lambda_c, self.lambda_pd]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn check_pair<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    a.same_shape(b, what)?;
    if a.channels() < 2 {
        return Err(Error::Shape(format!("{what}: need at least two classes, got {}", a.channels())));
    }
    Ok(())
}

/// Channel slice `c` of every sample, as `(probs, target)` pairs.
fn channel_iter<'a, T: Real>(
    p: &'a Tensor<T>,
    g: &'a Tensor<T>,
    c: usize,
) -> impl Iterator<Item = (&'a [T], &'a [T])> + 'a {
    let v = p.voxels();
    (0..p.batch()).map(move |n| (&p.sample(n)[c * v..(c + 1) * v], &g.sample(n)[c * v..(c + 1) * v]))
}

/// `1 − (2·Σpg + s)/(Σp + Σg + s)` on the foreground class, averaged over
/// foreground classes when there are more than two.
pub fn soft_dice_loss<T: Real>(probs: &Tensor<T>, target: &Tensor<T>, smooth: T) -> Result<T> {
    soft_dice_loss_grad(probs, target, smooth).map(|(l, _)| l)
}

pub fn soft_dice_loss_grad<T: Real>(probs: &Tensor<T>, target: &Tensor<T>, smooth: T) -> Result<(T, Tensor<T>)> {
    check_pair(probs, target, "soft dice")?;
    let nc = probs.channels();
    let v = probs.voxels();
    let fg = T::from_usize(nc - 1).unwrap();
    let two = T::from_f64_lossy(2.0);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(probs.shape);
    for c in 1..nc {
        let (mut inter, mut sp, mut sg) = (T::zero(), T::zero(), T::zero());
        for (p, g) in channel_iter(probs, target, c) {
            for (&pi, &gi) in p.iter().zip(g) {
                inter = inter + pi * gi;
                sp = sp + pi;
                sg = sg + gi;
            }
        }
        let num = two * inter + smooth;
        let den = sp + sg + smooth;
        loss = loss + (T::one() - num / den) / fg;
        // ∂/∂p = −(2g·den − num) / den²
        for n in 0..probs.batch() {
            let g = &target.sample(n)[c * v..(c + 1) * v];
            let out = &mut grad.sample_mut(n)[c * v..(c + 1) * v];
            for (o, &gi) in out.iter_mut().zip(g) {
                *o = -(two * gi * den - num) / (den * den) / fg;
            }
        }
    }
    Ok((loss, grad))
}

/// Mean over voxels of `−Σ_c g_c·ln(max(p_c, clamp))`.
pub fn cross_entropy_loss<T: Real>(probs: &Tensor<T>, target: &Tensor<T>, clamp: T) -> Result<T> {
    cross_entropy_loss_grad(probs, target, clamp).map(|(l, _)| l)
}

pub fn cross_entropy_loss_grad<T: Real>(probs: &Tensor<T>, target: &Tensor<T>, clamp: T) -> Result<(T, Tensor<T>)> {
    check_pair(probs, target, "cross entropy")?;
    let count = T::from_usize(probs.batch() * probs.voxels()).unwrap();
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(probs.shape);
    for ((o, &p), &g) in grad.data.iter_mut().zip(&probs.data).zip(&target.data) {
        if g == T::zero() {
            continue;
        }
        let pc = p.max(clamp).min(T::one());
        loss = loss - g * pc.ln();
        *o = if p > clamp && p <= T::one() { -g / (p * count) } else { T::zero() };
    }
    Ok((loss / count, grad))
}

/// Half the sum over both heads of Dice + cross-entropy.
pub fn supervised_loss<T: Real>(pred: &DualPrediction<T>, target: &Tensor<T>, lp: &LossParams) -> Result<T> {
    supervised_loss_grad(pred, target, lp).map(|(l, _)| l)
}

/// Returns the loss and its gradient w.r.t. both heads' logits.
pub fn supervised_loss_grad<T: Real>(
    pred: &DualPrediction<T>,
    target: &Tensor<T>,
    lp: &LossParams,
) -> Result<(T, [Tensor<T>; 2])> {
    let half = T::from_f64_lossy(0.5);
    let smooth = T::from_f64_lossy(lp.dice_smooth);
    let clamp = T::from_f64_lossy(lp.ce_clamp);
    let mut total = T::zero();
    let mut dl = Vec::with_capacity(2);
    for probs in [&pred.probs1, &pred.probs2] {
        let (ld, gd) = soft_dice_loss_grad(probs, target, smooth)?;
        let (lc, gc) = cross_entropy_loss_grad(probs, target, clamp)?;
        total = total + half * (ld + lc);
        let dp = Tensor {
            shape: gd.shape,
            data: gd.data.iter().zip(&gc.data).map(|(&a, &b)| half * (a + b)).collect(),
        };
        dl.push(softmax_backward(probs, &dp));
    }
    let d2 = dl.pop().unwrap();
    let d1 = dl.pop().unwrap();
    Ok((total, [d1, d2]))
}

/// Mean squared difference between two probability maps.
pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    mse_grad(a, b).map(|(l, _)| l)
}

/// Value and gradient w.r.t. `a` (the gradient w.r.t. `b` is its negation).
pub fn mse_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    a.same_shape(b, "consistency")?;
    let n = T::from_usize(a.data.len().max(1)).unwrap();
    let two = T::from_f64_lossy(2.0);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(a.shape);
    for ((o, &x), &y) in grad.data.iter_mut().zip(&a.data).zip(&b.data) {
        let d = x - y;
        loss = loss + d * d;
        *o = two * d / n;
    }
    Ok((loss / n, grad))
}

/// Mean squared error between the two heads' probabilities.
pub fn consistency_loss<T: Real>(pred: &DualPrediction<T>) -> Result<T> {
    mse(&pred.probs1, &pred.probs2)
}

/// Returns the loss and its gradient w.r.t. both heads' logits.
pub fn consistency_loss_grad<T: Real>(pred: &DualPrediction<T>) -> Result<(T, [Tensor<T>; 2])> {
    let (loss, dp1) = mse_grad(&pred.probs1, &pred.probs2)?;
    let dp2 = Tensor { shape: dp1.shape, data: dp1.data.iter().map(|&v| -v).collect() };
    Ok((loss, [softmax_backward(&pred.probs1, &dp1), softmax_backward(&pred.probs2, &dp2)]))
}

fn check_paired<T>(h1: &[&[T]], h2: &[&[T]]) -> Result<()> {
    if h1.len() != h2.len() {
        return Err(Error::Pairing(format!("{} tensors vs {}", h1.len(), h2.len())));
    }
    if h1.is_empty() {
        return Err(Error::Pairing("no paired tensors".into()));
    }
    for (k, (a, b)) in h1.iter().zip(h2).enumerate() {
        if a.len() != b.len() {
            return Err(Error::Pairing(format!("layer {k}: {} values vs {}", a.len(), b.len())));
        }
    }
    Ok(())
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Cosine of each paired tensor, with `eps` added to both norms.
pub fn layer_cosines<T: Real>(h1: &[&[T]], h2: &[&[T]], eps: T) -> Result<Vec<T>> {
    check_paired(h1, h2)?;
    Ok(h1
        .iter()
        .zip(h2)
        .map(|(a, b)| {
            let dot: T = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum();
            dot / ((norm(a) + eps) * (norm(b) + eps))
        })
        .collect())
}

/// Mean over paired layers of the squared cosine between the heads.
pub fn decoupling_loss<T: Real>(h1: &[&[T]], h2: &[&[T]], eps: T) -> Result<T> {
    let cos = layer_cosines(h1, h2, eps)?;
    let k = T::from_usize(cos.len()).unwrap();
    Ok(cos.iter().map(|&c| c * c).sum::<T>() / k)
}

/// Gradients of the decoupling loss w.r.t. each tensor of both heads.
pub type HeadGrads<T> = (Vec<Vec<T>>, Vec<Vec<T>>);

pub fn decoupling_loss_grad<T: Real>(h1: &[&[T]], h2: &[&[T]], eps: T) -> Result<(T, HeadGrads<T>)> {
    check_paired(h1, h2)?;
    let k = T::from_usize(h1.len()).unwrap();
    let two = T::from_f64_lossy(2.0);
    let mut loss = T::zero();
    let mut g1 = Vec::with_capacity(h1.len());
    let mut g2 = Vec::with_capacity(h2.len());
    for (a, b) in h1.iter().zip(h2) {
        let (na, nb) = (norm(a), norm(b));
        let (da, db) = (na + eps, nb + eps);
        let dot: T = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum();
        let c = dot / (da * db);
        loss = loss + c * c;
        let outer = two * c / k;
        // ∂c/∂a = b/(da·db) − dot·a/(da²·db·|a|)
        let grad_for = |x: &[T], y: &[T], nx: T, dx: T, dy: T| -> Vec<T> {
            let radial = if nx > T::zero() { dot / (dx * dx * dy * nx) } else { T::zero() };
            x.iter().zip(y).map(|(&xi, &yi)| outer * (yi / (dx * dy) - radial * xi)).collect()
        };
        g1.push(grad_for(a, b, na, da, db));
        g2.push(grad_for(b, a, nb, db, da));
    }
    Ok((loss / k, (g1, g2)))
}

/// Gaussian warm-up `scale·exp(−5·(1 − t/t_max)²)`, constant at `scale`
/// once `t ≥ t_max`.
pub fn ramp_weight(t: u64, t_max: u64, scale: f64) -> Result<f64> {
    if t_max == 0 {
        return Err(Error::Config("ramp t_max must be positive".into()));
    }
    let phase = 1.0 - t.min(t_max) as f64 / t_max as f64;
    Ok(scale * num_traits::Float::exp(-5.0 * phase * phase))
}

#[cfg(test)]
mod tests;
