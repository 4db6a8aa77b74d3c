use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{forward, ParameterStore};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{voxels, Dims3, Grid, Mask, Tensor};

/// Which head(s) produce the test-time prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadFusion {
    /// Average of both heads' probabilities.
    #[default]
    Mean,
    Head1,
    Head2,
}

/// Aggregated class probabilities over a whole volume.
#[derive(Clone, Debug)]
pub struct InferenceOutput<T> {
    /// `(1, num_classes, d, h, w)`.
    pub probs: Tensor<T>,
    pub windows: usize,
}

impl<T: Real> InferenceOutput<T> {
    /// Voxels whose most probable class is not background.
    pub fn mask(&self) -> Mask {
        let (nc, v) = (self.probs.channels(), self.probs.voxels());
        let p = self.probs.sample(0);
        let data = (0..v)
            .map(|i| {
                let mut best = 0;
                for c in 1..nc {
                    if p[c * v + i] > p[best * v + i] {
                        best = c;
                    }
                }
                u8::from(best != 0)
            })
            .collect();
        Grid { dims: self.probs.spatial(), data }
    }
}

/// Window origins along one axis: stride steps, with the last window flush
/// against the far edge.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if len <= window {
        return alloc::vec![0];
    }
    let n = (len - window).div_ceil(stride) + 1;
    (0..n).map(|i| (i * stride).min(len - window)).collect()
}

pub fn count_windows(dims: Dims3, window: Dims3, stride: Dims3) -> usize {
    (0..3).map(|a| window_starts(dims[a].max(window[a]), window[a], stride[a]).len()).product()
}

/// Sliding-window inference over a single-channel volume.
///
/// Overlapping window contributions are averaged per voxel. Volumes smaller
/// than the window are edge-padded symmetrically and cropped back.
pub fn infer_probs<T: Real>(
    params: &ParameterStore<T>,
    volume: &Grid<T>,
    window: Dims3,
    stride: Dims3,
    fusion: HeadFusion,
) -> Result<InferenceOutput<T>> {
    for a in 0..3 {
        if stride[a] == 0 || stride[a] > window[a] {
            return Err(Error::Config(format!("stride {:?} must be in 1..=window {:?}", stride, window)));
        }
    }
    if params.config().in_channels != 1 {
        return Err(Error::Config("sliding-window inference expects a single-channel network".into()));
    }
    let nc = params.config().num_classes;
    let (padded, offset) = volume.pad_edge(window);
    let pd = padded.dims;
    let pv = voxels(pd);
    let mut acc = alloc::vec![T::zero(); nc * pv];
    let mut counts = alloc::vec![0u32; pv];
    let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(pd[a], window[a], stride[a])).collect();
    let mut windows = 0;
    let wv = voxels(window);
    let half = T::from_f64_lossy(0.5);
    for &z0 in &starts[0] {
        for &y0 in &starts[1] {
            for &x0 in &starts[2] {
                let patch = padded.crop([z0, y0, x0], window)?;
                let input = Tensor::stack_grids([&patch])?;
                let pred = forward(params, &input)?;
                let (p1, p2) = (pred.probs1.sample(0), pred.probs2.sample(0));
                windows += 1;
                for z in 0..window[0] {
                    for y in 0..window[1] {
                        for x in 0..window[2] {
                            let wi = (z * window[1] + y) * window[2] + x;
                            let gi = padded.index(z0 + z, y0 + y, x0 + x);
                            for c in 0..nc {
                                let p = match fusion {
                                    HeadFusion::Mean => (p1[c * wv + wi] + p2[c * wv + wi]) * half,
                                    HeadFusion::Head1 => p1[c * wv + wi],
                                    HeadFusion::Head2 => p2[c * wv + wi],
                                };
                                acc[c * pv + gi] = acc[c * pv + gi] + p;
                            }
                            counts[gi] += 1;
                        }
                    }
                }
            }
        }
    }
    let d = volume.dims;
    let mut probs = Tensor::zeros([1, nc, d[0], d[1], d[2]]);
    let ov = voxels(d);
    let out = probs.sample_mut(0);
    for z in 0..d[0] {
        for y in 0..d[1] {
            for x in 0..d[2] {
                let gi = padded.index(z + offset[0], y + offset[1], x + offset[2]);
                let oi = (z * d[1] + y) * d[2] + x;
                let n = T::from_u32(counts[gi]).unwrap();
                for c in 0..nc {
                    out[c * ov + oi] = acc[c * pv + gi] / n;
                }
            }
        }
    }
    Ok(InferenceOutput { probs, windows })
}

/// Binary foreground mask from [`infer_probs`] with both heads averaged.
pub fn infer_mask<T: Real>(params: &ParameterStore<T>, volume: &Grid<T>, window: Dims3, stride: Dims3) -> Result<Mask> {
    infer_probs(params, volume, window, stride, HeadFusion::Mean).map(|o| o.mask())
}
