use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::check_shapes;
use crate::error::{Error, Result};
use crate::tensor::{Dims3, Mask};

/// Estimator for the 95th percentile of the pooled surface distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Percentile {
    /// Linear interpolation at rank `q·(n − 1)` of the sorted list.
    #[default]
    Linear,
    /// Smallest value with at least `q·n` values at or below it.
    NearestRank,
}

impl Percentile {
    /// `sorted` must be non-empty and ascending.
    pub fn of(self, sorted: &[f64], q: f64) -> f64 {
        let n = sorted.len();
        match self {
            Percentile::Linear => {
                let rank = q * (n - 1) as f64;
                let lo = num_traits::Float::floor(rank) as usize;
                let hi = (lo + 1).min(n - 1);
                let t = rank - lo as f64;
                sorted[lo] + (sorted[hi] - sorted[lo]) * t
            }
            Percentile::NearestRank => {
                let k = num_traits::Float::ceil(q * n as f64) as usize;
                sorted[k.clamp(1, n) - 1]
            }
        }
    }
}

/// Foreground voxels with a background or out-of-bounds 6-neighbor, in raster order.
pub fn extract_surface(mask: &Mask) -> Result<Vec<Dims3>> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask("cannot extract the surface of an empty mask".into()));
    }
    let d = mask.dims;
    let fg = |z: isize, y: isize, x: isize| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < d[0]
            && (y as usize) < d[1]
            && (x as usize) < d[2]
            && mask.get(z as usize, y as usize, x as usize) != 0
    };
    let mut out = Vec::new();
    for z in 0..d[0] {
        for y in 0..d[1] {
            for x in 0..d[2] {
                if mask.get(z, y, x) == 0 {
                    continue;
                }
                let (zi, yi, xi) = (z as isize, y as isize, x as isize);
                let interior = fg(zi - 1, yi, xi)
                    && fg(zi + 1, yi, xi)
                    && fg(zi, yi - 1, xi)
                    && fg(zi, yi + 1, xi)
                    && fg(zi, yi, xi - 1)
                    && fg(zi, yi, xi + 1);
                if !interior {
                    out.push([z, y, x]);
                }
            }
        }
    }
    Ok(out)
}

/// Exact squared distance along one line to the nearest finite entry of `f`,
/// with squared step length `w` (lower envelope of parabolas).
fn edt_line(f: &[f64], w: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let inter = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + w * qf * qf) - (f[p] + w * pf * pf)) / (2.0 * w * (qf - pf))
    };
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        while let Some(&p) = v.last() {
            let s = inter(q, p);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        }
        v.push(q);
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    // z[k] is where parabola v[k] starts to dominate.
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let dq = p as f64 - v[k] as f64;
        *o = f[v[k]] + w * dq * dq;
    }
}

/// Squared Euclidean distance from every voxel to the nearest of `points`.
pub(crate) fn squared_distance_map(dims: Dims3, points: &[Dims3], spacing: [f64; 3]) -> Vec<f64> {
    let n = dims[0] * dims[1] * dims[2];
    let mut map = vec![f64::INFINITY; n];
    for p in points {
        map[(p[0] * dims[1] + p[1]) * dims[2] + p[2]] = 0.0;
    }
    let strides = [dims[1] * dims[2], dims[2], 1];
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let len = dims[axis];
        let (mut line, mut out) = (vec![0.0; len], vec![0.0; len]);
        let w = spacing[axis] * spacing[axis];
        for start in 0..n {
            // Visit each line once, from its first voxel.
            if (start / strides[axis]) % len != 0 {
                continue;
            }
            for i in 0..len {
                line[i] = map[start + i * strides[axis]];
            }
            edt_line(&line, w, &mut out, &mut v, &mut z);
            for i in 0..len {
                map[start + i * strides[axis]] = out[i];
            }
        }
    }
    map
}

/// ASD and HD95 between the surfaces of two masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    pub asd: f64,
    pub hd95: f64,
}

/// Pooled directed distances: prediction surface to ground-truth surface,
/// then the reverse, each in raster order.
pub fn directed_distances(pred: &Mask, gt: &Mask, spacing: [f64; 3]) -> Result<Vec<f64>> {
    check_shapes(pred, gt)?;
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Config("spacing must be positive and finite".into()));
    }
    let sp = extract_surface(pred)?;
    let sg = extract_surface(gt)?;
    let mut out = Vec::with_capacity(sp.len() + sg.len());
    for (from, to) in [(&sp, &sg), (&sg, &sp)] {
        let map = squared_distance_map(pred.dims, to, spacing);
        out.extend(from.iter().map(|p| num_traits::Float::sqrt(map[pred.index(p[0], p[1], p[2])])));
    }
    Ok(out)
}

/// Mean and 95th percentile of the pooled bidirectional surface distances.
pub fn surface_distances(pred: &Mask, gt: &Mask, spacing: [f64; 3], percentile: Percentile) -> Result<SurfaceDistances> {
    let mut d = directed_distances(pred, gt, spacing)?;
    let asd = d.iter().sum::<f64>() / d.len() as f64;
    d.sort_by(f64::total_cmp);
    Ok(SurfaceDistances { asd, hd95: percentile.of(&d, 0.95) })
}
