//! Volumes, the synthetic generator and the training input pipeline.

mod batch;
mod synth;

use alloc::format;
use alloc::string::String;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims3, Grid, Mask};

pub use batch::{split_labeled, BatchComposer, Dataset};
pub use synth::{generate_volume, SyntheticConfig};

/// One intensity volume with an optional binary label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSample {
    pub id: String,
    pub intensity: Grid<f32>,
    pub label: Option<Mask>,
    /// Physical size of a voxel along `(d, h, w)`.
    pub spacing: [f64; 3],
}

impl VolumeSample {
    pub fn new(id: impl Into<String>, intensity: Grid<f32>, label: Option<Mask>, spacing: [f64; 3]) -> Result<Self> {
        let s = Self { id: id.into(), intensity, label, spacing };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = &self.label {
            if l.dims != self.intensity.dims {
                return Err(Error::Shape(format!(
                    "{}: label {:?} vs intensity {:?}",
                    self.id, l.dims, self.intensity.dims
                )));
            }
        }
        if self.intensity.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{}: non-finite intensity", self.id)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Data(format!("{}: spacing must be positive, got {:?}", self.id, self.spacing)));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims3 {
        self.intensity.dims
    }
}

/// Per-volume standardization to zero mean and unit variance.
pub fn normalize(sample: &VolumeSample) -> Result<VolumeSample> {
    let data = &sample.intensity.data;
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Normalization(format!("{}: intensity has zero variance", sample.id)));
    }
    let inv = 1.0 / num_traits::Float::sqrt(var);
    let mut out = sample.clone();
    for v in out.intensity.data.iter_mut() {
        *v = ((*v as f64 - mean) * inv) as f32;
    }
    Ok(out)
}

/// Crops intensity and label at the same uniformly random corner.
pub fn random_crop<R: Rng + ?Sized>(sample: &VolumeSample, crop: Dims3, rng: &mut R) -> Result<VolumeSample> {
    let dims = sample.dims();
    if (0..3).any(|a| crop[a] > dims[a] || crop[a] == 0) {
        return Err(Error::Shape(format!("{}: crop {:?} does not fit volume {:?}", sample.id, crop, dims)));
    }
    let corner = [
        rng.gen_range(0..=dims[0] - crop[0]),
        rng.gen_range(0..=dims[1] - crop[1]),
        rng.gen_range(0..=dims[2] - crop[2]),
    ];
    Ok(VolumeSample {
        id: sample.id.clone(),
        intensity: sample.intensity.crop(corner, crop)?,
        label: sample.label.as_ref().map(|l| l.crop(corner, crop)).transpose()?,
        spacing: sample.spacing,
    })
}

/// Flips along each axis followed by `rot90` quarter turns in the `(h, w)` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Transform {
    pub flips: [bool; 3],
    pub rot90: u8,
}

impl Transform {
    /// Independent fair coin per flip and a uniform quarter-turn count.
    /// Non-square axial planes only get half turns so shapes are kept.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, dims: Dims3) -> Self {
        let flips = [rng.gen_bool(0.5), rng.gen_bool(0.5), rng.gen_bool(0.5)];
        let rot90 = if dims[1] == dims[2] { rng.gen_range(0..4) } else { 2 * rng.gen_range(0..2) };
        Self { flips, rot90 }
    }

    pub fn apply<T: Copy>(&self, g: &Grid<T>) -> Grid<T> {
        let mut out = g.clone();
        for (axis, &f) in self.flips.iter().enumerate() {
            if f {
                out = flip(&out, axis);
            }
        }
        for _ in 0..self.rot90 % 4 {
            out = rot90(&out);
        }
        out
    }
}

fn flip<T: Copy>(g: &Grid<T>, axis: usize) -> Grid<T> {
    let d = g.dims;
    let mut data = alloc::vec::Vec::with_capacity(g.len());
    for z in 0..d[0] {
        for y in 0..d[1] {
            for x in 0..d[2] {
                let (sz, sy, sx) = match axis {
                    0 => (d[0] - 1 - z, y, x),
                    1 => (z, d[1] - 1 - y, x),
                    _ => (z, y, d[2] - 1 - x),
                };
                data.push(g.get(sz, sy, sx));
            }
        }
    }
    Grid { dims: d, data }
}

/// Quarter turn in the `(h, w)` plane: `out[z][i][j] = in[z][j][w − 1 − i]`.
fn rot90<T: Copy>(g: &Grid<T>) -> Grid<T> {
    let d = g.dims;
    let nd = [d[0], d[2], d[1]];
    let mut data = alloc::vec::Vec::with_capacity(g.len());
    for z in 0..nd[0] {
        for i in 0..nd[1] {
            for j in 0..nd[2] {
                data.push(g.get(z, j, d[2] - 1 - i));
            }
        }
    }
    Grid { dims: nd, data }
}

/// Applies one random [`Transform`] jointly to intensity and label.
pub fn augment<R: Rng + ?Sized>(sample: &VolumeSample, rng: &mut R) -> VolumeSample {
    let t = Transform::sample(rng, sample.dims());
    apply_transform(sample, &t)
}

pub fn apply_transform(sample: &VolumeSample, t: &Transform) -> VolumeSample {
    let mut spacing = sample.spacing;
    if t.rot90 % 2 == 1 {
        spacing.swap(1, 2);
    }
    VolumeSample {
        id: sample.id.clone(),
        intensity: t.apply(&sample.intensity),
        label: sample.label.as_ref().map(|l| t.apply(l)),
        spacing,
    }
}
