use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float as F;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::VolumeSample;
use crate::error::{Error, Result};
use crate::tensor::{Dims3, Grid};

/// Parameters of the synthetic "atrium-like" volume generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub shape: Dims3,
    pub fg_level: f64,
    pub bg_level: f64,
    /// Peak magnitude of the smooth additive bias field; kept
    /// below half the foreground contrast so the noise-free volume
    /// thresholds exactly to the label.
    pub bias_amplitude: f64,
    pub noise_sigma: f64,
    pub spacing: [f64; 3],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { shape: [48; 3], fg_level: 1.0, bg_level: 0.0, bias_amplitude: 0.3, noise_sigma: 0.6, spacing: [1.0; 3] }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&s| s < 16) {
            return Err(Error::Config(format!("synthetic shape {:?}: every axis must be >= 16", self.shape)));
        }
        if !(self.noise_sigma >= 0.0) || !(self.bias_amplitude >= 0.0) {
            return Err(Error::Config("noise_sigma and bias_amplitude must be non-negative".into()));
        }
        if self.bias_amplitude * 2.0 >= F::abs(self.fg_level - self.bg_level) {
            return Err(Error::Config("bias_amplitude must stay below half the foreground contrast".into()));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("spacing must be positive".into()));
        }
        Ok(())
    }
}

type Mat3 = [[f64; 3]; 3];

/// Uniformly random rotation from a normalized Gaussian quaternion.
fn random_rotation<R: Rng>(rng: &mut R) -> Mat3 {
    let mut q: [f64; 4] = [0.0; 4];
    loop {
        for v in q.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let n = F::sqrt(q.iter().map(|v| v * v).sum::<f64>());
        if n > 1e-9 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn mul(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn mul_t(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[0][i] * v[0] + m[1][i] * v[1] + m[2][i] * v[2])
}

struct Shape {
    center: [f64; 3],
    rot: Mat3,
    semi_axes: [f64; 3],
    lobes: Vec<([f64; 3], f64)>,
}

impl Shape {
    fn draw<R: Rng>(rng: &mut R, dims: Dims3) -> Self {
        let extent = *dims.iter().min().unwrap() as f64;
        let semi_axes = [0; 3].map(|_| rng.gen_range(0.15..0.35) * extent);
        let rot = random_rotation(rng);
        let reach = semi_axes.iter().copied().fold(0.0, f64::max);
        let center = [0, 1, 2].map(|a| {
            let n = dims[a] as f64;
            let (lo, hi) = (reach, n - 1.0 - reach);
            if lo < hi {
                rng.gen_range(lo..hi)
            } else {
                (n - 1.0) / 2.0
            }
        });
        let min_axis = semi_axes.iter().copied().fold(f64::INFINITY, f64::min);
        let n_lobes = rng.gen_range(1..=3);
        let lobes = (0..n_lobes)
            .map(|_| {
                let mut u: [f64; 3] = [0.0; 3];
                for v in u.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                let n = F::sqrt(u.iter().map(|v| v * v).sum::<f64>()).max(1e-9);
                let local = [0, 1, 2].map(|i| semi_axes[i] * u[i] / n);
                let off = mul(&rot, local);
                let c = [0, 1, 2].map(|i| center[i] + off[i]);
                (c, rng.gen_range(0.2..0.4) * min_axis)
            })
            .collect();
        Self { center, rot, semi_axes, lobes }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        let d = [0, 1, 2].map(|i| p[i] - self.center[i]);
        let local = mul_t(&self.rot, d);
        let r: f64 = (0..3).map(|i| F::powi(local[i] / self.semi_axes[i], 2)).sum();
        if r <= 1.0 {
            return true;
        }
        self.lobes.iter().any(|(c, rad)| (0..3).map(|i| F::powi(p[i] - c[i], 2)).sum::<f64>() <= rad * rad)
    }
}

/// Smooth field: average of three random plane waves of at most one period
/// across the volume, scaled to `amplitude`.
struct BiasField {
    waves: [([f64; 3], f64); 3],
    amplitude: f64,
}

impl BiasField {
    fn draw<R: Rng>(rng: &mut R, dims: Dims3, amplitude: f64) -> Self {
        let waves = [0; 3].map(|_| {
            let k = [0, 1, 2].map(|a| rng.gen_range(-1.0..1.0) * 2.0 * PI / dims[a] as f64);
            (k, rng.gen_range(0.0..2.0 * PI))
        });
        Self { waves, amplitude }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        let s: f64 = self.waves.iter().map(|(k, phi)| F::cos(k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phi)).sum();
        self.amplitude * s / 3.0
    }
}

/// Generates volume `index` of the dataset seeded by `seed`.
///
/// Every volume uses its own ChaCha stream, so volumes can be produced in any
/// order. The label is exactly the generating shape; intensity is
/// `fg·label + bg + bias + σ·noise`.
pub fn generate_volume(cfg: &SyntheticConfig, seed: u64, index: u64) -> Result<VolumeSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let dims = cfg.shape;
    let shape = Shape::draw(&mut rng, dims);
    let bias = BiasField::draw(&mut rng, dims, cfg.bias_amplitude);
    let mut label = Grid::filled(dims, 0u8);
    let mut intensity = Grid::filled(dims, 0.0f32);
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = [z as f64, y as f64, x as f64];
                let fg = shape.contains(p);
                let noise: f64 = StandardNormal.sample(&mut rng);
                let v = if fg { cfg.fg_level } else { 0.0 } + cfg.bg_level + bias.at(p) + cfg.noise_sigma * noise;
                let i = label.index(z, y, x);
                label.data[i] = u8::from(fg);
                intensity.data[i] = v as f32;
            }
        }
    }
    VolumeSample::new(format!("vol_{index:04}"), intensity, Some(label), cfg.spacing)
}
