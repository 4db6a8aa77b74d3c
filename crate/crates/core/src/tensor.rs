//! Dense row-major arrays used throughout the crate.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Spatial extent `(depth, height, width)`.
pub type Dims3 = [usize; 3];

pub(crate) fn voxels(dims: Dims3) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// A single 3D scalar field: intensity volumes, label masks, distance maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub dims: Dims3,
    pub data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(dims: Dims3, value: T) -> Self {
        Self { dims, data: vec![value; voxels(dims)] }
    }

    pub fn from_vec(dims: Dims3, data: Vec<T>) -> Result<Self> {
        if data.len() != voxels(dims) {
            return Err(Error::Shape(alloc::format!(
                "grid {:?} needs {} values, got {}",
                dims,
                voxels(dims),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: T) {
        let i = self.index(z, y, x);
        self.data[i] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Copies the box starting at `corner` with extent `size`.
    pub fn crop(&self, corner: Dims3, size: Dims3) -> Result<Self> {
        for a in 0..3 {
            if corner[a] + size[a] > self.dims[a] {
                return Err(Error::Shape(alloc::format!(
                    "crop {:?} at {:?} exceeds grid {:?}",
                    size,
                    corner,
                    self.dims
                )));
            }
        }
        let mut data = Vec::with_capacity(voxels(size));
        for z in 0..size[0] {
            for y in 0..size[1] {
                let start = self.index(corner[0] + z, corner[1] + y, corner[2]);
                data.extend_from_slice(&self.data[start..start + size[2]]);
            }
        }
        Ok(Self { dims: size, data })
    }

    /// Pads to at least `min_dims`, splitting padding evenly per side and
    /// replicating edge values. Returns the padded grid and the offset of the
    /// original content inside it.
    pub fn pad_edge(&self, min_dims: Dims3) -> (Self, Dims3) {
        let mut dims = self.dims;
        let mut before = [0; 3];
        for a in 0..3 {
            if dims[a] < min_dims[a] {
                let total = min_dims[a] - dims[a];
                before[a] = total / 2;
                dims[a] = min_dims[a];
            }
        }
        let mut data = Vec::with_capacity(voxels(dims));
        let clampi = |v: usize, off: usize, n: usize| v.saturating_sub(off).min(n - 1);
        for z in 0..dims[0] {
            let sz = clampi(z, before[0], self.dims[0]);
            for y in 0..dims[1] {
                let sy = clampi(y, before[1], self.dims[1]);
                for x in 0..dims[2] {
                    let sx = clampi(x, before[2], self.dims[2]);
                    data.push(self.get(sz, sy, sx));
                }
            }
        }
        (Self { dims, data }, before)
    }

    pub fn map<U, F: Fn(T) -> U>(&self, f: F) -> Grid<U> {
        Grid { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Binary mask; stored as bytes holding 0 or 1.
pub type Mask = Grid<u8>;

impl Grid<u8> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Five-dimensional `(batch, channels, depth, height, width)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 5],
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(alloc::format!(
                "tensor {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> Dims3 {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn voxels(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.voxels()
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Copies samples `range` into a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let len = self.sample_len();
        let mut shape = self.shape;
        shape[0] = end - start;
        Self { shape, data: self.data[start * len..end * len].to_vec() }
    }

    /// Stacks single-channel grids into an `(n, 1, d, h, w)` tensor.
    pub fn stack_grids<'a, I>(grids: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Grid<T>>,
    {
        let mut dims = None;
        let mut data = Vec::new();
        let mut n = 0;
        for g in grids {
            match dims {
                None => dims = Some(g.dims),
                Some(d) if d != g.dims => {
                    return Err(Error::Shape(alloc::format!(
                        "cannot stack grids {:?} and {:?}",
                        d,
                        g.dims
                    )))
                }
                _ => {}
            }
            data.extend_from_slice(&g.data);
            n += 1;
        }
        let d = dims.ok_or_else(|| Error::Shape("cannot stack zero grids".into()))?;
        Ok(Self { shape: [n, 1, d[0], d[1], d[2]], data })
    }

    /// Stacks binary masks into a one-hot `(n, classes, d, h, w)` tensor.
    pub fn one_hot<'a, I>(masks: I, classes: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Mask>,
    {
        let masks: Vec<&Mask> = masks.into_iter().collect();
        let first = masks.first().ok_or_else(|| Error::Shape("cannot one-hot zero masks".into()))?;
        let dims = first.dims;
        let vox = voxels(dims);
        let mut out = Self::zeros([masks.len(), classes, dims[0], dims[1], dims[2]]);
        for (n, m) in masks.iter().enumerate() {
            if m.dims != dims {
                return Err(Error::Shape(alloc::format!("mask {:?} vs {:?}", m.dims, dims)));
            }
            let s = out.sample_mut(n);
            for (i, &v) in m.data.iter().enumerate() {
                let c = v as usize;
                if c >= classes {
                    return Err(Error::Shape(alloc::format!("label {} >= {} classes", c, classes)));
                }
                s[c * vox + i] = T::one();
            }
        }
        Ok(out)
    }

    pub fn same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(alloc::format!(
                "{}: {:?} vs {:?}",
                what,
                self.shape,
                other.shape
            )));
        }
        Ok(())
    }
}
