//! Periodic lattices over the unit box `[0,1)^{2n}`.
//!
//! Coordinates are interleaved: axis `2a` is `x_{a+1}`, axis `2a+1` is
//! `y_{a+1}`. Points are stored in row-major order with axis 0 slowest.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct GridChart {
    half_dim: usize,
    resolution: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl GridChart {
    /// Builds the periodic chart; `resolution` lists points per axis.
    pub fn new(half_dim: usize, resolution: &[usize]) -> Result<Self> {
        if half_dim < 2 {
            return Err(Error::Config(format!(
                "half_dim must be at least 2 (got {half_dim}); surfaces are always Kähler"
            )));
        }
        if resolution.len() != 2 * half_dim {
            return Err(Error::Config(format!(
                "resolution has {} entries, expected {}",
                resolution.len(),
                2 * half_dim
            )));
        }
        if let Some((axis, &n)) = resolution
            .iter()
            .enumerate()
            .find(|(_, &n)| n < MIN_RESOLUTION)
        {
            return Err(Error::Config(format!(
                "axis {axis} has {n} points, minimum is {MIN_RESOLUTION}"
            )));
        }
        let dim = resolution.len();
        let mut strides = vec![1usize; dim];
        for a in (0..dim - 1).rev() {
            strides[a] = strides[a + 1] * resolution[a + 1];
        }
        let len = strides[0] * resolution[0];
        Ok(Self {
            half_dim,
            resolution: resolution.to_vec(),
            spacing: resolution.iter().map(|&n| 1.0 / n as f64).collect(),
            strides,
            len,
        })
    }

    pub fn uniform(half_dim: usize, n: usize) -> Result<Self> {
        Self::new(half_dim, &vec![n; 2 * half_dim])
    }

    pub fn half_dim(&self) -> usize {
        self.half_dim
    }

    /// Real dimension `2n`.
    pub fn dim(&self) -> usize {
        2 * self.half_dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Volume of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        (0..self.dim())
            .map(|a| (idx / self.strides[a]) % self.resolution[a])
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.resolution)
            .zip(&self.strides)
            .map(|((&c, &n), &s)| (c % n) * s)
            .sum()
    }

    pub fn position(&self, idx: usize) -> Vec<f64> {
        self.coords(idx)
            .iter()
            .zip(&self.spacing)
            .map(|(&c, &h)| c as f64 * h)
            .collect()
    }

    /// Index of the point `delta` steps along `axis`, wrapping periodically.
    pub fn shift(&self, idx: usize, axis: usize, delta: isize) -> usize {
        let n = self.resolution[axis] as isize;
        let s = self.strides[axis];
        let c = ((idx / s) % n as usize) as isize;
        let c2 = (c + delta).rem_euclid(n);
        (idx as isize + (c2 - c) * s as isize) as usize
    }

    pub fn same_shape(&self, other: &GridChart) -> bool {
        self.resolution == other.resolution
    }

    /// Samples `f` at every lattice point.
    pub fn sample<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> Vec<f64> {
        use rayon::prelude::*;
        (0..self.len)
            .into_par_iter()
            .map(|i| f(&self.position(i)))
            .collect()
    }

    /// Centered difference `(f(p+e_a) - f(p-e_a)) / 2h_a` with periodic wrap.
    pub fn centered_diff<T>(&self, f: &[T], axis: usize) -> Vec<T>
    where
        T: Copy + Default + Send + Sync + Sub<Output = T> + Mul<f64, Output = T>,
    {
        centered_diff_blocks(f, self.resolution[axis], self.strides[axis], self.spacing[axis])
    }

    /// Centered difference of a quasi-periodic field whose values increase by
    /// `jump` over one period along `axis`.
    pub fn centered_diff_quasi<T>(&self, f: &[T], axis: usize, jump: T) -> Vec<T>
    where
        T: Copy
            + Default
            + Send
            + Sync
            + Add<Output = T>
            + Sub<Output = T>
            + Mul<f64, Output = T>,
    {
        let n = self.resolution[axis];
        let s = self.strides[axis];
        let inv = 0.5 / self.spacing[axis];
        let mut out = self.centered_diff(f, axis);
        for (i, o) in out.iter_mut().enumerate() {
            let c = (i / s) % n;
            if c == n - 1 {
                *o = *o + jump * inv;
            }
            if c == 0 {
                *o = *o + jump * inv;
            }
        }
        out
    }
}

pub(crate) fn centered_diff_blocks<T>(f: &[T], n: usize, stride: usize, h: f64) -> Vec<T>
where
    T: Copy + Default + Send + Sync + Sub<Output = T> + Mul<f64, Output = T>,
{
    use rayon::prelude::*;
    let inv = 0.5 / h;
    let block = n * stride;
    let mut out = vec![T::default(); f.len()];
    out.par_chunks_mut(block)
        .zip(f.par_chunks(block))
        .for_each(|(o, src)| {
            for c in 0..n {
                let up = if c + 1 == n { 0 } else { c + 1 };
                let dn = if c == 0 { n - 1 } else { c - 1 };
                let (ou, od, oc) = (up * stride, dn * stride, c * stride);
                for k in 0..stride {
                    o[oc + k] = (src[ou + k] - src[od + k]) * inv;
                }
            }
        });
    out
}

/// Sub-lattice spanned by the axes a structure field actually depends on.
///
/// A field stored on a reduced lattice is constant along every other axis,
/// so derivatives along those axes vanish identically.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedLattice {
    axes: Vec<usize>,
    dims: Vec<usize>,
    spacing: Vec<f64>,
    full_strides: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
    full_dim: usize,
}

impl ReducedLattice {
    pub fn new(chart: &GridChart, axes: &[usize]) -> Self {
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        let dims: Vec<usize> = axes.iter().map(|&a| chart.resolution[a]).collect();
        let mut strides = vec![1usize; axes.len()];
        for k in (0..axes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let len = dims.iter().product::<usize>().max(1);
        Self {
            spacing: axes.iter().map(|&a| chart.spacing[a]).collect(),
            full_strides: axes.iter().map(|&a| chart.strides[a]).collect(),
            axes,
            dims,
            strides,
            len,
            full_dim: chart.dim(),
        }
    }

    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn depends_on(&self, axis: usize) -> bool {
        self.axes.contains(&axis)
    }

    /// Reduced index of a full-grid point.
    #[inline]
    pub fn reduce(&self, full_idx: usize) -> usize {
        let mut r = 0;
        for k in 0..self.axes.len() {
            r += ((full_idx / self.full_strides[k]) % self.dims[k]) * self.strides[k];
        }
        r
    }

    /// Full-grid coordinates of the representative point (zero on free axes).
    pub fn representative(&self, r: usize) -> Vec<usize> {
        let mut c = vec![0usize; self.full_dim];
        for k in 0..self.axes.len() {
            c[self.axes[k]] = (r / self.strides[k]) % self.dims[k];
        }
        c
    }

    /// Physical position of the representative point.
    pub fn position(&self, r: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.full_dim];
        for k in 0..self.axes.len() {
            x[self.axes[k]] = ((r / self.strides[k]) % self.dims[k]) as f64 * self.spacing[k];
        }
        x
    }

    /// Smallest spacing among the dependent axes (1 when there are none).
    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(1.0, f64::min)
    }

    /// Spacing along `axis` if the lattice depends on it.
    pub fn spacing(&self, axis: usize) -> Option<f64> {
        self.axes
            .iter()
            .position(|&a| a == axis)
            .map(|k| self.spacing[k])
    }

    /// Centered difference of a field with `width` values per lattice point.
    /// Returns `None` along axes the lattice does not depend on.
    pub fn diff<T>(&self, data: &[T], width: usize, axis: usize) -> Option<Vec<T>>
    where
        T: Copy + Default + Send + Sync + Sub<Output = T> + Mul<f64, Output = T>,
    {
        let k = self.axes.iter().position(|&a| a == axis)?;
        Some(centered_diff_blocks(
            data,
            self.dims[k],
            self.strides[k] * width,
            self.spacing[k],
        ))
    }

    /// Index of the neighbour `delta` steps along dependent axis `axis`.
    pub fn shift(&self, r: usize, axis: usize, delta: isize) -> usize {
        match self.axes.iter().position(|&a| a == axis) {
            None => r,
            Some(k) => {
                let n = self.dims[k] as isize;
                let c = ((r / self.strides[k]) % self.dims[k]) as isize;
                let c2 = (c + delta).rem_euclid(n);
                (r as isize + (c2 - c) * self.strides[k] as isize) as usize
            }
        }
    }
}
