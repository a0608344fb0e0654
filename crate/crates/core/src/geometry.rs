//! Axis-aligned boxes and uniform tensor grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::MAX_DIM;
use crate::linalg::{Vec3, ZERO_VEC};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension {0} not supported")]
    InvalidDimension(usize),
    #[error("axis {axis}: lower bound {lo} is not below upper bound {hi}")]
    EmptyAxis { axis: usize, lo: f64, hi: f64 },
    #[error("axis {axis}: a grid needs at least 2 nodes, got {count}")]
    TooFewNodes { axis: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > MAX_DIM {
            return Err(GeometryError::InvalidDimension(lo.len()));
        }
        for (axis, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l < h) {
                return Err(GeometryError::EmptyAxis { axis, lo: l, hi: h });
            }
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, GeometryError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn padded(&self, pad: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|l| l - pad).collect(),
            hi: self.hi.iter().map(|h| h + pad).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(x)
            .all(|((l, h), v)| *l <= *v && *v <= *h)
    }

    /// Distance from `x` (assumed inside) to the nearest face.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(x)
            .map(|((l, h), v)| (v - l).min(h - v))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Uniform tensor-product grid. Node index runs with `x1` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularGrid {
    dim: usize,
    lo: Vec3,
    spacing: Vec3,
    counts: [usize; MAX_DIM],
}

impl RegularGrid {
    pub fn new(bounds: &BoundingBox, counts: &[usize]) -> Result<Self, GeometryError> {
        let dim = bounds.dim();
        if counts.len() != dim {
            return Err(GeometryError::InvalidDimension(counts.len()));
        }
        let mut lo = ZERO_VEC;
        let mut spacing = ZERO_VEC;
        let mut c = [1; MAX_DIM];
        for axis in 0..dim {
            if counts[axis] < 2 {
                return Err(GeometryError::TooFewNodes {
                    axis,
                    count: counts[axis],
                });
            }
            lo[axis] = bounds.lo()[axis];
            spacing[axis] = (bounds.hi()[axis] - bounds.lo()[axis]) / (counts[axis] - 1) as f64;
            c[axis] = counts[axis];
        }
        Ok(Self {
            dim,
            lo,
            spacing,
            counts: c,
        })
    }

    /// Grid over `bounds` with spacing as close to `h` as possible (never coarser).
    pub fn with_spacing(bounds: &BoundingBox, h: f64) -> Result<Self, GeometryError> {
        let counts: Vec<usize> = (0..bounds.dim())
            .map(|a| ((bounds.hi()[a] - bounds.lo()[a]) / h - 1e-9).ceil() as usize + 1)
            .collect();
        Self::new(bounds, &counts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn hi(&self) -> Vec3 {
        let mut h = ZERO_VEC;
        for a in 0..self.dim {
            h[a] = self.lo[a] + self.spacing[a] * (self.counts[a] - 1) as f64;
        }
        h
    }

    pub fn bounds(&self) -> BoundingBox {
        let hi = self.hi();
        BoundingBox {
            lo: self.lo().to_vec(),
            hi: hi[..self.dim].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume element `Π Δx_a`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn multi_index(&self, mut index: usize) -> [usize; MAX_DIM] {
        let mut m = [0; MAX_DIM];
        for a in 0..self.dim {
            m[a] = index % self.counts[a];
            index /= self.counts[a];
        }
        m
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        let mut index = 0;
        for a in (0..self.dim).rev() {
            index = index * self.counts[a] + m[a];
        }
        index
    }

    pub fn node(&self, index: usize) -> Vec3 {
        let m = self.multi_index(index);
        let mut x = ZERO_VEC;
        for a in 0..self.dim {
            x[a] = self.lo[a] + self.spacing[a] * m[a] as f64;
        }
        x
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec3> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    /// Trapezoidal quadrature weight of node `index`.
    pub fn trapezoid_weight(&self, index: usize) -> f64 {
        let m = self.multi_index(index);
        (0..self.dim)
            .map(|a| {
                let end = m[a] == 0 || m[a] + 1 == self.counts[a];
                self.spacing[a] * if end { 0.5 } else { 1.0 }
            })
            .product()
    }

    /// Number of nodes between `index` and the nearest grid face.
    pub fn cells_from_boundary(&self, index: usize) -> usize {
        let m = self.multi_index(index);
        (0..self.dim)
            .map(|a| m[a].min(self.counts[a] - 1 - m[a]))
            .min()
            .unwrap_or(0)
    }

    /// Cell containing `x` (clamped to the grid) and local coordinates in `[0, 1]`.
    pub fn locate(&self, x: &[f64]) -> ([usize; MAX_DIM], Vec3) {
        let mut cell = [0; MAX_DIM];
        let mut frac = ZERO_VEC;
        for a in 0..self.dim {
            let s = (x[a] - self.lo[a]) / self.spacing[a];
            let c = (s.floor().max(0.0) as usize).min(self.counts[a] - 2);
            cell[a] = c;
            frac[a] = s - c as f64;
        }
        (cell, frac)
    }

    /// Multilinear interpolation of nodal `values` at `x`; `x` outside the
    /// grid is extrapolated from the boundary cell.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let (cell, frac) = self.locate(x);
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut m = cell;
            for a in 0..self.dim {
                if corner >> a & 1 == 1 {
                    m[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            acc += w * values[self.flat_index(&m[..self.dim])];
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        let g = RegularGrid::new(&BoundingBox::cube(3, -1.0, 1.0).unwrap(), &[3, 4, 5]).unwrap();
        assert_eq!(g.len(), 60);
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)[..3]), i);
        }
        assert_eq!(g.node(1)[0], 0.0);
        assert_eq!(g.node(3)[1], -1.0 + 2.0 / 3.0);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = RegularGrid::new(&BoundingBox::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap(), &[5, 7])
            .unwrap();
        let integral: f64 = (0..g.len())
            .map(|i| {
                let x = g.node(i);
                g.trapezoid_weight(i) * (1.0 + x[0] + 3.0 * x[1])
            })
            .sum();
        assert!((integral - (2.0 + 2.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let g = RegularGrid::new(&BoundingBox::cube(2, -1.0, 1.0).unwrap(), &[4, 6]).unwrap();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let values: Vec<f64> = g.nodes().map(|x| f(&x)).collect();
        for x in [[0.13, -0.77], [-1.0, 1.0], [0.999, 0.2]] {
            assert!((g.interpolate(&values, &x) - f(&x)).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoundingBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(RegularGrid::new(&BoundingBox::cube(1, 0.0, 1.0).unwrap(), &[1]).is_err());
    }
}
