//! Back-to-labels inversion of a simulated flow.
//!
//! A [`FlowChart`] stores `X(a,t)`, `∂ₐX` and the log Feynman–Kac weight at
//! every node of a label grid for one realization and one time. The map
//! `a ↦ X̃(a,t)` is the multilinear interpolant of the stored positions, and
//! `A(x,t)` is found by damped Newton iteration on it.

use thiserror::Error;

use crate::field::{DomainError, SpaceTimeField, MAX_DIM};
use crate::geometry::RegularGrid;
use crate::linalg::{self, Mat3, Vec3, ZERO_MAT, ZERO_VEC};
use crate::sde::Ensemble;

/// Cells whose interpolant Jacobian determinant falls to this value are
/// treated as degenerate.
pub const DEGENERATE_DET: f64 = 1e-10;
/// Deformation (condition number of `∂ₐX`) above which the label grid is
/// considered under-resolved.
pub const DEFORMATION_LIMIT: f64 = 50.0;
const MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("point {point:?} is not in the image of the label grid")]
    OutOfChart { point: Vec<f64> },
    #[error("Newton inversion at {point:?} did not converge (residual {residual:.3e}); the label grid is under-resolved")]
    NoConvergence { point: Vec<f64>, residual: f64 },
    #[error("the ensemble was not simulated on a label grid")]
    MissingGrid,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone)]
pub struct FlowChart {
    t: f64,
    grid: RegularGrid,
    positions: Vec<Vec3>,
    jacobians: Vec<Mat3>,
    log_weights: Vec<f64>,
    degenerate: Vec<bool>,
}

impl FlowChart {
    /// Chart of the ensemble at its `output`-th stored time.
    pub fn from_ensemble(ens: &Ensemble, output: usize) -> Result<Self, FlowError> {
        let grid = ens.grid().ok_or(FlowError::MissingGrid)?.clone();
        let states = ens.states(output);
        Ok(Self::new(
            ens.output_time(output),
            grid,
            states.iter().map(|s| s.x).collect(),
            states.iter().map(|s| s.jacobian).collect(),
            states.iter().map(|s| s.log_i).collect(),
        ))
    }

    /// The chart of the identity map (`t = 0`).
    pub fn identity(grid: RegularGrid) -> Self {
        let n = grid.dim();
        let len = grid.len();
        let positions = grid.nodes().collect();
        Self::new(0.0, grid, positions, vec![linalg::identity(n); len], vec![0.0; len])
    }

    pub fn new(
        t: f64,
        grid: RegularGrid,
        positions: Vec<Vec3>,
        jacobians: Vec<Mat3>,
        log_weights: Vec<f64>,
    ) -> Self {
        assert_eq!(positions.len(), grid.len());
        assert_eq!(jacobians.len(), grid.len());
        assert_eq!(log_weights.len(), grid.len());
        let mut chart = Self {
            t,
            grid,
            positions,
            jacobians,
            log_weights,
            degenerate: Vec::new(),
        };
        chart.degenerate = chart.mark_degenerate_cells();
        chart
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Stored `X(a,t)` at label node `index`.
    pub fn position(&self, index: usize) -> &[f64] {
        &self.positions[index][..self.dim()]
    }

    pub fn degenerate_cell_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }

    /// Largest condition number of the stored tangent matrices.
    pub fn max_deformation(&self) -> f64 {
        let n = self.dim();
        self.jacobians
            .iter()
            .map(|j| linalg::condition_number(n, j))
            .fold(0.0, f64::max)
    }

    pub fn is_under_resolved(&self) -> bool {
        self.max_deformation() > DEFORMATION_LIMIT
    }

    fn cell_count(&self) -> [usize; MAX_DIM] {
        let mut c = [1; MAX_DIM];
        for (a, &k) in self.grid.counts().iter().enumerate() {
            c[a] = k - 1;
        }
        c
    }

    fn cell_index(&self, cell: &[usize; MAX_DIM]) -> usize {
        let c = self.cell_count();
        let mut index = 0;
        for a in (0..self.dim()).rev() {
            index = index * c[a] + cell[a];
        }
        index
    }

    fn mark_degenerate_cells(&self) -> Vec<bool> {
        let n = self.dim();
        let c = self.cell_count();
        let total: usize = c[..n].iter().product();
        let mut out = vec![false; total];
        for (index, flag) in out.iter_mut().enumerate() {
            let mut cell = [0; MAX_DIM];
            let mut rest = index;
            for a in 0..n {
                cell[a] = rest % c[a];
                rest /= c[a];
            }
            *flag = (0..(1usize << n)).any(|corner| {
                let mut frac = ZERO_VEC;
                for (a, f) in frac.iter_mut().enumerate().take(n) {
                    *f = (corner >> a & 1) as f64;
                }
                linalg::det(n, &self.cell_jacobian(&cell, &frac)) <= DEGENERATE_DET
            });
        }
        out
    }

    /// Interpolated position and Jacobian within a given cell.
    fn cell_eval(&self, cell: &[usize; MAX_DIM], frac: &Vec3) -> (Vec3, Mat3) {
        let n = self.dim();
        let h = self.grid.spacing();
        let mut x = ZERO_VEC;
        let mut jac = ZERO_MAT;
        for corner in 0..(1usize << n) {
            let mut m = *cell;
            let mut w = 1.0;
            let mut dw = [1.0; MAX_DIM];
            for a in 0..n {
                let upper = corner >> a & 1 == 1;
                if upper {
                    m[a] += 1;
                }
                let (wa, da) = if upper {
                    (frac[a], 1.0 / h[a])
                } else {
                    (1.0 - frac[a], -1.0 / h[a])
                };
                w *= wa;
                for (b, d) in dw.iter_mut().enumerate().take(n) {
                    *d *= if a == b { da } else { wa };
                }
            }
            let xc = &self.positions[self.grid.flat_index(&m[..n])];
            for j in 0..n {
                x[j] += w * xc[j];
                for b in 0..n {
                    jac[j][b] += dw[b] * xc[j];
                }
            }
        }
        (x, jac)
    }

    fn cell_jacobian(&self, cell: &[usize; MAX_DIM], frac: &Vec3) -> Mat3 {
        self.cell_eval(cell, frac).1
    }

    /// The interpolated flow map `X̃(a,t)` and its Jacobian.
    pub fn map_with_jacobian(&self, a: &[f64]) -> (Vec3, Mat3) {
        let (cell, frac) = self.grid.locate(a);
        self.cell_eval(&cell, &frac)
    }

    pub fn map(&self, a: &[f64]) -> Vec3 {
        self.map_with_jacobian(a).0
    }

    /// Interpolated `∫₀ᵗ P ds` at label `a`.
    pub fn log_weight(&self, a: &[f64]) -> f64 {
        self.grid.interpolate(&self.log_weights, a)
    }

    fn nearest_node(&self, x: &[f64]) -> Vec3 {
        let n = self.dim();
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.positions.iter().enumerate() {
            let d: f64 = (0..n).map(|j| (p[j] - x[j]).powi(2)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        self.grid.node(best.1)
    }

    /// `A(x,t)`: the label whose interpolated image is `x`.
    pub fn invert(&self, x: &[f64]) -> Result<Vec3, FlowError> {
        self.invert_near(x, None)
    }

    /// [`FlowChart::invert`] starting from `hint` (typically the answer for
    /// a neighbouring point); falls back to the nearest grid image.
    pub fn invert_near(&self, x: &[f64], hint: Option<&Vec3>) -> Result<Vec3, FlowError> {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        let mut failure = None;
        if let Some(h) = hint {
            match self.newton(x, *h) {
                Ok(a) => return Ok(a),
                Err(e) => failure = Some(e),
            }
        }
        match self.newton(x, self.nearest_node(x)) {
            Ok(a) => Ok(a),
            Err(e @ FlowError::NoConvergence { .. }) => Err(e),
            Err(e) => Err(match failure {
                Some(f @ FlowError::NoConvergence { .. }) => f,
                _ => e,
            }),
        }
    }

    fn newton(&self, x: &[f64], start: Vec3) -> Result<Vec3, FlowError> {
        let n = self.dim();
        let scale = 1.0 + linalg::norm(n, &linalg::vec_from_slice(x));
        let tol = 1e-12 * scale;
        let accept = 1e-8 * scale;
        let residual = |a: &Vec3| -> (Vec3, f64, Mat3) {
            let (xa, jac) = self.map_with_jacobian(&a[..n]);
            let mut r = ZERO_VEC;
            for j in 0..n {
                r[j] = xa[j] - x[j];
            }
            (r, linalg::norm(n, &r), jac)
        };
        let mut a = start;
        let (mut r, mut rnorm, mut jac) = residual(&a);
        for _ in 0..MAX_ITERATIONS {
            if rnorm <= tol {
                break;
            }
            let Some(delta) = linalg::solve(n, &jac, &r, DEGENERATE_DET) else {
                break;
            };
            let mut step = 1.0;
            loop {
                let mut trial = a;
                for j in 0..n {
                    trial[j] -= step * delta[j];
                }
                let (rt, nt, jt) = residual(&trial);
                if nt < rnorm || step < 1e-6 {
                    a = trial;
                    r = rt;
                    rnorm = nt;
                    jac = jt;
                    break;
                }
                step *= 0.5;
            }
        }
        let inside = self.grid.bounds().contains(&a[..n]);
        if rnorm <= accept && inside {
            let (cell, _) = self.grid.locate(&a[..n]);
            if self.degenerate[self.cell_index(&cell)] {
                return Err(FlowError::OutOfChart { point: x.to_vec() });
            }
            return Ok(a);
        }
        if !inside {
            return Err(FlowError::OutOfChart { point: x.to_vec() });
        }
        Err(FlowError::NoConvergence {
            point: x.to_vec(),
            residual: rnorm,
        })
    }

    /// `θ(x,t) = f₀(A(x,t))`.
    pub fn passive_scalar(&self, f0: &dyn SpaceTimeField, x: &[f64]) -> Result<f64, FlowError> {
        let a = self.invert(x)?;
        Ok(f0.value(&a[..self.dim()], 0.0)?)
    }

    /// `ψ(x,t) = f₀(A) · exp(∫₀ᵗ P(X(a,s),s) ds)|_{a = A(x,t)}`.
    pub fn feynman_kac_psi(&self, f0: &dyn SpaceTimeField, x: &[f64]) -> Result<f64, FlowError> {
        let a = self.invert(x)?;
        self.psi_at_label(f0, &a)
    }

    /// `ψ` given an already inverted label.
    pub fn psi_at_label(&self, f0: &dyn SpaceTimeField, a: &Vec3) -> Result<f64, FlowError> {
        let a = &a[..self.dim()];
        Ok(f0.value(a, 0.0)? * self.log_weight(a).exp())
    }

    /// `max |A(X(a,t),t) − a|` over label nodes at least `margin` cells from
    /// the grid boundary.
    pub fn round_trip_error(&self, margin: usize) -> Result<f64, FlowError> {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        let mut hint: Option<Vec3> = None;
        for i in 0..self.grid.len() {
            if self.grid.cells_from_boundary(i) < margin {
                continue;
            }
            let a = self.invert_near(self.position(i), hint.as_ref())?;
            let node = self.grid.node(i);
            worst = worst.max((0..n).map(|j| (a[j] - node[j]).abs()).fold(0.0, f64::max));
            hint = Some(a);
        }
        Ok(worst)
    }
}
