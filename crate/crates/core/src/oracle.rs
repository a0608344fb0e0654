//! Finite-difference reference solutions in one and two dimensions.
//!
//! The operator `𝒟f = ν∂ᵢ(aᵢⱼ∂ⱼf) − div(Uf) + Vf` is discretized in flux
//! form on a node-centred grid: every pair of neighbouring nodes exchanges a
//! flux evaluated at the face midpoint, and the outer faces carry no flux. The
//! resulting matrix `L` conserves `Σ f` exactly when `V = 0`. The adjoint
//! problem is stepped backward with `Lᵀ`, which makes `Σ φ f` exactly
//! invariant along paired forward and backward solves with the same scheme.

use std::io::{self, Write};

use thiserror::Error;

use crate::coefficients::{CoefficientSet, SampleError};
use crate::entropy::{ConvexH, EntropyReport};
use crate::field::{DomainError, SpaceTimeField, MAX_DIM};
use crate::geometry::RegularGrid;
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("the finite-difference oracle supports dimensions 1 and 2, got {0}")]
    UnsupportedDimension(usize),
    #[error("explicit step dt={dt} exceeds the stability limit {limit}")]
    StabilityViolation { dt: f64, limit: f64 },
    #[error("non-finite values at t={t}")]
    BlowUp { t: f64 },
    #[error("density became non-positive at t={t} (min {min:.3e})")]
    PositivityViolation { t: f64, min: f64 },
    #[error("linear solver stalled at t={t} with relative residual {residual:.3e}")]
    SolverFailure { t: f64, residual: f64 },
    #[error("grid or time mismatch: {0}")]
    Mismatch(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Coefficients(#[from] SampleError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    CrankNicolson,
}

/// Scalar field on the nodes of a grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: RegularGrid,
    values: Vec<f64>,
    t: f64,
}

impl GridField {
    pub fn new(grid: RegularGrid, values: Vec<f64>, t: f64) -> Result<Self, OracleError> {
        if values.len() != grid.len() {
            return Err(OracleError::Mismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::InvalidData("non-finite grid value".into()));
        }
        Ok(Self { grid, values, t })
    }

    /// Samples `f(·, t)` at every node.
    pub fn sample(grid: &RegularGrid, f: &dyn SpaceTimeField, t: f64) -> Result<Self, OracleError> {
        let n = grid.dim();
        let values = grid
            .nodes()
            .map(|x| f.value(&x[..n], t))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(grid.clone(), values, t)
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    /// `Σ f · Δx₁⋯Δxₙ`, the quadrature conserved by the scheme.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `x1[,x2],value`, one row per node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_grid_csv(&mut w, &self.grid, &[("value", &self.values)])
    }
}

/// Writes node coordinates followed by named value columns.
pub fn write_grid_csv<W: Write>(w: &mut W, grid: &RegularGrid, columns: &[(&str, &[f64])]) -> io::Result<()> {
    let n = grid.dim();
    let mut header: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    writeln!(w, "{}", header.join(","))?;
    for i in 0..grid.len() {
        let x = grid.node(i);
        let mut row: Vec<String> = x[..n].iter().map(|v| v.to_string()).collect();
        row.extend(columns.iter().map(|(_, c)| c[i].to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Grid fields at increasing times on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSeries {
    grid: RegularGrid,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl GridSeries {
    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn values(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn snapshot(&self, k: usize) -> GridField {
        GridField {
            grid: self.grid.clone(),
            values: self.values[k].clone(),
            t: self.times[k],
        }
    }

    pub fn last(&self) -> GridField {
        self.snapshot(self.len() - 1)
    }

    /// Index of the stored time closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            0
        } else if k == self.times.len() || t - self.times[k - 1] <= self.times[k] - t {
            k - 1
        } else {
            k
        }
    }

    /// Multilinear interpolation in space and linear interpolation in time;
    /// times outside the stored range are clamped.
    pub fn interpolate(&self, x: &[f64], t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.grid.interpolate(&self.values[0], x);
        }
        if k == self.times.len() {
            return self.grid.interpolate(&self.values[k - 1], x);
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        (1.0 - w) * self.grid.interpolate(&self.values[k - 1], x) + w * self.grid.interpolate(&self.values[k], x)
    }
}

impl SpaceTimeField for GridSeries {
    fn value(&self, x: &[f64], t: f64) -> Result<f64, DomainError> {
        Ok(self.interpolate(x, t))
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl Csr {
    /// Builds the matrix from per-row `(column, value)` lists; duplicate
    /// columns are summed.
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        let count = rows.len();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: count,
            indptr,
            indices,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.indptr[row]..self.indptr[row + 1];
        match self.indices[range.clone()].binary_search(&col) {
            Ok(k) => self.data[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.rows) {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            *out = acc;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.rows];
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                rows[self.indices[k]].push((r, self.data[k]));
            }
        }
        Self::from_rows(rows)
    }

    /// `I + c·self`
    pub fn identity_plus(&self, c: f64) -> Self {
        let rows = (0..self.rows)
            .map(|r| {
                let mut row: Vec<(usize, f64)> = (self.indptr[r]..self.indptr[r + 1])
                    .map(|k| (self.indices[k], c * self.data[k]))
                    .collect();
                row.push((r, 1.0));
                row
            })
            .collect();
        Self::from_rows(rows)
    }

    /// Sum of each column.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for (k, &c) in self.indices.iter().enumerate() {
            s[c] += self.data[k];
        }
        s
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, r)).collect()
    }
}

/// Jacobi-preconditioned BiCGSTAB. Returns the relative residual reached.
fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> f64 {
    let n = b.len();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    if rel <= tol {
        return rel;
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for _ in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = inv_diag[i] * p[i];
        }
        a.matvec(&y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if dot(&s, &s).sqrt() / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            a.matvec(x, &mut r);
            for i in 0..n {
                r[i] = b[i] - r[i];
            }
            return dot(&r, &r).sqrt() / bnorm;
        }
        for i in 0..n {
            z[i] = inv_diag[i] * s[i];
        }
        a.matvec(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tol {
            break;
        }
    }
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    dot(&r, &r).sqrt() / bnorm
}

fn check_dim(grid: &RegularGrid, cs: &CoefficientSet) -> Result<(), OracleError> {
    let n = grid.dim();
    if n != cs.dim() {
        return Err(OracleError::Mismatch(format!(
            "grid dimension {n} vs coefficient dimension {}",
            cs.dim()
        )));
    }
    if !(1..=2).contains(&n) {
        return Err(OracleError::UnsupportedDimension(n));
    }
    Ok(())
}

/// The matrix `L` of the discrete operator at time `t`.
pub fn assemble_operator(cs: &CoefficientSet, grid: &RegularGrid, t: f64) -> Result<Csr, OracleError> {
    check_dim(grid, cs)?;
    let n = grid.dim();
    let h = grid.spacing();
    let counts = grid.counts();
    let nu = cs.nu();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); grid.len()];
    for i in 0..grid.len() {
        let x = grid.node(i);
        rows[i].push((i, cs.sample(&x[..n], t)?.potential));
    }
    for i in 0..grid.len() {
        let m = grid.multi_index(i);
        for d in 0..n {
            if m[d] + 1 >= counts[d] {
                continue;
            }
            let mut mp = m;
            mp[d] += 1;
            let ip = grid.flat_index(&mp[..n]);
            let (x0, x1) = (grid.node(i), grid.node(ip));
            let mut xm = [0.0; MAX_DIM];
            for k in 0..n {
                xm[k] = 0.5 * (x0[k] + x1[k]);
            }
            let c = cs.sample(&xm[..n], t)?;
            // flux through the face as a linear combination of nodal values
            let mut flux: Vec<(usize, f64)> = vec![
                (ip, nu * c.a[d][d] / h[d] - 0.5 * c.velocity[d]),
                (i, -nu * c.a[d][d] / h[d] - 0.5 * c.velocity[d]),
            ];
            for e in (0..n).filter(|&e| e != d) {
                let lo = m[e].saturating_sub(1);
                let hi = (m[e] + 1).min(counts[e] - 1);
                let w = nu * c.a[d][e] / (2.0 * (hi - lo) as f64 * h[e]);
                for base in [m, mp] {
                    let mut up = base;
                    let mut down = base;
                    up[e] = hi;
                    down[e] = lo;
                    flux.push((grid.flat_index(&up[..n]), w));
                    flux.push((grid.flat_index(&down[..n]), -w));
                }
            }
            for &(col, v) in &flux {
                rows[i].push((col, v / h[d]));
                rows[ip].push((col, -v / h[d]));
            }
        }
    }
    Ok(Csr::from_rows(rows))
}

/// Largest stable explicit step, `min Δx² / (2νn·max λ(a))`.
pub fn explicit_step_limit(cs: &CoefficientSet, grid: &RegularGrid, t: f64) -> Result<f64, OracleError> {
    check_dim(grid, cs)?;
    let n = grid.dim();
    let mut amax: f64 = 0.0;
    for x in grid.nodes() {
        let c = cs.sample(&x[..n], t)?;
        amax = amax.max(linalg::max_symmetric_eigenvalue(n, &c.a));
    }
    let hmin = grid.spacing().iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if amax > 0.0 {
        hmin * hmin / (2.0 * cs.nu() * n as f64 * amax)
    } else {
        f64::INFINITY
    })
}

fn step_count(horizon: f64, dt: f64) -> Result<usize, OracleError> {
    if !(dt > 0.0 && horizon > 0.0 && dt.is_finite() && horizon.is_finite()) {
        return Err(OracleError::InvalidData(format!("need dt > 0 and T > 0, got dt={dt}, T={horizon}")));
    }
    let k = (horizon / dt).round();
    if (k * dt - horizon).abs() > 1e-9 * horizon {
        return Err(OracleError::InvalidData(format!("T={horizon} is not a multiple of dt={dt}")));
    }
    Ok(k as usize)
}

const SOLVER_TOL: f64 = 1e-13;
const SOLVER_ACCEPT: f64 = 1e-10;

/// One-step propagator `K` of a scheme: `f ↦ K f`, or `Kᵀ` when `transpose`.
struct Propagator {
    scheme: Scheme,
    explicit: Option<Csr>,
    lhs: Option<Csr>,
    rhs: Option<Csr>,
}

impl Propagator {
    fn new(cs: &CoefficientSet, grid: &RegularGrid, t: f64, dt: f64, scheme: Scheme, transpose: bool) -> Result<Self, OracleError> {
        let build = |time: f64| -> Result<Csr, OracleError> {
            let l = assemble_operator(cs, grid, time)?;
            Ok(if transpose { l.transpose() } else { l })
        };
        Ok(match scheme {
            Scheme::Explicit => {
                let limit = explicit_step_limit(cs, grid, t)?;
                if dt > limit * (1.0 + 1e-12) {
                    return Err(OracleError::StabilityViolation { dt, limit });
                }
                Self {
                    scheme,
                    explicit: Some(build(t)?.identity_plus(dt)),
                    lhs: None,
                    rhs: None,
                }
            }
            Scheme::CrankNicolson => {
                let l = build(t + 0.5 * dt)?;
                Self {
                    scheme,
                    explicit: None,
                    lhs: Some(l.identity_plus(-0.5 * dt)),
                    rhs: Some(l.identity_plus(0.5 * dt)),
                }
            }
        })
    }

    fn apply(&self, f: &[f64], t: f64) -> Result<Vec<f64>, OracleError> {
        let mut out = vec![0.0; f.len()];
        match self.scheme {
            Scheme::Explicit => self.explicit.as_ref().unwrap().matvec(f, &mut out),
            Scheme::CrankNicolson => {
                let mut b = vec![0.0; f.len()];
                self.rhs.as_ref().unwrap().matvec(f, &mut b);
                out.copy_from_slice(f);
                let residual = bicgstab(self.lhs.as_ref().unwrap(), &b, &mut out, SOLVER_TOL, 2000);
                if !(residual <= SOLVER_ACCEPT) {
                    return Err(OracleError::SolverFailure { t, residual });
                }
            }
        }
        Ok(out)
    }
}

/// Steps `∂ₜf = 𝒟f` from `f0` to `horizon`, storing every step.
pub fn solve_forward(
    cs: &CoefficientSet,
    f0: &GridField,
    horizon: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<GridSeries, OracleError> {
    forward(cs, f0, horizon, dt, scheme, false)
}

/// [`solve_forward`] for a density: aborts with
/// [`OracleError::PositivityViolation`] as soon as a value drops to zero.
pub fn solve_forward_positive(
    cs: &CoefficientSet,
    rho0: &GridField,
    horizon: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<GridSeries, OracleError> {
    forward(cs, rho0, horizon, dt, scheme, true)
}

fn forward(
    cs: &CoefficientSet,
    f0: &GridField,
    horizon: f64,
    dt: f64,
    scheme: Scheme,
    positive: bool,
) -> Result<GridSeries, OracleError> {
    let grid = f0.grid().clone();
    check_dim(&grid, cs)?;
    let steps = step_count(horizon, dt)?;
    let t0 = f0.time();
    if positive && f0.min() <= 0.0 {
        return Err(OracleError::PositivityViolation { t: t0, min: f0.min() });
    }
    let mut times = vec![t0];
    let mut values = vec![f0.values().to_vec()];
    let mut prop: Option<Propagator> = None;
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        if prop.is_none() || cs.is_time_dependent() {
            prop = Some(Propagator::new(cs, &grid, t, dt, scheme, false)?);
        }
        let next = prop.as_ref().unwrap().apply(values.last().unwrap(), t)?;
        let t_next = t0 + (k + 1) as f64 * dt;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::BlowUp { t: t_next });
        }
        if positive {
            let min = next.iter().copied().fold(f64::INFINITY, f64::min);
            if min <= 0.0 {
                return Err(OracleError::PositivityViolation { t: t_next, min });
            }
        }
        times.push(t_next);
        values.push(next);
    }
    Ok(GridSeries { grid, times, values })
}

/// Steps `∂ₜφ + 𝒟*φ = 0` backward from `φ(·,T) = phi_terminal` to `t = 0`
/// with the transposed propagator. The returned series runs forward in time.
/// Negative values are clipped to zero with a warning.
pub fn solve_adjoint(
    cs: &CoefficientSet,
    phi_terminal: &GridField,
    horizon: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<GridSeries, OracleError> {
    let grid = phi_terminal.grid().clone();
    check_dim(&grid, cs)?;
    let steps = step_count(horizon, dt)?;
    if phi_terminal.min() < 0.0 {
        return Err(OracleError::InvalidData("terminal data must be non-negative".into()));
    }
    let mut values = vec![phi_terminal.values().to_vec()];
    let mut prop: Option<Propagator> = None;
    let mut clipped = 0usize;
    let mut worst: f64 = 0.0;
    for k in (0..steps).rev() {
        let t = k as f64 * dt;
        if prop.is_none() || cs.is_time_dependent() {
            prop = Some(Propagator::new(cs, &grid, t, dt, scheme, true)?);
        }
        let mut prev = prop.as_ref().unwrap().apply(values.last().unwrap(), t)?;
        if prev.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::BlowUp { t });
        }
        for v in prev.iter_mut().filter(|v| **v < 0.0) {
            worst = worst.min(*v);
            if *v < -1e-12 {
                clipped += 1;
            }
            *v = 0.0;
        }
        values.push(prev);
    }
    if clipped > 0 {
        log::warn!("adjoint solve clipped {clipped} values below -1e-12 (most negative {worst:.3e})");
    }
    values.reverse();
    let times = (0..=steps).map(|k| k as f64 * dt).collect();
    Ok(GridSeries { grid, times, values })
}

/// `G(t_k) = Σ H(f/ρ)·φ·ρ·Δx₁⋯Δxₙ` over the stored times of the three
/// series; positive increments above `slack` are violations.
pub fn entropy_series(
    f: &GridSeries,
    rho: &GridSeries,
    phi: &GridSeries,
    h: ConvexH,
    slack: f64,
) -> Result<EntropyReport, OracleError> {
    if f.grid() != rho.grid() || f.grid() != phi.grid() {
        return Err(OracleError::Mismatch("series live on different grids".into()));
    }
    let same_times = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9);
    if !same_times(f.times(), rho.times()) || !same_times(f.times(), phi.times()) {
        return Err(OracleError::Mismatch("series have different time stamps".into()));
    }
    let vol = f.grid().cell_volume();
    let mut values = Vec::with_capacity(f.len());
    for k in 0..f.len() {
        let (fk, rk, pk) = (f.values(k), rho.values(k), phi.values(k));
        let mut g = 0.0;
        for i in 0..fk.len() {
            if rk[i] <= 0.0 {
                return Err(OracleError::PositivityViolation {
                    t: f.times()[k],
                    min: rk[i],
                });
            }
            g += h.eval(fk[i] / rk[i]) * pk[i] * rk[i];
        }
        values.push(g * vol);
    }
    Ok(EntropyReport::from_series(h, f.times().to_vec(), values, slack))
}
