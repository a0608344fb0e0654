//! Euler–Maruyama integration of the stochastic flow and its companions.
//!
//! Along each path the engine advances the position `X`, the tangent matrix
//! `J = ∂ₐX`, two stochastic determinant trackers (the multiplicative
//! determinant SDE and its exponential closed form `λ`), and the log of the
//! Feynman–Kac weight. `det J` is recomputed after every step as the direct
//! determinant.

use thiserror::Error;

use crate::brownian::BrownianDriver;
use crate::coefficients::{CoefficientSet, SampleError};
use crate::field::{DomainError, SpaceTimeField};
use crate::geometry::RegularGrid;
use crate::linalg::{self, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error("path from label {label:?} left the padded domain at t={t} (position {position:?})")]
    PathEscapedDomain {
        label: Vec<f64>,
        t: f64,
        position: Vec<f64>,
    },
    #[error("path from label {label:?} produced a non-finite state at t={t}")]
    NonFiniteState { label: Vec<f64>, t: f64 },
    #[error(
        "path from label {label:?} has det(∂X/∂a) = {value} at t={t}; the step size is too coarse"
    )]
    NonPositiveDeterminant { label: Vec<f64>, t: f64, value: f64 },
    #[error("coefficient evaluation failed on the path from label {label:?} at t={t}: {source}")]
    Coefficients {
        label: Vec<f64>,
        t: f64,
        #[source]
        source: DomainError,
    },
    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),
}

impl SdeError {
    /// `true` for errors that discard a realization rather than abort a run.
    pub fn is_path_failure(&self) -> bool {
        !matches!(self, SdeError::InvalidTimeGrid(_))
    }
}

/// Half-width added around the label box so that paths are only evaluated
/// where the coefficients were declared: `6·√(2νT)`.
pub fn domain_padding(nu: f64, horizon: f64) -> f64 {
    6.0 * (2.0 * nu * horizon).sqrt()
}

/// Uniform time grid with a set of output steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    steps: usize,
    outputs: Vec<usize>,
}

impl TimeGrid {
    /// Grid of step `dt` up to `horizon`, storing states at `output_times`.
    /// Every time must be a multiple of `dt` up to rounding.
    pub fn new(dt: f64, horizon: f64, output_times: &[f64]) -> Result<Self, SdeError> {
        if !(dt > 0.0 && dt.is_finite() && horizon > 0.0 && horizon.is_finite()) {
            return Err(SdeError::InvalidTimeGrid(format!(
                "need dt > 0 and T > 0, got dt={dt}, T={horizon}"
            )));
        }
        let to_step = |t: f64| -> Result<usize, SdeError> {
            let k = (t / dt).round();
            if t < 0.0 || (k * dt - t).abs() > 1e-9 * t.abs().max(dt) {
                return Err(SdeError::InvalidTimeGrid(format!(
                    "time {t} is not a multiple of dt={dt}"
                )));
            }
            Ok(k as usize)
        };
        let steps = to_step(horizon)?;
        let mut outputs = output_times
            .iter()
            .map(|&t| to_step(t))
            .collect::<Result<Vec<_>, _>>()?;
        outputs.sort_unstable();
        outputs.dedup();
        if outputs.last().is_some_and(|&k| k > steps) {
            return Err(SdeError::InvalidTimeGrid("output time beyond the horizon".into()));
        }
        Ok(Self { dt, steps, outputs })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Step indices at which states are stored.
    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    pub fn output_times(&self) -> Vec<f64> {
        self.outputs.iter().map(|&k| self.time(k)).collect()
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Same horizon and outputs with the step divided by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            dt: self.dt / factor as f64,
            steps: self.steps * factor,
            outputs: self.outputs.iter().map(|k| k * factor).collect(),
        }
    }

    /// Index into [`TimeGrid::outputs`] of the output at time `t`.
    pub fn output_index(&self, t: f64) -> Option<usize> {
        self.outputs
            .iter()
            .position(|&k| (self.time(k) - t).abs() <= 1e-9 * t.abs().max(self.dt))
    }
}

/// State of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub n: usize,
    pub label: Vec3,
    pub t: f64,
    pub x: Vec3,
    /// `jacobian[j][k] = ∂Xⱼ/∂aₖ`
    pub jacobian: Mat3,
    pub d_sde: f64,
    pub log_lambda: f64,
    pub d_direct: f64,
    /// `∫₀ᵗ P(X(a,s),s) ds`
    pub log_i: f64,
}

impl PathState {
    pub fn new(label: &[f64]) -> Self {
        let n = label.len();
        Self {
            n,
            label: linalg::vec_from_slice(label),
            t: 0.0,
            x: linalg::vec_from_slice(label),
            jacobian: linalg::identity(n),
            d_sde: 1.0,
            log_lambda: 0.0,
            d_direct: 1.0,
            log_i: 0.0,
        }
    }

    pub fn position(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn label(&self) -> &[f64] {
        &self.label[..self.n]
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.jacobian.iter().flatten().all(|v| v.is_finite())
            && self.d_sde.is_finite()
            && self.log_lambda.is_finite()
            && self.d_direct.is_finite()
            && self.log_i.is_finite()
    }
}

/// One Euler–Maruyama step of every tracked quantity, with coefficients
/// frozen at the left endpoint `(X, t)`.
pub fn step_path(cs: &CoefficientSet, s: &PathState, dw: &Vec3, dt: f64) -> Result<PathState, SdeError> {
    let n = s.n;
    let c = cs.sample(s.position(), s.t).map_err(|e| match e {
        SampleError::Domain(source) => SdeError::Coefficients {
            label: s.label().to_vec(),
            t: s.t,
            source,
        },
        SampleError::OutsideDomain { point } => SdeError::PathEscapedDomain {
            label: s.label().to_vec(),
            t: s.t,
            position: point,
        },
    })?;
    let amp = (2.0 * cs.nu()).sqrt();

    let mut next = s.clone();
    next.t = s.t + dt;
    for j in 0..n {
        let noise: f64 = (0..n).map(|p| c.sigma[j][p] * dw[p]).sum();
        next.x[j] = s.x[j] + c.flow_drift[j] * dt + amp * noise;
    }

    // d(∂ₐXⱼ) = ∂ₖvⱼ ∂ₐXₖ dt + √(2ν) ∂ₖσⱼₚ ∂ₐXₖ dWₚ
    for j in 0..n {
        for m in 0..n {
            let mut inc = 0.0;
            for k in 0..n {
                let mut coeff = c.flow_drift_jacobian[j][k] * dt;
                for p in 0..n {
                    coeff += amp * c.dsigma[k][j][p] * dw[p];
                }
                inc += coeff * s.jacobian[k][m];
            }
            next.jacobian[j][m] = s.jacobian[j][m] + inc;
        }
    }

    let div_sigma_dw: f64 = (0..n).map(|p| c.div_sigma[p] * dw[p]).sum();
    let div_sigma_sq: f64 = (0..n).map(|p| c.div_sigma[p] * c.div_sigma[p]).sum();
    let drift = c.div_flow_drift + 2.0 * cs.nu() * c.e_field;
    next.d_sde = s.d_sde * (1.0 + drift * dt + amp * div_sigma_dw);
    next.log_lambda = s.log_lambda + (drift - cs.nu() * div_sigma_sq) * dt + amp * div_sigma_dw;
    next.log_i = s.log_i + c.reaction * dt;
    next.d_direct = linalg::det(n, &next.jacobian);

    if !next.is_finite() {
        return Err(SdeError::NonFiniteState {
            label: s.label().to_vec(),
            t: next.t,
        });
    }
    if let Some(domain) = cs.domain() {
        if !domain.contains(next.position()) {
            return Err(SdeError::PathEscapedDomain {
                label: s.label().to_vec(),
                t: next.t,
                position: next.position().to_vec(),
            });
        }
    }
    if next.d_direct <= 0.0 {
        return Err(SdeError::NonPositiveDeterminant {
            label: s.label().to_vec(),
            t: next.t,
            value: next.d_direct,
        });
    }
    Ok(next)
}

/// Labels advanced by one Brownian realization, with states stored at the
/// output times of the time grid.
#[derive(Debug, Clone)]
pub struct Ensemble {
    n: usize,
    labels: Vec<Vec3>,
    grid: Option<RegularGrid>,
    time_grid: TimeGrid,
    seed: u64,
    realization: u64,
    /// `states[output][label]`
    states: Vec<Vec<PathState>>,
}

impl Ensemble {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[Vec3] {
        &self.labels
    }

    /// The label grid, when the labels were laid out on one.
    pub fn grid(&self) -> Option<&RegularGrid> {
        self.grid.as_ref()
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn realization(&self) -> u64 {
        self.realization
    }

    pub fn output_count(&self) -> usize {
        self.states.len()
    }

    pub fn output_time(&self, output: usize) -> f64 {
        self.time_grid.time(self.time_grid.outputs()[output])
    }

    pub fn states(&self, output: usize) -> &[PathState] {
        &self.states[output]
    }

    pub fn state(&self, output: usize, label: usize) -> &PathState {
        &self.states[output][label]
    }
}

/// Advances every label through the time grid with the same increments.
pub fn simulate_paths(
    cs: &CoefficientSet,
    labels: &[Vec3],
    time_grid: &TimeGrid,
    driver: &mut BrownianDriver,
) -> Result<Ensemble, SdeError> {
    let n = cs.dim();
    assert_eq!(driver.dim(), n, "driver dimension mismatch");
    if (driver.dt() - time_grid.dt()).abs() > 1e-12 * time_grid.dt() {
        return Err(SdeError::InvalidTimeGrid(format!(
            "driver step {} differs from grid step {}",
            driver.dt(),
            time_grid.dt()
        )));
    }
    let increments = driver.increments(time_grid.steps());
    let dt = time_grid.dt();
    let outputs = time_grid.outputs();
    let mut states: Vec<Vec<PathState>> = vec![Vec::with_capacity(labels.len()); outputs.len()];
    for label in labels {
        let mut s = PathState::new(&label[..n]);
        let mut next_out = 0;
        for step in 0..=time_grid.steps() {
            while next_out < outputs.len() && outputs[next_out] == step {
                states[next_out].push(s.clone());
                next_out += 1;
            }
            if step == time_grid.steps() {
                break;
            }
            s = step_path(cs, &s, &increments[step], dt)?;
            // keep the clock exact on long horizons
            s.t = time_grid.time(step + 1);
        }
    }
    Ok(Ensemble {
        n,
        labels: labels.to_vec(),
        grid: None,
        time_grid: time_grid.clone(),
        seed: driver.seed(),
        realization: driver.realization(),
        states,
    })
}

/// [`simulate_paths`] over every node of a label grid.
pub fn simulate_ensemble(
    cs: &CoefficientSet,
    grid: &RegularGrid,
    time_grid: &TimeGrid,
    driver: &mut BrownianDriver,
) -> Result<Ensemble, SdeError> {
    assert_eq!(grid.dim(), cs.dim(), "label grid dimension mismatch");
    let labels: Vec<Vec3> = grid.nodes().collect();
    let mut ens = simulate_paths(cs, &labels, time_grid, driver)?;
    ens.grid = Some(grid.clone());
    Ok(ens)
}

/// `M(a,t) = φ(X(a,t),t) · det ∂ₐX · exp(∫₀ᵗ P ds)`.
pub fn martingale_m(
    ens: &Ensemble,
    phi: &dyn SpaceTimeField,
    label: usize,
    output: usize,
) -> Result<f64, DomainError> {
    let s = ens.state(output, label);
    Ok(phi.value(s.position(), s.t)? * s.d_direct * s.log_i.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldExpr;
    use crate::geometry::BoundingBox;

    fn cs(sigma: &[Vec<&str>], u: &[&str], v: &str, nu: f64) -> CoefficientSet {
        CoefficientSet::assemble(sigma, u, v, nu, u.len()).unwrap()
    }

    #[test]
    fn pure_brownian_step() {
        let c = cs(&[vec!["1", "0"], vec!["0", "1"]], &["0", "0"], "0", 0.5);
        let s = PathState::new(&[0.3, -0.2]);
        let dw = [0.1, -0.05, 0.0];
        let next = step_path(&c, &s, &dw, 0.01).unwrap();
        assert_eq!(next.position(), &[0.3 + 0.1, -0.2 - 0.05]);
        assert_eq!(next.jacobian, linalg::identity(2));
        assert_eq!(next.d_sde, 1.0);
        assert_eq!(next.d_direct, 1.0);
        assert_eq!(next.log_lambda, 0.0);
        assert_eq!(next.log_i, 0.0);
    }

    #[test]
    fn constant_drift_step() {
        let c = cs(&[vec!["1"]], &["2"], "0", 0.5);
        let next = step_path(&c, &PathState::new(&[1.0]), &[0.1, 0.0, 0.0], 0.01).unwrap();
        assert!((next.x[0] - (1.0 + 0.02 + 0.1)).abs() < 1e-15);
        assert_eq!(next.d_direct, 1.0);
        assert_eq!(next.d_sde, 1.0);
    }

    #[test]
    fn trackers_agree_to_second_order_in_one_step() {
        let c = cs(&[vec!["1 + 0.5*sin(x1)"]], &["0"], "0", 0.1);
        for (dt, dw) in [(1e-2, 0.07), (1e-3, -0.02), (1e-4, 0.01)] {
            let next = step_path(&c, &PathState::new(&[0.4]), &[dw, 0.0, 0.0], dt).unwrap();
            assert!((next.d_direct - next.d_sde).abs() <= 1e-14);
            // exp form differs by the Itô correction, which is O(ΔW²) − O(dt)
            assert!((next.d_direct - next.lambda()).abs() <= 0.1 * (dw * dw + dt));
        }
    }

    #[test]
    fn shared_noise_in_additive_case() {
        let c = cs(&[vec!["1"]], &["0"], "0", 0.2);
        let tg = TimeGrid::new(0.01, 1.0, &[0.5, 1.0]).unwrap();
        let labels = [[-1.0, 0.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0]];
        let mut driver = BrownianDriver::new(1, 0, 0.01, 1);
        let ens = simulate_paths(&c, &labels, &tg, &mut driver).unwrap();
        for out in 0..2 {
            let d: Vec<f64> = ens.states(out).iter().map(|s| s.x[0] - s.label[0]).collect();
            assert!((d[0] - d[1]).abs() < 1e-12 && (d[1] - d[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_volume() {
        let c = cs(&[vec!["1", "0"], vec!["0", "1"]], &["-x2", "x1"], "0", 0.1);
        let tg = TimeGrid::new(1e-3, 1.0, &[1.0]).unwrap();
        let mut driver = BrownianDriver::new(3, 0, 1e-3, 2);
        let ens = simulate_paths(&c, &[[0.5, 0.5, 0.0]], &tg, &mut driver).unwrap();
        let s = ens.state(0, 0);
        // each step multiplies det by det(I + ∇U dt) = 1 + dt²
        let bound = (1.0 + 1e-6_f64).powi(1000) - 1.0;
        assert!((s.d_direct - 1.0).abs() <= bound * (1.0 + 1e-9));
        assert!((s.d_direct - 1.0).abs() <= 1.1e-3);
        assert!(s.log_lambda.abs() < 1e-12);
        assert_eq!(s.d_sde, 1.0);
    }

    #[test]
    fn initial_state_is_stored_at_time_zero() {
        let c = cs(&[vec!["1 + 0.5*sin(x1)"]], &["0"], "0", 0.1);
        let tg = TimeGrid::new(0.01, 0.1, &[0.0, 0.1]).unwrap();
        let mut driver = BrownianDriver::new(1, 0, 0.01, 1);
        let ens = simulate_paths(&c, &[[0.2, 0.0, 0.0]], &tg, &mut driver).unwrap();
        assert_eq!(ens.state(0, 0), &PathState::new(&[0.2]));
        let phi = FieldExpr::parse("1 + x1^2", 1).unwrap();
        assert_eq!(martingale_m(&ens, &phi, 0, 0).unwrap(), 1.04);
        assert!((ens.state(1, 0).t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn escaping_paths_are_reported() {
        let c = cs(&[vec!["1"]], &["100"], "0", 0.1).with_domain(BoundingBox::cube(1, -1.0, 1.0).unwrap());
        let tg = TimeGrid::new(0.01, 1.0, &[1.0]).unwrap();
        let mut driver = BrownianDriver::new(1, 0, 0.01, 1);
        let err = simulate_paths(&c, &[[0.0; 3]], &tg, &mut driver).unwrap_err();
        assert!(matches!(err, SdeError::PathEscapedDomain { .. }));
        assert!(err.is_path_failure());
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(0.1, 1.0, &[0.25]).is_err());
        assert!(TimeGrid::new(0.1, 1.0, &[2.0]).is_err());
        let g = TimeGrid::new(0.1, 1.0, &[1.0, 0.5, 0.5]).unwrap();
        assert_eq!(g.outputs(), &[5, 10]);
        assert_eq!(g.refined(2).outputs(), &[10, 20]);
        assert_eq!(g.output_index(1.0), Some(1));
    }
}
