//! The operator coefficients and every quantity derived from them.
//!
//! Given the noise matrix `σ` (n×n), the velocity `U` and the potential `V`,
//! the divergence-form operator is
//!
//! ```text
//! 𝒟ρ = ν ∂ᵢ(aᵢⱼ ∂ⱼρ) − div(Uρ) + Vρ,        a = σσᵀ
//!    = ν aᵢⱼ ∂ᵢ∂ⱼρ − u·∇ρ + Pρ
//! ```
//!
//! with the non-divergence drift `uⱼ = Uⱼ − ν ∂ᵢaᵢⱼ` and `P = V − div U`. The
//! stochastic flow uses the drift
//!
//! ```text
//! vⱼ = Uⱼ − ν (∂ₖσₖₚ) σⱼₚ + ν (∂ₖσⱼₚ) σₖₚ
//! ```
//!
//! and the Itô correction of the Jacobian determinant is the minor sum
//! `E = Σ_{i<j} Σₚ (∂ᵢσᵢₚ ∂ⱼσⱼₚ − ∂ᵢσⱼₚ ∂ⱼσᵢₚ)`.
//!
//! All derivatives are taken symbolically when the set is assembled; sampling
//! evaluates compiled programs and combines them numerically.

use thiserror::Error;

use crate::field::{self, DomainError, FieldExpr, ParseError, Program, Var, MAX_DIM};
use crate::geometry::BoundingBox;
use crate::linalg::{self, Mat3, Vec3, ZERO_MAT, ZERO_VEC};

/// Below this smallest eigenvalue of `a` the flow inversion degrades.
pub const ELLIPTICITY_WARNING: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoefficientError {
    #[error("cannot parse {field}: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("diffusion strength must be positive and finite, got {0}")]
    InvalidNu(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("point {point:?} lies outside the admissible domain")]
    OutsideDomain { point: Vec<f64> },
}

/// Symbolic coefficient bundle. Immutable once assembled.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    n: usize,
    nu: f64,
    sigma: Vec<Vec<FieldExpr>>,
    velocity: Vec<FieldExpr>,
    potential: FieldExpr,
    /// `dsigma[k][j][p] = ∂ₖσⱼₚ`
    dsigma: Vec<Vec<Vec<FieldExpr>>>,
    /// `dvelocity[j][k] = ∂ₖUⱼ`
    dvelocity: Vec<Vec<FieldExpr>>,
    diffusivity: Vec<Vec<FieldExpr>>,
    nondiv_drift: Vec<FieldExpr>,
    flow_drift: Vec<FieldExpr>,
    /// `flow_drift_jacobian[j][k] = ∂ₖvⱼ`
    flow_drift_jacobian: Vec<Vec<FieldExpr>>,
    reaction: FieldExpr,
    e_minor: FieldExpr,
    e_half: FieldExpr,
    div_sigma: Vec<FieldExpr>,
    div_flow_drift: FieldExpr,
    compiled: Compiled,
    domain: Option<BoundingBox>,
    time_dependent: bool,
}

#[derive(Debug, Clone)]
struct Compiled {
    sigma: Vec<Program>,
    dsigma: Vec<Program>,
    velocity: Vec<Program>,
    reaction: Program,
    potential: Program,
    flow_drift_jacobian: Vec<Program>,
}

/// Every coefficient evaluated at one space-time point. Entries beyond the
/// dimension are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSample {
    pub n: usize,
    pub sigma: Mat3,
    /// `dsigma[k][j][p] = ∂ₖσⱼₚ`
    pub dsigma: [Mat3; MAX_DIM],
    pub a: Mat3,
    pub velocity: Vec3,
    pub nondiv_drift: Vec3,
    pub flow_drift: Vec3,
    /// `flow_drift_jacobian[j][k] = ∂ₖvⱼ`
    pub flow_drift_jacobian: Mat3,
    pub reaction: f64,
    pub potential: f64,
    pub e_field: f64,
    /// `div_sigma[p] = ∂ₖσₖₚ`
    pub div_sigma: Vec3,
    pub div_flow_drift: f64,
}

impl CoefficientSet {
    /// Parses and assembles the coefficient bundle.
    ///
    /// `sigma` is given row by row (`sigma[j][p] = σⱼₚ`).
    pub fn assemble<S: AsRef<str>>(
        sigma: &[Vec<S>],
        velocity: &[S],
        potential: &str,
        nu: f64,
        n: usize,
    ) -> Result<Self, CoefficientError> {
        let parse = |src: &str, name: String| {
            FieldExpr::parse(src, n).map_err(|source| CoefficientError::Parse {
                field: name,
                source,
            })
        };
        if sigma.len() != n || sigma.iter().any(|row| row.len() != n) {
            return Err(CoefficientError::DimensionMismatch(format!(
                "sigma must be {n}x{n}"
            )));
        }
        if velocity.len() != n {
            return Err(CoefficientError::DimensionMismatch(format!(
                "velocity must have {n} components, got {}",
                velocity.len()
            )));
        }
        let sigma = sigma
            .iter()
            .enumerate()
            .map(|(j, row)| {
                row.iter()
                    .enumerate()
                    .map(|(p, s)| parse(s.as_ref(), format!("sigma[{}][{}]", j + 1, p + 1)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let velocity = velocity
            .iter()
            .enumerate()
            .map(|(j, s)| parse(s.as_ref(), format!("U[{}]", j + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let potential = parse(potential, "V".into())?;
        Self::from_fields(sigma, velocity, potential, nu)
    }

    pub fn from_fields(
        sigma: Vec<Vec<FieldExpr>>,
        velocity: Vec<FieldExpr>,
        potential: FieldExpr,
        nu: f64,
    ) -> Result<Self, CoefficientError> {
        let n = potential.dim();
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(CoefficientError::InvalidNu(nu));
        }
        if sigma.len() != n
            || sigma.iter().any(|r| r.len() != n || r.iter().any(|e| e.dim() != n))
            || velocity.len() != n
            || velocity.iter().any(|e| e.dim() != n)
        {
            return Err(CoefficientError::DimensionMismatch(format!(
                "all fields must be {n}-dimensional with sigma {n}x{n} and U of length {n}"
            )));
        }
        let range = || 0..n;
        let dsigma: Vec<Vec<Vec<FieldExpr>>> = range()
            .map(|k| {
                range()
                    .map(|j| range().map(|p| sigma[j][p].differentiate(Var::Space(k))).collect())
                    .collect()
            })
            .collect();
        let dvelocity: Vec<Vec<FieldExpr>> = velocity.iter().map(FieldExpr::gradient).collect();

        let diffusivity: Vec<Vec<FieldExpr>> = range()
            .map(|i| {
                range()
                    .map(|j| {
                        let terms: Vec<FieldExpr> =
                            range().map(|p| &sigma[i][p] * &sigma[j][p]).collect();
                        field::sum(n, &terms)
                    })
                    .collect()
            })
            .collect();

        let nondiv_drift: Vec<FieldExpr> = range()
            .map(|j| {
                let terms: Vec<FieldExpr> = range()
                    .map(|i| diffusivity[i][j].differentiate(Var::Space(i)))
                    .collect();
                &velocity[j] - &(nu * &field::sum(n, &terms))
            })
            .collect();

        let div_sigma: Vec<FieldExpr> = range()
            .map(|p| {
                let terms: Vec<FieldExpr> = range().map(|k| dsigma[k][k][p].clone()).collect();
                field::sum(n, &terms)
            })
            .collect();

        let flow_drift: Vec<FieldExpr> = range()
            .map(|j| {
                let mut gain = Vec::new();
                let mut loss = Vec::new();
                for k in range() {
                    for p in range() {
                        gain.push(&dsigma[k][j][p] * &sigma[k][p]);
                        loss.push(&dsigma[k][k][p] * &sigma[j][p]);
                    }
                }
                let correction = &field::sum(n, &gain) - &field::sum(n, &loss);
                &velocity[j] + &(nu * &correction)
            })
            .collect();
        let flow_drift_jacobian: Vec<Vec<FieldExpr>> =
            flow_drift.iter().map(FieldExpr::gradient).collect();
        let div_flow_drift = field::sum(n, (0..n).map(|j| &flow_drift_jacobian[j][j]));

        let div_velocity = field::sum(n, (0..n).map(|j| &dvelocity[j][j]));
        let reaction = &potential - &div_velocity;

        let mut minors = Vec::new();
        for i in range() {
            for j in (i + 1)..n {
                for p in range() {
                    minors.push(
                        &(&dsigma[i][i][p] * &dsigma[j][j][p])
                            - &(&dsigma[i][j][p] * &dsigma[j][i][p]),
                    );
                }
            }
        }
        let e_minor = field::sum(n, &minors);
        let mut half_terms = Vec::new();
        for i in range() {
            for j in range() {
                for p in range() {
                    half_terms.push(
                        &(&dsigma[i][i][p] * &dsigma[j][j][p])
                            - &(&dsigma[j][i][p] * &dsigma[i][j][p]),
                    );
                }
            }
        }
        let e_half = 0.5 * &field::sum(n, &half_terms);

        let compiled = Compiled {
            sigma: sigma.iter().flatten().map(FieldExpr::compile).collect(),
            dsigma: dsigma.iter().flatten().flatten().map(FieldExpr::compile).collect(),
            velocity: velocity.iter().map(FieldExpr::compile).collect(),
            reaction: reaction.compile(),
            potential: potential.compile(),
            flow_drift_jacobian: flow_drift_jacobian
                .iter()
                .flatten()
                .map(FieldExpr::compile)
                .collect(),
        };
        let time_dependent = sigma.iter().flatten().any(FieldExpr::depends_on_time)
            || velocity.iter().any(FieldExpr::depends_on_time)
            || potential.depends_on_time();

        Ok(Self {
            n,
            nu,
            sigma,
            velocity,
            potential,
            dsigma,
            dvelocity,
            diffusivity,
            nondiv_drift,
            flow_drift,
            flow_drift_jacobian,
            reaction,
            e_minor,
            e_half,
            div_sigma,
            div_flow_drift,
            compiled,
            domain: None,
            time_dependent,
        })
    }

    /// Restricts sampling to `domain`; points outside fail with
    /// [`SampleError::OutsideDomain`].
    pub fn with_domain(mut self, domain: BoundingBox) -> Self {
        assert_eq!(domain.dim(), self.n, "domain dimension mismatch");
        self.domain = Some(domain);
        self
    }

    pub fn domain(&self) -> Option<&BoundingBox> {
        self.domain.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn sigma(&self) -> &[Vec<FieldExpr>] {
        &self.sigma
    }

    /// `dsigma()[k][j][p] = ∂ₖσⱼₚ`
    pub fn dsigma(&self) -> &[Vec<Vec<FieldExpr>>] {
        &self.dsigma
    }

    pub fn velocity(&self) -> &[FieldExpr] {
        &self.velocity
    }

    /// `velocity_gradient()[j][k] = ∂ₖUⱼ`
    pub fn velocity_gradient(&self) -> &[Vec<FieldExpr>] {
        &self.dvelocity
    }

    pub fn potential(&self) -> &FieldExpr {
        &self.potential
    }

    pub fn diffusivity(&self) -> &[Vec<FieldExpr>] {
        &self.diffusivity
    }

    /// Non-divergence drift `u`.
    pub fn nondiv_drift(&self) -> &[FieldExpr] {
        &self.nondiv_drift
    }

    /// Drift `v` of the stochastic flow.
    pub fn flow_drift(&self) -> &[FieldExpr] {
        &self.flow_drift
    }

    pub fn flow_drift_jacobian(&self) -> &[Vec<FieldExpr>] {
        &self.flow_drift_jacobian
    }

    /// `P = V − div U`.
    pub fn reaction(&self) -> &FieldExpr {
        &self.reaction
    }

    /// `E` as the sum of 2×2 minors of `∂σ`.
    pub fn e_minor(&self) -> &FieldExpr {
        &self.e_minor
    }

    /// `E` as `½[∂ᵢσᵢₚ ∂ⱼσⱼₚ − ∂ⱼσᵢₚ ∂ᵢσⱼₚ]`.
    pub fn e_half(&self) -> &FieldExpr {
        &self.e_half
    }

    pub fn div_sigma(&self) -> &[FieldExpr] {
        &self.div_sigma
    }

    pub fn div_flow_drift(&self) -> &FieldExpr {
        &self.div_flow_drift
    }

    /// `true` when `σ` is constant and `U` affine, so the Euler–Maruyama
    /// tangent update carries no multiplicative noise.
    pub fn has_additive_noise(&self) -> bool {
        self.sigma.iter().flatten().all(FieldExpr::is_constant)
    }

    /// Evaluates every coefficient at `(x, t)`.
    pub fn sample(&self, x: &[f64], t: f64) -> Result<CoefficientSample, SampleError> {
        let n = self.n;
        if let Some(domain) = &self.domain {
            if !domain.contains(x) {
                return Err(SampleError::OutsideDomain { point: x.to_vec() });
            }
        }
        let c = &self.compiled;
        let mut sigma = ZERO_MAT;
        for j in 0..n {
            for p in 0..n {
                sigma[j][p] = c.sigma[j * n + p].eval(x, t)?;
            }
        }
        let mut dsigma = [ZERO_MAT; MAX_DIM];
        for k in 0..n {
            for j in 0..n {
                for p in 0..n {
                    dsigma[k][j][p] = c.dsigma[(k * n + j) * n + p].eval(x, t)?;
                }
            }
        }
        let mut velocity = ZERO_VEC;
        for j in 0..n {
            velocity[j] = c.velocity[j].eval(x, t)?;
        }
        let mut flow_drift_jacobian = ZERO_MAT;
        for j in 0..n {
            for k in 0..n {
                flow_drift_jacobian[j][k] = c.flow_drift_jacobian[j * n + k].eval(x, t)?;
            }
        }
        let reaction = c.reaction.eval(x, t)?;
        let potential = c.potential.eval(x, t)?;
        Ok(CoefficientSample::from_parts(
            n,
            self.nu,
            sigma,
            dsigma,
            velocity,
            flow_drift_jacobian,
            reaction,
            potential,
        ))
    }

    /// Smallest eigenvalue of `a` over `points`; logs a warning when it drops
    /// below [`ELLIPTICITY_WARNING`].
    pub fn min_diffusivity_eigenvalue<'a>(
        &self,
        points: impl IntoIterator<Item = &'a [f64]>,
        t: f64,
    ) -> Result<f64, SampleError> {
        let mut min = f64::INFINITY;
        for x in points {
            let s = self.sample(x, t)?;
            min = min.min(linalg::min_symmetric_eigenvalue(self.n, &s.a));
        }
        if min < ELLIPTICITY_WARNING {
            log::warn!(
                "diffusivity is nearly degenerate (min eigenvalue {min:.3e}); flow inversion may degrade"
            );
        }
        Ok(min)
    }
}

impl CoefficientSample {
    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        n: usize,
        nu: f64,
        sigma: Mat3,
        dsigma: [Mat3; MAX_DIM],
        velocity: Vec3,
        flow_drift_jacobian: Mat3,
        reaction: f64,
        potential: f64,
    ) -> Self {
        let mut a = ZERO_MAT;
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|p| sigma[i][p] * sigma[j][p]).sum();
            }
        }
        let mut div_sigma = ZERO_VEC;
        for (p, d) in div_sigma.iter_mut().enumerate().take(n) {
            *d = (0..n).map(|k| dsigma[k][k][p]).sum();
        }
        let mut nondiv_drift = ZERO_VEC;
        let mut flow_drift = ZERO_VEC;
        for j in 0..n {
            // ∂ᵢaᵢⱼ = (∂ᵢσᵢₚ)σⱼₚ + σᵢₚ ∂ᵢσⱼₚ
            let mut div_a = 0.0;
            let mut gain = 0.0;
            let mut loss = 0.0;
            for k in 0..n {
                for p in 0..n {
                    div_a += dsigma[k][k][p] * sigma[j][p] + sigma[k][p] * dsigma[k][j][p];
                    gain += dsigma[k][j][p] * sigma[k][p];
                    loss += dsigma[k][k][p] * sigma[j][p];
                }
            }
            nondiv_drift[j] = velocity[j] - nu * div_a;
            flow_drift[j] = velocity[j] + nu * (gain - loss);
        }
        let mut e_field = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                for p in 0..n {
                    e_field += dsigma[i][i][p] * dsigma[j][j][p] - dsigma[i][j][p] * dsigma[j][i][p];
                }
            }
        }
        let div_flow_drift = (0..n).map(|j| flow_drift_jacobian[j][j]).sum();
        Self {
            n,
            sigma,
            dsigma,
            a,
            velocity,
            nondiv_drift,
            flow_drift,
            flow_drift_jacobian,
            reaction,
            potential,
            e_field,
            div_sigma,
            div_flow_drift,
        }
    }

    pub fn is_finite(&self) -> bool {
        let n = self.n;
        let mat_ok = |m: &Mat3| m[..n].iter().all(|r| r[..n].iter().all(|v| v.is_finite()));
        mat_ok(&self.sigma)
            && mat_ok(&self.a)
            && mat_ok(&self.flow_drift_jacobian)
            && self.dsigma[..n].iter().all(mat_ok)
            && self.flow_drift[..n].iter().all(|v| v.is_finite())
            && self.reaction.is_finite()
            && self.e_field.is_finite()
    }
}

/// Agreement of the two `E` formulas over a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct EFormsReport {
    pub points_checked: usize,
    pub max_discrepancy: f64,
    pub worst_point: Option<Vec<f64>>,
}

impl EFormsReport {
    pub fn agrees(&self, tol: f64) -> bool {
        self.max_discrepancy <= tol
    }
}

/// Compares the minor-sum `E` (computed from sampled `∂σ`) against the
/// half-difference form evaluated from its own symbolic expression.
pub fn verify_e_forms<'a>(
    cs: &CoefficientSet,
    points: impl IntoIterator<Item = &'a [f64]>,
    t: f64,
) -> Result<EFormsReport, SampleError> {
    let mut report = EFormsReport {
        points_checked: 0,
        max_discrepancy: 0.0,
        worst_point: None,
    };
    for x in points {
        let minor = cs.sample(x, t)?.e_field;
        let half = cs.e_half.evaluate(x, t)?;
        let d = (minor - half).abs();
        report.points_checked += 1;
        if d > report.max_discrepancy || report.worst_point.is_none() {
            report.max_discrepancy = report.max_discrepancy.max(d);
            report.worst_point = Some(x.to_vec());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cs(sigma: &[Vec<&str>], u: &[&str], v: &str, nu: f64) -> CoefficientSet {
        CoefficientSet::assemble(sigma, u, v, nu, u.len()).unwrap()
    }

    fn random_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn constant_sigma_leaves_velocity_as_drift() {
        let c = cs(
            &[vec!["1", "0"], vec!["0", "1"]],
            &["sin(x2)", "x1*x2"],
            "0",
            0.3,
        );
        for x in random_points(2, 20, 1) {
            let s = c.sample(&x, 0.5).unwrap();
            for j in 0..2 {
                assert_eq!(s.flow_drift[j], s.velocity[j]);
                assert_eq!(s.nondiv_drift[j], s.velocity[j]);
            }
            assert_eq!(s.e_field, 0.0);
            assert_eq!(s.div_sigma, [0.0; 3]);
        }
    }

    #[test]
    fn one_dimensional_corrections_cancel() {
        let c = cs(&[vec!["1 + 0.5*sin(x1)"]], &["0"], "0", 0.1);
        assert!(c.flow_drift()[0].is_zero());
        assert!(c.flow_drift_jacobian()[0][0].is_zero());
        assert!(c.e_minor().is_zero());
        for x in random_points(1, 20, 2) {
            let s = c.sample(&x, 0.0).unwrap();
            assert_eq!(s.flow_drift[0], 0.0);
            assert_eq!(s.e_field, 0.0);
        }
    }

    /// Independent evaluation of the flow drift from σ differenced numerically.
    fn flow_drift_by_differences(
        sigma: &dyn Fn(&[f64]) -> [[f64; 2]; 2],
        velocity: [f64; 2],
        nu: f64,
        x: &[f64],
    ) -> [f64; 2] {
        let h = 1e-5;
        let mut d = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let (sp, sm) = (sigma(&xp), sigma(&xm));
            for j in 0..2 {
                for p in 0..2 {
                    d[k][j][p] = (sp[j][p] - sm[j][p]) / (2.0 * h);
                }
            }
        }
        let s = sigma(x);
        let mut v = velocity;
        for j in 0..2 {
            for k in 0..2 {
                for p in 0..2 {
                    v[j] += -nu * d[k][k][p] * s[j][p] + nu * d[k][j][p] * s[k][p];
                }
            }
        }
        v
    }

    #[test]
    fn flow_drift_matches_difference_oracle() {
        let eps = 0.2;
        let nu = 0.1;
        let c = cs(&[vec!["1 + 0.2*sin(x1)", "0"], vec!["0", "1"]], &["0", "0"], "0", nu);
        let sigma = |x: &[f64]| [[1.0 + eps * x[0].sin(), 0.0], [0.0, 1.0]];
        for x in random_points(2, 25, 3) {
            let s = c.sample(&x, 0.0).unwrap();
            let v = flow_drift_by_differences(&sigma, [0.0, 0.0], nu, &x);
            for j in 0..2 {
                let scale = v[j].abs().max(1e-12);
                assert!(
                    (s.flow_drift[j] - v[j]).abs() / scale <= 1e-6 || (s.flow_drift[j] - v[j]).abs() < 1e-12,
                    "j={j} got {} want {}",
                    s.flow_drift[j],
                    v[j]
                );
            }
        }
        // a genuinely two-dimensional σ with nonzero drift correction
        let c = cs(&[vec!["x2", "sin(x1)"], vec!["cos(x2)", "x1*x2"]], &["0", "0"], "0", nu);
        let sigma = |x: &[f64]| [[x[1], x[0].sin()], [x[1].cos(), x[0] * x[1]]];
        for x in random_points(2, 25, 4) {
            let s = c.sample(&x, 0.0).unwrap();
            let v = flow_drift_by_differences(&sigma, [0.0, 0.0], nu, &x);
            for j in 0..2 {
                assert!((s.flow_drift[j] - v[j]).abs() <= 1e-6 * v[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn e_field_examples() {
        let e = |sigma: &[Vec<&str>], x: [f64; 2]| {
            cs(sigma, &["0", "0"], "0", 1.0).sample(&x, 0.0).unwrap().e_field
        };
        assert_eq!(e(&[vec!["x2", "0"], vec!["0", "x1"]], [1.0, 2.0]), 0.0);
        assert_eq!(e(&[vec!["x1", "x2"], vec!["x2", "x1"]], [0.3, -0.7]), 0.0);
        assert_eq!(e(&[vec!["x2", "0"], vec!["x1", "0"]], [0.3, -0.7]), -1.0);
        assert_eq!(e(&[vec!["1", "0"], vec!["0", "1"]], [0.3, -0.7]), 0.0);
    }

    #[test]
    fn e_forms_agree() {
        let c = cs(&[vec!["sin(x2)", "0"], vec!["cos(x1)", "1"]], &["0", "0"], "0", 0.2);
        let pts = random_points(2, 100, 5);
        let report = verify_e_forms(&c, pts.iter().map(Vec::as_slice), 0.0).unwrap();
        assert_eq!(report.points_checked, 100);
        assert!(report.agrees(1e-10), "{report:?}");

        let c1 = cs(&[vec!["1 + 0.5*sin(x1)"]], &["0"], "0", 0.2);
        let pts = random_points(1, 10, 6);
        let r1 = verify_e_forms(&c1, pts.iter().map(Vec::as_slice), 0.0).unwrap();
        assert_eq!(r1.max_discrepancy, 0.0);

        let c3 = cs(
            &[
                vec!["x2*x3", "sin(x1)", "0.1"],
                vec!["cos(x3)", "x1^2", "x2"],
                vec!["1", "tanh(x1*x2)", "exp(-x3^2)"],
            ],
            &["0", "0", "0"],
            "0",
            0.2,
        );
        let pts = random_points(3, 100, 7);
        let r3 = verify_e_forms(&c3, pts.iter().map(Vec::as_slice), 0.0).unwrap();
        assert!(r3.agrees(1e-10), "{r3:?}");
    }

    fn general_2d() -> CoefficientSet {
        cs(
            &[
                vec!["1 + 0.3*sin(x1*x2)", "0.2*cos(x1)"],
                vec!["0.1*x2", "1 + 0.25*tanh(x1)"],
            ],
            &["0.5*sin(x2)", "-0.3*x1"],
            "0.1*cos(x1)",
            0.15,
        )
    }

    #[test]
    fn diffusivity_is_symmetric_psd() {
        let c = general_2d();
        for x in random_points(2, 200, 8) {
            let s = c.sample(&x, 0.0).unwrap();
            assert_eq!(s.a[0][1], s.a[1][0]);
            assert!(linalg::min_symmetric_eigenvalue(2, &s.a) >= -1e-14);
        }
    }

    #[test]
    fn drift_difference_identity() {
        // v − u = 2ν (∂ₖσⱼₚ) σₖₚ
        let c = general_2d();
        let nu = c.nu();
        for x in random_points(2, 50, 9) {
            let s = c.sample(&x, 0.0).unwrap();
            for j in 0..2 {
                let mut rhs = 0.0;
                for k in 0..2 {
                    for p in 0..2 {
                        rhs += 2.0 * nu * s.dsigma[k][j][p] * s.sigma[k][p];
                    }
                }
                let lhs = s.flow_drift[j] - s.nondiv_drift[j];
                assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn divergence_identities() {
        // div v − div U = ν∂ⱼ[(∂ₖσⱼₚ)σₖₚ] − ν∂ⱼ[(∂ₖσₖₚ)σⱼₚ] = −2νE
        let c = general_2d();
        let n = 2;
        let nu = c.nu();
        let mut gain = Vec::new();
        let mut loss = Vec::new();
        for j in 0..n {
            for k in 0..n {
                for p in 0..n {
                    gain.push((&c.dsigma()[k][j][p] * &c.sigma()[k][p]).differentiate(Var::Space(j)));
                    loss.push((&c.dsigma()[k][k][p] * &c.sigma()[j][p]).differentiate(Var::Space(j)));
                }
            }
        }
        let rhs = nu * &(&field::sum(n, &gain) - &field::sum(n, &loss));
        let div_u = field::sum(n, (0..n).map(|j| &c.velocity_gradient()[j][j]));
        let lhs = c.div_flow_drift() - &div_u;
        for x in random_points(2, 50, 10) {
            let l = lhs.evaluate(&x, 0.0).unwrap();
            let r = rhs.evaluate(&x, 0.0).unwrap();
            let e = c.e_minor().evaluate(&x, 0.0).unwrap();
            assert!((l - r).abs() <= 1e-8, "{l} vs {r}");
            assert!((r + 2.0 * nu * e).abs() <= 1e-8, "{r} vs {}", -2.0 * nu * e);
        }
    }

    #[test]
    fn dsigma_matches_finite_differences() {
        let c = general_2d();
        let h = 1e-5;
        for x in random_points(2, 20, 11) {
            let s = c.sample(&x, 0.0).unwrap();
            for k in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let (sp, sm) = (c.sample(&xp, 0.0).unwrap(), c.sample(&xm, 0.0).unwrap());
                for j in 0..2 {
                    for p in 0..2 {
                        let fd = (sp.sigma[j][p] - sm.sigma[j][p]) / (2.0 * h);
                        assert!((fd - s.dsigma[k][j][p]).abs() <= 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn reaction_is_potential_minus_divergence() {
        let c = general_2d();
        for x in random_points(2, 10, 12) {
            let s = c.sample(&x, 0.0).unwrap();
            assert!((s.reaction - (0.1 * x[0].cos())).abs() < 1e-15);
        }
    }

    #[test]
    fn assembly_errors() {
        let err = CoefficientSet::assemble(&[vec!["1", "0"]], &["0", "0"], "0", 0.1, 2);
        assert!(matches!(err, Err(CoefficientError::DimensionMismatch(_))));
        let err = CoefficientSet::assemble(&[vec!["1"]], &["0"], "0", 0.0, 1);
        assert!(matches!(err, Err(CoefficientError::InvalidNu(_))));
        let err = CoefficientSet::assemble(&[vec!["x2"]], &["0"], "0", 0.1, 1).unwrap_err();
        match err {
            CoefficientError::Parse { field, .. } => assert_eq!(field, "sigma[1][1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sampling_outside_domain_fails() {
        let c = cs(&[vec!["1"]], &["0"], "0", 0.1)
            .with_domain(BoundingBox::cube(1, -1.0, 1.0).unwrap());
        assert!(c.sample(&[0.5], 0.0).is_ok());
        assert!(matches!(
            c.sample(&[1.5], 0.0),
            Err(SampleError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn degenerate_diffusivity_is_reported() {
        let c = cs(&[vec!["x1"]], &["0"], "0", 0.1);
        let pts = [[-1.0], [0.0], [1.0]];
        let min = c
            .min_diffusivity_eigenvalue(pts.iter().map(|p| p.as_slice()), 0.0)
            .unwrap();
        assert_eq!(min, 0.0);
    }
}
