//! Scenario configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::CoefficientSet;
use crate::entropy::ConvexH;
use crate::field::{FieldExpr, MAX_DIM};
use crate::geometry::{BoundingBox, RegularGrid};
use crate::linalg::{self, Vec3};
use crate::oracle::Scheme;
use crate::sde::{self, TimeGrid};

use super::ScenarioError;

/// The verifications a scenario can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CheckKind {
    #[serde(rename = "determinant_consistency")]
    DeterminantConsistency,
    #[serde(rename = "martingale_M")]
    MartingaleM,
    #[serde(rename = "conservation")]
    Conservation,
    #[serde(rename = "entropy_mc")]
    EntropyMc,
    #[serde(rename = "entropy_oracle")]
    EntropyOracle,
    #[serde(rename = "jensen")]
    Jensen,
    #[serde(rename = "feynman_kac_vs_oracle")]
    FeynmanKacVsOracle,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::DeterminantConsistency,
        CheckKind::MartingaleM,
        CheckKind::Conservation,
        CheckKind::EntropyMc,
        CheckKind::EntropyOracle,
        CheckKind::Jensen,
        CheckKind::FeynmanKacVsOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::DeterminantConsistency => "determinant_consistency",
            CheckKind::MartingaleM => "martingale_M",
            CheckKind::Conservation => "conservation",
            CheckKind::EntropyMc => "entropy_mc",
            CheckKind::EntropyOracle => "entropy_oracle",
            CheckKind::Jensen => "jensen",
            CheckKind::FeynmanKacVsOracle => "feynman_kac_vs_oracle",
        }
    }

    /// Checks built on Monte Carlo averages.
    pub fn is_statistical(self) -> bool {
        self != CheckKind::EntropyOracle
    }

    /// Checks that need `ψ` at the query points.
    pub fn needs_fields(self) -> bool {
        matches!(
            self,
            CheckKind::EntropyMc | CheckKind::Jensen | CheckKind::FeynmanKacVsOracle
        )
    }

    pub fn needs_oracle(self) -> bool {
        matches!(self, CheckKind::EntropyOracle | CheckKind::FeynmanKacVsOracle)
    }
}

/// One expression or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    /// `n×n` matrix of expressions, row `j` holding `σⱼ₁ … σⱼₙ`.
    pub sigma: Vec<Vec<String>>,
    pub velocity: Vec<String>,
    pub potential: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub f0: String,
    pub rho0: String,
    /// Observables of the integral of motion; each gets its own series.
    pub h0: OneOrMany,
    pub phi_terminal: String,
    pub entropy: ConvexH,
    /// Closed-form `f(x, t)`, compared pointwise against the MC field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_exact: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub label_spacing: f64,
    /// Labels tracked individually by the determinant and martingale checks.
    /// Defaults to the box centre and the two quarter points of its diagonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub horizon: f64,
    pub dt: f64,
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub spacing: f64,
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Oracle box; defaults to the label box padded by the path spread.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
}

fn default_scheme() -> Scheme {
    Scheme::Explicit
}

/// A complete scenario: coefficients, data, discretization and checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub dimension: usize,
    pub nu: f64,
    pub seed: u64,
    /// Realizations for scalar functionals (martingale, conservation).
    pub realizations: usize,
    /// Realizations for field estimates and the determinant study; defaults
    /// to a tenth of `realizations` (at least 100).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_realizations: Option<usize>,
    pub checks: Vec<CheckKind>,
    pub coefficients: CoefficientsSection,
    pub data: DataSection,
    pub grid: GridSection,
    pub time: TimeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<QuerySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
}

/// Everything a run needs, parsed and validated.
#[derive(Debug, Clone)]
pub struct Setup {
    /// Coefficients restricted to the padded label box.
    pub coefficients: CoefficientSet,
    pub label_grid: RegularGrid,
    /// Output times are `0` followed by the configured outputs.
    pub time_grid: TimeGrid,
    pub probes: Vec<Vec3>,
    pub queries: Option<RegularGrid>,
    pub oracle_grid: Option<RegularGrid>,
    pub f0: FieldExpr,
    pub rho0: FieldExpr,
    pub h0: Vec<FieldExpr>,
    pub phi_terminal: FieldExpr,
    pub f_exact: Option<FieldExpr>,
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Config {
        field: Some(field.to_string()),
        message: message.into(),
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let config: Self = toml::from_str(text).map_err(|e| ScenarioError::Config {
            field: None,
            message: e.to_string().trim_end().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ScenarioError::Config { field, message } => ScenarioError::Config {
                field,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    /// Canonical text: the configuration re-serialized with defaults made
    /// explicit and keys in declaration order.
    pub fn canonical_text(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    /// Stable 64-bit hash of [`Self::canonical_text`], as 16 hex digits.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        format!("{:016x}", u64::from_be_bytes(bytes))
    }

    pub fn field_realizations(&self) -> usize {
        self.field_realizations.unwrap_or((self.realizations / 10).max(100))
    }

    pub fn is_enabled(&self, check: CheckKind) -> bool {
        self.checks.contains(&check)
    }

    /// Enabled checks in configuration order without repeats.
    pub fn enabled_checks(&self) -> Vec<CheckKind> {
        let mut seen = Vec::new();
        for &c in &self.checks {
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        seen
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.setup().map(|_| ())
    }

    /// Parses every expression and builds the grids.
    pub fn setup(&self) -> Result<Setup, ScenarioError> {
        let n = self.dimension;
        if n == 0 || n > MAX_DIM {
            return Err(invalid("dimension", format!("must be between 1 and {MAX_DIM}, got {n}")));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(invalid("nu", format!("must be positive, got {}", self.nu)));
        }
        let t = &self.time;
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return Err(invalid("time.dt", format!("must be positive, got {}", t.dt)));
        }
        if !(t.horizon > 0.0 && t.horizon.is_finite()) {
            return Err(invalid("time.horizon", format!("must be positive, got {}", t.horizon)));
        }
        if t.outputs.is_empty() || t.outputs.iter().any(|&s| !(s > 0.0 && s <= t.horizon)) {
            return Err(invalid("time.outputs", "need at least one output time in (0, horizon]"));
        }
        if self.checks.is_empty() {
            return Err(invalid("checks", "no checks enabled"));
        }
        let statistical = self.checks.iter().any(|c| c.is_statistical());
        if statistical && self.realizations < crate::estimators::MIN_REALIZATIONS {
            return Err(invalid(
                "realizations",
                format!(
                    "statistical checks need at least {} realizations, got {}",
                    crate::estimators::MIN_REALIZATIONS,
                    self.realizations
                ),
            ));
        }
        if statistical && self.field_realizations() < crate::estimators::MIN_REALIZATIONS {
            return Err(invalid(
                "field_realizations",
                format!("must be at least {}", crate::estimators::MIN_REALIZATIONS),
            ));
        }

        let c = &self.coefficients;
        if c.sigma.len() != n || c.sigma.iter().any(|row| row.len() != n) {
            return Err(invalid("coefficients.sigma", format!("must be a {n}×{n} matrix")));
        }
        if c.velocity.len() != n {
            return Err(invalid("coefficients.velocity", format!("must have {n} components")));
        }
        let parse = |field: String, src: &str| {
            FieldExpr::parse(src, n).map_err(|e| invalid(&field, format!("`{src}`: {e}")))
        };
        let mut sigma = Vec::with_capacity(n);
        for (j, row) in c.sigma.iter().enumerate() {
            let mut parsed = Vec::with_capacity(n);
            for (p, src) in row.iter().enumerate() {
                parsed.push(parse(format!("coefficients.sigma[{j}][{p}]"), src)?);
            }
            sigma.push(parsed);
        }
        let velocity = c
            .velocity
            .iter()
            .enumerate()
            .map(|(j, src)| parse(format!("coefficients.velocity[{j}]"), src))
            .collect::<Result<Vec<_>, _>>()?;
        let potential = parse("coefficients.potential".into(), &c.potential)?;
        let d = &self.data;
        let f0 = parse("data.f0".into(), &d.f0)?;
        let rho0 = parse("data.rho0".into(), &d.rho0)?;
        let h0 = d
            .h0
            .to_vec()
            .iter()
            .enumerate()
            .map(|(k, src)| parse(format!("data.h0[{k}]"), src))
            .collect::<Result<Vec<_>, _>>()?;
        if h0.is_empty() {
            return Err(invalid("data.h0", "need at least one observable"));
        }
        let phi_terminal = parse("data.phi_terminal".into(), &d.phi_terminal)?;
        let f_exact = d
            .f_exact
            .as_deref()
            .map(|src| parse("data.f_exact".into(), src))
            .transpose()?;

        let boxed = |field: &str, lo: &[f64], hi: &[f64]| {
            if lo.len() != n || hi.len() != n {
                return Err(invalid(field, format!("bounds must have {n} components")));
            }
            BoundingBox::new(lo.to_vec(), hi.to_vec()).map_err(|e| invalid(field, e.to_string()))
        };
        let gridded = |field: &str, b: &BoundingBox, h: f64| {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid(field, format!("spacing must be positive, got {h}")));
            }
            RegularGrid::with_spacing(b, h).map_err(|e| invalid(field, e.to_string()))
        };
        let label_box = boxed("grid", &self.grid.lo, &self.grid.hi)?;
        let label_grid = gridded("grid.label_spacing", &label_box, self.grid.label_spacing)?;
        let domain = label_box.padded(sde::domain_padding(self.nu, t.horizon));
        let coefficients = CoefficientSet::from_fields(sigma, velocity, potential, self.nu)
            .map_err(|e| invalid("coefficients", e.to_string()))?
            .with_domain(domain.clone());

        let probes = match &self.grid.probes {
            Some(list) => {
                let mut probes = Vec::with_capacity(list.len());
                for (k, p) in list.iter().enumerate() {
                    if p.len() != n || !label_box.contains(p) {
                        return Err(invalid(
                            &format!("grid.probes[{k}]"),
                            format!("must be a point of the {n}-dimensional label box"),
                        ));
                    }
                    probes.push(linalg::vec_from_slice(p));
                }
                if probes.is_empty() {
                    return Err(invalid("grid.probes", "need at least one probe"));
                }
                probes
            }
            None => [0.25, 0.5, 0.75]
                .iter()
                .map(|&s| {
                    let p: Vec<f64> = (0..n)
                        .map(|a| label_box.lo()[a] + s * (label_box.hi()[a] - label_box.lo()[a]))
                        .collect();
                    linalg::vec_from_slice(&p)
                })
                .collect(),
        };

        let mut outputs = vec![0.0];
        outputs.extend_from_slice(&t.outputs);
        let time_grid =
            TimeGrid::new(t.dt, t.horizon, &outputs).map_err(|e| invalid("time", e.to_string()))?;

        let queries = match &self.queries {
            Some(q) => {
                let b = boxed("queries", &q.lo, &q.hi)?;
                Some(gridded("queries.spacing", &b, q.spacing)?)
            }
            None => None,
        };
        if queries.is_none() {
            if let Some(c) = self.checks.iter().find(|c| c.needs_fields()) {
                return Err(invalid("queries", format!("required by the {} check", c.name())));
            }
        }

        let needs_oracle = self.checks.iter().any(|c| c.needs_oracle())
            || (self.needs_phi() && !self.has_trivial_phi(&phi_terminal));
        let oracle_grid = match &self.oracle {
            Some(o) => {
                if !(o.dt > 0.0 && o.dt.is_finite()) {
                    return Err(invalid("oracle.dt", format!("must be positive, got {}", o.dt)));
                }
                let b = match (&o.lo, &o.hi) {
                    (Some(lo), Some(hi)) => boxed("oracle", lo, hi)?,
                    (None, None) => domain.clone(),
                    _ => return Err(invalid("oracle", "give both `lo` and `hi` or neither")),
                };
                Some(gridded("oracle.spacing", &b, o.spacing)?)
            }
            None if needs_oracle => {
                return Err(invalid("oracle", "required by the enabled checks or the terminal φ"));
            }
            None => None,
        };
        if oracle_grid.is_some() && needs_oracle && n > 2 {
            return Err(invalid("dimension", "the finite-difference oracle supports dimensions 1 and 2"));
        }

        Ok(Setup {
            coefficients,
            label_grid,
            time_grid,
            probes,
            queries,
            oracle_grid,
            f0,
            rho0,
            h0,
            phi_terminal,
            f_exact,
        })
    }

    fn needs_phi(&self) -> bool {
        self.checks.iter().any(|c| {
            matches!(
                c,
                CheckKind::MartingaleM | CheckKind::Conservation | CheckKind::EntropyMc
            )
        })
    }

    /// `φ(x,t) = c·exp(V(T−t))` solves the adjoint problem when both the
    /// terminal data and the potential are constant.
    pub(crate) fn has_trivial_phi(&self, phi_terminal: &FieldExpr) -> bool {
        phi_terminal.is_constant()
            && FieldExpr::parse(&self.coefficients.potential, self.dimension)
                .map(|v| v.is_constant())
                .unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
name = "minimal"
dimension = 1
nu = 0.1
seed = 3
realizations = 200
checks = ["martingale_M"]

[coefficients]
sigma = [["1 + 0.5*sin(x1)"]]
velocity = ["0"]
potential = "0"

[data]
f0 = "exp(-x1^2)"
rho0 = "exp(-x1^2)"
h0 = "1"
phi_terminal = "1"
entropy = "square"

[grid]
lo = [-2.0]
hi = [2.0]
label_spacing = 0.25

[time]
horizon = 0.5
dt = 0.01
outputs = [0.25, 0.5]
"#;

    fn config_error_field(text: &str) -> Option<String> {
        match ScenarioConfig::from_toml(text) {
            Err(ScenarioError::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_parses() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.field_realizations(), 100);
        let s = c.setup().unwrap();
        assert_eq!(s.time_grid.output_times(), vec![0.0, 0.25, 0.5]);
        assert_eq!(s.probes.len(), 3);
        assert_eq!(s.probes[1][0], 0.0);
        assert!(s.oracle_grid.is_none());
    }

    #[test]
    fn missing_nu_names_the_field() {
        let text = MINIMAL.replace("nu = 0.1\n", "");
        match ScenarioConfig::from_toml(&text) {
            Err(e @ ScenarioError::Config { .. }) => {
                assert!(e.to_string().contains("`nu`"), "{e}");
                assert_eq!(e.exit_code(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("seed = 3", "seed = 3\nsede = 4");
        let e = ScenarioConfig::from_toml(&text).unwrap_err();
        assert!(e.to_string().contains("sede"), "{e}");
        let text = MINIMAL.replace("potential = \"0\"", "potential = \"0\"\npotentail = \"1\"");
        assert!(ScenarioConfig::from_toml(&text).is_err());
    }

    #[test]
    fn invalid_values_name_their_field() {
        assert_eq!(config_error_field(&MINIMAL.replace("nu = 0.1", "nu = -1")), Some("nu".into()));
        assert_eq!(
            config_error_field(&MINIMAL.replace("dt = 0.01", "dt = 0")),
            Some("time.dt".into())
        );
        assert_eq!(
            config_error_field(&MINIMAL.replace("realizations = 200", "realizations = 20")),
            Some("realizations".into())
        );
        assert_eq!(
            config_error_field(&MINIMAL.replace("sin(x1)", "sin(x2)")),
            Some("coefficients.sigma[0][0]".into())
        );
        assert_eq!(
            config_error_field(&MINIMAL.replace("outputs = [0.25, 0.5]", "outputs = [0.255]")),
            Some("time".into())
        );
        assert_eq!(
            config_error_field(&MINIMAL.replace("[\"martingale_M\"]", "[\"jensen\"]")),
            Some("queries".into())
        );
        assert_eq!(
            config_error_field(&MINIMAL.replace("phi_terminal = \"1\"", "phi_terminal = \"1 + x1^2\"")),
            Some("oracle".into())
        );
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ScenarioConfig::from_toml(MINIMAL).unwrap();
        let reformatted = MINIMAL.replace("nu = 0.1", "nu    =   0.10");
        let b = ScenarioConfig::from_toml(&reformatted).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let mut c = a.clone();
        c.seed += 1;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn canonical_text_round_trips() {
        let a = ScenarioConfig::from_toml(MINIMAL).unwrap();
        let b = ScenarioConfig::from_toml(&a.canonical_text()).unwrap();
        assert_eq!(a, b);
    }
}
