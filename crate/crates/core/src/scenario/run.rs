//! Executes the checks of a scenario and writes their data.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::entropy::ConvexH;
use crate::estimators::{self, Batch, EstimatorError, McField, PsiRealization};
use crate::field::{DomainError, FieldExpr, SpaceTimeField};
use crate::geometry::{BoundingBox, RegularGrid};
use crate::linalg::Vec3;
use crate::oracle::{self, GridField, GridSeries, Scheme};
use crate::studies::{self, DeterminantStudy, PairVerdict};

use super::config::{CheckKind, ScenarioConfig, Setup};
use super::report::{CheckReport, RunReport};
use super::ScenarioError;

/// Frozen constant `C` of the Feynman–Kac tolerance `max(4·SE, C·(dt + Δx²))`.
/// Measured with [`feynman_kac_calibration`] on the heat case (0.054 at
/// dt = 1e-3, Δx = 0.05; 0.068 at Δx = 0.1) and rounded up.
pub const FEYNMAN_KAC_CONSTANT: f64 = 0.07;

/// Halving ratios accepted for a converging determinant pair.
pub const RATIO_RANGE: (f64, f64) = (1.2, 2.8);
pub const MIN_ORDER: f64 = 0.4;

/// Slack on positive increments of the oracle entropy series.
pub const ORACLE_ENTROPY_SLACK: f64 = 1e-8;

/// Refinement levels of the determinant check.
pub const DETERMINANT_LEVELS: usize = 3;

/// The adjoint solution `φ` along paths.
enum Phi {
    /// `c·exp(V(T−t))`
    Trivial { c: f64, v: f64, horizon: f64 },
    Series(GridSeries),
}

impl SpaceTimeField for Phi {
    fn value(&self, x: &[f64], t: f64) -> Result<f64, DomainError> {
        match self {
            Phi::Trivial { c, v, horizon } => Ok(c * (v * (horizon - t)).exp()),
            Phi::Series(s) => s.value(x, t),
        }
    }
}

/// Lazily computed data shared between checks.
struct Context<'a> {
    config: &'a ScenarioConfig,
    setup: Setup,
    out_dir: &'a Path,
    phi: Option<Phi>,
    psi: Option<Batch<PsiRealization>>,
}

fn io_error(path: &Path, source: std::io::Error) -> ScenarioError {
    ScenarioError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), ScenarioError> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    write(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
}

/// Writes a `t,value,se` time series.
fn write_series(path: &Path, times: &[f64], values: &[f64], se: &[f64]) -> Result<(), ScenarioError> {
    write_file(path, |w| {
        writeln!(w, "t,value,se")?;
        for k in 0..times.len() {
            writeln!(w, "{},{},{}", times[k], values[k], se[k])?;
        }
        Ok(())
    })
}

/// A check either fails with a message or aborts the run.
enum CheckError {
    Scenario(ScenarioError),
    Failed(String),
}

impl<E: std::fmt::Display> From<E> for CheckError {
    fn from(e: E) -> Self {
        CheckError::Failed(e.to_string())
    }
}

type CheckResult = Result<(), CheckError>;

impl<'a> Context<'a> {
    fn n(&self) -> usize {
        self.config.dimension
    }

    fn oracle_scheme(&self) -> Scheme {
        self.config.oracle.as_ref().map(|o| o.scheme).unwrap_or(Scheme::Explicit)
    }

    fn oracle_dt(&self) -> f64 {
        self.config.oracle.as_ref().map(|o| o.dt).unwrap_or(self.config.time.dt)
    }

    fn oracle_grid(&self) -> Result<&RegularGrid, CheckError> {
        self.setup
            .oracle_grid
            .as_ref()
            .ok_or_else(|| CheckError::Failed("no oracle grid configured".into()))
    }

    fn queries(&self) -> Result<&RegularGrid, CheckError> {
        self.setup
            .queries
            .as_ref()
            .ok_or_else(|| CheckError::Failed("no query grid configured".into()))
    }

    fn query_points(&self) -> Result<Vec<Vec3>, CheckError> {
        Ok(self.queries()?.nodes().collect())
    }

    fn ensure_phi(&mut self) -> Result<(), CheckError> {
        if self.phi.is_some() {
            return Ok(());
        }
        let horizon = self.config.time.horizon;
        let phi = if self.config.has_trivial_phi(&self.setup.phi_terminal) {
            Phi::Trivial {
                c: self.setup.phi_terminal.as_constant().unwrap_or(1.0),
                v: self.setup.coefficients.potential().as_constant().unwrap_or(0.0),
                horizon,
            }
        } else {
            Phi::Series(self.adjoint_series()?)
        };
        self.phi = Some(phi);
        Ok(())
    }

    fn adjoint_series(&self) -> Result<GridSeries, CheckError> {
        let grid = self.oracle_grid()?;
        let horizon = self.config.time.horizon;
        let terminal = GridField::sample(grid, &self.setup.phi_terminal, horizon)?;
        Ok(oracle::solve_adjoint(
            &self.setup.coefficients,
            &terminal,
            horizon,
            self.oracle_dt(),
            self.oracle_scheme(),
        )?)
    }

    fn ensure_psi(&mut self) -> Result<(), CheckError> {
        if self.psi.is_some() {
            return Ok(());
        }
        let points = self.query_points()?;
        let s = &self.setup;
        let batch = studies::psi_study(
            &s.coefficients,
            &s.label_grid,
            &s.time_grid,
            &points,
            &s.f0,
            &s.rho0,
            self.config.field_realizations(),
            self.config.seed,
        )?;
        if batch.len() < estimators::MIN_REALIZATIONS {
            return Err(CheckError::Failed(format!(
                "only {} realizations survived",
                batch.len()
            )));
        }
        self.write_mc_fields(&batch)?;
        self.psi = Some(batch);
        Ok(())
    }

    fn samples(&self) -> Vec<PsiRealization> {
        self.psi.as_ref().map(|b| b.values().cloned().collect()).unwrap_or_default()
    }

    fn mc_fields(&self, output: usize) -> Result<(McField, McField), CheckError> {
        let points = self.query_points()?;
        let t = self.setup.time_grid.output_times()[output];
        Ok(estimators::estimate_fields(&self.samples(), &points, output, t)?)
    }

    fn write_mc_fields(&self, batch: &Batch<PsiRealization>) -> Result<(), CheckError> {
        let samples: Vec<PsiRealization> = batch.values().cloned().collect();
        let points = self.query_points()?;
        let grid = self.queries()?;
        for (k, &t) in self.setup.time_grid.output_times().iter().enumerate() {
            let (f, rho) = estimators::estimate_fields(&samples, &points, k, t)?;
            let f_se: Vec<f64> = (0..points.len()).map(|i| f.se(i)).collect();
            let r_se: Vec<f64> = (0..points.len()).map(|i| rho.se(i)).collect();
            let masked: Vec<f64> = f.masked.iter().map(|&m| f64::from(u8::from(m))).collect();
            let path = self.out_dir.join(format!("mc_fields_{k}.csv"));
            write_file(&path, |w| {
                oracle::write_grid_csv(
                    w,
                    grid,
                    &[
                        ("f", &f.mean),
                        ("f_se", &f_se),
                        ("rho", &rho.mean),
                        ("rho_se", &r_se),
                        ("masked", &masked),
                    ],
                )
            })
            .map_err(CheckError::Scenario)?;
        }
        Ok(())
    }

    fn csv(&self, report: &mut CheckReport, name: &str) -> std::path::PathBuf {
        report.files.push(name.to_string());
        self.out_dir.join(name)
    }

    fn determinant(&mut self, r: &mut CheckReport) -> CheckResult {
        let s = &self.setup;
        let coarse = crate::sde::TimeGrid::new(
            self.config.time.dt,
            self.config.time.horizon,
            &self.config.time.outputs,
        )?;
        let study = studies::determinant_study(
            &s.coefficients,
            &s.probes,
            &coarse,
            DETERMINANT_LEVELS,
            self.config.field_realizations(),
            self.config.seed,
        )?;
        r.discarded = study.discarded;
        write_determinant_table(&self.csv(r, "determinant_consistency.csv"), &study).map_err(CheckError::Scenario)?;
        let mut pass = true;
        let mut parts = Vec::new();
        for (pair, rms) in [("sde", &study.rms_sde), ("lambda", &study.rms_lambda)] {
            let v = study.verdict(rms, RATIO_RANGE, MIN_ORDER);
            pass &= v.passed();
            match &v {
                PairVerdict::Exact => {
                    r.metric(&format!("exact_{pair}"), 1.0);
                    parts.push(format!("D_direct vs {pair}: algebraically equal"));
                }
                PairVerdict::Converging { ratios, order } | PairVerdict::Failing { ratios, order } => {
                    r.metric(&format!("order_{pair}"), *order);
                    for (k, ratio) in ratios.iter().enumerate() {
                        r.metric(&format!("ratio_{pair}_{k}"), *ratio);
                    }
                    parts.push(format!("D_direct vs {pair}: order {order:.3}"));
                }
            }
        }
        r.set(pass, parts.join("; "));
        Ok(())
    }

    fn martingale(&mut self, r: &mut CheckReport) -> CheckResult {
        self.ensure_phi()?;
        let s = &self.setup;
        let phi = self.phi.as_ref().unwrap();
        let study = studies::martingale_study(
            &s.coefficients,
            &s.probes,
            &s.time_grid,
            phi,
            self.config.realizations,
            self.config.seed,
        )?;
        r.discarded = study.discarded;
        let times = s.time_grid.output_times();
        let mut worst: f64 = 0.0;
        for (p, _) in s.probes.iter().enumerate() {
            let pts: Vec<_> = study.points.iter().skip(p).step_by(s.probes.len()).collect();
            let values: Vec<f64> = pts.iter().map(|q| q.stats.mean).collect();
            let se: Vec<f64> = pts.iter().map(|q| q.stats.se()).collect();
            write_series(&self.csv(r, &format!("martingale_M_probe{p}.csv")), &times, &values, &se)
                .map_err(CheckError::Scenario)?;
            r.metric(&format!("target_probe{p}"), pts[0].target);
        }
        for q in &study.points {
            worst = worst.max(q.z().abs());
        }
        r.metric("max_abs_z", worst);
        r.set(
            worst <= 4.0,
            format!(
                "max |z| = {worst:.3} over {} probes × {} times",
                s.probes.len(),
                times.len()
            ),
        );
        Ok(())
    }

    fn conservation(&mut self, r: &mut CheckReport) -> CheckResult {
        self.ensure_phi()?;
        let s = &self.setup;
        let phi = self.phi.as_ref().unwrap();
        let weights = s
            .h0
            .iter()
            .map(|h0| estimators::label_weights(&s.label_grid, &s.rho0, h0))
            .collect::<Result<Vec<_>, _>>()?;
        let study = studies::conservation_study(
            &s.coefficients,
            &s.label_grid,
            &s.time_grid,
            phi,
            &weights,
            self.config.realizations,
            self.config.seed,
        )?;
        r.discarded = study.discarded;
        let z = study.z();
        let mut worst: f64 = 0.0;
        for (k, row) in study.stats.iter().enumerate() {
            let values: Vec<f64> = row.iter().map(|m| m.mean).collect();
            let se: Vec<f64> = row.iter().map(|m| m.se()).collect();
            write_series(&self.csv(r, &format!("conservation_h{k}.csv")), &study.times, &values, &se)
                .map_err(CheckError::Scenario)?;
            r.metric(&format!("initial_h{k}"), study.initial[k]);
            worst = z[k].iter().fold(worst, |m, v| m.max(v.abs()));
        }
        r.metric("max_abs_z", worst);
        r.set(
            worst <= 4.0,
            format!("max |z| = {worst:.3} over {} observables", study.stats.len()),
        );
        Ok(())
    }

    fn entropy_mc(&mut self, r: &mut CheckReport) -> CheckResult {
        self.ensure_phi()?;
        self.ensure_psi()?;
        let grid = self.queries()?;
        let points = self.query_points()?;
        let weights: Vec<f64> = (0..grid.len()).map(|i| grid.trapezoid_weight(i)).collect();
        let times = self.setup.time_grid.output_times();
        let phi = self.phi.as_ref().unwrap();
        let n = self.n();
        let phi_values = times
            .iter()
            .map(|&t| points.iter().map(|x| phi.value(&x[..n], t)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let samples = self.samples();
        r.discarded = self.psi.as_ref().map(|b| b.discarded.len()).unwrap_or(0);
        let h = self.config.data.entropy;
        let report = estimators::entropy_decay_check(&samples, &times, &phi_values, &weights, h, self.config.seed)?;
        let control =
            estimators::entropy_decay_check(&samples, &times, &phi_values, &weights, ConvexH::NegSquare, self.config.seed)?;
        let (lower, upper) = (report.lower.clone().unwrap(), report.upper.clone().unwrap());
        let se: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| (u - l) / (2.0 * 1.96)).collect();
        write_series(&self.csv(r, "entropy_mc.csv"), &times, &report.values, &se).map_err(CheckError::Scenario)?;
        r.metric("violations", report.violations as f64);
        r.metric("control_violations", control.violations as f64);
        r.metric("initial", report.values[0]);
        r.metric("final", *report.values.last().unwrap());
        r.set(
            report.is_nonincreasing(),
            format!(
                "H = {}: {} significant increases in {} steps (control H = neg_square: {})",
                h.name(),
                report.violations,
                report.increments.len(),
                control.violations
            ),
        );
        Ok(())
    }

    fn entropy_oracle(&mut self, r: &mut CheckReport) -> CheckResult {
        let grid = self.oracle_grid()?.clone();
        let s = &self.setup;
        let (horizon, dt, scheme) = (self.config.time.horizon, self.oracle_dt(), self.oracle_scheme());
        let f = oracle::solve_forward(&s.coefficients, &GridField::sample(&grid, &s.f0, 0.0)?, horizon, dt, scheme)?;
        let rho =
            oracle::solve_forward_positive(&s.coefficients, &GridField::sample(&grid, &s.rho0, 0.0)?, horizon, dt, scheme)?;
        let phi = self.adjoint_series()?;
        let h = self.config.data.entropy;
        let g = oracle::entropy_series(&f, &rho, &phi, h, ORACLE_ENTROPY_SLACK)?;
        let control = oracle::entropy_series(&f, &rho, &phi, ConvexH::NegSquare, ORACLE_ENTROPY_SLACK)?;
        let zeros = vec![0.0; g.times.len()];
        write_series(&self.csv(r, "entropy_oracle.csv"), &g.times, &g.values, &zeros).map_err(CheckError::Scenario)?;
        for (name, series) in [("oracle_f.csv", &f), ("oracle_rho.csv", &rho)] {
            let path = self.csv(r, name);
            let last = series.last();
            write_file(&path, |w| last.write_csv(w)).map_err(CheckError::Scenario)?;
        }
        r.metric("max_increment", g.max_increment);
        r.metric("violations", g.violations as f64);
        r.metric("control_violations", control.violations as f64);
        let pass = g.is_nonincreasing() && !control.is_nonincreasing();
        r.set(
            pass,
            format!(
                "H = {}: max increment {:.3e} over {} steps; control H = neg_square {}",
                h.name(),
                g.max_increment,
                g.increments.len(),
                if control.is_nonincreasing() { "did not fail" } else { "fails as expected" }
            ),
        );
        Ok(())
    }

    fn jensen(&mut self, r: &mut CheckReport) -> CheckResult {
        self.ensure_psi()?;
        let h = self.config.data.entropy;
        let points = self.query_points()?;
        let times = self.setup.time_grid.output_times();
        let samples = self.samples();
        r.discarded = self.psi.as_ref().map(|b| b.discarded.len()).unwrap_or(0);
        let n = self.n();
        let (mut checked, mut violations, mut skipped) = (0usize, 0usize, 0usize);
        let path = self.csv(r, "jensen.csv");
        let mut rows = Vec::new();
        for (k, &t) in times.iter().enumerate() {
            for (i, x) in points.iter().enumerate() {
                let pairs: Option<Vec<[f64; 2]>> = samples.iter().map(|s| s.values[k][i]).collect();
                let Some(pairs) = pairs else {
                    skipped += 1;
                    continue;
                };
                let pf: Vec<f64> = pairs.iter().map(|p| p[0]).collect();
                let pr: Vec<f64> = pairs.iter().map(|p| p[1]).collect();
                let v = estimators::jensen_check(&pr, &pf, h)?;
                checked += 1;
                violations += usize::from(!v.holds);
                let coords: Vec<String> = x[..n].iter().map(|c| c.to_string()).collect();
                rows.push(format!("{t},{},{},{}", coords.join(","), v.lhs, v.rhs));
            }
        }
        let header: Vec<String> = (1..=n).map(|a| format!("x{a}")).collect();
        write_file(&path, |w| {
            writeln!(w, "t,{},lhs,rhs", header.join(","))?;
            for row in &rows {
                writeln!(w, "{row}")?;
            }
            Ok(())
        })
        .map_err(CheckError::Scenario)?;
        r.metric("checked", checked as f64);
        r.metric("violations", violations as f64);
        r.metric("masked", skipped as f64);
        r.set(
            violations == 0 && checked > 0,
            format!("H = {}: {violations} violations in {checked} points ({skipped} masked)", h.name()),
        );
        Ok(())
    }

    fn feynman_kac(&mut self, r: &mut CheckReport) -> CheckResult {
        self.ensure_psi()?;
        r.discarded = self.psi.as_ref().map(|b| b.discarded.len()).unwrap_or(0);
        let last = self.setup.time_grid.outputs().len() - 1;
        let horizon = self.config.time.horizon;
        let (f, _) = self.mc_fields(last)?;
        let grid = self.oracle_grid()?.clone();
        let s = &self.setup;
        let reference = oracle::solve_forward(
            &s.coefficients,
            &GridField::sample(&grid, &s.f0, 0.0)?,
            horizon,
            self.oracle_dt(),
            self.oracle_scheme(),
        )?
        .last();
        let n = self.n();
        let queries = self.queries()?;
        let ref_values: Vec<f64> = f.points.iter().map(|x| reference.interpolate(&x[..n])).collect();
        let weights: Vec<f64> = (0..queries.len()).map(|i| queries.trapezoid_weight(i)).collect();
        let l2 = estimators::masked_l2(&f, &ref_values, &weights);
        let dx = grid.spacing()[..n].iter().copied().fold(0.0, f64::max);
        let bias = FEYNMAN_KAC_CONSTANT * (self.config.time.dt + dx * dx);
        let tol = (4.0 * l2.standard_error).max(bias);
        let mut pass = l2.distance <= tol && l2.used > 0;
        let mut detail = format!(
            "masked L2 distance {:.3e} vs tolerance {tol:.3e} ({} of {} points)",
            l2.distance,
            l2.used,
            f.points.len()
        );
        r.metric("l2_distance", l2.distance);
        r.metric("l2_standard_error", l2.standard_error);
        r.metric("tolerance", tol);
        r.metric("masked", f.masked_count() as f64);

        let mut columns: Vec<(&str, Vec<f64>)> = vec![
            ("f_mc", f.mean.clone()),
            ("f_se", (0..f.points.len()).map(|i| f.se(i)).collect()),
            ("f_oracle", ref_values.clone()),
        ];
        if let Some(exact) = &s.f_exact {
            let exact_values = f
                .points
                .iter()
                .map(|x| exact.value(&x[..n], horizon))
                .collect::<Result<Vec<_>, _>>()?;
            let unmasked = f.masked.iter().filter(|&&m| !m).count();
            let within = (0..f.points.len())
                .filter(|&i| !f.masked[i] && (f.mean[i] - exact_values[i]).abs() <= 4.0 * f.se(i))
                .count();
            let fraction = within as f64 / unmasked.max(1) as f64;
            r.metric("exact_fraction_within_4se", fraction);
            pass &= fraction >= 0.95;
            detail.push_str(&format!("; {:.1}% of points within 4 SE of f_exact", 100.0 * fraction));
            columns.push(("f_exact", exact_values));
        }
        let path = self.csv(r, "feynman_kac.csv");
        let cols: Vec<(&str, &[f64])> = columns.iter().map(|(n, v)| (*n, v.as_slice())).collect();
        write_file(&path, |w| oracle::write_grid_csv(w, queries, &cols)).map_err(CheckError::Scenario)?;
        r.set(pass, detail);
        Ok(())
    }
}

fn write_determinant_table(path: &Path, study: &DeterminantStudy) -> Result<(), ScenarioError> {
    write_file(path, |w| {
        writeln!(w, "dt,rms_sde,rms_lambda")?;
        for k in 0..study.dts.len() {
            writeln!(w, "{},{},{}", study.dts[k], study.rms_sde[k], study.rms_lambda[k])?;
        }
        Ok(())
    })
}

/// Runs every enabled check of `config` on the current rayon pool, writing
/// CSV data and `report.toml` into `out_dir`. The report is rewritten after
/// each check so that partial results survive a crash.
pub fn run(config: &ScenarioConfig, out_dir: &Path) -> Result<RunReport, ScenarioError> {
    let start = Instant::now();
    let setup = config.setup()?;
    fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let mut report = RunReport {
        scenario: config.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        realizations: config.realizations,
        field_realizations: config.field_realizations(),
        passed: false,
        threads: Some(rayon::current_num_threads()),
        elapsed_seconds: None,
        checks: Vec::new(),
    };
    let mut ctx = Context {
        config,
        setup,
        out_dir,
        phi: None,
        psi: None,
    };
    let report_path = out_dir.join("report.toml");
    for kind in config.enabled_checks() {
        let check_start = Instant::now();
        let mut r = CheckReport::new(kind);
        let outcome = match kind {
            CheckKind::DeterminantConsistency => ctx.determinant(&mut r),
            CheckKind::MartingaleM => ctx.martingale(&mut r),
            CheckKind::Conservation => ctx.conservation(&mut r),
            CheckKind::EntropyMc => ctx.entropy_mc(&mut r),
            CheckKind::EntropyOracle => ctx.entropy_oracle(&mut r),
            CheckKind::Jensen => ctx.jensen(&mut r),
            CheckKind::FeynmanKacVsOracle => ctx.feynman_kac(&mut r),
        };
        match outcome {
            Ok(()) => {}
            Err(CheckError::Failed(message)) => r.set(false, format!("error: {message}")),
            Err(CheckError::Scenario(e)) => return Err(e),
        }
        r.elapsed_seconds = Some(check_start.elapsed().as_secs_f64());
        log::info!("{}: {:?} {}", kind.name(), r.verdict, r.detail);
        report.checks.push(r);
        report.passed = report.failed_checks().is_empty();
        write_file(&report_path, |w| w.write_all(report.to_toml().as_bytes()))?;
    }
    report.elapsed_seconds = Some(start.elapsed().as_secs_f64());
    write_file(&report_path, |w| w.write_all(report.to_toml().as_bytes()))?;
    Ok(report)
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub study: DeterminantStudy,
    /// `None` when the pair agrees exactly at every level.
    pub order_sde: Option<f64>,
    pub order_lambda: Option<f64>,
}

impl ConvergenceTable {
    /// The smallest fitted order over the pairs that are not exact.
    pub fn order(&self) -> Option<f64> {
        [self.order_sde, self.order_lambda].into_iter().flatten().reduce(f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "dt,rms_sde,rms_lambda")?;
        let s = &self.study;
        for k in 0..s.dts.len() {
            writeln!(w, "{},{},{}", s.dts[k], s.rms_sde[k], s.rms_lambda[k])?;
        }
        Ok(())
    }
}

/// Determinant-consistency errors at `levels` step sizes, halving from the
/// configured `dt`, with the fitted strong order of each tracker pair.
pub fn convergence_study(config: &ScenarioConfig, levels: usize) -> Result<ConvergenceTable, ScenarioError> {
    if levels < 2 {
        return Err(ScenarioError::Precondition(format!(
            "a convergence study needs at least 2 levels, got {levels}"
        )));
    }
    let setup = config.setup()?;
    let coarse = crate::sde::TimeGrid::new(config.time.dt, config.time.horizon, &config.time.outputs)
        .map_err(|e| ScenarioError::Config {
            field: Some("time".into()),
            message: e.to_string(),
        })?;
    let study = studies::determinant_study(
        &setup.coefficients,
        &setup.probes,
        &coarse,
        levels,
        config.field_realizations(),
        config.seed,
    )
    .map_err(|e: EstimatorError| ScenarioError::Study(e.to_string()))?;
    let order = |rms: &[f64]| {
        if rms.iter().all(|&e| e <= studies::EXACT_AGREEMENT) {
            None
        } else {
            Some(study.fitted_order(rms))
        }
    };
    Ok(ConvergenceTable {
        order_sde: order(&study.rms_sde),
        order_lambda: order(&study.rms_lambda),
        study,
    })
}

/// `‖f_oracle − f_exact‖₂ / (dt + Δx²)` on the heat case
/// (`σ = 1`, `ν = 0.1`, Gaussian data of variance 1/4, `T = 0.5`) over the
/// query segment `[-2, 2]`. [`FEYNMAN_KAC_CONSTANT`] freezes this ratio,
/// rounded up, for the discretization of the Feynman–Kac checks.
pub fn feynman_kac_calibration(dt: f64, dx: f64) -> Result<f64, String> {
    let (nu, horizon, s0) = (0.1, 0.5, 0.5);
    let cs = crate::coefficients::CoefficientSet::assemble(&[vec!["1"]], &["0"], "0", nu, 1)
        .map_err(|e| e.to_string())?;
    let grid = RegularGrid::with_spacing(&BoundingBox::cube(1, -6.0, 6.0).unwrap(), dx).map_err(|e| e.to_string())?;
    let f0 = FieldExpr::parse("exp(-x1^2/0.5)", 1).unwrap();
    let f = oracle::solve_forward(
        &cs,
        &GridField::sample(&grid, &f0, 0.0).map_err(|e| e.to_string())?,
        horizon,
        dt,
        Scheme::CrankNicolson,
    )
    .map_err(|e| e.to_string())?
    .last();
    let var = s0 * s0 + 2.0 * nu * horizon;
    let q = RegularGrid::with_spacing(&BoundingBox::cube(1, -2.0, 2.0).unwrap(), 0.1).unwrap();
    let d2: f64 = (0..q.len())
        .map(|i| {
            let x = q.node(i)[0];
            let exact = s0 / var.sqrt() * (-x * x / (2.0 * var)).exp();
            q.trapezoid_weight(i) * (f.interpolate(&[x]) - exact).powi(2)
        })
        .sum();
    Ok(d2.sqrt() / (dt + dx * dx))
}
