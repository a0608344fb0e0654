//! Monte Carlo expectations, conserved functionals and entropy checks.
//!
//! Labels within one realization share their Brownian path; expectations are
//! taken over realizations only. Every reduction runs over realizations in
//! index order, so results do not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::entropy::{ConvexH, EntropyReport};
use crate::field::{DomainError, SpaceTimeField};
use crate::flow::{FlowChart, FlowError};
use crate::geometry::RegularGrid;
use crate::linalg::Vec3;
use crate::sde::{martingale_m, Ensemble, SdeError};

/// Fewest realizations accepted by the statistical estimators.
pub const MIN_REALIZATIONS: usize = 100;
/// Supports must vanish this many cells away from the label-box boundary.
pub const SUPPORT_MARGIN_CELLS: usize = 4;
/// Relative size below which `ρ₀h₀` counts as vanished.
pub const SUPPORT_TOLERANCE: f64 = 1e-6;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Floating-point slack of the empirical Jensen inequality, relative to
/// `max(1, |rhs|)`.
pub const JENSEN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("{got} realizations available, at least {need} required")]
    InsufficientRealizations { got: usize, need: usize },
    #[error("support escape: {0}")]
    SupportEscape(String),
    #[error("density sample {index} is not positive")]
    NonPositiveDensity { index: usize },
    #[error("mean density at point {point} is within 4 standard errors of zero")]
    SignalTooNoisy { point: usize },
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

impl MeanSe {
    /// Two-pass moments in slice order.
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                variance: f64::NAN,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let variance = if count > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Self { mean, variance, count }
    }

    pub fn se(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }

    /// `(mean − target) / SE`; zero when the deviation is at rounding level
    /// (relative `1e-12`), infinite when only the SE vanishes.
    pub fn z(&self, target: f64) -> f64 {
        let d = self.mean - target;
        let se = self.se();
        if d.abs() <= 1e-12 * target.abs().max(1.0) {
            0.0
        } else if se > 0.0 {
            d / se
        } else {
            f64::INFINITY * d.signum()
        }
    }
}

/// Outcomes of a set of realizations, in realization order.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub outcomes: Vec<(u64, T)>,
    /// Realizations dropped because a path failed.
    pub discarded: Vec<(u64, SdeError)>,
}

impl<T> Batch<T> {
    pub fn requested(&self) -> usize {
        self.outcomes.len() + self.discarded.len()
    }

    pub fn discard_fraction(&self) -> f64 {
        self.discarded.len() as f64 / self.requested().max(1) as f64
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.outcomes.iter().map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// Runs `f` for realizations `0..count` on the current rayon pool. Path
/// failures discard the realization; any other error aborts the batch (the
/// lowest failing realization is reported).
pub fn run_realizations<T, F>(count: usize, f: F) -> Result<Batch<T>, EstimatorError>
where
    T: Send,
    F: Fn(u64) -> Result<T, EstimatorError> + Sync + Send,
{
    let results: Vec<(u64, Result<T, EstimatorError>)> = (0..count as u64)
        .into_par_iter()
        .map(|r| (r, f(r)))
        .collect();
    let mut batch = Batch {
        outcomes: Vec::with_capacity(count),
        discarded: Vec::new(),
    };
    for (r, res) in results {
        match res {
            Ok(v) => batch.outcomes.push((r, v)),
            Err(EstimatorError::Sde(e)) if e.is_path_failure() => batch.discarded.push((r, e)),
            Err(e) => return Err(e),
        }
    }
    if !batch.discarded.is_empty() {
        log::warn!(
            "discarded {} of {} realizations ({}), first: {}",
            batch.discarded.len(),
            count,
            format_fraction(batch.discard_fraction()),
            batch.discarded[0].1
        );
    }
    Ok(batch)
}

fn format_fraction(f: f64) -> String {
    format!("{:.3}%", 100.0 * f)
}

/// Per-point sample statistics of a field estimate at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct McField {
    pub t: f64,
    pub points: Vec<Vec3>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub count: Vec<usize>,
    /// Points where at least one realization could not be inverted.
    pub masked: Vec<bool>,
}

impl McField {
    pub fn se(&self, i: usize) -> f64 {
        (self.variance[i] / self.count[i] as f64).sqrt()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }
}

/// `(ψ_f, ψ_ρ)` at every query point and output time of one realization;
/// `None` where the inversion failed.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiRealization {
    /// `values[output][point]`
    pub values: Vec<Vec<Option<[f64; 2]>>>,
}

/// Evaluates `ψ_{f0}` and `ψ_{ρ0}` at `points` for every chart.
pub fn psi_realization(
    charts: &[FlowChart],
    points: &[Vec3],
    f0: &dyn SpaceTimeField,
    rho0: &dyn SpaceTimeField,
) -> Result<PsiRealization, EstimatorError> {
    let mut values = Vec::with_capacity(charts.len());
    for chart in charts {
        let n = chart.dim();
        let mut row = Vec::with_capacity(points.len());
        let mut hint: Option<Vec3> = None;
        for x in points {
            match chart.invert_near(&x[..n], hint.as_ref()) {
                Ok(a) => {
                    hint = Some(a);
                    row.push(Some([chart.psi_at_label(f0, &a)?, chart.psi_at_label(rho0, &a)?]));
                }
                Err(FlowError::OutOfChart { .. } | FlowError::NoConvergence { .. }) => row.push(None),
                Err(e) => return Err(e.into()),
            }
        }
        values.push(row);
    }
    Ok(PsiRealization { values })
}

/// Means and standard errors of `ψ_{f0}` and `ψ_{ρ0}` at output `output`.
pub fn estimate_fields(
    samples: &[PsiRealization],
    points: &[Vec3],
    output: usize,
    t: f64,
) -> Result<(McField, McField), EstimatorError> {
    if samples.len() < MIN_REALIZATIONS {
        return Err(EstimatorError::InsufficientRealizations {
            got: samples.len(),
            need: MIN_REALIZATIONS,
        });
    }
    let mut fields = [0, 1].map(|_| McField {
        t,
        points: points.to_vec(),
        mean: Vec::with_capacity(points.len()),
        variance: Vec::with_capacity(points.len()),
        count: Vec::with_capacity(points.len()),
        masked: Vec::with_capacity(points.len()),
    });
    for i in 0..points.len() {
        for (c, field) in fields.iter_mut().enumerate() {
            let vals: Vec<f64> = samples
                .iter()
                .filter_map(|s| s.values[output][i].map(|v| v[c]))
                .collect();
            let m = MeanSe::of(&vals);
            field.mean.push(m.mean);
            field.variance.push(m.variance);
            field.count.push(m.count);
            field.masked.push(vals.len() < samples.len());
        }
    }
    let [f, rho] = fields;
    let masked = f.masked_count();
    if masked > 0 {
        log::warn!("{masked} of {} query points masked at t={t}", points.len());
    }
    Ok((f, rho))
}

/// Distance between an MC field and a reference under quadrature `weights`,
/// skipping masked points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedL2 {
    /// `(Σ wᵢ (f̂ᵢ − refᵢ)²)^½`
    pub distance: f64,
    /// `(Σ wᵢ SEᵢ²)^½`, the size of the distance under pure sampling noise.
    pub standard_error: f64,
    pub used: usize,
}

pub fn masked_l2(field: &McField, reference: &[f64], weights: &[f64]) -> MaskedL2 {
    let (mut d2, mut se2, mut used) = (0.0, 0.0, 0usize);
    for i in 0..field.points.len() {
        if field.masked[i] {
            continue;
        }
        d2 += weights[i] * (field.mean[i] - reference[i]).powi(2);
        se2 += weights[i] * field.se(i).powi(2);
        used += 1;
    }
    MaskedL2 {
        distance: d2.sqrt(),
        standard_error: se2.sqrt(),
        used,
    }
}

/// Trapezoidal label-space weights `ρ₀(a) h₀(a) w(a)`, after checking that
/// `ρ₀h₀` vanishes within [`SUPPORT_MARGIN_CELLS`] cells of the boundary.
pub fn label_weights(
    grid: &RegularGrid,
    rho0: &dyn SpaceTimeField,
    h0: &dyn SpaceTimeField,
) -> Result<Vec<f64>, EstimatorError> {
    let n = grid.dim();
    let mut dens = Vec::with_capacity(grid.len());
    for a in grid.nodes() {
        dens.push(rho0.value(&a[..n], 0.0)? * h0.value(&a[..n], 0.0)?);
    }
    let peak = dens.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, d) in dens.iter().enumerate() {
        if grid.cells_from_boundary(i) < SUPPORT_MARGIN_CELLS && d.abs() > SUPPORT_TOLERANCE * peak {
            return Err(EstimatorError::SupportEscape(format!(
                "ρ0·h0 = {d:.3e} at label node {i}, within {SUPPORT_MARGIN_CELLS} cells of the label-box boundary"
            )));
        }
    }
    Ok(dens.iter().enumerate().map(|(i, d)| d * grid.trapezoid_weight(i)).collect())
}

/// `𝓔(t) = ∫ M(a,t) ρ₀(a) h₀(a) da` by quadrature over the label grid, with
/// weights from [`label_weights`].
pub fn conserved_quantity(
    ens: &Ensemble,
    phi: &dyn SpaceTimeField,
    weights: &[f64],
    output: usize,
) -> Result<f64, EstimatorError> {
    assert_eq!(weights.len(), ens.labels().len());
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            total += w * martingale_m(ens, phi, i, output)?;
        }
    }
    Ok(total)
}

/// `∫ ψ_ρ H(ψ_f/ψ_ρ) φ dx` by quadrature over the query points of one
/// realization at one output time.
pub fn entropy_martingale(
    sample: &PsiRealization,
    output: usize,
    phi: &[f64],
    weights: &[f64],
    h: ConvexH,
) -> Result<f64, EstimatorError> {
    let row = &sample.values[output];
    let mut total = 0.0;
    for (i, v) in row.iter().enumerate() {
        let [pf, pr] = v.ok_or_else(|| {
            EstimatorError::SupportEscape(format!("query point {i} left the chart"))
        })?;
        if pr <= 0.0 {
            return Err(EstimatorError::NonPositiveDensity { index: i });
        }
        total += weights[i] * pr * h.eval(pf / pr) * phi[i];
    }
    Ok(total)
}

/// Both sides of the empirical Jensen inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JensenVerdict {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// With `g = ψ_ρ/Ê[ψ_ρ]` and `v = ψ_f/Ê[ψ_ρ]`, checks
/// `H(Ê[v]) ≤ Ê[g·H(v/g)]` under the empirical measure.
pub fn jensen_check(psi_rho: &[f64], psi_f: &[f64], h: ConvexH) -> Result<JensenVerdict, EstimatorError> {
    assert_eq!(psi_rho.len(), psi_f.len());
    if let Some(index) = psi_rho.iter().position(|&p| !(p > 0.0)) {
        return Err(EstimatorError::NonPositiveDensity { index });
    }
    let m = psi_rho.len() as f64;
    let mean_rho = psi_rho.iter().sum::<f64>() / m;
    let mean_v = psi_f.iter().map(|f| f / mean_rho).sum::<f64>() / m;
    let lhs = h.eval(mean_v);
    let rhs = psi_rho
        .iter()
        .zip(psi_f)
        .map(|(r, f)| (r / mean_rho) * h.eval(f / r))
        .sum::<f64>()
        / m;
    Ok(JensenVerdict {
        lhs,
        rhs,
        holds: lhs <= rhs + JENSEN_SLACK * rhs.abs().max(1.0),
    })
}

/// Entropy of the mean fields `G(t_k) = Σ wᵢ ρ̂ᵢ H(f̂ᵢ/ρ̂ᵢ) φᵢ` with 95%
/// percentile bands from a paired bootstrap over realizations. An increment
/// counts as a violation when its bootstrap 2.5% quantile is positive.
pub fn entropy_decay_check(
    samples: &[PsiRealization],
    times: &[f64],
    phi: &[Vec<f64>],
    weights: &[f64],
    h: ConvexH,
    seed: u64,
) -> Result<EntropyReport, EstimatorError> {
    let r = samples.len();
    if r < MIN_REALIZATIONS {
        return Err(EstimatorError::InsufficientRealizations {
            got: r,
            need: MIN_REALIZATIONS,
        });
    }
    let outputs = times.len();
    let points = weights.len();
    // [output][point][realization]
    let mut data = vec![vec![(Vec::with_capacity(r), Vec::with_capacity(r)); points]; outputs];
    for s in samples {
        for k in 0..outputs {
            for i in 0..points {
                let [pf, pr] = s.values[k][i].ok_or_else(|| {
                    EstimatorError::SupportEscape(format!("query point {i} left the chart at t={}", times[k]))
                })?;
                data[k][i].0.push(pf);
                data[k][i].1.push(pr);
            }
        }
    }
    let functional = |k: usize, idx: Option<&[usize]>| -> f64 {
        let mut g = 0.0;
        for i in 0..points {
            let (fs, rs) = &data[k][i];
            let (fm, rm) = match idx {
                None => (fs.iter().sum::<f64>() / r as f64, rs.iter().sum::<f64>() / r as f64),
                Some(idx) => {
                    let (mut a, mut b) = (0.0, 0.0);
                    for &j in idx {
                        a += fs[j];
                        b += rs[j];
                    }
                    (a / r as f64, b / r as f64)
                }
            };
            g += weights[i] * rm * h.eval(fm / rm) * phi[k][i];
        }
        g
    };
    for k in 0..outputs {
        for i in 0..points {
            let m = MeanSe::of(&data[k][i].1);
            if !(m.mean > 4.0 * m.se()) {
                return Err(EstimatorError::SignalTooNoisy { point: i });
            }
        }
    }
    let values: Vec<f64> = (0..outputs).map(|k| functional(k, None)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot = vec![Vec::with_capacity(BOOTSTRAP_RESAMPLES); outputs];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let idx: Vec<usize> = (0..r).map(|_| rng.random_range(0..r)).collect();
        for (k, b) in boot.iter_mut().enumerate() {
            b.push(functional(k, Some(&idx)));
        }
    }
    let lower: Vec<f64> = boot.iter().map(|b| percentile(b, 0.025)).collect();
    let upper: Vec<f64> = boot.iter().map(|b| percentile(b, 0.975)).collect();
    let mut report = EntropyReport::from_series(h, times.to_vec(), values, 0.0);
    report.violations = (0..outputs.saturating_sub(1))
        .filter(|&k| {
            let diffs: Vec<f64> = boot[k + 1].iter().zip(&boot[k]).map(|(b, a)| b - a).collect();
            percentile(&diffs, 0.025) > 0.0
        })
        .count();
    report.lower = Some(lower);
    report.upper = Some(upper);
    Ok(report)
}

/// Linear-interpolated empirical quantile.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}
