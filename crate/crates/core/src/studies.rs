//! Monte Carlo experiments assembled from the engine, the charts and the
//! estimators. Each study runs its realizations in parallel and reduces them
//! in realization order.

use crate::brownian::BrownianDriver;
use crate::coefficients::CoefficientSet;
use crate::estimators::{self, Batch, EstimatorError, MeanSe, PsiRealization};
use crate::field::SpaceTimeField;
use crate::flow::FlowChart;
use crate::geometry::RegularGrid;
use crate::linalg::Vec3;
use crate::sde::{self, TimeGrid};

/// RMS discrepancies between the determinant trackers at a sequence of
/// halved steps driven by the same Brownian paths.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterminantStudy {
    pub dts: Vec<f64>,
    /// RMS of `D_direct − D_sde` over realizations, labels and output times.
    pub rms_sde: Vec<f64>,
    /// RMS of `D_direct − exp(log λ)`.
    pub rms_lambda: Vec<f64>,
    pub realizations: usize,
    pub discarded: usize,
}

/// Verdict on one tracker pair of a [`DeterminantStudy`].
#[derive(Debug, Clone, PartialEq)]
pub enum PairVerdict {
    /// Every level agrees to within [`EXACT_AGREEMENT`].
    Exact,
    Converging { ratios: Vec<f64>, order: f64 },
    Failing { ratios: Vec<f64>, order: f64 },
}

impl PairVerdict {
    pub fn passed(&self) -> bool {
        !matches!(self, PairVerdict::Failing { .. })
    }
}

/// Discrepancies at or below this level count as algebraic agreement.
pub const EXACT_AGREEMENT: f64 = 1e-12;

impl DeterminantStudy {
    /// `rms[k] / rms[k+1]` for each halving.
    pub fn ratios(rms: &[f64]) -> Vec<f64> {
        rms.windows(2).map(|w| w[0] / w[1]).collect()
    }

    /// Least-squares slope of `log rms` against `log dt`.
    pub fn fitted_order(&self, rms: &[f64]) -> f64 {
        fit_order(&self.dts, rms)
    }

    pub fn verdict(&self, rms: &[f64], ratio_range: (f64, f64), min_order: f64) -> PairVerdict {
        if rms.iter().all(|&e| e <= EXACT_AGREEMENT) {
            return PairVerdict::Exact;
        }
        let ratios = Self::ratios(rms);
        let order = self.fitted_order(rms);
        let ok = ratios.iter().all(|r| (ratio_range.0..=ratio_range.1).contains(r)) && order >= min_order;
        if ok {
            PairVerdict::Converging { ratios, order }
        } else {
            PairVerdict::Failing { ratios, order }
        }
    }
}

/// Slope of the least-squares line through `(log x, log y)`.
pub fn fit_order(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Determinant tracker discrepancies at `levels` step sizes, starting from
/// the step of `coarse` and halving. All levels of a realization sample the
/// same Brownian path at the finest resolution.
pub fn determinant_study(
    cs: &CoefficientSet,
    labels: &[Vec3],
    coarse: &TimeGrid,
    levels: usize,
    realizations: usize,
    seed: u64,
) -> Result<DeterminantStudy, EstimatorError> {
    assert!(levels >= 1);
    let n = cs.dim();
    let finest_factor = 1usize << (levels - 1);
    let fine_dt = coarse.dt() / finest_factor as f64;
    let batch = estimators::run_realizations(realizations, |r| {
        let mut sums = Vec::with_capacity(levels);
        for level in 0..levels {
            let tg = coarse.refined(1 << level);
            let mut driver =
                BrownianDriver::with_substeps(seed, r, fine_dt, n, finest_factor >> level);
            let ens = sde::simulate_paths(cs, labels, &tg, &mut driver)?;
            let (mut s_sde, mut s_lambda, mut count) = (0.0, 0.0, 0usize);
            for out in 0..ens.output_count() {
                if ens.output_time(out) == 0.0 {
                    continue;
                }
                for s in ens.states(out) {
                    s_sde += (s.d_direct - s.d_sde).powi(2);
                    s_lambda += (s.d_direct - s.lambda()).powi(2);
                    count += 1;
                }
            }
            sums.push((s_sde, s_lambda, count));
        }
        Ok(sums)
    })?;
    let mut rms_sde = vec![0.0; levels];
    let mut rms_lambda = vec![0.0; levels];
    let mut counts = vec![0usize; levels];
    for sums in batch.values() {
        for (level, &(a, b, c)) in sums.iter().enumerate() {
            rms_sde[level] += a;
            rms_lambda[level] += b;
            counts[level] += c;
        }
    }
    for level in 0..levels {
        let c = counts[level].max(1) as f64;
        rms_sde[level] = (rms_sde[level] / c).sqrt();
        rms_lambda[level] = (rms_lambda[level] / c).sqrt();
    }
    Ok(DeterminantStudy {
        dts: (0..levels).map(|l| coarse.dt() / (1 << l) as f64).collect(),
        rms_sde,
        rms_lambda,
        realizations: batch.len(),
        discarded: batch.discarded.len(),
    })
}

/// Sample statistics of `M(a,t)` at one label and output time.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePoint {
    pub label: Vec3,
    pub t: f64,
    pub stats: MeanSe,
    /// `φ(a, 0)`
    pub target: f64,
}

impl MartingalePoint {
    pub fn z(&self) -> f64 {
        self.stats.z(self.target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleStudy {
    pub points: Vec<MartingalePoint>,
    pub realizations: usize,
    pub discarded: usize,
}

/// `E[M(a,t)]` against `φ(a,0)` at every label and output time.
pub fn martingale_study(
    cs: &CoefficientSet,
    labels: &[Vec3],
    time_grid: &TimeGrid,
    phi: &dyn SpaceTimeField,
    realizations: usize,
    seed: u64,
) -> Result<MartingaleStudy, EstimatorError> {
    let n = cs.dim();
    let batch = estimators::run_realizations(realizations, |r| {
        let mut driver = BrownianDriver::new(seed, r, time_grid.dt(), n);
        let ens = sde::simulate_paths(cs, labels, time_grid, &mut driver)?;
        let mut values = Vec::with_capacity(ens.output_count() * labels.len());
        for out in 0..ens.output_count() {
            for l in 0..labels.len() {
                values.push(sde::martingale_m(&ens, phi, l, out)?);
            }
        }
        Ok(values)
    })?;
    let times = time_grid.output_times();
    let mut points = Vec::new();
    for (out, &t) in times.iter().enumerate() {
        for (l, label) in labels.iter().enumerate() {
            let k = out * labels.len() + l;
            let samples: Vec<f64> = batch.values().map(|v| v[k]).collect();
            points.push(MartingalePoint {
                label: *label,
                t,
                stats: MeanSe::of(&samples),
                target: phi.value(&label[..n], 0.0)?,
            });
        }
    }
    Ok(MartingaleStudy {
        points,
        realizations: batch.len(),
        discarded: batch.discarded.len(),
    })
}

/// The stochastic integral of motion `𝓔(t)` over realizations, for one or
/// more label weightings sharing the same paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationStudy {
    pub times: Vec<f64>,
    /// `𝓔(0)` by direct quadrature of `φ(a,0)ρ₀h₀`, per weighting.
    pub initial: Vec<f64>,
    /// `stats[set][output]`
    pub stats: Vec<Vec<MeanSe>>,
    pub realizations: usize,
    pub discarded: usize,
}

impl ConservationStudy {
    /// z-scores of `mean 𝓔(t) − 𝓔(0)`, indexed `[set][output]`.
    pub fn z(&self) -> Vec<Vec<f64>> {
        self.stats
            .iter()
            .zip(&self.initial)
            .map(|(row, &e0)| row.iter().map(|s| s.z(e0)).collect())
            .collect()
    }
}

/// `𝓔(t)` for each weight vector of `weight_sets` (from
/// [`estimators::label_weights`] on `label_grid`).
pub fn conservation_study(
    cs: &CoefficientSet,
    label_grid: &RegularGrid,
    time_grid: &TimeGrid,
    phi: &dyn SpaceTimeField,
    weight_sets: &[Vec<f64>],
    realizations: usize,
    seed: u64,
) -> Result<ConservationStudy, EstimatorError> {
    let n = cs.dim();
    // only labels carrying weight in some set need to be simulated
    let active: Vec<usize> = (0..label_grid.len())
        .filter(|&i| weight_sets.iter().any(|w| w[i] != 0.0))
        .collect();
    let labels: Vec<Vec3> = active.iter().map(|&i| label_grid.node(i)).collect();
    let sets: Vec<Vec<f64>> = weight_sets
        .iter()
        .map(|w| active.iter().map(|&i| w[i]).collect())
        .collect();
    let mut initial = vec![0.0; sets.len()];
    for (l, label) in labels.iter().enumerate() {
        let p = phi.value(&label[..n], 0.0)?;
        for (e0, w) in initial.iter_mut().zip(&sets) {
            *e0 += w[l] * p;
        }
    }
    let batch = estimators::run_realizations(realizations, |r| {
        let mut driver = BrownianDriver::new(seed, r, time_grid.dt(), n);
        let ens = sde::simulate_paths(cs, &labels, time_grid, &mut driver)?;
        let mut row = Vec::with_capacity(sets.len() * ens.output_count());
        for w in &sets {
            for out in 0..ens.output_count() {
                row.push(estimators::conserved_quantity(&ens, phi, w, out)?);
            }
        }
        Ok(row)
    })?;
    let times = time_grid.output_times();
    let stats = (0..sets.len())
        .map(|k| {
            (0..times.len())
                .map(|o| MeanSe::of(&batch.values().map(|v| v[k * times.len() + o]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    Ok(ConservationStudy {
        times,
        initial,
        stats,
        realizations: batch.len(),
        discarded: batch.discarded.len(),
    })
}

/// `ψ_{f0}` and `ψ_{ρ0}` at `points` for every output time and realization.
#[allow(clippy::too_many_arguments)]
pub fn psi_study(
    cs: &CoefficientSet,
    label_grid: &RegularGrid,
    time_grid: &TimeGrid,
    points: &[Vec3],
    f0: &dyn SpaceTimeField,
    rho0: &dyn SpaceTimeField,
    realizations: usize,
    seed: u64,
) -> Result<Batch<PsiRealization>, EstimatorError> {
    let n = cs.dim();
    estimators::run_realizations(realizations, |r| {
        let mut driver = BrownianDriver::new(seed, r, time_grid.dt(), n);
        let ens = sde::simulate_ensemble(cs, label_grid, time_grid, &mut driver)?;
        let charts = (0..ens.output_count())
            .map(|out| FlowChart::from_ensemble(&ens, out))
            .collect::<Result<Vec<_>, _>>()?;
        estimators::psi_realization(&charts, points, f0, rho0)
    })
}

/// Geometric health of the charts of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartDiagnostics {
    /// `max |A(X(a,t),t) − a|` over interior labels and output times.
    pub max_round_trip: f64,
    pub max_deformation: f64,
    pub degenerate_cells: usize,
}

pub fn chart_diagnostics(
    cs: &CoefficientSet,
    label_grid: &RegularGrid,
    time_grid: &TimeGrid,
    seed: u64,
    realization: u64,
) -> Result<ChartDiagnostics, EstimatorError> {
    let mut driver = BrownianDriver::new(seed, realization, time_grid.dt(), cs.dim());
    let ens = sde::simulate_ensemble(cs, label_grid, time_grid, &mut driver)?;
    let mut d = ChartDiagnostics {
        max_round_trip: 0.0,
        max_deformation: 0.0,
        degenerate_cells: 0,
    };
    for out in 0..ens.output_count() {
        let chart = FlowChart::from_ensemble(&ens, out)?;
        d.max_round_trip = d.max_round_trip.max(chart.round_trip_error(1)?);
        d.max_deformation = d.max_deformation.max(chart.max_deformation());
        d.degenerate_cells = d.degenerate_cells.max(chart.degenerate_cell_count());
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldExpr;
    use crate::geometry::BoundingBox;

    #[test]
    fn order_fit() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.5)).collect();
        assert!((fit_order(&x, &y) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heat_martingale_is_trivial() {
        let cs = CoefficientSet::assemble(&[vec!["1"]], &["0"], "0", 0.1, 1).unwrap();
        let tg = TimeGrid::new(0.01, 0.5, &[0.25, 0.5]).unwrap();
        let one = FieldExpr::constant(1.0, 1);
        let s = martingale_study(&cs, &[[0.0; 3]], &tg, &one, 50, 1).unwrap();
        for p in &s.points {
            assert_eq!(p.stats.mean, 1.0);
            assert_eq!(p.z(), 0.0);
        }
    }

    #[test]
    fn determinant_study_is_exact_for_constant_sigma() {
        let cs = CoefficientSet::assemble(&[vec!["1"]], &["0.5*x1"], "0", 0.1, 1).unwrap();
        let tg = TimeGrid::new(0.02, 0.4, &[0.2, 0.4]).unwrap();
        let s = determinant_study(&cs, &[[0.0; 3]], &tg, 3, 20, 3).unwrap();
        assert_eq!(s.verdict(&s.rms_sde, (1.2, 2.8), 0.4), PairVerdict::Exact);
        // λ is exact; the Euler product converges at first order
        let order = s.fitted_order(&s.rms_lambda);
        assert!((order - 1.0).abs() < 0.1, "{order}");
    }

    #[test]
    fn study_is_thread_count_independent() {
        let cs = CoefficientSet::assemble(&[vec!["1 + 0.5*sin(x1)"]], &["0"], "0", 0.1, 1).unwrap();
        let grid = RegularGrid::with_spacing(&BoundingBox::cube(1, -3.0, 3.0).unwrap(), 0.25).unwrap();
        let tg = TimeGrid::new(0.01, 0.2, &[0.2]).unwrap();
        let one = FieldExpr::constant(1.0, 1);
        let bump = FieldExpr::parse("exp(-4*x1^2)", 1).unwrap();
        let w = estimators::label_weights(&grid, &bump, &one).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| conservation_study(&cs, &grid, &tg, &one, std::slice::from_ref(&w), 64, 5).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
