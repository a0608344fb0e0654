//! Reproducible Brownian increments.
//!
//! Every realization owns an independent ChaCha8 stream selected by its index,
//! so the increments are a function of `(seed, realization, step)` alone and
//! do not depend on how many labels or threads consume them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::field::MAX_DIM;
use crate::linalg::{Vec3, ZERO_VEC};

#[derive(Debug, Clone)]
pub struct BrownianDriver {
    seed: u64,
    realization: u64,
    dt: f64,
    dim: usize,
    substeps: usize,
    rng: ChaCha8Rng,
    step: usize,
}

impl BrownianDriver {
    pub fn new(seed: u64, realization: u64, dt: f64, dim: usize) -> Self {
        Self::with_substeps(seed, realization, dt, dim, 1)
    }

    /// Driver whose increments each sum `substeps` increments of a finer path
    /// with step `base_dt`. Drivers with the same seed and realization but
    /// different `substeps` therefore sample the same Brownian path.
    pub fn with_substeps(seed: u64, realization: u64, base_dt: f64, dim: usize, substeps: usize) -> Self {
        assert!(base_dt > 0.0 && base_dt.is_finite(), "dt must be positive");
        assert!((1..=MAX_DIM).contains(&dim), "unsupported dimension {dim}");
        assert!(substeps >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(realization);
        Self {
            seed,
            realization,
            dt: base_dt * substeps as f64,
            dim,
            substeps,
            rng,
            step: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn realization(&self) -> u64 {
        self.realization
    }

    /// Step size of the increments this driver returns.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index of the next increment.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn next_increment(&mut self) -> Vec3 {
        let scale = (self.dt / self.substeps as f64).sqrt();
        let mut dw = ZERO_VEC;
        for _ in 0..self.substeps {
            for w in dw.iter_mut().take(self.dim) {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *w += scale * z;
            }
        }
        self.step += 1;
        dw
    }

    pub fn increments(&mut self, steps: usize) -> Vec<Vec3> {
        (0..steps).map(|_| self.next_increment()).collect()
    }
}

/// Sample moments of generated increments, in standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestReport {
    pub draws: usize,
    pub mean: f64,
    pub variance: f64,
    /// `(mean − 0) / SE(mean)`
    pub mean_z: f64,
    /// `(variance − dt) / SE(variance)`
    pub variance_z: f64,
}

impl SelfTestReport {
    pub fn passes(&self) -> bool {
        self.mean_z.abs() <= 4.0 && self.variance_z.abs() <= 4.0
    }
}

/// Draws `draws` scalar increments (all components of consecutive vectors)
/// and compares their moments with `N(0, dt)`.
pub fn self_test(seed: u64, dt: f64, dim: usize, draws: usize) -> SelfTestReport {
    let mut driver = BrownianDriver::new(seed, 0, dt, dim);
    let mut values = Vec::with_capacity(draws);
    while values.len() < draws {
        let dw = driver.next_increment();
        values.extend(dw.iter().take(dim).take(draws - values.len()));
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    // Var of a Gaussian sample variance is 2σ⁴/(m−1).
    SelfTestReport {
        draws: values.len(),
        mean,
        variance,
        mean_z: mean / (dt / m).sqrt(),
        variance_z: (variance - dt) / (dt * (2.0 / (m - 1.0)).sqrt()),
    }
}
