//! Spatially uncorrelated lognormal saturated-conductivity fields.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::constitutive::SoilModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LognormalSpec {
    /// Geometric mean of Ks [m/s].
    pub geo_mean: f64,
    /// Standard deviation of log10 Ks.
    pub sigma_log10: f64,
    /// Every draw is clamped into `[min, max]` [m/s].
    pub clamp: (f64, f64),
    pub seed: u64,
}

impl Default for LognormalSpec {
    fn default() -> Self {
        LognormalSpec { geo_mean: 1e-6, sigma_log10: 1.17, clamp: (1e-10, 1e-3), seed: 0 }
    }
}

impl LognormalSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.clamp;
        if !(self.geo_mean > 0.0 && self.sigma_log10 >= 0.0 && self.sigma_log10.is_finite() && lo > 0.0 && lo < hi) {
            return Err(Error::InvalidInput(format!("invalid lognormal field parameters {self:?}")));
        }
        Ok(())
    }
}

/// One Ks value per cell, drawn in global cell order so the field does not
/// depend on how the grid is partitioned.
pub fn lognormal_ks_field(n_cells: usize, spec: &LognormalSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mu = spec.geo_mean.log10();
    if spec.sigma_log10 == 0.0 {
        return Ok(vec![spec.geo_mean.clamp(spec.clamp.0, spec.clamp.1); n_cells]);
    }
    let normal = Normal::new(mu, spec.sigma_log10).expect("validated sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..n_cells)
        .map(|_| 10f64.powf(normal.sample(&mut rng)).clamp(spec.clamp.0, spec.clamp.1))
        .collect())
}

/// Copies of `base` carrying the per-cell Ks values.
pub fn apply_ks(base: &SoilModel<f64>, ks: &[f64]) -> Vec<SoilModel<f64>> {
    ks.iter().map(|&k| base.with_ks(k)).collect()
}
