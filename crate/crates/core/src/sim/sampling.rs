//! Random initial conditions for a pack of nominally identical cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::battery::{CellParams, CellState};
use crate::error::{Error, Result};

/// Normal spreads around a template cell. Variances are in squared units:
/// SoC^2, K^2 and ohm^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDistribution {
    pub soc_mean: f64,
    pub soc_variance: f64,
    pub temp_mean: f64,
    pub temp_variance: f64,
    /// Variance of the white noise added to the internal resistance.
    pub r_variance: f64,
    /// Draws beyond this many standard deviations are redrawn.
    #[serde(default = "default_truncation")]
    pub truncate_sigma: f64,
    /// Smallest internal resistance kept after perturbation, ohm.
    #[serde(default = "default_r_floor")]
    pub r_floor: f64,
}

fn default_truncation() -> f64 {
    3.0
}

fn default_r_floor() -> f64 {
    1e-3
}

impl InitialDistribution {
    /// Mean 90 % SoC and 308 K, variances 3 %^2 and 3 K^2, resistance
    /// noise variance 4 mOhm^2.
    pub fn reference() -> Self {
        Self {
            soc_mean: 0.90,
            soc_variance: 3e-4,
            temp_mean: 308.0,
            temp_variance: 3.0,
            r_variance: 4e-6,
            truncate_sigma: default_truncation(),
            r_floor: default_r_floor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("soc_variance", self.soc_variance),
            ("temp_variance", self.temp_variance),
            ("r_variance", self.r_variance),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Scenario(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(self.truncate_sigma > 0.0) {
            return Err(Error::Scenario("truncate_sigma must be positive".into()));
        }
        if !(self.r_floor > 0.0) {
            return Err(Error::Scenario("r_floor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.soc_mean) || !(self.temp_mean > 0.0) {
            return Err(Error::Scenario(format!(
                "means out of range: SoC {} and {} K",
                self.soc_mean, self.temp_mean
            )));
        }
        Ok(())
    }
}

fn truncated(rng: &mut ChaCha8Rng, mean: f64, variance: f64, k: f64) -> Result<f64> {
    if variance == 0.0 {
        return Ok(mean);
    }
    let sd = variance.sqrt();
    let dist = Normal::new(mean, sd).map_err(|e| Error::Scenario(e.to_string()))?;
    loop {
        let x = dist.sample(rng);
        if (x - mean).abs() <= k * sd {
            return Ok(x);
        }
    }
}

/// Draws `n` cells from `template`. For each cell in index order the SoC,
/// temperature and resistance noise are drawn from one ChaCha8 stream
/// seeded with `seed`. SoC is clamped into [0, 1].
pub fn sample_cells(
    template: &CellParams,
    n: usize,
    dist: &InitialDistribution,
    seed: u64,
) -> Result<(Vec<CellParams>, Vec<CellState>)> {
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = dist.truncate_sigma;
    let mut params = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        let q = truncated(&mut rng, dist.soc_mean, dist.soc_variance, k)?.clamp(0.0, 1.0);
        let temp = truncated(&mut rng, dist.temp_mean, dist.temp_variance, k)?;
        let noise = truncated(&mut rng, 0.0, dist.r_variance, k)?;
        let mut p = template.clone();
        p.r_int = (template.r_int + noise).max(dist.r_floor);
        params.push(p);
        states.push(CellState::new(q, temp));
    }
    Ok((params, states))
}
