//! Receding-horizon power allocation.
//!
//! Each solve minimizes the summed module losses over `H` steps for the cells
//! in service, subject to energy and thermal dynamics, current, SoC and
//! temperature limits, balancing bands softened by penalized slacks, and the
//! pack output demand. The loss `R_tot i^2` is written in accumulated-energy
//! coordinates and relaxed to a rotated second-order cone, so every solve is
//! a convex conic program.

mod conic;
mod constraints;
mod plan;
mod problem;

pub use conic::{Affine, ConicModel, ConicSolution, ConicTolerances};
pub use constraints::{
    balancing_band, current_bounds_cone, loss_epigraph, soc_bounds_energy, CurrentBounds,
    LossEpigraph, LowerPowerBound, SocBox,
};
pub use plan::{extract_controls, CellControl, HorizonPlan, PlanStatus};
pub use problem::{build_problem, solve, HorizonProblem};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancingConfig {
    /// SoC band half-width around the pack average.
    pub delta_q: f64,
    /// Temperature band half-width, K.
    pub delta_t: f64,
    /// Penalty on the energy-balancing slack.
    pub lambda_e: f64,
    /// Penalty on the temperature-balancing slack, per K.
    pub lambda_t: f64,
    pub horizon_h: usize,
    /// Step length, s.
    pub dt: f64,
}

impl Default for BalancingConfig {
    fn default() -> Self {
        Self {
            delta_q: 0.01,
            delta_t: 0.5,
            lambda_e: 1e3,
            lambda_t: 1e3,
            horizon_h: 20,
            dt: 1.0,
        }
    }
}

impl BalancingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_q >= 0.0 && self.delta_t >= 0.0) {
            return Err(Error::Optimizer("balancing bands must be non-negative".into()));
        }
        if !(self.lambda_e > 0.0 && self.lambda_t > 0.0) {
            return Err(Error::Optimizer("slack penalties must be positive".into()));
        }
        if self.horizon_h == 0 {
            return Err(Error::Optimizer("horizon must be at least one step".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::NonPositiveStep(self.dt));
        }
        Ok(())
    }
}

/// How slack penalties are turned into the weights actually used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightPolicy {
    /// Use the configured penalties unchanged.
    AsConfigured,
    /// Scale the penalties down so that spending extra loss can never lower
    /// a slack by enough to pay for itself, which keeps the loss cone active.
    /// `budget < 1` is the fraction of that limit the two penalties share.
    LossTight { budget: f64 },
}

impl Default for WeightPolicy {
    fn default() -> Self {
        WeightPolicy::LossTight { budget: 0.9 }
    }
}

/// What to do with SoC limits that fall outside the cell's current OCV segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentBoundPolicy {
    /// Evaluate the limit on the segment's line, extended past its ends.
    #[default]
    Extrapolate,
    /// Move the limit onto the segment's SoC range.
    Clip,
}

/// Heat source used in the predicted thermal dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorHeat {
    /// All module losses heat the cell.
    #[default]
    TotalLoss,
    /// Only the internal-resistance share `R / R_tot` of the loss.
    CellShare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossModel {
    /// Loss cone with the stored energy as a decision variable.
    #[default]
    Cone,
    /// Stored energy in the loss denominator frozen at a reference
    /// trajectory (horizon start, then one re-solve at the first solution).
    FrozenDenominator,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub weights: WeightPolicy,
    pub segment_bounds: SegmentBoundPolicy,
    pub heat: PredictorHeat,
    pub loss_model: LossModel,
    pub tolerances: ConicTolerances,
}

/// Slack penalties after the weight policy, with the limits they were held to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveWeights {
    pub lambda_e: f64,
    pub lambda_t: f64,
    pub limit_e: f64,
    pub limit_t: f64,
    pub reduced: bool,
}

/// Penalties that keep the loss relaxation exact.
///
/// Burning `d` watts of extra loss in one step lowers every later stored
/// energy by `d dt` and raises a temperature by at most `d dt h / C_th` (`h`
/// the heat share). Across `H - 1` later steps and `m` cells this can reduce
/// the slack sums by at most `4 dt (H-1)(1-1/m) d / C` (energy, `u^2` units)
/// and `2 dt (H-1)(1-1/m) h d / C_th` (temperature). Keeping
/// `lambda_e / limit_e + lambda_t / limit_t < 1` makes burning a net loss.
pub fn effective_weights(
    config: &BalancingConfig,
    cells: usize,
    c_equiv_min: f64,
    c_th_min: f64,
    heat_share_max: f64,
    policy: WeightPolicy,
) -> EffectiveWeights {
    let reach = config.dt * config.horizon_h.saturating_sub(1) as f64 * (1.0 - 1.0 / cells.max(1) as f64);
    let (limit_e, limit_t) = if reach > 0.0 {
        (
            c_equiv_min / (4.0 * reach),
            c_th_min / (2.0 * reach * heat_share_max.max(f64::MIN_POSITIVE)),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let (mut le, mut lt) = (config.lambda_e, config.lambda_t);
    if let WeightPolicy::LossTight { budget } = policy {
        let se = le / limit_e;
        let st = lt / limit_t;
        if se + st > budget {
            let half = 0.5 * budget;
            if se <= half {
                lt = (budget - se) * limit_t;
            } else if st <= half {
                le = (budget - st) * limit_e;
            } else {
                le = half * limit_e;
                lt = half * limit_t;
            }
        }
    }
    EffectiveWeights {
        lambda_e: le,
        lambda_t: lt,
        limit_e,
        limit_t,
        reduced: le < config.lambda_e || lt < config.lambda_t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_within_budget_are_kept() {
        let cfg = BalancingConfig {
            lambda_e: 1.0,
            lambda_t: 0.01,
            ..Default::default()
        };
        let w = effective_weights(&cfg, 15, 14000.0, 40.23, 1.0, WeightPolicy::default());
        assert!(!w.reduced);
        assert_eq!((w.lambda_e, w.lambda_t), (1.0, 0.01));
    }

    #[test]
    fn large_weights_are_split_across_budget() {
        let cfg = BalancingConfig::default();
        let w = effective_weights(&cfg, 15, 14000.0, 40.23, 1.0, WeightPolicy::default());
        assert!(w.reduced);
        assert_abs_diff_eq!(w.lambda_e / w.limit_e + w.lambda_t / w.limit_t, 0.9, epsilon = 1e-12);
        let reach = 19.0 * (1.0 - 1.0 / 15.0);
        assert_abs_diff_eq!(w.limit_e, 14000.0 / (4.0 * reach), epsilon = 1e-9);
        assert_abs_diff_eq!(w.limit_t, 40.23 / (2.0 * reach), epsilon = 1e-12);
        let raw = effective_weights(&cfg, 15, 14000.0, 40.23, 1.0, WeightPolicy::AsConfigured);
        assert_eq!((raw.lambda_e, raw.lambda_t), (1e3, 1e3));
    }

    #[test]
    fn small_share_leaves_room_for_the_other() {
        let cfg = BalancingConfig {
            lambda_e: 1.0,
            ..Default::default()
        };
        let w = effective_weights(&cfg, 15, 14000.0, 40.23, 1.0, WeightPolicy::default());
        assert_eq!(w.lambda_e, 1.0);
        assert_abs_diff_eq!(w.lambda_e / w.limit_e + w.lambda_t / w.limit_t, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn single_step_or_cell_needs_no_reduction() {
        let cfg = BalancingConfig {
            horizon_h: 1,
            ..Default::default()
        };
        let w = effective_weights(&cfg, 15, 14000.0, 40.23, 1.0, WeightPolicy::default());
        assert!(!w.reduced);
        let cfg = BalancingConfig::default();
        let w = effective_weights(&cfg, 1, 14000.0, 40.23, 1.0, WeightPolicy::default());
        assert!(!w.reduced);
    }
}

#[cfg(test)]
mod horizon_tests;
