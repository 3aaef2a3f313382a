//! Per-cell plant models: Rint electrics, lumped thermal network and the
//! accumulated-energy coordinates used by the convex horizon problem.
//!
//! Sign convention throughout: positive current and power mean discharge.

mod energy;
mod ocv;
mod thermal;

pub use energy::{from_energy_frame, to_energy_frame, EnergyFrame};
pub use ocv::{
    fit_ocv, ocv_eval, parse_ocv_table, OcvCurve, OcvFit, OcvSegment, CONTINUITY_TOL_V,
    DEFAULT_OCV_TABLE,
};
pub use thermal::{thermal_step, thermal_step_with_heat};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds per hour; capacities are stored in Ah and used in A·s.
pub const SECONDS_PER_HOUR: f64 = 3600.0;

pub const DEFAULT_R_CONV_DC: f64 = 0.010;
pub const DEFAULT_R_SWITCH: f64 = 0.005;

/// Static description of one cell and its module electronics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// Ampere-hours.
    pub capacity_q: f64,
    /// Internal resistance, ohms.
    pub r_int: f64,
    /// DC/DC converter resistance, ohms.
    pub r_conv_dc: f64,
    /// Aggregated switch resistance of the module, ohms.
    pub r_switch: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub i_min: f64,
    pub i_max: f64,
    /// Kelvin.
    pub t_max: f64,
    /// Heat capacity, J/K.
    pub c_th: f64,
    pub ocv: OcvCurve,
}

impl CellParams {
    /// 2.5 Ah 18650 cell with 31.3 mOhm, SoC window [0.05, 0.95], +/-10 A and
    /// the bundled OCV curve.
    pub fn reference() -> Self {
        Self {
            capacity_q: 2.5,
            r_int: 0.0313,
            r_conv_dc: DEFAULT_R_CONV_DC,
            r_switch: DEFAULT_R_SWITCH,
            q_min: 0.05,
            q_max: 0.95,
            i_min: -10.0,
            i_max: 10.0,
            t_max: 333.15,
            c_th: 40.23,
            ocv: OcvCurve::default_nmc(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.capacity_q > 0.0) {
            return bad(format!("capacity {} Ah must be positive", self.capacity_q));
        }
        for (name, r) in [
            ("r_int", self.r_int),
            ("r_conv_dc", self.r_conv_dc),
            ("r_switch", self.r_switch),
        ] {
            if !(r >= 0.0) || !r.is_finite() {
                return bad(format!("{name} = {r} must be a non-negative number"));
            }
        }
        if !(self.c_th > 0.0) {
            return bad(format!("c_th {} must be positive", self.c_th));
        }
        if !(0.0 <= self.q_min && self.q_min < self.q_max && self.q_max <= 1.0) {
            return bad(format!(
                "SoC window [{}, {}] must satisfy 0 <= q_min < q_max <= 1",
                self.q_min, self.q_max
            ));
        }
        if !(self.i_min <= 0.0 && 0.0 <= self.i_max) {
            return bad(format!(
                "current window [{}, {}] must contain zero",
                self.i_min, self.i_max
            ));
        }
        if !(self.t_max > 0.0) {
            return bad(format!("t_max {} K must be positive", self.t_max));
        }
        Ok(())
    }

    /// Internal plus converter plus switch resistance.
    #[inline]
    pub fn r_total(&self) -> f64 {
        self.r_int + self.r_conv_dc + self.r_switch
    }

    /// Capacity in ampere-seconds.
    #[inline]
    pub fn capacity_as(&self) -> f64 {
        self.capacity_q * SECONDS_PER_HOUR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalNetworkParams {
    /// Cell-to-ambient resistance, K/W. `f64::INFINITY` disables convection.
    pub r_conv: f64,
    /// Cell-to-neighbour resistance, K/W.
    pub r_cnd: f64,
    /// Ambient temperature, K.
    pub t_env: f64,
}

impl ThermalNetworkParams {
    pub fn reference() -> Self {
        Self {
            r_conv: 41.05,
            r_cnd: 26.6,
            t_env: 298.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_conv > 0.0) || !(self.r_cnd > 0.0) {
            return Err(Error::InvalidParams(format!(
                "thermal resistances must be positive (r_conv {}, r_cnd {})",
                self.r_conv, self.r_cnd
            )));
        }
        if !(self.t_env > 0.0) {
            return Err(Error::InvalidParams(format!(
                "ambient temperature {} K must be positive",
                self.t_env
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub q: f64,
    /// Kelvin.
    pub temp: f64,
    pub in_service: bool,
}

impl CellState {
    pub fn new(q: f64, temp: f64) -> Self {
        Self {
            q,
            temp,
            in_service: true,
        }
    }
}

/// Coulomb counting over one step. The result is not clamped; callers
/// decide what an out-of-range SoC means.
pub fn soc_step(state: CellState, params: &CellParams, i_l: f64, dt: f64) -> Result<CellState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    Ok(CellState {
        q: state.q - i_l * dt / params.capacity_as(),
        ..state
    })
}

pub fn terminal_voltage(params: &CellParams, q: f64, i_l: f64) -> Result<f64> {
    Ok(params.ocv.eval(q)? - params.r_int * i_l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulePower {
    /// Power drawn from the cell's open-circuit source, W.
    pub internal: f64,
    /// Power at the module output, W.
    pub output: f64,
    /// Dissipated in cell, converter and switches, W.
    pub loss: f64,
}

pub fn module_power(params: &CellParams, q: f64, i_l: f64) -> Result<ModulePower> {
    let u = params.ocv.eval(q)?;
    let internal = u * i_l;
    let loss = params.r_total() * i_l * i_l;
    Ok(ModulePower {
        internal,
        output: internal - loss,
        loss,
    })
}

/// Current that draws internal power `p_b` at open-circuit voltage `u`.
#[inline]
pub fn current_from_power(p_b: f64, u: f64) -> f64 {
    p_b / u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn flat_cell() -> CellParams {
        CellParams {
            ocv: OcvCurve::linear(3.3, 0.6).unwrap(),
            ..CellParams::reference()
        }
    }

    #[test]
    fn reference_params_are_valid() {
        CellParams::reference().validate().unwrap();
        ThermalNetworkParams::reference().validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_windows() {
        let mut p = CellParams::reference();
        p.q_min = 0.96;
        assert!(p.validate().is_err());
        let mut p = CellParams::reference();
        p.i_min = 1.0;
        assert!(p.validate().is_err());
        let mut p = CellParams::reference();
        p.r_switch = -1e-3;
        assert!(p.validate().is_err());
        let mut p = CellParams::reference();
        p.capacity_q = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn coulomb_counting() {
        let p = flat_cell();
        let s = CellState::new(0.5, 300.0);
        assert_eq!(soc_step(s, &p, 0.0, 1.0).unwrap().q, 0.5);
        assert_abs_diff_eq!(soc_step(s, &p, 9.0, 1.0).unwrap().q, 0.499, epsilon = 1e-15);
        assert_abs_diff_eq!(soc_step(s, &p, -9.0, 1.0).unwrap().q, 0.501, epsilon = 1e-15);
        assert!(matches!(soc_step(s, &p, 1.0, 0.0), Err(Error::NonPositiveStep(_))));
        // no clamping below zero
        let low = CellState::new(0.0001, 300.0);
        assert!(soc_step(low, &p, 10.0, 1.0).unwrap().q < 0.0);
    }

    #[test]
    fn terminal_voltage_rint() {
        let p = flat_cell();
        assert_abs_diff_eq!(terminal_voltage(&p, 0.5, 0.0).unwrap(), 3.6, epsilon = 1e-12);
        assert_abs_diff_eq!(terminal_voltage(&p, 0.5, 10.0).unwrap(), 3.287, epsilon = 1e-12);
        assert_abs_diff_eq!(terminal_voltage(&p, 0.5, -10.0).unwrap(), 3.913, epsilon = 1e-12);
    }

    #[test]
    fn module_power_split() {
        let p = flat_cell();
        let zero = module_power(&p, 0.5, 0.0).unwrap();
        assert_eq!((zero.internal, zero.output, zero.loss), (0.0, 0.0, 0.0));
        let mp = module_power(&p, 0.5, 10.0).unwrap();
        assert_abs_diff_eq!(mp.internal, 36.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mp.output, 31.37, epsilon = 1e-12);
        assert_abs_diff_eq!(mp.loss, 4.63, epsilon = 1e-12);
        let neg = module_power(&p, 0.5, -10.0).unwrap();
        assert_eq!(neg.loss, mp.loss);
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative(q in 0.0f64..=1.0, i in -50.0f64..50.0) {
            let p = CellParams::reference();
            let mp = module_power(&p, q, i).unwrap();
            prop_assert!(mp.loss >= 0.0);
            prop_assert!(mp.output <= mp.internal);
            if i != 0.0 {
                prop_assert!(mp.output < mp.internal);
            }
        }

        #[test]
        fn ocv_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let c = OcvCurve::default_nmc();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.eval(lo).unwrap() <= c.eval(hi).unwrap());
        }
    }
}
