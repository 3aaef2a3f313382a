//! Lumped thermal network: one node per cell, a convective path to ambient
//! and conductive links between physical neighbours in the chain. The two end
//! cells have a single neighbour each and no heat leaves through the ends.

use super::{CellParams, ThermalNetworkParams};
use crate::error::{Error, Result};

/// One forward-Euler step with Joule heating `R * i^2` in each cell.
///
/// Bypassed cells are included with zero current; they still exchange heat
/// with their neighbours.
pub fn thermal_step(
    temps: &[f64],
    currents: &[f64],
    params: &[CellParams],
    net: &ThermalNetworkParams,
    dt: f64,
) -> Result<Vec<f64>> {
    if currents.len() != temps.len() || params.len() != temps.len() {
        return Err(Error::InvalidParams(format!(
            "thermal step: {} temperatures, {} currents, {} parameter sets",
            temps.len(),
            currents.len(),
            params.len()
        )));
    }
    let heat: Vec<f64> = currents
        .iter()
        .zip(params)
        .map(|(i, p)| p.r_int * i * i)
        .collect();
    thermal_step_with_heat(temps, &heat, params, net, dt)
}

/// Same network driven by an arbitrary heat input per cell, watts.
pub fn thermal_step_with_heat(
    temps: &[f64],
    heat: &[f64],
    params: &[CellParams],
    net: &ThermalNetworkParams,
    dt: f64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    if heat.len() != temps.len() || params.len() != temps.len() {
        return Err(Error::InvalidParams(format!(
            "thermal step: {} temperatures, {} heat inputs, {} parameter sets",
            temps.len(),
            heat.len(),
            params.len()
        )));
    }
    let n = temps.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let t = temps[j];
        let mut flow = heat[j] - (t - net.t_env) / net.r_conv;
        if j > 0 {
            flow -= (t - temps[j - 1]) / net.r_cnd;
        }
        if j + 1 < n {
            flow -= (t - temps[j + 1]) / net.r_cnd;
        }
        out.push(t + dt * flow / params[j].c_th);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cells(n: usize) -> Vec<CellParams> {
        vec![CellParams::reference(); n]
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let net = ThermalNetworkParams::reference();
        let t = vec![net.t_env; 4];
        let out = thermal_step(&t, &[0.0; 4], &cells(4), &net, 1.0).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn isolated_cell_heating() {
        let net = ThermalNetworkParams {
            r_conv: f64::INFINITY,
            r_cnd: 26.6,
            t_env: 298.0,
        };
        let out = thermal_step(&[300.0], &[10.0], &cells(1), &net, 1.0).unwrap();
        assert_abs_diff_eq!(out[0] - 300.0, 3.13 / 40.23, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0] - 300.0, 0.0778, epsilon = 1e-4);
    }

    #[test]
    fn two_cells_exchange_and_lose_heat() {
        let net = ThermalNetworkParams {
            t_env: 301.0,
            ..ThermalNetworkParams::reference()
        };
        let p = cells(2);
        let t = [300.0, 302.0];
        let out = thermal_step(&t, &[0.0, 0.0], &p, &net, 1.0).unwrap();
        assert!(out[0] > t[0] && out[1] < t[1]);
        // stored heat changes only through convection
        let stored = |ts: &[f64]| ts.iter().zip(&p).map(|(t, c)| c.c_th * t).sum::<f64>();
        let convect: f64 = t.iter().map(|ti| -(ti - net.t_env) / net.r_conv).sum();
        assert_abs_diff_eq!(stored(&out) - stored(&t), convect, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_step() {
        let net = ThermalNetworkParams::reference();
        assert!(thermal_step(&[300.0], &[0.0], &cells(1), &net, 0.0).is_err());
        assert!(thermal_step(&[300.0], &[0.0, 1.0], &cells(1), &net, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn conduction_conserves_heat(
            temps in prop::collection::vec(280.0f64..340.0, 1..12),
            seed in prop::collection::vec(-10.0f64..10.0, 12),
            dt in 0.01f64..2.0,
        ) {
            let n = temps.len();
            let currents = &seed[..n];
            let net = ThermalNetworkParams { r_conv: f64::INFINITY, r_cnd: 26.6, t_env: 298.0 };
            let p = cells(n);
            let out = thermal_step(&temps, currents, &p, &net, dt).unwrap();
            let before: f64 = temps.iter().zip(&p).map(|(t, c)| c.c_th * t).sum();
            let after: f64 = out.iter().zip(&p).map(|(t, c)| c.c_th * t).sum();
            let joule: f64 = currents.iter().zip(&p).map(|(i, c)| c.r_int * i * i * dt).sum();
            prop_assert!((after - before - joule).abs() <= 1e-9 * before.abs().max(1.0));
        }
    }
}
