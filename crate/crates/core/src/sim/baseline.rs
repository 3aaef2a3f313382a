//! Conventional pack for comparison: the same cells hard-wired in one series
//! string with no converters, so every cell carries the string current.

use crate::battery::{soc_step, thermal_step, CellParams, CellState, ThermalNetworkParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStep {
    pub states: Vec<CellState>,
    /// String current, A.
    pub current: f64,
    /// Joule loss `sum R_j i^2`, W.
    pub loss: f64,
}

/// String current that delivers `p_out` from the summed open-circuit voltage
/// and resistance: the root of `U i - R i^2 = p_out` nearest zero.
pub fn series_current(u_sum: f64, r_sum: f64, p_out: f64) -> Result<f64> {
    if p_out == 0.0 {
        return Ok(0.0);
    }
    let disc = u_sum * u_sum - 4.0 * r_sum * p_out;
    if disc < 0.0 {
        return Err(Error::BaselineUnreachable {
            p_out,
            discriminant: disc,
        });
    }
    if r_sum == 0.0 {
        return Ok(p_out / u_sum);
    }
    // 2p / (U + sqrt(disc)) is the small root without cancellation.
    Ok(2.0 * p_out / (u_sum + disc.sqrt()))
}

/// Advances the hard-wired string by one step. Cells whose state is out of
/// service are not part of the string and carry no current; all cells
/// exchange heat through the thermal network.
pub fn step_hardwired_baseline(
    states: &[CellState],
    params: &[CellParams],
    thermal: &ThermalNetworkParams,
    p_out: f64,
    dt: f64,
) -> Result<BaselineStep> {
    if states.len() != params.len() {
        return Err(Error::InvalidParams(format!(
            "{} states but {} parameter sets",
            states.len(),
            params.len()
        )));
    }
    let mut u_sum = 0.0;
    let mut r_sum = 0.0;
    for (s, p) in states.iter().zip(params) {
        if s.in_service {
            u_sum += p.ocv.eval(s.q)?;
            r_sum += p.r_int;
        }
    }
    if u_sum <= 0.0 {
        return Err(Error::BaselineUnreachable {
            p_out,
            discriminant: f64::NAN,
        });
    }
    let i = series_current(u_sum, r_sum, p_out)?;
    let currents: Vec<f64> = states.iter().map(|s| if s.in_service { i } else { 0.0 }).collect();
    let temps: Vec<f64> = states.iter().map(|s| s.temp).collect();
    let temps = thermal_step(&temps, &currents, params, thermal, dt)?;
    let mut next = Vec::with_capacity(states.len());
    for ((s, p), (&c, t)) in states.iter().zip(params).zip(currents.iter().zip(temps)) {
        let mut n = if s.in_service { soc_step(*s, p, c, dt)? } else { *s };
        n.temp = t;
        next.push(n);
    }
    Ok(BaselineStep {
        states: next,
        current: i,
        loss: r_sum * i * i,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::module_power;
    use approx::assert_relative_eq;

    fn pack(n: usize, q: f64) -> (Vec<CellState>, Vec<CellParams>) {
        (vec![CellState::new(q, 300.0); n], vec![CellParams::reference(); n])
    }

    #[test]
    fn zero_demand_draws_nothing() {
        let (s, p) = pack(4, 0.6);
        let out = step_hardwired_baseline(&s, &p, &ThermalNetworkParams::reference(), 0.0, 1.0).unwrap();
        assert_eq!(out.current, 0.0);
        assert_eq!(out.loss, 0.0);
        assert!(out.states.iter().all(|c| c.q == 0.6));
    }

    #[test]
    fn delivered_power_matches_demand() {
        let (s, p) = pack(5, 0.7);
        let out = step_hardwired_baseline(&s, &p, &ThermalNetworkParams::reference(), 120.0, 1.0).unwrap();
        let u = p[0].ocv.eval(0.7).unwrap();
        let delivered = 5.0 * (u * out.current - p[0].r_int * out.current.powi(2));
        assert_relative_eq!(delivered, 120.0, max_relative = 1e-12);
        assert!(out.current > 0.0 && out.current < 10.0);
    }

    #[test]
    fn charging_takes_the_negative_root() {
        let i = series_current(36.0, 0.3, -50.0).unwrap();
        assert!(i < 0.0);
        assert_relative_eq!(36.0 * i - 0.3 * i * i, -50.0, max_relative = 1e-12);
    }

    #[test]
    fn unreachable_demand_is_an_error() {
        // max deliverable is U^2 / 4R = 36^2 / 1.2 = 1080 W
        assert!(matches!(
            series_current(36.0, 0.3, 1100.0),
            Err(Error::BaselineUnreachable { .. })
        ));
        assert!(series_current(36.0, 0.3, 1079.0).is_ok());
    }

    #[test]
    fn uniform_cells_match_an_even_lossless_split() {
        // converter and switch resistances at zero make both packs identical
        let mut c = CellParams::reference();
        c.r_conv_dc = 0.0;
        c.r_switch = 0.0;
        let states = vec![CellState::new(0.8, 300.0); 6];
        let params = vec![c.clone(); 6];
        let out = step_hardwired_baseline(&states, &params, &ThermalNetworkParams::reference(), 150.0, 1.0).unwrap();
        let u = c.ocv.eval(0.8).unwrap();
        let per_cell = series_current(u, c.r_int, 25.0).unwrap();
        let even_loss = 6.0 * module_power(&c, 0.8, per_cell).unwrap().loss;
        assert_relative_eq!(out.loss, even_loss, max_relative = 1e-12);
    }

    #[test]
    fn loss_optimal_split_never_loses_to_the_string() {
        // Lagrange split of sum R_j (P_j/u_j)^2 subject to sum P_j - R_j (P_j/u_j)^2 = P:
        // a common-current string is one feasible split, so it cannot do better.
        let rs = [0.029, 0.0313, 0.034, 0.0335, 0.0301];
        let qs = [0.85, 0.9, 0.88, 0.93, 0.87];
        let mut states = Vec::new();
        let mut params = Vec::new();
        for (&r, &q) in rs.iter().zip(&qs) {
            let mut c = CellParams::reference();
            c.r_int = r;
            c.r_conv_dc = 0.0;
            c.r_switch = 0.0;
            params.push(c);
            states.push(CellState::new(q, 300.0));
        }
        for &p_out in &[10.0, 60.0, 140.0] {
            let base = step_hardwired_baseline(&states, &params, &ThermalNetworkParams::reference(), p_out, 1.0)
                .unwrap();
            let u: Vec<f64> = states.iter().zip(&params).map(|(s, c)| c.ocv.eval(s.q).unwrap()).collect();
            // stationarity: i_j = u_j mu / (2 R_j (1 + mu)); bisect on mu for the demand
            let split = |mu: f64| -> Vec<f64> {
                u.iter().zip(&rs).map(|(u, r)| u * mu / (2.0 * r * (1.0 + mu))).collect()
            };
            let out = |mu: f64| -> f64 {
                split(mu).iter().zip(&u).zip(&rs).map(|((i, u), r)| u * i - r * i * i).sum()
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            while out(hi) < p_out {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if out(mid) < p_out {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let best: f64 = split(hi).iter().zip(&rs).map(|(i, r)| r * i * i).sum();
            assert!(best <= base.loss * (1.0 + 1e-12), "{best} > {}", base.loss);
        }
    }
}
