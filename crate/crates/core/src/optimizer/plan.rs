//! Solved horizon trajectories and the first-step controls taken from them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EffectiveWeights;
use crate::battery::EnergyFrame;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Optimal trajectories, indexed `[cell position][step]`; `cells[p]` is the
/// pack index (0-based) of position `p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonPlan {
    pub status: PlanStatus,
    pub solver_status: String,
    pub objective: f64,
    pub cells: Vec<usize>,
    /// Internal power, W.
    pub p_b: Vec<Vec<f64>>,
    /// Module loss, W.
    pub p_l: Vec<Vec<f64>>,
    /// Energy relative to horizon start, J.
    pub e: Vec<Vec<f64>>,
    /// Predicted temperature, K.
    pub temp: Vec<Vec<f64>>,
    pub xi_e: Vec<Vec<f64>>,
    pub xi_t: Vec<Vec<f64>>,
    /// `P_l` minus the smallest loss the cone allows at the solution, W.
    pub loss_excess: Vec<Vec<f64>>,
    pub demand: Vec<f64>,
    /// Largest supply/demand mismatch over the horizon, W.
    pub demand_residual: f64,
    /// Largest constraint violation of the returned point.
    pub max_violation: f64,
    pub weights: EffectiveWeights,
    pub frames: Vec<EnergyFrame>,
    pub dt: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub r_prim: f64,
    pub gap_rel: f64,
    pub warnings: Vec<String>,
}

/// Internal power and current for one cell in the first step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellControl {
    /// Pack index, 0-based.
    pub cell: usize,
    pub p_b: f64,
    pub i_l: f64,
    /// Open-circuit voltage used for the conversion, V.
    pub ocv: f64,
}

impl HorizonPlan {
    pub fn horizon(&self) -> usize {
        self.p_b.first().map_or(0, Vec::len)
    }

    pub fn position(&self, cell: usize) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }

    /// Worst `loss_excess / P_l` over cell-steps with `|P_b| > pb_floor`,
    /// as `(position, step, ratio)`.
    pub fn worst_tightness(&self, pb_floor: f64) -> Option<(usize, usize, f64)> {
        let mut worst: Option<(usize, usize, f64)> = None;
        for (p, row) in self.p_b.iter().enumerate() {
            for (k, &pb) in row.iter().enumerate() {
                if pb.abs() <= pb_floor {
                    continue;
                }
                let pl = self.p_l[p][k];
                let ratio = self.loss_excess[p][k] / pl.abs().max(f64::MIN_POSITIVE);
                if worst.map_or(true, |w| ratio > w.2) {
                    worst = Some((p, k, ratio));
                }
            }
        }
        worst
    }

    pub fn max_xi_e(&self, step: usize) -> f64 {
        self.xi_e.iter().map(|r| r[step]).fold(0.0, f64::max)
    }

    pub fn max_xi_t(&self, step: usize) -> f64 {
        self.xi_t.iter().map(|r| r[step]).fold(0.0, f64::max)
    }

    /// One row per cell and step:
    /// `step,cell,p_b_w,p_l_w,e_j,temp_k,xi_e,xi_t,loss_excess_w`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,cell,p_b_w,p_l_w,e_j,temp_k,xi_e,xi_t,loss_excess_w\n");
        for k in 0..self.horizon() {
            for (p, &c) in self.cells.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{k},{},{},{},{},{},{},{},{}",
                    c + 1,
                    self.p_b[p][k],
                    self.p_l[p][k],
                    self.e[p][k],
                    self.temp[p][k],
                    self.xi_e[p][k],
                    self.xi_t[p][k],
                    self.loss_excess[p][k]
                );
            }
        }
        out
    }
}

/// First-step internal power per cell and the current that draws it,
/// `i = P_b / u(q)` at the horizon-start open-circuit voltage.
pub fn extract_controls(plan: &HorizonPlan) -> Result<Vec<CellControl>> {
    if plan.status != PlanStatus::Optimal {
        return Err(Error::NotOptimal {
            status: plan.solver_status.clone(),
            detail: format!(
                "primal residual {:.3e}, relative gap {:.3e}",
                plan.r_prim, plan.gap_rel
            ),
        });
    }
    plan.cells
        .iter()
        .enumerate()
        .map(|(p, &cell)| {
            let f = plan.frames[p];
            let ocv = f.with_energy(0.0).voltage()?;
            let p_b = plan.p_b[p][0];
            Ok(CellControl {
                cell,
                p_b,
                i_l: p_b / ocv,
                ocv,
            })
        })
        .collect()
}
