//! Assembly of one horizon problem and its solution.

use clarabel::solver::SolverStatus;

use super::conic::{Affine, ConicModel};
use super::constraints::{
    balancing_band, current_bounds_cone, loss_epigraph, soc_bounds_energy, CurrentBounds,
    LossEpigraph, SocBox, KJ,
};
use super::plan::{HorizonPlan, PlanStatus};
use super::{effective_weights, BalancingConfig, EffectiveWeights, LossModel, OptimizerOptions, PredictorHeat};
use crate::battery::{CellParams, CellState, EnergyFrame, ThermalNetworkParams};
use crate::error::{Error, Result};

/// Accuracy below which an almost-converged solve still counts as optimal.
const ACCEPT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub(crate) struct StepVars {
    pub p_b: usize,
    pub p_l: usize,
    /// Relative energy, kJ.
    pub e: usize,
    /// Temperature above ambient, K.
    pub tau: usize,
    pub xi_e: usize,
    pub xi_t: usize,
    pub upper_aux: Option<usize>,
    pub lower_aux: Option<usize>,
}

/// A fully assembled horizon problem over the cells in service.
#[derive(Debug, Clone)]
pub struct HorizonProblem {
    pub model: ConicModel,
    /// Pack indices (0-based) of the cells with variables.
    pub cells: Vec<usize>,
    pub frames: Vec<EnergyFrame>,
    pub losses: Vec<LossEpigraph>,
    pub current_bounds: Vec<CurrentBounds>,
    pub soc_boxes: Vec<SocBox>,
    /// Energy balancing band per cell, `u^2` units.
    pub bands_e: Vec<f64>,
    pub demand: Vec<f64>,
    pub weights: EffectiveWeights,
    pub horizon: usize,
    pub dt: f64,
    pub t_env: f64,
    pub warnings: Vec<String>,
    pub(crate) vars: Vec<Vec<StepVars>>,
    pub(crate) options: OptimizerOptions,
    /// Stored energy (kJ) used in place of the variable in the loss cone.
    pub(crate) frozen: Option<Vec<Vec<f64>>>,
    pub(crate) source: Source,
}

#[derive(Debug, Clone)]
pub(crate) struct Source {
    states: Vec<CellState>,
    params: Vec<CellParams>,
    thermal: ThermalNetworkParams,
    config: BalancingConfig,
}

/// Builds the horizon problem for the cells whose state is in service.
///
/// `demand` is the required pack output for each step; a window shorter than
/// the horizon is padded with its last value. Each cell is linearized on the
/// OCV segment that holds its current SoC.
pub fn build_problem(
    states: &[CellState],
    params: &[CellParams],
    thermal: &ThermalNetworkParams,
    demand: &[f64],
    config: &BalancingConfig,
    options: &OptimizerOptions,
) -> Result<HorizonProblem> {
    let source = Source {
        states: states.to_vec(),
        params: params.to_vec(),
        thermal: *thermal,
        config: *config,
    };
    assemble(&source, demand, options, None)
}

fn assemble(
    src: &Source,
    demand: &[f64],
    options: &OptimizerOptions,
    frozen: Option<Vec<Vec<f64>>>,
) -> Result<HorizonProblem> {
    let Source {
        states,
        params,
        thermal,
        config,
    } = src;
    config.validate()?;
    thermal.validate()?;
    if states.len() != params.len() {
        return Err(Error::Optimizer(format!(
            "{} states but {} parameter sets",
            states.len(),
            params.len()
        )));
    }
    let cells: Vec<usize> = (0..states.len()).filter(|&j| states[j].in_service).collect();
    if cells.is_empty() {
        return Err(Error::Optimizer("no cell in service".into()));
    }
    if demand.is_empty() {
        return Err(Error::Optimizer("empty demand window".into()));
    }
    let h = config.horizon_h;
    let dt = config.dt;
    let demand: Vec<f64> = (0..h).map(|k| demand[k.min(demand.len() - 1)]).collect();
    let m = cells.len();
    let mut warnings = Vec::new();

    let mut frames = Vec::with_capacity(m);
    let mut losses = Vec::with_capacity(m);
    let mut bounds = Vec::with_capacity(m);
    let mut boxes = Vec::with_capacity(m);
    let mut bands = Vec::with_capacity(m);
    for &j in &cells {
        let p = &params[j];
        p.validate()?;
        let q = states[j].q;
        let frame = EnergyFrame::anchor(p, q)?;
        let seg = p.ocv.segments()[frame.segment_index];
        losses.push(loss_epigraph(p.r_total(), frame.c_equiv, frame.e0));
        bounds.push(current_bounds_cone(p.i_min, p.i_max, frame.c_equiv, frame.e0)?);
        let mut b = soc_bounds_energy(p.q_min, p.q_max, &seg, frame.c_equiv, options.segment_bounds);
        if frame.e0 < b.lo || frame.e0 > b.hi {
            warnings.push(format!(
                "cell {}: SoC {q:.4} starts outside [{}, {}]; limit relaxed to the current value",
                j + 1,
                p.q_min,
                p.q_max
            ));
            b.lo = b.lo.min(frame.e0);
            b.hi = b.hi.max(frame.e0);
        }
        boxes.push(b);
        bands.push(balancing_band(frame.alpha, frame.beta, config.delta_q));
        frames.push(frame);
    }

    let heat_share = |j: usize| match options.heat {
        PredictorHeat::TotalLoss => 1.0,
        PredictorHeat::CellShare => {
            let p = &params[j];
            if p.r_total() > 0.0 {
                p.r_int / p.r_total()
            } else {
                0.0
            }
        }
    };
    let c_min = frames.iter().map(|f| f.c_equiv).fold(f64::INFINITY, f64::min);
    let cth_min = cells.iter().map(|&j| params[j].c_th).fold(f64::INFINITY, f64::min);
    let share_max = cells.iter().map(|&j| heat_share(j)).fold(0.0, f64::max);
    let weights = effective_weights(config, m, c_min, cth_min, share_max, options.weights);
    if weights.reduced {
        log::debug!(
            "slack penalties reduced to lambda_e = {:.4e}, lambda_t = {:.4e}",
            weights.lambda_e,
            weights.lambda_t
        );
    }

    // likely infeasible if the first step asks for more than every cell at its current limit
    let cap: f64 = cells
        .iter()
        .zip(&frames)
        .map(|(&j, f)| {
            let u = f.alpha + f.beta * states[j].q;
            let i = params[j].i_max;
            u * i - params[j].r_total() * i * i
        })
        .sum();
    if demand[0] > cap {
        let msg = format!("demand {:.3} W exceeds the pack's {:.3} W capability", demand[0], cap);
        log::warn!("{msg}; attempting the solve anyway");
        warnings.push(msg);
    }

    let mut model = ConicModel::new();
    let mut vars: Vec<Vec<StepVars>> = Vec::with_capacity(m);
    for (p, &j) in cells.iter().enumerate() {
        let mut row = Vec::with_capacity(h);
        for k in 0..h {
            let tag = |v: &str| format!("{v}[{},{k}]", j + 1);
            row.push(StepVars {
                p_b: model.add_var(tag("p_b")),
                p_l: model.add_var(tag("p_l")),
                e: model.add_var(tag("e_kj")),
                tau: model.add_var(tag("tau")),
                xi_e: model.add_var(tag("xi_e")),
                xi_t: model.add_var(tag("xi_t")),
                upper_aux: bounds[p].needs_upper_aux().then(|| model.add_var(tag("i_hi"))),
                lower_aux: bounds[p].needs_lower_aux().then(|| model.add_var(tag("i_lo"))),
            });
        }
        vars.push(row);
    }
    let w_kj = |p: usize, k: usize| Affine::var(vars[p][k].e).plus(frames[p].e0 / KJ);

    for (p, &j) in cells.iter().enumerate() {
        let prm = &params[j];
        let tau0 = states[j].temp - thermal.t_env;
        let t_cap = prm.t_max.max(states[j].temp) - thermal.t_env;
        if states[j].temp > prm.t_max {
            warnings.push(format!(
                "cell {}: temperature {:.2} K starts above its limit {:.2} K",
                j + 1,
                states[j].temp,
                prm.t_max
            ));
        }
        for k in 0..h {
            let v = vars[p][k];
            model.add_cost(v.p_l, 1.0);
            model.add_cost(v.xi_e, weights.lambda_e);
            model.add_cost(v.xi_t, weights.lambda_t);
            model.nonneg(Affine::var(v.xi_e));
            model.nonneg(Affine::var(v.xi_t));

            let w_loss = match &frozen {
                Some(f) => Affine::constant(f[p][k]),
                None => w_kj(p, k),
            };
            losses[p].encode(&mut model, v.p_l, v.p_b, w_loss);
            bounds[p].encode(&mut model, v.p_b, w_kj(p, k), v.upper_aux, v.lower_aux);

            if k == 0 {
                model.eq_zero(Affine::var(v.e));
                model.eq_zero(Affine::var(v.tau).plus(-tau0));
            } else {
                model.nonneg(w_kj(p, k).plus(-boxes[p].lo / KJ));
                model.nonneg(w_kj(p, k).scaled(-1.0).plus(boxes[p].hi / KJ));
                model.nonneg(Affine::term(v.tau, -1.0).plus(t_cap));
            }

            if k + 1 < h {
                let next = vars[p][k + 1];
                // e[k+1] = e[k] - p_b dt
                model.eq_zero(
                    Affine::var(next.e)
                        .add(v.e, -1.0)
                        .add(v.p_b, dt / KJ),
                );
                // tau[k+1] = tau[k] + dt/C_th (heat - tau/R_conv - conduction)
                let g = dt / prm.c_th;
                let mut expr = Affine::var(next.tau)
                    .add(v.tau, -1.0 + g / thermal.r_conv)
                    .add(v.p_l, -g * heat_share(j));
                for nb in [j.checked_sub(1), Some(j + 1)].into_iter().flatten() {
                    if nb >= states.len() {
                        continue;
                    }
                    expr = expr.add(v.tau, g / thermal.r_cnd);
                    match cells.iter().position(|&c| c == nb) {
                        Some(q) => expr = expr.add(vars[q][k].tau, -g / thermal.r_cnd),
                        None => expr = expr.plus(-g / thermal.r_cnd * (states[nb].temp - thermal.t_env)),
                    }
                }
                model.eq_zero(expr);
            }
        }
    }

    for k in 0..h {
        // supply meets demand
        let mut expr = Affine::constant(-demand[k]);
        for row in &vars {
            expr = expr.add(row[k].p_b, 1.0).add(row[k].p_l, -1.0);
        }
        model.eq_zero(expr);

        if m >= 2 {
            let inv_m = 1.0 / m as f64;
            for p in 0..m {
                // u^2 = 2 (E + E0) / C, deviation from the in-service mean
                let mut dev_e = Affine::constant(0.0);
                let mut dev_t = Affine::constant(0.0);
                for q in 0..m {
                    let y = 2.0 * KJ / frames[q].c_equiv;
                    let wq = if q == p { 1.0 - inv_m } else { -inv_m };
                    dev_e = dev_e.sum(&w_kj(q, k).scaled(y * wq));
                    dev_t = dev_t.add(vars[q][k].tau, wq);
                }
                let v = vars[p][k];
                let band = Affine::var(v.xi_e).plus(bands[p]);
                model.nonneg(band.clone().sum(&dev_e.clone().scaled(-1.0)));
                model.nonneg(band.sum(&dev_e));
                let band_t = Affine::var(v.xi_t).plus(config.delta_t);
                model.nonneg(band_t.clone().sum(&dev_t.clone().scaled(-1.0)));
                model.nonneg(band_t.sum(&dev_t));
            }
        }
    }

    Ok(HorizonProblem {
        model,
        cells,
        frames,
        losses,
        current_bounds: bounds,
        soc_boxes: boxes,
        bands_e: bands,
        demand,
        weights,
        horizon: h,
        dt,
        t_env: thermal.t_env,
        warnings,
        vars,
        options: *options,
        frozen,
        source: src.clone(),
    })
}

/// Solves the problem and collects the plan with its diagnostics.
///
/// With the frozen-denominator loss model, a second solve re-freezes the
/// stored energy at the first solution.
pub fn solve(problem: &HorizonProblem) -> Result<HorizonPlan> {
    let first = solve_once(problem)?;
    if problem.options.loss_model != LossModel::FrozenDenominator
        || problem.frozen.is_some()
        || first.status != PlanStatus::Optimal
    {
        return Ok(first);
    }
    let w: Vec<Vec<f64>> = first
        .e
        .iter()
        .zip(&problem.frames)
        .map(|(row, f)| row.iter().map(|e| (e + f.e0) / KJ).collect())
        .collect();
    let refined = assemble(&problem.source, &problem.demand, &problem.options, Some(w))?;
    solve_once(&refined)
}

impl HorizonProblem {
    /// The same problem with the loss denominator frozen at horizon start.
    pub(crate) fn with_initial_freeze(&self) -> Result<Self> {
        let w = self
            .frames
            .iter()
            .map(|f| vec![f.e0 / KJ; self.horizon])
            .collect();
        assemble(&self.source, &self.demand, &self.options, Some(w))
    }
}

fn solve_once(problem: &HorizonProblem) -> Result<HorizonPlan> {
    let target = if problem.options.loss_model == LossModel::FrozenDenominator && problem.frozen.is_none() {
        std::borrow::Cow::Owned(problem.with_initial_freeze()?)
    } else {
        std::borrow::Cow::Borrowed(problem)
    };
    let problem = target.as_ref();
    let sol = problem.model.solve(&problem.options.tolerances)?;
    let status = match sol.status {
        SolverStatus::Solved => PlanStatus::Optimal,
        SolverStatus::AlmostSolved
            if sol.r_prim <= ACCEPT_TOL && (sol.gap_rel <= ACCEPT_TOL || sol.gap_abs <= ACCEPT_TOL) =>
        {
            PlanStatus::Optimal
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => PlanStatus::Infeasible,
        _ => PlanStatus::NumericalFailure,
    };
    let x = &sol.x;
    let (m, h) = (problem.cells.len(), problem.horizon);
    let grid = |f: &dyn Fn(&StepVars, usize) -> f64| -> Vec<Vec<f64>> {
        (0..m)
            .map(|p| (0..h).map(|k| f(&problem.vars[p][k], p)).collect())
            .collect()
    };
    let p_b = grid(&|v, _| x[v.p_b]);
    let p_l = grid(&|v, _| x[v.p_l]);
    let e = grid(&|v, _| x[v.e] * KJ);
    let temp = grid(&|v, _| x[v.tau] + problem.t_env);
    let xi_e = grid(&|v, _| x[v.xi_e]);
    let xi_t = grid(&|v, _| x[v.xi_t]);
    let excess: Vec<Vec<f64>> = (0..m)
        .map(|p| (0..h).map(|k| problem.losses[p].excess(p_l[p][k], p_b[p][k], e[p][k])).collect())
        .collect();
    let demand_residual = (0..h)
        .map(|k| {
            let out: f64 = (0..m).map(|p| p_b[p][k] - p_l[p][k]).sum();
            (out - problem.demand[k]).abs()
        })
        .fold(0.0, f64::max);
    let plan = HorizonPlan {
        status,
        solver_status: format!("{:?}", sol.status),
        objective: sol.objective,
        cells: problem.cells.clone(),
        p_b,
        p_l,
        e,
        temp,
        xi_e,
        xi_t,
        loss_excess: excess,
        demand: problem.demand.clone(),
        demand_residual,
        max_violation: problem.model.max_violation(x),
        weights: problem.weights,
        frames: problem.frames.clone(),
        dt: problem.dt,
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        r_prim: sol.r_prim,
        gap_rel: sol.gap_rel,
        warnings: problem.warnings.clone(),
    };
    if plan.status != PlanStatus::Optimal {
        log::warn!(
            "horizon solve ended with {} after {} iterations (primal residual {:.2e}, gap {:.2e})",
            plan.solver_status,
            plan.iterations,
            plan.r_prim,
            plan.gap_rel
        );
    }
    Ok(plan)
}
