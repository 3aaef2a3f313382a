//! Closed-loop pack simulation.
//!
//! Every control period the horizon problem is solved for the managed cells,
//! the planned cell powers are applied to the plant as currents, and the
//! electro-thermal states advance by one step. Faults bypass a cell and
//! rewire the rest; cells the plan leaves idle are switched out until a later
//! plan uses them again. A hard-wired series string runs alongside under the
//! same demand for comparison.

mod baseline;
mod metrics;
mod profile;
mod sampling;

pub use baseline::{series_current, step_hardwired_baseline, BaselineStep};
pub use metrics::{
    band_metrics, compute_metrics, max_deviation, spearman, BandMetrics, CellRecord, Epoch, Metrics,
    MetricsConfig, StepRecord,
};
pub use profile::{urban_drive_profile, LoadProfile};
pub use sampling::{sample_cells, InitialDistribution};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::battery::{soc_step, thermal_step, CellParams, CellState, ThermalNetworkParams};
use crate::error::{Error, Result};
use crate::optimizer::{build_problem, solve, BalancingConfig, HorizonPlan, OptimizerOptions, PlanStatus};
use crate::topology::{
    aggregate_switch_resistance, apply_reconfiguration, bypass, derive_connectivity, plan_reconfiguration,
    Connectivity, PackTopology, ReconfigSpec,
};

/// Cells planned below this power for a whole control period are switched
/// out, W.
pub const DEFAULT_BYPASS_THRESHOLD_W: f64 = 0.01;

/// Cell powers below this are ignored when checking loss tightness, W.
pub const TIGHTNESS_FLOOR_W: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    /// Time the fault is detected, s.
    pub time: f64,
    /// 1-based cell index.
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconfigInputs {
    /// Required pack voltage, V.
    pub v_target: f64,
    /// Largest output voltage of one converter, V.
    pub v_conv_max: f64,
    /// Largest output current of one converter, A.
    pub i_conv_max: f64,
    /// Output power used to size parallel groups, W. Defaults to the largest
    /// absolute demand in the profile.
    #[serde(default)]
    pub design_power: Option<f64>,
    /// Wiring at the start; derived from the limits when absent.
    #[serde(default)]
    pub initial_topology: Option<PackTopology>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlOptions {
    /// Plant steps between horizon solves; the plan is followed open loop in
    /// between.
    pub solve_every: usize,
    pub bypass_threshold_w: f64,
    /// Resistance of one closed switch. When set, each module's switch
    /// resistance follows the operating topology.
    pub per_switch_r: Option<f64>,
    /// Run the hard-wired string alongside.
    pub baseline: bool,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            solve_every: 1,
            bypass_threshold_w: DEFAULT_BYPASS_THRESHOLD_W,
            per_switch_r: None,
            baseline: true,
        }
    }
}

/// Everything a run needs, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub cells: Vec<CellParams>,
    pub initial: Vec<CellState>,
    pub thermal: ThermalNetworkParams,
    pub profile: LoadProfile,
    pub faults: Vec<FaultEvent>,
    pub balancing: BalancingConfig,
    pub optimizer: OptimizerOptions,
    pub reconfig: ReconfigInputs,
    pub control: ControlOptions,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.cells.is_empty() {
            return bad("no cells".into());
        }
        if self.cells.len() != self.initial.len() {
            return bad(format!(
                "{} cells but {} initial states",
                self.cells.len(),
                self.initial.len()
            ));
        }
        for (j, c) in self.cells.iter().enumerate() {
            c.validate()
                .map_err(|e| Error::Scenario(format!("cell {}: {e}", j + 1)))?;
        }
        for (j, s) in self.initial.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.q) || !(s.temp > 0.0) {
                return bad(format!("cell {}: initial state q={} T={} K is invalid", j + 1, s.q, s.temp));
            }
        }
        if !self.initial.iter().any(|s| s.in_service) {
            return bad("no cell starts in service".into());
        }
        self.thermal.validate()?;
        self.balancing.validate()?;
        if (self.profile.dt - self.balancing.dt).abs() > 1e-12 * self.balancing.dt {
            return bad(format!(
                "profile step {} s differs from control step {} s",
                self.profile.dt, self.balancing.dt
            ));
        }
        if self.control.solve_every == 0 {
            return bad("solve_every must be at least 1".into());
        }
        if !(self.control.bypass_threshold_w >= 0.0) {
            return bad("bypass threshold must be non-negative".into());
        }
        let span = self.profile.duration();
        for (k, f) in self.faults.iter().enumerate() {
            if f.cell == 0 || f.cell > self.cells.len() {
                return bad(format!(
                    "fault {} names cell {} but the pack has {} cells",
                    k + 1,
                    f.cell,
                    self.cells.len()
                ));
            }
            if !(f.time >= 0.0) || f.time >= span {
                return bad(format!(
                    "fault {} (cell {} at {} s) lies outside the profile span [0, {span}) s",
                    k + 1,
                    f.cell,
                    f.time
                ));
            }
        }
        if let Some(t) = &self.reconfig.initial_topology {
            if t.n() != self.cells.len() {
                return bad(format!(
                    "initial topology has {} cells, the pack {}",
                    t.n(),
                    self.cells.len()
                ));
            }
            derive_connectivity(t)?;
        }
        Ok(())
    }

    /// Step at whose start the fault is handled: the first step starting at
    /// or after the fault time.
    pub fn fault_step(&self, event: &FaultEvent) -> usize {
        (event.time / self.profile.dt - 1e-9).ceil().max(0.0) as usize
    }

    fn design_power(&self) -> f64 {
        self.reconfig
            .design_power
            .unwrap_or_else(|| self.profile.peak_abs())
            .max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyChange {
    pub t: f64,
    pub topology: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub count: usize,
    /// Largest `(P_l - min loss) / P_l` over cell-steps with |P_b| above
    /// [`TIGHTNESS_FLOOR_W`].
    pub max_loss_excess_ratio: f64,
    /// Largest demand-equality residual, W.
    pub max_demand_residual: f64,
    pub max_iterations: u32,
    /// Penalties used in the first solve.
    pub lambda_e: f64,
    pub lambda_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub steps: Vec<StepRecord>,
    pub topology_log: Vec<TopologyChange>,
    pub final_states: Vec<CellState>,
    pub resistances: Vec<f64>,
    pub solves: SolveStats,
    pub metrics: Metrics,
    pub warnings: Vec<String>,
}

/// Mutable state of a run between plant steps.
#[derive(Debug, Clone)]
pub struct RunState {
    pub step: usize,
    /// Plant states; `in_service` marks the cells the optimizer manages.
    pub states: Vec<CellState>,
    pub params: Vec<CellParams>,
    /// Wiring of all managed cells.
    pub base: PackTopology,
    /// Wiring in use, with idle cells switched out.
    pub topology: PackTopology,
    pub faulted: BTreeSet<usize>,
    /// Healthy cells left out by the last rewiring.
    pub reserve: BTreeSet<usize>,
    /// Managed cells the current plan leaves idle; they carry no current.
    pub idle: BTreeSet<usize>,
    pub log: Vec<TopologyChange>,
    pub warnings: Vec<String>,
    plan: Option<(HorizonPlan, usize)>,
    needs_solve: bool,
}

fn warn(list: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    list.push(msg);
}

/// Wires the managed cells (1-based) per the reconfiguration limits. Series
/// groups are widened until every managed cell fits; cells that still do
/// not fit go to reserve.
fn arrange(n: usize, managed: &[usize], scenario: &Scenario) -> Result<(PackTopology, Vec<usize>)> {
    let set: BTreeSet<usize> = managed.iter().copied().collect();
    let start = PackTopology::from_connectivity(
        n,
        &Connectivity {
            bypassed: (1..=n).filter(|c| !set.contains(c)).collect(),
            groups: managed.iter().map(|&c| vec![c]).collect(),
        },
    )?;
    let r = &scenario.reconfig;
    let spec = plan_reconfiguration(
        r.v_target,
        r.v_conv_max,
        scenario.design_power(),
        r.i_conv_max,
        managed.len(),
    )?;
    let widened = ReconfigSpec {
        n_s: spec.n_s.max(managed.len() / spec.n_p),
        ..spec
    };
    let topo = apply_reconfiguration(&start, &widened)?;
    let conn = derive_connectivity(&topo)?;
    let reserve = managed.iter().copied().filter(|c| conn.bypassed.contains(c)).collect();
    Ok((topo, reserve))
}

impl RunState {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let n = scenario.cells.len();
        let mut states = scenario.initial.clone();
        let mut warnings = Vec::new();
        let mut reserve = BTreeSet::new();
        let base = match &scenario.reconfig.initial_topology {
            Some(t) => {
                let conn = derive_connectivity(t)?;
                for (j, s) in states.iter_mut().enumerate() {
                    if conn.bypassed.contains(&(j + 1)) && s.in_service {
                        s.in_service = false;
                        reserve.insert(j + 1);
                    }
                }
                t.clone()
            }
            None => {
                let managed: Vec<usize> = (1..=n).filter(|&c| states[c - 1].in_service).collect();
                let (t, spare) = arrange(n, &managed, scenario)?;
                for c in spare {
                    states[c - 1].in_service = false;
                    reserve.insert(c);
                }
                t
            }
        };
        if !reserve.is_empty() {
            warn(
                &mut warnings,
                format!("cells {reserve:?} are not wired in and held in reserve"),
            );
        }
        let log = vec![TopologyChange {
            t: 0.0,
            topology: base.to_string(),
            reason: "initial".into(),
        }];
        let mut run = Self {
            step: 0,
            states,
            params: scenario.cells.clone(),
            topology: base.clone(),
            base,
            faulted: BTreeSet::new(),
            reserve,
            idle: BTreeSet::new(),
            log,
            warnings,
            plan: None,
            needs_solve: true,
        };
        run.update_switch_resistance(scenario)?;
        Ok(run)
    }

    fn time(&self, scenario: &Scenario) -> f64 {
        self.step as f64 * scenario.profile.dt
    }

    fn update_switch_resistance(&mut self, scenario: &Scenario) -> Result<()> {
        if let Some(r) = scenario.control.per_switch_r {
            let rs = aggregate_switch_resistance(&self.topology, r)?;
            for (p, r) in self.params.iter_mut().zip(rs) {
                p.r_switch = r;
            }
        }
        Ok(())
    }

    fn managed(&self) -> Vec<usize> {
        (1..=self.states.len()).filter(|&c| self.states[c - 1].in_service).collect()
    }

    fn set_topology(&mut self, topology: PackTopology, reason: String, scenario: &Scenario) -> Result<()> {
        if topology != self.topology {
            self.log.push(TopologyChange {
                t: self.time(scenario),
                topology: topology.to_string(),
                reason,
            });
            self.topology = topology;
            self.update_switch_resistance(scenario)?;
        }
        Ok(())
    }

    /// Switches out managed cells whose planned power stays below the
    /// threshold over the control period.
    fn follow_plan(&mut self, plan: &HorizonPlan, scenario: &Scenario) -> Result<()> {
        let period = scenario.control.solve_every.min(plan.horizon()).max(1);
        let thr = scenario.control.bypass_threshold_w;
        let idle: Vec<usize> = plan
            .cells
            .iter()
            .enumerate()
            .filter(|(p, _)| plan.p_b[*p][..period].iter().all(|x| x.abs() < thr))
            .map(|(_, &j)| j + 1)
            .collect();
        self.idle = idle.iter().copied().collect();
        let before: BTreeSet<usize> = derive_connectivity(&self.topology)?.bypassed;
        let mut t = self.base.clone();
        for &c in &idle {
            match bypass(&t, c) {
                Ok(next) => t = next,
                // the last cell stays wired but carries no current
                Err(Error::LastCellInService(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let after = derive_connectivity(&t)?.bypassed;
        let out: Vec<usize> = after.difference(&before).copied().collect();
        let back: Vec<usize> = before.difference(&after).copied().collect();
        let mut parts = Vec::new();
        if !out.is_empty() {
            parts.push(format!("idle {out:?}"));
        }
        if !back.is_empty() {
            parts.push(format!("readmit {back:?}"));
        }
        self.set_topology(t, parts.join(" "), scenario)
    }
}

/// Bypasses the faulty cell, drops it from the managed set and rewires the
/// remaining cells before the next solve.
pub fn inject_fault(mut state: RunState, event: &FaultEvent, scenario: &Scenario) -> Result<RunState> {
    let n = state.states.len();
    let c = event.cell;
    if c == 0 || c > n {
        return Err(Error::Topology(format!("fault names cell {c}, pack has {n}")));
    }
    if !state.states[c - 1].in_service {
        warn(
            &mut state.warnings,
            format!("fault on cell {c} at {} s ignored: cell is not in service", event.time),
        );
        state.faulted.insert(c);
        state.reserve.remove(&c);
        return Ok(state);
    }
    let managed = state.managed();
    if managed.len() == 1 {
        return Err(Error::LastCellInService(c));
    }
    state.states[c - 1].in_service = false;
    state.faulted.insert(c);
    let isolated = bypass(&state.base, c)?;
    state.log.push(TopologyChange {
        t: state.time(scenario),
        topology: isolated.to_string(),
        reason: format!("fault {c}"),
    });
    state.topology = isolated;
    let managed = state.managed();
    let (base, spare) = arrange(n, &managed, scenario)?;
    for s in spare {
        state.states[s - 1].in_service = false;
        state.reserve.insert(s);
        let msg = format!("cell {s} moved to reserve after rewiring");
        warn(&mut state.warnings, msg);
    }
    state.base = base.clone();
    state.set_topology(base, format!("rewire after fault {c}"), scenario)?;
    state.needs_solve = true;
    Ok(state)
}

fn abort(step: usize, source: Error, problem: Option<String>) -> Error {
    Error::SimAborted {
        step,
        source: Box::new(source),
        problem: problem.map(Box::new),
    }
}

/// Runs the scenario to the end of its profile.
pub fn run(scenario: &Scenario) -> Result<SimResult> {
    let mut state = RunState::new(scenario)?;
    let n = scenario.cells.len();
    let dt = scenario.profile.dt;
    let h = scenario.balancing.horizon_h;
    let mut steps = Vec::with_capacity(scenario.profile.len());
    let mut stats = SolveStats::default();
    let mut baseline_states: Option<Vec<CellState>> = scenario.control.baseline.then(|| scenario.initial.clone());
    let mut faults = scenario.faults.clone();
    faults.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next_fault = 0;

    for s in 0..scenario.profile.len() {
        state.step = s;
        while next_fault < faults.len() && scenario.fault_step(&faults[next_fault]) <= s {
            let ev = faults[next_fault];
            state = inject_fault(state, &ev, scenario).map_err(|e| abort(s, e, None))?;
            if let Some(b) = baseline_states.as_mut() {
                b[ev.cell - 1].in_service = false;
            }
            next_fault += 1;
        }

        let due = match &state.plan {
            None => true,
            Some((_, at)) => state.needs_solve || s - at >= scenario.control.solve_every || s - at >= h,
        };
        if due {
            let window = scenario.profile.window(s, h);
            let problem = build_problem(
                &state.states,
                &state.params,
                &scenario.thermal,
                window,
                &scenario.balancing,
                &scenario.optimizer,
            )
            .map_err(|e| abort(s, e, None))?;
            let plan = solve(&problem).map_err(|e| abort(s, e, Some(problem.model.to_text())))?;
            if plan.status != PlanStatus::Optimal {
                let detail = format!(
                    "{} after {} iterations, primal residual {:.3e}",
                    plan.solver_status, plan.iterations, plan.r_prim
                );
                return Err(abort(
                    s,
                    Error::NotOptimal {
                        status: format!("{:?}", plan.status),
                        detail,
                    },
                    Some(problem.model.to_text()),
                ));
            }
            if stats.count == 0 {
                stats.lambda_e = plan.weights.lambda_e;
                stats.lambda_t = plan.weights.lambda_t;
            }
            stats.count += 1;
            if let Some((_, _, ratio)) = plan.worst_tightness(TIGHTNESS_FLOOR_W) {
                stats.max_loss_excess_ratio = stats.max_loss_excess_ratio.max(ratio);
            }
            stats.max_demand_residual = stats.max_demand_residual.max(plan.demand_residual);
            stats.max_iterations = stats.max_iterations.max(plan.iterations);
            for w in &problem.warnings {
                log::debug!("step {s}: {w}");
            }
            state.follow_plan(&plan, scenario).map_err(|e| abort(s, e, None))?;
            state.plan = Some((plan, s));
            state.needs_solve = false;
        }

        let (plan, at) = state.plan.as_ref().expect("a plan exists after the solve check");
        let offset = s - at;
        let switched_out = derive_connectivity(&state.topology)
            .map_err(|e| abort(s, e, None))?
            .bypassed;
        let mut cells = Vec::with_capacity(n);
        let mut currents = vec![0.0; n];
        for j in 0..n {
            let st = state.states[j];
            let p = &state.params[j];
            let on = st.in_service && !switched_out.contains(&(j + 1)) && !state.idle.contains(&(j + 1));
            let pos = plan.position(j);
            let mut rec = CellRecord {
                q: st.q,
                temp: st.temp,
                p_b: 0.0,
                p_l: 0.0,
                i_l: 0.0,
                in_service: st.in_service,
                connected: on,
                xi_e: 0.0,
                xi_t: 0.0,
            };
            if let (true, Some(pos)) = (st.in_service, pos) {
                rec.xi_e = plan.xi_e[pos][offset];
                rec.xi_t = plan.xi_t[pos][offset];
                if on {
                    let u = p.ocv.eval(st.q).map_err(|e| abort(s, e, None))?;
                    let i = plan.p_b[pos][offset] / u;
                    currents[j] = i;
                    rec.i_l = i;
                    rec.p_b = u * i;
                    rec.p_l = p.r_total() * i * i;
                }
            }
            cells.push(rec);
        }
        let delivered: f64 = cells.iter().map(|c| c.output()).sum();
        let loss: f64 = cells.iter().map(|c| c.p_l).sum();
        let demand = scenario.profile.power[s];

        let baseline_loss = match baseline_states.take() {
            Some(b) => match step_hardwired_baseline(&b, &state.params, &scenario.thermal, demand, dt) {
                Ok(out) => {
                    baseline_states = Some(out.states);
                    Some(out.loss)
                }
                Err(e) => {
                    warn(&mut state.warnings, format!("baseline stopped at step {s}: {e}"));
                    None
                }
            },
            None => None,
        };

        steps.push(StepRecord {
            t: s as f64 * dt,
            demand,
            delivered,
            loss,
            baseline_loss,
            objective: plan.objective,
            solved: offset == 0,
            topology: state.topology.to_string(),
            cells,
        });

        let temps: Vec<f64> = state.states.iter().map(|c| c.temp).collect();
        let temps =
            thermal_step(&temps, &currents, &state.params, &scenario.thermal, dt).map_err(|e| abort(s, e, None))?;
        for j in 0..n {
            if currents[j] != 0.0 {
                state.states[j] = soc_step(state.states[j], &state.params[j], currents[j], dt)
                    .map_err(|e| abort(s, e, None))?;
            }
            state.states[j].temp = temps[j];
        }
        for j in 0..n {
            let (st, p) = (state.states[j], &state.params[j]);
            if st.in_service && (st.q < p.q_min - 1e-9 || st.q > p.q_max + 1e-9) && currents[j] != 0.0 {
                let moving_out = (st.q < p.q_min && currents[j] > 0.0) || (st.q > p.q_max && currents[j] < 0.0);
                if moving_out {
                    let msg = format!("step {s}: cell {} SoC {:.5} left [{}, {}]", j + 1, st.q, p.q_min, p.q_max);
                    warn(&mut state.warnings, msg);
                }
            }
        }
    }

    let resistances: Vec<f64> = scenario.cells.iter().map(|c| c.r_int).collect();
    let metrics = compute_metrics(
        &steps,
        &resistances,
        &MetricsConfig {
            delta_q: scenario.balancing.delta_q,
            delta_t: scenario.balancing.delta_t,
            dt,
        },
    );
    Ok(SimResult {
        name: scenario.name.clone(),
        seed: scenario.seed,
        dt,
        steps,
        topology_log: state.log,
        final_states: state.states,
        resistances,
        solves: stats,
        metrics,
        warnings: state.warnings,
    })
}
