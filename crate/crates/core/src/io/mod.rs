//! Scenario files, load profiles and run outputs.

mod scenario;

pub use scenario::{
    load_scenario, parse_scenario, read_scenario_file, write_scenario, BalancingSection, CellTemplate,
    CellsSection, ProfileSource, ScenarioFile, ThermalSection,
};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::battery::{CellParams, CellState, ThermalNetworkParams};
use crate::error::{Error, Result};
use crate::optimizer::{BalancingConfig, OptimizerOptions};
use crate::sim::{
    ControlOptions, FaultEvent, LoadProfile, Metrics, ReconfigInputs, Scenario, SimResult, SolveStats,
    TopologyChange,
};

pub const TRAJECTORY_HEADER: &str = "t_s,cell,q,temp_k,p_b_w,p_l_w,i_a,in_service,xi_e,xi_t";
pub const TOPOLOGY_HEADER: &str = "t_s,topology_string,reason";
pub const STEPS_HEADER: &str = "t_s,demand_w,delivered_w,loss_w,baseline_loss_w,objective,solved,topology_string";
pub const SUMMARY_SCHEMA: &str = "rbess-summary/1";

/// Parses `time_s,p_out_w` rows. A header line is optional; spacing must be
/// uniform.
pub fn parse_profile_csv(text: &str) -> Result<LoadProfile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Profile(e.to_string()))?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        if rec.len() != 2 {
            return Err(Error::Profile(format!("line {line}: expected 2 columns, got {}", rec.len())));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(t), Ok(p)) => rows.push((t, p)),
            _ if rows.is_empty() && k == 0 => continue,
            _ => return Err(Error::Profile(format!("line {line}: non-numeric row {:?}", rec.as_slice()))),
        }
    }
    LoadProfile::from_samples(&rows)
}

pub fn read_profile_csv(path: impl AsRef<Path>) -> Result<LoadProfile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Profile(format!("{}: {e}", path.display())))?;
    parse_profile_csv(&text).map_err(|e| Error::Profile(format!("{}: {e}", path.display())))
}

pub fn write_profile_csv(mut w: impl Write, profile: &LoadProfile) -> Result<()> {
    writeln!(w, "time_s,p_out_w")?;
    for (k, p) in profile.power.iter().enumerate() {
        writeln!(w, "{},{}", k as f64 * profile.dt, p)?;
    }
    Ok(())
}

/// One row per step and cell, cells numbered from 1. `in_service` is 1 for
/// cells the optimizer manages.
pub fn write_trajectory_csv(mut w: impl Write, result: &SimResult) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for s in &result.steps {
        for (j, c) in s.cells.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                s.t,
                j + 1,
                c.q,
                c.temp,
                c.p_b,
                c.p_l,
                c.i_l,
                u8::from(c.in_service),
                c.xi_e,
                c.xi_t
            )?;
        }
    }
    Ok(())
}

/// One row per step with pack-level quantities. The baseline column is
/// empty when the string did not run.
pub fn write_steps_csv(mut w: impl Write, result: &SimResult) -> Result<()> {
    writeln!(w, "{STEPS_HEADER}")?;
    for s in &result.steps {
        let base = s.baseline_loss.map_or(String::new(), |b| b.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.t,
            s.demand,
            s.delivered,
            s.loss,
            base,
            s.objective,
            u8::from(s.solved),
            csv_field(&s.topology)
        )?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_topology_log(mut w: impl Write, log: &[TopologyChange]) -> Result<()> {
    writeln!(w, "{TOPOLOGY_HEADER}")?;
    for c in log {
        writeln!(w, "{},{},{}", c.t, csv_field(&c.topology), csv_field(&c.reason))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEcho {
    pub dt: f64,
    pub steps: usize,
    pub peak_abs_w: f64,
    pub mean_w: f64,
}

/// Resolved inputs of a run, without the demand samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub cells: Vec<CellParams>,
    pub initial: Vec<CellState>,
    pub thermal: ThermalNetworkParams,
    pub profile: ProfileEcho,
    pub faults: Vec<FaultEvent>,
    pub balancing: BalancingConfig,
    pub optimizer: OptimizerOptions,
    pub reconfig: ReconfigInputs,
    pub control: ControlOptions,
}

impl ConfigEcho {
    pub fn new(s: &Scenario) -> Self {
        Self {
            cells: s.cells.clone(),
            initial: s.initial.clone(),
            thermal: s.thermal,
            profile: ProfileEcho {
                dt: s.profile.dt,
                steps: s.profile.len(),
                peak_abs_w: s.profile.peak_abs(),
                mean_w: s.profile.mean(),
            },
            faults: s.faults.clone(),
            balancing: s.balancing,
            optimizer: s.optimizer,
            reconfig: s.reconfig.clone(),
            control: s.control,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub loss_j: f64,
    pub baseline_loss_j: Option<f64>,
    /// Baseline loss minus module loss; positive when the pack saves energy.
    pub loss_saving_j: Option<f64>,
    pub metrics: Metrics,
    pub solves: SolveStats,
    pub topology_log: Vec<TopologyChange>,
    pub final_states: Vec<CellState>,
    pub warnings: Vec<String>,
    pub config: ConfigEcho,
}

impl RunSummary {
    pub fn new(result: &SimResult, scenario: &Scenario) -> Self {
        let m = &result.metrics;
        Self {
            schema: SUMMARY_SCHEMA.into(),
            name: result.name.clone(),
            seed: result.seed,
            dt: result.dt,
            steps: result.steps.len(),
            loss_j: m.total_loss_j,
            baseline_loss_j: m.baseline_loss_j,
            loss_saving_j: m.baseline_loss_j.map(|b| b - m.total_loss_j),
            metrics: m.clone(),
            solves: result.solves,
            topology_log: result.topology_log.clone(),
            final_states: result.final_states.clone(),
            warnings: result.warnings.clone(),
            config: ConfigEcho::new(scenario),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Writes `trajectory.csv`, `steps.csv`, `topology.csv` and `summary.json`
/// into `dir`.
pub fn write_run_outputs(dir: impl AsRef<Path>, result: &SimResult, scenario: &Scenario) -> Result<RunSummary> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut traj = std::io::BufWriter::new(fs::File::create(dir.join("trajectory.csv"))?);
    write_trajectory_csv(&mut traj, result)?;
    traj.flush()?;
    let mut steps = std::io::BufWriter::new(fs::File::create(dir.join("steps.csv"))?);
    write_steps_csv(&mut steps, result)?;
    steps.flush()?;
    write_topology_log(fs::File::create(dir.join("topology.csv"))?, &result.topology_log)?;
    let summary = RunSummary::new(result, scenario);
    fs::write(dir.join("summary.json"), summary.to_json()? + "\n")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_csv_accepts_headers_and_comments() {
        let p = parse_profile_csv("time_s, p_out_w\n# warm-up\n0, 1.5\n2, -3\n4, 0\n").unwrap();
        assert_eq!(p.dt, 2.0);
        assert_eq!(p.power, vec![1.5, -3.0, 0.0]);
    }

    #[test]
    fn non_uniform_profiles_are_rejected() {
        let err = parse_profile_csv("0,1\n1,2\n2.5,3\n").unwrap_err().to_string();
        assert!(err.contains("non-uniform spacing at row 3"), "{err}");
        let err = parse_profile_csv("0,1\n1,x\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn profile_csv_round_trips() {
        let p = LoadProfile::new(0.5, vec![1.0, 0.1, -2.75, 1e-7]).unwrap();
        let mut buf = Vec::new();
        write_profile_csv(&mut buf, &p).unwrap();
        assert_eq!(parse_profile_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), p);
    }

    #[test]
    fn topology_strings_are_quoted() {
        let log = vec![TopologyChange {
            t: 3.0,
            topology: "n=2;001,001".into(),
            reason: "fault 2".into(),
        }];
        let mut buf = Vec::new();
        write_topology_log(&mut buf, &log).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_s,topology_string,reason\n3,\"n=2;001,001\",fault 2\n"
        );
    }
}
