use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use rbess::battery::{fit_ocv, parse_ocv_table, CellState};
use rbess::io::{load_scenario, write_run_outputs, RunSummary};
use rbess::optimizer::{build_problem, solve, PlanStatus};
use rbess::sim::{run, Scenario};
use rbess::topology::{derive_connectivity, plan_reconfiguration, validate, PackTopology};

#[derive(Parser)]
#[command(name = "rbess", version, about = "Reconfigurable battery pack simulator")]
struct Cli {
    /// Print errors as a JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario in closed loop and write trajectory, topology log and summary.
    Simulate {
        scenario: PathBuf,
        /// Output directory.
        #[arg(long, short, default_value = "out")]
        out: PathBuf,
        /// Cut the profile to this many steps; later faults are dropped.
        #[arg(long)]
        steps: Option<usize>,
        /// Steps between horizon solves.
        #[arg(long)]
        solve_every: Option<usize>,
    },
    /// Solve one horizon problem and print the plan.
    OptimizeStep {
        scenario: PathBuf,
        /// JSON array of `{q, temp, in_service}` cell states; the scenario's
        /// initial states when absent.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Profile step at which the horizon starts.
        #[arg(long, default_value_t = 0)]
        step: usize,
        /// Print per-cell rows instead of JSON.
        #[arg(long)]
        csv: bool,
    },
    /// Check a topology string such as `n=3;001,001`.
    ValidateTopology { topology: String },
    /// Size the series/parallel arrangement for a set of converter limits.
    PlanReconfig {
        /// Target pack voltage, V.
        #[arg(long)]
        vt: f64,
        /// Largest converter output voltage, V.
        #[arg(long)]
        vcmax: f64,
        /// Pack output power, W.
        #[arg(long)]
        pout: f64,
        /// Largest converter output current, A.
        #[arg(long)]
        icmax: f64,
        /// Cells in service.
        #[arg(long)]
        cells: usize,
    },
    /// Run a scenario and report its losses against the hard-wired string.
    CompareBaseline {
        scenario: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        solve_every: Option<usize>,
    },
    /// Fit a piecewise-linear OCV curve to a SoC/voltage table.
    FitOcv {
        table: PathBuf,
        #[arg(long, short = 'k', default_value_t = 3)]
        segments: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json_errors {
                eprintln!("{}", error_json(&e));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use rbess::Error as E;
    let Some(err) = e.chain().find_map(|c| c.downcast_ref::<E>()) else {
        return "other";
    };
    match err {
        E::SocDomain(_) | E::NonPositiveStep(_) | E::InvalidParams(_) | E::InvalidCurve(_) => "battery",
        E::Fit(_) => "fit",
        E::EnergyCorruption(_) => "energy_frame",
        E::Topology(_) | E::LastCellInService(_) | E::Reconfiguration(_) => "topology",
        E::Optimizer(_) | E::NotOptimal { .. } => "optimizer",
        E::BaselineUnreachable { .. } => "baseline",
        E::SimAborted { .. } => "sim_aborted",
        E::Scenario(_) => "scenario",
        E::Profile(_) => "profile",
        E::Io(_) => "io",
        E::Json(_) => "json",
    }
}

fn error_json(e: &anyhow::Error) -> serde_json::Value {
    json!({
        "error": {
            "kind": error_kind(e),
            "message": format!("{e:#}"),
            "chain": e.chain().map(|c| c.to_string()).collect::<Vec<_>>(),
        }
    })
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            scenario,
            out,
            steps,
            solve_every,
        } => simulate(&scenario, &out, steps, solve_every),
        Command::OptimizeStep {
            scenario,
            state,
            step,
            csv,
        } => optimize_step(&scenario, state.as_deref(), step, csv),
        Command::ValidateTopology { topology } => validate_topology(&topology),
        Command::PlanReconfig {
            vt,
            vcmax,
            pout,
            icmax,
            cells,
        } => {
            let spec = plan_reconfiguration(vt, vcmax, pout, icmax, cells)?;
            println!(
                "n_s={}, n_p={} ({} of {} cells, pack current {:.4} A)",
                spec.n_s,
                spec.n_p,
                spec.cells_used(),
                cells,
                spec.i_out
            );
            Ok(())
        }
        Command::CompareBaseline {
            scenario,
            steps,
            solve_every,
        } => compare_baseline(&scenario, steps, solve_every),
        Command::FitOcv { table, segments } => {
            let text = fs::read_to_string(&table).with_context(|| format!("reading {}", table.display()))?;
            let rows = parse_ocv_table(&text)?;
            let fit = fit_ocv(&rows, segments)?;
            println!("# {} segments, rms error {:.6} V", segments, fit.rms_error);
            for s in fit.curve.segments() {
                println!(
                    "[[cells.template.ocv_segments]]\nq_lo = {}\nq_hi = {}\nalpha = {}\nbeta = {}\n",
                    s.q_lo, s.q_hi, s.alpha, s.beta
                );
            }
            Ok(())
        }
    }
}

fn prepare(path: &Path, steps: Option<usize>, solve_every: Option<usize>) -> Result<Scenario> {
    let mut s = load_scenario(path)?;
    if let Some(n) = steps {
        if n == 0 {
            bail!("--steps must be positive");
        }
        s.profile = s.profile.repeated(n);
        let span = s.profile.duration();
        s.faults.retain(|f| {
            let keep = f.time < span;
            if !keep {
                log::warn!("fault on cell {} at {} s falls after the cut and is dropped", f.cell, f.time);
            }
            keep
        });
    }
    if let Some(k) = solve_every {
        s.control.solve_every = k;
    }
    s.validate()?;
    Ok(s)
}

fn simulate(path: &Path, out: &Path, steps: Option<usize>, solve_every: Option<usize>) -> Result<()> {
    let scenario = prepare(path, steps, solve_every)?;
    let result = match run(&scenario) {
        Ok(r) => r,
        Err(e) => {
            if let rbess::Error::SimAborted {
                problem: Some(dump), ..
            } = &e
            {
                fs::create_dir_all(out)?;
                let file = out.join("failed_problem.txt");
                fs::write(&file, dump.as_str())?;
                return Err(anyhow::Error::new(e).context(format!("failed problem written to {}", file.display())));
            }
            return Err(e.into());
        }
    };
    let summary = write_run_outputs(out, &result, &scenario)?;
    print_summary(&summary);
    println!("outputs written to {}", out.display());
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!("{}: {} steps of {} s, seed {}", s.name, s.steps, s.dt, s.seed);
    println!("loss {:.3} J", s.loss_j);
    if let (Some(b), Some(d)) = (s.baseline_loss_j, s.loss_saving_j) {
        println!("hard-wired loss {b:.3} J, saving {d:.3} J");
    }
    if let Some(share) = s.metrics.share_steps_not_above_baseline {
        println!("steps not above hard-wired loss: {:.2} %", 100.0 * share);
    }
    let entry = |v: Option<f64>| v.map_or("never".to_string(), |t| format!("{t} s"));
    println!(
        "SoC band entry {}, temperature band entry {}",
        entry(s.metrics.soc_band.first_entry_s),
        entry(s.metrics.temp_band.first_entry_s)
    );
    if let Some(r) = s.metrics.resistance_power_spearman {
        println!("resistance/power rank correlation {r:.3}");
    }
    for w in &s.warnings {
        println!("warning: {w}");
    }
}

fn compare_baseline(path: &Path, steps: Option<usize>, solve_every: Option<usize>) -> Result<()> {
    let mut scenario = prepare(path, steps, solve_every)?;
    scenario.control.baseline = true;
    let result = run(&scenario)?;
    let m = &result.metrics;
    let base = m.baseline_loss_j.context("baseline did not run")?;
    println!("rbess loss {:.6} J", m.total_loss_j);
    println!("hard-wired loss {base:.6} J");
    println!(
        "delta {:.6} J ({:.3} %)",
        base - m.total_loss_j,
        100.0 * (base - m.total_loss_j) / base.max(f64::MIN_POSITIVE)
    );
    if let Some(share) = m.share_steps_not_above_baseline {
        println!("steps not above hard-wired loss {:.2} %", 100.0 * share);
    }
    Ok(())
}

fn optimize_step(path: &Path, state: Option<&Path>, step: usize, csv: bool) -> Result<()> {
    let scenario = load_scenario(path)?;
    let states: Vec<CellState> = match state {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing state snapshot {}", p.display()))?
        }
        None => scenario.initial.clone(),
    };
    if states.len() != scenario.cells.len() {
        bail!("snapshot has {} cells, the scenario {}", states.len(), scenario.cells.len());
    }
    if step >= scenario.profile.len() {
        bail!("step {step} is past the profile end ({} steps)", scenario.profile.len());
    }
    let demand = scenario.profile.window(step, scenario.balancing.horizon_h);
    let problem = build_problem(
        &states,
        &scenario.cells,
        &scenario.thermal,
        demand,
        &scenario.balancing,
        &scenario.optimizer,
    )?;
    let plan = solve(&problem)?;
    if csv {
        print!("{}", plan.to_csv());
    } else {
        println!("{}", serde_json::to_string_pretty(&plan)?);
    }
    if plan.status != PlanStatus::Optimal {
        bail!(rbess::Error::NotOptimal {
            status: plan.solver_status.clone(),
            detail: format!("{} iterations", plan.iterations),
        });
    }
    Ok(())
}

fn validate_topology(text: &str) -> Result<()> {
    let topology: PackTopology = text.parse()?;
    if let Err(violations) = validate(&topology) {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        bail!(rbess::Error::Topology(list.join("; ")));
    }
    let conn = derive_connectivity(&topology)?;
    let sizes: Vec<usize> = conn.groups.iter().map(Vec::len).collect();
    let shape = if sizes.iter().all(|&s| s == 1) {
        "series".to_string()
    } else if sizes.iter().all(|&s| s == sizes[0]) {
        format!("{}P{}S", sizes[0], sizes.len())
    } else {
        format!("groups of {sizes:?}")
    };
    println!("ok, {shape}");
    let groups: Vec<String> = conn
        .groups
        .iter()
        .map(|g| g.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("|"))
        .collect();
    println!("groups: {}", groups.join(" - "));
    if !conn.bypassed.is_empty() {
        println!("bypassed: {:?}", conn.bypassed);
    }
    Ok(())
}
