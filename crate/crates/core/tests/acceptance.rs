//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! `ACCEPTANCE_SOLVE_EVERY` overrides the control cadence of the fifteen-cell
//! run (default 1, a solve every step).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbess::battery::{
    module_power, soc_step, thermal_step, to_energy_frame, CellParams, CellState, EnergyFrame,
    ThermalNetworkParams,
};
use rbess::io::load_scenario;
use rbess::optimizer::{build_problem, solve, BalancingConfig, OptimizerOptions, PlanStatus};
use rbess::sim::{max_deviation, run, ControlOptions, FaultEvent, LoadProfile, ReconfigInputs, Scenario, SimResult};
use rbess::topology::{apply_reconfiguration, bypass, plan_reconfiguration, validate, PackTopology};

struct Report {
    rows: Vec<(String, bool, String)>,
}

impl Report {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        println!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.rows.push((id.to_string(), pass, detail));
    }
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn ocv(p: &CellParams, q: f64) -> f64 {
    p.ocv.eval(q).unwrap()
}

/// Module output at current `i`.
fn output_at(p: &CellParams, q: f64, i: f64) -> f64 {
    ocv(p, q) * i - p.r_total() * i * i
}

// ---------------------------------------------------------------- 1 and 2

fn fuzz_scenario(rng: &mut ChaCha8Rng, idx: usize) -> Scenario {
    let n = rng.random_range(2..=15usize);
    let h = rng.random_range(5..=20usize);
    let steps = 4;
    let q_mean = rng.random_range(0.3..0.8);
    let t_mean = rng.random_range(295.0..315.0);
    let mut cells = Vec::with_capacity(n);
    let mut initial = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = CellParams::reference();
        p.r_int *= rng.random_range(0.8..1.2);
        let q = (q_mean + rng.random_range(-0.1..0.1f64)).clamp(0.08, 0.92);
        let t = t_mean + rng.random_range(-10.0..10.0);
        cells.push(p);
        initial.push(CellState::new(q, t));
    }
    let faults = if n >= 3 && rng.random_bool(0.3) {
        vec![FaultEvent {
            time: 2.0,
            cell: rng.random_range(1..=n),
        }]
    } else {
        Vec::new()
    };
    // capability of the cells still in service at each step
    let discharge = |k: usize| -> f64 {
        (0..n)
            .filter(|&j| !faults.iter().any(|f| f.cell == j + 1 && f.time <= k as f64))
            .map(|j| output_at(&cells[j], initial[j].q, cells[j].i_max))
            .sum()
    };
    let demand: Vec<f64> = (0..steps)
        .map(|k| rng.random_range(-0.4..0.8) * discharge(k))
        .collect();
    let peak = demand.iter().fold(1.0f64, |m, d| m.max(d.abs()));
    Scenario {
        name: format!("fuzz-{idx}"),
        cells,
        initial,
        thermal: ThermalNetworkParams::reference(),
        profile: LoadProfile::new(1.0, demand).unwrap(),
        faults,
        balancing: BalancingConfig {
            horizon_h: h,
            ..BalancingConfig::default()
        },
        optimizer: OptimizerOptions::default(),
        reconfig: ReconfigInputs {
            // one series string of every cell, before and after the fault
            v_target: 4.2,
            v_conv_max: 4.2,
            i_conv_max: 1000.0,
            design_power: Some(peak),
            initial_topology: None,
        },
        control: ControlOptions {
            baseline: false,
            ..ControlOptions::default()
        },
        seed: idx as u64,
    }
}

fn feasibility_and_tightness(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut solves = 0usize;
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0f64;
    let mut worst_at = String::new();
    for idx in 0..200 {
        let sc = fuzz_scenario(&mut rng, idx);
        match run(&sc) {
            Ok(res) => {
                solves += res.solves.count;
                if res.solves.max_loss_excess_ratio > worst_ratio {
                    worst_ratio = res.solves.max_loss_excess_ratio;
                    worst_at = sc.name.clone();
                }
            }
            Err(e) => failures.push(format!("{}: {e}", sc.name)),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report.check(
        "1 feasibility",
        failures.is_empty() && secs < 300.0,
        format!(
            "200 scenarios, {solves} horizon solves, {} non-optimal or failed runs, {secs:.1} s (target < 300 s){}",
            failures.len(),
            failures.first().map_or(String::new(), |f| format!("; first: {f}"))
        ),
    );
    report.check(
        "2 relaxation tightness",
        worst_ratio <= 1e-6 && failures.is_empty(),
        format!("worst (P_l - min loss) / P_l over |P_b| > 1e-6 W is {worst_ratio:.3e} ({worst_at}), limit 1e-6"),
    );
}

// ---------------------------------------------------------------- 3

/// Smallest two-cell loss meeting `demand` with cell 1 on a 1 mW grid and
/// cell 2 solved exactly from the balance.
fn grid_min_loss(params: &[CellParams; 2], qs: [f64; 2], demand: f64) -> Option<f64> {
    let u = [ocv(&params[0], qs[0]), ocv(&params[1], qs[1])];
    let a = [params[0].r_total() / (u[0] * u[0]), params[1].r_total() / (u[1] * u[1])];
    let lo = [params[0].i_min * u[0], params[1].i_min * u[1]];
    let hi = [params[0].i_max * u[0], params[1].i_max * u[1]];
    let mut best: Option<f64> = None;
    let steps = ((hi[0] - lo[0]) / 1e-3).floor() as usize;
    for k in 0..=steps {
        let pb1 = lo[0] + k as f64 * 1e-3;
        let out2 = demand - (pb1 - a[0] * pb1 * pb1);
        let disc = 1.0 - 4.0 * a[1] * out2;
        if disc < 0.0 {
            continue;
        }
        let pb2 = 2.0 * out2 / (1.0 + disc.sqrt());
        if pb2 < lo[1] || pb2 > hi[1] {
            continue;
        }
        let loss = a[0] * pb1 * pb1 + a[1] * pb2 * pb2;
        if best.is_none_or(|b| loss < b) {
            best = Some(loss);
        }
    }
    best
}

fn oracle_equivalence(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    let mut done = 0;
    while done < 50 {
        let mut params = [CellParams::reference(), CellParams::reference()];
        let qs = [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)];
        for p in &mut params {
            p.r_int = rng.random_range(0.02..0.05);
        }
        let cap: f64 = (0..2).map(|j| output_at(&params[j], qs[j], params[j].i_max)).sum();
        let demand = rng.random_range(-0.4..0.8) * cap;
        if demand.abs() < 1.0 {
            continue;
        }
        done += 1;
        let states = [CellState::new(qs[0], 300.0), CellState::new(qs[1], 300.0)];
        let config = BalancingConfig {
            horizon_h: 1,
            ..BalancingConfig::default()
        };
        let plan = build_problem(
            &states,
            &params,
            &ThermalNetworkParams::reference(),
            &[demand],
            &config,
            &OptimizerOptions::default(),
        )
        .and_then(|p| solve(&p));
        let plan = match plan {
            Ok(p) if p.status == PlanStatus::Optimal => p,
            Ok(p) => {
                bad.push(format!("instance {done}: {}", p.solver_status));
                continue;
            }
            Err(e) => {
                bad.push(format!("instance {done}: {e}"));
                continue;
            }
        };
        let socp: f64 = plan.p_l.iter().map(|row| row[0]).sum();
        let Some(grid) = grid_min_loss(&params, qs, demand) else {
            bad.push(format!("instance {done}: grid found no feasible split"));
            continue;
        };
        let rel = (socp - grid).abs() / grid.max(1e-9);
        worst = worst.max(rel);
        if rel > 1e-3 {
            bad.push(format!("instance {done}: socp {socp:.6} W grid {grid:.6} W"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report.check(
        "3 oracle equivalence",
        bad.is_empty() && secs < 60.0,
        format!(
            "50 two-cell single-step instances, worst relative gap {worst:.2e} (limit 1e-3), {} mismatches, {secs:.1} s{}",
            bad.len(),
            bad.first().map_or(String::new(), |b| format!("; first: {b}"))
        ),
    );
}

// ---------------------------------------------------------------- 4, 5, 6

/// Largest energy-balancing slack over managed cells at each step.
fn slack_trajectory(res: &SimResult) -> Vec<f64> {
    res.steps
        .iter()
        .map(|s| {
            s.cells
                .iter()
                .filter(|c| c.in_service)
                .map(|c| c.xi_e.max(0.0))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Largest managed-cell output per stretch between faults, counted from
/// `from_s` on.
fn epoch_peaks(res: &SimResult, from_s: f64) -> Vec<f64> {
    res.metrics
        .epochs
        .iter()
        .map(|e| {
            res.steps
                .iter()
                .filter(|s| s.t >= e.start_s.max(from_s) && s.t < e.end_s)
                .flat_map(|s| s.cells.iter().filter(|c| c.in_service).map(|c| c.output()))
                .fold(0.0, f64::max)
        })
        .collect()
}

fn table2(report: &mut Report) {
    let mut sc = load_scenario(scenario_path("table2.toml")).expect("fifteen-cell scenario loads");
    if let Some(k) = std::env::var("ACCEPTANCE_SOLVE_EVERY").ok().and_then(|v| v.parse().ok()) {
        sc.control.solve_every = k;
    }
    let start = Instant::now();
    let res = match run(&sc) {
        Ok(r) => r,
        Err(e) => {
            for id in ["4 fifteen-cell run", "5 loss comparison", "6 resistance-aware allocation"] {
                report.check(id, false, format!("run failed: {e}"));
            }
            return;
        }
    };
    let secs = start.elapsed().as_secs_f64();
    let m = &res.metrics;
    let budget = if sc.control.solve_every >= 10 { 300.0 } else { 1800.0 };
    println!(
        "       fifteen-cell run: {} steps, solve every {} step(s), {} solves, {secs:.0} s",
        res.steps.len(),
        sc.control.solve_every,
        res.solves.count
    );
    report.check(
        "4 runtime",
        secs < budget,
        format!("{secs:.0} s at a solve every {} step(s), target < {budget:.0} s", sc.control.solve_every),
    );

    // SoC band: enter within 100..600 s and stay. The band is enforced on
    // u^2 = 2(E+E0)/C, whose pack mean is not the mean SoC mapped through the
    // OCV; 1e-4 SoC absorbs that mismatch.
    let sb = m.soc_band;
    let entry_ok = sb.first_entry_s.is_some_and(|t| (100.0..=600.0).contains(&t));
    report.check(
        "4a SoC band",
        entry_ok && sb.max_violation_after_entry <= 1e-4,
        format!(
            "first entry {:?} s (window 100-600), largest excursion beyond 1 % afterwards {:.2e} (limit 1e-4)",
            sb.first_entry_s, sb.max_violation_after_entry
        ),
    );
    let tb = m.temp_band;
    report.check(
        "4b temperature band",
        tb.first_entry_s.is_some_and(|t| (200.0..=1500.0).contains(&t)),
        format!(
            "first entry {:?} s (window 200-1500), settled from {:?} s",
            tb.first_entry_s, tb.settle_s
        ),
    );

    let mut frozen_err = 0.0f64;
    for f in &sc.faults {
        let k0 = sc.fault_step(f);
        let j = f.cell - 1;
        let q0 = res.steps[k0].cells[j].q;
        for s in &res.steps[k0..] {
            frozen_err = frozen_err.max((s.cells[j].q - q0).abs());
        }
        frozen_err = frozen_err.max((res.final_states[j].q - q0).abs());
    }
    report.check(
        "4c bypassed SoC frozen",
        frozen_err <= 1e-12,
        format!("largest SoC change of a bypassed cell after its fault {frozen_err:.1e} (limit 1e-12)"),
    );

    let xs = slack_trajectory(&res);
    let rises: Vec<(usize, f64)> = xs
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0] + 1e-9)
        .map(|(k, w)| (k + 1, w[1] - w[0]))
        .collect();
    let biggest_rise = rises.iter().map(|r| r.1).fold(0.0, f64::max);
    let first_zero = xs.iter().position(|&x| x <= 1e-9);
    report.check(
        "4d slack decays to zero",
        rises.is_empty() && xs.last().is_some_and(|&x| x <= 1e-9),
        format!(
            "max slack {:.3e} at start, first zero at step {:?}, {} later rises (largest {biggest_rise:.2e}, first at step {:?}), final {:.1e}",
            xs[0],
            first_zero,
            rises.len(),
            rises.first().map(|r| r.0),
            xs.last().copied().unwrap_or(f64::NAN)
        ),
    );

    let raw: Vec<f64> = m.epochs.iter().map(|e| e.peak_cell_power_w).collect();
    let settled = epoch_peaks(&res, sb.first_entry_s.unwrap_or(0.0));
    let rising = |v: &[f64]| v.len() == sc.faults.len() + 1 && v.windows(2).all(|w| w[1] > w[0]);
    report.check(
        "4e survivor peak power",
        rising(&settled),
        format!(
            "peak managed-cell output per epoch once SoC is balanced {:.2?} W (whole epochs {:.2?} W)",
            settled, raw
        ),
    );

    let base = m.baseline_loss_j.unwrap_or(f64::NAN);
    let share = m.share_steps_not_above_baseline.unwrap_or(0.0);
    report.check(
        "5 loss comparison",
        m.total_loss_j < base && share >= 0.95,
        format!(
            "pack loss {:.1} J vs hard-wired {:.1} J, steps not above hard-wired {:.2} % (need >= 95 %)",
            m.total_loss_j,
            base,
            100.0 * share
        ),
    );
    let rho = m.resistance_power_spearman;
    report.check(
        "6 resistance-aware allocation",
        rho.is_some_and(|r| r < 0.0),
        format!("Spearman(resistance, RMS output) = {rho:?}"),
    );
}

// ---------------------------------------------------------------- 7

fn bench_run(report: &mut Report) {
    let sc = load_scenario(scenario_path("section5.toml")).expect("five-cell scenario loads");
    let problem = build_problem(
        &sc.initial,
        &sc.cells,
        &sc.thermal,
        sc.profile.window(0, sc.balancing.horizon_h),
        &sc.balancing,
        &sc.optimizer,
    )
    .unwrap();
    let plan = solve(&problem).unwrap();
    let p3 = plan.p_b[plan.position(2).unwrap()][0];
    let pos5 = plan.position(4).unwrap();
    let p5 = plan.p_b[pos5][0];
    let cap5 = problem.current_bounds[pos5].max_power(0.0);
    report.check(
        "7a first allocation",
        plan.status == PlanStatus::Optimal && p3.abs() < 1e-3 && (cap5 - p5).abs() <= 1e-6 * cap5,
        format!("cell 3 gets {p3:.2e} W, cell 5 gets {p5:.6} W of a {cap5:.6} W cap"),
    );
    let res = match run(&sc) {
        Ok(r) => r,
        Err(e) => {
            report.check("7b-d five-cell run", false, format!("run failed: {e}"));
            return;
        }
    };
    let entry = res.metrics.soc_band.first_entry_s;
    report.check(
        "7b SoC band",
        entry.is_some_and(|t| (120.0..=480.0).contains(&t)),
        format!("all cells within 1 % from {entry:?} s (window 120-480 s)"),
    );
    let k0 = sc.fault_step(&sc.faults[0]);
    let worst = res.steps[k0..]
        .iter()
        .map(|s| (s.delivered - s.demand).abs())
        .fold(0.0, f64::max);
    report.check(
        "7c output after fault",
        worst <= 1e-6,
        format!("largest |delivered - 50 W| after the fault {worst:.2e} W (limit 1e-6)"),
    );
    let mut excess = f64::NEG_INFINITY;
    for s in &res.steps {
        let dev = max_deviation(&s.cells, |c| c.temp);
        let xi = s
            .cells
            .iter()
            .filter(|c| c.in_service)
            .map(|c| c.xi_t.max(0.0))
            .fold(0.0, f64::max);
        excess = excess.max(dev - sc.balancing.delta_t - xi);
    }
    report.check(
        "7d temperature band",
        excess <= 1e-9,
        format!("largest deviation minus (0.5 K + slack) {excess:.2e} K"),
    );
}

// ---------------------------------------------------------------- 8

fn suites(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    let p = CellParams::reference();

    let mut rt = 0.0f64;
    for _ in 0..2000 {
        let q0 = rng.random_range(0.0..=1.0);
        let seg = p.ocv.segment_index(q0).unwrap();
        let s = p.ocv.segments()[seg];
        let q = rng.random_range(s.q_lo..=s.q_hi);
        let f = to_energy_frame(&p, q, seg, q0).unwrap();
        rt = rt.max((f.soc().unwrap() - q).abs());
    }
    let mut heat = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..12usize);
        let temps: Vec<f64> = (0..n).map(|_| rng.random_range(280.0..340.0)).collect();
        let currents: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let dt = rng.random_range(0.01..2.0);
        let net = ThermalNetworkParams {
            r_conv: f64::INFINITY,
            ..ThermalNetworkParams::reference()
        };
        let cells = vec![p.clone(); n];
        let out = thermal_step(&temps, &currents, &cells, &net, dt).unwrap();
        let before: f64 = temps.iter().map(|t| p.c_th * t).sum();
        let after: f64 = out.iter().map(|t| p.c_th * t).sum();
        let joule: f64 = currents.iter().map(|i| p.r_int * i * i * dt).sum();
        heat = heat.max((after - before - joule).abs() / before);
    }
    let mut rate = 0.0f64;
    let mut flat = p.clone();
    flat.r_conv_dc = 0.0;
    flat.r_switch = 0.0;
    for _ in 0..2000 {
        let q = rng.random_range(0.1..0.9);
        let i = rng.random_range(-10.0..10.0);
        let dt = rng.random_range(0.01..=1.0);
        let f = EnergyFrame::anchor(&flat, q).unwrap();
        let next = soc_step(CellState::new(q, 300.0), &flat, i, dt).unwrap();
        let de = f.with_soc(next.q).e - f.e;
        let expect = -module_power(&flat, q, i).unwrap().internal * dt;
        if expect.abs() > 1e-9 {
            rate = rate.max((de - expect).abs() / expect.abs());
        }
    }
    report.check(
        "8a cell model",
        rt <= 1e-9 && heat <= 1e-12 && rate <= 0.005,
        format!(
            "energy round trip {rt:.1e} (1e-9), adiabatic heat balance {heat:.1e} relative, energy rate vs internal power {:.3} % (0.5 %)",
            100.0 * rate
        ),
    );

    let mut topo_fail = Vec::new();
    let mut cases = 0;
    for n in 1..=10usize {
        for _ in 0..60 {
            let mut t = PackTopology::all_series(n).unwrap();
            let drop = rng.random_range(0..n);
            for _ in 0..drop {
                t = bypass(&t, rng.random_range(1..=n)).unwrap_or(t);
            }
            let k = t.connectivity().unwrap().in_service().len();
            let vmax = rng.random_range(1.0..5.0);
            let v = vmax * rng.random_range(1..=k) as f64 * rng.random_range(0.7..1.0);
            let icmax = rng.random_range(1.0..10.0);
            let pout = v * icmax * rng.random_range(0.1..(k as f64));
            let Ok(spec) = plan_reconfiguration(v, vmax, pout, icmax, k) else {
                continue;
            };
            cases += 1;
            match apply_reconfiguration(&t, &spec) {
                Ok(r) if validate(&r).is_ok() => {}
                Ok(r) => topo_fail.push(format!("{t} -> {r}")),
                Err(e) => topo_fail.push(format!("{t}: {e}")),
            }
        }
    }
    report.check(
        "8b topology fuzz",
        topo_fail.is_empty() && cases > 0,
        format!("{cases} feasible specs up to 10 cells, {} invalid results", topo_fail.len()),
    );

    let cases: [(f64, f64, f64, f64, usize, usize, usize); 4] = [
        (12.0, 4.2, 50.0, 5.0, 5, 3, 1),
        (21.0, 4.2, 420.0, 10.0, 15, 5, 2),
        (12.6, 4.2, 37.8, 3.0, 6, 3, 1),
        (8.4, 4.2, 84.0, 5.0, 12, 2, 2),
    ];
    let mut wrong = Vec::new();
    for (vt, vc, po, ic, cells, ns, np) in cases {
        let s = plan_reconfiguration(vt, vc, po, ic, cells).unwrap();
        if (s.n_s, s.n_p) != (ns, np) {
            wrong.push(format!("{vt}/{vc} V, {po} W, {ic} A: got {}S{}P", s.n_s, s.n_p));
        }
    }
    report.check(
        "8c sizing rounding",
        wrong.is_empty(),
        format!("{} cases at exact integer ratios, {} wrong {:?}", cases.len(), wrong.len(), wrong),
    );

    let sc = load_scenario(scenario_path("section5.toml")).unwrap();
    let a = run(&sc).unwrap();
    let b = run(&sc).unwrap();
    report.check(
        "8d determinism",
        a == b,
        "two runs of the five-cell scenario compared field by field".into(),
    );
}

fn main() -> ExitCode {
    let mut report = Report { rows: Vec::new() };
    let start = Instant::now();
    feasibility_and_tightness(&mut report);
    oracle_equivalence(&mut report);
    bench_run(&mut report);
    suites(&mut report);
    table2(&mut report);
    let failed: Vec<&str> = report.rows.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!(
        "acceptance: {} of {} checks passed in {:.0} s",
        report.rows.len() - failed.len(),
        report.rows.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
