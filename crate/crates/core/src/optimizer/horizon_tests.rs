use super::*;
use crate::battery::{CellParams, CellState, OcvCurve, ThermalNetworkParams};
use approx::assert_abs_diff_eq;

fn flat(r: f64) -> CellParams {
    CellParams {
        r_int: r,
        ocv: OcvCurve::linear(3.3, 0.6).unwrap(),
        ..CellParams::reference()
    }
}

fn cfg(h: usize) -> BalancingConfig {
    BalancingConfig {
        horizon_h: h,
        ..Default::default()
    }
}

fn solve_plan(
    states: &[CellState],
    params: &[CellParams],
    demand: &[f64],
    config: &BalancingConfig,
    options: &OptimizerOptions,
) -> HorizonPlan {
    let p = build_problem(states, params, &ThermalNetworkParams::reference(), demand, config, options)
        .unwrap();
    solve(&p).unwrap()
}

#[test]
fn idle_single_cell() {
    let plan = solve_plan(
        &[CellState::new(0.5, 300.0)],
        &[flat(0.0313)],
        &[0.0],
        &cfg(1),
        &OptimizerOptions::default(),
    );
    assert_eq!(plan.status, PlanStatus::Optimal);
    assert_abs_diff_eq!(plan.p_b[0][0], 0.0, epsilon = 1e-7);
    assert_abs_diff_eq!(plan.p_l[0][0], 0.0, epsilon = 1e-7);
    assert_abs_diff_eq!(plan.objective, 0.0, epsilon = 1e-7);
}

#[test]
fn idle_horizon_stays_at_rest() {
    let states = vec![CellState::new(0.6, 298.0); 3];
    let plan = solve_plan(&states, &vec![flat(0.03); 3], &[0.0], &cfg(5), &OptimizerOptions::default());
    assert_eq!(plan.status, PlanStatus::Optimal);
    for p in 0..3 {
        for k in 0..5 {
            assert!(plan.p_b[p][k].abs() < 1e-6);
            assert!(plan.e[p][k].abs() < 1e-3);
        }
    }
    assert!(plan.objective.abs() < 1e-6);
}

#[test]
fn symmetric_split() {
    let states = vec![CellState::new(0.5, 300.0); 2];
    let params = vec![flat(0.0313); 2];
    let plan = solve_plan(&states, &params, &[20.0], &cfg(1), &OptimizerOptions::default());
    assert_eq!(plan.status, PlanStatus::Optimal);
    // oracle: bisection on p - r_tot (p/u)^2 = 10
    let r = params[0].r_total();
    let u: f64 = 3.6;
    let (mut lo, mut hi) = (10.0f64, 20.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - r * (mid / u).powi(2) < 10.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for p in 0..2 {
        assert_abs_diff_eq!(plan.p_b[p][0], lo, epsilon = 1e-5);
    }
    let controls = extract_controls(&plan).unwrap();
    assert_abs_diff_eq!(controls[0].i_l, lo / u, epsilon = 1e-6);
}

#[test]
fn higher_resistance_gets_less_power() {
    let states = vec![CellState::new(0.5, 300.0); 2];
    let params = vec![flat(0.02), flat(0.05)];
    let plan = solve_plan(&states, &params, &[30.0], &cfg(1), &OptimizerOptions::default());
    assert!(plan.p_b[1][0].abs() < plan.p_b[0][0].abs());
}

#[test]
fn bypassed_cells_have_no_controls() {
    let mut states = vec![CellState::new(0.5, 300.0); 3];
    states[1].in_service = false;
    let plan = solve_plan(&states, &vec![flat(0.03); 3], &[10.0], &cfg(2), &OptimizerOptions::default());
    let c = extract_controls(&plan).unwrap();
    assert_eq!(c.iter().map(|x| x.cell).collect::<Vec<_>>(), vec![0, 2]);
}

#[test]
fn empty_set_is_an_error() {
    let mut s = CellState::new(0.5, 300.0);
    s.in_service = false;
    let r = build_problem(
        &[s],
        &[flat(0.03)],
        &ThermalNetworkParams::reference(),
        &[1.0],
        &cfg(1),
        &OptimizerOptions::default(),
    );
    assert!(r.is_err());
}

#[test]
fn excessive_demand_is_flagged() {
    let p = build_problem(
        &[CellState::new(0.5, 300.0)],
        &[flat(0.03)],
        &ThermalNetworkParams::reference(),
        &[500.0],
        &cfg(1),
        &OptimizerOptions::default(),
    )
    .unwrap();
    assert!(p.warnings.iter().any(|w| w.contains("exceeds")));
    let plan = solve(&p).unwrap();
    assert_ne!(plan.status, PlanStatus::Optimal);
    assert!(extract_controls(&plan).is_err());
}

#[test]
fn outlier_needs_energy_slack_at_start() {
    // one cell 3.5 % above the others, band 1 %
    let mut states = vec![CellState::new(0.5, 300.0); 4];
    states[3].q = 0.5 + 0.035 * 4.0 / 3.0;
    let plan = solve_plan(&states, &vec![flat(0.03); 4], &[10.0], &cfg(5), &OptimizerOptions::default());
    assert_eq!(plan.status, PlanStatus::Optimal);
    assert!(plan.xi_e[3][0] > 0.0);
    // identical cells sit in the band with no slack
    let same = vec![CellState::new(0.5, 300.0); 4];
    let plan = solve_plan(&same, &vec![flat(0.03); 4], &[10.0], &cfg(5), &OptimizerOptions::default());
    assert!(plan.max_xi_e(0) < 1e-8 && plan.max_xi_t(0) < 1e-8);
}

#[test]
fn reference_pack_problem_size_and_tightness() {
    let params = vec![CellParams::reference(); 15];
    let states: Vec<CellState> = (0..15)
        .map(|j| CellState::new(0.87 + 0.004 * j as f64, 305.0 + 0.5 * (j % 5) as f64))
        .collect();
    let p = build_problem(
        &states,
        &params,
        &ThermalNetworkParams::reference(),
        &[150.0],
        &cfg(20),
        &OptimizerOptions::default(),
    )
    .unwrap();
    // six quantities per cell and step plus two current-limit auxiliaries
    assert_eq!(p.model.n_vars(), 15 * 20 * 8);
    let plan = solve(&p).unwrap();
    assert_eq!(plan.status, PlanStatus::Optimal);
    assert!(plan.demand_residual < 1e-6 * 150.0);
    let (_, _, worst) = plan.worst_tightness(1e-6).unwrap();
    assert!(worst <= 1e-6, "relative loss excess {worst:e}");
}

/// Objective of a 2-cell single step as a function of the first cell's
/// internal power; the second cell covers the rest of the demand.
fn grid_oracle(params: &[CellParams], states: &[CellState], demand: f64) -> f64 {
    let u: Vec<f64> = (0..2).map(|j| params[j].ocv.eval(states[j].q).unwrap()).collect();
    let loss = |j: usize, p: f64| params[j].r_total() * (p / u[j]).powi(2);
    let lim = |j: usize| (params[j].i_min * u[j], params[j].i_max * u[j]);
    // cell 2 output g(p) = p - loss is increasing on p <= u^2 / (2 r)
    let solve_second = |out: f64| -> Option<f64> {
        let r = params[1].r_total();
        let a = r / (u[1] * u[1]);
        // a p^2 - p + out = 0, smaller root
        let disc = 1.0 - 4.0 * a * out;
        if disc < 0.0 {
            return None;
        }
        Some(if a > 0.0 { (1.0 - disc.sqrt()) / (2.0 * a) } else { out })
    };
    let (lo, hi) = lim(0);
    let steps = ((hi - lo) / 1e-3).round() as i64;
    let mut best = f64::INFINITY;
    for s in 0..=steps {
        let p1 = lo + s as f64 * 1e-3;
        let Some(p2) = solve_second(demand - (p1 - loss(0, p1))) else {
            continue;
        };
        let (lo2, hi2) = lim(1);
        if p2 < lo2 || p2 > hi2 {
            continue;
        }
        best = best.min(loss(0, p1) + loss(1, p2));
    }
    best
}

#[test]
fn matches_grid_search_on_small_cases() {
    let cases = [
        (0.02, 0.05, 0.5, 0.6, 25.0),
        (0.031, 0.031, 0.3, 0.9, 40.0),
        (0.01, 0.04, 0.8, 0.2, -20.0),
    ];
    for (r1, r2, q1, q2, d) in cases {
        let params = vec![flat(r1), flat(r2)];
        let states = vec![CellState::new(q1, 300.0), CellState::new(q2, 300.0)];
        let plan = solve_plan(&states, &params, &[d], &cfg(1), &OptimizerOptions::default());
        let loss: f64 = plan.p_l.iter().map(|r| r[0]).sum();
        let oracle = grid_oracle(&params, &states, d);
        assert!((loss - oracle).abs() <= 1e-3 * oracle, "{loss} vs {oracle}");
    }
}

#[test]
fn doubling_penalties_never_raises_slack() {
    let mut states: Vec<CellState> = (0..4).map(|j| CellState::new(0.5 + 0.02 * j as f64, 300.0 + j as f64)).collect();
    states[0].temp = 306.0;
    let params = vec![flat(0.03); 4];
    let opts = OptimizerOptions {
        weights: WeightPolicy::AsConfigured,
        ..Default::default()
    };
    let mut prev = f64::INFINITY;
    for scale in [0.05, 0.1, 0.2, 0.4] {
        let c = BalancingConfig {
            lambda_e: scale,
            lambda_t: scale * 0.01,
            horizon_h: 6,
            ..Default::default()
        };
        let plan = solve_plan(&states, &params, &[20.0], &c, &opts);
        let total: f64 = plan.xi_e.iter().chain(&plan.xi_t).flatten().sum();
        assert!(total <= prev + 1e-6, "{total} > {prev}");
        prev = total;
    }
}

#[test]
fn frozen_denominator_agrees_with_cone() {
    let params = vec![CellParams::reference(); 6];
    let states: Vec<CellState> = (0..6).map(|j| CellState::new(0.88 + 0.01 * j as f64, 306.0)).collect();
    let cone = solve_plan(&states, &params, &[60.0], &cfg(10), &OptimizerOptions::default());
    let frozen = solve_plan(
        &states,
        &params,
        &[60.0],
        &cfg(10),
        &OptimizerOptions {
            loss_model: LossModel::FrozenDenominator,
            ..Default::default()
        },
    );
    assert_eq!(frozen.status, PlanStatus::Optimal);
    assert!((cone.objective - frozen.objective).abs() <= 0.01 * cone.objective.abs());
}

#[test]
fn plan_csv_has_one_row_per_cell_step() {
    let plan = solve_plan(
        &vec![CellState::new(0.5, 300.0); 2],
        &vec![flat(0.03); 2],
        &[5.0],
        &cfg(3),
        &OptimizerOptions::default(),
    );
    let csv = plan.to_csv();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(csv.starts_with("step,cell,p_b_w"));
}

#[test]
fn problem_dump_lists_every_block() {
    let p = build_problem(
        &vec![CellState::new(0.5, 300.0); 2],
        &vec![flat(0.03); 2],
        &ThermalNetworkParams::reference(),
        &[5.0],
        &cfg(2),
        &OptimizerOptions::default(),
    )
    .unwrap();
    let text = p.model.to_text();
    assert!(text.starts_with("conic 1\nvars "));
    assert!(text.contains("var 0 p_b[1,0]"));
    assert_eq!(text.matches("block soc").count(), 2 * 2 * 3);
}
