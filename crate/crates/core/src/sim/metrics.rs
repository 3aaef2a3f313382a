//! Post-processing of closed-loop trajectories. Everything here is a pure
//! function of the recorded steps.

use serde::{Deserialize, Serialize};

/// One plant step as recorded by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Step start, s.
    pub t: f64,
    /// Demanded pack output, W.
    pub demand: f64,
    /// Output actually delivered by the connected modules, W.
    pub delivered: f64,
    /// Module losses `sum R_tot i^2`, W.
    pub loss: f64,
    /// Loss of the hard-wired string under the same demand, W.
    pub baseline_loss: Option<f64>,
    /// Objective of the plan in force.
    pub objective: f64,
    /// A horizon solve happened at this step.
    pub solved: bool,
    pub topology: String,
    pub cells: Vec<CellRecord>,
}

/// State at step start and the controls applied during the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub q: f64,
    pub temp: f64,
    /// Power drawn from the open-circuit source, W.
    pub p_b: f64,
    /// Module loss, W.
    pub p_l: f64,
    pub i_l: f64,
    /// Managed by the optimizer (not faulted or held in reserve).
    pub in_service: bool,
    /// On the current path of the operating topology.
    pub connected: bool,
    pub xi_e: f64,
    pub xi_t: f64,
}

impl CellRecord {
    /// Module output power, W.
    pub fn output(&self) -> f64 {
        self.p_b - self.p_l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub delta_q: f64,
    pub delta_t: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    /// First step start at which every in-service deviation is in band, s.
    pub first_entry_s: Option<f64>,
    /// Start of the step from which every in-service deviation stays in band
    /// until the end of the run, s.
    pub settle_s: Option<f64>,
    /// Largest excursion beyond the band after the first entry.
    pub max_violation_after_entry: f64,
}

/// A stretch of the run with a fixed number of managed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub start_s: f64,
    pub end_s: f64,
    pub cells_in_service: usize,
    /// Largest module output of any managed cell in the stretch, W.
    pub peak_cell_power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Module losses integrated over the run, J.
    pub total_loss_j: f64,
    pub baseline_loss_j: Option<f64>,
    /// Share of steps in which the module losses do not exceed the string's.
    pub share_steps_not_above_baseline: Option<f64>,
    pub soc_band: BandMetrics,
    pub temp_band: BandMetrics,
    /// RMS module output over each cell's in-service steps, W.
    pub rms_power_w: Vec<f64>,
    pub normalized_rms_power: Vec<f64>,
    pub normalized_resistance: Vec<f64>,
    /// Rank correlation of resistance and RMS output over the cells that
    /// were ever in service.
    pub resistance_power_spearman: Option<f64>,
    pub epochs: Vec<Epoch>,
    /// Largest |delivered - demand|, W.
    pub max_output_error_w: f64,
    pub max_xi_e: f64,
    pub max_xi_t: f64,
}

/// Largest deviation from the in-service mean of `f`, or 0 with fewer than
/// two cells.
pub fn max_deviation(cells: &[CellRecord], f: impl Fn(&CellRecord) -> f64) -> f64 {
    let vals: Vec<f64> = cells.iter().filter(|c| c.in_service).map(&f).collect();
    if vals.len() < 2 {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().fold(0.0, |m, v| m.max((v - mean).abs()))
}

/// Entry and settling times of a deviation series against a band.
pub fn band_metrics(dev: &[f64], band: f64, dt: f64) -> BandMetrics {
    let inside = |d: f64| d <= band;
    let first = dev.iter().position(|&d| inside(d));
    let settle = match dev.iter().rposition(|&d| !inside(d)) {
        None => Some(0),
        Some(k) if k + 1 < dev.len() => Some(k + 1),
        Some(_) => None,
    };
    let max_violation_after_entry = first
        .map(|f| dev[f..].iter().fold(0.0, |m: f64, &d| m.max(d - band)))
        .unwrap_or(0.0);
    BandMetrics {
        first_entry_s: first.map(|k| k as f64 * dt),
        settle_s: settle.map(|k| k as f64 * dt),
        max_violation_after_entry,
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when a
/// series is constant or shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| x / max).collect()
}

/// Aggregates a trajectory. `resistances` are the cells' internal
/// resistances in pack order.
pub fn compute_metrics(steps: &[StepRecord], resistances: &[f64], cfg: &MetricsConfig) -> Metrics {
    let n = resistances.len();
    let dt = cfg.dt;
    let total_loss_j = steps.iter().map(|s| s.loss * dt).sum();
    let have_baseline = !steps.is_empty() && steps.iter().all(|s| s.baseline_loss.is_some());
    let (baseline_loss_j, share) = if have_baseline {
        let total = steps.iter().map(|s| s.baseline_loss.unwrap() * dt).sum();
        let ok = steps
            .iter()
            .filter(|s| s.loss <= s.baseline_loss.unwrap())
            .count();
        (Some(total), Some(ok as f64 / steps.len() as f64))
    } else {
        (None, None)
    };

    let soc_dev: Vec<f64> = steps.iter().map(|s| max_deviation(&s.cells, |c| c.q)).collect();
    let temp_dev: Vec<f64> = steps.iter().map(|s| max_deviation(&s.cells, |c| c.temp)).collect();

    let mut sum_sq = vec![0.0; n];
    let mut count = vec![0usize; n];
    for s in steps {
        for (j, c) in s.cells.iter().enumerate().take(n) {
            if c.in_service {
                sum_sq[j] += c.output().powi(2);
                count[j] += 1;
            }
        }
    }
    let rms: Vec<f64> = sum_sq
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 })
        .collect();
    let used: Vec<usize> = (0..n).filter(|&j| count[j] > 0).collect();
    let spearman_rho = spearman(
        &used.iter().map(|&j| resistances[j]).collect::<Vec<_>>(),
        &used.iter().map(|&j| rms[j]).collect::<Vec<_>>(),
    );

    let mut epochs: Vec<Epoch> = Vec::new();
    for s in steps {
        let m = s.cells.iter().filter(|c| c.in_service).count();
        let peak = s
            .cells
            .iter()
            .filter(|c| c.in_service)
            .fold(f64::NEG_INFINITY, |p, c| p.max(c.output()));
        match epochs.last_mut() {
            Some(e) if e.cells_in_service == m => {
                e.end_s = s.t + dt;
                e.peak_cell_power_w = e.peak_cell_power_w.max(peak);
            }
            _ => epochs.push(Epoch {
                start_s: s.t,
                end_s: s.t + dt,
                cells_in_service: m,
                peak_cell_power_w: peak,
            }),
        }
    }

    Metrics {
        total_loss_j,
        baseline_loss_j,
        share_steps_not_above_baseline: share,
        soc_band: band_metrics(&soc_dev, cfg.delta_q, dt),
        temp_band: band_metrics(&temp_dev, cfg.delta_t, dt),
        normalized_rms_power: normalized(&rms),
        rms_power_w: rms,
        normalized_resistance: normalized(resistances),
        resistance_power_spearman: spearman_rho,
        epochs,
        max_output_error_w: steps.iter().fold(0.0, |m, s| m.max((s.delivered - s.demand).abs())),
        max_xi_e: steps
            .iter()
            .flat_map(|s| s.cells.iter().map(|c| c.xi_e))
            .fold(0.0, f64::max),
        max_xi_t: steps
            .iter()
            .flat_map(|s| s.cells.iter().map(|c| c.xi_t))
            .fold(0.0, f64::max),
    }
}
