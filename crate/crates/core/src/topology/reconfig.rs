//! Post-fault sizing of the series/parallel arrangement and its realisation
//! as switch settings.

use serde::{Deserialize, Serialize};

use super::{derive_connectivity, Connectivity, PackTopology, SwitchTriplet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconfigSpec {
    /// Series groups.
    pub n_s: usize,
    /// Cells per parallel group.
    pub n_p: usize,
    pub v_target: f64,
    pub v_conv_max: f64,
    pub i_conv_max: f64,
    /// Pack output current at the target voltage, amperes.
    pub i_out: f64,
}

impl ReconfigSpec {
    pub fn cells_used(&self) -> usize {
        self.n_s * self.n_p
    }
}

/// Ceiling that ignores floating-point noise just above an integer, so
/// `21.0 / 4.2` gives 5 rather than 6.
fn ceil_ratio(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Sizes the pack so each converter stays within its voltage and current
/// limits: `n_s = ceil(V* / V_C,max)`, `n_p = ceil(I_out / i_C,max)`.
///
/// When there are not enough cells, `n_p` is reduced first; the call fails
/// only if `n_s` alone exceeds the available cells.
pub fn plan_reconfiguration(
    v_target: f64,
    v_conv_max: f64,
    p_out: f64,
    i_conv_max: f64,
    in_service_count: usize,
) -> Result<ReconfigSpec> {
    for (name, v) in [
        ("target voltage", v_target),
        ("converter voltage limit", v_conv_max),
        ("output power", p_out),
        ("converter current limit", i_conv_max),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Reconfiguration(format!("{name} must be positive, got {v}")));
        }
    }
    let i_out = p_out / v_target;
    let n_s = ceil_ratio(v_target / v_conv_max).max(1);
    let mut n_p = ceil_ratio(i_out / i_conv_max).max(1);
    if n_s > in_service_count {
        return Err(Error::Reconfiguration(format!(
            "{v_target} V needs {n_s} series groups but only {in_service_count} cells are in service"
        )));
    }
    if n_s * n_p > in_service_count {
        let reduced = in_service_count / n_s;
        log::warn!(
            "{n_s}S{n_p}P needs {} cells, {in_service_count} in service; using {reduced} in parallel",
            n_s * n_p
        );
        n_p = reduced;
    }
    Ok(ReconfigSpec {
        n_s,
        n_p,
        v_target,
        v_conv_max,
        i_conv_max,
        i_out,
    })
}

/// Rewires the in-service cells of `topology` into `n_s` series groups of
/// `n_p` parallel cells, in index order.
///
/// Parallel members must be neighbours, so groups are filled left to right
/// inside each run of consecutive in-service cells. Cells left over are
/// bypassed, which takes the highest indices first. If the runs cannot hold
/// `n_s` groups of `n_p`, the group size is reduced until they can.
pub fn apply_reconfiguration(topology: &PackTopology, spec: &ReconfigSpec) -> Result<PackTopology> {
    if spec.n_s == 0 || spec.n_p == 0 {
        return Err(Error::Reconfiguration("n_s and n_p must be at least 1".into()));
    }
    let conn = derive_connectivity(topology)?;
    let in_service = conn.in_service();
    if spec.n_s > in_service.len() {
        return Err(Error::Reconfiguration(format!(
            "{} series groups requested, {} cells in service",
            spec.n_s,
            in_service.len()
        )));
    }
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for &c in &in_service {
        match runs.last_mut() {
            Some(r) if *r.last().unwrap() + 1 == c => r.push(c),
            _ => runs.push(vec![c]),
        }
    }
    for n_p in (1..=spec.n_p).rev() {
        let mut groups: Vec<Vec<usize>> = Vec::with_capacity(spec.n_s);
        'fill: for run in &runs {
            for chunk in run.chunks_exact(n_p) {
                if groups.len() == spec.n_s {
                    break 'fill;
                }
                groups.push(chunk.to_vec());
            }
        }
        if groups.len() < spec.n_s {
            continue;
        }
        if n_p < spec.n_p {
            log::warn!(
                "in-service cells are not contiguous enough for {}P; using {}P{}S",
                spec.n_p,
                n_p,
                spec.n_s
            );
        }
        let used: std::collections::BTreeSet<usize> = groups.iter().flatten().copied().collect();
        let bypassed = (1..=topology.n()).filter(|c| !used.contains(c)).collect();
        return PackTopology::from_connectivity(topology.n(), &Connectivity { bypassed, groups });
    }
    unreachable!("n_p = 1 always fits when n_s <= in-service count")
}

/// Switch resistance attributed to each module (index 0 is cell 1).
///
/// Every closed switch on the current path is charged to one module: a series
/// or bypass switch to the next in-service module down the string, a
/// parallel pair to the two modules it joins, and a trailing `010` run to the
/// last in-service module. Bypassed modules get zero.
pub fn aggregate_switch_resistance(topology: &PackTopology, per_switch_r: f64) -> Result<Vec<f64>> {
    let conn = derive_connectivity(topology)?;
    let n = topology.n();
    let in_service = conn.in_service();
    let last_in = *in_service.last().expect("valid topology has a cell in service");
    let next_in = |i: usize| in_service.iter().copied().find(|&c| c > i);
    let mut count = vec![0usize; n];
    for i in 1..n {
        let t = topology.triplet(i);
        if t == SwitchTriplet::SERIES || t == SwitchTriplet::BYPASS_CELL {
            if let Some(c) = next_in(i) {
                count[c - 1] += 1;
            }
        } else if t == SwitchTriplet::PARALLEL {
            count[i - 1] += 1;
            count[i] += 1;
        } else if t == SwitchTriplet::BYPASS_NEXT {
            count[last_in - 1] += 1;
        }
    }
    Ok(count.into_iter().map(|c| c as f64 * per_switch_r).collect())
}
