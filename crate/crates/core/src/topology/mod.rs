//! Switch-matrix encoding of the pack.
//!
//! Three switches sit between modules `i` and `i + 1`. Modelled on module
//! terminals, `s1` joins `+i` to `+(i+1)`, `s2` joins `-i` to `-(i+1)` and `s3`
//! joins `-i` to `+(i+1)`. The pack output is taken between `+1` and `-n`.
//!
//! | pattern | meaning |
//! |---------|---------|
//! | `001`   | `i` and `i+1` in series |
//! | `110`   | `i` and `i+1` in parallel |
//! | `100`   | cell `i` bypassed |
//! | `010`   | cell `i+1` bypassed; only in a trailing run of `010` |
//!
//! A trailing run is what bypasses several cells at the end of the string:
//! the `-` rail is carried through `s2` down to `-n`.

mod reconfig;

pub use reconfig::{
    aggregate_switch_resistance, apply_reconfiguration, plan_reconfiguration, ReconfigSpec,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SwitchTriplet {
    pub s1: bool,
    pub s2: bool,
    pub s3: bool,
}

impl SwitchTriplet {
    pub const SERIES: Self = Self::new(false, false, true);
    pub const PARALLEL: Self = Self::new(true, true, false);
    pub const BYPASS_CELL: Self = Self::new(true, false, false);
    pub const BYPASS_NEXT: Self = Self::new(false, true, false);

    pub const fn new(s1: bool, s2: bool, s3: bool) -> Self {
        Self { s1, s2, s3 }
    }

    /// Number of closed switches.
    pub fn closed(&self) -> usize {
        self.s1 as usize + self.s2 as usize + self.s3 as usize
    }

    fn parse(s: &str) -> Option<Self> {
        let b: Vec<bool> = s
            .chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<_>>()?;
        (b.len() == 3).then(|| Self::new(b[0], b[1], b[2]))
    }
}

impl fmt::Display for SwitchTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.s1 as u8, self.s2 as u8, self.s3 as u8)
    }
}

/// One problem found by [`validate`]; `index` is the 1-based junction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "junction {}: {}", self.index, self.message)
    }
}

/// Cells are numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackTopology {
    n: usize,
    triplets: Vec<SwitchTriplet>,
}

/// Electrical structure of a valid topology.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Connectivity {
    pub bypassed: BTreeSet<usize>,
    /// Series groups from the positive terminal down; each holds the cells
    /// wired in parallel inside it, in index order.
    pub groups: Vec<Vec<usize>>,
}

impl Connectivity {
    pub fn in_service(&self) -> Vec<usize> {
        self.groups.iter().flatten().copied().collect()
    }

    pub fn n_series(&self) -> usize {
        self.groups.len()
    }
}

impl PackTopology {
    /// Builds a topology; the result may still fail [`validate`].
    pub fn new(n: usize, triplets: Vec<SwitchTriplet>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("a pack needs at least one cell".into()));
        }
        if triplets.len() != n - 1 {
            return Err(Error::Topology(format!(
                "{n} cells need {} switch triplets, got {}",
                n - 1,
                triplets.len()
            )));
        }
        Ok(Self { n, triplets })
    }

    pub fn all_series(n: usize) -> Result<Self> {
        Self::new(n, vec![SwitchTriplet::SERIES; n.saturating_sub(1)])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn triplets(&self) -> &[SwitchTriplet] {
        &self.triplets
    }

    /// Triplet between cells `i` and `i + 1`, 1-based.
    pub fn triplet(&self, i: usize) -> SwitchTriplet {
        self.triplets[i - 1]
    }

    pub fn switch_count(&self) -> usize {
        3 * self.triplets.len()
    }

    pub fn is_valid(&self) -> bool {
        validate(self).is_ok()
    }

    fn is_bypassed_raw(&self, cell: usize) -> bool {
        (cell < self.n && self.triplet(cell) == SwitchTriplet::BYPASS_CELL)
            || (cell >= 2 && self.triplet(cell - 1) == SwitchTriplet::BYPASS_NEXT)
    }

    /// Canonical switch settings for a partition of the cells.
    ///
    /// Groups must be listed in index order, cells inside a group must be
    /// consecutive indices, and every cell must be either grouped or bypassed.
    pub fn from_connectivity(n: usize, conn: &Connectivity) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("a pack needs at least one cell".into()));
        }
        let mut seen = BTreeSet::new();
        let mut last = 0usize;
        for g in &conn.groups {
            if g.is_empty() {
                return Err(Error::Topology("empty series group".into()));
            }
            for w in g.windows(2) {
                if w[1] != w[0] + 1 {
                    return Err(Error::Topology(format!(
                        "cells {} and {} are not adjacent and cannot share a parallel group",
                        w[0], w[1]
                    )));
                }
            }
            if g[0] <= last {
                return Err(Error::Topology("groups are not in index order".into()));
            }
            last = *g.last().unwrap();
            seen.extend(g.iter().copied());
        }
        if last > n || conn.bypassed.iter().any(|&c| c == 0 || c > n) {
            return Err(Error::Topology(format!("cell index out of range 1..={n}")));
        }
        if seen.is_empty() {
            return Err(Error::Topology("no cell in service".into()));
        }
        if !seen.is_disjoint(&conn.bypassed) || seen.len() + conn.bypassed.len() != n {
            return Err(Error::Topology(
                "every cell must be either in a group or bypassed, exactly once".into(),
            ));
        }
        let mut group_of = vec![usize::MAX; n + 1];
        for (g, cells) in conn.groups.iter().enumerate() {
            for &c in cells {
                group_of[c] = g;
            }
        }
        let last_in = last;
        let mut triplets = Vec::with_capacity(n - 1);
        for i in 1..n {
            let t = if i >= last_in {
                SwitchTriplet::BYPASS_NEXT
            } else if conn.bypassed.contains(&i) {
                SwitchTriplet::BYPASS_CELL
            } else if group_of[i + 1] == group_of[i] {
                SwitchTriplet::PARALLEL
            } else {
                SwitchTriplet::SERIES
            };
            triplets.push(t);
        }
        Self::new(n, triplets)
    }

    /// Derived structure; fails with the collected violations if invalid.
    pub fn connectivity(&self) -> Result<Connectivity> {
        derive_connectivity(self)
    }
}

/// Checks every junction and returns all violations found.
pub fn validate(topology: &PackTopology) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let t = &topology.triplets;
    for (k, trip) in t.iter().enumerate() {
        let index = k + 1;
        let permitted = [
            SwitchTriplet::SERIES,
            SwitchTriplet::PARALLEL,
            SwitchTriplet::BYPASS_CELL,
            SwitchTriplet::BYPASS_NEXT,
        ];
        if !permitted.contains(trip) {
            let why = match (trip.s1, trip.s2, trip.s3) {
                (true, true, true) => "all switches closed shorts the junction",
                (false, false, false) => "all switches open breaks the string",
                (false, true, true) => "pattern 011 shorts cell i+1",
                _ => "pattern 101 shorts cell i",
            };
            out.push(Violation {
                index,
                message: format!("forbidden pattern {trip}: {why}"),
            });
            continue;
        }
        if *trip == SwitchTriplet::BYPASS_NEXT
            && t[k + 1..].iter().any(|x| *x != SwitchTriplet::BYPASS_NEXT)
        {
            out.push(Violation {
                index,
                message: "pattern 010 bypasses the next cell and is only allowed at the end of the string"
                    .into(),
            });
        }
        if *trip == SwitchTriplet::PARALLEL && t.get(k + 1) == Some(&SwitchTriplet::BYPASS_CELL) {
            out.push(Violation {
                index,
                message: format!(
                    "parallel link to cell {} which junction {} bypasses",
                    index + 1,
                    index + 1
                ),
            });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Bypassed set and series/parallel grouping of a valid topology.
pub fn derive_connectivity(topology: &PackTopology) -> Result<Connectivity> {
    if let Err(v) = validate(topology) {
        let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        return Err(Error::Topology(msgs.join("; ")));
    }
    let n = topology.n;
    let mut conn = Connectivity::default();
    let mut current: Vec<usize> = Vec::new();
    for cell in 1..=n {
        if topology.is_bypassed_raw(cell) {
            conn.bypassed.insert(cell);
            continue;
        }
        current.push(cell);
        let link = (cell < n).then(|| topology.triplet(cell));
        if link != Some(SwitchTriplet::PARALLEL) {
            conn.groups.push(std::mem::take(&mut current));
        }
    }
    debug_assert!(current.is_empty());
    Ok(conn)
}

/// Takes `cell` out of the current path. A parallel group that loses an
/// interior member splits into two series groups. Already-bypassed cells are
/// left as they are.
pub fn bypass(topology: &PackTopology, cell: usize) -> Result<PackTopology> {
    if cell == 0 || cell > topology.n {
        return Err(Error::Topology(format!(
            "cell {cell} does not exist in a pack of {}",
            topology.n
        )));
    }
    let conn = derive_connectivity(topology)?;
    if conn.bypassed.contains(&cell) {
        return Ok(topology.clone());
    }
    let in_service = conn.in_service();
    if in_service.len() == 1 {
        return Err(Error::LastCellInService(cell));
    }
    let mut next = Connectivity {
        bypassed: conn.bypassed.clone(),
        groups: Vec::with_capacity(conn.groups.len() + 1),
    };
    next.bypassed.insert(cell);
    for g in conn.groups {
        match g.iter().position(|&c| c == cell) {
            None => next.groups.push(g),
            Some(p) => {
                for part in [&g[..p], &g[p + 1..]] {
                    if !part.is_empty() {
                        next.groups.push(part.to_vec());
                    }
                }
            }
        }
    }
    PackTopology::from_connectivity(topology.n, &next)
}

impl fmt::Display for PackTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={};", self.n)?;
        for (k, t) in self.triplets.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for PackTopology {
    type Err = Error;

    /// Parses `n=5;110,001,110,001`. Validity is not checked here.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::Topology(format!("cannot parse {s:?}: {m}"));
        let s_trim = s.trim();
        let (head, body) = s_trim
            .split_once(';')
            .ok_or_else(|| bad("expected `n=<cells>;<triplets>`"))?;
        let n: usize = head
            .trim()
            .strip_prefix("n=")
            .ok_or_else(|| bad("missing `n=`"))?
            .trim()
            .parse()
            .map_err(|_| bad("cell count is not an integer"))?;
        let body = body.trim();
        let triplets = if body.is_empty() {
            Vec::new()
        } else {
            body.split(',')
                .map(|t| SwitchTriplet::parse(t.trim()).ok_or_else(|| bad(&format!("bad triplet {t:?}"))))
                .collect::<Result<Vec<_>>>()?
        };
        Self::new(n, triplets)
    }
}

impl Serialize for PackTopology {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PackTopology {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
