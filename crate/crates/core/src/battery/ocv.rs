//! Piecewise-linear SoC/OCV maps.
//!
//! A curve is an ordered list of segments `u = alpha + beta * q` that tile
//! `[0, 1]`. Each horizon solve linearizes a cell on the single segment that
//! contains its SoC, so the curve only has to be continuous and strictly
//! increasing; it does not need to be smooth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Breakpoint continuity tolerance, volts.
pub const CONTINUITY_TOL_V: f64 = 1e-3;

const TILING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcvSegment {
    pub q_lo: f64,
    pub q_hi: f64,
    /// Intercept, volts.
    pub alpha: f64,
    /// Slope, volts per unit SoC.
    pub beta: f64,
}

impl OcvSegment {
    pub fn new(q_lo: f64, q_hi: f64, alpha: f64, beta: f64) -> Self {
        Self {
            q_lo,
            q_hi,
            alpha,
            beta,
        }
    }

    #[inline]
    pub fn voltage(&self, q: f64) -> f64 {
        self.alpha + self.beta * q
    }

    #[inline]
    pub fn contains(&self, q: f64) -> bool {
        q >= self.q_lo && q <= self.q_hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<OcvSegment>", into = "Vec<OcvSegment>")]
pub struct OcvCurve {
    segments: Vec<OcvSegment>,
}

impl TryFrom<Vec<OcvSegment>> for OcvCurve {
    type Error = Error;

    fn try_from(segments: Vec<OcvSegment>) -> Result<Self> {
        Self::new(segments)
    }
}

impl From<OcvCurve> for Vec<OcvSegment> {
    fn from(curve: OcvCurve) -> Self {
        curve.segments
    }
}

impl OcvCurve {
    pub fn new(segments: Vec<OcvSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidCurve("no segments".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.q_lo < s.q_hi) {
                return Err(Error::InvalidCurve(format!(
                    "segment {i}: q_lo {} is not below q_hi {}",
                    s.q_lo, s.q_hi
                )));
            }
            if !(s.beta > 0.0) || !s.alpha.is_finite() {
                return Err(Error::InvalidCurve(format!(
                    "segment {i}: slope {} must be positive",
                    s.beta
                )));
            }
        }
        let first = segments[0];
        let last = segments[segments.len() - 1];
        if first.q_lo.abs() > TILING_TOL || (last.q_hi - 1.0).abs() > TILING_TOL {
            return Err(Error::InvalidCurve(format!(
                "segments span [{}, {}] instead of [0, 1]",
                first.q_lo, last.q_hi
            )));
        }
        for (i, pair) in segments.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            if (a.q_hi - b.q_lo).abs() > TILING_TOL {
                return Err(Error::InvalidCurve(format!(
                    "gap or overlap between segments {i} and {}: {} vs {}",
                    i + 1,
                    a.q_hi,
                    b.q_lo
                )));
            }
            let jump = (a.voltage(a.q_hi) - b.voltage(b.q_lo)).abs();
            if jump > CONTINUITY_TOL_V {
                return Err(Error::InvalidCurve(format!(
                    "discontinuity of {:.4} V at q = {}",
                    jump, a.q_hi
                )));
            }
        }
        Ok(Self { segments })
    }

    /// A single line over `[0, 1]`.
    pub fn linear(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(vec![OcvSegment::new(0.0, 1.0, alpha, beta)])
    }

    pub fn segments(&self) -> &[OcvSegment] {
        &self.segments
    }

    /// Index of the segment containing `q`; at a breakpoint the left segment wins.
    pub fn segment_index(&self, q: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::SocDomain(q));
        }
        Ok(self
            .segments
            .iter()
            .position(|s| q <= s.q_hi)
            .unwrap_or(self.segments.len() - 1))
    }

    pub fn segment_at(&self, q: f64) -> Result<&OcvSegment> {
        Ok(&self.segments[self.segment_index(q)?])
    }

    pub fn eval(&self, q: f64) -> Result<f64> {
        Ok(self.segment_at(q)?.voltage(q))
    }

    /// Three-segment fit of [`DEFAULT_OCV_TABLE`].
    pub fn default_nmc() -> Self {
        fit_ocv(&DEFAULT_OCV_TABLE, 3)
            .expect("embedded OCV table fits")
            .curve
    }
}

/// Open-circuit voltage at `q` on the segment that contains it.
pub fn ocv_eval(curve: &OcvCurve, q: f64) -> Result<f64> {
    curve.eval(q)
}

/// Plausible SoC/OCV table for an NMC 18650 cell.
///
/// Not measured data: shaped after typical NMC behaviour between a 3.3 V
/// cut-off and a 4.17 V full charge.
pub const DEFAULT_OCV_TABLE: [(f64, f64); 21] = [
    (0.00, 3.300),
    (0.05, 3.420),
    (0.10, 3.500),
    (0.15, 3.545),
    (0.20, 3.575),
    (0.25, 3.600),
    (0.30, 3.622),
    (0.35, 3.643),
    (0.40, 3.665),
    (0.45, 3.690),
    (0.50, 3.718),
    (0.55, 3.748),
    (0.60, 3.780),
    (0.65, 3.815),
    (0.70, 3.852),
    (0.75, 3.890),
    (0.80, 3.930),
    (0.85, 3.972),
    (0.90, 4.020),
    (0.95, 4.085),
    (1.00, 4.170),
];

/// Parses a two-column `soc volts` table. Blank lines and `#` comments are
/// skipped; columns may be separated by whitespace or a comma. A non-numeric
/// first line is treated as a header.
pub fn parse_ocv_table(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed: Option<Vec<f64>> = cols.iter().map(|c| c.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 2 => rows.push((v[0], v[1])),
            None if rows.is_empty() => continue,
            _ => {
                return Err(Error::Fit(format!(
                    "line {}: expected two numeric columns, got {:?}",
                    lineno + 1,
                    raw
                )))
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct OcvFit {
    pub curve: OcvCurve,
    /// Root-mean-square residual over the table, volts.
    pub rms_error: f64,
}

/// Continuous piecewise-linear least-squares fit with `k` segments.
///
/// Breakpoints are restricted to interior table abscissae and every segment
/// must hold at least two table points. Small searches are exhaustive; larger
/// ones fall back to coordinate descent from evenly spaced breakpoints. The
/// outer segments are extended to SoC 0 and 1.
pub fn fit_ocv(table: &[(f64, f64)], k: usize) -> Result<OcvFit> {
    if k == 0 {
        return Err(Error::Fit("segment count must be at least 1".into()));
    }
    let mut pts: Vec<(f64, f64)> = table.to_vec();
    if pts.iter().any(|(q, v)| !q.is_finite() || !v.is_finite()) {
        return Err(Error::Fit("table contains non-finite values".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Fit("duplicate SoC abscissae".into()));
    }
    if pts.first().map_or(true, |p| p.0 < 0.0) || pts.last().map_or(true, |p| p.0 > 1.0) {
        return Err(Error::Fit("SoC values must lie in [0, 1]".into()));
    }
    if pts.len() < 2 * k {
        return Err(Error::Fit(format!(
            "{} points cannot support {k} segments of two points each",
            pts.len()
        )));
    }

    let n = pts.len();
    type Best = Option<(Vec<usize>, Vec<f64>, f64)>;
    // Knots are strictly increasing interior point indices.
    let consider = |best: &mut Best, idx: &[usize]| {
        let increasing = idx.windows(2).all(|w| w[0] < w[1]);
        let interior = idx.iter().all(|&i| i >= 1 && i + 1 < n);
        if !(increasing && interior) {
            return;
        }
        if let Some((coef, sse)) = hinge_lstsq(&pts, idx) {
            if best.as_ref().map_or(true, |b| sse < b.2 - 1e-15) {
                *best = Some((idx.to_vec(), coef, sse));
            }
        }
    };
    let mut best: Best = None;

    let knots = k - 1;
    let interior = n - 2;
    if knots == 0 {
        consider(&mut best, &[]);
    } else if binomial(interior, knots) <= 200_000 {
        let mut idx: Vec<usize> = (1..=knots).collect();
        loop {
            consider(&mut best, &idx);
            // next combination of knots values drawn from 1..=n-2
            let Some(pos) = (0..knots).rev().find(|&p| idx[p] < n - 2 - (knots - 1 - p)) else {
                break;
            };
            idx[pos] += 1;
            for p in pos + 1..knots {
                idx[p] = idx[p - 1] + 1;
            }
        }
    } else {
        let mut idx: Vec<usize> = (1..=knots).map(|j| j * (n - 1) / k).collect();
        consider(&mut best, &idx);
        loop {
            let before = best.as_ref().map(|b| b.2);
            for j in 0..knots {
                let lo = if j == 0 { 1 } else { idx[j - 1] + 1 };
                let hi = if j + 1 == knots { n - 2 } else { idx[j + 1] - 1 };
                for cand in lo..=hi {
                    let mut trial = idx.clone();
                    trial[j] = cand;
                    consider(&mut best, &trial);
                }
                if let Some(b) = &best {
                    idx = b.0.clone();
                }
            }
            if best.as_ref().map(|b| b.2) == before {
                break;
            }
        }
    }

    let (idx, coef, sse) = best.ok_or_else(|| Error::Fit("no admissible breakpoints".into()))?;
    let breaks: Vec<f64> = idx.iter().map(|&i| pts[i].0).collect();
    let mut segments = Vec::with_capacity(k);
    let (mut alpha, mut beta) = (coef[0], coef[1]);
    let mut lo = 0.0;
    for (j, &b) in breaks.iter().enumerate() {
        segments.push(OcvSegment::new(lo, b, alpha, beta));
        // adding d*(q - b) to the line
        alpha -= coef[2 + j] * b;
        beta += coef[2 + j];
        lo = b;
    }
    segments.push(OcvSegment::new(lo, 1.0, alpha, beta));
    if let Some((i, s)) = segments.iter().enumerate().find(|(_, s)| s.beta <= 0.0) {
        return Err(Error::Fit(format!(
            "segment {i} has non-increasing slope {} (table is not monotone)",
            s.beta
        )));
    }
    let curve = OcvCurve::new(segments)?;
    Ok(OcvFit {
        curve,
        rms_error: (sse / n as f64).sqrt(),
    })
}

/// Least squares on the basis `[1, q, (q - b_1)+, ...]`; returns coefficients and SSE.
fn hinge_lstsq(pts: &[(f64, f64)], knot_idx: &[usize]) -> Option<(Vec<f64>, f64)> {
    let cols = 2 + knot_idx.len();
    let a = DMatrix::from_fn(pts.len(), cols, |r, c| {
        let q = pts[r].0;
        match c {
            0 => 1.0,
            1 => q,
            _ => (q - pts[knot_idx[c - 2]].0).max(0.0),
        }
    });
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&y, 1e-12).ok()?;
    let resid = &a * &coef - &y;
    Some((coef.iter().copied().collect(), resid.norm_squared()))
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}
