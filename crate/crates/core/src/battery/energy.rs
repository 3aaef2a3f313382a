//! Accumulated-energy coordinates.
//!
//! On one OCV segment a cell behaves like a capacitor of `C = Q / beta`
//! (Q in A·s) charged to `u`, so `E + E0 = C u^2 / 2` and `dE/dt = -u i`.
//! `E` is measured relative to the energy at the anchor SoC.

use serde::{Deserialize, Serialize};

use super::CellParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyFrame {
    /// Equivalent capacitance `Q / beta`, farads.
    pub c_equiv: f64,
    /// Energy at the anchor SoC, joules.
    pub e0: f64,
    /// Energy relative to the anchor, joules.
    pub e: f64,
    pub segment_index: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl EnergyFrame {
    /// Frame anchored at `q0` on the segment that contains it, with `e = 0`.
    pub fn anchor(params: &CellParams, q0: f64) -> Result<Self> {
        let seg = params.ocv.segment_index(q0)?;
        to_energy_frame(params, q0, seg, q0)
    }

    /// Same anchor and segment, re-evaluated at `q`.
    pub fn with_soc(&self, q: f64) -> Self {
        let u = self.alpha + self.beta * q;
        Self {
            e: 0.5 * self.c_equiv * u * u - self.e0,
            ..*self
        }
    }

    /// Same anchor and segment, with a given relative energy.
    pub fn with_energy(&self, e: f64) -> Self {
        Self { e, ..*self }
    }

    pub fn soc(&self) -> Result<f64> {
        from_energy_frame(self)
    }

    /// Total stored energy on this segment's line, `C u^2 / 2`.
    #[inline]
    pub fn absolute(&self) -> f64 {
        self.e + self.e0
    }

    /// Open-circuit voltage implied by the stored energy.
    pub fn voltage(&self) -> Result<f64> {
        let w = self.absolute();
        if !(w > 0.0) {
            return Err(Error::EnergyCorruption(w));
        }
        Ok((2.0 * w / self.c_equiv).sqrt())
    }

    /// Relative energy change for a SoC change `dq` away from `alpha`'s zero,
    /// i.e. `(alpha + beta dq)^2 - alpha^2`, volts squared.
    pub fn band_width_v2(&self, dq: f64) -> f64 {
        let a = self.alpha + self.beta * dq;
        a * a - self.alpha * self.alpha
    }
}

/// Frame on `segment`, anchored at `q0`, evaluated at `q`.
///
/// `q0` must lie on `segment`; `q` is evaluated on that segment's line even
/// if it has left the segment's SoC range.
pub fn to_energy_frame(
    params: &CellParams,
    q: f64,
    segment: usize,
    q0: f64,
) -> Result<EnergyFrame> {
    let seg = params.ocv.segments().get(segment).ok_or_else(|| {
        Error::InvalidCurve(format!(
            "segment {segment} does not exist ({} segments)",
            params.ocv.segments().len()
        ))
    })?;
    if !seg.contains(q0) {
        return Err(Error::InvalidCurve(format!(
            "anchor SoC {q0} is outside segment {segment} [{}, {}]",
            seg.q_lo, seg.q_hi
        )));
    }
    let c_equiv = params.capacity_as() / seg.beta;
    let u0 = seg.voltage(q0);
    let e0 = 0.5 * c_equiv * u0 * u0;
    let frame = EnergyFrame {
        c_equiv,
        e0,
        e: 0.0,
        segment_index: segment,
        alpha: seg.alpha,
        beta: seg.beta,
    };
    let out = frame.with_soc(q);
    if !(out.absolute() > 0.0) {
        return Err(Error::EnergyCorruption(out.absolute()));
    }
    Ok(out)
}

/// Inverse of [`to_energy_frame`].
pub fn from_energy_frame(frame: &EnergyFrame) -> Result<f64> {
    Ok((frame.voltage()? - frame.alpha) / frame.beta)
}
