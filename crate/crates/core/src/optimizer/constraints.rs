//! The individual constraint families of the horizon problem, each usable on
//! its own for checks and encodable into a [`ConicModel`].
//!
//! Inside the model, stored energy `E + E0` is carried in kilojoules so that
//! the cone rows stay well scaled; the public helpers work in joules.

use super::conic::{Affine, ConicModel};
use super::SegmentBoundPolicy;
use crate::battery::OcvSegment;
use crate::error::{Error, Result};

pub(crate) const KJ: f64 = 1000.0;

/// `P_l (E + E0) >= k P_b^2` with `k = R_tot C / 2`: on one OCV segment this
/// is the converter-side loss `R_tot i^2` written in energy coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEpigraph {
    pub coef: f64,
    pub e0: f64,
}

pub fn loss_epigraph(r_total: f64, c_equiv: f64, e0: f64) -> LossEpigraph {
    LossEpigraph {
        coef: 0.5 * r_total * c_equiv,
        e0,
    }
}

impl LossEpigraph {
    /// Smallest loss compatible with internal power `p_b` at relative energy `e`.
    pub fn min_loss(&self, p_b: f64, e: f64) -> f64 {
        self.coef * p_b * p_b / (e + self.e0)
    }

    /// `P_l (E + E0) - k P_b^2`; zero when the relaxation is tight.
    pub fn residual(&self, p_l: f64, p_b: f64, e: f64) -> f64 {
        p_l * (e + self.e0) - self.coef * p_b * p_b
    }

    /// Loss in excess of the minimum, watts.
    pub fn excess(&self, p_l: f64, p_b: f64, e: f64) -> f64 {
        p_l - self.min_loss(p_b, e)
    }

    /// `2 P_l W >= (2k / 1000) P_b^2` with `W = (E + E0) / 1000`.
    pub(crate) fn encode(&self, model: &mut ConicModel, p_l: usize, p_b: usize, w_kj: Affine) {
        let z = (2.0 * self.coef / KJ).sqrt();
        model.rotated(Affine::var(p_l), w_kj, Affine::term(p_b, z));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LowerPowerBound {
    /// `P_b >= 0`.
    NonNegative,
    /// `P_b >= -coef * sqrt(E + E0)`.
    Cone(f64),
}

/// Current limits restated on internal power: `|i| <= i_max` becomes
/// `P_b <= i_max sqrt(2 (E + E0) / C)` because `u = sqrt(2 (E + E0) / C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentBounds {
    pub upper_coef: f64,
    pub lower: LowerPowerBound,
    pub c_equiv: f64,
    pub e0: f64,
}

pub fn current_bounds_cone(i_min: f64, i_max: f64, c_equiv: f64, e0: f64) -> Result<CurrentBounds> {
    if i_min > 0.0 {
        return Err(Error::Optimizer(format!(
            "a positive minimum current ({i_min} A) is not representable as a convex constraint"
        )));
    }
    if i_max < 0.0 {
        return Err(Error::Optimizer(format!("maximum current {i_max} A is negative")));
    }
    let k = (2.0 / c_equiv).sqrt();
    Ok(CurrentBounds {
        upper_coef: i_max * k,
        lower: if i_min == 0.0 {
            LowerPowerBound::NonNegative
        } else {
            LowerPowerBound::Cone(-i_min * k)
        },
        c_equiv,
        e0,
    })
}

impl CurrentBounds {
    pub fn max_power(&self, e: f64) -> f64 {
        self.upper_coef * (e + self.e0).max(0.0).sqrt()
    }

    pub fn min_power(&self, e: f64) -> f64 {
        match self.lower {
            LowerPowerBound::NonNegative => 0.0,
            LowerPowerBound::Cone(k) => -k * (e + self.e0).max(0.0).sqrt(),
        }
    }

    /// `aux >= P_b` and `2 W kappa >= aux^2`, where the kilojoule scaling
    /// gives `kappa = 1000 coef^2 / 2`.
    pub(crate) fn encode(
        &self,
        model: &mut ConicModel,
        p_b: usize,
        w_kj: Affine,
        upper_aux: Option<usize>,
        lower_aux: Option<usize>,
    ) {
        if let Some(t) = upper_aux {
            model.nonneg(Affine::var(t).add(p_b, -1.0));
            let kappa = 0.5 * KJ * self.upper_coef * self.upper_coef;
            model.rotated(w_kj.clone(), Affine::constant(kappa), Affine::var(t));
        }
        match (self.lower, lower_aux) {
            (LowerPowerBound::NonNegative, _) => model.nonneg(Affine::var(p_b)),
            (LowerPowerBound::Cone(k), Some(s)) => {
                model.nonneg(Affine::var(s).add(p_b, 1.0));
                let kappa = 0.5 * KJ * k * k;
                model.rotated(w_kj, Affine::constant(kappa), Affine::var(s));
            }
            (LowerPowerBound::Cone(_), None) => unreachable!("cone lower bound needs an auxiliary"),
        }
    }

    pub(crate) fn needs_upper_aux(&self) -> bool {
        true
    }

    pub(crate) fn needs_lower_aux(&self) -> bool {
        matches!(self.lower, LowerPowerBound::Cone(_))
    }
}

/// Box on the stored energy `E + E0`, joules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocBox {
    pub lo: f64,
    pub hi: f64,
    /// True when a limit fell outside the segment and was moved onto it.
    pub clipped: bool,
}

/// SoC limits mapped through `C u(q)^2 / 2` on one OCV segment.
pub fn soc_bounds_energy(
    q_min: f64,
    q_max: f64,
    segment: &OcvSegment,
    c_equiv: f64,
    policy: SegmentBoundPolicy,
) -> SocBox {
    let (mut lo_q, mut hi_q) = (q_min, q_max);
    let mut clipped = false;
    if policy == SegmentBoundPolicy::Clip {
        if lo_q < segment.q_lo {
            lo_q = segment.q_lo;
            clipped = true;
        }
        if hi_q > segment.q_hi {
            hi_q = segment.q_hi;
            clipped = true;
        }
        if clipped {
            log::warn!(
                "SoC limits [{q_min}, {q_max}] clipped to segment [{}, {}]",
                segment.q_lo,
                segment.q_hi
            );
        }
    }
    let energy = |q: f64| 0.5 * c_equiv * segment.voltage(q).powi(2);
    SocBox {
        lo: energy(lo_q),
        hi: energy(hi_q),
        clipped,
    }
}

/// Width of the balancing band in `u^2` units for a SoC tolerance `dq`.
pub fn balancing_band(alpha: f64, beta: f64, dq: f64) -> f64 {
    let a = alpha + beta * dq;
    a * a - alpha * alpha
}
