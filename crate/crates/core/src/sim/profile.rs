//! Pack output demand sampled on a uniform grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on sample spacing when checking uniformity.
const SPACING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    /// Sample spacing, s.
    pub dt: f64,
    /// Demanded pack output at each step, W. Negative values charge the pack.
    pub power: Vec<f64>,
}

impl LoadProfile {
    pub fn new(dt: f64, power: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Profile(format!("step {dt} s must be positive")));
        }
        if power.is_empty() {
            return Err(Error::Profile("profile has no samples".into()));
        }
        if let Some(k) = power.iter().position(|p| !p.is_finite()) {
            return Err(Error::Profile(format!("sample {k} is not finite")));
        }
        Ok(Self { dt, power })
    }

    pub fn constant(p_out: f64, dt: f64, steps: usize) -> Result<Self> {
        Self::new(dt, vec![p_out; steps])
    }

    /// Builds a profile from `(time_s, p_out_w)` rows. Times must increase
    /// with a constant spacing; nothing is resampled.
    pub fn from_samples(rows: &[(f64, f64)]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Profile(format!(
                "need at least two samples to infer the step, got {}",
                rows.len()
            )));
        }
        let dt = rows[1].0 - rows[0].0;
        if !(dt > 0.0) {
            return Err(Error::Profile(format!(
                "time must increase strictly: {} then {}",
                rows[0].0, rows[1].0
            )));
        }
        for (k, w) in rows.windows(2).enumerate() {
            let step = w[1].0 - w[0].0;
            if !(step > 0.0) {
                return Err(Error::Profile(format!(
                    "time must increase strictly: row {} has {} after {}",
                    k + 2,
                    w[1].0,
                    w[0].0
                )));
            }
            if (step - dt).abs() > SPACING_TOL * dt.max(1.0) * 1e3 {
                return Err(Error::Profile(format!(
                    "non-uniform spacing at row {}: {step} s instead of {dt} s; resample explicitly",
                    k + 2
                )));
            }
        }
        Self::new(dt, rows.iter().map(|r| r.1).collect())
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    /// Time covered by the profile, s.
    pub fn duration(&self) -> f64 {
        self.dt * self.power.len() as f64
    }

    /// Up to `h` samples starting at `step`.
    pub fn window(&self, step: usize, h: usize) -> &[f64] {
        let end = (step + h).min(self.power.len());
        &self.power[step.min(end)..end]
    }

    pub fn peak_abs(&self) -> f64 {
        self.power.iter().fold(0.0, |m, p| m.max(p.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.power.iter().sum::<f64>() / self.power.len() as f64
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dt: self.dt,
            power: self.power.iter().map(|p| p * factor).collect(),
        }
    }

    /// The profile repeated until it covers `steps` samples.
    pub fn repeated(&self, steps: usize) -> Self {
        Self {
            dt: self.dt,
            power: self.power.iter().copied().cycle().take(steps).collect(),
        }
    }

    /// Linear interpolation onto a new step. Samples are taken at
    /// `k * new_dt` for every `k` that stays inside the original span.
    pub fn resample(&self, new_dt: f64) -> Result<Self> {
        if !(new_dt > 0.0) || !new_dt.is_finite() {
            return Err(Error::Profile(format!("step {new_dt} s must be positive")));
        }
        let last = (self.power.len() - 1) as f64 * self.dt;
        let count = (last / new_dt + 1e-9).floor() as usize + 1;
        let power = (0..count)
            .map(|k| {
                let x = k as f64 * new_dt / self.dt;
                let i = (x.floor() as usize).min(self.power.len() - 1);
                if i + 1 >= self.power.len() {
                    return self.power[i];
                }
                let f = x - i as f64;
                self.power[i] * (1.0 - f) + self.power[i + 1] * f
            })
            .collect();
        Self::new(new_dt, power)
    }
}

/// One stop-and-go segment: idle, ramp up, cruise, ramp down. Durations in
/// seconds, speed in km/h.
#[derive(Debug, Clone, Copy)]
struct MicroTrip {
    idle: u32,
    accel: u32,
    speed: f64,
    cruise: u32,
    decel: u32,
}

const fn trip(idle: u32, accel: u32, speed: f64, cruise: u32, decel: u32) -> MicroTrip {
    MicroTrip {
        idle,
        accel,
        speed,
        cruise,
        decel,
    }
}

/// Urban schedule shaped like the classic city dynamometer cycle: a long
/// fast leg early on, then short stop-and-go legs. Synthetic, 1370 s.
const URBAN_CYCLE: [MicroTrip; 17] = [
    trip(20, 15, 32.0, 25, 12),
    trip(10, 40, 91.0, 90, 45),
    trip(17, 16, 40.0, 30, 12),
    trip(15, 18, 48.0, 40, 16),
    trip(21, 12, 30.0, 18, 10),
    trip(14, 20, 56.0, 35, 18),
    trip(25, 14, 35.0, 22, 11),
    trip(12, 22, 58.0, 42, 20),
    trip(18, 10, 25.0, 15, 9),
    trip(20, 17, 44.0, 38, 15),
    trip(16, 13, 33.0, 27, 12),
    trip(14, 19, 50.0, 45, 17),
    trip(22, 11, 28.0, 16, 10),
    trip(15, 16, 42.0, 33, 14),
    trip(19, 12, 31.0, 20, 11),
    trip(13, 15, 39.0, 29, 13),
    trip(25, 10, 27.0, 14, 10),
];

/// Vehicle road-load constants used to turn speed into traction power.
const MASS_KG: f64 = 1500.0;
const ROLLING: f64 = 0.01;
const DRAG_AREA_M2: f64 = 0.7;
const AIR_DENSITY: f64 = 1.2;
const GRAVITY: f64 = 9.81;
/// Share of braking power recovered into the pack.
const REGEN_SHARE: f64 = 0.5;

fn cycle_speeds() -> Vec<f64> {
    let mut v = Vec::new();
    for t in URBAN_CYCLE {
        let top = t.speed / 3.6;
        v.extend(std::iter::repeat(0.0).take(t.idle as usize));
        v.extend((1..=t.accel).map(|k| top * k as f64 / t.accel as f64));
        v.extend(std::iter::repeat(top).take(t.cruise as usize));
        v.extend((1..=t.decel).map(|k| top * (1.0 - k as f64 / t.decel as f64)));
    }
    v
}

/// Traction power of the synthetic urban cycle at 1 s resolution, scaled so
/// its largest demand equals `peak_w`, repeated to `steps` samples.
pub fn urban_drive_profile(peak_w: f64, steps: usize) -> Result<LoadProfile> {
    if !(peak_w > 0.0) {
        return Err(Error::Profile(format!("peak {peak_w} W must be positive")));
    }
    let v = cycle_speeds();
    let n = v.len();
    let raw: Vec<f64> = (0..n)
        .map(|k| {
            let a = v[(k + 1) % n] - v[k];
            let speed = 0.5 * (v[(k + 1) % n] + v[k]);
            let p = MASS_KG * a * speed
                + MASS_KG * GRAVITY * ROLLING * speed
                + 0.5 * AIR_DENSITY * DRAG_AREA_M2 * speed.powi(3);
            if p < 0.0 {
                REGEN_SHARE * p
            } else {
                p
            }
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, p| m.max(*p));
    Ok(LoadProfile::new(1.0, raw)?.scaled(peak_w / peak).repeated(steps))
}
