//! Scenario documents in TOML.
//!
//! A [`ScenarioFile`] mirrors the document as written, with optional fields
//! left unset; [`ScenarioFile::resolve`] fills in defaults, draws sampled
//! cells and loads referenced files, giving a [`Scenario`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_profile_csv;
use crate::battery::{fit_ocv, parse_ocv_table, CellParams, CellState, OcvCurve, OcvSegment, ThermalNetworkParams};
use crate::error::{Error, Result};
use crate::optimizer::{BalancingConfig, OptimizerOptions};
use crate::sim::{
    sample_cells, urban_drive_profile, ControlOptions, FaultEvent, InitialDistribution, LoadProfile,
    ReconfigInputs, Scenario,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub seed: u64,
    pub cells: CellsSection,
    #[serde(default)]
    pub thermal: ThermalSection,
    #[serde(default)]
    pub balancing: BalancingSection,
    pub reconfiguration: ReconfigInputs,
    pub profile: ProfileSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultEvent>,
    #[serde(default)]
    pub solver: OptimizerOptions,
    #[serde(default)]
    pub control: ControlOptions,
}

/// Either `count` cells drawn from `sample`, or one cell per entry of
/// `initial_soc`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_soc: Option<Vec<f64>>,
    /// One value for all cells or one per cell. Defaults to ambient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_temp_k: Option<Vec<f64>>,
    /// Per-cell internal resistance, overriding the template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_int: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<InitialDistribution>,
    #[serde(default)]
    pub template: CellTemplate,
}

/// Cell parameters shared by all cells; unset fields take the reference
/// cell's values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellTemplate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_ah: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_int: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_conv_dc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_switch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_th: Option<f64>,
    /// Explicit OCV segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocv_segments: Option<Vec<OcvSegment>>,
    /// SoC/OCV table to fit, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocv_table: Option<String>,
    /// Segments fitted to `ocv_table`; 3 when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocv_fit_segments: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_conv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_cnd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_env_k: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

/// Where the demand comes from. The profile step must equal the control
/// step unless `resample_dt` asks for linear resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSource {
    /// Two-column `time_s,p_out_w` file, relative to the scenario file.
    File {
        path: String,
        /// Multiply every sample so the largest magnitude equals this.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        peak_w: Option<f64>,
        /// Repeat (or cut) the samples to this many steps.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resample_dt: Option<f64>,
    },
    /// Built-in stop-and-go urban cycle on a 1 s grid, repeated.
    UrbanDrive {
        peak_w: f64,
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resample_dt: Option<f64>,
    },
    /// Constant demand on the control grid.
    Constant { power_w: f64, steps: usize },
}

/// Parses a scenario document without resolving it.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
}

pub fn write_scenario(file: &ScenarioFile) -> Result<String> {
    toml::to_string_pretty(file).map_err(|e| Error::Scenario(e.to_string()))
}

/// Reads, parses and resolves a scenario. Relative paths inside it are taken
/// from the file's directory.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let (file, base) = read_scenario_file(path)?;
    file.resolve(&base)
}

/// Reads and parses a scenario, returning it with the directory that
/// relative paths resolve against.
pub fn read_scenario_file(path: impl AsRef<Path>) -> Result<(ScenarioFile, PathBuf)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
    let file = parse_scenario(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((file, base))
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Scenario(format!("{field}: {msg}"))
}

impl ThermalSection {
    pub fn resolve(&self) -> ThermalNetworkParams {
        let r = ThermalNetworkParams::reference();
        ThermalNetworkParams {
            r_conv: self.r_conv.unwrap_or(r.r_conv),
            r_cnd: self.r_cnd.unwrap_or(r.r_cnd),
            t_env: self.t_env_k.unwrap_or(r.t_env),
        }
    }
}

impl BalancingSection {
    pub fn resolve(&self) -> BalancingConfig {
        let d = BalancingConfig::default();
        BalancingConfig {
            delta_q: self.delta_q.unwrap_or(d.delta_q),
            delta_t: self.delta_t.unwrap_or(d.delta_t),
            lambda_e: self.lambda_e.unwrap_or(d.lambda_e),
            lambda_t: self.lambda_t.unwrap_or(d.lambda_t),
            horizon_h: self.horizon_h.unwrap_or(d.horizon_h),
            dt: self.dt.unwrap_or(d.dt),
        }
    }
}

impl CellTemplate {
    pub fn resolve(&self, base: &Path) -> Result<CellParams> {
        let r = CellParams::reference();
        let ocv = match (&self.ocv_segments, &self.ocv_table) {
            (Some(_), Some(_)) => {
                return Err(field_err(
                    "cells.template",
                    "give either ocv_segments or ocv_table, not both",
                ))
            }
            (Some(segs), None) => {
                OcvCurve::new(segs.clone()).map_err(|e| field_err("cells.template.ocv_segments", e))?
            }
            (None, Some(table)) => {
                let path = base.join(table);
                let text = fs::read_to_string(&path)
                    .map_err(|e| field_err("cells.template.ocv_table", format!("{}: {e}", path.display())))?;
                let rows = parse_ocv_table(&text).map_err(|e| field_err("cells.template.ocv_table", e))?;
                fit_ocv(&rows, self.ocv_fit_segments.unwrap_or(3))
                    .map_err(|e| field_err("cells.template.ocv_table", e))?
                    .curve
            }
            (None, None) => {
                if self.ocv_fit_segments.is_some() {
                    return Err(field_err("cells.template.ocv_fit_segments", "needs ocv_table"));
                }
                r.ocv.clone()
            }
        };
        let p = CellParams {
            capacity_q: self.capacity_ah.unwrap_or(r.capacity_q),
            r_int: self.r_int.unwrap_or(r.r_int),
            r_conv_dc: self.r_conv_dc.unwrap_or(r.r_conv_dc),
            r_switch: self.r_switch.unwrap_or(r.r_switch),
            q_min: self.q_min.unwrap_or(r.q_min),
            q_max: self.q_max.unwrap_or(r.q_max),
            i_min: self.i_min.unwrap_or(r.i_min),
            i_max: self.i_max.unwrap_or(r.i_max),
            t_max: self.t_max_k.unwrap_or(r.t_max),
            c_th: self.c_th.unwrap_or(r.c_th),
            ocv,
        };
        p.validate().map_err(|e| field_err("cells.template", e))?;
        Ok(p)
    }
}

fn per_cell(field: &str, values: &[f64], n: usize) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        m if m == n => Ok(values.to_vec()),
        m => Err(field_err(field, format!("expected 1 or {n} values, got {m}"))),
    }
}

impl CellsSection {
    pub fn resolve(&self, base: &Path, t_env: f64, seed: u64) -> Result<(Vec<CellParams>, Vec<CellState>)> {
        let template = self.template.resolve(base)?;
        match (&self.sample, &self.initial_soc) {
            (None, None) => Err(field_err(
                "cells",
                "no cells defined; give `initial_soc` or `count` with a `sample` table",
            )),
            (Some(_), Some(_)) => Err(field_err("cells", "give either `initial_soc` or `sample`, not both")),
            (Some(dist), None) => {
                let n = match self.count {
                    Some(n) if n > 0 => n,
                    _ => return Err(field_err("cells.count", "a sampled pack needs a positive count")),
                };
                for (key, set) in [
                    ("cells.initial_temp_k", self.initial_temp_k.is_some()),
                    ("cells.r_int", self.r_int.is_some()),
                ] {
                    if set {
                        return Err(field_err(key, "not allowed with `sample`"));
                    }
                }
                sample_cells(&template, n, dist, seed).map_err(|e| field_err("cells.sample", e))
            }
            (None, Some(qs)) => {
                let n = qs.len();
                if n == 0 {
                    return Err(field_err("cells.initial_soc", "no cells defined"));
                }
                if let Some(c) = self.count {
                    if c != n {
                        return Err(field_err(
                            "cells.count",
                            format!("{c} disagrees with {n} entries in initial_soc"),
                        ));
                    }
                }
                let temps = match &self.initial_temp_k {
                    Some(t) => per_cell("cells.initial_temp_k", t, n)?,
                    None => vec![t_env; n],
                };
                let rs = match &self.r_int {
                    Some(r) => per_cell("cells.r_int", r, n)?,
                    None => vec![template.r_int; n],
                };
                let mut params = Vec::with_capacity(n);
                let mut states = Vec::with_capacity(n);
                for (j, ((&q, &t), &r)) in qs.iter().zip(&temps).zip(&rs).enumerate() {
                    if !(0.0..=1.0).contains(&q) {
                        return Err(field_err(&format!("cells.initial_soc[{j}]"), format!("{q} is outside [0, 1]")));
                    }
                    let mut p = template.clone();
                    p.r_int = r;
                    p.validate()
                        .map_err(|e| field_err(&format!("cells.r_int[{j}]"), e))?;
                    params.push(p);
                    states.push(CellState::new(q, t));
                }
                Ok((params, states))
            }
        }
    }
}

fn resample_to(profile: LoadProfile, dt: Option<f64>, field: &str) -> Result<LoadProfile> {
    match dt {
        Some(dt) => profile.resample(dt).map_err(|e| field_err(field, e)),
        None => Ok(profile),
    }
}

impl ProfileSource {
    pub fn resolve(&self, base: &Path, dt: f64) -> Result<LoadProfile> {
        match self {
            ProfileSource::File {
                path,
                peak_w,
                steps,
                resample_dt,
            } => {
                let full = base.join(path);
                let mut p = read_profile_csv(&full).map_err(|e| field_err("profile.path", e))?;
                if let Some(peak) = peak_w {
                    let m = p.peak_abs();
                    if !(m > 0.0) {
                        return Err(field_err("profile.peak_w", "cannot scale an all-zero profile"));
                    }
                    p = p.scaled(peak / m);
                }
                p = resample_to(p, *resample_dt, "profile.resample_dt")?;
                if let Some(n) = steps {
                    if *n == 0 {
                        return Err(field_err("profile.steps", "must be positive"));
                    }
                    p = p.repeated(*n);
                }
                Ok(p)
            }
            ProfileSource::UrbanDrive {
                peak_w,
                steps,
                resample_dt,
            } => {
                let p = urban_drive_profile(*peak_w, *steps).map_err(|e| field_err("profile", e))?;
                resample_to(p, *resample_dt, "profile.resample_dt")
            }
            ProfileSource::Constant { power_w, steps } => {
                LoadProfile::constant(*power_w, dt, *steps).map_err(|e| field_err("profile", e))
            }
        }
    }
}

impl ScenarioFile {
    /// Resolves defaults and referenced files and validates the result.
    pub fn resolve(&self, base: &Path) -> Result<Scenario> {
        let thermal = self.thermal.resolve();
        let balancing = self.balancing.resolve();
        let (cells, initial) = self.cells.resolve(base, thermal.t_env, self.seed)?;
        let profile = self.profile.resolve(base, balancing.dt)?;
        let scenario = Scenario {
            name: self.name.clone(),
            cells,
            initial,
            thermal,
            profile,
            faults: self.faults.clone(),
            balancing,
            optimizer: self.solver,
            reconfig: self.reconfiguration.clone(),
            control: self.control,
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
