//! TOML run configuration with dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::sweep::{linspace, SurvivalSpec, SweepPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub run_id: String,
    pub flux_list: Vec<f64>,
    pub detuning_min: f64,
    pub detuning_max: f64,
    pub detuning_points: usize,
    pub models: Vec<Model>,
    pub fit_window: Option<[f64; 2]>,
    pub survival_time: Option<f64>,
    pub survival_bins: usize,
    pub pulse_checkpoints: usize,
    pub dump_traces: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let plan = SweepPlan::default();
        SweepSettings {
            run_id: plan.run_id,
            flux_list: plan.flux_list,
            detuning_min: -3.0,
            detuning_max: 3.0,
            detuning_points: 21,
            models: plan.models,
            fit_window: None,
            survival_time: Some(150.0),
            survival_bins: 21,
            pulse_checkpoints: plan.pulse_checkpoints,
            dump_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSettings {
    pub flux: f64,
    pub detuning: f64,
    pub model: Model,
    pub fit_window: Option<[f64; 2]>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings { flux: 0.01, detuning: 0.0, model: Model::Full, fit_window: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaturationSettings {
    pub flux_list: Vec<f64>,
}

impl Default for SaturationSettings {
    fn default() -> Self {
        SaturationSettings { flux_list: vec![0.01, 0.1, 1.0, 4.0, 16.0, 64.0] }
    }
}

/// Exact-versus-mean-field comparison for one or two explicitly listed ions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub detunings: Vec<f64>,
    pub couplings: Vec<f64>,
    pub flux: f64,
    pub fock_cutoff: usize,
    pub t_end: f64,
    pub samples: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            detunings: vec![0.0],
            couplings: vec![0.07],
            flux: 1e-6,
            fock_cutoff: 8,
            t_end: 1000.0,
            samples: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelParams,
    pub sweep: SweepSettings,
    pub simulate: SimulateSettings,
    pub saturation: SaturationSettings,
    pub oracle: OracleSettings,
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies one `section.key=value` override; values use TOML syntax,
    /// bare words are taken as strings.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        let key = key.trim();
        let path: Vec<&str> = key.split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed override key `{key}`")));
        }
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut table = root.as_table_mut().expect("config serializes to a table");
        for part in &path[..path.len() - 1] {
            table = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a section")))?;
        }
        table.insert(path[path.len() - 1].to_string(), parse_value(raw));
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{key}`: {}", e.message())))?;
        Ok(())
    }

    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        assignments.iter().try_for_each(|a| self.apply_override(a.as_ref()))
    }

    pub fn sweep_plan(&self) -> SweepPlan {
        let s = &self.sweep;
        SweepPlan {
            run_id: s.run_id.clone(),
            base_params: self.model.clone(),
            flux_list: s.flux_list.clone(),
            detuning_grid: linspace(s.detuning_min, s.detuning_max, s.detuning_points),
            models: s.models.clone(),
            fit_window: s.fit_window.map(|w| (w[0], w[1])),
            survival: s.survival_time.map(|time| SurvivalSpec { time, n_bins: s.survival_bins }),
            pulse_checkpoints: s.pulse_checkpoints,
            dump_traces: s.dump_traces,
        }
    }
}
