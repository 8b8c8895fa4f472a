//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "pond": { "area_m2": 5572, "max_level_cm": 300, "catchment_area_m2": 5900,
//!             "reaction_per_min": 0.25, "inflow_scale": 750 },
//!   "permitted_discharge_l_per_s": 95,
//!   "rain": "forecast.rain.json",
//!   "dt": 0.5, "period": 60, "horizon": 4320,
//!   "initial_level_cm": 100, "initial_storage_mm": 0,
//!   "grid": { "level_step": 0.2, "storage_fraction": 0.005, "clock_step": 0.5 },
//!   "learn": { "coarsening": { "level": 50, "storage": 40, "clock": 60 } },
//!   "seed": 1
//! }
//! ```
//!
//! `rain` is either a path (relative to the config file) or an inline rain
//! program. `valves` may replace `permitted_discharge_l_per_s` with an
//! explicit table. Omitted fields take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{default_valve_table, TieBreak, ValveTable};
use crate::env::PondParams;
use crate::error::{PondError, Result};
use crate::hmdp::{ControlModeId, Model};
use crate::learning::LearnParams;
use crate::rain::RainProgram;
use crate::synthesis::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RainSource {
    Path(PathBuf),
    Inline(RainProgram),
}

impl Default for RainSource {
    fn default() -> Self {
        RainSource::Inline(RainProgram::forecast())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pond: PondParams,
    /// Permitted discharge [L/s] from which the low/medium/high table is built.
    pub permitted_discharge_l_per_s: f64,
    /// Explicit valve table; overrides the permitted discharge.
    pub valves: Option<ValveTable>,
    pub rain: RainSource,
    pub dt: f64,
    pub period: f64,
    pub horizon: f64,
    pub initial_level_cm: f64,
    pub initial_storage_mm: f64,
    pub grid: GridSpec,
    pub learn: LearnParams,
    /// Mode kept by the static baseline.
    pub static_mode: u8,
    /// How permissive strategies pick a mode when simulated.
    pub tie_break: TieBreak,
    /// Runs per expected-value estimate.
    pub eval_runs: usize,
    /// Runs drawn per trace plot.
    pub plot_runs: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pond: PondParams::vilhelmsborg(),
            permitted_discharge_l_per_s: 95.0,
            valves: None,
            rain: RainSource::default(),
            dt: 0.5,
            period: 60.0,
            horizon: 4320.0,
            initial_level_cm: 100.0,
            initial_storage_mm: 0.0,
            grid: GridSpec::default(),
            learn: LearnParams::default(),
            static_mode: 1,
            tie_break: TieBreak::default(),
            eval_runs: 200,
            plot_runs: 10,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config and resolves a rain program given by path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PondError::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            PondError::Json { source, .. } => PondError::Json { path: path.into(), source },
            other => other,
        })?;
        if let RainSource::Path(p) = &cfg.rain {
            let full = path.parent().map_or_else(|| p.clone(), |d| d.join(p));
            cfg.rain = RainSource::Inline(RainProgram::load(&full)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config without touching the file system; a rain path stays unresolved.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PondError::Json { path: PathBuf::from("<config>"), source: e })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn valve_table(&self) -> Result<ValveTable> {
        match &self.valves {
            Some(v) => ValveTable::new(v.q_out.clone(), self.period),
            None => default_valve_table(self.permitted_discharge_l_per_s, self.period),
        }
    }

    pub fn rain_program(&self) -> Result<&RainProgram> {
        match &self.rain {
            RainSource::Inline(p) => Ok(p),
            RainSource::Path(p) => Err(PondError::invalid(format!("rain program {} not loaded", p.display()))),
        }
    }

    pub fn static_mode(&self) -> ControlModeId {
        ControlModeId(self.static_mode)
    }

    pub fn model(&self) -> Result<Model<PondParams>> {
        self.pond.validate()?;
        Model::new(self.pond, self.valve_table()?, self.rain_program()?.clone(), self.dt, self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        model.initial(self.initial_level_cm, self.initial_storage_mm)?;
        self.learn.validate()?;
        if self.static_mode as usize >= model.valves.len() {
            return Err(PondError::invalid(format!("static mode {} not in the valve table", self.static_mode)));
        }
        if self.eval_runs < 2 {
            return Err(PondError::invalid("eval_runs must be at least 2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let cfg = ExperimentConfig::from_json(r#"{ "seed": 9, "initial_level_cm": 0 }"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dt, 0.5);
        assert_eq!(cfg.rain_program().unwrap(), &RainProgram::forecast());
        cfg.validate().unwrap();
        assert_eq!(cfg.model().unwrap().decisions(), 72);
    }

    #[test]
    fn round_trip_and_unknown_fields() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(ExperimentConfig::from_json(r#"{ "sede": 1 }"#).is_err());
    }

    #[test]
    fn rain_path_is_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("r.json"), serde_json::to_string(&RainProgram::dry()).unwrap()).unwrap();
        std::fs::write(dir.path().join("c.json"), r#"{ "rain": "r.json", "horizon": 120 }"#).unwrap();
        let cfg = ExperimentConfig::load(&dir.path().join("c.json")).unwrap();
        assert!(cfg.rain_program().unwrap().is_empty());
    }

    #[test]
    fn horizon_must_be_whole_periods() {
        let cfg = ExperimentConfig { horizon: 90.0, ..ExperimentConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
