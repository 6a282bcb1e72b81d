//! Run configuration: one TOML document (or its JSON equivalent), parsed
//! strictly, validated with key-named errors and filled with preset defaults.

use std::path::{Path, PathBuf};

use instructmpc_core::control::{solve_dare_default, SystemModel};
use instructmpc_core::l2d::ScenarioLibrary;
use instructmpc_core::linalg::{from_rows, Vector};
use instructmpc_core::sims::{
    EnergyScenario, LearnerConfig, LinearPlant, ModelChoice, Plant, Preset, RobotScenario, TunerChoice, Variant,
    ROBOT_STEP_G,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_PACE_HZ: f64 = 0.2;
pub const MAX_PACE_HZ: f64 = 50.0;
pub const DEFAULT_PACE_HZ: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config error at `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Robot,
    Energy,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimate {
    Estimate,
}

/// Prediction horizon: a fixed count or `"auto"` (⌈ln T / ln(1/ρ)⌉).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSetting {
    Fixed(usize),
    Auto(Auto),
}

/// Gradient bound in the step size: a value or `"estimate"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GSetting {
    Fixed(f64),
    Estimate(Estimate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Affine,
    Softmax,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub model: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub timeout_ms: u64,
    pub tuner: TunerChoice,
    pub diameter: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<GSetting>,
    pub projection: bool,
    pub prior_gain: f64,
    pub softmax_gain: f64,
    pub beta: f64,
    pub dpo_step: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dpo_threshold: Option<usize>,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let core = LearnerConfig::default();
        LearnerSection {
            model: ModelKind::Affine,
            command: None,
            timeout_ms: 5000,
            tuner: core.tuner,
            diameter: core.diameter,
            g: None,
            projection: core.projection,
            prior_gain: core.prior_gain,
            softmax_gain: core.softmax_gain,
            beta: core.beta,
            dpo_step: core.dpo_step,
            dpo_threshold: core.dpo_threshold,
        }
    }
}

impl LearnerSection {
    pub fn to_core(&self) -> Result<LearnerConfig, ConfigError> {
        let model = match self.model {
            ModelKind::Affine => ModelChoice::Affine,
            ModelKind::Softmax => ModelChoice::Softmax,
            ModelKind::External => ModelChoice::External {
                command: self
                    .command
                    .clone()
                    .ok_or_else(|| ConfigError::new("learner.command", "required for the external model"))?,
                timeout_ms: self.timeout_ms,
            },
        };
        let g = match self.g {
            Some(GSetting::Fixed(v)) => Some(v),
            _ => None,
        };
        let cfg = LearnerConfig {
            model,
            tuner: self.tuner,
            diameter: self.diameter,
            g,
            projection: self.projection,
            prior_gain: self.prior_gain,
            softmax_gain: self.softmax_gain,
            beta: self.beta,
            dpo_step: self.dpo_step,
            dpo_threshold: self.dpo_threshold,
        };
        cfg.validate().map_err(|e| ConfigError::new("learner", e.to_string()))?;
        Ok(cfg)
    }
}

/// A linear system given by explicit matrices, with its scenario library and
/// disturbance stream read from files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSystem {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub w_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Scenario library JSON.
    pub library: PathBuf,
    /// CSV, one row of n values per step.
    pub disturbances: PathBuf,
    /// Text file, one context per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: PresetName,
    /// Episode length T; for the energy preset a multiple of the day length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<KSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    #[serde(default = "default_pace")]
    pub pace_hz: f64,
    #[serde(default = "default_session_variant")]
    pub session_variant: Variant,
    /// Instruction log (JSON lines `{"t","text"}`) replayed over the scripted contexts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions: Option<PathBuf>,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub robot: RobotScenario,
    #[serde(default)]
    pub energy: EnergyScenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSystem>,
}

fn default_master_seed() -> u64 {
    7
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_pace() -> f64 {
    DEFAULT_PACE_HZ
}

fn default_session_variant() -> Variant {
    Variant::Tuned
}

/// Parses TOML, or JSON when the text starts with `{`.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    fn keyed<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> ConfigError {
        let key = e.path().to_string();
        ConfigError::new(if key == "." { "<document>".to_string() } else { key }, e.into_inner().to_string())
    }
    let mut cfg: RunConfig = if text.trim_start().starts_with('{') {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        serde_path_to_error::deserialize(value).map_err(keyed)?
    } else {
        let value: toml::Table = toml::from_str(text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        serde_path_to_error::deserialize(toml::Value::Table(value)).map_err(keyed)?
    };
    cfg.fill_defaults();
    Ok(cfg)
}

/// Reads, parses, fills defaults and validates; relative paths inside the
/// file resolve against the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(dir) = path.parent() {
        cfg.resolve_paths(dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve(dir: &Path, p: &mut PathBuf) {
    if p.is_relative() && !dir.as_os_str().is_empty() {
        *p = dir.join(&*p);
    }
}

impl RunConfig {
    pub fn minimal(preset: PresetName) -> Self {
        let text = format!("preset = \"{}\"", serde_json::to_value(preset).expect("name").as_str().expect("str"));
        parse_config(&text).expect("minimal config parses")
    }

    fn fill_defaults(&mut self) {
        if self.preset == PresetName::Energy {
            if let Some(t) = self.horizon {
                self.energy.days = t / self.energy.steps_per_day.max(1);
            }
        }
        if self.preset == PresetName::Robot {
            if let Some(t) = self.horizon {
                self.robot.horizon = t;
            }
        }
        let preset = self.core_preset();
        if self.horizon.is_none() && self.preset != PresetName::Custom {
            self.horizon = preset.as_ref().map(Preset::horizon);
        }
        if self.k.is_none() {
            self.k = Some(KSetting::Fixed(preset.as_ref().map_or(5, Preset::default_k)));
        }
        if self.seeds.is_none() {
            self.seeds = Some(match self.preset {
                PresetName::Robot => 20,
                PresetName::Energy | PresetName::Custom => 1,
            });
        }
        if self.learner.g.is_none() {
            self.learner.g = Some(match self.preset {
                PresetName::Robot => GSetting::Fixed(ROBOT_STEP_G),
                _ => GSetting::Estimate(Estimate::Estimate),
            });
        }
    }

    fn resolve_paths(&mut self, dir: &Path) {
        if let Some(c) = &mut self.custom {
            resolve(dir, &mut c.library);
            resolve(dir, &mut c.disturbances);
            if let Some(ctx) = &mut c.contexts {
                resolve(dir, ctx);
            }
        }
        if let Some(p) = &mut self.instructions {
            resolve(dir, p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.k {
            Some(KSetting::Fixed(0)) => return Err(ConfigError::new("k", "must be at least 1")),
            None => return Err(ConfigError::new("k", "missing")),
            _ => {}
        }
        if self.seeds == Some(0) {
            return Err(ConfigError::new("seeds", "must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(ConfigError::new("variants", "must name at least one variant"));
        }
        if !(MIN_PACE_HZ..=MAX_PACE_HZ).contains(&self.pace_hz) {
            return Err(ConfigError::new("pace_hz", format!("must lie in [{MIN_PACE_HZ}, {MAX_PACE_HZ}]")));
        }
        if self.horizon == Some(0) {
            return Err(ConfigError::new("horizon", "must be positive"));
        }
        self.learner.to_core()?;
        match self.preset {
            PresetName::Robot => self.robot.validate().map_err(|e| ConfigError::new("robot", e.to_string()))?,
            PresetName::Energy => {
                if let Some(t) = self.horizon {
                    if t % self.energy.steps_per_day != 0 {
                        return Err(ConfigError::new("horizon", "must be a whole number of days for the energy preset"));
                    }
                }
                self.energy.validate().map_err(|e| ConfigError::new("energy", e.to_string()))?
            }
            PresetName::Custom => {
                let c = self.custom.as_ref().ok_or_else(|| ConfigError::new("custom", "required for preset `custom`"))?;
                for (key, p) in [("custom.library", Some(&c.library)), ("custom.disturbances", Some(&c.disturbances)), ("custom.contexts", c.contexts.as_ref())] {
                    if let Some(p) = p {
                        if !p.is_file() {
                            return Err(ConfigError::new(key, format!("file `{}` does not exist", p.display())));
                        }
                    }
                }
                self.custom_plant()?;
            }
        }
        if let Some(p) = &self.instructions {
            if !p.is_file() {
                return Err(ConfigError::new("instructions", format!("file `{}` does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn seed_count(&self) -> usize {
        self.seeds.unwrap_or(1)
    }

    pub fn core_preset(&self) -> Option<Preset> {
        match self.preset {
            PresetName::Robot => Some(Preset::Robot(self.robot.clone())),
            PresetName::Energy => Some(Preset::Energy(self.energy.clone())),
            PresetName::Custom => None,
        }
    }

    pub fn learner(&self) -> Result<LearnerConfig, ConfigError> {
        self.learner.to_core()
    }

    /// Plant for episode `seed`; the custom system replays the same stream for every seed.
    pub fn plant(&self, seed: u64) -> Result<Box<dyn Plant>, ConfigError> {
        match self.core_preset() {
            Some(p) => p.plant(self.master_seed, seed).map_err(|e| ConfigError::new("preset", e.to_string())),
            None => Ok(Box::new(self.custom_plant()?)),
        }
    }

    /// Resolves `k = "auto"` against the plant's closed-loop spectral radius.
    pub fn resolve_k(&self, plant: &dyn Plant) -> Result<usize, ConfigError> {
        match self.k {
            Some(KSetting::Fixed(k)) => Ok(k),
            Some(KSetting::Auto(_)) => instructmpc_core::analysis::select_horizon(plant.solution().rho_f, plant.horizon())
                .map_err(|e| ConfigError::new("k", e.to_string())),
            None => Err(ConfigError::new("k", "missing")),
        }
    }

    fn custom_plant(&self) -> Result<LinearPlant, ConfigError> {
        let c = self.custom.as_ref().ok_or_else(|| ConfigError::new("custom", "required for preset `custom`"))?;
        let model = SystemModel::new(from_rows(&c.a), from_rows(&c.b), from_rows(&c.q), from_rows(&c.r), c.w_bound)
            .map_err(|e| ConfigError::new("custom", e.to_string()))?;
        let n = model.n();
        let sol = solve_dare_default(&model).map_err(|e| ConfigError::new("custom", e.to_string()))?;
        let text = std::fs::read_to_string(&c.library).map_err(|e| ConfigError::new("custom.library", e.to_string()))?;
        let lib = ScenarioLibrary::from_json(&text, c.w_bound).map_err(|e| ConfigError::new("custom.library", e.to_string()))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(&c.disturbances)
            .map_err(|e| ConfigError::new("custom.disturbances", e.to_string()))?;
        let mut w = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| ConfigError::new("custom.disturbances", e.to_string()))?;
            let values = row
                .iter()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::new("custom.disturbances", format!("row {}: {e}", i + 1)))?;
            if values.len() != n {
                return Err(ConfigError::new("custom.disturbances", format!("row {} has {} values, expected {n}", i + 1, values.len())));
            }
            w.push(Vector::from_vec(values));
        }
        if let Some(t) = self.horizon {
            if t > w.len() {
                return Err(ConfigError::new("horizon", format!("exceeds the {} disturbance rows", w.len())));
            }
            w.truncate(t);
        }
        let mut contexts: Vec<String> = match &c.contexts {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| ConfigError::new("custom.contexts", e.to_string()))?
                .lines()
                .map(str::to_string)
                .collect(),
            None => Vec::new(),
        };
        contexts.resize(w.len(), String::new());
        let x0 = match &c.x0 {
            Some(v) if v.len() == n => Vector::from_vec(v.clone()),
            Some(v) => return Err(ConfigError::new("custom.x0", format!("has {} values, expected {n}", v.len()))),
            None => Vector::zeros(n),
        };
        LinearPlant::new(sol, lib, x0, w, contexts).map_err(|e| ConfigError::new("custom", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_robot_defaults() {
        let cfg = parse_config("preset = \"robot\"").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.horizon, Some(240));
        assert_eq!(cfg.k, Some(KSetting::Fixed(5)));
        assert!(cfg.learner.projection);
        assert_eq!(cfg.seeds, Some(20));
        assert_eq!(cfg.learner.g, Some(GSetting::Fixed(ROBOT_STEP_G)));
    }

    #[test]
    fn energy_defaults_to_a_day_ahead() {
        let cfg = parse_config("preset = \"energy\"").unwrap();
        assert_eq!(cfg.k, Some(KSetting::Fixed(24)));
        assert_eq!(cfg.horizon, Some(2400));
        assert_eq!(cfg.learner.g, Some(GSetting::Estimate(Estimate::Estimate)));
    }

    #[test]
    fn zero_k_names_the_key() {
        let cfg = parse_config("preset = \"robot\"\nk = 0").unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.key, "k");
    }

    #[test]
    fn unknown_and_mistyped_keys_are_named() {
        let err = parse_config("preset = \"robot\"\n[learner]\ndiameter = \"wide\"").unwrap_err();
        assert_eq!(err.key, "learner.diameter");
        let err = parse_config("preset = \"robot\"\n[robot]\nhorizn = 3").unwrap_err();
        assert!(err.key.starts_with("robot"), "{err}");
    }

    #[test]
    fn auto_and_estimate_keywords() {
        let cfg = parse_config("preset = \"robot\"\nk = \"auto\"\n[learner]\ng = \"estimate\"").unwrap();
        assert_eq!(cfg.k, Some(KSetting::Auto(Auto::Auto)));
        assert_eq!(cfg.learner.g, Some(GSetting::Estimate(Estimate::Estimate)));
        assert_eq!(cfg.learner().unwrap().g, None);
        let plant = cfg.plant(0).unwrap();
        assert!(cfg.resolve_k(plant.as_ref()).unwrap() >= 1);
    }

    #[test]
    fn round_trip_is_stable() {
        for text in [
            "preset = \"robot\"\nk = 3\n[learner]\ndiameter = 2.0",
            "preset = \"energy\"\nhorizon = 48",
            "{\"preset\": \"robot\", \"k\": \"auto\", \"variants\": [\"tuned\"]}",
        ] {
            let once = parse_config(text).unwrap();
            let twice = parse_config(&once.to_toml()).unwrap();
            assert_eq!(once, twice);
            assert_eq!(once.to_toml(), twice.to_toml());
        }
    }

    #[test]
    fn json_equivalent_is_accepted() {
        let a = parse_config("{\"preset\": \"robot\", \"k\": 4}").unwrap();
        let b = parse_config("preset = \"robot\"\nk = 4").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn external_model_requires_a_command() {
        let cfg = parse_config("preset = \"robot\"\n[learner]\nmodel = \"external\"\ntuner = \"dpo\"").unwrap();
        assert_eq!(cfg.validate().unwrap_err().key, "learner.command");
    }

    #[test]
    fn pace_bounds() {
        let cfg = parse_config("preset = \"robot\"\npace_hz = 80.0").unwrap();
        assert_eq!(cfg.validate().unwrap_err().key, "pace_hz");
    }

    #[test]
    fn missing_custom_files_are_reported() {
        let text = "preset = \"custom\"\n[custom]\na = [[1.0]]\nb = [[1.0]]\nq = [[1.0]]\nr = [[1.0]]\nw_bound = 1.0\nlibrary = \"/nonexistent/lib.json\"\ndisturbances = \"/nonexistent/w.csv\"";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.validate().unwrap_err().key, "custom.library");
    }
}
