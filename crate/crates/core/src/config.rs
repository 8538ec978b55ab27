//! JSON run configuration shared by every command.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every field has a default, so `{}` is a valid document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FitConfig;
use crate::mesh::MeshSpec;
use crate::obs::SourceLevelGrid;
use crate::params::ParamVector;
use crate::simulation::{Placement, ScenarioSettings, SYNTHETIC_FORMULA};
use crate::snr::JanoschekParams;
use crate::uncertainty::BootstrapConfig;

/// Sensor layout, covariates and mesh. With no sensor file the built-in
/// synthetic site is used.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteConfig {
    /// CSV with `sensor,easting,northing`.
    pub sensors: Option<PathBuf>,
    /// Regular-grid CSV with `easting,northing,<covariate>...`.
    pub covariates: Option<PathBuf>,
    /// A mesh CSV written by an earlier run; overrides `mesh`.
    pub mesh_file: Option<PathBuf>,
    pub mesh: Option<MeshSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub detections: PathBuf,
    pub bearings: PathBuf,
    pub received: PathBuf,
    #[serde(default)]
    pub call_noise: Option<PathBuf>,
    #[serde(default)]
    pub noise_sample: Option<PathBuf>,
    /// Study period in the units density is reported per.
    #[serde(default = "one")]
    pub period: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlGridConfig {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl Default for SlGridConfig {
    fn default() -> Self {
        let g = SourceLevelGrid::standard();
        Self { lower: g.lower, upper: g.upper, step: g.step }
    }
}

/// Settings for `simulate`. With `scenario` set, its parameters and model
/// structure replace `truth` and `spec`, and its period applies unless
/// `period` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenario: Option<u64>,
    pub truth: Option<ParamVector>,
    pub formula: String,
    /// Study period; `None` uses the scenario default, or 1 with explicit truth.
    pub period: Option<f64>,
    pub replicates: usize,
    pub placement: Placement,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            scenario: Some(1),
            truth: None,
            formula: SYNTHETIC_FORMULA.to_string(),
            period: None,
            replicates: 1,
            placement: Placement::Centroid,
            seed: 1,
        }
    }
}

/// Settings for `scenarios`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenariosConfig {
    pub scenarios: Vec<u64>,
    /// Analysis-model letters `a` to `e`.
    pub models: Vec<String>,
    pub settings: ScenarioSettings,
}

impl Default for ScenariosConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![1, 2],
            models: ["a", "b", "c", "d", "e"].map(String::from).to_vec(),
            settings: ScenarioSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferConfig {
    /// Parameters to check; falls back to `fit.start`, then the
    /// variable source-level simulation values.
    pub params: Option<ParamVector>,
    pub threshold: f64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self { params: None, threshold: crate::likelihood::BUFFER_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrConfig {
    /// Fit the SNR likelihood instead of the threshold likelihood.
    pub enabled: bool,
    pub start: JanoschekParams,
}

impl Default for SnrConfig {
    fn default() -> Self {
        Self { enabled: false, start: JanoschekParams { theta_u: 0.8, theta_r: 0.1, theta_i: 2.0 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub site: SiteConfig,
    pub data: Option<DataConfig>,
    /// Received-level threshold (dB).
    pub t_r: f64,
    pub m_min: usize,
    pub sl_grid: SlGridConfig,
    pub formula: String,
    /// File with one candidate formula per line; the built-in list of 35
    /// is used when absent.
    pub candidates: Option<PathBuf>,
    pub fit: FitConfig,
    pub bootstrap: BootstrapConfig,
    pub simulation: SimulationConfig,
    pub scenarios: ScenariosConfig,
    pub buffer: BufferConfig,
    pub snr: SnrConfig,
    /// When set, replaces every seed in the document.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            site: SiteConfig::default(),
            data: None,
            t_r: 96.0,
            m_min: 2,
            sl_grid: SlGridConfig::default(),
            formula: "D ~ 1".into(),
            candidates: None,
            fit: FitConfig::default(),
            bootstrap: BootstrapConfig::default(),
            simulation: SimulationConfig::default(),
            scenarios: ScenariosConfig::default(),
            buffer: BufferConfig::default(),
            snr: SnrConfig::default(),
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg.with_seed_override())
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Replaces every seed with `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.bootstrap.seed = seed;
        self.simulation.seed = seed;
        self.scenarios.settings.seed = seed;
        self.fit.jitter_seed = seed;
    }

    fn with_seed_override(mut self) -> Self {
        if let Some(s) = self.seed {
            self.set_seed(s);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.t_r.is_nan() {
            return bad("t_r must be a number".into());
        }
        if self.m_min == 0 {
            return bad("m_min must be at least 1".into());
        }
        if !(self.sl_grid.lower < self.sl_grid.upper) || !(self.sl_grid.step > 0.0) {
            return bad("sl_grid needs lower < upper and step > 0".into());
        }
        if let Some(d) = &self.data {
            if !(d.period > 0.0) {
                return bad("data.period must be positive".into());
            }
        }
        if self.simulation.replicates == 0 || self.scenarios.settings.replicates == 0 {
            return bad("replicate counts must be at least 1".into());
        }
        if self.simulation.period.is_some_and(|p| !(p > 0.0)) {
            return bad("simulation.period must be positive".into());
        }
        if let Some(s) = self.simulation.scenario {
            if !(1..=2).contains(&s) {
                return bad(format!("simulation.scenario must be 1 or 2, got {s}"));
            }
        }
        if self.scenarios.scenarios.iter().any(|s| !(1..=2).contains(s)) {
            return bad("scenarios.scenarios may only contain 1 and 2".into());
        }
        if let Some(m) = self.scenarios.models.iter().find(|m| !matches!(m.as_str(), "a" | "b" | "c" | "d" | "e")) {
            return bad(format!("unknown analysis model {m:?}; use a to e"));
        }
        if !(self.buffer.threshold > 0.0 && self.buffer.threshold < 1.0) {
            return bad("buffer.threshold must lie in (0, 1)".into());
        }
        if self.bootstrap.replicates == 0 {
            return bad("bootstrap.replicates must be at least 1".into());
        }
        let jp = self.snr.start;
        JanoschekParams::new(jp.theta_u, jp.theta_r, jp.theta_i).map_err(|e| Error::Config(format!("snr.start: {e}")))?;
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.site.sensors, &mut self.site.covariates, &mut self.site.mesh_file, &mut self.candidates]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(d) = &mut self.data {
            fix(&mut d.detections);
            fix(&mut d.bearings);
            fix(&mut d.received);
            for p in [&mut d.call_noise, &mut d.noise_sample].into_iter().flatten() {
                fix(p);
            }
        }
    }

    pub fn sl_grid(&self) -> Result<SourceLevelGrid> {
        SourceLevelGrid::new(self.sl_grid.lower, self.sl_grid.upper, self.sl_grid.step)
            .map_err(|e| Error::Config(format!("sl_grid: {e}")))
    }
}

/// Field descriptions emitted by the `config-schema` command.
pub const FIELD_DOCS: &[(&str, &str)] = &[
    ("site.sensors", "CSV of sensor,easting,northing (m); omit for the built-in synthetic site"),
    ("site.covariates", "regular-grid CSV of easting,northing,<covariates>"),
    ("site.mesh_file", "mesh CSV from an earlier run; overrides site.mesh"),
    ("site.mesh", "inner_radius, inner_spacing, outer_radius, outer_spacing (m)"),
    ("data.detections", "0/1 matrix, one row per call, one column per sensor"),
    ("data.bearings", "degrees in [0, 360), empty where not detected"),
    ("data.received", "received levels (dB), empty where not detected"),
    ("data.call_noise", "noise level (dB) at every sensor for every raw call; SNR mode only"),
    ("data.noise_sample", "sampled noise snapshots (dB), one row each; SNR mode only"),
    ("data.period", "study period; density is reported per this period"),
    ("t_r", "received-level threshold in dB (default 96)"),
    ("m_min", "minimum number of detecting sensors (default 2)"),
    ("sl_grid", "source-level quadrature grid lower, upper, step in dB (default 100, 220, 3)"),
    ("formula", "density formula for fit and bootstrap, e.g. \"D ~ depth + s(distance_to_coast, k = 3)\""),
    ("candidates", "file of candidate formulas for select, one per line, # starts a comment"),
    ("fit.spec", "source_level: variable | fixed; bearings: mixture | single | omitted"),
    ("fit.standardize", "centre and scale density covariates while optimising (default true)"),
    ("fit.optim", "max_iterations (500), rel_tol (1e-8), grad_tol (1e-4), optional lower/upper bounds"),
    ("fit.start", "real-scale start values; beta refers to the unstandardized columns"),
    ("fit.multi_start", "number of starts, the first unjittered (default 1)"),
    ("bootstrap", "replicates (999), seed (1), start_at_base (true)"),
    ("simulation", "scenario (1 | 2 | null), truth, formula, period (scenario default, else 1), replicates, placement (centroid | uniform), seed"),
    ("scenarios", "scenarios ([1, 2]), models ([a..e]), settings: replicates (30), seed, t_r, m_min, period, placement, fit"),
    ("buffer", "params to check (default fit.start or the simulation values), threshold (0.001)"),
    ("snr", "enabled (false) switches fit to the SNR likelihood; start holds theta_u, theta_r, theta_i"),
    ("seed", "replaces every seed in the document; --seed overrides it"),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_round_trip() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(RunConfig::from_json(r#"{"t_rr": 3}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"m_min": 0}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"scenarios": {"models": ["z"]}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn seed_replaces_all_seeds() {
        let cfg = RunConfig::from_json(r#"{"seed": 42}"#).unwrap();
        assert_eq!((cfg.bootstrap.seed, cfg.simulation.seed, cfg.scenarios.settings.seed), (42, 42, 42));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"data": {"detections": "d.csv", "bearings": "/abs/b.csv", "received": "r.csv"}}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        let data = cfg.data.unwrap();
        assert_eq!(data.detections, dir.path().join("d.csv"));
        assert_eq!(data.bearings, PathBuf::from("/abs/b.csv"));
        assert_eq!(data.period, 1.0);
    }

    #[test]
    fn every_top_level_field_is_documented() {
        let value = serde_json::to_value(RunConfig::default()).unwrap();
        for key in value.as_object().unwrap().keys() {
            assert!(FIELD_DOCS.iter().any(|(k, _)| k == key || k.starts_with(&format!("{key}."))), "{key}");
        }
    }
}
