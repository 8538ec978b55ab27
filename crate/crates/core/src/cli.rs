//! Command implementations behind the `ascr` binary.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{DataConfig, RunConfig, SiteConfig, FIELD_DOCS};
use crate::density::{build_design_matrix, log_density, write_density_csv};
use crate::error::{Error, Result};
use crate::estimation::{default_start, fit, model_select, FitConfig, SelectionRow};
use crate::formula::{parse_formula, ModelFormula, CANDIDATE_FORMULAS};
use crate::io::{
    load_and_truncate, read_sensors, sensor_labels, write_dataset, write_json, write_sensors, DetectionFiles,
    RawDetections, TruncationReport,
};
use crate::likelihood::{check_buffer, Dataset, LatentGrids};
use crate::mesh::{build_mesh, CovariateSource, FnCovariates, GridCovariates, Mesh, MeshSpec};
use crate::params::ParamVector;
use crate::simulation::{
    run_scenario, simulate, synthetic_array, synthetic_covariates, AnalysisModel, Scenario, SimConfig, SimMetrics,
    SITE_MESH, SYNTHETIC_FORMULA,
};
use crate::snr::{fit_snr, NoiseData, SnrParams};
use crate::uncertainty::{bootstrap, summarize, write_qcd_csv, write_replicates_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Simulate,
    Scenarios,
    Bootstrap,
    Select,
    CheckBuffer,
}

/// What a successful command reports on stdout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub status: &'static str,
    pub command: &'static str,
    pub exit_code: i32,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Formula { .. } | Error::Parameter(_) => EXIT_CONFIG,
        Error::Numerical(_) | Error::Quadrature(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Machine-readable description of a failure.
pub fn error_report(e: &Error) -> serde_json::Value {
    let kind = match exit_code(e) {
        EXIT_CONFIG => "config",
        EXIT_NUMERICAL => "numerical",
        _ => "data",
    };
    serde_json::json!({ "status": "error", "kind": kind, "exit_code": exit_code(e), "message": e.to_string() })
}

/// Default values and field descriptions of the run configuration.
pub fn config_schema() -> serde_json::Value {
    let fields: serde_json::Map<String, serde_json::Value> =
        FIELD_DOCS.iter().map(|(k, v)| (k.to_string(), serde_json::Value::from(*v))).collect();
    serde_json::json!({ "defaults": RunConfig::default(), "fields": fields })
}

/// Sensors, mesh and source-level grid of a run.
pub struct Site {
    pub labels: Vec<String>,
    pub grids: LatentGrids,
    pub synthetic: bool,
}

pub fn load_site(cfg: &RunConfig) -> Result<Site> {
    let SiteConfig { sensors, covariates, mesh_file, mesh } = &cfg.site;
    let sl_grid = cfg.sl_grid()?;
    let (labels, array, synthetic) = match sensors {
        Some(path) => {
            let (labels, array) = read_sensors(path)?;
            (labels, array, false)
        }
        None => {
            let array = synthetic_array();
            (sensor_labels(array.len()), array, true)
        }
    };
    let mesh = match mesh_file {
        Some(path) => Mesh::read_csv(path)?,
        None => {
            let spec = mesh.unwrap_or(if synthetic { SITE_MESH } else { MeshSpec::CASE_STUDY });
            let source: Box<dyn CovariateSource> = match (covariates, synthetic) {
                (Some(path), _) => Box::new(GridCovariates::read_csv(path)?),
                (None, true) => Box::new(synthetic_covariates()),
                (None, false) => Box::new(FnCovariates::new(vec![], |_| vec![])),
            };
            build_mesh(&array, source.as_ref(), spec)?
        }
    };
    Ok(Site { labels, grids: LatentGrids { array, mesh, sl_grid }, synthetic })
}

/// A truncated dataset with its report and, in SNR mode, its noise.
pub struct Loaded {
    pub data: Dataset,
    pub report: TruncationReport,
    pub noise: Option<NoiseData>,
}

/// Reads and truncates the data files named in `cfg`.
pub fn load_data(cfg: &RunConfig, site: &Site) -> Result<Loaded> {
    let Some(DataConfig { detections, bearings, received, call_noise, noise_sample, period }) = &cfg.data else {
        return Err(Error::Config("this command needs a data section".into()));
    };
    let files = DetectionFiles { detections: detections.clone(), bearings: bearings.clone(), received: received.clone() };
    let raw = RawDetections::read(&files)?;
    let k = site.grids.array.len();
    if raw.sensors.len() != k {
        return Err(Error::Data(format!("detection files have {} sensor columns but the site has {k} sensors", raw.sensors.len())));
    }
    let (data, report) = load_and_truncate(&raw, cfg.t_r, cfg.m_min, *period)?;
    let noise = if cfg.snr.enabled {
        let (Some(calls), Some(sample)) = (call_noise, noise_sample) else {
            return Err(Error::Config("SNR mode needs data.call_noise and data.noise_sample".into()));
        };
        let all = NoiseData::read_csv(calls, sample, k)?;
        if all.call_noise.len() != raw.n_calls() {
            return Err(Error::Data(format!(
                "call noise has {} rows but the detection files have {}",
                all.call_noise.len(),
                raw.n_calls()
            )));
        }
        let rows = report.retained_rows.iter().map(|&i| all.call_noise[i].clone()).collect();
        Some(NoiseData::new(rows, all.noise_sample, k)?)
    } else {
        None
    };
    Ok(Loaded { data, report, noise })
}

fn formula(text: &str, site: &Site) -> Result<ModelFormula> {
    parse_formula(text, site.grids.mesh.covariate_names())
}

struct Writer {
    dir: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), outputs: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)
    }
}

fn outcome(command: &'static str, w: Writer, exit_code: i32, summary: serde_json::Value) -> Outcome {
    Outcome { status: if exit_code == 0 { "ok" } else { "error" }, command, exit_code, outputs: w.outputs, summary }
}

pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    match command {
        Command::Fit => run_fit(cfg, out),
        Command::Simulate => run_simulate(cfg, out),
        Command::Scenarios => run_scenarios(cfg, out),
        Command::Bootstrap => run_bootstrap(cfg, out),
        Command::Select => run_select(cfg, out),
        Command::CheckBuffer => run_check_buffer(cfg, out),
    }
}

fn run_fit(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let site = load_site(cfg)?;
    let loaded = load_data(cfg, &site)?;
    let f = formula(&cfg.formula, &site)?;
    let mut w = Writer::new(out)?;
    w.json("truncation.json", &loaded.report)?;
    let mesh_path = w.path("mesh.csv");
    site.grids.mesh.write_csv(&mesh_path)?;
    let design = build_design_matrix(&f, &site.grids.mesh, cfg.fit.standardize)?;
    let summary = if let Some(noise) = &loaded.noise {
        let base = match &cfg.fit.start {
            Some(s) => s.clone(),
            None => {
                let raw_design = build_design_matrix(&f, &site.grids.mesh, false)?;
                default_start(&loaded.data, &site.grids, &raw_design, &cfg.fit.spec)?
            }
        };
        let start = SnrParams { janoschek: cfg.snr.start, base };
        let result = fit_snr(&loaded.data, noise, &f, &site.grids, &cfg.fit, &start)?;
        w.json("fit.json", &result)?;
        let density = w.path("density.csv");
        write_density_csv(&density, &site.grids.mesh, &log_density(&result.params.base.beta, &design)?)?;
        serde_json::json!({ "n_calls": loaded.data.n_calls(), "n_hat": result.n_hat, "aic": result.aic, "converged": result.converged })
    } else {
        eprintln!("fitting {} to {} calls", f, loaded.data.n_calls());
        let result = fit(&loaded.data, &f, &site.grids, &cfg.fit)?;
        w.json("fit.json", &result)?;
        let density = w.path("density.csv");
        write_density_csv(&density, &site.grids.mesh, &log_density(&result.params.beta, &design)?)?;
        serde_json::json!({ "n_calls": loaded.data.n_calls(), "n_hat": result.n_hat, "aic": result.aic, "converged": result.converged })
    };
    Ok(outcome("fit", w, 0, summary))
}

fn sim_config(cfg: &RunConfig) -> Result<SimConfig> {
    let s = &cfg.simulation;
    let (truth, spec, formula, period) = match s.scenario {
        Some(n) => {
            let sc = if n == 1 { Scenario::One } else { Scenario::Two };
            (sc.truth(), sc.spec(), SYNTHETIC_FORMULA.to_string(), s.period.unwrap_or(sc.period()))
        }
        None => {
            let truth = s
                .truth
                .clone()
                .ok_or_else(|| Error::Config("simulation needs either a scenario or truth parameters".into()))?;
            (truth, cfg.fit.spec, s.formula.clone(), s.period.unwrap_or(1.0))
        }
    };
    Ok(SimConfig {
        truth,
        spec,
        formula,
        t_r: cfg.t_r,
        m_min: cfg.m_min,
        period,
        placement: s.placement,
        seed: s.seed,
        replicates: s.replicates,
    })
}

fn run_simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let site = load_site(cfg)?;
    let sim = sim_config(cfg)?;
    let mut w = Writer::new(out)?;
    let sensors = w.path("sensors.csv");
    write_sensors(&sensors, &site.labels, &site.grids.array)?;
    let mesh = w.path("mesh.csv");
    site.grids.mesh.write_csv(&mesh)?;
    let mut counts = Vec::new();
    for rep in 0..sim.replicates {
        let (data, truth) = simulate(&site.grids, &sim, rep)?;
        let name = format!("replicate_{rep:03}");
        let dir = out.join(&name);
        std::fs::create_dir_all(&dir)?;
        let files = DetectionFiles::in_dir(&dir);
        write_dataset(&files, &data, &site.labels)?;
        write_json(&dir.join("truth.json"), &truth)?;
        w.outputs.push(dir);
        counts.push(data.n_calls());
    }
    // A config that fits the first replicate with the generating model.
    let first = DetectionFiles::in_dir(Path::new("replicate_000"));
    let fit_cfg = RunConfig {
        site: SiteConfig { sensors: Some("sensors.csv".into()), covariates: None, mesh_file: Some("mesh.csv".into()), mesh: None },
        data: Some(DataConfig {
            detections: first.detections,
            bearings: first.bearings,
            received: first.received,
            call_noise: None,
            noise_sample: None,
            period: sim.period,
        }),
        formula: sim.formula.clone(),
        fit: FitConfig { spec: sim.spec, start: Some(sim.truth.clone()), ..cfg.fit.clone() },
        ..cfg.clone()
    };
    w.json("fit_config.json", &fit_cfg)?;
    Ok(outcome("simulate", w, 0, serde_json::json!({ "replicates": sim.replicates, "calls": counts })))
}

fn run_scenarios(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let sc = &cfg.scenarios;
    let models: Vec<AnalysisModel> = sc
        .models
        .iter()
        .map(|m| AnalysisModel::ALL.into_iter().find(|a| a.letter().to_string() == *m).expect("validated"))
        .collect();
    let mut all: Vec<SimMetrics> = Vec::new();
    for &n in &sc.scenarios {
        let scenario = if n == 1 { Scenario::One } else { Scenario::Two };
        eprintln!("scenario {n}: {} replicates x {} models", sc.settings.replicates, models.len());
        let metrics = run_scenario(scenario, &models, &sc.settings)?;
        for m in &metrics {
            eprintln!("  {}: RB {:+.3}, CV {:.3}, {} converged", m.label(), m.relative_bias, m.cv, m.n_converged);
        }
        all.extend(metrics);
    }
    let mut w = Writer::new(out)?;
    let metrics_path = w.path("metrics.csv");
    let mut csv_w = csv::Writer::from_path(&metrics_path)?;
    csv_w.write_record(["scenario", "model", "replicates", "converged", "failed", "relative_bias", "cv", "mean_mu_s", "mean_beta_r"])?;
    for m in &all {
        csv_w.write_record([
            m.scenario.to_string(),
            m.model.to_string(),
            m.replicates.len().to_string(),
            m.n_converged.to_string(),
            m.n_failed.to_string(),
            m.relative_bias.to_string(),
            m.cv.to_string(),
            m.mean_parameter(|p| p.mu_s).to_string(),
            m.mean_parameter(|p| p.beta_r).to_string(),
        ])?;
    }
    csv_w.flush()?;
    let reps_path = w.path("replicates.csv");
    let mut csv_w = csv::Writer::from_path(&reps_path)?;
    csv_w.write_record(["scenario", "model", "replicate", "n_calls", "n_true", "n_hat", "relative_error", "converged"])?;
    for m in &all {
        for r in &m.replicates {
            csv_w.write_record([
                m.scenario.to_string(),
                m.model.to_string(),
                r.replicate.to_string(),
                r.n_calls.to_string(),
                r.n_true.to_string(),
                r.n_hat.to_string(),
                r.relative_error.to_string(),
                r.converged.to_string(),
            ])?;
        }
    }
    csv_w.flush()?;
    w.json("metrics.json", &all)?;
    let summary = all
        .iter()
        .map(|m| serde_json::json!({ "label": m.label(), "relative_bias": m.relative_bias, "cv": m.cv }))
        .collect();
    Ok(outcome("scenarios", w, 0, serde_json::Value::Array(summary)))
}

fn run_bootstrap(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    if cfg.snr.enabled {
        return Err(Error::Config("bootstrap uses the threshold likelihood; disable snr".into()));
    }
    let site = load_site(cfg)?;
    let loaded = load_data(cfg, &site)?;
    let f = formula(&cfg.formula, &site)?;
    let mut w = Writer::new(out)?;
    w.json("truncation.json", &loaded.report)?;
    eprintln!("fitting {} to {} calls", f, loaded.data.n_calls());
    let base = fit(&loaded.data, &f, &site.grids, &cfg.fit)?;
    w.json("fit.json", &base)?;
    eprintln!("bootstrapping {} replicates", cfg.bootstrap.replicates);
    let run = bootstrap(&loaded.data, &f, &site.grids, &cfg.fit, &base, &cfg.bootstrap)?;
    let summary = summarize(&run, &base)?;
    w.json("bootstrap.json", &summary)?;
    let reps = w.path("bootstrap_replicates.csv");
    write_replicates_csv(&reps, &run)?;
    let qcd = w.path("qcd.csv");
    write_qcd_csv(&qcd, &site.grids, &summary.qcd)?;
    let design = build_design_matrix(&f, &site.grids.mesh, cfg.fit.standardize)?;
    let density = w.path("density.csv");
    write_density_csv(&density, &site.grids.mesh, &log_density(&base.params.beta, &design)?)?;
    let s = serde_json::json!({
        "n_hat": base.n_hat,
        "cv_percent": summary.abundance.cv_percent,
        "lower": summary.abundance.lower,
        "upper": summary.abundance.upper,
        "converged_replicates": summary.n_converged,
    });
    Ok(outcome("bootstrap", w, 0, s))
}

/// Candidate formulas from a file, one per line; blank lines and text
/// after `#` are ignored.
pub fn read_candidates(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn write_selection_csv(path: &Path, rows: &[SelectionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "formula", "n_params", "log_likelihood", "aic", "delta_aic", "n_hat", "converged", "message"])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            opt(r.rank.map(|v| v.to_string())),
            r.formula.clone(),
            r.n_params.to_string(),
            r.log_likelihood.to_string(),
            r.aic.to_string(),
            opt(r.delta_aic.map(|v| v.to_string())),
            r.n_hat.to_string(),
            r.converged.to_string(),
            r.message.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_select(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let site = load_site(cfg)?;
    let loaded = load_data(cfg, &site)?;
    let texts = match &cfg.candidates {
        Some(p) => read_candidates(p)?,
        None => CANDIDATE_FORMULAS.iter().map(|s| s.to_string()).collect(),
    };
    let candidates = texts.iter().map(|t| formula(t, &site)).collect::<Result<Vec<_>>>()?;
    eprintln!("fitting {} candidate formulas to {} calls", candidates.len(), loaded.data.n_calls());
    let rows = model_select(&loaded.data, &candidates, &site.grids, &cfg.fit)?;
    let mut w = Writer::new(out)?;
    let path = w.path("selection.csv");
    write_selection_csv(&path, &rows)?;
    let converged = rows.iter().filter(|r| r.converged).count();
    let best = rows.first().filter(|r| r.converged).map(|r| r.formula.clone());
    let code = if converged > 0 { 0 } else { EXIT_NUMERICAL };
    Ok(outcome("select", w, code, serde_json::json!({ "candidates": rows.len(), "converged": converged, "best": best })))
}

fn run_check_buffer(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let site = load_site(cfg)?;
    let params = cfg
        .buffer
        .params
        .clone()
        .or_else(|| cfg.fit.start.clone())
        .unwrap_or_else(ParamVector::simulation_variable_sl);
    let report = check_buffer(&site.grids, &params, &cfg.fit.spec, cfg.t_r, cfg.m_min, cfg.buffer.threshold)?;
    let mut w = Writer::new(out)?;
    w.json("buffer.json", &report)?;
    let s = serde_json::json!({ "pass": report.pass, "max_probability": report.max_probability, "threshold": report.threshold });
    Ok(outcome("check-buffer", w, 0, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Formula { position: 0, message: "x".into() }), 2);
        assert_eq!(exit_code(&Error::Load { path: "p".into(), message: "m".into() }), 3);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 4);
        assert_eq!(error_report(&Error::Numerical("x".into()))["kind"], "numerical");
    }

    #[test]
    fn candidates_file_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "# list\nD ~ 1\n\nD ~ depth  # linear\n").unwrap();
        assert_eq!(read_candidates(&p).unwrap(), vec!["D ~ 1", "D ~ depth"]);
    }

    #[test]
    fn schema_documents_defaults() {
        let s = config_schema();
        assert_eq!(s["defaults"]["t_r"], 96.0);
        assert!(s["fields"]["formula"].is_string());
    }

    #[test]
    fn buffer_with_silent_sensors_passes() {
        let mut cfg = RunConfig::default();
        cfg.buffer.params = Some(ParamVector { g0: 0.0, ..ParamVector::simulation_variable_sl() });
        let dir = tempfile::tempdir().unwrap();
        let o = run(Command::CheckBuffer, &cfg, dir.path()).unwrap();
        assert_eq!(o.summary["pass"], true);
        assert_eq!(o.summary["max_probability"], 0.0);
    }

    #[test]
    fn missing_data_section_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = run(Command::Fit, &RunConfig::default(), dir.path()).unwrap_err();
        assert_eq!(exit_code(&e), 2);
    }
}
