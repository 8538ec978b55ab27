//! Synthetic data generation and the scenario-by-model simulation grid.
//!
//! Replicate `r` of a run with base seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` on stream `r`, so replicates are
//! independent of scheduling and reproducible across machines.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::density::{build_design_matrix, log_density, total_abundance, M2_PER_KM2};
use crate::error::{Error, Result};
use crate::estimation::{fit_with_design, moment_intercept, FitConfig};
use crate::formula::{parse_formula, ModelFormula};
use crate::geometry::{wrap_angle, Point, SensorArray};
use crate::likelihood::{Dataset, LatentGrids};
use crate::mesh::{build_mesh, FnCovariates, MeshSpec};
use crate::obs::{expected_received_level, SourceLevelGrid};
use crate::params::{BearingModel, ModelSpec, ParamVector, SourceLevelMode};

/// Where simulated calls sit inside their cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    Centroid,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub truth: ParamVector,
    /// Source-level mode and bearing-error structure of the generator.
    pub spec: ModelSpec,
    pub formula: String,
    pub t_r: f64,
    pub m_min: usize,
    pub period: f64,
    #[serde(default)]
    pub placement: Placement,
    pub seed: u64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCall {
    pub cell: usize,
    pub easting: f64,
    pub northing: f64,
    pub source_level: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub params: ParamVector,
    pub formula: String,
    /// Expected emitted calls per study period, `Σ a D`.
    pub n_true: f64,
    pub n_emitted: usize,
    pub n_retained: usize,
    pub replicate: usize,
    pub seed: u64,
    pub calls: Vec<LatentCall>,
}

/// Von Mises draw centred on zero by the Best–Fisher rejection method.
pub fn sample_von_mises<R: Rng + ?Sized>(rng: &mut R, kappa: f64) -> f64 {
    if kappa < 1e-8 {
        return rng.gen::<f64>() * TAU - PI;
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let u3: f64 = rng.gen();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let theta = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { theta } else { -theta };
        }
    }
}

/// Normal draw truncated to `(0, ∞)` by rejection.
fn sample_source_level<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let s = mu + sigma * z;
        if s > 0.0 {
            return s;
        }
    }
}

pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// One simulated dataset. Density coefficients in `config.truth` refer to
/// the unstandardized design.
pub fn simulate(grids: &LatentGrids, config: &SimConfig, replicate: usize) -> Result<(Dataset, SimTruth)> {
    let formula = parse_formula(&config.formula, grids.mesh.covariate_names())?;
    let design = build_design_matrix(&formula, &grids.mesh, false)?;
    let log_d = log_density(&config.truth.beta, &design)?;
    let truth = &config.truth;
    let variable = config.spec.source_level == SourceLevelMode::Variable;
    if variable && !(truth.sigma_s > 0.0) {
        return Err(Error::Parameter("variable source levels need sigma_s > 0".into()));
    }
    if !(0.0..=1.0).contains(&truth.g0) || !(truth.sigma_r > 0.0) || !(truth.beta_r > 0.0) {
        return Err(Error::Parameter("invalid detection parameters for simulation".into()));
    }
    let (kappa_low, kappa_high, psi) = match config.spec.bearings {
        BearingModel::Mixture => (truth.kappa, truth.kappa + truth.delta_kappa, truth.psi_kappa),
        BearingModel::Single | BearingModel::Omitted => (truth.kappa, truth.kappa, 0.0),
    };
    let prop = crate::obs::PropagationParams::new(truth.beta_r, truth.sigma_r)?;
    let k = grids.array.len();
    let mut rng = replicate_rng(config.seed, replicate);

    let (mut omega, mut bearings, mut levels) = (vec![], vec![], vec![]);
    let mut calls = Vec::new();
    for (m, (cell, ld)) in grids.mesh.cells().iter().zip(&log_d).enumerate() {
        let mean = config.period * cell.area / M2_PER_KM2 * ld.exp();
        let count = if mean > 0.0 {
            Poisson::new(mean).map_err(|e| Error::Numerical(format!("Poisson mean {mean}: {e}")))?.sample(&mut rng) as usize
        } else {
            0
        };
        for _ in 0..count {
            let x = match config.placement {
                Placement::Centroid => cell.centroid,
                Placement::Uniform => {
                    let h = cell.side();
                    Point::new(
                        cell.centroid.easting + h * (rng.gen::<f64>() - 0.5),
                        cell.centroid.northing + h * (rng.gen::<f64>() - 0.5),
                    )
                }
            };
            let s = if variable { sample_source_level(&mut rng, truth.mu_s, truth.sigma_s) } else { truth.mu_s };
            let mut w = vec![false; k];
            let mut y = vec![None; k];
            let mut r = vec![None; k];
            for j in 0..k {
                let low_precision = rng.gen::<f64>() <= psi && psi > 0.0;
                let err = sample_von_mises(&mut rng, if low_precision { kappa_low } else { kappa_high });
                let noise: f64 = StandardNormal.sample(&mut rng);
                let u: f64 = rng.gen();
                let level = expected_received_level(s, grids.array.distance(j, x)?, &prop) + truth.sigma_r * noise;
                if level >= config.t_r && u <= truth.g0 {
                    w[j] = true;
                    let mean_bearing = grids.array.true_bearing(j, x).unwrap_or(0.0);
                    y[j] = Some(wrap_angle(mean_bearing + err));
                    r[j] = Some(level);
                }
            }
            let retained = w.iter().filter(|v| **v).count() >= config.m_min;
            calls.push(LatentCall { cell: m, easting: x.easting, northing: x.northing, source_level: s, retained });
            if retained {
                omega.push(w);
                bearings.push(y);
                levels.push(r);
            }
        }
    }
    let data = Dataset::new(omega, bearings, levels, k, config.t_r, config.m_min, config.period)?;
    let n_true = total_abundance(&truth.beta, &design, &grids.mesh)?;
    let sim_truth = SimTruth {
        params: truth.clone(),
        formula: formula.to_string(),
        n_true,
        n_emitted: calls.len(),
        n_retained: data.n_calls(),
        replicate,
        seed: config.seed,
        calls,
    };
    Ok((data, sim_truth))
}

/// Six sensors on a 7 km triangular lattice.
pub fn synthetic_array() -> SensorArray {
    let h = 7000.0 * 3f64.sqrt() / 2.0;
    SensorArray::new(vec![
        Point::new(0.0, 0.0),
        Point::new(7000.0, 0.0),
        Point::new(14000.0, 0.0),
        Point::new(3500.0, h),
        Point::new(10500.0, h),
        Point::new(7000.0, 2.0 * h),
    ])
    .expect("valid layout")
}

/// Northing of the straight east–west coastline south of the array.
pub const SYNTHETIC_COAST_NORTHING: f64 = -12_000.0;
/// Metres of coast distance per unit of the scaled covariate `d`.
pub const SYNTHETIC_COAST_SCALE: f64 = 40_000.0;

/// Covariates of the synthetic site: `depth` (m), `distance_to_coast` (m)
/// and the scaled distance `d`.
pub fn synthetic_covariates() -> FnCovariates<impl Fn(Point) -> Vec<f64>> {
    FnCovariates::new(
        vec!["depth".into(), "distance_to_coast".into(), "d".into()],
        |p: Point| {
            let dist = (p.northing - SYNTHETIC_COAST_NORTHING).max(0.0);
            let depth = 5.0 + 0.0015 * dist + 4.0 * (p.easting / 9000.0).sin().powi(2);
            vec![depth, dist, dist / SYNTHETIC_COAST_SCALE]
        },
    )
}

/// Reduced mesh of the synthetic site: fine cells around the array and a
/// coarse outer ring wide enough for the long detection tail of loud calls.
pub const SITE_MESH: MeshSpec =
    MeshSpec { inner_radius: 5_000.0, inner_spacing: 2_500.0, outer_radius: 65_000.0, outer_spacing: 12_500.0 };

/// Density formula of the simulation study.
pub const SYNTHETIC_FORMULA: &str = "D ~ d + d2";

pub fn synthetic_site(mesh: MeshSpec) -> Result<LatentGrids> {
    let array = synthetic_array();
    let mesh = build_mesh(&array, &synthetic_covariates(), mesh)?;
    Ok(LatentGrids { array, mesh, sl_grid: SourceLevelGrid::standard() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Variable source levels.
    One,
    /// Fixed source level.
    Two,
}

impl Scenario {
    pub fn number(self) -> u64 {
        match self {
            Scenario::One => 1,
            Scenario::Two => 2,
        }
    }

    pub fn truth(self) -> ParamVector {
        match self {
            Scenario::One => ParamVector::simulation_variable_sl(),
            Scenario::Two => ParamVector::simulation_fixed_sl(),
        }
    }

    pub fn spec(self) -> ModelSpec {
        match self {
            Scenario::One => ModelSpec { source_level: SourceLevelMode::Variable, bearings: BearingModel::Mixture },
            Scenario::Two => ModelSpec { source_level: SourceLevelMode::Fixed, bearings: BearingModel::Mixture },
        }
    }

    /// Study period giving roughly 440 detected calls per dataset, the size of
    /// a season of real survey data.
    pub fn period(self) -> f64 {
        match self {
            Scenario::One => 64.0,
            Scenario::Two => 145.0,
        }
    }
}

/// Analysis models applied to each simulated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalysisModel {
    /// The generating model.
    A,
    /// Wrong source-level mode.
    B,
    /// One von Mises component for bearings.
    C,
    /// Bearings ignored.
    D,
    /// Homogeneous density.
    E,
}

impl AnalysisModel {
    pub const ALL: [AnalysisModel; 5] = [Self::A, Self::B, Self::C, Self::D, Self::E];

    pub fn letter(self) -> char {
        match self {
            Self::A => 'a',
            Self::B => 'b',
            Self::C => 'c',
            Self::D => 'd',
            Self::E => 'e',
        }
    }

    pub fn spec(self, truth: ModelSpec) -> ModelSpec {
        match self {
            Self::A | Self::E => truth,
            Self::B => ModelSpec {
                source_level: match truth.source_level {
                    SourceLevelMode::Variable => SourceLevelMode::Fixed,
                    SourceLevelMode::Fixed => SourceLevelMode::Variable,
                },
                ..truth
            },
            Self::C => ModelSpec { bearings: BearingModel::Single, ..truth },
            Self::D => ModelSpec { bearings: BearingModel::Omitted, ..truth },
        }
    }
}

/// Settings shared by every replicate of a scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSettings {
    pub replicates: usize,
    pub seed: u64,
    pub t_r: f64,
    pub m_min: usize,
    /// Study period; `None` uses the scenario default.
    #[serde(default)]
    pub period: Option<f64>,
    pub placement: Placement,
    pub fit: FitConfig,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        Self {
            replicates: 30,
            seed: 20_230_101,
            t_r: 96.0,
            m_min: 2,
            period: None,
            placement: Placement::Centroid,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub replicate: usize,
    pub n_calls: usize,
    pub n_true: f64,
    pub n_hat: f64,
    pub relative_error: f64,
    pub converged: bool,
    pub params: Option<ParamVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub scenario: u64,
    pub model: char,
    pub replicates: Vec<ReplicateFit>,
    pub n_converged: usize,
    pub n_failed: usize,
    pub relative_bias: f64,
    pub cv: f64,
}

impl SimMetrics {
    pub fn label(&self) -> String {
        format!("{}{}", self.scenario, self.model)
    }

    /// Mean of a real-scale parameter over converged replicates.
    pub fn mean_parameter(&self, f: impl Fn(&ParamVector) -> f64) -> f64 {
        let v: Vec<f64> = self.replicates.iter().filter(|r| r.converged).filter_map(|r| r.params.as_ref()).map(&f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Relative bias and CV of `N̂` over converged replicates.
pub fn summarize_replicates(scenario: u64, model: char, mut replicates: Vec<ReplicateFit>) -> SimMetrics {
    replicates.sort_by_key(|r| r.replicate);
    let ok: Vec<&ReplicateFit> = replicates.iter().filter(|r| r.converged).collect();
    let n = ok.len() as f64;
    let rb = ok.iter().map(|r| r.relative_error).sum::<f64>() / n;
    let mean = ok.iter().map(|r| r.n_hat).sum::<f64>() / n;
    let sd = (ok.iter().map(|r| (r.n_hat - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let n_converged = ok.len();
    SimMetrics {
        scenario,
        model,
        n_failed: replicates.len() - n_converged,
        n_converged,
        relative_bias: rb,
        cv: sd / mean,
        replicates,
    }
}

/// Start values for an analysis model derived from the generating values.
pub fn truth_start(truth: &ParamVector, truth_spec: ModelSpec, model: AnalysisModel) -> ParamVector {
    let spec = model.spec(truth_spec);
    let fallback = ParamVector { sigma_s: 5.0, kappa: 1.0, delta_kappa: 20.0, psi_kappa: 0.1, ..truth.clone() };
    let mut start = truth.adapt(&spec, &fallback);
    if model == AnalysisModel::E {
        start.beta = vec![truth.beta[0]];
    }
    start
}

/// Simulates and fits every replicate of `scenario` under each of `models`.
pub fn run_scenario(scenario: Scenario, models: &[AnalysisModel], settings: &ScenarioSettings) -> Result<Vec<SimMetrics>> {
    if settings.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let grids = synthetic_site(SITE_MESH)?;
    run_scenario_on(&grids, scenario, models, settings)
}

pub fn run_scenario_on(
    grids: &LatentGrids,
    scenario: Scenario,
    models: &[AnalysisModel],
    settings: &ScenarioSettings,
) -> Result<Vec<SimMetrics>> {
    let truth_spec = scenario.spec();
    let sim = SimConfig {
        truth: scenario.truth(),
        spec: truth_spec,
        formula: SYNTHETIC_FORMULA.to_string(),
        t_r: settings.t_r,
        m_min: settings.m_min,
        period: settings.period.unwrap_or(scenario.period()),
        placement: settings.placement,
        seed: settings.seed.wrapping_add(scenario.number()),
        replicates: settings.replicates,
    };
    let names = grids.mesh.covariate_names();
    let full = parse_formula(SYNTHETIC_FORMULA, names)?;
    let homogeneous = ModelFormula::intercept_only();
    let designs = (
        build_design_matrix(&full, &grids.mesh, settings.fit.standardize)?,
        build_design_matrix(&homogeneous, &grids.mesh, settings.fit.standardize)?,
    );

    let per_replicate: Vec<Result<Vec<ReplicateFit>>> = (0..settings.replicates)
        .into_par_iter()
        .map(|rep| {
            let (data, truth) = simulate(grids, &sim, rep)?;
            let n_true = truth.n_true;
            let mut out = Vec::new();
            for &model in models {
                let spec = model.spec(truth_spec);
                let (formula, design) = if model == AnalysisModel::E { (&homogeneous, &designs.1) } else { (&full, &designs.0) };
                let mut start = truth_start(&sim.truth, truth_spec, model);
                let fit_result = (|| {
                    if model == AnalysisModel::E {
                        let lifted = ParamVector { beta: design.from_original_scale(&start.beta)?, ..start.clone() };
                        start.beta[0] = design.to_original_scale(&[moment_intercept(&data, grids, design, &spec, &lifted)?])?[0];
                    }
                    let cfg = FitConfig { spec, start: Some(start.clone()), ..settings.fit.clone() };
                    fit_with_design(&data, formula, design, grids, &cfg)
                })();
                out.push(match fit_result {
                    Ok(f) => ReplicateFit {
                        replicate: rep,
                        n_calls: data.n_calls(),
                        n_true,
                        n_hat: f.n_hat,
                        relative_error: (f.n_hat - n_true) / n_true,
                        converged: f.converged,
                        params: Some(f.params_original()),
                    },
                    Err(_) => ReplicateFit {
                        replicate: rep,
                        n_calls: data.n_calls(),
                        n_true,
                        n_hat: f64::NAN,
                        relative_error: f64::NAN,
                        converged: false,
                        params: None,
                    },
                });
            }
            Ok(out)
        })
        .collect();

    let mut by_model: Vec<Vec<ReplicateFit>> = vec![Vec::new(); models.len()];
    for r in per_replicate {
        for (i, fit) in r?.into_iter().enumerate() {
            by_model[i].push(fit);
        }
    }
    Ok(models
        .iter()
        .zip(by_model)
        .map(|(m, fits)| summarize_replicates(scenario.number(), m.letter(), fits))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::total_abundance;
    use crate::likelihood::{check_buffer, Likelihood, BUFFER_THRESHOLD};
    use crate::obs::{detect_prob, DetectionParams, PropagationParams};

    fn small_config(truth: ParamVector, spec: ModelSpec) -> SimConfig {
        SimConfig {
            truth,
            spec,
            formula: SYNTHETIC_FORMULA.into(),
            t_r: 96.0,
            m_min: 2,
            period: Scenario::One.period(),
            placement: Placement::Centroid,
            seed: 99,
            replicates: 1,
        }
    }

    #[test]
    fn von_mises_sampler_moments() {
        let mut rng = replicate_rng(1, 0);
        for kappa in [0.3, 2.0, 36.7] {
            let n = 40_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_von_mises(&mut rng, kappa)).collect();
            let mean_cos = draws.iter().map(|t| t.cos()).sum::<f64>() / n as f64;
            // I1/I0 by the trapezoid rule, exact to rounding for periodic integrands.
            let grid: Vec<f64> = (0..2000).map(|i| -PI + TAU * i as f64 / 2000.0).collect();
            let w: Vec<f64> = grid.iter().map(|t| (kappa * (t.cos() - 1.0)).exp()).collect();
            let a1 = grid.iter().zip(&w).map(|(t, w)| t.cos() * w).sum::<f64>() / w.iter().sum::<f64>();
            assert!((mean_cos - a1).abs() < 4.0 * (0.5 / n as f64).sqrt(), "kappa {kappa}: {mean_cos} vs {a1}");
            assert!(draws.iter().all(|t| (-PI..=PI).contains(t)));
        }
    }

    #[test]
    fn zero_detection_gives_empty_data() {
        let grids = synthetic_site(SITE_MESH).unwrap();
        let truth = ParamVector { g0: 0.0, ..ParamVector::simulation_variable_sl() };
        let (data, truth) = simulate(&grids, &small_config(truth, Scenario::One.spec()), 0).unwrap();
        assert_eq!(data.n_calls(), 0);
        assert!(truth.n_emitted > 0);
    }

    #[test]
    fn identical_seed_identical_data() {
        let grids = synthetic_site(SITE_MESH).unwrap();
        let cfg = small_config(ParamVector::simulation_variable_sl(), Scenario::One.spec());
        let a = simulate(&grids, &cfg, 3).unwrap();
        let b = simulate(&grids, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate(&grids, &cfg, 4).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn zero_weight_mixture_matches_single_generator() {
        let grids = synthetic_site(SITE_MESH).unwrap();
        let t = ParamVector::simulation_variable_sl();
        let mix = ParamVector { psi_kappa: 0.0, ..t.clone() };
        let single = ParamVector { kappa: t.kappa + t.delta_kappa, ..t };
        let a = simulate(&grids, &small_config(mix, Scenario::One.spec()), 0).unwrap();
        let spec = ModelSpec { bearings: BearingModel::Single, ..Scenario::One.spec() };
        let b = simulate(&grids, &small_config(single, spec), 0).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn emitted_and_retained_counts_match_expectations() {
        let grids = synthetic_site(SITE_MESH).unwrap();
        let cfg = small_config(ParamVector::simulation_variable_sl(), Scenario::One.spec());
        let reps = 40;
        let mut emitted = Vec::new();
        let mut retained = Vec::new();
        let mut expected_n = 0.0;
        for r in 0..reps {
            let (d, t) = simulate(&grids, &cfg, r).unwrap();
            emitted.push(t.n_emitted as f64);
            retained.push(d.n_calls() as f64);
            expected_n = t.n_true * cfg.period;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let se = (expected_n / reps as f64).sqrt();
        assert!((mean(&emitted) - expected_n).abs() < 3.0 * se, "{} vs {expected_n}", mean(&emitted));

        let formula = parse_formula(SYNTHETIC_FORMULA, grids.mesh.covariate_names()).unwrap();
        let design = build_design_matrix(&formula, &grids.mesh, false).unwrap();
        let empty = Dataset::new(vec![], vec![], vec![], 6, 96.0, 2, cfg.period).unwrap();
        let lambda = Likelihood::new(&empty, &grids, &design, Scenario::One.spec())
            .unwrap()
            .lambda_detected(&cfg.truth)
            .unwrap();
        let se = (lambda / reps as f64).sqrt();
        assert!((mean(&retained) - lambda).abs() < 3.0 * se, "{} vs {lambda}", mean(&retained));
        assert!((total_abundance(&cfg.truth.beta, &design, &grids.mesh).unwrap() * cfg.period - expected_n).abs() < 1e-9);
    }

    #[test]
    fn detection_frequency_matches_detection_function() {
        // Sensor-level detection is "g0 if r >= t_r", with Gaussian r; its
        // marginal must equal the smooth detection function.
        let array = synthetic_array();
        let x = Point::new(4000.0, 9000.0);
        let truth = ParamVector::simulation_variable_sl();
        let prop = PropagationParams::new(truth.beta_r, truth.sigma_r).unwrap();
        let det = DetectionParams::new(truth.g0, 96.0).unwrap();
        let s = 160.0;
        let mut rng = replicate_rng(5, 0);
        let n = 60_000;
        for j in 0..array.len() {
            let p = detect_prob(&array, x, s, j, &det, &prop).unwrap();
            let e = expected_received_level(s, array.distance(j, x).unwrap(), &prop);
            let hits = (0..n)
                .filter(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let u: f64 = rng.gen();
                    e + prop.sigma_r * z >= 96.0 && u <= truth.g0
                })
                .count() as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
            assert!((hits / n as f64 - p).abs() < 3.0 * se + 1e-12, "sensor {j}: {} vs {p}", hits / n as f64);
        }
    }

    #[test]
    fn site_meshes_pass_buffer_check() {
        let grids = synthetic_site(SITE_MESH).unwrap();
        assert!(grids.mesh.len() <= 200, "{} cells", grids.mesh.len());
        for scenario in [Scenario::One, Scenario::Two] {
            let r = check_buffer(&grids, &scenario.truth(), &scenario.spec(), 96.0, 2, BUFFER_THRESHOLD).unwrap();
            assert!(r.pass, "scenario {scenario:?}: max boundary p. {}", r.max_probability);
        }
    }

    #[test]
    fn retained_data_satisfy_invariants() {
        let grids = synthetic_site(SITE_MESH).unwrap();
        let cfg = SimConfig { placement: Placement::Uniform, ..small_config(ParamVector::simulation_variable_sl(), Scenario::One.spec()) };
        let (data, truth) = simulate(&grids, &cfg, 0).unwrap();
        assert_eq!(truth.calls.iter().filter(|c| c.retained).count(), data.n_calls());
        for i in 0..data.n_calls() {
            assert!(data.omega(i).iter().filter(|w| **w).count() >= 2);
            assert!(data.received(i).iter().flatten().all(|r| *r >= 96.0));
        }
    }
}
