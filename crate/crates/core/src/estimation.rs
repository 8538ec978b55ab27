//! Maximum-likelihood fitting, AIC and candidate-model ranking.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::density::{abundance_from_log_density, build_design_matrix, log_density, DesignMatrix};
use crate::error::{Error, Result};
use crate::formula::ModelFormula;
use crate::likelihood::{Dataset, LatentGrids, Likelihood};
use crate::optim::{minimize, numeric_gradient, OptimConfig};
use crate::params::{ModelSpec, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub spec: ModelSpec,
    /// Centre and scale non-intercept density columns before fitting.
    pub standardize: bool,
    pub optim: OptimConfig,
    /// Real-scale start; density coefficients refer to the unstandardized
    /// columns. Defaults are used when absent.
    pub start: Option<ParamVector>,
    /// Total number of starts, the first unjittered.
    pub multi_start: usize,
    pub jitter_seed: u64,
    /// Standard deviation of start jitter on the link scale.
    pub jitter_sd: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            spec: ModelSpec::default(),
            standardize: true,
            optim: OptimConfig::default(),
            start: None,
            multi_start: 1,
            jitter_seed: 0,
            jitter_sd: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub link: f64,
    pub real: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub formula: String,
    pub spec: ModelSpec,
    pub standardized: bool,
    pub estimates: Vec<Estimate>,
    /// Density coefficients for the unstandardized design columns.
    pub beta_original: Vec<f64>,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub aic: f64,
    pub n_hat: f64,
    pub lambda_hat: f64,
    pub expected_singletons: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub message: String,
    /// Wall-clock seconds; not serialized so that results are reproducible.
    #[serde(skip)]
    pub runtime_seconds: f64,
    /// Real-scale parameters with density coefficients on the fitted scale.
    pub params: ParamVector,
}

impl FitResult {
    /// Parameters with density coefficients for unstandardized columns.
    pub fn params_original(&self) -> ParamVector {
        ParamVector { beta: self.beta_original.clone(), ..self.params.clone() }
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.estimates.iter().find(|e| e.name == name).map(|e| e.real)
    }
}

/// `2k - 2 log L`.
pub fn aic(n_params: usize, log_likelihood: f64) -> f64 {
    2.0 * n_params as f64 - 2.0 * log_likelihood
}

/// Documented default starting values. The density intercept matches the
/// expected detected count to `n`; other coefficients start at zero.
pub fn default_start(
    data: &Dataset,
    grids: &LatentGrids,
    design: &DesignMatrix,
    spec: &ModelSpec,
) -> Result<ParamVector> {
    let beta_r = 15.0;
    let median_level = data.median_received().unwrap_or(data.t_r + 10.0);
    let mut p = ParamVector {
        g0: 0.5,
        beta_r,
        sigma_r: 3.0,
        mu_s: median_level + beta_r * grids.array.median_spacing().log10(),
        sigma_s: 5.0,
        kappa: 1.0,
        delta_kappa: 20.0,
        psi_kappa: 0.1,
        beta: vec![0.0; design.ncols()],
    };
    p.beta[0] = moment_intercept(data, grids, design, spec, &p)?;
    Ok(p)
}

/// Intercept that makes the expected detected count equal `n`, holding the
/// other parameters fixed.
pub fn moment_intercept(
    data: &Dataset,
    grids: &LatentGrids,
    design: &DesignMatrix,
    spec: &ModelSpec,
    params: &ParamVector,
) -> Result<f64> {
    if data.n_calls() == 0 {
        return Err(Error::Data("cannot fit a model to zero calls".into()));
    }
    let lik = Likelihood::new(data, grids, design, *spec)?;
    let mut p = params.clone();
    let b0 = p.beta[0];
    p.beta[0] = 0.0;
    let lambda = lik.lambda_detected(&p)?;
    if !(lambda > 0.0) {
        return Ok(b0);
    }
    Ok((data.n_calls() as f64 / lambda).ln())
}

/// Fits `formula` by maximising the full likelihood.
pub fn fit(data: &Dataset, formula: &ModelFormula, grids: &LatentGrids, config: &FitConfig) -> Result<FitResult> {
    let design = build_design_matrix(formula, &grids.mesh, config.standardize)?;
    fit_with_design(data, formula, &design, grids, config)
}

pub fn fit_with_design(
    data: &Dataset,
    formula: &ModelFormula,
    design: &DesignMatrix,
    grids: &LatentGrids,
    config: &FitConfig,
) -> Result<FitResult> {
    let clock = Instant::now();
    let spec = config.spec;
    if data.n_calls() == 0 {
        return Err(Error::Data("cannot fit a model to zero calls".into()));
    }
    let mut start = match &config.start {
        Some(s) => s.clone(),
        None => default_start(data, grids, design, &spec)?,
    };
    if start.beta.len() != design.ncols() {
        return Err(Error::Dimension { expected: design.ncols(), got: start.beta.len() });
    }
    if config.start.is_some() {
        start.beta = design.from_original_scale(&start.beta)?;
    }
    let lik = Likelihood::new(data, grids, design, spec)?;
    let objective = |theta: &[f64]| -> f64 {
        match ParamVector::untransform(theta, &spec).and_then(|p| lik.full_loglik(&p)) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };
    let theta0 = start.transform(&spec)?;
    let mut starts = vec![theta0.clone()];
    if config.multi_start > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.jitter_seed);
        let noise = Normal::new(0.0, config.jitter_sd.max(0.0))
            .map_err(|e| Error::Config(format!("jitter_sd: {e}")))?;
        for _ in 1..config.multi_start {
            starts.push(theta0.iter().map(|v| v + noise.sample(&mut rng)).collect());
        }
    }
    let mut best = None;
    let mut last_err = None;
    for s in &starts {
        match minimize(&objective, s, &config.optim) {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => better_result(&r, b),
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(opt) = best else {
        return Err(last_err.unwrap_or_else(|| Error::Numerical("no start succeeded".into())));
    };

    let params = ParamVector::untransform(&opt.x, &spec)?;
    let parts = lik.evaluate(&params)?;
    let log_d = log_density(&params.beta, design)?;
    let names = spec.parameter_names(design.column_names());
    let real = params.values(&spec);
    let estimates = names
        .into_iter()
        .zip(opt.x.iter().zip(&real))
        .map(|(name, (l, r))| Estimate { name, link: *l, real: *r })
        .collect();
    let n_params = opt.x.len();
    Ok(FitResult {
        formula: formula.to_string(),
        spec,
        standardized: design.is_standardized(),
        estimates,
        beta_original: design.to_original_scale(&params.beta)?,
        log_likelihood: parts.full,
        n_params,
        aic: aic(n_params, parts.full),
        n_hat: abundance_from_log_density(&log_d, &grids.mesh),
        lambda_hat: parts.lambda,
        expected_singletons: lik.expected_singletons(&params)?,
        converged: opt.converged,
        iterations: opt.iterations,
        evaluations: opt.evaluations,
        gradient_norm: opt.gradient.iter().fold(0.0, |m, g| m.max(g.abs())),
        message: opt.message,
        runtime_seconds: clock.elapsed().as_secs_f64(),
        params,
    })
}

fn better_result(a: &crate::optim::OptimResult, b: &crate::optim::OptimResult) -> bool {
    match (a.converged, b.converged) {
        (true, false) => true,
        (false, true) => false,
        _ => a.value < b.value,
    }
}

/// Gradient of the full log-likelihood on the link scale, by the same
/// central differences the optimiser uses.
pub fn loglik_gradient(lik: &Likelihood<'_>, params: &ParamVector) -> Result<Vec<f64>> {
    let spec = *lik.spec();
    let theta = params.transform(&spec)?;
    let f = |t: &[f64]| {
        ParamVector::untransform(t, &spec)
            .and_then(|p| lik.full_loglik(&p))
            .unwrap_or(f64::NEG_INFINITY)
    };
    Ok(numeric_gradient(&f, &theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    /// 1-based rank among converged fits.
    pub rank: Option<usize>,
    pub formula: String,
    pub n_params: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub delta_aic: Option<f64>,
    pub n_hat: f64,
    pub converged: bool,
    pub message: String,
}

/// Fits every candidate and ranks converged fits by AIC.
pub fn model_select(
    data: &Dataset,
    candidates: &[ModelFormula],
    grids: &LatentGrids,
    config: &FitConfig,
) -> Result<Vec<SelectionRow>> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidate formulas".into()));
    }
    let mut rows: Vec<SelectionRow> = candidates
        .iter()
        .map(|f| match fit(data, f, grids, config) {
            Ok(r) => SelectionRow {
                rank: None,
                formula: r.formula,
                n_params: r.n_params,
                log_likelihood: r.log_likelihood,
                aic: r.aic,
                delta_aic: None,
                n_hat: r.n_hat,
                converged: r.converged,
                message: r.message,
            },
            Err(e) => SelectionRow {
                rank: None,
                formula: f.to_string(),
                n_params: 0,
                log_likelihood: f64::NAN,
                aic: f64::NAN,
                delta_aic: None,
                n_hat: f64::NAN,
                converged: false,
                message: e.to_string(),
            },
        })
        .collect();
    rank_rows(&mut rows);
    Ok(rows)
}

/// Sorts converged rows by AIC (stable for ties) and fills rank and ΔAIC.
pub fn rank_rows(rows: &mut [SelectionRow]) {
    rows.sort_by(|a, b| match (a.converged, b.converged) {
        (true, true) => a.aic.total_cmp(&b.aic),
        (true, false) => std::cmp::Ordering::Less,
        (false, true) => std::cmp::Ordering::Greater,
        (false, false) => std::cmp::Ordering::Equal,
    });
    let best = rows.iter().find(|r| r.converged).map(|r| r.aic);
    let mut rank = 0;
    for r in rows.iter_mut() {
        if r.converged {
            rank += 1;
            r.rank = Some(rank);
            r.delta_aic = best.map(|b| r.aic - b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aic_examples() {
        assert!((aic(19, -2928.2775) - 5894.555).abs() < 1e-9);
        assert!((aic(9, -3190.392) - 6398.784).abs() < 1e-9);
        assert_eq!(aic(4, -10.0) + 2.0, aic(5, -10.0));
    }

    #[test]
    fn ranking_orders_and_excludes() {
        let row = |f: &str, aic: f64, converged: bool| SelectionRow {
            rank: None,
            formula: f.into(),
            n_params: 1,
            log_likelihood: 0.0,
            aic,
            delta_aic: None,
            n_hat: 0.0,
            converged,
            message: String::new(),
        };
        let mut rows = vec![row("a", 12.0, true), row("b", 3.0, false), row("c", 10.0, true)];
        rank_rows(&mut rows);
        assert_eq!(rows[0].formula, "c");
        assert_eq!(rows[0].delta_aic, Some(0.0));
        assert_eq!(rows[1].rank, Some(2));
        assert_eq!(rows[1].delta_aic, Some(2.0));
        assert_eq!(rows[2].rank, None);
    }
}
