//! Nonparametric bootstrap over calls.
//!
//! Percentiles use the nearest-rank rule on the sorted replicates, so every
//! interval endpoint is an observed replicate value.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{build_design_matrix, log_density, DesignMatrix};
use crate::error::{Error, Result};
use crate::estimation::{fit_with_design, FitConfig, FitResult};
use crate::formula::ModelFormula;
use crate::likelihood::{Dataset, LatentGrids};
use crate::params::Link;
use crate::simulation::replicate_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Start each refit at the base optimum rather than the default start.
    pub start_at_base: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 999, seed: 1, start_at_base: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReplicate {
    pub replicate: usize,
    pub converged: bool,
    /// Link-scale estimates in the base fit's parameter order; empty when
    /// the refit failed outright.
    pub link: Vec<f64>,
    pub real: Vec<f64>,
    pub n_hat: f64,
    /// Calls per km² in each mesh cell.
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub names: Vec<String>,
    pub links: Vec<Link>,
    pub replicates: Vec<BootstrapReplicate>,
}

/// Resampled call indices for one replicate.
pub fn resample_indices(n: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = replicate_rng(seed, replicate);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Refits `formula` to `config.replicates` resampled datasets.
pub fn bootstrap(
    data: &Dataset,
    formula: &ModelFormula,
    grids: &LatentGrids,
    fit_config: &FitConfig,
    base: &FitResult,
    config: &BootstrapConfig,
) -> Result<BootstrapRun> {
    if config.replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    if !base.converged {
        return Err(Error::Numerical("bootstrap needs a converged base fit".into()));
    }
    let design = build_design_matrix(formula, &grids.mesh, fit_config.standardize)?;
    let cfg = FitConfig {
        start: if config.start_at_base { Some(base.params_original()) } else { fit_config.start.clone() },
        ..fit_config.clone()
    };
    let replicates = (0..config.replicates)
        .into_par_iter()
        .map(|r| refit(data, formula, &design, grids, &cfg, config.seed, r))
        .collect::<Vec<_>>();
    Ok(BootstrapRun {
        names: base.estimates.iter().map(|e| e.name.clone()).collect(),
        links: fit_config.spec.links(design.ncols()),
        replicates,
    })
}

fn refit(
    data: &Dataset,
    formula: &ModelFormula,
    design: &DesignMatrix,
    grids: &LatentGrids,
    cfg: &FitConfig,
    seed: u64,
    replicate: usize,
) -> BootstrapReplicate {
    let sample = data.select(&resample_indices(data.n_calls(), seed, replicate));
    let fitted = fit_with_design(&sample, formula, design, grids, cfg)
        .and_then(|f| Ok((log_density(&f.params.beta, design)?, f)));
    match fitted {
        Ok((log_d, f)) => BootstrapReplicate {
            replicate,
            converged: f.converged,
            link: f.estimates.iter().map(|e| e.link).collect(),
            real: f.estimates.iter().map(|e| e.real).collect(),
            n_hat: f.n_hat,
            density: log_d.iter().map(|v| v.exp()).collect(),
        },
        Err(_) => BootstrapReplicate {
            replicate,
            converged: false,
            link: vec![],
            real: vec![],
            n_hat: f64::NAN,
            density: vec![],
        },
    }
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Nearest-rank percentile of an ascending slice: element `ceil(q n)`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Quartile coefficient of dispersion, `(Q3 - Q1) / (Q3 + Q1)`.
pub fn qcd(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, q3) = (nearest_rank(&v, 0.25), nearest_rank(&v, 0.75));
    if q3 + q1 == 0.0 {
        return 0.0;
    }
    (q3 - q1) / (q3 + q1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub link_function: Link,
    pub estimate: f64,
    pub se: f64,
    pub cv_percent: f64,
    pub lower: f64,
    pub upper: f64,
    pub estimate_link: f64,
    pub se_link: f64,
    pub lower_link: f64,
    pub upper_link: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbundanceSummary {
    pub estimate: f64,
    pub se: f64,
    pub cv_percent: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub n_converged: usize,
    pub n_failed: usize,
    pub parameters: Vec<ParameterSummary>,
    pub abundance: AbundanceSummary,
    /// Per-cell QCD of the replicate density estimates.
    pub qcd: Vec<f64>,
}

struct Spread {
    se: f64,
    lower: f64,
    upper: f64,
}

fn spread(values: &[f64]) -> Spread {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Spread { se: sample_sd(values), lower: nearest_rank(&v, 0.025), upper: nearest_rank(&v, 0.975) }
}

fn cv(se: f64, estimate: f64) -> f64 {
    100.0 * se / estimate.abs()
}

/// Summaries over converged replicates, centred on the base fit.
pub fn summarize(run: &BootstrapRun, base: &FitResult) -> Result<BootstrapSummary> {
    let ok: Vec<&BootstrapReplicate> = run.replicates.iter().filter(|r| r.converged).collect();
    if ok.is_empty() {
        return Err(Error::Numerical("no bootstrap replicate converged".into()));
    }
    let parameters = run
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let real = spread(&ok.iter().map(|r| r.real[i]).collect::<Vec<_>>());
            let link = spread(&ok.iter().map(|r| r.link[i]).collect::<Vec<_>>());
            let est = &base.estimates[i];
            ParameterSummary {
                name: name.clone(),
                link_function: run.links[i],
                estimate: est.real,
                se: real.se,
                cv_percent: cv(real.se, est.real),
                lower: real.lower,
                upper: real.upper,
                estimate_link: est.link,
                se_link: link.se,
                lower_link: link.lower,
                upper_link: link.upper,
            }
        })
        .collect();
    let n = spread(&ok.iter().map(|r| r.n_hat).collect::<Vec<_>>());
    let n_cells = ok[0].density.len();
    let qcd = (0..n_cells).map(|m| qcd(&ok.iter().map(|r| r.density[m]).collect::<Vec<_>>())).collect();
    Ok(BootstrapSummary {
        replicates: run.replicates.len(),
        n_converged: ok.len(),
        n_failed: run.replicates.len() - ok.len(),
        parameters,
        abundance: AbundanceSummary {
            estimate: base.n_hat,
            se: n.se,
            cv_percent: cv(n.se, base.n_hat),
            lower: n.lower,
            upper: n.upper,
        },
        qcd,
    })
}

/// One row per replicate: index, convergence flag, N̂, then real-scale
/// estimates.
pub fn write_replicates_csv(path: &Path, run: &BootstrapRun) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["replicate".to_string(), "converged".into(), "n_hat".into()];
    header.extend(run.names.iter().cloned());
    w.write_record(&header)?;
    for r in &run.replicates {
        let mut row = vec![r.replicate.to_string(), r.converged.to_string(), r.n_hat.to_string()];
        if r.real.is_empty() {
            row.extend(std::iter::repeat("NA".to_string()).take(run.names.len()));
        } else {
            row.extend(r.real.iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_qcd_csv(path: &Path, grids: &LatentGrids, qcd: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell_id", "easting", "northing", "qcd"])?;
    for (m, (cell, q)) in grids.mesh.cells().iter().zip(qcd).enumerate() {
        w.write_record(&[m.to_string(), cell.centroid.easting.to_string(), cell.centroid.northing.to_string(), q.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
