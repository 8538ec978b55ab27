//! Likelihood with a signal-to-noise-ratio detection function.
//!
//! Detection at a sensor follows a Janoschek curve in SNR (dB above the
//! noise level `c`). The expected number of detected calls averages the
//! noise-conditioned rate over a sample of noise snapshots.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{abundance_from_log_density, build_design_matrix, log_density, DesignMatrix, M2_PER_KM2};
use crate::error::{Error, Result};
use crate::estimation::{aic, Estimate, FitConfig};
use crate::formula::ModelFormula;
use crate::geometry::Point;
use crate::likelihood::{sl_weights, Dataset, LatentGrids};
use crate::obs::{count_distribution, BearingKernel, PropagationParams};
use crate::optim::minimize;
use crate::params::{BearingModel, Link, ModelSpec, ParamVector};
use crate::quad::integrate_pieces;
use crate::special::{ln_factorial, log_sum_exp, norm_ln_pdf, norm_ln_sf, norm_pdf};

/// Janoschek curve with lower asymptote fixed at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JanoschekParams {
    pub theta_u: f64,
    pub theta_r: f64,
    pub theta_i: f64,
}

impl JanoschekParams {
    pub fn new(theta_u: f64, theta_r: f64, theta_i: f64) -> Result<Self> {
        if !(theta_u > 0.0 && theta_u <= 1.0) {
            return Err(Error::Parameter(format!("theta_u must lie in (0, 1], got {theta_u}")));
        }
        if !(theta_r > 0.0) || !theta_r.is_finite() {
            return Err(Error::Parameter(format!("theta_r must be positive, got {theta_r}")));
        }
        if !(theta_i > 1.0) || !theta_i.is_finite() {
            return Err(Error::Parameter(format!("theta_i must exceed 1, got {theta_i}")));
        }
        Ok(Self { theta_u, theta_r, theta_i })
    }

    /// SNR above which the curve is within `e^-40` of its asymptote.
    fn saturation(&self) -> f64 {
        (40.0 / self.theta_r).powf(1.0 / self.theta_i)
    }
}

/// Detection probability at a given SNR; zero for non-positive SNR.
pub fn janoschek_p(snr: f64, jp: &JanoschekParams) -> f64 {
    if !(snr > 0.0) {
        return 0.0;
    }
    -jp.theta_u * (-jp.theta_r * snr.powf(jp.theta_i)).exp_m1()
}

/// Absolute tolerance for the detection-function quadrature.
pub const SNR_QUAD_TOL: f64 = 1e-12;

/// `∫ p(r - c) φ((r - E)/σ)/σ dr` over `r ∈ [c, E + 8σ]`, the marginal
/// detection probability at expected level `E` and noise `c`.
pub fn snr_detection_prob(expected_level: f64, noise: f64, jp: &JanoschekParams, sigma_r: f64) -> Result<f64> {
    if !(sigma_r > 0.0) {
        return Err(Error::Parameter(format!("sigma_r must be positive, got {sigma_r}")));
    }
    // Standardised received level z = (r - E)/σ.
    let z_lo = (noise - expected_level) / sigma_r;
    let z_hi = 8.0;
    if z_lo >= z_hi {
        return Ok(0.0);
    }
    let z_lo = z_lo.max(-12.0);
    let delta = expected_level - noise;
    let integrand = |z: f64| janoschek_p(sigma_r * z + delta, jp) * norm_pdf(z);
    let mut breaks = vec![z_lo];
    for b in [z_lo + jp.saturation() / sigma_r, 0.0] {
        if b > z_lo && b < z_hi {
            breaks.push(b);
        }
    }
    breaks.push(z_hi);
    breaks.sort_by(f64::total_cmp);
    integrate_pieces(integrand, &breaks, SNR_QUAD_TOL)
}

/// Detection function for sensor `j` at call origin `x` and source level `s`.
pub fn snr_detection_function(
    grids: &LatentGrids,
    x: Point,
    s: f64,
    j: usize,
    noise: f64,
    jp: &JanoschekParams,
    prop: &PropagationParams,
) -> Result<f64> {
    let d = grids.array.distance(j, x)?;
    snr_detection_prob(s - prop.beta_r * d.log10(), noise, jp, prop.sigma_r)
}

/// Noise levels (dB) at every sensor for each call, and a sample of noise
/// snapshots for the rate integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseData {
    pub call_noise: Vec<Vec<f64>>,
    pub noise_sample: Vec<Vec<f64>>,
}

impl NoiseData {
    pub fn new(call_noise: Vec<Vec<f64>>, noise_sample: Vec<Vec<f64>>, n_sensors: usize) -> Result<Self> {
        if noise_sample.is_empty() {
            return Err(Error::Data("noise sample needs at least one row".into()));
        }
        for (what, rows) in [("call noise", &call_noise), ("noise sample", &noise_sample)] {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n_sensors {
                    return Err(Error::Data(format!("{what} row {i} has {} columns, expected {n_sensors}", row.len())));
                }
                if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("{what} row {i} column {j} is not finite")));
                }
            }
        }
        Ok(Self { call_noise, noise_sample })
    }

    /// Reads `call_noise.csv` and `noise_sample.csv` style matrices.
    pub fn read_csv(call_noise: &Path, noise_sample: &Path, n_sensors: usize) -> Result<Self> {
        Self::new(read_matrix(call_noise)?, read_matrix(noise_sample)?, n_sensors)
    }

    pub fn write_csv(&self, call_noise: &Path, noise_sample: &Path) -> Result<()> {
        write_matrix(call_noise, &self.call_noise)?;
        write_matrix(noise_sample, &self.noise_sample)
    }
}

fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let load = |message: String| Error::Load { path: path.display().to_string(), message };
    let mut reader = csv::Reader::from_path(path).map_err(|e| load(e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| load(e.to_string()))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, v)| v.trim().parse::<f64>().map_err(|_| load(format!("row {}, column {}: not a number: {v:?}", i + 1, j + 1))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_matrix(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = rows.first().map_or(0, |r| r.len());
    w.write_record((1..=k).map(|j| format!("s{j}")))?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Parameters of the SNR model. `base.g0` is unused; the Janoschek upper
/// asymptote plays its role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrParams {
    pub janoschek: JanoschekParams,
    pub base: ParamVector,
}

struct SnrCall {
    omega: Vec<bool>,
    levels: Vec<Option<f64>>,
    noise: Vec<f64>,
    /// `cos(y_j - bearing(m, j))` per `[m * K + j]`, zero where undetected.
    cos: Vec<f64>,
}

/// SNR likelihood on fixed data and grids.
pub struct SnrLikelihood<'a> {
    data: &'a Dataset,
    noise: &'a NoiseData,
    grids: &'a LatentGrids,
    design: &'a DesignMatrix,
    spec: ModelSpec,
    ln_area: Vec<f64>,
    log10_dist: Vec<f64>,
    calls: Vec<SnrCall>,
}

impl<'a> SnrLikelihood<'a> {
    pub fn new(
        data: &'a Dataset,
        noise: &'a NoiseData,
        grids: &'a LatentGrids,
        design: &'a DesignMatrix,
        spec: ModelSpec,
    ) -> Result<Self> {
        if spec.bearings == BearingModel::Mixture {
            return Err(Error::Config("the SNR likelihood uses single-component or omitted bearings".into()));
        }
        let k = grids.array.len();
        if data.n_sensors() != k {
            return Err(Error::Dimension { expected: k, got: data.n_sensors() });
        }
        if noise.call_noise.len() != data.n_calls() {
            return Err(Error::Data(format!(
                "noise given for {} calls but the dataset has {}",
                noise.call_noise.len(),
                data.n_calls()
            )));
        }
        if design.nrows() != grids.mesh.len() {
            return Err(Error::Dimension { expected: grids.mesh.len(), got: design.nrows() });
        }
        let cells = grids.mesh.cells();
        let ln_area = cells.iter().map(|c| (c.area / M2_PER_KM2).ln()).collect();
        let mut log10_dist = Vec::with_capacity(cells.len() * k);
        for c in cells {
            for j in 0..k {
                log10_dist.push(grids.array.distance(j, c.centroid)?.log10());
            }
        }
        let mut calls = Vec::with_capacity(data.n_calls());
        for i in 0..data.n_calls() {
            let levels = data.received(i).to_vec();
            for (j, r) in levels.iter().enumerate() {
                if let Some(r) = r {
                    if *r < noise.call_noise[i][j] {
                        return Err(Error::Support(format!("call {i}, sensor {j}: received level below the noise level")));
                    }
                }
            }
            let mut cos = vec![0.0; cells.len() * k];
            for (m, c) in cells.iter().enumerate() {
                for (j, y) in data.bearings(i).iter().enumerate() {
                    if let Some(y) = y {
                        cos[m * k + j] = (y - grids.array.true_bearing(j, c.centroid)?).cos();
                    }
                }
            }
            calls.push(SnrCall { omega: data.omega(i).to_vec(), levels, noise: noise.call_noise[i].clone(), cos });
        }
        Ok(Self { data, noise, grids, design, spec, ln_area, log10_dist, calls })
    }

    fn expected(&self, m: usize, j: usize, s: f64, beta_r: f64) -> f64 {
        s - beta_r * self.log10_dist[m * self.grids.array.len() + j]
    }

    /// Detection probabilities `[(m * nk + k) * K + j]` for one noise vector.
    fn detection_table(&self, params: &SnrParams, nodes: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        let (nm, nj) = (self.grids.mesh.len(), self.grids.array.len());
        let mut g = Vec::with_capacity(nm * nodes.len() * nj);
        for m in 0..nm {
            for &s in nodes {
                for (j, &c) in noise.iter().enumerate() {
                    g.push(snr_detection_prob(
                        self.expected(m, j, s, params.base.beta_r),
                        c,
                        &params.janoschek,
                        params.base.sigma_r,
                    )?);
                }
            }
        }
        Ok(g)
    }

    /// `ln Σ a D w P(ω* ≥ m_min)` under one noise vector.
    fn ln_rate(&self, g: &[f64], ln_ad: &[f64], ln_w: &[f64]) -> f64 {
        let (nk, nj) = (ln_w.len(), self.grids.array.len());
        let m_min = self.data.m_min;
        let terms: Vec<f64> = (0..ln_ad.len() * nk)
            .map(|mk| {
                let row = &g[mk * nj..(mk + 1) * nj];
                ln_ad[mk / nk] + ln_w[mk % nk] + count_distribution(row, m_min)[m_min].ln()
            })
            .collect();
        log_sum_exp(&terms)
    }

    fn prepare(&self, params: &SnrParams) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, BearingKernel)> {
        params.base.propagation()?;
        let prior = params.base.source_level(&self.spec)?;
        let sl = sl_weights(&prior, &self.grids.sl_grid)?;
        let log_d = log_density(&params.base.beta, self.design)?;
        let ln_ad = self.ln_area.iter().zip(&log_d).map(|(a, d)| a + d).collect();
        let ln_w = sl.weights.iter().map(|w| w.ln()).collect();
        let kernel = BearingKernel::new(&params.base.bearing_errors(&self.spec)?);
        Ok((sl.nodes, ln_w, ln_ad, kernel))
    }

    /// Expected number of detected calls, averaged over the noise sample.
    pub fn lambda(&self, params: &SnrParams) -> Result<f64> {
        let (nodes, ln_w, ln_ad, _) = self.prepare(params)?;
        let rates = self
            .noise
            .noise_sample
            .par_iter()
            .map(|c| Ok(self.ln_rate(&self.detection_table(params, &nodes, c)?, &ln_ad, &ln_w).exp()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(self.data.period * rates.iter().sum::<f64>() / rates.len() as f64)
    }

    fn call_loglik(&self, call: &SnrCall, params: &SnrParams, nodes: &[f64], ln_w: &[f64], ln_ad: &[f64], kernel: &BearingKernel) -> Result<f64> {
        let g = self.detection_table(params, nodes, &call.noise)?;
        let ln_a = self.ln_rate(&g, ln_ad, ln_w);
        let (nk, nj) = (nodes.len(), self.grids.array.len());
        let sigma = params.base.sigma_r;
        let mut terms = Vec::with_capacity(ln_ad.len() * nk);
        for (m, &ad) in ln_ad.iter().enumerate() {
            for (k, &s) in nodes.iter().enumerate() {
                let row = &g[(m * nk + k) * nj..(m * nk + k + 1) * nj];
                let mut v = ad + ln_w[k];
                for j in 0..nj {
                    if call.omega[j] {
                        let e = self.expected(m, j, s, params.base.beta_r);
                        let r = call.levels[j].expect("validated");
                        v += row[j].ln()
                            + kernel.ln_pdf_cos(call.cos[m * nj + j])
                            + norm_ln_pdf((r - e) / sigma)
                            - sigma.ln()
                            - norm_ln_sf((call.noise[j] - e) / sigma);
                    } else {
                        v += (-row[j]).ln_1p();
                    }
                }
                terms.push(v);
            }
        }
        Ok(log_sum_exp(&terms) - ln_a)
    }

    /// Full log-likelihood; the multinomial coefficient over histories is a
    /// data constant and is omitted.
    pub fn full_loglik(&self, params: &SnrParams) -> Result<f64> {
        let (nodes, ln_w, ln_ad, kernel) = self.prepare(params)?;
        let per_call = self
            .calls
            .par_iter()
            .map(|c| self.call_loglik(c, params, &nodes, &ln_w, &ln_ad, &kernel))
            .collect::<Result<Vec<f64>>>()?;
        let lambda = self.lambda(params)?;
        let n = self.data.n_calls();
        let poisson = if n == 0 { -lambda } else { n as f64 * lambda.ln() - lambda - ln_factorial(n) };
        Ok(poisson + per_call.iter().sum::<f64>())
    }
}

/// Convenience wrapper around [`SnrLikelihood::full_loglik`].
pub fn snr_full_loglik(
    data: &Dataset,
    noise: &NoiseData,
    params: &SnrParams,
    grids: &LatentGrids,
    design: &DesignMatrix,
    spec: ModelSpec,
) -> Result<f64> {
    SnrLikelihood::new(data, noise, grids, design, spec)?.full_loglik(params)
}

/// Convenience wrapper around [`SnrLikelihood::lambda`].
pub fn snr_lambda(
    data: &Dataset,
    noise: &NoiseData,
    params: &SnrParams,
    grids: &LatentGrids,
    design: &DesignMatrix,
    spec: ModelSpec,
) -> Result<f64> {
    SnrLikelihood::new(data, noise, grids, design, spec)?.lambda(params)
}

/// Result of [`fit_snr`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrFitResult {
    pub formula: String,
    pub spec: ModelSpec,
    pub standardized: bool,
    pub estimates: Vec<Estimate>,
    pub beta_original: Vec<f64>,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub aic: f64,
    pub n_hat: f64,
    pub lambda_hat: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub message: String,
    pub params: SnrParams,
}

const JANOSCHEK_NAMES: [&str; 3] = ["theta_u", "theta_r", "theta_i"];

fn snr_transform(p: &SnrParams, spec: &ModelSpec) -> Result<Vec<f64>> {
    let jp = &p.janoschek;
    let mut theta = vec![
        Link::Logit.forward("theta_u", jp.theta_u.min(1.0 - 1e-9))?,
        Link::Log.forward("theta_r", jp.theta_r)?,
        Link::Log.forward("theta_i - 1", jp.theta_i - 1.0)?,
    ];
    let base = ParamVector { g0: 0.5, ..p.base.clone() };
    // The first detection parameter is g0, which this model does not use.
    theta.extend(base.transform(spec)?.into_iter().skip(1));
    Ok(theta)
}

fn snr_untransform(theta: &[f64], spec: &ModelSpec) -> Result<SnrParams> {
    if theta.len() < 3 {
        return Err(Error::Dimension { expected: 3, got: theta.len() });
    }
    let janoschek = JanoschekParams::new(
        Link::Logit.inverse(theta[0]),
        Link::Log.inverse(theta[1]),
        1.0 + Link::Log.inverse(theta[2]),
    )?;
    let mut full = vec![0.0];
    full.extend_from_slice(&theta[3..]);
    let base = ParamVector { g0: f64::NAN, ..ParamVector::untransform(&full, spec)? };
    Ok(SnrParams { janoschek, base })
}

/// Maximises the SNR likelihood. `start.base.beta` refers to the
/// unstandardized density columns; `config.start` is ignored.
pub fn fit_snr(
    data: &Dataset,
    noise: &NoiseData,
    formula: &ModelFormula,
    grids: &LatentGrids,
    config: &FitConfig,
    start: &SnrParams,
) -> Result<SnrFitResult> {
    let spec = config.spec;
    if data.n_calls() == 0 {
        return Err(Error::Data("cannot fit a model to zero calls".into()));
    }
    let design = build_design_matrix(formula, &grids.mesh, config.standardize)?;
    if start.base.beta.len() != design.ncols() {
        return Err(Error::Dimension { expected: design.ncols(), got: start.base.beta.len() });
    }
    let mut start = start.clone();
    start.base.beta = design.from_original_scale(&start.base.beta)?;
    let lik = SnrLikelihood::new(data, noise, grids, &design, spec)?;
    let objective = |theta: &[f64]| match snr_untransform(theta, &spec).and_then(|p| lik.full_loglik(&p)) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    };
    let opt = minimize(objective, &snr_transform(&start, &spec)?, &config.optim)?;
    let params = snr_untransform(&opt.x, &spec)?;
    let log_likelihood = -opt.value;
    let log_d = log_density(&params.base.beta, &design)?;
    let jp = &params.janoschek;
    let names = JANOSCHEK_NAMES
        .iter()
        .map(|n| n.to_string())
        .chain(spec.parameter_names(design.column_names()).into_iter().skip(1));
    let real = [jp.theta_u, jp.theta_r, jp.theta_i].into_iter().chain(params.base.values(&spec).into_iter().skip(1));
    let estimates = names
        .zip(opt.x.iter().zip(real))
        .map(|(name, (l, r))| Estimate { name, link: *l, real: r })
        .collect();
    let n_params = opt.x.len();
    Ok(SnrFitResult {
        formula: formula.to_string(),
        spec,
        standardized: design.is_standardized(),
        estimates,
        beta_original: design.to_original_scale(&params.base.beta)?,
        log_likelihood,
        n_params,
        aic: aic(n_params, log_likelihood),
        n_hat: abundance_from_log_density(&log_d, &grids.mesh),
        lambda_hat: lik.lambda(&params)?,
        converged: opt.converged,
        iterations: opt.iterations,
        evaluations: opt.evaluations,
        message: opt.message,
        params,
    })
}

/// Janoschek parameters whose curve is a step at zero SNR to well within
/// double precision on the dB scale.
pub fn step_limit(theta_u: f64) -> JanoschekParams {
    JanoschekParams { theta_u, theta_r: 1e14, theta_i: 2.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::{detect_prob_at_level, DetectionParams};
    use crate::special::norm_sf;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn jp() -> JanoschekParams {
        JanoschekParams::new(0.8, 0.1, 2.0).unwrap()
    }

    #[test]
    fn janoschek_examples() {
        assert_eq!(janoschek_p(0.0, &jp()), 0.0);
        assert_eq!(janoschek_p(-3.0, &jp()), 0.0);
        assert_relative_eq!(janoschek_p(3.0, &jp()), 0.8 * (1.0 - (-0.9f64).exp()), max_relative = 1e-15);
        assert_relative_eq!(janoschek_p(1e3, &jp()), 0.8, max_relative = 1e-15);
        assert!(JanoschekParams::new(0.8, 0.1, 1.0).is_err());
        assert!(JanoschekParams::new(1.2, 0.1, 2.0).is_err());
    }

    #[test]
    fn step_limit_matches_threshold_detection() {
        let jp = step_limit(0.6);
        let prop = PropagationParams::new(18.0, 2.7).unwrap();
        let det = DetectionParams::new(0.6, 96.0).unwrap();
        for e in [80.0, 90.0, 95.0, 96.0, 97.3, 105.0, 130.0] {
            let g = snr_detection_prob(e, 96.0, &jp, 2.7).unwrap();
            let reference = detect_prob_at_level(e, &det, &prop);
            assert_relative_eq!(g, reference, max_relative = 1e-6, epsilon = 1e-14);
            // The curve's rise shifts the step by about sqrt(pi / theta_r) / 2 dB.
            let steeper = JanoschekParams { theta_r: 1e20, ..jp };
            let g = snr_detection_prob(e, 96.0, &steeper, 2.7).unwrap();
            assert_relative_eq!(g, reference, max_relative = 1e-9, epsilon = 1e-14);
        }
    }

    #[test]
    fn degenerate_noise_spread() {
        let g = snr_detection_prob(105.0, 96.0, &jp(), 1e-4).unwrap();
        assert_relative_eq!(g, janoschek_p(9.0, &jp()), max_relative = 1e-4);
    }

    #[test]
    fn hopeless_snr_gives_zero() {
        assert!(snr_detection_prob(60.0, 110.0, &jp(), 3.0).unwrap() < 1e-15);
    }

    #[test]
    fn received_level_factor_normalizes() {
        // p(r - c) φ((r - E)/σ) / (σ g) integrates to one over r >= c.
        let (e, c, sigma) = (101.0, 96.0, 2.7);
        let g = snr_detection_prob(e, c, &jp(), sigma).unwrap();
        let total = crate::quad::integrate(
            |r| janoschek_p(r - c, &jp()) * norm_pdf((r - e) / sigma) / (sigma * g),
            c,
            e + 12.0 * sigma,
            1e-12,
        )
        .unwrap();
        assert_relative_eq!(total, 1.0, max_relative = 1e-8);
    }

    #[test]
    fn transform_round_trips() {
        let spec = ModelSpec { bearings: BearingModel::Single, ..ModelSpec::default() };
        let p = SnrParams { janoschek: jp(), base: ParamVector { g0: f64::NAN, ..ParamVector::simulation_variable_sl() } };
        let back = snr_untransform(&snr_transform(&p, &spec).unwrap(), &spec).unwrap();
        assert_relative_eq!(back.janoschek.theta_r, 0.1, max_relative = 1e-12);
        assert_relative_eq!(back.janoschek.theta_i, 2.0, max_relative = 1e-12);
        assert_relative_eq!(back.base.mu_s, p.base.mu_s, max_relative = 1e-12);
        assert_eq!(back.base.beta.len(), p.base.beta.len());
    }

    proptest! {
        #[test]
        fn detection_monotone_and_bounded(
            e in 60.0f64..140.0, de in 0.0f64..10.0, c in 80.0f64..110.0, dc in 0.0f64..10.0,
            u in 0.1f64..1.0, r in 0.01f64..2.0, i in 1.1f64..4.0, sigma in 0.5f64..6.0,
        ) {
            let jp = JanoschekParams::new(u, r, i).unwrap();
            let g = snr_detection_prob(e, c, &jp, sigma).unwrap();
            prop_assert!((0.0..=u + 1e-12).contains(&g));
            prop_assert!(snr_detection_prob(e + de, c, &jp, sigma).unwrap() >= g - 1e-11);
            prop_assert!(snr_detection_prob(e, c + dc, &jp, sigma).unwrap() <= g + 1e-11);
        }

        #[test]
        fn bounded_by_threshold_form(e in 70.0f64..130.0, sigma in 0.5f64..6.0) {
            // p(snr) <= θ_U on snr > 0, so g never exceeds the step form.
            let g = snr_detection_prob(e, 96.0, &jp(), sigma).unwrap();
            prop_assert!(g <= 0.8 * norm_sf((96.0 - e) / sigma) + 1e-11);
        }
    }
}
