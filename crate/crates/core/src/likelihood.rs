//! Conditional and full likelihood, marginalised over mesh cells and
//! source-level nodes.
//!
//! For call `i` the integrand at cell `m`, node `k` is
//! `a_m D_m w_k Π_det p_j f(r_j) f(y_j) Π_undet (1 - p_j)`, and the
//! normaliser is `Σ a_m D_m w_k p.(m, k)`. The `p.` of the conditional
//! history pmf cancels against the conditional location and source-level
//! densities, so it never divides the integrand.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{log_density, DesignMatrix, M2_PER_KM2};
use crate::error::{Error, Result};
use crate::geometry::{Point, SensorArray};
use crate::mesh::Mesh;
use crate::obs::{
    count_distribution, expected_received_level, BearingKernel, SourceLevelGrid, SourceLevelPrior,
};
use crate::params::{ModelSpec, ParamVector};
use crate::special::{ln_factorial, log_sum_exp, norm_cdf, norm_ln_pdf, norm_sf, LN_2PI};

/// Required prior mass inside the source-level grid.
pub const SL_COVERAGE: f64 = 1.0 - 1e-6;

/// Default boundary multiply-detection threshold for [`check_buffer`].
pub const BUFFER_THRESHOLD: f64 = 0.001;

/// Detected calls with their detection histories, bearings and levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    omega: Vec<Vec<bool>>,
    /// Radians in `[0, 2π)`, present where detected.
    bearings: Vec<Vec<Option<f64>>>,
    /// dB, present where detected.
    received: Vec<Vec<Option<f64>>>,
    n_sensors: usize,
    pub t_r: f64,
    pub m_min: usize,
    pub period: f64,
}

impl Dataset {
    pub fn new(
        omega: Vec<Vec<bool>>,
        bearings: Vec<Vec<Option<f64>>>,
        received: Vec<Vec<Option<f64>>>,
        n_sensors: usize,
        t_r: f64,
        m_min: usize,
        period: f64,
    ) -> Result<Self> {
        if n_sensors == 0 {
            return Err(Error::Data("no sensors".into()));
        }
        if m_min == 0 {
            return Err(Error::Data("minimum detection count must be at least 1".into()));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::Data(format!("study period must be positive, got {period}")));
        }
        if t_r.is_nan() {
            return Err(Error::Data("threshold is NaN".into()));
        }
        if bearings.len() != omega.len() || received.len() != omega.len() {
            return Err(Error::Data(format!(
                "row counts differ: {} histories, {} bearing rows, {} level rows",
                omega.len(),
                bearings.len(),
                received.len()
            )));
        }
        for i in 0..omega.len() {
            if omega[i].len() != n_sensors || bearings[i].len() != n_sensors || received[i].len() != n_sensors {
                return Err(Error::Data(format!("call {i} does not have {n_sensors} columns")));
            }
            let hits = omega[i].iter().filter(|&&w| w).count();
            if hits < m_min {
                return Err(Error::Data(format!("call {i} has {hits} detections, fewer than {m_min}")));
            }
            for j in 0..n_sensors {
                let (w, b, r) = (omega[i][j], bearings[i][j], received[i][j]);
                if w != b.is_some() || w != r.is_some() {
                    return Err(Error::Data(format!(
                        "call {i}, sensor {j}: bearing and level must be present exactly where detected"
                    )));
                }
                if let Some(b) = b {
                    if !(0.0..std::f64::consts::TAU).contains(&b) {
                        return Err(Error::Data(format!("call {i}, sensor {j}: bearing {b} outside [0, 2π)")));
                    }
                }
                if let Some(r) = r {
                    if !r.is_finite() || r < t_r {
                        return Err(Error::Data(format!(
                            "call {i}, sensor {j}: received level {r} below threshold {t_r}"
                        )));
                    }
                }
            }
        }
        Ok(Self { omega, bearings, received, n_sensors, t_r, m_min, period })
    }

    pub fn n_calls(&self) -> usize {
        self.omega.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn omega(&self, i: usize) -> &[bool] {
        &self.omega[i]
    }

    pub fn bearings(&self, i: usize) -> &[Option<f64>] {
        &self.bearings[i]
    }

    pub fn received(&self, i: usize) -> &[Option<f64>] {
        &self.received[i]
    }

    /// Rows `indices` (with repeats) as a new dataset.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            omega: indices.iter().map(|&i| self.omega[i].clone()).collect(),
            bearings: indices.iter().map(|&i| self.bearings[i].clone()).collect(),
            received: indices.iter().map(|&i| self.received[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Median of all recorded received levels.
    pub fn median_received(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.received.iter().flatten().flatten().copied().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        Some(if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
    }
}

/// The survey geometry and the discretised latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrids {
    pub array: SensorArray,
    pub mesh: Mesh,
    pub sl_grid: SourceLevelGrid,
}

/// Source-level integration nodes and their probability masses.
#[derive(Debug, Clone, PartialEq)]
pub struct SlQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Rectangle-rule masses on the grid, renormalised to one. In fixed mode a
/// single node at `mu_s` carries all the mass.
pub fn sl_weights(prior: &SourceLevelPrior, grid: &SourceLevelGrid) -> Result<SlQuadrature> {
    if prior.fixed {
        return Ok(SlQuadrature { nodes: vec![prior.mu_s], weights: vec![1.0] });
    }
    let (mu, sd) = (prior.mu_s, prior.sigma_s);
    let h = 0.5 * grid.step;
    let truncation = norm_sf(-mu / sd);
    let lo = (grid.lower - h).max(0.0);
    let coverage = (norm_cdf((grid.upper + h - mu) / sd) - norm_cdf((lo - mu) / sd)) / truncation;
    if !(coverage >= SL_COVERAGE) {
        return Err(Error::GridCoverage { coverage });
    }
    let raw: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&s| if s > 0.0 { (norm_ln_pdf((s - mu) / sd) - sd.ln()).exp() * grid.step } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::GridCoverage { coverage: 0.0 });
    }
    Ok(SlQuadrature { nodes: grid.nodes().to_vec(), weights: raw.iter().map(|w| w / total).collect() })
}

/// Value of every likelihood component at one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodParts {
    pub conditional: f64,
    pub lambda: f64,
    pub full: f64,
    pub per_call: Vec<f64>,
}

struct CallCache {
    detected: Vec<usize>,
    undetected: Vec<usize>,
    levels: Vec<f64>,
    /// `cos(y_j - bearing(m, j))`, indexed `[m * n_det + d]`.
    cos: Vec<f64>,
}

/// Parameter-dependent tables shared by all calls in one evaluation.
struct Tables {
    nodes: Vec<f64>,
    ln_w: Vec<f64>,
    ln_ad: Vec<f64>,
    /// Detection probability, `[(m * n_nodes + k) * n_sensors + j]`.
    p: Vec<f64>,
    /// `ln(1 - p)`, same layout as `p`.
    ln_q: Vec<f64>,
    /// `ln w_k = c0 - (s_k - mu)² / 2 var` on the grid: `(c0, mu, var)`,
    /// with `var = 0` for a fixed source level.
    envelope: (f64, f64, f64),
    /// `ln Σ_{m,k} a D w p.`.
    ln_effective: f64,
}

/// Terms this far below the largest cannot change a log-sum-exp.
const LSE_FLOOR: f64 = 38.0;

/// Precomputed geometry for repeated likelihood evaluation on fixed data.
pub struct Likelihood<'a> {
    data: &'a Dataset,
    grids: &'a LatentGrids,
    design: &'a DesignMatrix,
    spec: ModelSpec,
    ln_area: Vec<f64>,
    log10_dist: Vec<f64>,
    calls: Vec<CallCache>,
}

impl<'a> Likelihood<'a> {
    pub fn new(data: &'a Dataset, grids: &'a LatentGrids, design: &'a DesignMatrix, spec: ModelSpec) -> Result<Self> {
        let k = grids.array.len();
        if data.n_sensors() != k {
            return Err(Error::Dimension { expected: k, got: data.n_sensors() });
        }
        let m = grids.mesh.len();
        if design.nrows() != m {
            return Err(Error::Dimension { expected: m, got: design.nrows() });
        }
        let cells = grids.mesh.cells();
        let ln_area = cells.iter().map(|c| (c.area / M2_PER_KM2).ln()).collect();
        let mut log10_dist = Vec::with_capacity(m * k);
        for c in cells {
            for j in 0..k {
                log10_dist.push(grids.array.distance(j, c.centroid)?.log10());
            }
        }
        let mut calls = Vec::with_capacity(data.n_calls());
        for i in 0..data.n_calls() {
            let omega = data.omega(i);
            let detected: Vec<usize> = (0..k).filter(|&j| omega[j]).collect();
            let undetected: Vec<usize> = (0..k).filter(|&j| !omega[j]).collect();
            let levels = detected.iter().map(|&j| data.received(i)[j].expect("validated")).collect();
            let mut cos = Vec::with_capacity(m * detected.len());
            for c in cells {
                for &j in &detected {
                    let y = data.bearings(i)[j].expect("validated");
                    cos.push((y - grids.array.true_bearing(j, c.centroid)?).cos());
                }
            }
            calls.push(CallCache { detected, undetected, levels, cos });
        }
        Ok(Self { data, grids, design, spec, ln_area, log10_dist, calls })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    fn tables(&self, params: &ParamVector) -> Result<Tables> {
        let det = params.detection(self.data.t_r)?;
        let prop = params.propagation()?;
        let prior = params.source_level(&self.spec)?;
        let sl = sl_weights(&prior, &self.grids.sl_grid)?;
        let log_d = log_density(&params.beta, self.design)?;
        let ln_ad: Vec<f64> = self.ln_area.iter().zip(&log_d).map(|(a, d)| a + d).collect();
        let ln_w: Vec<f64> = sl.weights.iter().map(|w| w.ln()).collect();
        let (nm, nk, nj) = (self.grids.mesh.len(), sl.nodes.len(), self.grids.array.len());
        let mut p = vec![0.0; nm * nk * nj];
        let mut eff = Vec::with_capacity(nm * nk);
        for m in 0..nm {
            for k in 0..nk {
                let base = (m * nk + k) * nj;
                for j in 0..nj {
                    let e = expected_received_level_log10(sl.nodes[k], self.log10_dist[m * nj + j], prop.beta_r);
                    p[base + j] = det.g0 * norm_sf((det.t_r - e) / prop.sigma_r);
                }
                let tail = count_distribution(&p[base..base + nj], self.data.m_min)[self.data.m_min];
                eff.push(ln_ad[m] + ln_w[k] + tail.ln());
            }
        }
        let ln_q = p.iter().map(|v| (-v).ln_1p()).collect();
        let envelope = if prior.fixed {
            (0.0, prior.mu_s, 0.0)
        } else {
            let var = prior.sigma_s * prior.sigma_s;
            let c0 = sl.nodes.iter().zip(&ln_w).map(|(s, w)| w + (s - prior.mu_s).powi(2) / (2.0 * var)).fold(f64::NEG_INFINITY, f64::max);
            (c0, prior.mu_s, var)
        };
        Ok(Tables { nodes: sl.nodes, ln_w, ln_ad, p, ln_q, envelope, ln_effective: log_sum_exp(&eff) })
    }

    fn call_numerator(&self, call: &CallCache, params: &ParamVector, t: &Tables, kernel: &BearingKernel) -> f64 {
        let (nm, nk, nj) = (self.grids.mesh.len(), t.nodes.len(), self.grids.array.len());
        let undetected = &call.undetected;
        let nd = call.detected.len();
        let sigma = params.sigma_r;
        let inv_two_var = 0.5 / (sigma * sigma);
        let curvature = nd as f64 * inv_two_var;
        let det_const = nd as f64 * (params.g0.ln() - sigma.ln() - 0.5 * LN_2PI);
        let mut bases = Vec::with_capacity(nm);
        let mut means = Vec::with_capacity(nm);
        for m in 0..nm {
            if t.ln_ad[m] == f64::NEG_INFINITY {
                bases.push(f64::NEG_INFINITY);
                means.push(0.0);
                continue;
            }
            // Received levels enter through u_d = r_d + β_r log10(d); the
            // exponent is -Σ_d (u_d - s)² / 2σ², split about the mean of u.
            let mut mean = 0.0;
            let mut bearing = 0.0;
            for (d, &j) in call.detected.iter().enumerate() {
                mean += call.levels[d] + params.beta_r * self.log10_dist[m * nj + j];
                bearing += kernel.ln_pdf_cos(call.cos[m * nd + d]);
            }
            mean /= nd as f64;
            let mut spread = 0.0;
            for (d, &j) in call.detected.iter().enumerate() {
                let u = call.levels[d] + params.beta_r * self.log10_dist[m * nj + j];
                spread += (u - mean) * (u - mean);
            }
            bases.push(t.ln_ad[m] + bearing + det_const - spread * inv_two_var);
            means.push(mean);
        }
        let term = |m: usize, k: usize| {
            let gap = means[m] - t.nodes[k];
            let mk = m * nk + k;
            let missed: f64 = undetected.iter().map(|&j| t.ln_q[mk * nj + j]).sum();
            bases[m] + t.ln_w[k] + missed - curvature * gap * gap
        };

        // Undetected-sensor terms are non-positive, so the source-level
        // envelope bounds every term in a cell. Cells and nodes whose bound
        // sits below the log-sum-exp rounding floor are skipped.
        let (c0, mu, var_s) = t.envelope;
        let bound = |m: usize| bases[m] + c0 - (means[m] - mu).powi(2) / (2.0 * (var_s + sigma * sigma / nd as f64));
        let best = (0..nm).filter(|&m| bases[m] > f64::NEG_INFINITY).max_by(|&a, &b| bound(a).total_cmp(&bound(b)));
        let Some(best) = best else { return f64::NEG_INFINITY };
        let anchor = (0..nk).map(|k| term(best, k)).fold(f64::NEG_INFINITY, f64::max);
        let mut terms = Vec::new();
        if anchor == f64::NEG_INFINITY {
            for m in 0..nm {
                terms.extend((0..nk).map(|k| term(m, k)));
            }
            return log_sum_exp(&terms);
        }
        let floor = anchor - LSE_FLOOR;
        for m in 0..nm {
            let slack = bound(m) - floor;
            if !(slack > 0.0) {
                continue;
            }
            let half = ((bases[m] + c0 - floor) / curvature).sqrt() + 1e-9;
            let lo = t.nodes.partition_point(|s| *s < means[m] - half);
            let hi = t.nodes.partition_point(|s| *s <= means[m] + half);
            terms.extend((lo..hi).map(|k| term(m, k)));
        }
        log_sum_exp(&terms)
    }

    /// All likelihood components at `params`.
    pub fn evaluate(&self, params: &ParamVector) -> Result<LikelihoodParts> {
        let t = self.tables(params)?;
        let kernel = BearingKernel::new(&params.bearing_errors(&self.spec)?);
        let numerators: Vec<f64> = self
            .calls
            .par_iter()
            .map(|c| self.call_numerator(c, params, &t, &kernel))
            .collect();
        let per_call: Vec<f64> = numerators.iter().map(|v| v - t.ln_effective).collect();
        let conditional = if per_call.is_empty() { 0.0 } else { per_call.iter().sum() };
        let lambda = self.data.period * t.ln_effective.exp();
        let n = self.data.n_calls();
        let poisson = if n == 0 {
            -lambda
        } else if lambda > 0.0 {
            n as f64 * lambda.ln() - lambda - ln_factorial(n)
        } else {
            f64::NEG_INFINITY
        };
        Ok(LikelihoodParts { conditional, lambda, full: poisson + conditional, per_call })
    }

    pub fn full_loglik(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.evaluate(params)?.full)
    }

    pub fn conditional_loglik(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.evaluate(params)?.conditional)
    }

    pub fn call_loglik(&self, i: usize, params: &ParamVector) -> Result<f64> {
        if i >= self.calls.len() {
            return Err(Error::Data(format!("call {i} out of range")));
        }
        let t = self.tables(params)?;
        let kernel = BearingKernel::new(&params.bearing_errors(&self.spec)?);
        Ok(self.call_numerator(&self.calls[i], params, &t, &kernel) - t.ln_effective)
    }

    /// Expected number of calls detected at least `m_min` times.
    pub fn lambda_detected(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.data.period * self.tables(params)?.ln_effective.exp())
    }

    /// Expected number of calls detected on exactly one sensor.
    pub fn expected_singletons(&self, params: &ParamVector) -> Result<f64> {
        let t = self.tables(params)?;
        let (nm, nk, nj) = (self.grids.mesh.len(), t.nodes.len(), self.grids.array.len());
        let mut total = 0.0;
        for m in 0..nm {
            for k in 0..nk {
                let row = &t.p[(m * nk + k) * nj..(m * nk + k + 1) * nj];
                total += (t.ln_ad[m] + t.ln_w[k]).exp() * count_distribution(row, 2)[1];
            }
        }
        Ok(self.data.period * total)
    }
}

#[inline]
fn expected_received_level_log10(s: f64, log10_d: f64, beta_r: f64) -> f64 {
    s - beta_r * log10_d
}

/// Multiply-detection probability marginalised over source level at each
/// boundary cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferReport {
    pub threshold: f64,
    pub max_probability: f64,
    pub cells: Vec<BufferCell>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferCell {
    pub cell: usize,
    pub easting: f64,
    pub northing: f64,
    pub probability: f64,
    pub pass: bool,
}

/// Checks that calls from the mesh boundary are almost never multiply
/// detected. `g0 = 0` is accepted here.
pub fn check_buffer(
    grids: &LatentGrids,
    params: &ParamVector,
    spec: &ModelSpec,
    t_r: f64,
    m_min: usize,
    threshold: f64,
) -> Result<BufferReport> {
    if !(0.0..1.0).contains(&params.g0) {
        return Err(Error::Parameter(format!("g0 must lie in [0, 1), got {}", params.g0)));
    }
    let prop = params.propagation()?;
    let sl = sl_weights(&params.source_level(spec)?, &grids.sl_grid)?;
    let mut cells = Vec::new();
    for idx in grids.mesh.boundary_cells() {
        let x: Point = grids.mesh.cells()[idx].centroid;
        let mut prob = 0.0;
        for (s, w) in sl.nodes.iter().zip(&sl.weights) {
            let probs: Vec<f64> = (0..grids.array.len())
                .map(|j| {
                    let e = expected_received_level(*s, grids.array.distance(j, x).expect("index in range"), &prop);
                    params.g0 * norm_sf((t_r - e) / prop.sigma_r)
                })
                .collect();
            prob += w * count_distribution(&probs, m_min)[m_min];
        }
        cells.push(BufferCell { cell: idx, easting: x.easting, northing: x.northing, probability: prob, pass: prob < threshold });
    }
    let max_probability = cells.iter().map(|c| c.probability).fold(0.0, f64::max);
    let pass = cells.iter().all(|c| c.pass);
    Ok(BufferReport { threshold, max_probability, cells, pass })
}

/// Conditional log-likelihood without reusing caches.
pub fn conditional_loglik(
    data: &Dataset,
    params: &ParamVector,
    grids: &LatentGrids,
    design: &DesignMatrix,
    spec: ModelSpec,
) -> Result<f64> {
    Likelihood::new(data, grids, design, spec)?.conditional_loglik(params)
}

/// Full log-likelihood without reusing caches.
pub fn full_loglik(
    data: &Dataset,
    params: &ParamVector,
    grids: &LatentGrids,
    design: &DesignMatrix,
    spec: ModelSpec,
) -> Result<f64> {
    Likelihood::new(data, grids, design, spec)?.full_loglik(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::build_design_matrix;
    use crate::formula::{parse_formula, ModelFormula};
    use crate::mesh::MeshCell;
    use crate::obs::{
        bearing_logdensity, detect_probs, detection_history_logpmf, received_level_logdensity_at,
    };
    use crate::params::{BearingModel, SourceLevelMode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn array() -> SensorArray {
        SensorArray::new(vec![Point::new(0.0, 0.0), Point::new(3000.0, 0.0), Point::new(1500.0, 2500.0)]).unwrap()
    }

    fn grids(cells: &[(f64, f64, f64)], sl: SourceLevelGrid) -> LatentGrids {
        let cells = cells
            .iter()
            .map(|&(e, n, z)| MeshCell { centroid: Point::new(e, n), area: 1e6, covariates: vec![z] })
            .collect();
        LatentGrids { array: array(), mesh: Mesh::from_cells(cells, vec!["z".into()]).unwrap(), sl_grid: sl }
    }

    fn params() -> ParamVector {
        ParamVector {
            g0: 0.7,
            beta_r: 16.0,
            sigma_r: 3.0,
            mu_s: 160.0,
            sigma_s: 6.0,
            kappa: 0.5,
            delta_kappa: 30.0,
            psi_kappa: 0.2,
            beta: vec![0.3, 0.4],
        }
    }

    fn call(i: usize) -> (Vec<bool>, Vec<Option<f64>>, Vec<Option<f64>>) {
        match i % 3 {
            0 => (vec![true, true, false], vec![Some(1.2), Some(5.5), None], vec![Some(110.0), Some(104.0), None]),
            1 => (vec![true, true, true], vec![Some(0.3), Some(6.0), Some(3.3)], vec![Some(101.0), Some(99.0), Some(107.5)]),
            _ => (vec![false, true, true], vec![None, Some(5.9), Some(2.9)], vec![None, Some(112.0), Some(98.0)]),
        }
    }

    fn dataset(n: usize) -> Dataset {
        let (mut o, mut b, mut r) = (vec![], vec![], vec![]);
        for i in 0..n {
            let (a, c, d) = call(i);
            o.push(a);
            b.push(c);
            r.push(d);
        }
        Dataset::new(o, b, r, 3, 96.0, 2, 1.0).unwrap()
    }

    fn design(g: &LatentGrids) -> DesignMatrix {
        build_design_matrix(&parse_formula("D ~ z", &["z".to_string()]).unwrap(), &g.mesh, false).unwrap()
    }

    #[test]
    fn sl_weight_examples() {
        let prior = SourceLevelPrior::variable(163.0, 5.0).unwrap();
        let q = sl_weights(&prior, &SourceLevelGrid::standard()).unwrap();
        assert_relative_eq!(q.weights.iter().sum::<f64>(), 1.0, max_relative = 1e-14);
        let mean: f64 = q.nodes.iter().zip(&q.weights).map(|(s, w)| s * w).sum();
        assert!((mean - 163.0).abs() < 0.05);
        let fixed = sl_weights(&SourceLevelPrior::fixed(155.0), &SourceLevelGrid::standard()).unwrap();
        assert_eq!((fixed.nodes, fixed.weights), (vec![155.0], vec![1.0]));
        let sym = sl_weights(&SourceLevelPrior::variable(160.0, 5.0).unwrap(), &SourceLevelGrid::new(130.0, 190.0, 3.0).unwrap()).unwrap();
        let n = sym.weights.len();
        for i in 0..n {
            assert_relative_eq!(sym.weights[i], sym.weights[n - 1 - i], max_relative = 1e-12);
        }
        let narrow = SourceLevelGrid::new(150.0, 170.0, 3.0).unwrap();
        assert!(matches!(sl_weights(&prior, &narrow), Err(Error::GridCoverage { .. })));
    }

    #[test]
    fn degenerate_grid_collapses_to_integrand() {
        let g = grids(&[(1000.0, 800.0, 0.0)], SourceLevelGrid::standard());
        let data = dataset(1);
        let x = build_design_matrix(&ModelFormula::intercept_only(), &g.mesh, false).unwrap();
        let spec = ModelSpec { source_level: SourceLevelMode::Fixed, bearings: BearingModel::Mixture };
        let p = ParamVector { beta: vec![0.0], ..params() };
        let lik = Likelihood::new(&data, &g, &x, spec).unwrap();
        let det = p.detection(96.0).unwrap();
        let prop = p.propagation().unwrap();
        let at = Point::new(1000.0, 800.0);
        let probs = detect_probs(&g.array, at, 160.0, &det, &prop);
        let errors = p.bearing_errors(&spec).unwrap();
        let (omega, bearings, levels) = call(0);
        let mut expect = detection_history_logpmf(&omega, &probs, 2).unwrap();
        for j in 0..2 {
            expect += bearing_logdensity(bearings[j].unwrap(), &g.array, at, j, &errors).unwrap();
            expect += received_level_logdensity_at(levels[j].unwrap(), &g.array, at, 160.0, j, &det, &prop).unwrap();
        }
        assert_relative_eq!(lik.call_loglik(0, &p).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn empty_and_duplicated_data() {
        let g = grids(&[(1000.0, 800.0, 0.1), (-2000.0, 500.0, 0.5), (4000.0, 4000.0, 0.9)], SourceLevelGrid::standard());
        let x = design(&g);
        let spec = ModelSpec::default();
        let empty = Dataset::new(vec![], vec![], vec![], 3, 96.0, 2, 1.0).unwrap();
        let lik = Likelihood::new(&empty, &g, &x, spec).unwrap();
        let parts = lik.evaluate(&params()).unwrap();
        assert_eq!(parts.conditional, 0.0);
        assert_relative_eq!(parts.full, -parts.lambda, max_relative = 1e-15);

        let one = dataset(1);
        let two = one.select(&[0, 0]);
        let a = conditional_loglik(&one, &params(), &g, &x, spec).unwrap();
        let b = conditional_loglik(&two, &params(), &g, &x, spec).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-14);
    }

    #[test]
    fn translation_invariance() {
        let cells = [(1000.0, 800.0, 0.1), (-2000.0, 500.0, 0.5), (4000.0, 4000.0, 0.9)];
        let g = grids(&cells, SourceLevelGrid::standard());
        let moved = LatentGrids { array: g.array.translated(5e5, -3e6), mesh: g.mesh.translated(5e5, -3e6), sl_grid: g.sl_grid.clone() };
        let data = dataset(3);
        let x = design(&g);
        let a = full_loglik(&data, &params(), &g, &x, ModelSpec::default()).unwrap();
        let b = full_loglik(&data, &params(), &moved, &x, ModelSpec::default()).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-9);
    }

    #[test]
    fn zero_density_cell_is_inert() {
        let g = grids(&[(1000.0, 800.0, 0.1), (-2000.0, 500.0, 0.5)], SourceLevelGrid::standard());
        let g2 = grids(&[(1000.0, 800.0, 0.1), (-2000.0, 500.0, 0.5), (9000.0, 9000.0, -1.0)], SourceLevelGrid::standard());
        let data = dataset(3);
        let x = design(&g);
        let x2 = design(&g2);
        let p = ParamVector { beta: vec![0.0, 1.0], ..params() };
        // No coefficient gives D = 0 exactly, so set the log density directly.
        let lik = Likelihood::new(&data, &g2, &x2, ModelSpec::default()).unwrap();
        let mut t = lik.tables(&p).unwrap();
        t.ln_ad[2] = f64::NEG_INFINITY;
        let base = Likelihood::new(&data, &g, &x, ModelSpec::default()).unwrap().evaluate(&p).unwrap();
        let kernel = BearingKernel::new(&p.bearing_errors(&ModelSpec::default()).unwrap());
        let eff: Vec<f64> = (0..2)
            .flat_map(|m| {
                let t = &t;
                (0..t.nodes.len()).map(move |k| {
                    let row = &t.p[(m * t.nodes.len() + k) * 3..(m * t.nodes.len() + k + 1) * 3];
                    t.ln_ad[m] + t.ln_w[k] + count_distribution(row, 2)[2].ln()
                })
            })
            .collect();
        t.ln_effective = log_sum_exp(&eff);
        for (i, c) in lik.calls.iter().enumerate() {
            let v = lik.call_numerator(c, &p, &t, &kernel) - t.ln_effective;
            assert_relative_eq!(v, base.per_call[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn single_sensor_singletons() {
        let arr = SensorArray::with_positions(vec![Point::new(0.0, 0.0)]).unwrap();
        let cells = vec![
            MeshCell { centroid: Point::new(1000.0, 0.0), area: 2e6, covariates: vec![] },
            MeshCell { centroid: Point::new(0.0, 3000.0), area: 1e6, covariates: vec![] },
        ];
        let g = LatentGrids { array: arr, mesh: Mesh::from_cells(cells, vec![]).unwrap(), sl_grid: SourceLevelGrid::standard() };
        let data = Dataset::new(vec![], vec![], vec![], 1, 96.0, 2, 1.0).unwrap();
        let x = build_design_matrix(&ModelFormula::intercept_only(), &g.mesh, false).unwrap();
        let p = ParamVector { beta: vec![1.5], ..params() };
        let lik = Likelihood::new(&data, &g, &x, ModelSpec::default()).unwrap();
        assert_eq!(lik.lambda_detected(&p).unwrap(), 0.0);
        let det = p.detection(96.0).unwrap();
        let prop = p.propagation().unwrap();
        let sl = sl_weights(&p.source_level(&ModelSpec::default()).unwrap(), &g.sl_grid).unwrap();
        let mut expect = 0.0;
        for c in g.mesh.cells() {
            for (s, w) in sl.nodes.iter().zip(&sl.weights) {
                expect += c.area / 1e6 * 1.5f64.exp() * w * detect_probs(&g.array, c.centroid, *s, &det, &prop)[0];
            }
        }
        assert_relative_eq!(lik.expected_singletons(&p).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn lambda_bounded_by_abundance() {
        let g = grids(&[(1000.0, 800.0, 0.1), (-2000.0, 500.0, 0.5), (4000.0, 4000.0, 0.9)], SourceLevelGrid::standard());
        let x = design(&g);
        let data = dataset(2);
        let lik = Likelihood::new(&data, &g, &x, ModelSpec::default()).unwrap();
        let p = params();
        let n = crate::density::total_abundance(&p.beta, &x, &g.mesh).unwrap();
        assert!(lik.lambda_detected(&p).unwrap() <= n);
        let tiny = ParamVector { g0: 1e-12, ..p };
        assert!(lik.lambda_detected(&tiny).unwrap() < 1e-20);
    }

    #[test]
    fn large_concentration_is_stable() {
        let g = grids(&[(1000.0, 800.0, 0.1), (-2000.0, 500.0, 0.5)], SourceLevelGrid::standard());
        let x = design(&g);
        let data = dataset(3);
        let p = ParamVector { kappa: 20.0, delta_kappa: 480.0, ..params() };
        let v = full_loglik(&data, &p, &g, &x, ModelSpec::default()).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn buffer_examples() {
        let g = grids(&[(1000.0, 800.0, 0.1), (-2000.0, 500.0, 0.5), (40000.0, 40000.0, 0.9)], SourceLevelGrid::standard());
        let mut p = params();
        p.g0 = 0.0;
        let r = check_buffer(&g, &p, &ModelSpec::default(), 96.0, 2, BUFFER_THRESHOLD).unwrap();
        assert!(r.pass);
        assert!(r.cells.iter().all(|c| c.probability == 0.0));
        p.g0 = 0.6;
        let r = check_buffer(&g, &p, &ModelSpec::default(), 96.0, 2, 0.0).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn dataset_validation() {
        let ok = dataset(2);
        assert_eq!(ok.n_calls(), 2);
        let bad_level = Dataset::new(
            vec![vec![true, true, false]],
            vec![vec![Some(1.0), Some(1.0), None]],
            vec![vec![Some(90.0), Some(100.0), None]],
            3,
            96.0,
            2,
            1.0,
        );
        assert!(bad_level.is_err());
        let singleton = Dataset::new(
            vec![vec![true, false, false]],
            vec![vec![Some(1.0), None, None]],
            vec![vec![Some(100.0), None, None]],
            3,
            96.0,
            2,
            1.0,
        );
        assert!(singleton.is_err());
        let missing = Dataset::new(
            vec![vec![true, true, false]],
            vec![vec![Some(1.0), None, None]],
            vec![vec![Some(100.0), Some(100.0), None]],
            3,
            96.0,
            2,
            1.0,
        );
        assert!(missing.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn density_scale_cancels_in_conditional(shift in -5.0f64..5.0) {
            let g = grids(&[(1000.0, 800.0, 0.1), (-2000.0, 500.0, 0.5), (4000.0, 4000.0, 0.9)], SourceLevelGrid::standard());
            let x = design(&g);
            let data = dataset(3);
            let lik = Likelihood::new(&data, &g, &x, ModelSpec::default()).unwrap();
            let p = params();
            let mut q = p.clone();
            q.beta[0] += shift;
            let a = lik.evaluate(&p).unwrap();
            let b = lik.evaluate(&q).unwrap();
            prop_assert!((a.conditional - b.conditional).abs() <= 1e-10 * a.conditional.abs());
            prop_assert!((b.lambda - a.lambda * shift.exp()).abs() <= 1e-12 * b.lambda);
        }

        #[test]
        fn full_is_poisson_plus_conditional(g0 in 0.2f64..0.9, br in 12.0f64..20.0, mu in 150.0f64..170.0) {
            let g = grids(&[(1000.0, 800.0, 0.1), (-2000.0, 500.0, 0.5)], SourceLevelGrid::standard());
            let x = design(&g);
            let data = dataset(3);
            let p = ParamVector { g0, beta_r: br, mu_s: mu, ..params() };
            let parts = Likelihood::new(&data, &g, &x, ModelSpec::default()).unwrap().evaluate(&p).unwrap();
            let poisson = 3.0 * parts.lambda.ln() - parts.lambda - 6f64.ln();
            prop_assert!((parts.full - (poisson + parts.conditional)).abs() <= 1e-12 * parts.full.abs());
        }
    }
}
