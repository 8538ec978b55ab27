//! Brute-force reference implementations used by the integration tests.
//!
//! These deliberately avoid the library's numerical shortcuts: densities are
//! evaluated in linear space, detection histories are enumerated, and
//! integrals are direct nested sums.

#![allow(dead_code)]

use std::f64::consts::PI;

use ascr::geometry::Point;
use ascr::likelihood::{Dataset, LatentGrids};
use ascr::params::{BearingModel, ModelSpec, ParamVector, SourceLevelMode};

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Modified Bessel I0 by direct power series.
pub fn bessel_i0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let q = 0.25 * x * x;
    for k in 1..500 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

pub fn von_mises(delta: f64, kappa: f64) -> f64 {
    (kappa * delta.cos()).exp() / (2.0 * PI * bessel_i0(kappa))
}

pub fn dist(a: (f64, f64), b: Point) -> f64 {
    ((a.0 - b.easting).powi(2) + (a.1 - b.northing).powi(2)).sqrt().max(1.0)
}

pub fn bearing(from: (f64, f64), to: Point) -> f64 {
    let b = (to.easting - from.0).atan2(to.northing - from.1);
    if b < 0.0 {
        b + 2.0 * PI
    } else {
        b
    }
}

/// Probability that at least `m` sensors detect, by enumerating histories.
pub fn enumerate_at_least(p: &[f64], m: usize) -> f64 {
    let k = p.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << k) {
        if (mask.count_ones() as usize) < m {
            continue;
        }
        let mut prob = 1.0;
        for (j, pj) in p.iter().enumerate() {
            prob *= if mask >> j & 1 == 1 { *pj } else { 1.0 - pj };
        }
        total += prob;
    }
    total
}

pub fn enumerate_exactly(p: &[f64], c: usize) -> f64 {
    let k = p.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << k) {
        if mask.count_ones() as usize != c {
            continue;
        }
        let mut prob = 1.0;
        for (j, pj) in p.iter().enumerate() {
            prob *= if mask >> j & 1 == 1 { *pj } else { 1.0 - pj };
        }
        total += prob;
    }
    total
}

pub struct OracleResult {
    pub conditional: f64,
    pub lambda: f64,
    pub full: f64,
    pub singletons: f64,
}

pub fn sl_nodes(params: &ParamVector, spec: &ModelSpec, grids: &LatentGrids) -> (Vec<f64>, Vec<f64>) {
    if spec.source_level == SourceLevelMode::Fixed {
        return (vec![params.mu_s], vec![1.0]);
    }
    let nodes = grids.sl_grid.nodes().to_vec();
    let raw: Vec<f64> = nodes.iter().map(|s| phi((s - params.mu_s) / params.sigma_s)).collect();
    let total: f64 = raw.iter().sum();
    (nodes, raw.iter().map(|w| w / total).collect())
}

pub fn bearing_density(delta: f64, params: &ParamVector, spec: &ModelSpec) -> f64 {
    match spec.bearings {
        BearingModel::Mixture => {
            params.psi_kappa * von_mises(delta, params.kappa)
                + (1.0 - params.psi_kappa) * von_mises(delta, params.kappa + params.delta_kappa)
        }
        BearingModel::Single => von_mises(delta, params.kappa),
        BearingModel::Omitted => 1.0,
    }
}

/// Direct evaluation of the likelihood from its defining densities.
///
/// `log_density[m]` is log calls per km² in cell `m`.
pub fn oracle(data: &Dataset, grids: &LatentGrids, log_density: &[f64], params: &ParamVector, spec: &ModelSpec) -> OracleResult {
    let sensors: Vec<(f64, f64)> = grids.array.positions().iter().map(|p| (p.easting, p.northing)).collect();
    let k = sensors.len();
    let (nodes, weights) = sl_nodes(params, spec, grids);
    let t_r = data.t_r;
    let m_min = data.m_min;
    let probs = |x: Point, s: f64| -> Vec<f64> {
        sensors
            .iter()
            .map(|&sj| {
                let e = s - params.beta_r * dist(sj, x).log10();
                params.g0 * upper_tail((t_r - e) / params.sigma_r)
            })
            .collect()
    };

    let mut effective = 0.0;
    let mut singles = 0.0;
    for (cell, ld) in grids.mesh.cells().iter().zip(log_density) {
        let ad = cell.area / 1e6 * ld.exp();
        for (s, w) in nodes.iter().zip(&weights) {
            let p = probs(cell.centroid, *s);
            effective += ad * w * enumerate_at_least(&p, m_min);
            singles += ad * w * enumerate_exactly(&p, 1);
        }
    }

    let mut conditional = 0.0;
    for i in 0..data.n_calls() {
        let omega = data.omega(i);
        let mut integral = 0.0;
        for (cell, ld) in grids.mesh.cells().iter().zip(log_density) {
            let x = cell.centroid;
            let ad = cell.area / 1e6 * ld.exp();
            for (s, w) in nodes.iter().zip(&weights) {
                let p = probs(x, *s);
                let p_dot = enumerate_at_least(&p, m_min);
                if p_dot == 0.0 {
                    // The whole integrand vanishes in this limit.
                    continue;
                }
                let mut history = 1.0;
                for j in 0..k {
                    history *= if omega[j] { p[j] } else { 1.0 - p[j] };
                }
                history /= p_dot;
                let mut obs = 1.0;
                for j in 0..k {
                    if !omega[j] {
                        continue;
                    }
                    let e = s - params.beta_r * dist(sensors[j], x).log10();
                    let r = data.received(i)[j].unwrap();
                    obs *= phi((r - e) / params.sigma_r) / params.sigma_r / upper_tail((t_r - e) / params.sigma_r);
                    let y = data.bearings(i)[j].unwrap();
                    obs *= bearing_density(y - bearing(sensors[j], x), params, spec);
                }
                // Location and source-level densities conditional on
                // detection: D p. f(s) over the effective area.
                integral += history * obs * ad * p_dot * w;
            }
        }
        conditional += (integral / effective).ln();
    }

    let lambda = data.period * effective;
    let n = data.n_calls();
    let ln_fact: f64 = (1..=n).map(|v| (v as f64).ln()).sum();
    let full = n as f64 * lambda.ln() - lambda - ln_fact + conditional;
    OracleResult { conditional, lambda, full, singletons: data.period * singles }
}

pub mod instances {
    use ascr::density::{build_design_matrix, log_density, DesignMatrix};
    use ascr::formula::parse_formula;
    use ascr::geometry::{Point, SensorArray};
    use ascr::likelihood::{Dataset, LatentGrids};
    use ascr::mesh::{Mesh, MeshCell};
    use ascr::obs::SourceLevelGrid;
    use ascr::params::{BearingModel, ModelSpec, ParamVector, SourceLevelMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub struct Instance {
        pub data: Dataset,
        pub grids: LatentGrids,
        pub design: DesignMatrix,
        pub params: ParamVector,
        pub spec: ModelSpec,
    }

    impl Instance {
        pub fn log_density(&self) -> Vec<f64> {
            log_density(&self.params.beta, &self.design).unwrap()
        }
    }

    /// A random instance with at most 3 sensors, 4 cells, 3 source-level
    /// nodes and 3 calls.
    pub fn small(seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(2..=3);
        let mut sensors = Vec::new();
        while sensors.len() < k {
            let p = Point::new(rng.gen_range(0.0..4000.0), rng.gen_range(0.0..4000.0));
            if sensors.iter().all(|q: &Point| q.euclid(&p) > 500.0) {
                sensors.push(p);
            }
        }
        let array = SensorArray::new(sensors).unwrap();
        let n_cells = rng.gen_range(1..=4);
        let cells = (0..n_cells)
            .map(|_| MeshCell {
                centroid: Point::new(rng.gen_range(-3000.0..7000.0), rng.gen_range(-3000.0..7000.0)),
                area: rng.gen_range(0.5e6..6.25e6),
                covariates: vec![rng.gen_range(-1.0..1.0)],
            })
            .collect();
        let mesh = Mesh::from_cells(cells, vec!["z".into()]).unwrap();
        let spec = ModelSpec {
            source_level: if rng.gen_bool(0.7) { SourceLevelMode::Variable } else { SourceLevelMode::Fixed },
            bearings: match rng.gen_range(0..3) {
                0 => BearingModel::Mixture,
                1 => BearingModel::Single,
                _ => BearingModel::Omitted,
            },
        };
        let formula = if n_cells > 1 { "D ~ z" } else { "D ~ 1" };
        let design = build_design_matrix(&parse_formula(formula, &["z".to_string()]).unwrap(), &mesh, false).unwrap();
        let mut beta = vec![rng.gen_range(-1.0..2.0)];
        if n_cells > 1 {
            beta.push(rng.gen_range(-1.5..1.5));
        }
        let params = ParamVector {
            g0: rng.gen_range(0.2..0.95),
            beta_r: rng.gen_range(12.0..22.0),
            sigma_r: rng.gen_range(1.5..5.0),
            mu_s: rng.gen_range(155.0..165.0),
            sigma_s: rng.gen_range(4.0..6.0),
            kappa: rng.gen_range(0.1..3.0),
            delta_kappa: rng.gen_range(5.0..40.0),
            psi_kappa: rng.gen_range(0.05..0.5),
            beta,
        };
        let m_min = if rng.gen_bool(0.8) { 2 } else { 1 };
        let n_calls = rng.gen_range(0..=3);
        let t_r = 96.0;
        let (mut o, mut b, mut r) = (vec![], vec![], vec![]);
        for _ in 0..n_calls {
            let mut omega: Vec<bool>;
            loop {
                omega = (0..k).map(|_| rng.gen_bool(0.7)).collect();
                if omega.iter().filter(|w| **w).count() >= m_min {
                    break;
                }
            }
            b.push(omega.iter().map(|&w| w.then(|| rng.gen_range(0.0..std::f64::consts::TAU))).collect());
            r.push(omega.iter().map(|&w| w.then(|| rng.gen_range(t_r..t_r + 25.0))).collect());
            o.push(omega);
        }
        let data = Dataset::new(o, b, r, k, t_r, m_min, rng.gen_range(0.5..3.0)).unwrap();
        let sl_grid = SourceLevelGrid::new(130.0, 190.0, 30.0).unwrap();
        Instance { data, grids: LatentGrids { array, mesh, sl_grid }, design, params, spec }
    }
}
