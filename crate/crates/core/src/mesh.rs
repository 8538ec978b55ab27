//! Integration mesh over the survey region.
//!
//! The mesh has two resolutions: fine square cells close to the array and
//! coarse cells further out. Fine cells come from splitting coarse lattice
//! cells, so the two never overlap.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, SensorArray};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshCell {
    pub centroid: Point,
    /// Square metres.
    pub area: f64,
    /// Values aligned with [`Mesh::covariate_names`].
    pub covariates: Vec<f64>,
}

impl MeshCell {
    pub fn side(&self) -> f64 {
        self.area.sqrt()
    }

    fn contains(&self, p: Point) -> bool {
        let h = 0.5 * self.side();
        (p.easting - self.centroid.easting).abs() < h && (p.northing - self.centroid.northing).abs() < h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    cells: Vec<MeshCell>,
    covariate_names: Vec<String>,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub inner_spacing: f64,
    pub outer_spacing: f64,
}

impl Mesh {
    /// Assembles a mesh from explicit cells.
    pub fn from_cells(cells: Vec<MeshCell>, covariate_names: Vec<String>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Geometry("mesh has no cells".into()));
        }
        for (i, c) in cells.iter().enumerate() {
            if !(c.area > 0.0) || !c.centroid.is_finite() {
                return Err(Error::Geometry(format!("cell {i} has invalid area or centroid")));
            }
            if c.covariates.len() != covariate_names.len() {
                return Err(Error::Dimension { expected: covariate_names.len(), got: c.covariates.len() });
            }
        }
        let side_min = cells.iter().map(MeshCell::side).fold(f64::INFINITY, f64::min);
        let side_max = cells.iter().map(MeshCell::side).fold(0.0, f64::max);
        Ok(Self {
            cells,
            covariate_names,
            inner_radius: f64::NAN,
            outer_radius: f64::NAN,
            inner_spacing: side_min,
            outer_spacing: side_max,
        })
    }

    pub fn cells(&self) -> &[MeshCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Column of one covariate across cells.
    pub fn covariate(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .covariate_index(name)
            .ok_or_else(|| Error::Design(format!("covariate `{name}` is not on the mesh")))?;
        Ok(self.cells.iter().map(|c| c.covariates[k]).collect())
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(|c| c.area).sum()
    }

    /// Indices of cells with at least one side not shared with another cell.
    pub fn boundary_cells(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                // Probe just outside each side, off any lattice line.
                let out = 0.5 * c.side() * (1.0 + 1e-6);
                let along = 0.271_828 * c.side();
                let p = c.centroid;
                [(out, along), (-out, -along), (along, out), (-along, -out)]
                    .iter()
                    .any(|(de, dn)| {
                        let probe = Point::new(p.easting + de, p.northing + dn);
                        !self.cells.iter().any(|o| o.contains(probe))
                    })
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy with every centroid shifted by `(de, dn)`.
    pub fn translated(&self, de: f64, dn: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.cells {
            c.centroid = Point::new(c.centroid.easting + de, c.centroid.northing + dn);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["cell_id".to_string(), "easting".into(), "northing".into(), "area".into()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for (i, c) in self.cells.iter().enumerate() {
            let mut row = vec![
                i.to_string(),
                c.centroid.easting.to_string(),
                c.centroid.northing.to_string(),
                c.area.to_string(),
            ];
            row.extend(c.covariates.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let load_err = |message: String| Error::Load { path: path.display().to_string(), message };
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let expected = ["cell_id", "easting", "northing", "area"];
        if headers.len() < 4 || headers.iter().take(4).zip(expected).any(|(h, e)| h.trim() != e) {
            return Err(load_err("header must start with cell_id,easting,northing,area".into()));
        }
        let names: Vec<String> = headers.iter().skip(4).map(|h| h.trim().to_string()).collect();
        let mut cells = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .enumerate()
                .skip(1)
                .map(|(col, v)| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| load_err(format!("row {}, column {}: `{v}` is not numeric", row + 1, col + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            cells.push(MeshCell {
                centroid: Point::new(vals[0], vals[1]),
                area: vals[2],
                covariates: vals[3..].to_vec(),
            });
        }
        Self::from_cells(cells, names)
    }
}

/// A spatial covariate field sampled at cell centroids.
pub trait CovariateSource {
    fn names(&self) -> Vec<String>;
    fn sample(&self, p: Point) -> Result<Vec<f64>>;
}

/// Covariates on a regular grid, looked up by nearest node.
#[derive(Debug, Clone)]
pub struct GridCovariates {
    names: Vec<String>,
    eastings: Vec<f64>,
    northings: Vec<f64>,
    /// Row-major by northing then easting.
    values: Vec<Vec<f64>>,
}

impl GridCovariates {
    /// Reads a CSV with columns `easting,northing,<covariate>...`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let load_err = |message: String| Error::Load { path: path.display().to_string(), message };
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.len() < 3 || headers[0].trim() != "easting" || headers[1].trim() != "northing" {
            return Err(load_err("header must start with easting,northing".into()));
        }
        let names: Vec<String> = headers.iter().skip(2).map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| load_err(format!("row {}: non-numeric value", i + 1)))?;
            if vals.len() != headers.len() {
                return Err(load_err(format!("row {} has {} fields", i + 1, vals.len())));
            }
            rows.push(vals);
        }
        Self::from_rows(names, rows).map_err(|e| load_err(e.to_string()))
    }

    /// Builds from rows of `[easting, northing, covariates...]` forming a full regular grid.
    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut eastings: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let mut northings: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        for v in [&mut eastings, &mut northings] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        if eastings.len() * northings.len() != rows.len() || eastings.len() < 2 || northings.len() < 2 {
            return Err(Error::Geometry("covariate grid is not a complete regular lattice".into()));
        }
        let mut values = vec![Vec::new(); rows.len()];
        let ne = eastings.len();
        for r in rows {
            let ie = eastings.partition_point(|&e| e < r[0]);
            let inn = northings.partition_point(|&n| n < r[1]);
            values[inn * ne + ie] = r[2..].to_vec();
        }
        Ok(Self { names, eastings, northings, values })
    }

    fn nearest(axis: &[f64], x: f64) -> Option<usize> {
        let first = axis[0];
        let last = axis[axis.len() - 1];
        let half = 0.5 * (axis[1] - axis[0]).min(axis[axis.len() - 1] - axis[axis.len() - 2]);
        if x < first - half || x > last + half {
            return None;
        }
        let i = axis.partition_point(|&a| a < x);
        Some(match i {
            0 => 0,
            n if n == axis.len() => n - 1,
            n => {
                if (x - axis[n - 1]) <= (axis[n] - x) {
                    n - 1
                } else {
                    n
                }
            }
        })
    }
}

impl CovariateSource for GridCovariates {
    fn names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn sample(&self, p: Point) -> Result<Vec<f64>> {
        let uncovered = || Error::CovariateCoverage { easting: p.easting, northing: p.northing };
        let ie = Self::nearest(&self.eastings, p.easting).ok_or_else(uncovered)?;
        let inn = Self::nearest(&self.northings, p.northing).ok_or_else(uncovered)?;
        Ok(self.values[inn * self.eastings.len() + ie].clone())
    }
}

/// Covariates given by a closure, for synthetic sites.
pub struct FnCovariates<F> {
    names: Vec<String>,
    f: F,
}

impl<F: Fn(Point) -> Vec<f64>> FnCovariates<F> {
    pub fn new(names: Vec<String>, f: F) -> Self {
        Self { names, f }
    }
}

impl<F: Fn(Point) -> Vec<f64>> CovariateSource for FnCovariates<F> {
    fn names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn sample(&self, p: Point) -> Result<Vec<f64>> {
        Ok((self.f)(p))
    }
}

/// Settings for [`build_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub inner_radius: f64,
    pub inner_spacing: f64,
    pub outer_radius: f64,
    pub outer_spacing: f64,
}

impl MeshSpec {
    /// 2.5 km cells within 10 km of the nearest sensor, 5 km cells out to 50 km.
    pub const CASE_STUDY: MeshSpec = MeshSpec {
        inner_radius: 10_000.0,
        inner_spacing: 2_500.0,
        outer_radius: 50_000.0,
        outer_spacing: 5_000.0,
    };
}

/// Builds the two-resolution mesh around `array`.
///
/// Coarse cells sit on a lattice anchored at the array centroid. A coarse
/// cell is split into fine cells when any fine sub-cell centroid lies within
/// `inner_radius` of a sensor; otherwise it is kept if its own centroid lies
/// within `outer_radius`. `outer_spacing` must be an integer multiple of
/// `inner_spacing`.
pub fn build_mesh(array: &SensorArray, covariates: &dyn CovariateSource, spec: MeshSpec) -> Result<Mesh> {
    let MeshSpec { inner_radius, inner_spacing, outer_radius, outer_spacing } = spec;
    if !(inner_spacing > 0.0) || !(outer_spacing > 0.0) {
        return Err(Error::Geometry("mesh spacings must be positive".into()));
    }
    if !(inner_radius < outer_radius) || !(inner_radius >= 0.0) {
        return Err(Error::Geometry(format!(
            "inner radius {inner_radius} must be non-negative and below outer radius {outer_radius}"
        )));
    }
    let ratio = outer_spacing / inner_spacing;
    let split = ratio.round() as usize;
    if split < 1 || (ratio - split as f64).abs() > 1e-9 {
        return Err(Error::Geometry(format!(
            "outer spacing {outer_spacing} is not a multiple of inner spacing {inner_spacing}"
        )));
    }

    let centre = array.centroid();
    let (mut emin, mut emax, mut nmin, mut nmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in array.positions() {
        emin = emin.min(p.easting);
        emax = emax.max(p.easting);
        nmin = nmin.min(p.northing);
        nmax = nmax.max(p.northing);
    }
    let lo_i = ((emin - outer_radius - centre.easting) / outer_spacing).floor() as i64 - 1;
    let hi_i = ((emax + outer_radius - centre.easting) / outer_spacing).ceil() as i64 + 1;
    let lo_j = ((nmin - outer_radius - centre.northing) / outer_spacing).floor() as i64 - 1;
    let hi_j = ((nmax + outer_radius - centre.northing) / outer_spacing).ceil() as i64 + 1;

    let mut centroids = Vec::new();
    for j in lo_j..=hi_j {
        for i in lo_i..=hi_i {
            let e0 = centre.easting + i as f64 * outer_spacing;
            let n0 = centre.northing + j as f64 * outer_spacing;
            let fine: Vec<Point> = (0..split)
                .flat_map(|b| {
                    (0..split).map(move |a| {
                        Point::new(e0 + (a as f64 + 0.5) * inner_spacing, n0 + (b as f64 + 0.5) * inner_spacing)
                    })
                })
                .collect();
            if split > 1 && fine.iter().any(|p| array.nearest_distance(*p) <= inner_radius) {
                centroids.extend(fine.into_iter().map(|p| (p, inner_spacing * inner_spacing)));
            } else {
                let c = Point::new(e0 + 0.5 * outer_spacing, n0 + 0.5 * outer_spacing);
                if array.nearest_distance(c) <= outer_radius {
                    centroids.push((c, outer_spacing * outer_spacing));
                }
            }
        }
    }
    centroids.sort_by(|a, b| {
        a.0.northing
            .total_cmp(&b.0.northing)
            .then(a.0.easting.total_cmp(&b.0.easting))
    });

    let names = covariates.names();
    let cells = centroids
        .into_iter()
        .map(|(centroid, area)| {
            let covariates = covariates.sample(centroid)?;
            if covariates.len() != names.len() {
                return Err(Error::Dimension { expected: names.len(), got: covariates.len() });
            }
            Ok(MeshCell { centroid, area, covariates })
        })
        .collect::<Result<Vec<_>>>()?;
    if cells.is_empty() {
        return Err(Error::Geometry("mesh construction produced no cells".into()));
    }

    // Sanity: distinct cells never overlap.
    let mut seen = HashSet::new();
    for c in &cells {
        let key = ((c.centroid.easting * 8.0).round() as i64, (c.centroid.northing * 8.0).round() as i64);
        if !seen.insert(key) {
            return Err(Error::Geometry("duplicate mesh cell".into()));
        }
    }

    Ok(Mesh {
        cells,
        covariate_names: names,
        inner_radius,
        outer_radius,
        inner_spacing,
        outer_spacing,
    })
}
