//! Log-linear density surfaces over the mesh.
//!
//! Density is in calls per km² per study period; mesh areas are in m² and
//! converted here.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::formula::{ModelFormula, Term};
use crate::mesh::Mesh;

pub const M2_PER_KM2: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub sd: f64,
}

/// Mesh cells by basis functions, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    nrows: usize,
    ncols: usize,
    values: Vec<f64>,
    names: Vec<String>,
    /// Per-column centring and scaling; the intercept entry is (0, 1).
    scaling: Option<Vec<ColumnScale>>,
}

impl DesignMatrix {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let ncols = columns.len();
        if ncols == 0 || names.len() != ncols {
            return Err(Error::Design("column names and columns disagree".into()));
        }
        let nrows = columns[0].len();
        let mut values = vec![0.0; nrows * ncols];
        for (j, col) in columns.iter().enumerate() {
            if col.len() != nrows {
                return Err(Error::Dimension { expected: nrows, got: col.len() });
            }
            for (i, v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Design(format!("non-finite value in column `{}` row {i}", names[j])));
                }
                values[i * ncols + j] = *v;
            }
        }
        Ok(Self { nrows, ncols, values, names, scaling: None })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.values[i * self.ncols + j]).collect()
    }

    pub fn scaling(&self) -> Option<&[ColumnScale]> {
        self.scaling.as_deref()
    }

    pub fn is_standardized(&self) -> bool {
        self.scaling.is_some()
    }

    /// Centres and scales every column except the first (the intercept) by
    /// its mean and sample standard deviation over rows.
    pub fn standardize(mut self) -> Result<Self> {
        if self.scaling.is_some() {
            return Ok(self);
        }
        let n = self.nrows as f64;
        if self.nrows < 2 {
            return Err(Error::Design("cannot standardize fewer than two cells".into()));
        }
        let mut scaling = vec![ColumnScale { mean: 0.0, sd: 1.0 }];
        for j in 1..self.ncols {
            let col = self.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            if !(sd > 0.0) {
                return Err(Error::Design(format!("column `{}` is constant over the mesh", self.names[j])));
            }
            for i in 0..self.nrows {
                let v = &mut self.values[i * self.ncols + j];
                *v = (*v - mean) / sd;
            }
            scaling.push(ColumnScale { mean, sd });
        }
        self.scaling = Some(scaling);
        Ok(self)
    }

    /// Converts coefficients on the standardized columns to coefficients on
    /// the raw columns. Identity when the matrix is not standardized.
    pub fn to_original_scale(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_len(beta)?;
        let Some(sc) = &self.scaling else { return Ok(beta.to_vec()) };
        let mut out = beta.to_vec();
        for j in 1..self.ncols {
            out[j] = beta[j] / sc[j].sd;
            out[0] -= beta[j] * sc[j].mean / sc[j].sd;
        }
        Ok(out)
    }

    /// Inverse of [`DesignMatrix::to_original_scale`].
    pub fn from_original_scale(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_len(beta)?;
        let Some(sc) = &self.scaling else { return Ok(beta.to_vec()) };
        let mut out = beta.to_vec();
        for j in 1..self.ncols {
            out[j] = beta[j] * sc[j].sd;
            out[0] += beta[j] * sc[j].mean;
        }
        Ok(out)
    }

    fn check_len(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.ncols {
            return Err(Error::Dimension { expected: self.ncols, got: beta.len() });
        }
        Ok(())
    }
}

/// Cubic (quadratic for `k = 3`) B-spline basis with `k` functions, interior
/// knots at equally spaced quantiles of `x`.
pub fn bspline_basis(x: &[f64], k: usize) -> Result<Vec<Vec<f64>>> {
    let degree = if k >= 4 { 3 } else { 2 };
    let n_interior = k - degree - 1;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Design("smooth covariate is constant over the mesh".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut knots = vec![lo; degree + 1];
    for i in 1..=n_interior {
        knots.push(quantile(&sorted, i as f64 / (n_interior + 1) as f64));
    }
    knots.extend(std::iter::repeat(hi).take(degree + 1));
    let mut cols = vec![vec![0.0; x.len()]; k];
    for (r, &v) in x.iter().enumerate() {
        let (span, vals) = basis_funs(&knots, degree, k, v);
        for (q, b) in vals.iter().enumerate() {
            cols[span - degree + q][r] = *b;
        }
    }
    Ok(cols)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Non-zero basis values at `x` and the knot span they belong to.
fn basis_funs(knots: &[f64], degree: usize, n_basis: usize, x: f64) -> (usize, Vec<f64>) {
    let mut span = degree;
    for i in degree..n_basis {
        if knots[i] <= x && x < knots[i + 1] {
            span = i;
        } else if x >= knots[i + 1] && knots[i] < knots[i + 1] {
            span = i;
        }
    }
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    (span, n)
}

/// Builds the design matrix for `formula` over the mesh cells.
pub fn build_design_matrix(formula: &ModelFormula, mesh: &Mesh, standardize: bool) -> Result<DesignMatrix> {
    let n = mesh.len();
    let mut names = Vec::new();
    let mut cols = Vec::new();
    for term in formula.terms() {
        match term {
            Term::Intercept => {
                names.push("(Intercept)".to_string());
                cols.push(vec![1.0; n]);
            }
            Term::Linear(c) => {
                names.push(c.clone());
                cols.push(mesh.covariate(c)?);
            }
            Term::Power(c, p) => {
                names.push(format!("{c}{p}"));
                cols.push(mesh.covariate(c)?.iter().map(|v| v.powi(i32::from(*p))).collect());
            }
            Term::Log(c) => {
                let v = mesh.covariate(c)?;
                if let Some(bad) = v.iter().position(|x| !(*x > 0.0)) {
                    return Err(Error::Design(format!("log({c}) needs positive values; cell {bad} has {}", v[bad])));
                }
                names.push(format!("log{c}"));
                cols.push(v.iter().map(|x| x.ln()).collect());
            }
            Term::Interaction(a, b) => {
                let va = mesh.covariate(a)?;
                let vb = mesh.covariate(b)?;
                names.push(format!("{a}:{b}"));
                cols.push(va.iter().zip(&vb).map(|(x, y)| x * y).collect());
            }
            Term::Smooth { covariate, k } => {
                let basis = bspline_basis(&mesh.covariate(covariate)?, *k)?;
                for (q, mut col) in basis.into_iter().enumerate().skip(1) {
                    let mean = col.iter().sum::<f64>() / n as f64;
                    col.iter_mut().for_each(|v| *v -= mean);
                    names.push(format!("s({covariate}).{q}"));
                    cols.push(col);
                }
            }
        }
    }
    let x = DesignMatrix::from_columns(names, cols)?;
    if standardize {
        x.standardize()
    } else {
        Ok(x)
    }
}

/// Per-cell `log D = Xβ`.
pub fn log_density(beta: &[f64], x: &DesignMatrix) -> Result<Vec<f64>> {
    x.check_len(beta)?;
    Ok((0..x.nrows)
        .map(|i| x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect())
}

/// Expected number of calls over the mesh, `Σ area·D`, with areas in km².
pub fn total_abundance(beta: &[f64], x: &DesignMatrix, mesh: &Mesh) -> Result<f64> {
    if x.nrows != mesh.len() {
        return Err(Error::Dimension { expected: mesh.len(), got: x.nrows });
    }
    let ld = log_density(beta, x)?;
    Ok(abundance_from_log_density(&ld, mesh))
}

pub fn abundance_from_log_density(log_density: &[f64], mesh: &Mesh) -> f64 {
    mesh.cells()
        .iter()
        .zip(log_density)
        .map(|(c, l)| c.area / M2_PER_KM2 * l.exp())
        .sum()
}

/// Writes `cell_id,easting,northing,area,log_density,density`.
pub fn write_density_csv(path: &Path, mesh: &Mesh, log_density: &[f64]) -> Result<()> {
    if log_density.len() != mesh.len() {
        return Err(Error::Dimension { expected: mesh.len(), got: log_density.len() });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell_id", "easting", "northing", "area", "log_density", "density"])?;
    for (i, (c, l)) in mesh.cells().iter().zip(log_density).enumerate() {
        w.write_record([
            i.to_string(),
            c.centroid.easting.to_string(),
            c.centroid.northing.to_string(),
            c.area.to_string(),
            l.to_string(),
            l.exp().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
