//! BFGS minimisation with central-difference gradients.
//!
//! When the line search stalls, which happens along curved ridges where the
//! quasi-Newton matrix is poor, the inverse Hessian is rebuilt from a
//! finite-difference Hessian. That Hessian also gives the Newton decrement,
//! and a point whose decrement is below the rounding error of the objective
//! counts as converged even if truncation error keeps the difference
//! gradient above tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub max_iterations: usize,
    /// Stop once the relative change in the objective falls below this...
    pub rel_tol: f64,
    /// ...and the gradient infinity norm is below this.
    pub grad_tol: f64,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { max_iterations: 500, rel_tol: 1e-8, grad_tol: 1e-4, lower: None, upper: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub message: String,
}

/// Finite-difference step for coordinate value `x`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    1e-5_f64.max(1e-7 * x.abs())
}

/// Central-difference gradient.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    gradient_and_curvature(f, x, f64::NAN).0
}

/// Central-difference gradient plus the diagonal second differences, which
/// come free from the same evaluations when `fx = f(x)` is supplied.
fn gradient_and_curvature<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> (Vec<f64>, Vec<f64>) {
    let mut work = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    let mut curv = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        work[i] = x[i] + h;
        let up = f(&work);
        work[i] = x[i] - h;
        let down = f(&work);
        work[i] = x[i];
        grad.push((up - down) / (2.0 * h));
        curv.push((up - 2.0 * fx + down) / (h * h));
    }
    (grad, curv)
}

/// Inverse of the positive part of the curvature diagonal; coordinates
/// without usable curvature fall back to the median of the others.
fn diagonal_preconditioner(curv: &[f64]) -> Vec<Vec<f64>> {
    let mut good: Vec<f64> = curv.iter().copied().filter(|c| c.is_finite() && *c > 0.0).collect();
    good.sort_by(f64::total_cmp);
    let fallback = if good.is_empty() { 1.0 } else { good[good.len() / 2] };
    let n = curv.len();
    let mut h = identity(n);
    for (i, c) in curv.iter().enumerate() {
        let c = if c.is_finite() && *c > 1e-3 * fallback { *c } else { fallback };
        h[i][i] = 1.0 / c;
    }
    h
}

/// Largest infinity-norm step tried on the transformed scale.
const MAX_STEP: f64 = 2.0;

/// Accepted steps shorter than this fraction of the trial step trigger a
/// Hessian rebuild.
const STALL_STEP: f64 = 1e-3;

/// Upper limit on Hessian rebuilds per minimisation.
const MAX_REBUILDS: usize = 20;

/// Finite-difference Hessian from function values.
fn fd_hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let mut work = x.to_vec();
    let at = |work: &mut Vec<f64>, moves: &[(usize, f64)]| {
        for &(i, d) in moves {
            work[i] += d;
        }
        let v = f(work);
        for &(i, d) in moves {
            work[i] -= d;
        }
        v
    };
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        let up = at(&mut work, &[(i, h[i])]);
        let down = at(&mut work, &[(i, -h[i])]);
        hess[i][i] = (up - 2.0 * fx + down) / (h[i] * h[i]);
        for j in 0..i {
            let pp = at(&mut work, &[(i, h[i]), (j, h[j])]);
            let pm = at(&mut work, &[(i, h[i]), (j, -h[j])]);
            let mp = at(&mut work, &[(i, -h[i]), (j, h[j])]);
            let mm = at(&mut work, &[(i, -h[i]), (j, -h[j])]);
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Evaluations used by [`fd_hessian`].
fn fd_hessian_cost(n: usize) -> usize {
    2 * n + 2 * n * (n - 1)
}

/// Lower Cholesky factor, or `None` if `a` is not positive definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i][j] - dot(&l[i][..j], &l[j][..j]);
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Inverse of `hess + τ D`, with `D` the absolute diagonal and `τ` raised
/// from zero until the sum is positive definite.
fn regularised_inverse(hess: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = hess.len();
    if hess.iter().flatten().any(|v| !v.is_finite()) {
        return None;
    }
    let scale: Vec<f64> = (0..n).map(|i| hess[i][i].abs().max(1e-8)).collect();
    let mut tau = 0.0;
    for _ in 0..40 {
        let mut a = hess.to_vec();
        for i in 0..n {
            a[i][i] += tau * scale[i];
        }
        if let Some(l) = cholesky(&a) {
            let mut inv = vec![vec![0.0; n]; n];
            for col in 0..n {
                let mut z = vec![0.0; n];
                for i in 0..n {
                    let rhs = if i == col { 1.0 } else { 0.0 };
                    z[i] = (rhs - dot(&l[i][..i], &z[..i])) / l[i][i];
                }
                for i in (0..n).rev() {
                    let tail: f64 = (i + 1..n).map(|k| l[k][i] * inv[k][col]).sum();
                    inv[i][col] = (z[i] - tail) / l[i][i];
                }
            }
            return Some(inv);
        }
        tau = if tau == 0.0 { 1e-6 } else { tau * 10.0 };
    }
    None
}

fn project(x: &mut [f64], cfg: &OptimConfig) {
    if let Some(lo) = &cfg.lower {
        x.iter_mut().zip(lo).for_each(|(v, l)| *v = v.max(*l));
    }
    if let Some(hi) = &cfg.upper {
        x.iter_mut().zip(hi).for_each(|(v, h)| *v = v.min(*h));
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimises `f` from `x0`. Non-finite objective values are treated as
/// infeasible and rejected by the line search.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], cfg: &OptimConfig) -> Result<OptimResult> {
    let n = x0.len();
    for b in [&cfg.lower, &cfg.upper].into_iter().flatten() {
        if b.len() != n {
            return Err(Error::Dimension { expected: n, got: b.len() });
        }
    }
    let mut x = x0.to_vec();
    project(&mut x, cfg);
    let mut fx = f(&x);
    let mut evaluations = 1;
    if !fx.is_finite() {
        return Err(Error::Numerical(format!(
            "objective is {fx} at the start; choose different start values"
        )));
    }
    let (mut g, mut curv) = gradient_and_curvature(&f, &x, fx);
    evaluations += 2 * n;
    let mut h_inv = diagonal_preconditioner(&curv);
    let mut resets = 0;
    let mut rebuilds = 0;
    let mut rebuilt_here = false;
    let mut message = String::from("maximum iterations reached");
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h_inv[i], &g)).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            h_inv = diagonal_preconditioner(&curv);
            dir = (0..n).map(|i| -h_inv[i][i] * g[i]).collect();
            slope = dot(&dir, &g);
        }
        let len = inf_norm(&dir);
        if len > MAX_STEP {
            dir.iter_mut().for_each(|d| *d *= MAX_STEP / len);
            slope *= MAX_STEP / len;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            project(&mut trial, cfg);
            let ft = f(&trial);
            evaluations += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= if ft.is_finite() { 0.5 } else { 0.1 };
        }

        let Some((x_new, f_new)) = accepted else {
            if inf_norm(&g) < cfg.grad_tol {
                converged = true;
                message = "no further decrease; gradient below tolerance".into();
                break;
            }
            if rebuilds < MAX_REBUILDS && !rebuilt_here {
                rebuilds += 1;
                rebuilt_here = true;
                evaluations += fd_hessian_cost(n);
                h_inv = regularised_inverse(&fd_hessian(&f, &x, fx)).unwrap_or_else(|| diagonal_preconditioner(&curv));
                if below_resolution(&h_inv, &g, fx) {
                    converged = true;
                    message = RESOLUTION_MESSAGE.into();
                    break;
                }
                continue;
            }
            if resets < 2 {
                resets += 1;
                h_inv = diagonal_preconditioner(&curv);
                continue;
            }
            message = "line search failed".into();
            break;
        };

        let (g_new, curv_new) = gradient_and_curvature(&f, &x_new, f_new);
        evaluations += 2 * n;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let rel_change = (fx - f_new).abs() / fx.abs().max(1e-300);
        let mut resolved = false;
        if step < STALL_STEP && rebuilds < MAX_REBUILDS {
            rebuilds += 1;
            evaluations += fd_hessian_cost(n);
            h_inv = regularised_inverse(&fd_hessian(&f, &x_new, f_new)).unwrap_or_else(|| diagonal_preconditioner(&curv_new));
            resolved = rel_change < cfg.rel_tol && below_resolution(&h_inv, &g_new, f_new);
        } else if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            bfgs_update(&mut h_inv, &s, &y, sy);
        }
        rebuilt_here = false;

        x = x_new;
        fx = f_new;
        g = g_new;
        curv = curv_new;
        if rel_change < cfg.rel_tol && inf_norm(&g) < cfg.grad_tol {
            converged = true;
            message = "converged".into();
            break;
        }
        if resolved {
            converged = true;
            message = RESOLUTION_MESSAGE.into();
            break;
        }
    }

    Ok(OptimResult { x, value: fx, gradient: g, iterations, evaluations, converged, message })
}

const RESOLUTION_MESSAGE: &str = "converged; predicted decrease below objective resolution";

/// True when the Newton decrement `g' H⁻¹ g / 2` is below the rounding
/// error of `fx`. The gradient left at such a point is finite-difference
/// truncation error, not descent that double precision can realise.
fn below_resolution(h_inv: &[Vec<f64>], g: &[f64], fx: f64) -> bool {
    let decrement: f64 = (0..g.len()).map(|i| g[i] * dot(&h_inv[i], g)).sum::<f64>() / 2.0;
    decrement.is_finite() && decrement >= 0.0 && decrement < 16.0 * f64::EPSILON * fx.abs().max(1.0)
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}
