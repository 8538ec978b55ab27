//! Per-call observation models: detection, received levels, bearings and
//! source levels, plus the multiply-detection probability.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{Point, SensorArray};
use crate::special::{ln_bessel_i0, log_add_exp, norm_ln_pdf, norm_ln_sf, norm_sf, LN_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Detection probability once the expected level clears the threshold.
    pub g0: f64,
    /// Received-level threshold, dB.
    pub t_r: f64,
}

impl DetectionParams {
    pub fn new(g0: f64, t_r: f64) -> Result<Self> {
        if !(g0 > 0.0 && g0 < 1.0) {
            return Err(Error::Parameter(format!("g0 must lie in (0, 1), got {g0}")));
        }
        if !t_r.is_finite() {
            return Err(Error::Parameter(format!("t_r must be finite, got {t_r}")));
        }
        Ok(Self { g0, t_r })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    /// Transmission loss, dB per decade of distance.
    pub beta_r: f64,
    /// Received-level error standard deviation, dB.
    pub sigma_r: f64,
}

impl PropagationParams {
    pub fn new(beta_r: f64, sigma_r: f64) -> Result<Self> {
        if !(beta_r > 0.0) || !(sigma_r > 0.0) {
            return Err(Error::Parameter(format!(
                "beta_r and sigma_r must be positive, got {beta_r} and {sigma_r}"
            )));
        }
        Ok(Self { beta_r, sigma_r })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceLevelPrior {
    pub mu_s: f64,
    pub sigma_s: f64,
    /// Single-source-level mode: every call is emitted at `mu_s`.
    pub fixed: bool,
}

impl SourceLevelPrior {
    pub fn variable(mu_s: f64, sigma_s: f64) -> Result<Self> {
        if !(sigma_s > 0.0) || !mu_s.is_finite() {
            return Err(Error::Parameter(format!("invalid source-level prior N({mu_s}, {sigma_s}^2)")));
        }
        Ok(Self { mu_s, sigma_s, fixed: false })
    }

    pub fn fixed(mu_s: f64) -> Self {
        Self { mu_s, sigma_s: 0.0, fixed: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BearingParams {
    pub kappa: f64,
    pub delta_kappa: f64,
    pub psi_kappa: f64,
}

impl BearingParams {
    pub fn new(kappa: f64, delta_kappa: f64, psi_kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !(delta_kappa >= 0.0) || !(0.0..=1.0).contains(&psi_kappa) {
            return Err(Error::Parameter(format!(
                "invalid bearing mixture (kappa={kappa}, delta_kappa={delta_kappa}, psi_kappa={psi_kappa})"
            )));
        }
        Ok(Self { kappa, delta_kappa, psi_kappa })
    }
}

/// How bearing errors enter the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BearingErrors {
    /// `ψ·VM(κ) + (1-ψ)·VM(κ+δ)`.
    Mixture(BearingParams),
    /// A single von Mises with concentration `kappa`.
    Single { kappa: f64 },
    /// Bearings are ignored.
    Omitted,
}

/// Precomputed log-normalizers for a bearing error model.
#[derive(Debug, Clone, Copy)]
pub struct BearingKernel {
    ln_w_low: f64,
    ln_w_high: f64,
    kappa_low: f64,
    kappa_high: f64,
    ln_norm_low: f64,
    ln_norm_high: f64,
    single: bool,
    omitted: bool,
}

impl BearingKernel {
    pub fn new(errors: &BearingErrors) -> Self {
        match *errors {
            BearingErrors::Mixture(b) if b.psi_kappa <= 0.0 => {
                Self::new(&BearingErrors::Single { kappa: b.kappa + b.delta_kappa })
            }
            BearingErrors::Mixture(b) => {
                let kh = b.kappa + b.delta_kappa;
                Self {
                    ln_w_low: b.psi_kappa.ln(),
                    ln_w_high: (1.0 - b.psi_kappa).ln(),
                    kappa_low: b.kappa,
                    kappa_high: kh,
                    ln_norm_low: LN_2PI + ln_bessel_i0(b.kappa),
                    ln_norm_high: LN_2PI + ln_bessel_i0(kh),
                    single: b.delta_kappa == 0.0 || b.psi_kappa >= 1.0,
                    omitted: false,
                }
            }
            BearingErrors::Single { kappa } => Self {
                ln_w_low: 0.0,
                ln_w_high: f64::NEG_INFINITY,
                kappa_low: kappa,
                kappa_high: kappa,
                ln_norm_low: LN_2PI + ln_bessel_i0(kappa),
                ln_norm_high: LN_2PI + ln_bessel_i0(kappa),
                single: true,
                omitted: false,
            },
            BearingErrors::Omitted => Self {
                ln_w_low: 0.0,
                ln_w_high: f64::NEG_INFINITY,
                kappa_low: 0.0,
                kappa_high: 0.0,
                ln_norm_low: 0.0,
                ln_norm_high: 0.0,
                single: true,
                omitted: true,
            },
        }
    }

    pub fn is_omitted(&self) -> bool {
        self.omitted
    }

    /// Log density given `cos(y - E[y])`.
    #[inline]
    pub fn ln_pdf_cos(&self, cos_delta: f64) -> f64 {
        if self.omitted {
            return 0.0;
        }
        let low = self.kappa_low * cos_delta - self.ln_norm_low;
        if self.single {
            return low;
        }
        let high = self.kappa_high * cos_delta - self.ln_norm_high;
        log_add_exp(self.ln_w_low + low, self.ln_w_high + high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceLevelGrid {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
    nodes: Vec<f64>,
}

impl SourceLevelGrid {
    pub fn new(lower: f64, upper: f64, step: f64) -> Result<Self> {
        if !(lower < upper) || !(step > 0.0) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Parameter(format!(
                "invalid source-level grid [{lower}, {upper}] step {step}"
            )));
        }
        let count = ((upper - lower) / step + 1e-9).floor() as usize + 1;
        let nodes = (0..count).map(|i| lower + step * i as f64).collect();
        Ok(Self { lower, upper, step, nodes })
    }

    /// 100–220 dB at 3 dB spacing.
    pub fn standard() -> Self {
        Self::new(100.0, 220.0, 3.0).expect("valid standard grid")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Mean received level `s - β_r log10(d)`.
#[inline]
pub fn expected_received_level(s: f64, d: f64, prop: &PropagationParams) -> f64 {
    s - prop.beta_r * d.log10()
}

/// `g0 · (1 - Φ((t_r - E[r]) / σ_r))`.
#[inline]
pub fn detect_prob_at_level(expected_level: f64, det: &DetectionParams, prop: &PropagationParams) -> f64 {
    det.g0 * norm_sf((det.t_r - expected_level) / prop.sigma_r)
}

/// Natural log of [`detect_prob_at_level`].
#[inline]
pub fn ln_detect_prob_at_level(expected_level: f64, det: &DetectionParams, prop: &PropagationParams) -> f64 {
    det.g0.ln() + norm_ln_sf((det.t_r - expected_level) / prop.sigma_r)
}

/// Detection probability at sensor `j` for a call from `x` with source level `s`.
pub fn detect_prob(
    array: &SensorArray,
    x: Point,
    s: f64,
    j: usize,
    det: &DetectionParams,
    prop: &PropagationParams,
) -> Result<f64> {
    let d = array.distance(j, x)?;
    Ok(detect_prob_at_level(expected_received_level(s, d, prop), det, prop))
}

/// Detection probabilities at every sensor.
pub fn detect_probs(
    array: &SensorArray,
    x: Point,
    s: f64,
    det: &DetectionParams,
    prop: &PropagationParams,
) -> Vec<f64> {
    (0..array.len())
        .map(|j| detect_prob(array, x, s, j, det, prop).expect("index in range"))
        .collect()
}

/// Distribution of the number of detecting sensors, truncated at `m`:
/// returns `P(ω* = c)` for `c < m` followed by `P(ω* ≥ m)`.
///
/// The upper tail is accumulated directly rather than as `1 - Σ`, so tiny
/// tail probabilities keep their relative accuracy.
pub fn count_distribution(probs: &[f64], m: usize) -> Vec<f64> {
    let mut dist = vec![0.0; m + 1];
    if m == 0 {
        dist[0] = 1.0;
        return dist;
    }
    dist[0] = 1.0;
    for &p in probs {
        let q = 1.0 - p;
        dist[m] += p * dist[m - 1];
        for c in (1..m).rev() {
            dist[c] = dist[c] * q + dist[c - 1] * p;
        }
        dist[0] *= q;
    }
    dist
}

/// `P(ω* ≥ m)` for independent per-sensor detection probabilities.
pub fn p_dot_min(probs: &[f64], m: usize) -> Result<f64> {
    if m > probs.len() {
        return Err(Error::Parameter(format!(
            "minimum detections {m} exceeds sensor count {}",
            probs.len()
        )));
    }
    Ok(count_distribution(probs, m)[m].clamp(0.0, 1.0))
}

/// `P(ω* = c)` by the same recursion.
pub fn p_exactly(probs: &[f64], c: usize) -> f64 {
    if c > probs.len() {
        return 0.0;
    }
    count_distribution(probs, c + 1)[c]
}

/// Log density of an observed received level, truncated below at `t_r`.
pub fn received_level_logdensity(
    r: f64,
    expected_level: f64,
    det: &DetectionParams,
    prop: &PropagationParams,
) -> Result<f64> {
    if r < det.t_r {
        return Err(Error::Support(format!(
            "received level {r} dB is below the truncation threshold {} dB",
            det.t_r
        )));
    }
    let z = (r - expected_level) / prop.sigma_r;
    Ok(norm_ln_pdf(z) - prop.sigma_r.ln() - norm_ln_sf((det.t_r - expected_level) / prop.sigma_r))
}

/// Received-level log density for a call at `x` with source level `s`, sensor `j`.
pub fn received_level_logdensity_at(
    r: f64,
    array: &SensorArray,
    x: Point,
    s: f64,
    j: usize,
    det: &DetectionParams,
    prop: &PropagationParams,
) -> Result<f64> {
    let d = array.distance(j, x)?;
    received_level_logdensity(r, expected_received_level(s, d, prop), det, prop)
}

/// Log density of an observed bearing `y` at sensor `j` for a call from `x`.
pub fn bearing_logdensity(
    y: f64,
    array: &SensorArray,
    x: Point,
    j: usize,
    errors: &BearingErrors,
) -> Result<f64> {
    let mean = array.true_bearing(j, x)?;
    Ok(BearingKernel::new(errors).ln_pdf_cos((y - mean).cos()))
}

/// Log density of the source-level prior, a normal truncated to `(0, ∞)`.
pub fn source_level_logdensity(s: f64, prior: &SourceLevelPrior) -> Result<f64> {
    if prior.fixed {
        return Err(Error::Parameter(
            "source-level density is undefined in fixed-source-level mode".into(),
        ));
    }
    if s <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let z = (s - prior.mu_s) / prior.sigma_s;
    Ok(norm_ln_pdf(z) - prior.sigma_s.ln() - norm_ln_sf(-prior.mu_s / prior.sigma_s))
}

/// Log pmf of a detection history conditioned on at least `m` detections.
pub fn detection_history_logpmf(omega: &[bool], probs: &[f64], m: usize) -> Result<f64> {
    if omega.len() != probs.len() {
        return Err(Error::Dimension { expected: probs.len(), got: omega.len() });
    }
    let hits = omega.iter().filter(|&&w| w).count();
    if hits < m {
        return Err(Error::Support(format!(
            "history with {hits} detections is excluded by the minimum of {m}"
        )));
    }
    let ln_joint: f64 = omega
        .iter()
        .zip(probs)
        .map(|(&w, &p)| if w { p.ln() } else { (-p).ln_1p() })
        .sum();
    Ok(ln_joint - p_dot_min(probs, m)?.ln())
}

/// Von Mises density wrapped to `[0, 2π)`; exposed for samplers and tests.
pub fn von_mises_ln_pdf(y: f64, mean: f64, kappa: f64) -> f64 {
    kappa * (y - mean).cos() - LN_2PI - ln_bessel_i0(kappa)
}

/// Length of the circle, for quadrature bounds.
pub const CIRCLE: f64 = TAU;
