//! Model structure, named parameters and their link functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::{BearingErrors, BearingParams, DetectionParams, PropagationParams, SourceLevelPrior};
use crate::special::{inv_logit, logit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLevelMode {
    Variable,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BearingModel {
    Mixture,
    Single,
    Omitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Log,
    Identity,
}

impl Link {
    pub fn forward(self, name: &str, v: f64) -> Result<f64> {
        let ok = match self {
            Link::Logit => v > 0.0 && v < 1.0,
            Link::Log => v > 0.0 && v.is_finite(),
            Link::Identity => v.is_finite(),
        };
        if !ok {
            return Err(Error::Parameter(format!("{name} = {v} is outside the domain of its {self:?} link")));
        }
        Ok(match self {
            Link::Logit => logit(v),
            Link::Log => v.ln(),
            Link::Identity => v,
        })
    }

    pub fn inverse(self, x: f64) -> f64 {
        match self {
            Link::Logit => inv_logit(x),
            Link::Log => x.exp(),
            Link::Identity => x,
        }
    }
}

/// Which detection and bearing components a model estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub source_level: SourceLevelMode,
    pub bearings: BearingModel,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { source_level: SourceLevelMode::Variable, bearings: BearingModel::Mixture }
    }
}

impl ModelSpec {
    /// Names and links of the non-density parameters, in vector order.
    pub fn detection_parameters(&self) -> Vec<(&'static str, Link)> {
        let mut v = vec![("g0", Link::Logit), ("beta_r", Link::Log), ("sigma_r", Link::Log), ("mu_s", Link::Log)];
        if self.source_level == SourceLevelMode::Variable {
            v.push(("sigma_s", Link::Log));
        }
        match self.bearings {
            BearingModel::Mixture => {
                v.extend([("kappa", Link::Log), ("delta_kappa", Link::Log), ("psi_kappa", Link::Logit)]);
            }
            BearingModel::Single => v.push(("kappa", Link::Log)),
            BearingModel::Omitted => {}
        }
        v
    }

    pub fn n_detection(&self) -> usize {
        self.detection_parameters().len()
    }

    /// Parameter names with density coefficients labelled by `beta_names`.
    pub fn parameter_names(&self, beta_names: &[String]) -> Vec<String> {
        self.detection_parameters()
            .into_iter()
            .map(|(n, _)| n.to_string())
            .chain(beta_names.iter().map(|b| format!("beta[{b}]")))
            .collect()
    }

    pub fn links(&self, n_beta: usize) -> Vec<Link> {
        self.detection_parameters()
            .into_iter()
            .map(|(_, l)| l)
            .chain(std::iter::repeat(Link::Identity).take(n_beta))
            .collect()
    }
}

/// Real-scale parameters. Fields a [`ModelSpec`] does not estimate are
/// ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub g0: f64,
    pub beta_r: f64,
    pub sigma_r: f64,
    pub mu_s: f64,
    #[serde(default = "nan", deserialize_with = "nan_if_null")]
    pub sigma_s: f64,
    #[serde(default = "nan", deserialize_with = "nan_if_null")]
    pub kappa: f64,
    #[serde(default = "nan", deserialize_with = "nan_if_null")]
    pub delta_kappa: f64,
    #[serde(default = "nan", deserialize_with = "nan_if_null")]
    pub psi_kappa: f64,
    pub beta: Vec<f64>,
}

fn nan() -> f64 {
    f64::NAN
}

/// Unused components serialize as `null`; read them back as NaN.
fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl ParamVector {
    /// Generating values for the variable source-level scenario.
    pub fn simulation_variable_sl() -> Self {
        Self {
            g0: 0.6,
            beta_r: 18.0,
            sigma_r: 2.7,
            mu_s: 163.0,
            sigma_s: 5.0,
            kappa: 0.3,
            delta_kappa: 36.7,
            psi_kappa: 0.1,
            beta: vec![-12.0, 45.0, -53.0],
        }
    }

    /// Generating values for the fixed source-level scenario.
    pub fn simulation_fixed_sl() -> Self {
        Self {
            g0: 0.6,
            beta_r: 14.5,
            sigma_r: 4.5,
            mu_s: 155.0,
            sigma_s: f64::NAN,
            kappa: 0.3,
            delta_kappa: 34.7,
            psi_kappa: 0.1,
            beta: vec![-16.0, 57.0, -68.5],
        }
    }

    fn detection_value(&self, name: &str) -> f64 {
        match name {
            "g0" => self.g0,
            "beta_r" => self.beta_r,
            "sigma_r" => self.sigma_r,
            "mu_s" => self.mu_s,
            "sigma_s" => self.sigma_s,
            "kappa" => self.kappa,
            "delta_kappa" => self.delta_kappa,
            "psi_kappa" => self.psi_kappa,
            _ => unreachable!("unknown parameter {name}"),
        }
    }

    fn set_detection_value(&mut self, name: &str, v: f64) {
        match name {
            "g0" => self.g0 = v,
            "beta_r" => self.beta_r = v,
            "sigma_r" => self.sigma_r = v,
            "mu_s" => self.mu_s = v,
            "sigma_s" => self.sigma_s = v,
            "kappa" => self.kappa = v,
            "delta_kappa" => self.delta_kappa = v,
            "psi_kappa" => self.psi_kappa = v,
            _ => unreachable!("unknown parameter {name}"),
        }
    }

    /// Real-scale values in vector order for `spec`.
    pub fn values(&self, spec: &ModelSpec) -> Vec<f64> {
        spec.detection_parameters()
            .into_iter()
            .map(|(n, _)| self.detection_value(n))
            .chain(self.beta.iter().copied())
            .collect()
    }

    /// Maps to the unconstrained optimisation scale.
    pub fn transform(&self, spec: &ModelSpec) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (name, link) in spec.detection_parameters() {
            out.push(link.forward(name, self.detection_value(name))?);
        }
        for (i, b) in self.beta.iter().enumerate() {
            out.push(Link::Identity.forward(&format!("beta[{i}]"), *b)?);
        }
        Ok(out)
    }

    /// Inverse of [`ParamVector::transform`].
    pub fn untransform(theta: &[f64], spec: &ModelSpec) -> Result<Self> {
        let det = spec.detection_parameters();
        if theta.len() < det.len() {
            return Err(Error::Dimension { expected: det.len(), got: theta.len() });
        }
        let mut p = Self {
            g0: f64::NAN,
            beta_r: f64::NAN,
            sigma_r: f64::NAN,
            mu_s: f64::NAN,
            sigma_s: f64::NAN,
            kappa: f64::NAN,
            delta_kappa: f64::NAN,
            psi_kappa: f64::NAN,
            beta: theta[det.len()..].to_vec(),
        };
        for ((name, link), x) in det.iter().zip(theta) {
            p.set_detection_value(name, link.inverse(*x));
        }
        Ok(p)
    }

    pub fn detection(&self, t_r: f64) -> Result<DetectionParams> {
        DetectionParams::new(self.g0, t_r)
    }

    pub fn propagation(&self) -> Result<PropagationParams> {
        PropagationParams::new(self.beta_r, self.sigma_r)
    }

    pub fn source_level(&self, spec: &ModelSpec) -> Result<SourceLevelPrior> {
        match spec.source_level {
            SourceLevelMode::Variable => SourceLevelPrior::variable(self.mu_s, self.sigma_s),
            SourceLevelMode::Fixed => Ok(SourceLevelPrior::fixed(self.mu_s)),
        }
    }

    pub fn bearing_errors(&self, spec: &ModelSpec) -> Result<BearingErrors> {
        Ok(match spec.bearings {
            BearingModel::Mixture => {
                BearingErrors::Mixture(BearingParams::new(self.kappa, self.delta_kappa, self.psi_kappa)?)
            }
            BearingModel::Single => {
                if !(self.kappa > 0.0) {
                    return Err(Error::Parameter(format!("kappa = {} must be positive", self.kappa)));
                }
                BearingErrors::Single { kappa: self.kappa }
            }
            BearingModel::Omitted => BearingErrors::Omitted,
        })
    }

    /// Copies detection parameters estimated under `from` into a vector for
    /// `to`, filling components `to` needs but `from` lacks from `fallback`.
    pub fn adapt(&self, to: &ModelSpec, fallback: &ParamVector) -> ParamVector {
        let mut out = self.clone();
        for (name, _) in to.detection_parameters() {
            if !out.detection_value(name).is_finite() {
                out.set_detection_value(name, fallback.detection_value(name));
            }
        }
        if to.bearings == BearingModel::Single && !self.delta_kappa.is_nan() && self.kappa.is_finite() {
            // A single component absorbs most of the good bearings.
            out.kappa = self.kappa + self.delta_kappa * (1.0 - self.psi_kappa.clamp(0.0, 1.0));
        }
        out
    }
}
