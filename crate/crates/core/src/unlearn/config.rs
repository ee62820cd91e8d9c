use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Scrub,
    CircuitBreakers,
    NeggradPlus,
    CatastrophicForgetting,
    L1Sparse,
    Ssd,
    RandomRelabel,
    WeightAttenuation,
    WeightDropout,
    WeightDistortion,
    WeightDistReg,
    Cbft,
    Tar,
}

impl MethodId {
    pub const ALL: [MethodId; 13] = [
        MethodId::Scrub,
        MethodId::CircuitBreakers,
        MethodId::NeggradPlus,
        MethodId::CatastrophicForgetting,
        MethodId::L1Sparse,
        MethodId::Ssd,
        MethodId::RandomRelabel,
        MethodId::WeightAttenuation,
        MethodId::WeightDropout,
        MethodId::WeightDistortion,
        MethodId::WeightDistReg,
        MethodId::Cbft,
        MethodId::Tar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::Scrub => "scrub",
            MethodId::CircuitBreakers => "circuit_breakers",
            MethodId::NeggradPlus => "neggrad_plus",
            MethodId::CatastrophicForgetting => "catastrophic_forgetting",
            MethodId::L1Sparse => "l1_sparse",
            MethodId::Ssd => "ssd",
            MethodId::RandomRelabel => "random_relabel",
            MethodId::WeightAttenuation => "weight_attenuation",
            MethodId::WeightDropout => "weight_dropout",
            MethodId::WeightDistortion => "weight_distortion",
            MethodId::WeightDistReg => "weight_dist_reg",
            MethodId::Cbft => "cbft",
            MethodId::Tar => "tar",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method id {s:?}")))
    }
}

/// Method-specific knobs. Each method reads only its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodParams {
    pub kl_weight: f64,
    pub ce_weight: f64,
    pub temperature: f64,
    /// SCRUB epochs that include a forget-set ascent pass; `None` means every epoch.
    pub max_epochs: Option<usize>,
    pub c_forget: f64,
    pub c_retain: f64,
    pub ascent_cap: f64,
    /// Penalty coefficient for catastrophic_forgetting (L2) and l1_sparse (L1).
    pub penalty: f64,
    pub ssd_alpha: f64,
    pub ssd_lambda: f64,
    /// Perturbation magnitude; `None` picks the per-kind default.
    pub magnitude: Option<f64>,
    pub lambda_dist: f64,
    pub lambda_mid: f64,
    pub loss_cap: f64,
    pub inner_steps: usize,
    /// `None` uses the outer learning rate.
    pub inner_lr: Option<f64>,
    /// Learning rate of the TAR phase itself; `None` uses `lr`. The safeguard
    /// phase before it always runs at `lr`.
    pub tar_lr: Option<f64>,
    pub lambda_align: f64,
    pub lambda_entropy: f64,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            kl_weight: 1.0,
            ce_weight: 1.0,
            temperature: 1.0,
            max_epochs: None,
            c_forget: 1.0,
            c_retain: 1.0,
            ascent_cap: 50.0,
            penalty: 1e-3,
            ssd_alpha: 10.0,
            ssd_lambda: 1.0,
            magnitude: None,
            lambda_dist: 0.01,
            lambda_mid: 1e-3,
            loss_cap: 50.0,
            inner_steps: 4,
            inner_lr: None,
            tar_lr: None,
            lambda_align: 1.0,
            lambda_entropy: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearnConfig {
    pub method: MethodId,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::floor_factor")]
    pub floor_factor: f64,
    #[serde(default = "defaults::eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: MethodParams,
}

mod defaults {
    pub fn lr() -> f64 {
        1e-5
    }
    pub fn epochs() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn floor_factor() -> f64 {
        0.1
    }
    pub fn eval_every() -> u64 {
        10
    }
}

impl UnlearnConfig {
    pub fn new(method: MethodId) -> Self {
        Self {
            method,
            lr: defaults::lr(),
            epochs: defaults::epochs(),
            weight_decay: 0.0,
            batch_size: defaults::batch_size(),
            floor_factor: defaults::floor_factor(),
            eval_every: defaults::eval_every(),
            seed: 0,
            params: MethodParams::default(),
        }
    }

    pub(crate) fn schedule(&self, total_steps: u64) -> Schedule {
        Schedule {
            lr0: self.lr,
            floor: self.floor_factor,
            weight_decay: self.weight_decay,
            total_steps,
            eval_every: self.eval_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("{}: {what}", self.method)));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size < 2 || self.eval_every == 0 || self.weight_decay < 0.0 {
            return bad("batch size, eval cadence or weight decay");
        }
        if !(self.floor_factor > 0.0 && self.floor_factor <= 1.0) {
            return bad("floor factor outside (0, 1]");
        }
        let p = &self.params;
        match self.method {
            MethodId::Scrub if p.temperature <= 0.0 || p.kl_weight < 0.0 || p.ce_weight < 0.0 => {
                bad("scrub weights must be non-negative and temperature positive")
            }
            MethodId::CircuitBreakers if p.c_forget < 0.0 || p.c_retain < 0.0 => {
                bad("circuit breaker coefficients must be non-negative")
            }
            MethodId::CatastrophicForgetting | MethodId::L1Sparse if p.penalty < 0.0 => bad("penalty < 0"),
            MethodId::Ssd if p.ssd_alpha <= 0.0 || p.ssd_lambda < 0.0 => bad("ssd alpha/lambda"),
            MethodId::WeightDistReg if p.lambda_dist <= 0.0 => bad("lambda_dist must be positive"),
            MethodId::Cbft if p.lambda_mid < 0.0 || p.loss_cap <= 0.0 => bad("cbft weight/cap"),
            MethodId::Tar if p.inner_lr.or(p.tar_lr).is_some_and(|l| !(l > 0.0 && l.is_finite())) => {
                bad("tar learning rates must be positive")
            }
            MethodId::WeightAttenuation | MethodId::WeightDropout | MethodId::WeightDistortion => {
                self.perturbation().and_then(|k| k.validate())
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn perturbation(&self) -> Result<crate::nn::Perturbation> {
        use crate::nn::Perturbation;
        let m = self.params.magnitude;
        match self.method {
            MethodId::WeightAttenuation => Ok(Perturbation::Attenuate {
                factor: m.unwrap_or(0.5),
            }),
            MethodId::WeightDropout => Ok(Perturbation::Dropout {
                fraction: m.unwrap_or(0.2),
            }),
            MethodId::WeightDistortion => Ok(Perturbation::Gaussian {
                sigma: m.unwrap_or(0.02),
            }),
            other => Err(Error::InvalidParameter(format!("{other} is not a perturbation method"))),
        }
    }
}
