//! Shared domain types: the three forward-process parameterizations, points
//! in each of them, and tagged model predictions.
//!
//! Noise levels are kept in each parameterization's native variable: `α` for
//! VP, `σ` for VE-Karras and `s` for rectified flow. The VP diffusion clock
//! `t = -ln α` is only reachable through [`vp_clock`] / [`vp_level`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest rectified-flow level accepted by the algebraic conversions.
/// Every RF↔VP/VE formula divides by `1 - s`.
pub const RF_LEVEL_MAX: f64 = 1.0 - 1e-6;

/// Smallest VE level at which noise → score conversion is allowed (it divides by `σ`).
pub const SIGMA_MIN: f64 = 1e-9;

/// Smallest RF level at which velocity → score conversion is allowed (it divides by `s`).
pub const RF_LEVEL_MIN_SCORE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parameterization {
    #[serde(rename = "vp")]
    Vp,
    #[serde(rename = "ve")]
    VeKarras,
    #[serde(rename = "rf")]
    RectifiedFlow,
}

impl Parameterization {
    pub const ALL: [Parameterization; 3] = [
        Parameterization::Vp,
        Parameterization::VeKarras,
        Parameterization::RectifiedFlow,
    ];

    /// Level carrying no noise: `α = 1`, `σ = 0`, `s = 0`.
    pub fn clean_level(self) -> f64 {
        match self {
            Parameterization::Vp => 1.0,
            Parameterization::VeKarras | Parameterization::RectifiedFlow => 0.0,
        }
    }

    pub fn check_level(self, level: f64) -> Result<()> {
        let ok = level.is_finite()
            && match self {
                Parameterization::Vp => level > 0.0 && level <= 1.0,
                Parameterization::VeKarras => level >= 0.0,
                Parameterization::RectifiedFlow => (0.0..=RF_LEVEL_MAX).contains(&level),
            };
        if ok {
            Ok(())
        } else {
            let range = match self {
                Parameterization::Vp => "(0, 1]",
                Parameterization::VeKarras => "[0, inf)",
                Parameterization::RectifiedFlow => "[0, 1 - 1e-6]",
            };
            Err(Error::domain(
                "noise level",
                format!("{self} level {level} outside {range}"),
            ))
        }
    }

    /// The prediction kind a model of this parameterization natively outputs.
    pub fn native_kind(self) -> PredictionKind {
        match self {
            Parameterization::Vp => PredictionKind::Score,
            Parameterization::VeKarras => PredictionKind::Noise,
            Parameterization::RectifiedFlow => PredictionKind::Velocity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Parameterization::Vp => "vp",
            Parameterization::VeKarras => "ve",
            Parameterization::RectifiedFlow => "rf",
        }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vp" => Ok(Parameterization::Vp),
            "ve" | "ve-karras" | "ve_karras" => Ok(Parameterization::VeKarras),
            "rf" | "rectified-flow" | "rectified_flow" => Ok(Parameterization::RectifiedFlow),
            other => Err(Error::arg(format!("unknown parameterization `{other}`"))),
        }
    }
}

/// What a model output means. Each kind is expressed in one parameterization:
/// scores are VP scores `s_x`, noise predictions are VE `ε`, velocities are RF `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionKind {
    Score,
    Noise,
    Velocity,
}

impl PredictionKind {
    pub const ALL: [PredictionKind; 3] = [PredictionKind::Score, PredictionKind::Noise, PredictionKind::Velocity];

    pub fn native_param(self) -> Parameterization {
        match self {
            PredictionKind::Score => Parameterization::Vp,
            PredictionKind::Noise => Parameterization::VeKarras,
            PredictionKind::Velocity => Parameterization::RectifiedFlow,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PredictionKind::Score => "score",
            PredictionKind::Noise => "noise",
            PredictionKind::Velocity => "velocity",
        }
    }
}

impl fmt::Display for PredictionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PredictionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "score" => Ok(PredictionKind::Score),
            "noise" | "eps" | "epsilon" => Ok(PredictionKind::Noise),
            "velocity" | "v" => Ok(PredictionKind::Velocity),
            other => Err(Error::arg(format!("unknown prediction kind `{other}`"))),
        }
    }
}

/// A state vector at a noise level of one parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParamPoint")]
pub struct ParamPoint {
    pub param: Parameterization,
    pub state: Vec<f64>,
    pub level: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParamPoint {
    param: Parameterization,
    state: Vec<f64>,
    level: f64,
}

impl TryFrom<RawParamPoint> for ParamPoint {
    type Error = Error;

    fn try_from(raw: RawParamPoint) -> Result<Self> {
        ParamPoint::new(raw.param, raw.state, raw.level)
    }
}

impl ParamPoint {
    pub fn new(param: Parameterization, state: Vec<f64>, level: f64) -> Result<Self> {
        if state.is_empty() {
            return Err(Error::arg("state must have dimension >= 1"));
        }
        if let Some(bad) = state.iter().find(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite state component {bad}")));
        }
        param.check_level(level)?;
        Ok(ParamPoint { param, state, level })
    }

    pub fn dim(&self) -> usize {
        self.state.len()
    }
}

/// A model output tagged with its meaning and the point it was evaluated at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrediction")]
pub struct Prediction {
    pub kind: PredictionKind,
    pub value: Vec<f64>,
    pub at: ParamPoint,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrediction {
    kind: PredictionKind,
    value: Vec<f64>,
    at: ParamPoint,
}

impl TryFrom<RawPrediction> for Prediction {
    type Error = Error;

    fn try_from(raw: RawPrediction) -> Result<Self> {
        Prediction::new(raw.kind, raw.value, raw.at)
    }
}

impl Prediction {
    pub fn new(kind: PredictionKind, value: Vec<f64>, at: ParamPoint) -> Result<Self> {
        if value.len() != at.dim() {
            return Err(Error::arg(format!(
                "prediction dimension {} does not match state dimension {}",
                value.len(),
                at.dim()
            )));
        }
        Ok(Prediction { kind, value, at })
    }
}

/// Rows of the Langevin split / reverse-process tables: VP with a stochastic
/// or deterministic reverse part, VE-Karras, and rectified flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelType {
    #[serde(rename = "vp-sde")]
    VpSde,
    #[serde(rename = "vp-ode")]
    VpOde,
    #[serde(rename = "ve")]
    VeKarras,
    #[serde(rename = "rf")]
    RectifiedFlow,
}

impl ModelType {
    pub const ALL: [ModelType; 4] = [
        ModelType::VpSde,
        ModelType::VpOde,
        ModelType::VeKarras,
        ModelType::RectifiedFlow,
    ];

    pub fn param(self) -> Parameterization {
        match self {
            ModelType::VpSde | ModelType::VpOde => Parameterization::Vp,
            ModelType::VeKarras => Parameterization::VeKarras,
            ModelType::RectifiedFlow => Parameterization::RectifiedFlow,
        }
    }

    pub fn native_kind(self) -> PredictionKind {
        self.param().native_kind()
    }

    /// Whether the reverse process has a Brownian term.
    pub fn is_stochastic(self) -> bool {
        self == ModelType::VpSde
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelType::VpSde => "vp-sde",
            ModelType::VpOde => "vp-ode",
            ModelType::VeKarras => "ve",
            ModelType::RectifiedFlow => "rf",
        }
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vp-sde" | "vp_sde" => Ok(ModelType::VpSde),
            "vp-ode" | "vp_ode" => Ok(ModelType::VpOde),
            "ve" | "ve-karras" => Ok(ModelType::VeKarras),
            "rf" | "rectified-flow" => Ok(ModelType::RectifiedFlow),
            other => Err(Error::arg(format!("unknown model type `{other}`"))),
        }
    }
}

/// VP diffusion clock of a VP level: `t = -ln α`.
pub fn vp_clock(alpha: f64) -> f64 {
    -alpha.ln()
}

/// VP level at diffusion clock `t`: `α = e^{-t}`.
pub fn vp_level(t: f64) -> f64 {
    (-t).exp()
}
