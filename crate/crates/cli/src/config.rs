//! TOML run configurations. Every field has a default, unknown keys are
//! rejected, and the resolved value is echoed to `config.toml`.

use std::path::Path;

use langevin_core::fokker_planck::TimeScheme;
use langevin_core::oracle::{Covariance, MixtureSpec};
use langevin_core::reverse::{OdeSolver, StepSpacing};
use langevin_core::train::{LevelSampling, OptimizerConfig, WeightMode};
use langevin_core::types::{ModelType, Parameterization, PredictionKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn echo<T: Serialize>(cfg: &T) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Config(format!("cannot serialize resolved config: {e}")))
}

fn isotropic(weights: &[f64], means: &[&[f64]], var: f64) -> MixtureSpec {
    MixtureSpec {
        weights: weights.to_vec(),
        means: means.iter().map(|m| m.to_vec()).collect(),
        covariances: vec![Covariance::Isotropic(var); weights.len()],
    }
}

/// `½ N(-2, 0.1) + ½ N(2, 0.1)`.
pub fn bimodal_1d() -> MixtureSpec {
    isotropic(&[0.5, 0.5], &[&[-2.0], &[2.0]], 0.1)
}

/// `0.3 N((-1.5, -1), 0.2 I) + 0.7 N((1.5, 1), 0.2 I)`.
pub fn two_mode_2d() -> MixtureSpec {
    isotropic(&[0.3, 0.7], &[&[-1.5, -1.0], &[1.5, 1.0]], 0.2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMethod {
    /// Euler–Maruyama on the forward SDE.
    Sde,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleForwardConfig {
    pub seed: u64,
    pub param: Parameterization,
    pub method: ForwardMethod,
    pub chains: usize,
    /// Euler–Maruyama steps, uniform in the forward clock, up to the largest level.
    pub steps: usize,
    pub levels: Vec<f64>,
    pub write_samples: bool,
    pub data: MixtureSpec,
}

impl Default for SampleForwardConfig {
    fn default() -> Self {
        SampleForwardConfig {
            seed: 0,
            param: Parameterization::Vp,
            method: ForwardMethod::Sde,
            chains: 10_000,
            steps: 500,
            levels: vec![0.9, 0.5, 0.1],
            write_samples: true,
            data: bimodal_1d(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSource {
    /// Exact field of `data`.
    Oracle,
    /// A trained network from `checkpoint`.
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleReverseConfig {
    pub seed: u64,
    pub model_type: ModelType,
    pub field: FieldSource,
    pub checkpoint: Option<String>,
    pub chains: usize,
    pub steps: usize,
    pub spacing: StepSpacing,
    pub solver: OdeSolver,
    /// Forward clock where chains start (VP `t = -ln α`, VE `σ`, RF `s`).
    pub start_clock: Option<f64>,
    pub end_clock: Option<f64>,
    /// Ensemble moments are recorded at this many evenly spaced steps (plus the start).
    pub snapshots: usize,
    pub write_samples: bool,
    /// Data for the oracle field; a checkpoint carries its own.
    pub data: MixtureSpec,
}

impl Default for SampleReverseConfig {
    fn default() -> Self {
        SampleReverseConfig {
            seed: 0,
            model_type: ModelType::VpSde,
            field: FieldSource::Oracle,
            checkpoint: None,
            chains: 10_000,
            steps: 400,
            spacing: StepSpacing::Uniform,
            solver: OdeSolver::Euler,
            start_clock: None,
            end_clock: None,
            snapshots: 4,
            write_samples: true,
            data: bimodal_1d(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LangevinMode {
    /// Plain Langevin dynamics on the perturbed data density.
    Langevin,
    /// Composed forward/reverse split steps of one row.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Exact samples of the target.
    Target,
    /// `N(init_mean, init_std² I)`.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinConfig {
    pub seed: u64,
    pub mode: LangevinMode,
    /// Split row; `split` mode only.
    pub row: ModelType,
    /// Parameterization of the target level; `langevin` mode only.
    pub param: Parameterization,
    /// Target is the data perturbed to this level. Defaults: the clean level
    /// for `langevin`, the row's midpoint level for `split`.
    pub level: Option<f64>,
    pub chains: usize,
    pub steps: usize,
    pub dtau: f64,
    pub record_every: usize,
    pub init: InitKind,
    pub init_mean: Option<Vec<f64>>,
    pub init_std: f64,
    pub write_samples: bool,
    pub data: MixtureSpec,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            seed: 0,
            mode: LangevinMode::Langevin,
            row: ModelType::VpSde,
            param: Parameterization::Vp,
            level: None,
            chains: 10_000,
            steps: 20_000,
            dtau: 5e-3,
            record_every: 1000,
            init: InitKind::Normal,
            init_mean: None,
            init_std: 1.0,
            write_samples: true,
            data: isotropic(&[0.5, 0.5], &[&[-1.0], &[1.0]], 0.25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub seed: u64,
    pub model_type: ModelType,
    /// Network output kind; defaults to the row's native kind.
    pub prediction_kind: Option<PredictionKind>,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub weight_mode: WeightMode,
    pub sampling: LevelSampling,
    pub level_min: Option<f64>,
    pub level_max: Option<f64>,
    /// VP levels at which the trained field's score error is reported.
    pub eval_alphas: Vec<f64>,
    pub eval_samples: usize,
    pub eval_mass: f64,
    pub data: MixtureSpec,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            seed: 0,
            model_type: ModelType::VpSde,
            prediction_kind: None,
            hidden: vec![64, 64],
            steps: 20_000,
            batch_size: 256,
            optimizer: OptimizerConfig::default(),
            weight_mode: WeightMode::NoiseVariance,
            sampling: LevelSampling::Clock,
            level_min: None,
            level_max: None,
            eval_alphas: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            eval_samples: 20_000,
            eval_mass: 0.9,
            data: two_mode_2d(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpOperatorKind {
    /// `f = -θ x`, constant `g`.
    Ou,
    /// `f = 0`, constant `g`.
    Heat,
    /// The forward SDE of `param`, with time as its clock.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianInit {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpConfig {
    pub operator: FpOperatorKind,
    pub theta: f64,
    pub g: f64,
    pub param: Parameterization,
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
    pub horizon: f64,
    /// Time step; defaults to `dt_fraction` of the explicit stability bound at t = 0.
    pub dt: Option<f64>,
    pub dt_fraction: f64,
    pub scheme: TimeScheme,
    pub p0: GaussianInit,
    pub q0: GaussianInit,
}

impl Default for FpConfig {
    fn default() -> Self {
        FpConfig {
            operator: FpOperatorKind::Ou,
            theta: 1.0,
            g: 2f64.sqrt(),
            param: Parameterization::Vp,
            x_min: -10.0,
            x_max: 10.0,
            cells: 400,
            horizon: 2.0,
            dt: None,
            dt_fraction: 0.5,
            scheme: TimeScheme::Explicit,
            p0: GaussianInit { mean: 1.5, var: 0.5 },
            q0: GaussianInit { mean: -1.0, var: 1.5 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip<T: Serialize + DeserializeOwned + Default + PartialEq + std::fmt::Debug>() {
        let text = echo(&T::default()).unwrap();
        let back: T = toml::from_str(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        assert_eq!(back, T::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        round_trip::<SampleForwardConfig>();
        round_trip::<SampleReverseConfig>();
        round_trip::<LangevinConfig>();
        round_trip::<TrainRunConfig>();
        round_trip::<FpConfig>();
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_position() {
        let err = toml::from_str::<TrainRunConfig>("steps = 10\nstepz = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stepz") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let c: SampleReverseConfig =
            toml::from_str("model_type = \"rf\"\nspacing = { karras = { rho = 7.0 } }\n").unwrap();
        assert_eq!(c.model_type, ModelType::RectifiedFlow);
        assert_eq!(c.spacing, StepSpacing::Karras { rho: 7.0 });
        assert_eq!(c.chains, SampleReverseConfig::default().chains);
    }
}
