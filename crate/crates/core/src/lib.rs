//! Diffusion-model parameterizations (VP, VE-Karras, rectified flow), exact
//! conversions between them, Gaussian-mixture oracles, forward and reverse
//! samplers, Langevin splitting, denoising score-matching training and a 1-D
//! Fokker–Planck solver.

pub mod convert;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod fokker_planck;
pub mod forward;
pub mod langevin;
pub mod oracle;
pub mod par;
pub mod reverse;
pub mod rng;
pub mod train;
pub mod types;
pub mod verify;

pub use convert::{
    convert_point, convert_prediction, point_map, prediction_map, ConversionReport, PointMap, PredictionMap,
};
pub use ensemble::{Ensemble, MomentSummary};
pub use error::{Error, Result};
pub use field::{eval_as, ConvertedField, OracleField, PredictionField, ScoreField};
pub use oracle::{perturb, GaussianMixture, PerturbedMixture};
pub use rng::RngStream;
pub use types::{ModelType, ParamPoint, Parameterization, Prediction, PredictionKind};
pub use verify::{Check, Suite, VerifyConfig};
