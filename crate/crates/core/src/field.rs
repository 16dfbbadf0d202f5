//! Vector fields the samplers consume.
//!
//! A [`ScoreField`] returns `∇ log p` in whatever coordinates it is asked
//! about. A [`PredictionField`] returns a tagged model output (score, noise or
//! velocity) in its kind's native parameterization; [`eval_as`] adapts it to
//! any requested kind through the exact conversions in [`crate::convert`].

use std::sync::Arc;

use crate::convert::{point_map, prediction_map};
use crate::error::Result;
use crate::forward::marginal_coeffs;
use crate::oracle::{GaussianMixture, MAX_DIM};
use crate::types::{Parameterization, PredictionKind};

pub trait ScoreField: Send + Sync {
    fn score_into(&self, x: &[f64], level: f64, out: &mut [f64]);
}

impl<F> ScoreField for F
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn score_into(&self, x: &[f64], level: f64, out: &mut [f64]) {
        self(x, level, out)
    }
}

/// Analytic score of a mixture perturbed in one parameterization; `level` is
/// that parameterization's noise level.
#[derive(Debug, Clone)]
pub struct MixtureScore {
    pub mixture: GaussianMixture,
    pub param: Parameterization,
}

impl ScoreField for MixtureScore {
    fn score_into(&self, x: &[f64], level: f64, out: &mut [f64]) {
        let (a, b) = marginal_coeffs(self.param, level).expect("level validated by caller");
        self.mixture.score_at_into(a, b, x, out);
    }
}

pub trait PredictionField: Send + Sync {
    fn kind(&self) -> PredictionKind;

    fn dim(&self) -> usize;

    /// Evaluate at a state `x` given in `self.kind().native_param()`
    /// coordinates at that parameterization's `level`.
    fn eval_into(&self, x: &[f64], level: f64, out: &mut [f64]);
}

impl<T: PredictionField + ?Sized> PredictionField for Arc<T> {
    fn kind(&self) -> PredictionKind {
        (**self).kind()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], level: f64, out: &mut [f64]) {
        (**self).eval_into(x, level, out)
    }
}

impl<T: PredictionField + ?Sized> PredictionField for Box<T> {
    fn kind(&self) -> PredictionKind {
        (**self).kind()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], level: f64, out: &mut [f64]) {
        (**self).eval_into(x, level, out)
    }
}

/// Evaluate `field` as a `target` prediction at a point `x` of
/// parameterization `param` and level `level`.
///
/// `x` should be expressed in `target.native_param()`; the field is queried
/// at the equivalent point of its own parameterization and the output is
/// mapped with the affine prediction conversion.
pub fn eval_as(
    field: &dyn PredictionField,
    target: PredictionKind,
    param: Parameterization,
    x: &[f64],
    level: f64,
    out: &mut [f64],
) -> Result<()> {
    let d = x.len();
    let native = field.kind().native_param();
    if native == param && field.kind() == target {
        field.eval_into(x, level, out);
        return Ok(());
    }
    let to_field = point_map(param, level, native)?;
    let mut xf = [0.0; MAX_DIM];
    let mut raw = [0.0; MAX_DIM];
    for j in 0..d {
        xf[j] = to_field.state_scale * x[j];
    }
    field.eval_into(&xf[..d], to_field.level, &mut raw[..d]);
    let map = prediction_map(field.kind(), target, to_field.level)?;
    map.apply_into(&raw[..d], &xf[..d], out);
    Ok(())
}

/// Exact prediction field of a Gaussian-mixture data distribution.
#[derive(Debug, Clone)]
pub struct OracleField {
    pub mixture: GaussianMixture,
    pub kind: PredictionKind,
}

impl OracleField {
    pub fn new(mixture: GaussianMixture, kind: PredictionKind) -> Self {
        OracleField { mixture, kind }
    }
}

impl PredictionField for OracleField {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn eval_into(&self, x: &[f64], level: f64, out: &mut [f64]) {
        let param = self.kind.native_param();
        let (a, b) = marginal_coeffs(param, level).expect("level validated by caller");
        self.mixture.score_at_into(a, b, x, out);
        match self.kind {
            PredictionKind::Score => {}
            // ε(z, σ) = -σ s_z
            PredictionKind::Noise => out.iter_mut().for_each(|v| *v *= -level),
            // v(r, s) = -(s s_r + r)/(1 - s)
            PredictionKind::Velocity => {
                for (v, r) in out.iter_mut().zip(x) {
                    *v = -(level * *v + r) / (1.0 - level);
                }
            }
        }
    }
}

/// Presents `inner` as a field of another kind by converting each output.
#[derive(Debug, Clone)]
pub struct ConvertedField<F> {
    pub inner: F,
    pub kind: PredictionKind,
}

impl<F: PredictionField> PredictionField for ConvertedField<F> {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_into(&self, x: &[f64], level: f64, out: &mut [f64]) {
        eval_as(&self.inner, self.kind, self.kind.native_param(), x, level, out)
            .expect("conversion outside its domain");
    }
}
