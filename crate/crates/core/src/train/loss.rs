//! Denoising score-matching losses, one per parameterization:
//!
//! | row | regressed quantity | target        | canonical weight |
//! |-----|--------------------|---------------|--------------|
//! | VP  | score `s_θ`        | `-ε/√(1-α)`   | `½`          |
//! | VE  | noise `ε_θ`        | `ε`           | `1/σ`        |
//! | RF  | velocity `v_θ`     | `ε - r_0`     | `(1-s)/s`    |
//!
//! A model of another prediction kind is converted to the row's kind inside
//! the loss, so the same network can be trained under any row.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ScoreModel;
use crate::convert::{point_map, prediction_map};
use crate::error::{Error, Result};
use crate::field::{OracleField, PredictionField};
use crate::forward::marginal_coeffs;
use crate::oracle::{GaussianMixture, PerturbedMixture, MAX_DIM};
use crate::par;
use crate::reverse::data_std_bound;
use crate::rng::RngStream;
use crate::types::{ModelType, Parameterization, RF_LEVEL_MAX};

/// Samples per reduction chunk; fixed so sums do not depend on the worker count.
const CHUNK: usize = 16;

#[derive(Clone)]
pub struct CustomWeight(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomWeight(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `½`, `1/σ`, `(1-s)/s` for VP, VE, RF.
    Canonical,
    Uniform,
    /// Variance of the injected noise, `b(level)²`.
    NoiseVariance,
    /// Any function of the native level; not serializable.
    #[serde(skip)]
    Custom(CustomWeight),
}

impl PartialEq for WeightMode {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (WeightMode::Custom(a), WeightMode::Custom(b)) => Arc::ptr_eq(&a.0, &b.0),
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}

/// How training levels are drawn between `level_min` and `level_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelSampling {
    /// Uniform in the forward clock: VP `t = -ln α`, VE `σ`, RF `s`.
    #[default]
    Clock,
    /// Uniform in the level variable itself (`α` for VP).
    Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub model_type: ModelType,
    pub weight_mode: WeightMode,
    pub level_min: f64,
    pub level_max: f64,
    #[serde(default)]
    pub sampling: LevelSampling,
}

impl LossSpec {
    /// Default level ranges: VP `α ∈ [1e-4, 1-1e-3]`, VE `σ ∈ [1e-3, 20]`, RF `s ∈ [1e-3, 1-1e-3]`.
    pub fn new(model_type: ModelType, weight_mode: WeightMode) -> Self {
        let (level_min, level_max) = match model_type.param() {
            Parameterization::Vp => (1e-4, 1.0 - 1e-3),
            Parameterization::VeKarras => (1e-3, 20.0),
            Parameterization::RectifiedFlow => (1e-3, 1.0 - 1e-3),
        };
        LossSpec {
            model_type,
            weight_mode,
            level_min,
            level_max,
            sampling: LevelSampling::Clock,
        }
    }

    /// As [`LossSpec::new`], with the VE range reaching `20 · data_std_bound`.
    pub fn for_data(model_type: ModelType, weight_mode: WeightMode, data: &GaussianMixture) -> Self {
        let mut s = Self::new(model_type, weight_mode);
        if model_type.param() == Parameterization::VeKarras {
            s.level_max = 20.0 * data_std_bound(data);
        }
        s
    }

    /// Train at a single level.
    pub fn at_level(mut self, level: f64) -> Self {
        self.level_min = level;
        self.level_max = level;
        self
    }

    pub fn param(&self) -> Parameterization {
        self.model_type.param()
    }

    /// Map a uniform draw `u ∈ [0, 1)` to a training level.
    pub fn level_from_uniform(&self, u: f64) -> f64 {
        let (lo, hi) = (self.level_min, self.level_max);
        match (self.sampling, self.param()) {
            (LevelSampling::Clock, Parameterization::Vp) => {
                let (t_lo, t_hi) = (-hi.ln(), -lo.ln());
                (-(t_lo + (t_hi - t_lo) * u)).exp().clamp(lo, hi)
            }
            _ => lo + (hi - lo) * u,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level_min <= self.level_max) {
            return Err(Error::arg(format!(
                "level range [{}, {}] is empty",
                self.level_min, self.level_max
            )));
        }
        for l in [self.level_min, self.level_max] {
            check_interior(self.param(), l)?;
        }
        Ok(())
    }

    pub fn weight(&self, level: f64) -> f64 {
        match &self.weight_mode {
            WeightMode::Canonical => match self.param() {
                Parameterization::Vp => 0.5,
                Parameterization::VeKarras => 1.0 / level,
                Parameterization::RectifiedFlow => (1.0 - level) / level,
            },
            WeightMode::Uniform => 1.0,
            WeightMode::NoiseVariance => {
                let (_, b) = marginal_coeffs(self.param(), level).unwrap_or((0.0, 1.0));
                b * b
            }
            WeightMode::Custom(f) => (f.0)(level),
        }
    }
}

/// Levels where the conditional score is finite.
fn check_interior(param: Parameterization, level: f64) -> Result<()> {
    param.check_level(level)?;
    let ok = match param {
        Parameterization::Vp => level < 1.0,
        Parameterization::VeKarras => level > 0.0,
        Parameterization::RectifiedFlow => level > 0.0 && level <= RF_LEVEL_MAX,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::domain(
            "conditional score -ε/b",
            format!("{param} level {level} has zero noise; the target diverges"),
        ))
    }
}

/// `∇ log p(x_level | x_0)` in the native variable: `-ε/√(1-α)`, `-ε/σ`, `-ε/s`.
pub fn conditional_score_target(model_type: ModelType, eps: &[f64], level: f64) -> Result<Vec<f64>> {
    let param = model_type.param();
    check_interior(param, level)?;
    let (_, b) = marginal_coeffs(param, level)?;
    Ok(eps.iter().map(|e| -e / b).collect())
}

/// Regression target of the row at `x_level = a x_0 + b ε`.
fn dsm_target_into(param: Parameterization, b: f64, x0: &[f64], eps: &[f64], out: &mut [f64]) {
    for j in 0..out.len() {
        out[j] = match param {
            Parameterization::Vp => -eps[j] / b,
            Parameterization::VeKarras => eps[j],
            Parameterization::RectifiedFlow => eps[j] - x0[j],
        };
    }
}

/// Training triples `(x_0, ε, level)`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmBatch {
    pub dim: usize,
    pub x0: Vec<f64>,
    pub eps: Vec<f64>,
    pub levels: Vec<f64>,
}

impl DsmBatch {
    pub fn sample(data: &GaussianMixture, spec: &LossSpec, n: usize, rng: &mut RngStream) -> Self {
        let d = data.dim();
        let mut b = DsmBatch {
            dim: d,
            x0: vec![0.0; n * d],
            eps: vec![0.0; n * d],
            levels: vec![0.0; n],
        };
        for i in 0..n {
            b.levels[i] = spec.level_from_uniform(rng.uniform());
            data.sample_into(rng, &mut b.x0[i * d..(i + 1) * d]);
            rng.fill_normal(&mut b.eps[i * d..(i + 1) * d]);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Noisy state `a x_0 + b ε` of sample `i`.
    pub fn noisy_state(&self, param: Parameterization, i: usize) -> Result<Vec<f64>> {
        let (a, b) = marginal_coeffs(param, self.levels[i])?;
        let d = self.dim;
        Ok((0..d)
            .map(|j| a * self.x0[i * d + j] + b * self.eps[i * d + j])
            .collect())
    }
}

/// Everything a per-sample loss term needs, resolved before the parallel pass.
struct Plan {
    dim: usize,
    /// Noisy state in the model's native variables.
    y: Vec<f64>,
    model_level: Vec<f64>,
    value_scale: Vec<f64>,
    state_scale: Vec<f64>,
    target: Vec<f64>,
    weight: Vec<f64>,
}

enum Targets<'a> {
    Denoising,
    Marginal(&'a GaussianMixture),
}

fn plan<M: ScoreModel + ?Sized>(model: &M, batch: &DsmBatch, spec: &LossSpec, targets: Targets) -> Result<Plan> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let d = batch.dim;
    if d != model.dim() || d > MAX_DIM {
        return Err(Error::arg("batch and model dimensions differ"));
    }
    let param = spec.param();
    let loss_kind = spec.model_type.native_kind();
    let native = model.kind().native_param();
    let oracle = match targets {
        Targets::Marginal(gm) => Some(OracleField::new(gm.clone(), loss_kind)),
        Targets::Denoising => None,
    };
    let n = batch.len();
    let mut p = Plan {
        dim: d,
        y: vec![0.0; n * d],
        model_level: vec![0.0; n],
        value_scale: vec![0.0; n],
        state_scale: vec![0.0; n],
        target: vec![0.0; n * d],
        weight: vec![0.0; n],
    };
    for i in 0..n {
        let level = batch.levels[i];
        check_interior(param, level)?;
        let (a, b) = marginal_coeffs(param, level)?;
        let x: Vec<f64> = (0..d)
            .map(|j| a * batch.x0[i * d + j] + b * batch.eps[i * d + j])
            .collect();
        let to_model = point_map(param, level, native)?;
        let map = prediction_map(model.kind(), loss_kind, to_model.level)?;
        for j in 0..d {
            p.y[i * d + j] = to_model.state_scale * x[j];
        }
        p.model_level[i] = to_model.level;
        p.value_scale[i] = map.value_scale;
        p.state_scale[i] = map.state_scale;
        let t = &mut p.target[i * d..(i + 1) * d];
        match &oracle {
            None => dsm_target_into(
                param,
                b,
                &batch.x0[i * d..(i + 1) * d],
                &batch.eps[i * d..(i + 1) * d],
                t,
            ),
            Some(o) => o.eval_into(&x, level, t),
        }
        p.weight[i] = spec.weight(level);
    }
    Ok(p)
}

/// Weighted squared error of sample `i`; adds its parameter gradient to `grad` when given.
fn term<M: ScoreModel + ?Sized>(model: &M, p: &Plan, i: usize, grad: Option<&mut [f64]>) -> f64 {
    let d = p.dim;
    let y = &p.y[i * d..(i + 1) * d];
    let target = &p.target[i * d..(i + 1) * d];
    let (vs, ss, w) = (p.value_scale[i], p.state_scale[i], p.weight[i]);
    let mut loss = 0.0;
    // residual in the loss kind, then the upstream gradient w.r.t. the raw output
    let mut upstream = |out: &mut [f64]| {
        for j in 0..d {
            let r = vs * out[j] + ss * y[j] - target[j];
            loss += r * r;
            out[j] = 2.0 * w * vs * r;
        }
    };
    let mut out = [0.0; MAX_DIM];
    match grad {
        Some(g) => model.predict_backprop(y, p.model_level[i], &mut out[..d], g, &mut upstream),
        None => {
            model.predict_into(y, p.model_level[i], &mut out[..d]);
            upstream(&mut out[..d]);
        }
    }
    w * loss
}

fn check_finite(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Training(format!("non-finite loss {loss} in the forward pass")))
    }
}

/// Batch-mean weighted loss and its parameter gradient.
pub fn dsm_loss<M: ScoreModel + ?Sized>(model: &M, batch: &DsmBatch, spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    let p = plan(model, batch, spec, Targets::Denoising)?;
    let n = batch.len();
    let np = model.params().len();
    let (sum, mut grad) = par::chunked_reduce(
        n,
        CHUNK,
        |range| {
            let mut g = vec![0.0; np];
            let s: f64 = range.map(|i| term(model, &p, i, Some(&mut g))).sum();
            (s, g)
        },
        (0.0, vec![0.0; np]),
        |(a, mut ga), (b, gb)| {
            ga.iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
            (a + b, ga)
        },
    );
    let loss = check_finite(sum / n as f64)?;
    grad.iter_mut().for_each(|g| *g /= n as f64);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training("non-finite gradient".into()));
    }
    Ok((loss, grad))
}

fn terms<M: ScoreModel + ?Sized>(model: &M, p: &Plan, n: usize) -> Vec<f64> {
    par::map_indexed(n, |i| term(model, p, i, None))
}

/// Per-sample weighted denoising losses.
pub fn dsm_terms<M: ScoreModel + ?Sized>(model: &M, batch: &DsmBatch, spec: &LossSpec) -> Result<Vec<f64>> {
    let p = plan(model, batch, spec, Targets::Denoising)?;
    Ok(terms(model, &p, batch.len()))
}

/// Per-sample weighted losses against the exact marginal target at the same noisy states.
pub fn sm_terms<M: ScoreModel + ?Sized>(
    model: &M,
    batch: &DsmBatch,
    data: &GaussianMixture,
    spec: &LossSpec,
) -> Result<Vec<f64>> {
    let p = plan(model, batch, spec, Targets::Marginal(data))?;
    Ok(terms(model, &p, batch.len()))
}

fn ordered_mean(v: &[f64]) -> f64 {
    let s = par::chunked_reduce(v.len(), CHUNK, |r| v[r].iter().sum::<f64>(), 0.0, |a, b| a + b);
    s / v.len() as f64
}

pub fn dsm_loss_value<M: ScoreModel + ?Sized>(model: &M, batch: &DsmBatch, spec: &LossSpec) -> Result<f64> {
    check_finite(ordered_mean(&dsm_terms(model, batch, spec)?))
}

/// Monte-Carlo score-matching loss `λ E‖target(x) - model(x)‖²` at the
/// perturbed mixture's level, with the exact marginal target in the row's kind.
pub fn sm_loss_oracle<M: ScoreModel + ?Sized>(
    model: &M,
    pm: &PerturbedMixture,
    n: usize,
    spec: &LossSpec,
    rng: &mut RngStream,
) -> Result<f64> {
    if pm.param != spec.param() {
        return Err(Error::arg(format!(
            "perturbed mixture is in {} but the loss row is {}",
            pm.param,
            spec.param()
        )));
    }
    let at = spec.clone().at_level(pm.level);
    let batch = DsmBatch::sample(&pm.base, &at, n, rng);
    check_finite(ordered_mean(&sm_terms(model, &batch, &pm.base, &at)?))
}
