//! Denoising score-matching training of small models against Gaussian-mixture data.

pub mod checkpoint;
pub mod loss;
pub mod mlp;
pub mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{eval_as, OracleField, PredictionField};
use crate::oracle::{perturb, GaussianMixture, MAX_DIM};
use crate::rng::RngStream;
use crate::types::{Parameterization, PredictionKind};

pub use checkpoint::Checkpoint;
pub use loss::{
    conditional_score_target, dsm_loss, dsm_loss_value, dsm_terms, sm_loss_oracle, sm_terms, DsmBatch, LevelSampling,
    LossSpec, WeightMode,
};
pub use mlp::{Activation, DenseLayer, MlpModel, MlpSpec};
pub use optim::{Optimizer, OptimizerConfig};

/// A trainable prediction model. `level` is in the native parameterization of `kind()`.
pub trait ScoreModel: Send + Sync {
    fn kind(&self) -> PredictionKind;
    fn dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn predict_into(&self, x: &[f64], level: f64, out: &mut [f64]);
    /// Add `∂⟨upstream, prediction⟩/∂θ` to `grad`.
    fn backprop(&self, x: &[f64], level: f64, upstream: &[f64], grad: &mut [f64]);

    /// Write the prediction to `out`, let `upstream` turn it into the
    /// upstream gradient (in place), then backpropagate that into `grad`.
    fn predict_backprop(
        &self,
        x: &[f64],
        level: f64,
        out: &mut [f64],
        grad: &mut [f64],
        upstream: &mut dyn FnMut(&mut [f64]),
    ) {
        self.predict_into(x, level, out);
        upstream(out);
        self.backprop(x, level, out, grad);
    }
}

/// `prediction = θ · x`, a one-parameter model with a closed-form optimum on Gaussian data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: PredictionKind,
    pub dim: usize,
    pub theta: [f64; 1],
}

impl LinearModel {
    pub fn new(kind: PredictionKind, dim: usize, theta: f64) -> Self {
        LinearModel {
            kind,
            dim,
            theta: [theta],
        }
    }
}

impl ScoreModel for LinearModel {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn predict_into(&self, x: &[f64], _level: f64, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.theta[0] * v;
        }
    }

    fn backprop(&self, x: &[f64], _level: f64, upstream: &[f64], grad: &mut [f64]) {
        grad[0] += x.iter().zip(upstream).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl PredictionField for LinearModel {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], level: f64, out: &mut [f64]) {
        self.predict_into(x, level, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 256,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

/// Abort threshold on the batch loss.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Run `cfg.steps` optimizer steps on fresh batches; returns the per-step batch loss.
///
/// Batch `k` is drawn from stream `(cfg.seed, 1).child(k)`, so the run is
/// reproducible and independent of the worker count.
pub fn train<M: ScoreModel>(
    model: &mut M,
    data: &GaussianMixture,
    spec: &LossSpec,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if data.dim() != model.dim() {
        return Err(Error::arg("model and data dimensions differ"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    spec.validate()?;
    let root = RngStream::new(cfg.seed, 1);
    let mut opt = Optimizer::new(cfg.optimizer.clone(), model.params().len())?;
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = root.child(step as u64);
        let batch = DsmBatch::sample(data, spec, cfg.batch_size, &mut rng);
        let (loss, grad) = match dsm_loss(model, &batch, spec) {
            Ok(v) => v,
            Err(Error::Training(_)) => (f64::NAN, Vec::new()),
            Err(e) => return Err(e),
        };
        if !(loss <= DIVERGENCE_LOSS) {
            return Err(Error::Diverged { step, loss, trace });
        }
        opt.step(model.params_mut(), &grad);
        trace.push(loss);
    }
    Ok(trace)
}

/// Relative L2 error `sqrt(Σ‖ŝ − s‖² / Σ‖s‖²)` of a field's VP score against
/// the exact perturbed score, over `n` samples of `p_α` restricted to the
/// highest-density region holding `mass` of the probability.
pub fn score_error(
    field: &dyn PredictionField,
    data: &GaussianMixture,
    alpha: f64,
    n: usize,
    mass: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    if !(mass > 0.0 && mass <= 1.0) || n == 0 {
        return Err(Error::arg("score_error needs n > 0 and mass in (0, 1]"));
    }
    let pm = perturb(data, Parameterization::Vp, alpha)?;
    let oracle = OracleField::new(data.clone(), PredictionKind::Score);
    let d = data.dim();
    let mut pts: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|_| {
            let mut x = vec![0.0; d];
            pm.sample_into(rng, &mut x);
            (pm.log_density(&x), x)
        })
        .collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let keep = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let (mut num, mut den) = (0.0, 0.0);
    let mut s = [0.0; MAX_DIM];
    let mut t = [0.0; MAX_DIM];
    for (_, x) in &pts[..keep] {
        eval_as(
            field,
            PredictionKind::Score,
            Parameterization::Vp,
            x,
            alpha,
            &mut s[..d],
        )?;
        oracle.eval_into(x, alpha, &mut t[..d]);
        for j in 0..d {
            num += (s[j] - t[j]).powi(2);
            den += t[j] * t[j];
        }
    }
    Ok((num / den).sqrt())
}
