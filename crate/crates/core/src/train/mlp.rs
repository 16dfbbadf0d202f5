//! Small fully connected network with hand-written backpropagation.
//!
//! Input features are the state scaled by `1/(a + b)` (the marginal
//! coefficients at the level) followed by a level embedding built from the
//! bounded noise coordinate `u = b/(a + b) ∈ [0, 1)`: `u` itself and
//! `sin/cos(2π f u)` for `f` in [`EMBED_FREQS`]. Hidden layers use tanh, the
//! output layer is linear.

use serde::{Deserialize, Serialize};

use super::ScoreModel;
use crate::error::{Error, Result};
use crate::field::PredictionField;
use crate::forward::marginal_coeffs;
use crate::oracle::MAX_DIM;
use crate::rng::RngStream;
use crate::types::{Parameterization, PredictionKind};

pub const EMBED_FREQS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const EMBED_DIM: usize = 1 + 2 * EMBED_FREQS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

/// One dense layer as stored in checkpoints; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub prediction_kind: PredictionKind,
    pub dim: usize,
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Shape {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    offset: usize,
}

impl Shape {
    fn n_params(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.outputs * self.inputs
    }
}

/// Feed-forward network. Parameters live in one flat vector, layer by layer,
/// each layer's row-major weights followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpSpec", into = "MlpSpec")]
pub struct MlpModel {
    kind: PredictionKind,
    dim: usize,
    shapes: Vec<Shape>,
    params: Vec<f64>,
}

/// `(input scale, noise coordinate)` at a level.
pub fn conditioning(param: Parameterization, level: f64) -> (f64, f64) {
    let (a, b) = marginal_coeffs(param, level).unwrap_or((0.0, 1.0));
    (1.0 / (a + b), b / (a + b))
}

impl MlpModel {
    /// Random initialisation: weights `N(0, 1/inputs)`, zero biases.
    pub fn new(kind: PredictionKind, dim: usize, hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::arg(format!(
                "model dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        if hidden.contains(&0) {
            return Err(Error::arg("hidden widths must be positive"));
        }
        let mut shapes = Vec::new();
        let mut inputs = dim + EMBED_DIM;
        let mut offset = 0;
        for (i, &outputs) in hidden.iter().chain(std::iter::once(&dim)).enumerate() {
            let activation = if i == hidden.len() {
                Activation::Identity
            } else {
                Activation::Tanh
            };
            let s = Shape {
                inputs,
                outputs,
                activation,
                offset,
            };
            offset += s.n_params();
            shapes.push(s);
            inputs = outputs;
        }
        let mut params = vec![0.0; offset];
        for s in &shapes {
            let scale = (1.0 / s.inputs as f64).sqrt();
            for w in &mut params[s.offset..s.bias_offset()] {
                *w = scale * rng.normal();
            }
        }
        Ok(MlpModel {
            kind,
            dim,
            shapes,
            params,
        })
    }

    pub fn param(&self) -> Parameterization {
        self.kind.native_param()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.shapes[..self.shapes.len() - 1].iter().map(|s| s.outputs).collect()
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec::from(self.clone())
    }

    fn features(&self, x: &[f64], level: f64, out: &mut Vec<f64>) {
        let (c_in, u) = conditioning(self.param(), level);
        out.clear();
        out.extend(x.iter().map(|v| c_in * v));
        out.push(u);
        for f in EMBED_FREQS {
            let (s, c) = (2.0 * std::f64::consts::PI * f * u).sin_cos();
            out.push(s);
            out.push(c);
        }
    }

    /// Post-activation outputs of every layer, input features first.
    fn activations(&self, x: &[f64], level: f64) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.shapes.len() + 1);
        let mut input = Vec::with_capacity(self.dim + EMBED_DIM);
        self.features(x, level, &mut input);
        acts.push(input);
        for s in &self.shapes {
            let prev = acts.last().unwrap();
            let w = &self.params[s.offset..s.bias_offset()];
            let b = &self.params[s.bias_offset()..s.offset + s.n_params()];
            let out: Vec<f64> = (0..s.outputs)
                .map(|j| {
                    let z = b[j] + dot(&w[j * s.inputs..(j + 1) * s.inputs], prev);
                    match s.activation {
                        Activation::Tanh => z.tanh(),
                        Activation::Identity => z,
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }
}

impl ScoreModel for MlpModel {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn predict_into(&self, x: &[f64], level: f64, out: &mut [f64]) {
        let acts = self.activations(x, level);
        out.copy_from_slice(acts.last().unwrap());
    }

    fn backprop(&self, x: &[f64], level: f64, upstream: &[f64], grad: &mut [f64]) {
        let acts = self.activations(x, level);
        self.backprop_from(&acts, upstream.to_vec(), grad);
    }

    fn predict_backprop(
        &self,
        x: &[f64],
        level: f64,
        out: &mut [f64],
        grad: &mut [f64],
        upstream: &mut dyn FnMut(&mut [f64]),
    ) {
        let acts = self.activations(x, level);
        out.copy_from_slice(acts.last().unwrap());
        upstream(out);
        self.backprop_from(&acts, out.to_vec(), grad);
    }
}

impl MlpModel {
    fn backprop_from(&self, acts: &[Vec<f64>], mut delta: Vec<f64>, grad: &mut [f64]) {
        for (l, s) in self.shapes.iter().enumerate().rev() {
            if s.activation == Activation::Tanh {
                for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &acts[l];
            let bias_off = s.bias_offset();
            for (j, &dj) in delta.iter().enumerate() {
                let row = &mut grad[s.offset + j * s.inputs..s.offset + (j + 1) * s.inputs];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += dj * a;
                }
                grad[bias_off + j] += dj;
            }
            if l > 0 {
                let w = &self.params[s.offset..bias_off];
                let mut next = vec![0.0; s.inputs];
                for (j, &dj) in delta.iter().enumerate() {
                    for (n, wji) in next.iter_mut().zip(&w[j * s.inputs..(j + 1) * s.inputs]) {
                        *n += wji * dj;
                    }
                }
                delta = next;
            }
        }
    }
}

impl PredictionField for MlpModel {
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

impl From<MlpModel> for MlpSpec {
    fn from(m: MlpModel) -> Self {
        let layers = m
            .shapes
            .iter()
            .map(|s| DenseLayer {
                inputs: s.inputs,
                outputs: s.outputs,
                activation: s.activation,
                weights: m.params[s.offset..s.bias_offset()].to_vec(),
                bias: m.params[s.bias_offset()..s.offset + s.n_params()].to_vec(),
            })
            .collect();
        MlpSpec {
            prediction_kind: m.kind,
            dim: m.dim,
            layers,
        }
    }
}

impl TryFrom<MlpSpec> for MlpModel {
    type Error = Error;

    fn try_from(spec: MlpSpec) -> Result<Self> {
        if spec.dim == 0 || spec.dim > MAX_DIM {
            return Err(Error::arg(format!("model dimension must be in 1..={MAX_DIM}")));
        }
        let (first, last) = match (spec.layers.first(), spec.layers.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::arg("network has no layers")),
        };
        if first.inputs != spec.dim + EMBED_DIM {
            return Err(Error::arg(format!(
                "first layer takes {} inputs, expected dim + {EMBED_DIM} = {}",
                first.inputs,
                spec.dim + EMBED_DIM
            )));
        }
        if last.outputs != spec.dim {
            return Err(Error::arg("last layer must output the state dimension"));
        }
        let mut shapes = Vec::new();
        let mut params = Vec::new();
        let mut prev = first.inputs;
        for (i, l) in spec.layers.iter().enumerate() {
            if l.inputs != prev {
                return Err(Error::arg(format!(
                    "layer {i} takes {} inputs but receives {prev}",
                    l.inputs
                )));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::arg(format!("layer {i} arrays do not match its shape")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::arg(format!("layer {i} has non-finite parameters")));
            }
            shapes.push(Shape {
                inputs: l.inputs,
                outputs: l.outputs,
                activation: l.activation,
                offset: params.len(),
            });
            params.extend_from_slice(&l.weights);
            params.extend_from_slice(&l.bias);
            prev = l.outputs;
        }
        Ok(MlpModel {
            kind: spec.prediction_kind,
            dim: spec.dim,
            shapes,
            params,
        })
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> MlpModel {
        MlpModel::new(PredictionKind::Score, 2, &[8, 5], &mut RngStream::new(4, 0)).unwrap()
    }

    #[test]
    fn shapes_chain() {
        let m = net();
        assert_eq!(m.params().len(), 8 * (2 + EMBED_DIM + 1) + 5 * 9 + 2 * 6);
        assert_eq!(m.hidden_widths(), vec![8, 5]);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let m = net();
        let s = serde_json::to_string(&m).unwrap();
        let back: MlpModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_broken_shapes() {
        let mut spec = net().spec();
        spec.layers[1].inputs = 7;
        assert!(MlpModel::try_from(spec).is_err());
        let mut spec = net().spec();
        spec.layers[0].bias.pop();
        assert!(MlpModel::try_from(spec).is_err());
    }

    #[test]
    fn backprop_matches_finite_differences_of_a_linear_functional() {
        let m = net();
        let x = [0.3, -1.2];
        let level = 0.6;
        let up = [0.7, -0.4];
        let mut grad = vec![0.0; m.params().len()];
        m.backprop(&x, level, &up, &mut grad);
        let f = |m: &MlpModel| {
            let mut o = [0.0; 2];
            m.predict_into(&x, level, &mut o);
            up[0] * o[0] + up[1] * o[1]
        };
        let h = 1e-6;
        for k in 0..m.params().len() {
            let (mut p, mut q) = (m.clone(), m.clone());
            p.params_mut()[k] += h;
            q.params_mut()[k] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-7 * (1.0 + fd.abs()),
                "param {k}: {fd} vs {}",
                grad[k]
            );
        }
    }
}
