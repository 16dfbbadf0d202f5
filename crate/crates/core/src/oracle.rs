//! Analytic ground truth: Gaussian mixtures pushed through the forward
//! processes in closed form, their scores, and Gaussian KL divergences.
//!
//! A component `N(μ, Σ)` at marginal coefficients `(a, b)` becomes
//! `N(aμ, a²Σ + b²I)`. Each component's covariance is eigendecomposed once,
//! `Σ = Q Λ Qᵀ`, so the perturbed covariance at any level is `Q (a²Λ + b²) Qᵀ`
//! and densities/scores cost `O(d²)` per component with no allocation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::marginal_coeffs;
use crate::rng::RngStream;
use crate::types::Parameterization;

/// Largest supported state dimension.
pub const MAX_DIM: usize = 16;
/// Largest dimension for which full (non-diagonal) covariances are accepted.
pub const MAX_FULL_COV_DIM: usize = 4;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Covariance as written in a mixture spec: a scalar (isotropic), a vector
/// (diagonal) or a matrix (full, row by row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariance {
    Isotropic(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Covariance {
    fn to_matrix(&self, d: usize) -> Result<DMatrix<f64>> {
        match self {
            Covariance::Isotropic(v) => Ok(DMatrix::from_diagonal_element(d, d, *v)),
            Covariance::Diagonal(v) => {
                if v.len() != d {
                    return Err(Error::arg(format!(
                        "diagonal covariance has {} entries, expected {d}",
                        v.len()
                    )));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
            }
            Covariance::Full(rows) => {
                if d > MAX_FULL_COV_DIM {
                    return Err(Error::arg(format!(
                        "full covariances are limited to d <= {MAX_FULL_COV_DIM}; use a diagonal form"
                    )));
                }
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::arg(format!("full covariance must be {d}x{d}")));
                }
                let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
                if (0..d).any(|i| (0..d).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * (1.0 + m[(i, j)].abs()))) {
                    return Err(Error::arg("covariance is not symmetric"));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Covariance>,
}

#[derive(Debug, Clone)]
struct Component {
    mean: Vec<f64>,
    /// Row-major covariance.
    cov: Vec<f64>,
    /// Eigenvectors as columns of a row-major matrix: `eigvec[j*d + k]` is row j of Q, column k.
    eigvec: Vec<f64>,
    eigval: Vec<f64>,
    /// Row-major Cholesky factor of `cov`, for sampling.
    chol: Vec<f64>,
    log_weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianMixture {
    spec: MixtureSpec,
    dim: usize,
    weights: Vec<f64>,
    components: Vec<Component>,
}

impl PartialEq for GaussianMixture {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl TryFrom<MixtureSpec> for GaussianMixture {
    type Error = Error;

    fn try_from(spec: MixtureSpec) -> Result<Self> {
        GaussianMixture::new(spec)
    }
}

impl From<GaussianMixture> for MixtureSpec {
    fn from(gm: GaussianMixture) -> Self {
        gm.spec
    }
}

impl GaussianMixture {
    pub fn new(spec: MixtureSpec) -> Result<Self> {
        let k = spec.weights.len();
        if k == 0 {
            return Err(Error::arg("mixture needs at least one component"));
        }
        if spec.means.len() != k || spec.covariances.len() != k {
            return Err(Error::arg("weights, means and covariances must have equal length"));
        }
        if spec.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::arg("mixture weights must be positive"));
        }
        let total: f64 = spec.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("mixture weights sum to {total}, not 1")));
        }
        let d = spec.means[0].len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::arg(format!("mixture dimension must be in 1..={MAX_DIM}")));
        }
        let mut components = Vec::with_capacity(k);
        for ((w, mean), cov) in spec.weights.iter().zip(&spec.means).zip(&spec.covariances) {
            if mean.len() != d {
                return Err(Error::arg("all component means must have the same dimension"));
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg("non-finite component mean"));
            }
            let m = cov.to_matrix(d)?;
            let chol = m
                .clone()
                .cholesky()
                .ok_or_else(|| Error::arg("component covariance is not positive definite"))?
                .l();
            let eig = m.clone().symmetric_eigen();
            if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
                return Err(Error::arg("component covariance is not positive definite"));
            }
            components.push(Component {
                mean: mean.clone(),
                cov: row_major(&m),
                eigvec: row_major(&eig.eigenvectors),
                eigval: eig.eigenvalues.iter().copied().collect(),
                chol: row_major(&chol),
                log_weight: w.ln(),
            });
        }
        Ok(GaussianMixture {
            weights: spec.weights.clone(),
            spec,
            dim: d,
            components,
        })
    }

    /// One component `N(mean, var·I)`.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        GaussianMixture::new(MixtureSpec {
            weights: vec![1.0],
            means: vec![mean],
            covariances: vec![Covariance::Isotropic(var)],
        })
    }

    /// Equal-weight 1D mixture with a shared variance.
    pub fn symmetric_1d(centers: &[f64], var: f64) -> Result<Self> {
        let k = centers.len();
        GaussianMixture::new(MixtureSpec {
            weights: vec![1.0 / k as f64; k],
            means: centers.iter().map(|c| vec![*c]).collect(),
            covariances: vec![Covariance::Isotropic(var); k],
        })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn component_mean(&self, i: usize) -> &[f64] {
        &self.components[i].mean
    }

    pub fn component_cov(&self, i: usize) -> &[f64] {
        &self.components[i].cov
    }

    /// Draw one data point.
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let d = self.dim;
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        let c = &self.components[pick];
        let mut z = [0.0; MAX_DIM];
        rng.fill_normal(&mut z[..d]);
        for j in 0..d {
            let mut v = c.mean[j];
            for k in 0..=j {
                v += c.chol[j * d + k] * z[k];
            }
            out[j] = v;
        }
    }

    /// Log density of the pushforward `a·X + b·ε` at `x`.
    pub fn log_density_at(&self, a: f64, b: f64, x: &[f64]) -> f64 {
        let mut lse = LogSumExp::default();
        for c in &self.components {
            lse.push(self.component_log_density(c, a, b, x, None));
        }
        lse.value()
    }

    /// Score `∇ log p` of the pushforward `a·X + b·ε` at `x`, written to `out`.
    pub fn score_at_into(&self, a: f64, b: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut grad = [0.0; MAX_DIM];
        let mut max_l = f64::NEG_INFINITY;
        let mut total = 0.0;
        out[..d].iter_mut().for_each(|v| *v = 0.0);
        for c in &self.components {
            let l = self.component_log_density(c, a, b, x, Some(&mut grad[..d]));
            if l > max_l {
                let rescale = (max_l - l).exp();
                total *= rescale;
                out[..d].iter_mut().for_each(|v| *v *= rescale);
                max_l = l;
            }
            let w = (l - max_l).exp();
            total += w;
            for j in 0..d {
                out[j] += w * grad[j];
            }
        }
        out[..d].iter_mut().for_each(|v| *v /= total);
    }

    /// Posterior component probabilities at `x` under coefficients `(a, b)`.
    pub fn responsibilities_at(&self, a: f64, b: f64, x: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| self.component_log_density(c, a, b, x, None))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ws: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = ws.iter().sum();
        ws.into_iter().map(|w| w / total).collect()
    }

    /// Mean and row-major covariance of the pushforward `a·X + b·ε`.
    pub fn moments_at(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for j in 0..d {
                mean[j] += w * a * c.mean[j];
                for k in 0..d {
                    let noise = if j == k { b * b } else { 0.0 };
                    second[j * d + k] += w * (a * a * c.cov[j * d + k] + noise + a * a * c.mean[j] * c.mean[k]);
                }
            }
        }
        for j in 0..d {
            for k in 0..d {
                second[j * d + k] -= mean[j] * mean[k];
            }
        }
        (mean, second)
    }

    /// Component log density (including the log weight); optionally writes the component score.
    fn component_log_density(&self, c: &Component, a: f64, b: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let mut y = [0.0; MAX_DIM];
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for k in 0..d {
            let mut v = 0.0;
            for j in 0..d {
                v += c.eigvec[j * d + k] * (x[j] - a * c.mean[j]);
            }
            let e = a * a * c.eigval[k] + b * b;
            quad += v * v / e;
            logdet += e.ln();
            y[k] = v / e;
        }
        if let Some(g) = grad {
            for j in 0..d {
                let mut v = 0.0;
                for k in 0..d {
                    v += c.eigvec[j * d + k] * y[k];
                }
                g[j] = -v;
            }
        }
        c.log_weight - 0.5 * (quad + logdet + d as f64 * LN_2PI)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r)
        .flat_map(|i| (0..c).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect()
}

#[derive(Default)]
struct LogSumExp {
    max: Option<f64>,
    sum: f64,
}

impl LogSumExp {
    fn push(&mut self, l: f64) {
        match self.max {
            None => {
                self.max = Some(l);
                self.sum = 1.0;
            }
            Some(m) if l > m => {
                self.sum = self.sum * (m - l).exp() + 1.0;
                self.max = Some(l);
            }
            Some(m) => self.sum += (l - m).exp(),
        }
    }

    fn value(&self) -> f64 {
        match self.max {
            None => f64::NEG_INFINITY,
            Some(m) => m + self.sum.ln(),
        }
    }
}

/// A mixture pushed through one parameterization's forward process to a level.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedMixture {
    pub base: GaussianMixture,
    pub param: Parameterization,
    pub level: f64,
    /// State scale `a` of the marginal `a·x0 + b·ε`.
    pub scale: f64,
    /// Noise standard deviation `b`.
    pub noise_std: f64,
}

pub fn perturb(gm: &GaussianMixture, param: Parameterization, level: f64) -> Result<PerturbedMixture> {
    let (a, b) = marginal_coeffs(param, level)?;
    Ok(PerturbedMixture {
        base: gm.clone(),
        param,
        level,
        scale: a,
        noise_std: b,
    })
}

impl PerturbedMixture {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.base.log_density_at(self.scale, self.noise_std, x)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(x, &mut out);
        out
    }

    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        self.base.score_at_into(self.scale, self.noise_std, x, out)
    }

    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        self.base.moments_at(self.scale, self.noise_std)
    }

    /// Component `i` as an explicit Gaussian.
    pub fn component(&self, i: usize) -> Gaussian {
        let d = self.dim();
        let a = self.scale;
        let mean = self.base.component_mean(i).iter().map(|m| a * m).collect();
        let mut cov: Vec<f64> = self.base.component_cov(i).iter().map(|c| a * a * c).collect();
        for j in 0..d {
            cov[j * d + j] += self.noise_std * self.noise_std;
        }
        Gaussian { mean, cov }
    }

    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let d = self.dim();
        self.base.sample_into(rng, out);
        let mut eps = [0.0; MAX_DIM];
        rng.fill_normal(&mut eps[..d]);
        for j in 0..d {
            out[j] = self.scale * out[j] + self.noise_std * eps[j];
        }
    }
}

/// A multivariate normal with row-major covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        if cov.len() != mean.len() * mean.len() || mean.is_empty() {
            return Err(Error::arg("Gaussian covariance shape does not match its mean"));
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn univariate(mean: f64, var: f64) -> Self {
        Gaussian {
            mean: vec![mean],
            cov: vec![var],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.cov)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let d = self.dim();
        let chol = self
            .matrix()
            .cholesky()
            .ok_or_else(|| Error::arg("covariance is not positive definite"))?;
        let diff = DVector::from_iterator(d, x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let sol = chol.solve(&diff);
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (diff.dot(&sol) + logdet + d as f64 * LN_2PI))
    }
}

/// Closed-form `KL(p ‖ q)` between multivariate normals.
pub fn kl_gaussian(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::arg("KL between Gaussians of different dimension"));
    }
    let d = p.dim();
    let cp = p
        .matrix()
        .cholesky()
        .ok_or_else(|| Error::arg("p covariance is not positive definite"))?;
    let cq = q
        .matrix()
        .cholesky()
        .ok_or_else(|| Error::arg("q covariance is not positive definite"))?;
    let trace = cq.solve(&p.matrix()).trace();
    let diff = DVector::from_iterator(d, q.mean.iter().zip(&p.mean).map(|(a, b)| a - b));
    let maha = diff.dot(&cq.solve(&diff));
    let logdet =
        |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let kl = 0.5 * (trace + maha - d as f64 + logdet(&cq) - logdet(&cp));
    Ok(kl.max(0.0))
}

/// Uniform 1D node grid including both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1d {
    pub x_min: f64,
    pub x_max: f64,
    pub nodes: usize,
}

impl Grid1d {
    pub fn new(x_min: f64, x_max: f64, nodes: usize) -> Result<Self> {
        if !(x_max > x_min) || nodes < 3 {
            return Err(Error::arg("grid needs x_max > x_min and at least 3 nodes"));
        }
        Ok(Grid1d { x_min, x_max, nodes })
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nodes - 1) as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.spacing()
    }

    pub fn trapezoid(&self, f: impl Fn(f64) -> f64) -> f64 {
        let n = self.nodes;
        let inner: f64 = (1..n - 1).map(|k| f(self.node(k))).sum();
        self.spacing() * (inner + 0.5 * (f(self.x_min) + f(self.x_max)))
    }
}

/// Trapezoid KL estimate together with its Richardson self-check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureKl {
    pub value: f64,
    /// Same integral on a grid with half as many intervals.
    pub coarse_value: f64,
    /// Set when the fine and coarse estimates differ by more than 1e-6.
    pub accuracy_warning: bool,
}

/// Brute-force `∫ p log(p/q)` by the trapezoid rule. Densities are floored at
/// 1e-300 inside the logarithm.
pub fn quadrature_kl(p_density: impl Fn(f64) -> f64, q_density: impl Fn(f64) -> f64, grid: Grid1d) -> QuadratureKl {
    let integrand = |x: f64| {
        let p = p_density(x);
        if p <= 0.0 {
            return 0.0;
        }
        p * (p.max(1e-300).ln() - q_density(x).max(1e-300).ln())
    };
    let value = grid.trapezoid(integrand);
    let coarse = Grid1d {
        nodes: (grid.nodes - 1) / 2 + 1,
        ..grid
    };
    let coarse_value = coarse.trapezoid(integrand);
    QuadratureKl {
        value,
        coarse_value,
        accuracy_warning: (value - coarse_value).abs() > 1e-6,
    }
}
