//! Finite-volume solver for the 1-D Fokker–Planck equation
//! `∂p/∂t = -∂x(f p) + ½ g² ∂xx p` with reflecting walls, and the KL-decay
//! diagnostics built on it.
//!
//! Interface fluxes use Scharfetter–Gummel exponential fitting,
//! `F = (D/h) [B(-P) p_i - B(P) p_{i+1}]` with `D = ½g²`, `P = f h / D` and
//! `B(z) = z/(e^z - 1)`. It reduces to central diffusion when `f = 0` and to
//! upwinding when `g = 0`, every step is a nonnegative, mass-preserving
//! (column-stochastic) map, and a density with `p_{i+1}/p_i = e^P` carries no
//! flux, so the OU Gaussian sampled at cell centres is an exact steady state.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardSpec;
use crate::types::Parameterization;

/// Floor applied to densities inside logarithms.
pub const LOG_FLOOR: f64 = 1e-300;
/// Mass fraction in the floored region that triggers the accuracy warning.
pub const UNDERFLOW_MASS_WARNING: f64 = 0.1;

/// Uniform cell-centred mesh on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
}

impl CellGrid {
    pub fn new(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() || cells < 3 {
            return Err(Error::arg(format!(
                "grid needs finite x_min < x_max and at least 3 cells, got [{x_min}, {x_max}] with {cells}"
            )));
        }
        Ok(CellGrid { x_min, x_max, cells })
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.h()
    }

    /// Right face of cell `i`.
    pub fn face(&self, i: usize) -> f64 {
        self.x_min + (i + 1) as f64 * self.h()
    }

    pub fn refined(&self) -> CellGrid {
        CellGrid {
            cells: 2 * self.cells,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: CellGrid,
    pub values: Vec<f64>,
}

impl GridDensity {
    /// Sample `f` at the cell centres and rescale to unit mass.
    pub fn from_fn(grid: CellGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..grid.cells).map(|i| f(grid.center(i))).collect();
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::arg("density values must be finite and nonnegative"));
        }
        let mut d = GridDensity { grid, values };
        let m = d.mass();
        if !(m > 0.0) {
            return Err(Error::arg("density has no mass on the grid"));
        }
        d.values.iter_mut().for_each(|v| *v /= m);
        Ok(d)
    }

    pub fn gaussian(grid: CellGrid, mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::arg("variance must be positive"));
        }
        Self::from_fn(grid, |x| (-(x - mean).powi(2) / (2.0 * var)).exp())
    }

    /// `Σ h p_i`, the quantity the scheme conserves.
    pub fn mass(&self) -> f64 {
        self.grid.h() * self.values.iter().sum::<f64>()
    }

    /// `Σ h p_i φ(x_i)`.
    pub fn integrate(&self, phi: impl Fn(f64) -> f64) -> f64 {
        let g = self.grid;
        g.h()
            * self
                .values
                .iter()
                .enumerate()
                .map(|(i, p)| p * phi(g.center(i)))
                .sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|x| x) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.integrate(|x| (x - m).powi(2)) / self.mass()
    }

    pub fn max_abs_diff(&self, other: &GridDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `∂x log p` by central differences of floored logs (one-sided at the walls).
    pub fn grid_score(&self) -> Vec<f64> {
        let n = self.grid.cells;
        let h = self.grid.h();
        let l: Vec<f64> = self.values.iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
        (0..n)
            .map(|i| match i {
                0 => (l[1] - l[0]) / h,
                _ if i == n - 1 => (l[n - 1] - l[n - 2]) / h,
                _ => (l[i + 1] - l[i - 1]) / (2.0 * h),
            })
            .collect()
    }
}

pub type DriftFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Drift `f(x, t)` and diffusion `g(t)` of `dx = f dt + g dW`, reflecting walls.
#[derive(Clone)]
pub struct FPOperator {
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
}

impl std::fmt::Debug for FPOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FPOperator { .. }")
    }
}

impl FPOperator {
    pub fn new(drift: DriftFn, diffusion: DiffusionFn) -> Self {
        FPOperator { drift, diffusion }
    }

    /// Pure diffusion with constant `g`.
    pub fn heat(g: f64) -> Self {
        Self::new(Arc::new(|_, _| 0.0), Arc::new(move |_| g))
    }

    /// `dx = -θ x dt + g dW`.
    pub fn ou(theta: f64, g: f64) -> Self {
        Self::new(Arc::new(move |x, _| -theta * x), Arc::new(move |_| g))
    }

    /// Drift only.
    pub fn transport(drift: DriftFn) -> Self {
        Self::new(drift, Arc::new(|_| 0.0))
    }

    /// Forward SDE of a parameterization, with `t` its clock (VP `-ln α`, VE `σ`, RF `s`).
    pub fn forward(param: Parameterization) -> Self {
        let spec = ForwardSpec::new(param);
        let level = move |t: f64| spec.level_at(t);
        Self::new(
            Arc::new(move |x, t| spec.drift_rate(level(t)) * x),
            Arc::new(move |t| spec.diffusion(level(t))),
        )
    }

    /// Transfer rates across every interior face at time `t`: `(right, left)`
    /// where `right[k]` moves mass from cell `k` to `k+1` and `left[k]` back.
    fn rates(&self, grid: &CellGrid, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = grid.h();
        let g = (self.diffusion)(t);
        let d = 0.5 * g * g;
        if !d.is_finite() || d < 0.0 {
            return Err(Error::domain("Fokker-Planck diffusion", format!("g({t}) = {g}")));
        }
        let faces = grid.cells - 1;
        let mut right = vec![0.0; faces];
        let mut left = vec![0.0; faces];
        for k in 0..faces {
            let f = (self.drift)(grid.face(k), t);
            if !f.is_finite() {
                return Err(Error::domain(
                    "Fokker-Planck drift",
                    format!("f({}, {t}) = {f}", grid.face(k)),
                ));
            }
            if d == 0.0 {
                right[k] = f.max(0.0) / h;
                left[k] = (-f).max(0.0) / h;
            } else {
                let p = f * h / d;
                right[k] = d / (h * h) * bernoulli(-p);
                left[k] = d / (h * h) * bernoulli(p);
            }
        }
        Ok((right, left))
    }

    /// Largest explicit step that keeps the update nonnegative at time `t`.
    pub fn stable_dt(&self, grid: &CellGrid, t: f64) -> Result<f64> {
        let (right, left) = self.rates(grid, t)?;
        Ok(1.0 / max_outflow(&right, &left))
    }
}

fn max_outflow(right: &[f64], left: &[f64]) -> f64 {
    let n = right.len() + 1;
    (0..n)
        .map(|i| {
            let r = if i < n - 1 { right[i] } else { 0.0 };
            let l = if i > 0 { left[i - 1] } else { 0.0 };
            r + l
        })
        .fold(0.0, f64::max)
}

/// `B(z) = z / (e^z - 1)`.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeScheme {
    /// Forward Euler; refuses steps beyond the positivity bound.
    #[default]
    Explicit,
    /// Backward Euler with rates frozen at the end of the step; unconditionally stable.
    Implicit,
}

/// Advance `rho` from `t` to `t + dt`.
pub fn fp_step(op: &FPOperator, rho: &GridDensity, t: f64, dt: f64, scheme: TimeScheme) -> Result<GridDensity> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::arg(format!("time step must be positive, got {dt}")));
    }
    let n = rho.grid.cells;
    let p = &rho.values;
    let mut out = p.clone();
    match scheme {
        TimeScheme::Explicit => {
            let (right, left) = op.rates(&rho.grid, t)?;
            let required = 1.0 / max_outflow(&right, &left);
            if dt > required {
                return Err(Error::Stability {
                    dt,
                    required_dt: required,
                });
            }
            for k in 0..n - 1 {
                let flux = dt * (right[k] * p[k] - left[k] * p[k + 1]);
                out[k] -= flux;
                out[k + 1] += flux;
            }
        }
        TimeScheme::Implicit => {
            let (right, left) = op.rates(&rho.grid, t + dt)?;
            let mut lower = vec![0.0; n];
            let mut diag = vec![1.0; n];
            let mut upper = vec![0.0; n];
            for k in 0..n - 1 {
                diag[k] += dt * right[k];
                diag[k + 1] += dt * left[k];
                upper[k] = -dt * left[k];
                lower[k + 1] = -dt * right[k];
            }
            thomas(&lower, &diag, &upper, &mut out);
            // round-off from the solve can leave tiny negatives in empty tails
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Ok(GridDensity {
        grid: rho.grid,
        values: out,
    })
}

/// Solve a tridiagonal system in place (`lower[0]`, `upper[n-1]` unused).
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut b = diag[0];
    c[0] = upper[0] / b;
    rhs[0] /= b;
    for i in 1..n {
        b = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / b;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// `KL(p‖q) = Σ h p log(p/q)` with both logs floored.
pub fn kl(p: &GridDensity, q: &GridDensity) -> f64 {
    let h = p.grid.h();
    h * p
        .values
        .iter()
        .zip(&q.values)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln()))
        .sum::<f64>()
}

/// `L_t = ½ g(t)² Σ h p (∂x log p - ∂x log q)²` with grid scores.
pub fn instantaneous_objective(op: &FPOperator, p: &GridDensity, q: &GridDensity, t: f64) -> f64 {
    let g = (op.diffusion)(t);
    let (sp, sq) = (p.grid_score(), q.grid_score());
    let h = p.grid.h();
    0.5 * g
        * g
        * h
        * p.values
            .iter()
            .zip(sp.iter().zip(&sq))
            .map(|(v, (a, b))| v * (a - b).powi(2))
            .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub t: f64,
    pub kl: f64,
    /// Finite-difference derivative of the KL series.
    pub dkl_dt: f64,
    pub l_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlTrace {
    pub points: Vec<KlPoint>,
    /// Set when more than 10% of either density sat in cells where the other underflows.
    pub underflow_warning: bool,
}

fn underflow_mass(p: &GridDensity, q: &GridDensity) -> f64 {
    p.grid.h()
        * p.values
            .iter()
            .zip(&q.values)
            .filter(|(_, b)| **b <= LOG_FLOOR)
            .map(|(a, _)| a)
            .sum::<f64>()
}

/// Evolve `p0` and `q0` under the same operator for `horizon` and record
/// `(t, KL, dKL/dt, L_t)` at every step. The derivative is centred in the
/// interior and second-order one-sided at the ends.
pub fn kl_trace(
    op: &FPOperator,
    p0: &GridDensity,
    q0: &GridDensity,
    horizon: f64,
    dt: f64,
    scheme: TimeScheme,
) -> Result<KlTrace> {
    if p0.grid != q0.grid {
        return Err(Error::arg("p and q live on different grids"));
    }
    if !(horizon > 0.0) || !(dt > 0.0) {
        return Err(Error::arg("horizon and dt must be positive"));
    }
    let steps = (horizon / dt).round() as usize;
    if steps < 2 {
        return Err(Error::arg("kl_trace needs at least two steps"));
    }
    let (mut p, mut q) = (p0.clone(), q0.clone());
    let mut ts = Vec::with_capacity(steps + 1);
    let mut kls = Vec::with_capacity(steps + 1);
    let mut lts = Vec::with_capacity(steps + 1);
    let mut warn = false;
    for n in 0..=steps {
        let t = n as f64 * dt;
        ts.push(t);
        kls.push(kl(&p, &q));
        lts.push(instantaneous_objective(op, &p, &q, t));
        warn |= underflow_mass(&p, &q) > UNDERFLOW_MASS_WARNING || underflow_mass(&q, &p) > UNDERFLOW_MASS_WARNING;
        if n < steps {
            p = fp_step(op, &p, t, dt, scheme)?;
            q = fp_step(op, &q, t, dt, scheme)?;
        }
    }
    let m = steps;
    let points = (0..=m)
        .map(|n| {
            let d = if n == 0 {
                (-3.0 * kls[0] + 4.0 * kls[1] - kls[2]) / (2.0 * dt)
            } else if n == m {
                (3.0 * kls[m] - 4.0 * kls[m - 1] + kls[m - 2]) / (2.0 * dt)
            } else {
                (kls[n + 1] - kls[n - 1]) / (2.0 * dt)
            };
            KlPoint {
                t: ts[n],
                kl: kls[n],
                dkl_dt: d,
                l_t: lts[n],
            }
        })
        .collect();
    Ok(KlTrace {
        points,
        underflow_warning: warn,
    })
}
