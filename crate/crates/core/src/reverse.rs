//! Reverse-time generation for the four reverse processes:
//!
//! | row    | reverse process                              | clock map       |
//! |--------|----------------------------------------------|-----------------|
//! | VP-SDE | dx = [½x + s(x, T-t')] dt' + dW_t'           | t' = T - t      |
//! | VP-ODE | dx = ½[x + s(x, T-t')] dt'                   | t' = T - t      |
//! | VE     | dz = -ε(z, Σ-σ') dσ'                         | σ' = Σ - σ      |
//! | RF     | dr = -v(r, 1-s') ds'                         | s' = 1 - s      |
//!
//! Schedules are kept in the *forward* clock (VP `t`, VE `σ`, RF `s`), which
//! runs from `start_clock` down to `end_clock`; a reverse step of size `h`
//! lowers the forward clock by `h`. The field may be of any prediction kind;
//! it is converted to the row's native kind on every evaluation.
//!
//! The VE start distribution `N(0, Σ²I)` only approximates `p_Σ`, whose
//! variance is `Σ² + Var(data)`; that gap is part of every VE tolerance.

use serde::{Deserialize, Serialize};

use crate::convert::{point_map, prediction_map};
use crate::ensemble::{Ensemble, MomentSummary};
use crate::error::{Error, Result};
use crate::field::{eval_as, PredictionField};
use crate::forward::{marginal_coeffs, Snapshot};
use crate::oracle::{GaussianMixture, MAX_DIM};
use crate::par;
use crate::rng::RngStream;
use crate::types::{vp_level, ModelType, Parameterization};

/// VP horizon with `α_T = e^{-T} = 1e-4`.
pub const DEFAULT_VP_HORIZON: f64 = 9.210_340_371_976_184;
/// RF start level `1 - 1e-3`.
pub const DEFAULT_RF_START: f64 = 1.0 - 1e-3;
/// Smallest equivalent VE noise level reached by the polynomial part of Karras spacing.
pub const KARRAS_SIGMA_MIN: f64 = 0.002;
/// VE horizon as a multiple of the data standard-deviation bound.
pub const VE_HORIZON_FACTOR: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSpacing {
    /// Uniform in reverse time.
    Uniform,
    /// Polynomial spacing in the equivalent VE noise level,
    /// `σ_i = (σ_max^{1/ρ} + i/N (σ_min^{1/ρ} - σ_max^{1/ρ}))^ρ`.
    Karras { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OdeSolver {
    Euler,
    /// Explicit trapezoid (second order); the final step onto the clean level stays Euler.
    Heun,
}

pub struct ReverseSpec<F> {
    pub model_type: ModelType,
    pub field: F,
    /// Forward clock where generation starts (`T`, `Σ` or the RF start level).
    pub start_clock: f64,
    /// Forward clock where generation stops; the clean level by default.
    pub end_clock: f64,
    pub spacing: StepSpacing,
    /// Integrator for the ODE rows; the VP-SDE row always uses Euler–Maruyama.
    pub solver: OdeSolver,
}

/// Upper bound on the per-coordinate standard deviation of the data about the origin.
pub fn data_std_bound(gm: &GaussianMixture) -> f64 {
    let (mean, cov) = gm.moments_at(1.0, 0.0);
    let d = gm.dim();
    (0..d)
        .map(|j| (cov[j * d + j] + mean[j] * mean[j]).sqrt())
        .fold(0.0, f64::max)
}

impl<F: PredictionField> ReverseSpec<F> {
    pub fn new(model_type: ModelType, field: F) -> Self {
        let start_clock = match model_type.param() {
            Parameterization::Vp => DEFAULT_VP_HORIZON,
            Parameterization::VeKarras => VE_HORIZON_FACTOR,
            Parameterization::RectifiedFlow => DEFAULT_RF_START,
        };
        ReverseSpec {
            model_type,
            field,
            start_clock,
            end_clock: 0.0,
            spacing: StepSpacing::Uniform,
            solver: OdeSolver::Euler,
        }
    }

    pub fn with_start(mut self, start_clock: f64) -> Self {
        self.start_clock = start_clock;
        self
    }

    pub fn with_end(mut self, end_clock: f64) -> Self {
        self.end_clock = end_clock;
        self
    }

    pub fn with_spacing(mut self, spacing: StepSpacing) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn with_solver(mut self, solver: OdeSolver) -> Self {
        self.solver = solver;
        self
    }

    /// VE horizon `Σ = 20 · data_std_bound`.
    pub fn with_ve_horizon_for(self, data: &GaussianMixture) -> Self {
        self.with_start(VE_HORIZON_FACTOR * data_std_bound(data))
    }

    pub fn param(&self) -> Parameterization {
        self.model_type.param()
    }

    /// Forward level at a forward clock value.
    pub fn level_of_clock(&self, clock: f64) -> f64 {
        match self.param() {
            Parameterization::Vp => vp_level(clock),
            _ => clock,
        }
    }

    /// Reverse time `t'` (`σ'`, `s'`) of a forward clock value.
    pub fn reverse_time(&self, clock: f64) -> f64 {
        match self.param() {
            Parameterization::RectifiedFlow => 1.0 - clock,
            _ => self.start_clock - clock,
        }
    }

    /// Forward clock at reverse time.
    pub fn clock_at(&self, reverse_time: f64) -> f64 {
        match self.param() {
            Parameterization::RectifiedFlow => 1.0 - reverse_time,
            _ => self.start_clock - reverse_time,
        }
    }

    /// Standard deviation of the isotropic Gaussian generation starts from.
    pub fn initial_std(&self) -> f64 {
        match self.param() {
            Parameterization::Vp => 1.0,
            Parameterization::VeKarras => self.start_clock,
            Parameterization::RectifiedFlow => self.start_clock,
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.param();
        if !(self.start_clock > self.end_clock) || self.end_clock < 0.0 {
            return Err(Error::arg(format!(
                "reverse window needs start {} > end {} >= 0",
                self.start_clock, self.end_clock
            )));
        }
        p.check_level(self.level_of_clock(self.start_clock))?;
        p.check_level(self.level_of_clock(self.end_clock))?;
        if self.field.dim() > MAX_DIM {
            return Err(Error::arg("field dimension too large"));
        }
        Ok(())
    }

    /// Forward clock values visited by `steps` reverse steps, from start to end.
    pub fn clock_schedule(&self, steps: usize) -> Vec<f64> {
        if steps == 0 {
            return vec![self.start_clock];
        }
        let n = steps as f64;
        match self.spacing {
            StepSpacing::Uniform => (0..=steps)
                .map(|i| {
                    if i == steps {
                        self.end_clock
                    } else {
                        self.start_clock + (self.end_clock - self.start_clock) * i as f64 / n
                    }
                })
                .collect(),
            StepSpacing::Karras { rho } => {
                let end_sigma = self.equivalent_sigma(self.end_clock);
                // polynomial down to KARRAS_SIGMA_MIN, then one step onto the end level
                let (lo_sigma, poly_steps) = if end_sigma < KARRAS_SIGMA_MIN && steps > 1 {
                    (KARRAS_SIGMA_MIN, steps - 1)
                } else {
                    (end_sigma, steps)
                };
                let hi = self.equivalent_sigma(self.start_clock).powf(1.0 / rho);
                let lo = lo_sigma.powf(1.0 / rho);
                let m = poly_steps as f64;
                let mut clocks: Vec<f64> = (0..=poly_steps)
                    .map(|i| {
                        if i == 0 {
                            self.start_clock
                        } else {
                            self.clock_of_sigma((hi + i as f64 / m * (lo - hi)).powf(rho))
                        }
                    })
                    .collect();
                if poly_steps < steps {
                    clocks.push(self.end_clock);
                } else {
                    *clocks.last_mut().unwrap() = self.end_clock;
                }
                clocks
            }
        }
    }

    fn equivalent_sigma(&self, clock: f64) -> f64 {
        match self.param() {
            Parameterization::Vp => clock.exp_m1().sqrt(),
            Parameterization::VeKarras => clock,
            Parameterization::RectifiedFlow => clock / (1.0 - clock),
        }
    }

    fn clock_of_sigma(&self, sigma: f64) -> f64 {
        match self.param() {
            Parameterization::Vp => (sigma * sigma).ln_1p(),
            Parameterization::VeKarras => sigma,
            Parameterization::RectifiedFlow => sigma / (1.0 + sigma),
        }
    }

    /// Forward levels visited by `steps` reverse steps.
    pub fn level_schedule(&self, steps: usize) -> Vec<f64> {
        self.clock_schedule(steps)
            .into_iter()
            .map(|c| self.level_of_clock(c))
            .collect()
    }

    /// Check every level the integrator will evaluate the field at.
    fn check_field_domain(&self, clocks: &[f64]) -> Result<()> {
        let native = self.field.kind().native_param();
        let heun = self.solver == OdeSolver::Heun && !self.model_type.is_stochastic();
        let clean = self.param().clean_level();
        for (i, &c) in clocks.iter().enumerate() {
            if i + 1 == clocks.len() {
                let last = self.level_of_clock(c);
                let used_by_heun = heun && last != clean;
                if !used_by_heun {
                    break;
                }
            }
            let level = self.level_of_clock(c);
            self.param().check_level(level)?;
            let m = point_map(self.param(), level, native)?;
            prediction_map(self.field.kind(), self.model_type.native_kind(), m.level)?;
        }
        Ok(())
    }

    /// Reverse-time drift at forward clock `clock`.
    fn drift_into(&self, x: &[f64], clock: f64, out: &mut [f64]) {
        let d = x.len();
        let level = self.level_of_clock(clock);
        let mut f = [0.0; MAX_DIM];
        eval_as(
            &self.field,
            self.model_type.native_kind(),
            self.param(),
            x,
            level,
            &mut f[..d],
        )
        .expect("field domain checked before integration");
        match self.model_type {
            ModelType::VpSde => (0..d).for_each(|j| out[j] = 0.5 * x[j] + f[j]),
            ModelType::VpOde => (0..d).for_each(|j| out[j] = 0.5 * (x[j] + f[j])),
            ModelType::VeKarras | ModelType::RectifiedFlow => (0..d).for_each(|j| out[j] = -f[j]),
        }
    }

    /// Advance one chain from forward clock `from` to `to < from`.
    fn advance(&self, x: &mut [f64], from: f64, to: f64, rng: &mut RngStream) {
        let d = x.len();
        let h = from - to;
        let mut k1 = [0.0; MAX_DIM];
        self.drift_into(x, from, &mut k1[..d]);
        if self.model_type.is_stochastic() {
            let noise = h.sqrt();
            for j in 0..d {
                x[j] += k1[j] * h + noise * rng.normal();
            }
            return;
        }
        let clean = self.param().clean_level();
        if self.solver == OdeSolver::Heun && self.level_of_clock(to) != clean {
            let mut pred = [0.0; MAX_DIM];
            for j in 0..d {
                pred[j] = x[j] + k1[j] * h;
            }
            let mut k2 = [0.0; MAX_DIM];
            self.drift_into(&pred[..d], to, &mut k2[..d]);
            for j in 0..d {
                x[j] += 0.5 * (k1[j] + k2[j]) * h;
            }
        } else {
            for j in 0..d {
                x[j] += k1[j] * h;
            }
        }
    }
}

/// One reverse step from reverse time `t_rev` to `t_rev + dt_rev`.
pub fn reverse_step<F: PredictionField>(
    spec: &ReverseSpec<F>,
    x: &[f64],
    t_rev: f64,
    dt_rev: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(dt_rev > 0.0) {
        return Err(Error::arg(format!("reverse step must be positive, got {dt_rev}")));
    }
    if x.len() != spec.field.dim() {
        return Err(Error::arg("state dimension does not match the field"));
    }
    let from = spec.clock_at(t_rev);
    let to = spec.clock_at(t_rev + dt_rev);
    let p = spec.param();
    p.check_level(spec.level_of_clock(to)).map_err(|_| {
        Error::domain(
            "reverse clock map",
            format!("step leaves the level domain at clock {to}"),
        )
    })?;
    if to < -1e-12 {
        return Err(Error::domain(
            "reverse clock map",
            format!("step passes the clean level (clock {to})"),
        ));
    }
    spec.check_field_domain(&[from, to.max(0.0)])?;
    let mut out = x.to_vec();
    spec.advance(&mut out, from, to.max(0.0), rng);
    Ok(out)
}

/// Generate `n_chains` samples with `steps` reverse steps, keeping snapshots
/// at the schedule indices in `record` (0 is the initial noise).
pub fn generate_with_snapshots<F: PredictionField>(
    spec: &ReverseSpec<F>,
    n_chains: usize,
    steps: usize,
    rng: &RngStream,
    record: &[usize],
) -> Result<(Ensemble, Vec<Snapshot>)> {
    spec.validate()?;
    let clocks = spec.clock_schedule(steps);
    spec.check_field_domain(&clocks)?;
    if let Some(&bad) = record.iter().find(|&&r| r > steps) {
        return Err(Error::arg(format!("snapshot index {bad} beyond {steps} steps")));
    }
    let d = spec.field.dim();
    let mut ens = Ensemble::zeros(n_chains, d);
    let mut rngs = rng.chains(n_chains);
    let init_std = spec.initial_std();
    par::for_each_chain(ens.as_flat_mut(), d, &mut rngs, |_, x, r| {
        for v in x.iter_mut() {
            *v = init_std * r.normal();
        }
    });
    let mut snaps = Vec::new();
    let mut keep = |i: usize, e: &Ensemble| {
        for _ in record.iter().filter(|&&r| r == i) {
            snaps.push(Snapshot {
                level: spec.level_of_clock(clocks[i]),
                ensemble: e.clone(),
            });
        }
    };
    keep(0, &ens);
    for (i, w) in clocks.windows(2).enumerate() {
        let (from, to) = (w[0], w[1]);
        par::for_each_chain(ens.as_flat_mut(), d, &mut rngs, |_, x, r| spec.advance(x, from, to, r));
        keep(i + 1, &ens);
    }
    Ok((ens, snaps))
}

pub fn generate<F: PredictionField>(
    spec: &ReverseSpec<F>,
    n_chains: usize,
    steps: usize,
    rng: &RngStream,
) -> Result<Ensemble> {
    Ok(generate_with_snapshots(spec, n_chains, steps, rng, &[])?.0)
}

/// Reverse ensemble moments against the exact forward marginal at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityCheckpoint {
    pub reverse_time: f64,
    pub level: f64,
    pub sample_mean: Vec<f64>,
    pub exact_mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub sample_var: Vec<f64>,
    pub exact_var: Vec<f64>,
    pub var_se: Vec<f64>,
}

impl DualityCheckpoint {
    /// Largest |sample − exact| over means and variances, in standard errors.
    pub fn max_z(&self) -> f64 {
        let zm = self
            .sample_mean
            .iter()
            .zip(&self.exact_mean)
            .zip(&self.mean_se)
            .map(|((s, e), se)| (s - e).abs() / se);
        let zv = self
            .sample_var
            .iter()
            .zip(&self.exact_var)
            .zip(&self.var_se)
            .map(|((s, e), se)| (s - e).abs() / se);
        zm.chain(zv).fold(0.0, f64::max)
    }

    /// Every mean and variance within `k_se` standard errors plus `bias`
    /// (absolute for means, relative for variances).
    pub fn within(&self, k_se: f64, bias: f64) -> bool {
        let means = self
            .sample_mean
            .iter()
            .zip(&self.exact_mean)
            .zip(&self.mean_se)
            .all(|((s, e), se)| (s - e).abs() <= k_se * se + bias);
        let vars = self
            .sample_var
            .iter()
            .zip(&self.exact_var)
            .zip(&self.var_se)
            .all(|((s, e), se)| (s - e).abs() <= k_se * se + bias * e);
        means && vars
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub model_type: ModelType,
    pub steps: usize,
    pub chains: usize,
    pub checkpoints: Vec<DualityCheckpoint>,
}

impl DualityReport {
    pub fn max_z(&self) -> f64 {
        self.checkpoints.iter().map(|c| c.max_z()).fold(0.0, f64::max)
    }
}

/// Run the reverse process with `field` and compare its ensemble at `k`
/// evenly spaced checkpoints (plus the start) with the exact perturbed data
/// distribution at the matching forward level.
pub fn duality_check<F: PredictionField>(
    data: &GaussianMixture,
    spec: &ReverseSpec<F>,
    steps: usize,
    n_chains: usize,
    k: usize,
    rng: &RngStream,
) -> Result<DualityReport> {
    if steps == 0 || k == 0 {
        return Err(Error::arg("duality check needs steps > 0 and k > 0"));
    }
    let record: Vec<usize> = (0..=k).map(|i| i * steps / k).collect();
    let (_, snaps) = generate_with_snapshots(spec, n_chains, steps, rng, &record)?;
    let d = data.dim();
    let checkpoints = snaps
        .iter()
        .map(|s| {
            let (a, b) = marginal_coeffs(spec.param(), s.level)?;
            let (exact_mean, exact_cov) = data.moments_at(a, b);
            let summary: MomentSummary = s.ensemble.summary();
            let clock = match spec.param() {
                Parameterization::Vp => -s.level.ln(),
                _ => s.level,
            };
            Ok(DualityCheckpoint {
                reverse_time: spec.reverse_time(clock),
                level: s.level,
                sample_var: (0..d).map(|j| summary.variance(j)).collect(),
                var_se: (0..d).map(|j| summary.variance_se(j)).collect(),
                exact_var: (0..d).map(|j| exact_cov[j * d + j]).collect(),
                mean_se: summary.mean_se.clone(),
                sample_mean: summary.mean,
                exact_mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DualityReport {
        model_type: spec.model_type,
        steps,
        chains: n_chains,
        checkpoints,
    })
}
