//! Forward noising: closed-form marginals and Euler–Maruyama simulation of
//! the forward SDEs.
//!
//! | param | level | marginal                     | SDE (in its clock)                          |
//! |-------|-------|------------------------------|---------------------------------------------|
//! | VP    | α     | √α·x0 + √(1-α)·ε             | dx = -½x dt + dW_t,  t = -ln α              |
//! | VE    | σ     | z0 + σ·ε                     | dz = √(2σ) dW_σ                             |
//! | RF    | s     | (1-s)·r0 + s·ε               | dr = -r/(1-s) ds + √(2s/(1-s)) dW_s         |
//!
//! VE and RF integrate directly in their level; VP integrates in `t`. This
//! module is the only place that maps levels to SDE clocks.

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::RngStream;
use crate::types::{vp_clock, vp_level, ParamPoint, Parameterization};

/// Largest RF level an SDE grid may reach; the drift -r/(1-s) stiffens as s → 1.
pub const RF_SDE_LEVEL_MAX: f64 = 1.0 - 1e-3;

/// Default number of steps for level grids.
pub const DEFAULT_GRID_STEPS: usize = 200;

/// `(a, b)` with `state_level = a·state_0 + b·ε`.
pub fn marginal_coeffs(param: Parameterization, level: f64) -> Result<(f64, f64)> {
    param.check_level(level)?;
    Ok(match param {
        Parameterization::Vp => (level.sqrt(), (1.0 - level).sqrt()),
        Parameterization::VeKarras => (1.0, level),
        Parameterization::RectifiedFlow => (1.0 - level, level),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardSpec {
    pub param: Parameterization,
}

impl ForwardSpec {
    pub fn new(param: Parameterization) -> Self {
        ForwardSpec { param }
    }

    pub fn marginal_coeffs(&self, level: f64) -> Result<(f64, f64)> {
        marginal_coeffs(self.param, level)
    }

    /// SDE time of a level.
    pub fn clock(&self, level: f64) -> f64 {
        match self.param {
            Parameterization::Vp => vp_clock(level),
            _ => level,
        }
    }

    pub fn level_at(&self, clock: f64) -> f64 {
        match self.param {
            Parameterization::Vp => vp_level(clock),
            _ => clock,
        }
    }

    /// The drift is linear in the state for all three processes: `f = c·x`.
    pub fn drift_rate(&self, level: f64) -> f64 {
        match self.param {
            Parameterization::Vp => -0.5,
            Parameterization::VeKarras => 0.0,
            Parameterization::RectifiedFlow => -1.0 / (1.0 - level),
        }
    }

    pub fn drift(&self, state: &[f64], level: f64) -> Vec<f64> {
        let c = self.drift_rate(level);
        state.iter().map(|x| c * x).collect()
    }

    /// `g` at a level, per unit of SDE clock.
    pub fn diffusion(&self, level: f64) -> f64 {
        match self.param {
            Parameterization::Vp => 1.0,
            Parameterization::VeKarras => (2.0 * level).sqrt(),
            Parameterization::RectifiedFlow => (2.0 * level / (1.0 - level)).sqrt(),
        }
    }

    /// Levels uniformly spaced in the native level variable from the clean
    /// level to `end` (inclusive), `steps + 1` entries.
    pub fn uniform_level_grid(&self, end: f64, steps: usize) -> Vec<f64> {
        let start = self.param.clean_level();
        (0..=steps)
            .map(|i| start + (end - start) * i as f64 / steps.max(1) as f64)
            .take(if steps == 0 { 1 } else { steps + 1 })
            .collect()
    }

    /// Levels uniformly spaced in the SDE clock from 0 to `end_clock`.
    pub fn uniform_clock_grid(&self, end_clock: f64, steps: usize) -> Vec<f64> {
        if steps == 0 {
            return vec![self.param.clean_level()];
        }
        (0..=steps)
            .map(|i| self.level_at(end_clock * i as f64 / steps as f64))
            .collect()
    }

    /// Validate a level grid and return its clock values.
    fn grid_clocks(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let first = *grid.first().ok_or_else(|| Error::arg("level grid is empty"))?;
        if first != self.param.clean_level() {
            return Err(Error::arg(format!(
                "level grid must start at the clean level {}, got {first}",
                self.param.clean_level()
            )));
        }
        for &l in grid {
            self.param.check_level(l)?;
            if self.param == Parameterization::RectifiedFlow && l > RF_SDE_LEVEL_MAX {
                return Err(Error::domain(
                    "RF forward SDE drift -r/(1-s)",
                    format!("grid level {l} beyond the SDE clamp 1 - 1e-3"),
                ));
            }
        }
        let clocks: Vec<f64> = grid.iter().map(|&l| self.clock(l)).collect();
        if clocks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::arg("level grid must add noise strictly monotonically"));
        }
        Ok(clocks)
    }

    fn em_step(&self, x: &mut [f64], level: f64, dclock: f64, rng: &mut RngStream) {
        let c = self.drift_rate(level);
        let g = self.diffusion(level) * dclock.sqrt();
        for v in x.iter_mut() {
            *v += c * *v * dclock + g * rng.normal();
        }
    }
}

pub fn sample_closed_form(spec: &ForwardSpec, x0: &[f64], level: f64, rng: &mut RngStream) -> Result<ParamPoint> {
    let (a, b) = spec.marginal_coeffs(level)?;
    let state = x0.iter().map(|x| a * x + b * rng.normal()).collect();
    ParamPoint::new(spec.param, state, level)
}

/// Euler–Maruyama path of the forward SDE through `level_grid`.
pub fn integrate_forward_sde(
    spec: &ForwardSpec,
    x0: &[f64],
    level_grid: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<ParamPoint>> {
    let clocks = spec.grid_clocks(level_grid)?;
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(level_grid.len());
    out.push(ParamPoint::new(spec.param, x.clone(), level_grid[0])?);
    for (i, w) in clocks.windows(2).enumerate() {
        spec.em_step(&mut x, level_grid[i], w[1] - w[0], rng);
        out.push(ParamPoint::new(spec.param, x.clone(), level_grid[i + 1])?);
    }
    Ok(out)
}

/// An ensemble recorded at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub level: f64,
    pub ensemble: Ensemble,
}

/// Run `n_chains` independent forward paths from the same `x0`. Chain `i`
/// uses `rng.child(i)`, so results do not depend on the worker count.
/// Snapshots are kept at the grid indices listed in `record`.
pub fn integrate_forward_ensemble(
    spec: &ForwardSpec,
    x0: &[f64],
    level_grid: &[f64],
    n_chains: usize,
    rng: &RngStream,
    record: &[usize],
) -> Result<Vec<Snapshot>> {
    let clocks = spec.grid_clocks(level_grid)?;
    if let Some(&bad) = record.iter().find(|&&r| r >= level_grid.len()) {
        return Err(Error::arg(format!("record index {bad} beyond the grid")));
    }
    let d = x0.len();
    let paths = par::map_indexed(n_chains, |i| {
        let mut chain_rng = rng.child(i as u64);
        let mut x = x0.to_vec();
        let mut kept = vec![0.0; record.len() * d];
        let mut store = |step: usize, x: &[f64]| {
            for (slot, _) in record.iter().enumerate().filter(|(_, &r)| r == step) {
                kept[slot * d..(slot + 1) * d].copy_from_slice(x);
            }
        };
        store(0, &x);
        for (step, w) in clocks.windows(2).enumerate() {
            spec.em_step(&mut x, level_grid[step], w[1] - w[0], &mut chain_rng);
            store(step + 1, &x);
        }
        kept
    });
    Ok(record
        .iter()
        .enumerate()
        .map(|(slot, &r)| {
            let data = paths
                .iter()
                .flat_map(|p| p[slot * d..(slot + 1) * d].iter().copied())
                .collect();
            Snapshot {
                level: level_grid[r],
                ensemble: Ensemble::from_flat(d, data),
            }
        })
        .collect())
}

/// `n` closed-form draws at `level` from the same `x0`; draw `i` uses `rng.child(i)`.
pub fn sample_closed_form_ensemble(
    spec: &ForwardSpec,
    x0: &[f64],
    level: f64,
    n: usize,
    rng: &RngStream,
) -> Result<Ensemble> {
    let (a, b) = spec.marginal_coeffs(level)?;
    let d = x0.len();
    let mut e = Ensemble::zeros(n, d);
    let mut rngs = rng.chains(n);
    par::for_each_chain(e.as_flat_mut(), d, &mut rngs, |_, x, r| {
        for (v, x0j) in x.iter_mut().zip(x0) {
            *v = a * x0j + b * r.normal();
        }
    });
    Ok(e)
}
