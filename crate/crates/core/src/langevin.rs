//! Langevin dynamics `dx = g(τ) s(x) dτ + √(2 g(τ)) dW_τ` and its split into
//! a forward (noising) part and a reverse (denoising) part.
//!
//! For every row the two parts add up to a Langevin dynamics of `p_level`:
//!
//! | row       | forward part               | reverse part               | Langevin (sum)                  |
//! |-----------|----------------------------|----------------------------|---------------------------------|
//! | VP-SDE    | -½x dτ + dW                | (½x + s) dτ + dW           | s dτ + √2 dW                    |
//! | VP-ODE    | -½x dτ + dW                | ½(x + s) dτ                | ½s dτ + dW                      |
//! | VE-Karras | √(2σ) dW                   | σ s dτ                     | σ s dτ + √(2σ) dW               |
//! | RF        | -r/(1-s) dτ + √(2s/(1-s))dW| (s·s_r + r)/(1-s) dτ       | s/(1-s)·s_r dτ + √(2s/(1-s)) dW |
//!
//! `s` is the score in the row's own coordinates at the (fixed) level. The
//! VE and RF coefficients are evaluated at the level itself.

use std::sync::Arc;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::field::ScoreField;
use crate::oracle::MAX_DIM;
use crate::par;
use crate::rng::RngStream;
use crate::types::{ModelType, Parameterization};

pub type TimeScale = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub struct LangevinSpec<S> {
    pub score: S,
    /// Time rescaling `g(τ) > 0`.
    pub g: TimeScale,
    pub param: Parameterization,
    /// Level at which the score is evaluated; the target is `p_level`.
    pub level: f64,
}

impl<S: ScoreField> LangevinSpec<S> {
    pub fn new(score: S, param: Parameterization, level: f64) -> Self {
        LangevinSpec {
            score,
            g: Arc::new(|_| 1.0),
            param,
            level,
        }
    }

    pub fn with_time_scale(mut self, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.g = Arc::new(g);
        self
    }

    /// In-place Euler–Maruyama step.
    pub fn step_into(&self, x: &mut [f64], tau: f64, dtau: f64, rng: &mut RngStream) {
        let d = x.len();
        let g = (self.g)(tau);
        let mut s = [0.0; MAX_DIM];
        self.score.score_into(x, self.level, &mut s[..d]);
        let noise = (2.0 * g * dtau).sqrt();
        for j in 0..d {
            x[j] += g * s[j] * dtau + noise * rng.normal();
        }
    }
}

fn check_step(dtau: f64) -> Result<()> {
    if dtau > 0.0 && dtau.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!("Langevin step must be positive, got {dtau}")))
    }
}

fn check_dim(d: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::arg(format!("state dimension must be in 1..={MAX_DIM}")))
    }
}

/// One step `x + g s dτ + √(2g) ΔW`.
///
/// Euler–Maruyama is accurate while `g·dτ` is small against the inverse
/// curvature of `log p` (for a Gaussian of variance `v`, `g·dτ ≪ v`).
pub fn langevin_step<S: ScoreField>(
    spec: &LangevinSpec<S>,
    x: &[f64],
    tau: f64,
    dtau: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_step(dtau)?;
    check_dim(x.len())?;
    let mut out = x.to_vec();
    spec.step_into(&mut out, tau, dtau, rng);
    Ok(out)
}

/// Moments of an ensemble at one Langevin time.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrace {
    pub tau: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

fn trace_entry(tau: f64, e: &Ensemble) -> MomentTrace {
    let s = e.summary();
    MomentTrace {
        tau,
        variance: (0..e.dim()).map(|j| s.variance(j)).collect(),
        mean: s.mean,
    }
}

/// Run every chain of `init` for `steps` Langevin steps. Chain `i` draws
/// from `rng.child(i)`. A moment trace entry is kept every `record_every` steps.
pub fn run_langevin<S: ScoreField>(
    spec: &LangevinSpec<S>,
    init: &Ensemble,
    steps: usize,
    dtau: f64,
    rng: &RngStream,
    record_every: usize,
) -> Result<(Ensemble, Vec<MomentTrace>)> {
    check_step(dtau)?;
    check_dim(init.dim())?;
    let d = init.dim();
    let mut ens = init.clone();
    let mut rngs = rng.chains(ens.len());
    let mut trace = vec![trace_entry(0.0, &ens)];
    let block = if record_every == 0 { steps.max(1) } else { record_every };
    let mut done = 0;
    while done < steps {
        let n = block.min(steps - done);
        let start = done;
        par::for_each_chain(ens.as_flat_mut(), d, &mut rngs, |_, x, r| {
            for k in 0..n {
                spec.step_into(x, (start + k) as f64 * dtau, dtau, r);
            }
        });
        done += n;
        if record_every != 0 {
            trace.push(trace_entry(done as f64 * dtau, &ens));
        }
    }
    Ok((ens, trace))
}

/// Drift vector and scalar noise coefficient of one part of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDiffusion {
    pub drift: Vec<f64>,
    /// Coefficient multiplying `dW_τ`; the per-step variance is `diffusion² · dτ`.
    pub diffusion: f64,
}

/// One row of the Langevin split, with the score field used by its reverse part.
pub struct SplitStep<S> {
    pub row: ModelType,
    /// Score in the row's parameterization, `s(x, level)`.
    pub score: S,
}

impl<S: ScoreField> SplitStep<S> {
    pub fn new(row: ModelType, score: S) -> Self {
        SplitStep { row, score }
    }

    fn score_at(&self, x: &[f64], level: f64) -> Vec<f64> {
        let mut s = vec![0.0; x.len()];
        self.score.score_into(x, level, &mut s);
        s
    }

    pub fn forward_part(&self, x: &[f64], level: f64) -> DriftDiffusion {
        match self.row {
            ModelType::VpSde | ModelType::VpOde => DriftDiffusion {
                drift: x.iter().map(|v| -0.5 * v).collect(),
                diffusion: 1.0,
            },
            ModelType::VeKarras => DriftDiffusion {
                drift: vec![0.0; x.len()],
                diffusion: (2.0 * level).sqrt(),
            },
            ModelType::RectifiedFlow => DriftDiffusion {
                drift: x.iter().map(|r| -r / (1.0 - level)).collect(),
                diffusion: (2.0 * level / (1.0 - level)).sqrt(),
            },
        }
    }

    pub fn reverse_part(&self, x: &[f64], level: f64) -> DriftDiffusion {
        let s = self.score_at(x, level);
        match self.row {
            ModelType::VpSde => DriftDiffusion {
                drift: x.iter().zip(&s).map(|(x, s)| 0.5 * x + s).collect(),
                diffusion: 1.0,
            },
            ModelType::VpOde => DriftDiffusion {
                drift: x.iter().zip(&s).map(|(x, s)| 0.5 * (x + s)).collect(),
                diffusion: 0.0,
            },
            ModelType::VeKarras => DriftDiffusion {
                drift: s.iter().map(|s| level * s).collect(),
                diffusion: 0.0,
            },
            ModelType::RectifiedFlow => DriftDiffusion {
                drift: x.iter().zip(&s).map(|(r, s)| (level * s + r) / (1.0 - level)).collect(),
                diffusion: 0.0,
            },
        }
    }

    /// The Langevin dynamics the two parts compose to, written directly as
    /// `g·s dτ + √(2g) dW`.
    pub fn langevin_part(&self, x: &[f64], level: f64) -> DriftDiffusion {
        let g = self.time_scale(level);
        let s = self.score_at(x, level);
        DriftDiffusion {
            drift: s.iter().map(|s| g * s).collect(),
            diffusion: (2.0 * g).sqrt(),
        }
    }

    /// `g` of the row's Langevin dynamics.
    pub fn time_scale(&self, level: f64) -> f64 {
        match self.row {
            ModelType::VpSde => 1.0,
            ModelType::VpOde => 0.5,
            ModelType::VeKarras => level,
            ModelType::RectifiedFlow => level / (1.0 - level),
        }
    }

    fn substep(part: &DriftDiffusion, x: &mut [f64], dtau: f64, rng: &mut RngStream) {
        let noise = part.diffusion * dtau.sqrt();
        for (v, f) in x.iter_mut().zip(&part.drift) {
            *v += f * dtau;
            if part.diffusion != 0.0 {
                *v += noise * rng.normal();
            }
        }
    }

    fn step_into(&self, x: &mut [f64], level: f64, dtau: f64, rng: &mut RngStream) {
        let fwd = self.forward_part(x, level);
        Self::substep(&fwd, x, dtau, rng);
        let rev = self.reverse_part(x, level);
        Self::substep(&rev, x, dtau, rng);
    }
}

/// Forward substep then reverse substep at a fixed level, each with its own
/// Brownian increment. Returns the state after each substep.
pub fn split_step<S: ScoreField>(
    step: &SplitStep<S>,
    x: &[f64],
    level: f64,
    dtau: f64,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_step(dtau)?;
    check_dim(x.len())?;
    step.row.param().check_level(level)?;
    let mut after_forward = x.to_vec();
    let fwd = step.forward_part(x, level);
    SplitStep::<S>::substep(&fwd, &mut after_forward, dtau, rng);
    let mut after_reverse = after_forward.clone();
    let rev = step.reverse_part(&after_forward, level);
    SplitStep::<S>::substep(&rev, &mut after_reverse, dtau, rng);
    Ok((after_forward, after_reverse))
}

/// Apply `steps` composed split steps to every chain of `init`.
pub fn run_split<S: ScoreField>(
    step: &SplitStep<S>,
    init: &Ensemble,
    level: f64,
    steps: usize,
    dtau: f64,
    rng: &RngStream,
) -> Result<Ensemble> {
    check_step(dtau)?;
    check_dim(init.dim())?;
    step.row.param().check_level(level)?;
    let d = init.dim();
    let mut ens = init.clone();
    let mut rngs = rng.chains(ens.len());
    par::for_each_chain(ens.as_flat_mut(), d, &mut rngs, |_, x, r| {
        for _ in 0..steps {
            step.step_into(x, level, dtau, r);
        }
    });
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MixtureScore;
    use crate::oracle::GaussianMixture;

    fn std_normal_score(x: &[f64], _: f64, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v;
        }
    }

    #[test]
    fn zero_score_single_step_is_pure_noise() {
        let spec = LangevinSpec::new(std_normal_score, Parameterization::Vp, 1.0);
        let mut r1 = RngStream::new(4, 4);
        let mut r2 = r1.clone();
        let y = langevin_step(&spec, &[0.0, 0.0], 0.0, 0.01, &mut r1).unwrap();
        let expect: Vec<f64> = (0..2).map(|_| (2.0f64 * 0.01).sqrt() * r2.normal()).collect();
        assert_eq!(y, expect);
    }

    #[test]
    fn brownian_variance_grows_as_two_tau() {
        let zero = |_: &[f64], _: f64, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0);
        let spec = LangevinSpec::new(zero, Parameterization::Vp, 1.0);
        let init = Ensemble::zeros(50_000, 1);
        let (e, _) = run_langevin(&spec, &init, 100, 0.01, &RngStream::new(1, 0), 0).unwrap();
        let s = e.summary();
        assert!(
            (s.variance(0) - 2.0).abs() < 4.0 * s.variance_se(0),
            "{}",
            s.variance(0)
        );
    }

    #[test]
    fn rejects_nonpositive_step() {
        let spec = LangevinSpec::new(std_normal_score, Parameterization::Vp, 1.0);
        assert!(langevin_step(&spec, &[0.0], 0.0, 0.0, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn time_scale_only_changes_clock() {
        // g = 2 over τ = 2.5 must look like g = 1 over τ = 5
        let init = Ensemble::from_flat(1, vec![3.0; 20_000]);
        let rng = RngStream::new(8, 0);
        let spec = LangevinSpec::new(std_normal_score, Parameterization::Vp, 1.0).with_time_scale(|_| 2.0);
        let (e, _) = run_langevin(&spec, &init, 2500, 1e-3, &rng, 0).unwrap();
        let s = e.summary();
        let expect_mean = 3.0 * (-5.0f64).exp();
        assert!((s.mean[0] - expect_mean).abs() < 4.0 * s.mean_se[0] + 0.01);
        assert!((s.variance(0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn vp_sde_drifts_add_to_langevin_for_standard_normal() {
        let step = SplitStep::new(ModelType::VpSde, std_normal_score);
        let x = [0.7];
        let f = step.forward_part(&x, 0.5);
        let r = step.reverse_part(&x, 0.5);
        assert!((f.drift[0] + r.drift[0] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn vp_ode_reverse_part_is_deterministic() {
        let step = SplitStep::new(ModelType::VpOde, std_normal_score);
        let r = step.reverse_part(&[1.0], 0.5);
        assert_eq!(r.diffusion, 0.0);
        let f = step.forward_part(&[1.0], 0.5);
        let l = step.langevin_part(&[1.0], 0.5);
        assert!((f.diffusion.powi(2) + r.diffusion.powi(2) - l.diffusion.powi(2)).abs() < 1e-15);
        assert!((l.diffusion.powi(2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ve_parts_are_pure_noise_and_pure_drift() {
        let gm = GaussianMixture::symmetric_1d(&[-1.0, 1.0], 0.2).unwrap();
        let step = SplitStep::new(
            ModelType::VeKarras,
            MixtureScore {
                mixture: gm,
                param: Parameterization::VeKarras,
            },
        );
        let (x, sigma) = ([0.4], 0.8);
        let f = step.forward_part(&x, sigma);
        let r = step.reverse_part(&x, sigma);
        let l = step.langevin_part(&x, sigma);
        assert_eq!(f.drift, vec![0.0]);
        assert_eq!(r.diffusion, 0.0);
        assert!((f.drift[0] + r.drift[0] - l.drift[0]).abs() < 1e-15);
        assert!((f.diffusion.powi(2) - l.diffusion.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn split_step_returns_both_substeps() {
        let step = SplitStep::new(ModelType::VpOde, std_normal_score);
        let mut rng = RngStream::new(0, 1);
        let (a, b) = split_step(&step, &[0.5], 0.5, 0.1, &mut rng).unwrap();
        // reverse part is deterministic: b = a + ½(a - a)·dτ = a for the N(0,1) score
        assert_eq!(a, b);
    }
}
