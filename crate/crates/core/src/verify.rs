//! Runtime invariant suites behind `ldiff verify`.
//!
//! Each suite re-runs its module's properties at desk scale and reports one
//! [`Check`] per property. Statistical checks use 4 standard errors plus the
//! discretization allowance named in the check's detail string.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convert::{convert_point, convert_prediction};
use crate::ensemble::{Ensemble, MomentSummary};
use crate::error::{Error, Result};
use crate::field::{ConvertedField, MixtureScore, OracleField, PredictionField};
use crate::fokker_planck::{fp_step, kl_trace, CellGrid, FPOperator, GridDensity, KlTrace, TimeScheme};
use crate::forward::{integrate_forward_ensemble, marginal_coeffs, sample_closed_form, ForwardSpec};
use crate::langevin::{run_langevin, run_split, LangevinSpec, SplitStep};
use crate::oracle::{perturb, Covariance, GaussianMixture, MixtureSpec};
use crate::reverse::{duality_check, generate, reverse_step, OdeSolver, ReverseSpec, StepSpacing};
use crate::rng::{draw_increment, RngStream};
use crate::train::{dsm_loss, dsm_terms, sm_terms, train, DsmBatch, LinearModel, LossSpec, MlpModel, ScoreModel};
use crate::train::{TrainConfig, WeightMode};
use crate::types::{ModelType, ParamPoint, Parameterization, Prediction, PredictionKind, RF_LEVEL_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Core,
    Conversions,
    Forward,
    Oracle,
    Langevin,
    Reverse,
    Train,
    FokkerPlanck,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Core,
        Suite::Conversions,
        Suite::Forward,
        Suite::Oracle,
        Suite::Langevin,
        Suite::Reverse,
        Suite::Train,
        Suite::FokkerPlanck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Core => "core",
            Suite::Conversions => "conversions",
            Suite::Forward => "forward",
            Suite::Oracle => "oracle",
            Suite::Langevin => "langevin",
            Suite::Reverse => "reverse",
            Suite::Train => "train",
            Suite::FokkerPlanck => "fokker-planck",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => return Ok(Suite::Langevin),
            "fp" => return Ok(Suite::FokkerPlanck),
            _ => {}
        }
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Chains per Monte-Carlo ensemble.
    pub chains: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            chains: 20_000,
        }
    }
}

pub fn run_suite(suite: Suite, cfg: &VerifyConfig) -> Vec<Check> {
    let mut out = Checks {
        suite,
        list: Vec::new(),
    };
    match suite {
        Suite::Core => core_suite(&mut out, cfg),
        Suite::Conversions => conversions_suite(&mut out, cfg),
        Suite::Forward => forward_suite(&mut out, cfg),
        Suite::Oracle => oracle_suite(&mut out, cfg),
        Suite::Langevin => langevin_suite(&mut out, cfg),
        Suite::Reverse => reverse_suite(&mut out, cfg),
        Suite::Train => train_suite(&mut out, cfg),
        Suite::FokkerPlanck => fp_suite(&mut out),
    }
    out.list
}

pub fn run_all(cfg: &VerifyConfig) -> Vec<Check> {
    Suite::ALL.into_iter().flat_map(|s| run_suite(s, cfg)).collect()
}

/// `(passed, detail)`; an `Err` is recorded as a failure carrying the error.
type Outcome = Result<(bool, String)>;

struct Checks {
    suite: Suite,
    list: Vec<Check>,
}

impl Checks {
    fn run(&mut self, name: impl Into<String>, f: impl FnOnce() -> Outcome) {
        let (passed, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        self.list.push(Check {
            suite: self.suite,
            name: name.into(),
            passed,
            detail,
        });
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `|got - want| <= 4 se + bias`, with a z-like figure for the detail string.
fn within(got: f64, want: f64, se: f64, bias: f64) -> (bool, f64) {
    let dev = (got - want).abs();
    (dev <= 4.0 * se + bias, dev / (se + bias).max(1e-300))
}

fn random_level(p: Parameterization, rng: &mut RngStream) -> f64 {
    match p {
        Parameterization::Vp => 1e-6 + (1.0 - 1e-6) * rng.uniform(),
        Parameterization::VeKarras => 50.0 * rng.uniform(),
        Parameterization::RectifiedFlow => RF_LEVEL_MAX * rng.uniform(),
    }
}

fn random_point(p: Parameterization, rng: &mut RngStream) -> Result<ParamPoint> {
    let d = 1 + (rng.uniform() * 3.0) as usize;
    let state = (0..d).map(|_| 4.0 * rng.normal()).collect();
    ParamPoint::new(p, state, random_level(p, rng))
}

fn skewed_mixture() -> GaussianMixture {
    GaussianMixture::new(MixtureSpec {
        weights: vec![0.3, 0.7],
        means: vec![vec![-1.0], vec![1.5]],
        covariances: vec![Covariance::Isotropic(0.3), Covariance::Isotropic(0.2)],
    })
    .expect("valid mixture")
}

// ---------------------------------------------------------------- core

fn core_suite(c: &mut Checks, cfg: &VerifyConfig) {
    c.run("param point json round trip is bit-exact", || {
        let mut rng = RngStream::new(cfg.seed, 100);
        for _ in 0..1000 {
            let p = random_point(Parameterization::ALL[(rng.uniform() * 3.0) as usize], &mut rng)?;
            let back: ParamPoint = serde_json::from_str(&serde_json::to_string(&p)?)?;
            let same = back.param == p.param
                && back.level.to_bits() == p.level.to_bits()
                && back.state.iter().zip(&p.state).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Ok((false, format!("{p:?} came back as {back:?}")));
            }
        }
        Ok((true, "1000 points".into()))
    });
    c.run("brownian increment has mean 0 and variance dt", || {
        let (dt, n) = (0.01, 200_000);
        let inc = draw_increment(&mut RngStream::new(cfg.seed, 101), dt, n)?;
        let e = Ensemble::from_flat(1, inc.noise);
        let s = e.summary();
        let (ok_m, zm) = within(s.mean[0], 0.0, s.mean_se[0], 0.0);
        let (ok_v, zv) = within(s.variance(0), dt, s.variance_se(0), 0.0);
        Ok((ok_m && ok_v, format!("mean z {zm:.2}, variance z {zv:.2}")))
    });
}

// ---------------------------------------------------------------- conversions

fn conversions_suite(c: &mut Checks, cfg: &VerifyConfig) {
    c.run("point round trips, 1e4 per ordered pair, 1e-12", || {
        let mut rng = RngStream::new(cfg.seed, 200);
        let mut worst: f64 = 0.0;
        for a in Parameterization::ALL {
            for b in Parameterization::ALL {
                if a == b {
                    continue;
                }
                for _ in 0..10_000 {
                    let p = random_point(a, &mut rng)?;
                    let back = convert_point(&convert_point(&p, b)?, a)?;
                    worst = worst
                        .max(max_abs_diff(&back.state, &p.state))
                        .max((back.level - p.level).abs());
                }
            }
        }
        Ok((worst <= 1e-12, format!("worst error {worst:.2e}")))
    });
    c.run("prediction triangles commute, 1e-12", || {
        let gm = GaussianMixture::isotropic(vec![0.3, -0.2], 0.5)?;
        let mut rng = RngStream::new(cfg.seed, 201);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let alpha = 0.01 + 0.98 * rng.uniform();
            let vp = ParamPoint::new(
                Parameterization::Vp,
                vec![2.0 * rng.normal(), 2.0 * rng.normal()],
                alpha,
            )?;
            for a in PredictionKind::ALL {
                let at = convert_point(&vp, a.native_param())?;
                let mut v = vec![0.0; 2];
                OracleField::new(gm.clone(), a).eval_into(&at.state, at.level, &mut v);
                let pred = Prediction::new(a, v, at)?;
                for b in PredictionKind::ALL {
                    for k in PredictionKind::ALL {
                        let direct = convert_prediction(&pred, b)?;
                        let via = convert_prediction(&convert_prediction(&pred, k)?, b)?;
                        let scale = 1.0 + direct.value.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                        worst = worst.max(max_abs_diff(&direct.value, &via.value) / scale);
                    }
                }
            }
        }
        Ok((worst <= 1e-12, format!("worst relative error {worst:.2e}")))
    });
    c.run("vp score of a gaussian converts to the ve noise, 1e-10", || {
        let gm = GaussianMixture::isotropic(vec![1.0], 0.5)?;
        let mut rng = RngStream::new(cfg.seed, 202);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let alpha = 0.01 + 0.98 * rng.uniform();
            let vp = ParamPoint::new(Parameterization::Vp, vec![2.0 * rng.normal()], alpha)?;
            let s = perturb(&gm, Parameterization::Vp, alpha)?.score(&vp.state);
            let eps = convert_prediction(&Prediction::new(PredictionKind::Score, s, vp)?, PredictionKind::Noise)?;
            let sigma = eps.at.level;
            let sz = perturb(&gm, Parameterization::VeKarras, sigma)?.score(&eps.at.state);
            worst = worst.max((eps.value[0] + sigma * sz[0]).abs());
        }
        Ok((worst <= 1e-10, format!("worst error {worst:.2e}")))
    });
    c.run("ve sigma 1, z 2 maps to vp alpha 0.5, x sqrt 2", || {
        let p = convert_point(
            &ParamPoint::new(Parameterization::VeKarras, vec![2.0], 1.0)?,
            Parameterization::Vp,
        )?;
        let ok = rel_close(p.level, 0.5, 1e-15) && rel_close(p.state[0], 2f64.sqrt(), 1e-15);
        Ok((ok, format!("alpha {}, x {}", p.level, p.state[0])))
    });
}

// ---------------------------------------------------------------- forward

const X0: [f64; 2] = [1.0, -0.5];

fn forward_grid(p: Parameterization) -> Vec<f64> {
    let steps = 250;
    (0..=steps)
        .map(|i| {
            let u = i as f64 / steps as f64;
            match p {
                Parameterization::Vp => (-2.5 * u).exp(),
                Parameterization::VeKarras => 5.0 * u,
                Parameterization::RectifiedFlow => 0.95 * u,
            }
        })
        .collect()
}

/// Mean factor and variance of the Euler–Maruyama chain from a point mass,
/// propagated exactly through the linear recursion.
fn em_moments(p: Parameterization, levels: &[f64], upto: usize) -> (f64, f64) {
    let (mut m, mut v) = (1.0, 0.0);
    for k in 0..upto {
        let (l, next) = (levels[k], levels[k + 1]);
        let (c, g2, dt) = match p {
            Parameterization::Vp => (-0.5, 1.0, l.ln() - next.ln()),
            Parameterization::VeKarras => (0.0, 2.0 * l, next - l),
            Parameterization::RectifiedFlow => (-1.0 / (1.0 - l), 2.0 * l / (1.0 - l), next - l),
        };
        let f = 1.0 + c * dt;
        m *= f;
        v = f * f * v + g2 * dt;
    }
    (m, v)
}

/// Mean and covariance within 4 SE plus the given biases; returns the worst ratio.
fn moments_match(s: &MomentSummary, mean: &[f64], var: f64, bias_mean: &[f64], bias_var: f64) -> (bool, f64) {
    let d = mean.len();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for j in 0..d {
        let (o, z) = within(s.mean[j], mean[j], s.mean_se[j], bias_mean[j]);
        ok &= o;
        worst = worst.max(z);
        for k in 0..d {
            let (want, bias) = if j == k { (var, bias_var) } else { (0.0, 0.0) };
            let (o, z) = within(s.covariance[j * d + k], want, s.covariance_se[j * d + k], bias);
            ok &= o;
            worst = worst.max(z);
        }
    }
    (ok, worst)
}

fn forward_suite(c: &mut Checks, cfg: &VerifyConfig) {
    for p in Parameterization::ALL {
        c.run(
            format!("{p}: euler-maruyama matches closed-form marginals at 5 levels"),
            || {
                let levels = forward_grid(p);
                let idx = [25, 75, 125, 175, 250];
                let rng = RngStream::new(cfg.seed, 300 + p as u64);
                let snaps = integrate_forward_ensemble(&ForwardSpec::new(p), &X0, &levels, cfg.chains, &rng, &idx)?;
                let mut ok = true;
                let mut worst: f64 = 0.0;
                for (snap, &i) in snaps.iter().zip(&idx) {
                    let (a, b) = marginal_coeffs(p, levels[i])?;
                    let (em_m, em_v) = em_moments(p, &levels, i);
                    let mean: Vec<f64> = X0.iter().map(|x| a * x).collect();
                    let bias: Vec<f64> = X0.iter().map(|x| ((em_m - a) * x).abs()).collect();
                    let (o, z) = moments_match(&snap.ensemble.summary(), &mean, b * b, &bias, (em_v - b * b).abs());
                    ok &= o;
                    worst = worst.max(z);
                }
                Ok((ok, format!("worst deviation / (se + bias) {worst:.2}")))
            },
        );
    }
    c.run("point-mass marginals stay gaussian", || {
        let n = cfg.chains;
        let (skew_se, kurt_se) = ((6.0 / n as f64).sqrt(), (24.0 / n as f64).sqrt());
        let mut worst: f64 = 0.0;
        for p in Parameterization::ALL {
            let levels = forward_grid(p);
            let rng = RngStream::new(cfg.seed, 310 + p as u64);
            let snaps = integrate_forward_ensemble(&ForwardSpec::new(p), &X0, &levels, n, &rng, &[125, 250])?;
            for snap in &snaps {
                let s = snap.ensemble.summary();
                for j in 0..2 {
                    worst = worst
                        .max(s.skewness[j].abs() / skew_se)
                        .max(s.excess_kurtosis[j].abs() / kurt_se);
                }
            }
        }
        Ok((worst <= 4.0, format!("worst |skew|, |kurtosis| in SE {worst:.2}")))
    });
}

// ---------------------------------------------------------------- oracle

fn oracle_suite(c: &mut Checks, cfg: &VerifyConfig) {
    let gm = GaussianMixture::new(MixtureSpec {
        weights: vec![0.4, 0.6],
        means: vec![vec![-1.0, 0.5], vec![1.0, -0.5]],
        covariances: vec![Covariance::Isotropic(0.3), Covariance::Isotropic(0.2)],
    })
    .expect("valid mixture");
    c.run("score matches finite differences of the log density, 1e-6", || {
        let mut rng = RngStream::new(cfg.seed, 400);
        let mut worst: f64 = 0.0;
        for p in Parameterization::ALL {
            for _ in 0..1000 {
                let level = match p {
                    Parameterization::Vp => 0.02 + 0.96 * rng.uniform(),
                    Parameterization::VeKarras => 0.05 + 5.0 * rng.uniform(),
                    Parameterization::RectifiedFlow => 0.02 + 0.96 * rng.uniform(),
                };
                let pm = perturb(&gm, p, level)?;
                let x = [1.5 * rng.normal(), 1.5 * rng.normal()];
                let s = pm.score(&x);
                let h = 1e-5;
                for j in 0..2 {
                    let (mut up, mut down) = (x, x);
                    up[j] += h;
                    down[j] -= h;
                    let fd = (pm.log_density(&up) - pm.log_density(&down)) / (2.0 * h);
                    worst = worst.max((fd - s[j]).abs() / s[j].abs().max(1.0));
                }
            }
        }
        Ok((worst <= 1e-6, format!("worst relative error {worst:.2e}")))
    });
    c.run(
        "closed-form pushforward of mixture samples has the perturbed moments",
        || {
            let mut ok = true;
            let mut worst: f64 = 0.0;
            for (p, level) in [
                (Parameterization::Vp, 0.4),
                (Parameterization::VeKarras, 1.2),
                (Parameterization::RectifiedFlow, 0.3),
            ] {
                let spec = ForwardSpec::new(p);
                let mut rng = RngStream::new(cfg.seed, 401 + p as u64);
                let mut data = Vec::with_capacity(2 * cfg.chains);
                let mut x0 = [0.0; 2];
                for _ in 0..cfg.chains {
                    gm.sample_into(&mut rng, &mut x0);
                    data.extend(sample_closed_form(&spec, &x0, level, &mut rng)?.state);
                }
                let s = Ensemble::from_flat(2, data).summary();
                let (mean, cov) = perturb(&gm, p, level)?.moments();
                for j in 0..2 {
                    let (o, z) = within(s.mean[j], mean[j], s.mean_se[j], 0.0);
                    ok &= o;
                    worst = worst.max(z);
                }
                for jk in 0..4 {
                    let (o, z) = within(s.covariance[jk], cov[jk], s.covariance_se[jk], 0.0);
                    ok &= o;
                    worst = worst.max(z);
                }
            }
            Ok((ok, format!("worst deviation in SE {worst:.2}")))
        },
    );
    c.run("native oracle kinds cohere under conversion, 1e-10", || {
        let fields: Vec<OracleField> = PredictionKind::ALL
            .iter()
            .map(|&k| OracleField::new(gm.clone(), k))
            .collect();
        let mut rng = RngStream::new(cfg.seed, 404);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let alpha = 0.02 + 0.96 * rng.uniform();
            let vp = ParamPoint::new(
                Parameterization::Vp,
                vec![2.0 * rng.normal(), 2.0 * rng.normal()],
                alpha,
            )?;
            for src in &fields {
                let at = convert_point(&vp, src.kind.native_param())?;
                let mut v = vec![0.0; 2];
                src.eval_into(&at.state, at.level, &mut v);
                let pred = Prediction::new(src.kind, v, at)?;
                for dst in &fields {
                    let conv = convert_prediction(&pred, dst.kind)?;
                    let mut native = vec![0.0; 2];
                    dst.eval_into(&conv.at.state, conv.at.level, &mut native);
                    let scale = 1.0 + native.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    worst = worst.max(max_abs_diff(&conv.value, &native) / scale);
                }
            }
        }
        Ok((worst <= 1e-10, format!("worst relative error {worst:.2e}")))
    });
}

// ---------------------------------------------------------------- langevin

/// Mean, variance and third central moment of the skewed mixture under `a x0 + b ε`.
fn skewed_moments(a: f64, b: f64) -> (f64, f64, f64) {
    let (w, mu, v) = ([0.3, 0.7], [-1.0, 1.5], [0.3, 0.2]);
    let m: f64 = (0..2).map(|i| w[i] * a * mu[i]).sum();
    let var: f64 = (0..2)
        .map(|i| w[i] * ((a * mu[i] - m).powi(2) + a * a * v[i] + b * b))
        .sum();
    let third: f64 = (0..2)
        .map(|i| {
            let d = a * mu[i] - m;
            w[i] * (d.powi(3) + 3.0 * d * (a * a * v[i] + b * b))
        })
        .sum();
    (m, var, third)
}

fn row_time_scale(row: ModelType, level: f64) -> f64 {
    match row {
        ModelType::VpSde => 1.0,
        ModelType::VpOde => 0.5,
        ModelType::VeKarras => level,
        ModelType::RectifiedFlow => level / (1.0 - level),
    }
}

fn langevin_suite(c: &mut Checks, cfg: &VerifyConfig) {
    c.run("standard normal target: mean ±0.05, variance ±10%", || {
        let spec = LangevinSpec::new(
            |x: &[f64], _: f64, out: &mut [f64]| out[0] = -x[0],
            Parameterization::Vp,
            1.0,
        );
        let mut rng = RngStream::new(cfg.seed, 500);
        let init = Ensemble::from_flat(1, (0..10_000).map(|_| 5.0 + rng.normal()).collect());
        let (end, _) = run_langevin(&spec, &init, 10_000, 1e-3, &RngStream::new(cfg.seed, 501), 0)?;
        let s = end.summary();
        let ok = s.mean[0].abs() <= 0.05 && (s.variance(0) - 1.0).abs() <= 0.1;
        Ok((ok, format!("mean {:.4}, variance {:.4}", s.mean[0], s.variance(0))))
    });
    c.run("bimodal target: mode mass 50% ± 2%", || {
        let gm = GaussianMixture::symmetric_1d(&[-1.0, 1.0], 0.25)?;
        let score = MixtureScore {
            mixture: gm,
            param: Parameterization::Vp,
        };
        let spec = LangevinSpec::new(score, Parameterization::Vp, 1.0);
        let mut rng = RngStream::new(cfg.seed, 502);
        let init = Ensemble::from_flat(1, (0..10_000).map(|_| 1.0 + 0.5 * rng.normal()).collect());
        let (end, _) = run_langevin(&spec, &init, 20_000, 5e-3, &RngStream::new(cfg.seed, 503), 0)?;
        let s = end.summary();
        let right = end.fraction(0, |x| x > 0.0);
        let ok = (right - 0.5).abs() <= 0.02 && s.mean[0].abs() <= 0.05 && (s.variance(0) / 1.25 - 1.0).abs() <= 0.1;
        Ok((
            ok,
            format!(
                "right mass {right:.4}, mean {:.4}, variance {:.4}",
                s.mean[0],
                s.variance(0)
            ),
        ))
    });
    let gm = skewed_mixture();
    for row in ModelType::ALL {
        c.run(format!("{row}: split drift and variance add up, 1e-12"), || {
            let step = SplitStep::new(
                row,
                MixtureScore {
                    mixture: gm.clone(),
                    param: row.param(),
                },
            );
            let mut rng = RngStream::new(cfg.seed, 510 + row as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..1000 {
                let level = match row.param() {
                    Parameterization::Vp => 0.01 + 0.99 * rng.uniform(),
                    Parameterization::VeKarras => 10.0 * rng.uniform(),
                    Parameterization::RectifiedFlow => 0.99 * rng.uniform(),
                };
                let x = [3.0 * rng.normal()];
                let (f, r) = (step.forward_part(&x, level), step.reverse_part(&x, level));
                let g = row_time_scale(row, level);
                let gs = g * perturb(&gm, row.param(), level)?.score(&x)[0];
                let drift = f.drift[0] + r.drift[0];
                let var = f.diffusion.powi(2) + r.diffusion.powi(2);
                worst = worst
                    .max((drift - gs).abs() / (1.0 + gs.abs()))
                    .max((var - 2.0 * g).abs() / (1.0 + 2.0 * g));
            }
            Ok((worst <= 1e-12, format!("worst relative error {worst:.2e}")))
        });
    }
    for row in ModelType::ALL {
        c.run(
            format!("{row}: one split step keeps the perturbed mixture's moments"),
            || {
                let (level, dtau) = match row.param() {
                    Parameterization::Vp => (0.6, 0.01),
                    Parameterization::VeKarras => (0.8, 0.01),
                    Parameterization::RectifiedFlow => (0.4, 0.01),
                };
                let pm = perturb(&gm, row.param(), level)?;
                let n = 5 * cfg.chains;
                let mut rng = RngStream::new(cfg.seed, 520 + row as u64);
                let mut data = vec![0.0; n];
                for v in data.iter_mut() {
                    pm.sample_into(&mut rng, std::slice::from_mut(v));
                }
                let step = SplitStep::new(
                    row,
                    MixtureScore {
                        mixture: gm.clone(),
                        param: row.param(),
                    },
                );
                let end = run_split(
                    &step,
                    &Ensemble::from_flat(1, data),
                    level,
                    1,
                    dtau,
                    &RngStream::new(cfg.seed, 530),
                )?;
                let s = end.summary();
                let (m, v, t) = skewed_moments(pm.scale, pm.noise_std);
                let checks = [
                    within(s.mean[0], m, s.mean_se[0], dtau * v.sqrt()),
                    within(s.variance(0), v, s.variance_se(0), dtau * v),
                    within(s.third_central[0], t, s.third_central_se[0], dtau * v.powf(1.5)),
                ];
                let ok = checks.iter().all(|c| c.0);
                let worst = checks.iter().map(|c| c.1).fold(0.0, f64::max);
                Ok((ok, format!("worst deviation / (se + dτ bias) {worst:.2}")))
            },
        );
    }
}

// ---------------------------------------------------------------- reverse

fn oracle_reverse(mt: ModelType, gm: &GaussianMixture) -> ReverseSpec<OracleField> {
    let spec = ReverseSpec::new(mt, OracleField::new(gm.clone(), mt.native_kind()));
    if mt == ModelType::VeKarras {
        spec.with_ve_horizon_for(gm)
    } else {
        spec
    }
}

fn reverse_suite(c: &mut Checks, cfg: &VerifyConfig) {
    let gm = GaussianMixture::symmetric_1d(&[-2.0, 2.0], 0.1).expect("valid mixture");
    for mt in ModelType::ALL {
        c.run(format!("{mt}: oracle field regenerates the bimodal mixture"), || {
            let e = generate(
                &oracle_reverse(mt, &gm),
                cfg.chains,
                400,
                &RngStream::new(cfg.seed, 600 + mt as u64),
            )?;
            let right = e.filtered(0, |x| x > 0.0);
            let left = e.filtered(0, |x| x <= 0.0);
            let mass = right.len() as f64 / e.len() as f64;
            let (mr, ml) = (right.mean()[0], left.mean()[0]);
            let var = e.summary().variance(0);
            let ok = (mass - 0.5).abs() <= 0.02
                && (mr - 2.0).abs() <= 0.05
                && (ml + 2.0).abs() <= 0.05
                && (var / 4.1 - 1.0).abs() <= 0.05;
            Ok((
                ok,
                format!("mass {mass:.4}, means {ml:.4} / {mr:.4}, variance {var:.4}"),
            ))
        });
    }
    c.run("vp-sde duality checkpoints match the forward marginals", || {
        let (m, v, steps, k) = (1.0, 0.5, 400, 5);
        let data = GaussianMixture::isotropic(vec![m], v)?;
        let spec = oracle_reverse(ModelType::VpSde, &data);
        let rep = duality_check(&data, &spec, steps, cfg.chains, k, &RngStream::new(cfg.seed, 610))?;
        // exact moments of the discrete chain give the O(Δ) allowance
        let clocks = spec.clock_schedule(steps);
        let (mut em_mean, mut em_var) = (0.0, 1.0);
        let mut em = vec![(em_mean, em_var)];
        for w in clocks.windows(2) {
            let (t, h) = (w[0], w[0] - w[1]);
            let alpha = (-t).exp();
            let big_v = alpha * v + 1.0 - alpha;
            let a = 1.0 + 0.5 * h - h / big_v;
            em_mean = a * em_mean + h * alpha.sqrt() * m / big_v;
            em_var = a * a * em_var + h;
            em.push((em_mean, em_var));
        }
        let mut ok = true;
        let mut worst: f64 = 0.0;
        for (i, cp) in rep.checkpoints.iter().enumerate() {
            let (em_m, em_v) = em[i * steps / k];
            let (mean, var) = (cp.exact_mean[0], cp.exact_var[0]);
            let (o1, z1) = within(cp.sample_mean[0], mean, cp.mean_se[0], (em_m - mean).abs());
            let (o2, z2) = within(cp.sample_var[0], var, cp.var_se[0], (em_v - var).abs());
            ok &= o1 && o2;
            worst = worst.max(z1).max(z2);
        }
        Ok((
            ok,
            format!(
                "{} checkpoints, worst deviation / (se + bias) {worst:.2}",
                rep.checkpoints.len()
            ),
        ))
    });
    c.run("reverse clock strictly decreases for every row and spacing", || {
        for mt in ModelType::ALL {
            for spacing in [StepSpacing::Uniform, StepSpacing::Karras { rho: 7.0 }] {
                let spec = oracle_reverse(mt, &gm).with_spacing(spacing);
                for steps in [1, 7, 400] {
                    let clocks = spec.clock_schedule(steps);
                    if !clocks.windows(2).all(|w| w[1] < w[0]) {
                        return Ok((false, format!("{mt} {spacing:?} with {steps} steps")));
                    }
                }
            }
        }
        Ok((true, "4 rows × 2 spacings × 3 step counts".into()))
    });
    c.run(
        "ve: noise field and converted score field give bitwise-identical samples",
        || {
            let score = OracleField::new(gm.clone(), PredictionKind::Score);
            let as_noise = ConvertedField {
                inner: score.clone(),
                kind: PredictionKind::Noise,
            };
            let a = ReverseSpec::new(ModelType::VeKarras, score).with_end(1e-3);
            let b = ReverseSpec::new(ModelType::VeKarras, as_noise).with_end(1e-3);
            let rng = RngStream::new(cfg.seed, 620);
            let (ea, eb) = (generate(&a, 512, 100, &rng)?, generate(&b, 512, 100, &rng)?);
            Ok((ea == eb, format!("{} chains × 100 steps", ea.len())))
        },
    );
    c.run("ode rows: halving the step halves the euler terminal bias", || {
        let (m, v) = (0.8, 0.6);
        let data = GaussianMixture::isotropic(vec![m], v)?;
        let mut ok = true;
        let mut detail = Vec::new();
        for mt in [ModelType::VpOde, ModelType::VeKarras, ModelType::RectifiedFlow] {
            let end = if mt.param() == Parameterization::Vp { 1e-3 } else { 1e-2 };
            let spec = oracle_reverse(mt, &data).with_solver(OdeSolver::Euler).with_end(end);
            let exact = exact_flow_terminal(&spec, m, v)?;
            let err = |n: usize| -> Result<f64> {
                let (mm, ss) = affine_terminal(&spec, n)?;
                Ok((mm - exact.0).abs() + (ss - exact.1).abs())
            };
            let ratio = err(400)? / err(800)?;
            ok &= (ratio / 2.0 - 1.0).abs() < 0.15;
            detail.push(format!("{mt} {ratio:.3}"));
        }
        Ok((ok, format!("error ratios {}", detail.join(", "))))
    });
}

/// Terminal mean and sd of a deterministic reverse run, read off the affine
/// map from start state to end state.
fn affine_terminal(spec: &ReverseSpec<OracleField>, steps: usize) -> Result<(f64, f64)> {
    let clocks = spec.clock_schedule(steps);
    let mut rng = RngStream::new(0, 0);
    let mut run = |x0: f64| -> Result<f64> {
        let mut x = vec![x0];
        for w in clocks.windows(2) {
            let t = spec.reverse_time(w[0]);
            x = reverse_step(spec, &x, t, spec.reverse_time(w[1]) - t, &mut rng)?;
        }
        Ok(x[0])
    };
    let d = run(0.0)?;
    let c = run(1.0)? - d;
    Ok((d, c.abs() * spec.initial_std()))
}

/// Exact probability-flow transport of the start distribution to the end
/// level for data `N(m, v)`: the standardized coordinate is conserved.
fn exact_flow_terminal(spec: &ReverseSpec<OracleField>, m: f64, v: f64) -> Result<(f64, f64)> {
    let p = spec.param();
    let (a0, b0) = marginal_coeffs(p, spec.level_of_clock(spec.start_clock))?;
    let (a1, b1) = marginal_coeffs(p, spec.level_of_clock(spec.end_clock))?;
    let (sd0, sd1) = ((a0 * a0 * v + b0 * b0).sqrt(), (a1 * a1 * v + b1 * b1).sqrt());
    let mean = a1 * m + sd1 * (0.0 - a0 * m) / sd0;
    Ok((mean, sd1 * spec.initial_std() / sd0))
}

// ---------------------------------------------------------------- train

fn train_suite(c: &mut Checks, cfg: &VerifyConfig) {
    let data = GaussianMixture::new(MixtureSpec {
        weights: vec![0.4, 0.6],
        means: vec![vec![-1.0, 0.5], vec![1.0, -0.5]],
        covariances: vec![Covariance::Isotropic(0.3), Covariance::Isotropic(0.2)],
    })
    .expect("valid mixture");
    c.run(
        "dsm gradients match central differences, every row, weighting and kind",
        || {
            let h = 1e-5;
            let (mut worst, mut count): (f64, usize) = (0.0, 0);
            for mt in ModelType::ALL {
                for wm in [WeightMode::Canonical, WeightMode::Uniform] {
                    let spec = LossSpec::for_data(mt, wm, &data);
                    for kind in PredictionKind::ALL {
                        let model = MlpModel::new(kind, 2, &[6, 6], &mut RngStream::new(cfg.seed, 700))?;
                        let batch = DsmBatch::sample(&data, &spec, 8, &mut RngStream::new(cfg.seed, 701 + mt as u64));
                        let (_, grad) = dsm_loss(&model, &batch, &spec)?;
                        let mut m = model.clone();
                        for k in 0..grad.len() {
                            let p0 = model.params()[k];
                            m.params_mut()[k] = p0 + h;
                            let up = dsm_loss(&m, &batch, &spec)?.0;
                            m.params_mut()[k] = p0 - h;
                            let down = dsm_loss(&m, &batch, &spec)?.0;
                            m.params_mut()[k] = p0;
                            let fd = (up - down) / (2.0 * h);
                            let scale = grad[k].abs().max(fd.abs()).max(1e-7 * up.abs().max(1.0));
                            worst = worst.max((fd - grad[k]).abs() / scale);
                            count += 1;
                        }
                    }
                }
            }
            Ok((
                worst <= 1e-4,
                format!("{count} parameters, worst relative error {worst:.2e}"),
            ))
        },
    );
    c.run(
        "linear model: per-level argmin is the same under every weighting",
        || {
            let data = GaussianMixture::isotropic(vec![0.3], 0.7)?;
            let mut worst: f64 = 0.0;
            for mt in ModelType::ALL {
                let level = match mt.param() {
                    Parameterization::Vp => 0.4,
                    Parameterization::VeKarras => 0.8,
                    Parameterization::RectifiedFlow => 0.35,
                };
                let mut argmins = Vec::new();
                for wm in [WeightMode::Canonical, WeightMode::Uniform, WeightMode::NoiseVariance] {
                    let spec = LossSpec::new(mt, wm).at_level(level);
                    let batch = DsmBatch::sample(&data, &spec, 4096, &mut RngStream::new(cfg.seed, 710));
                    let g = |theta: f64| dsm_loss(&LinearModel::new(mt.native_kind(), 1, theta), &batch, &spec);
                    let (g0, g1) = (g(0.0)?.1[0], g(1.0)?.1[0]);
                    argmins.push(-g0 / (g1 - g0));
                }
                for w in argmins.windows(2) {
                    worst = worst.max((w[0] - w[1]).abs() / w[0].abs().max(1.0));
                }
            }
            Ok((worst <= 1e-12, format!("worst relative spread {worst:.2e}")))
        },
    );
    for mt in ModelType::ALL {
        c.run(format!("{mt}: dsm minus sm does not depend on the parameters"), || {
            let spec = LossSpec::for_data(mt, WeightMode::NoiseVariance, &data);
            let base = MlpModel::new(mt.native_kind(), 2, &[8, 8], &mut RngStream::new(cfg.seed, 720))?;
            let batch = DsmBatch::sample(&data, &spec, 5000, &mut RngStream::new(cfg.seed, 721 + mt as u64));
            let diff = |m: &MlpModel| -> Result<Vec<f64>> {
                let d = dsm_terms(m, &batch, &spec)?;
                let s = sm_terms(m, &batch, &data, &spec)?;
                Ok(d.iter().zip(&s).map(|(a, b)| a - b).collect())
            };
            let d0 = diff(&base)?;
            let mut rng = RngStream::new(cfg.seed, 725);
            let (mut gaps, mut bound) = (Vec::new(), 0.0f64);
            for _ in 0..20 {
                let mut m = base.clone();
                m.params_mut().iter_mut().for_each(|p| *p += 0.3 * rng.normal());
                let d = diff(&m)?;
                let delta: Vec<f64> = d.iter().zip(&d0).map(|(a, b)| a - b).collect();
                bound = bound.max(3.0 * sample_sd(&delta) / (delta.len() as f64).sqrt());
                gaps.push(d.iter().sum::<f64>() / d.len() as f64);
            }
            let spread = sample_sd(&gaps);
            Ok((
                spread <= bound,
                format!("sd across 20 perturbations {spread:.3e}, MC bound {bound:.3e}"),
            ))
        });
    }
    c.run("zero training steps leave the model unchanged", || {
        let init = MlpModel::new(PredictionKind::Score, 2, &[8, 8], &mut RngStream::new(cfg.seed, 730))?;
        let mut model = init.clone();
        let spec = LossSpec::new(ModelType::VpSde, WeightMode::NoiseVariance);
        let trace = train(
            &mut model,
            &data,
            &spec,
            &TrainConfig {
                steps: 0,
                ..TrainConfig::default()
            },
        )?;
        Ok((trace.is_empty() && model == init, "0 steps".into()))
    });
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

// ---------------------------------------------------------------- fokker-planck

fn ou_kl_trace(cells: usize, dt: f64) -> Result<KlTrace> {
    let g = CellGrid::new(-10.0, 10.0, cells)?;
    let p = GridDensity::gaussian(g, 1.5, 0.5)?;
    let q = GridDensity::gaussian(g, -1.0, 1.5)?;
    kl_trace(&FPOperator::ou(1.0, 2f64.sqrt()), &p, &q, 2.0, dt, TimeScheme::Explicit)
}

fn max_defect(tr: &KlTrace) -> f64 {
    tr.points
        .iter()
        .filter(|p| p.t >= 0.1 - 1e-12 && p.t <= 1.9 + 1e-12)
        .map(|p| (p.dkl_dt + p.l_t).abs() / p.l_t)
        .fold(0.0, f64::max)
}

fn fp_suite(c: &mut Checks) {
    c.run("heat kernel reproduced and converging under refinement", || {
        let err = |cells: usize| -> Result<f64> {
            let grid = CellGrid::new(-10.0, 10.0, cells)?;
            let mut rho = GridDensity::gaussian(grid, 0.0, 0.25)?;
            let op = FPOperator::heat(1.0);
            let steps = (1.0 / (0.2 * op.stable_dt(&grid, 0.0)?)).ceil() as usize;
            let dt = 1.0 / steps as f64;
            for n in 0..steps {
                rho = fp_step(&op, &rho, n as f64 * dt, dt, TimeScheme::Explicit)?;
            }
            let exact = GridDensity::from_fn(grid, |x| (-(x * x) / 2.5).exp())?;
            Ok(rho.max_abs_diff(&exact))
        };
        let (coarse, fine) = (err(100)?, err(200)?);
        Ok((
            fine < 2e-3 && fine < 0.6 * coarse,
            format!("max error h=0.2 {coarse:.2e}, h=0.1 {fine:.2e}"),
        ))
    });
    c.run("ou stationary density drifts at most 1e-6 over 1e4 steps", || {
        let grid = CellGrid::new(-8.0, 8.0, 320)?;
        let op = FPOperator::ou(1.0, 2f64.sqrt());
        let start = GridDensity::gaussian(grid, 0.0, 1.0)?;
        let dt = 0.5 * op.stable_dt(&grid, 0.0)?;
        let mut rho = start.clone();
        for n in 0..10_000 {
            rho = fp_step(&op, &rho, n as f64 * dt, dt, TimeScheme::Explicit)?;
        }
        let drift = rho.max_abs_diff(&start);
        Ok((drift <= 1e-6, format!("max drift {drift:.2e}")))
    });
    c.run("mass conserved to 1e-12 every step, both schemes", || {
        let grid = CellGrid::new(-10.0, 10.0, 300)?;
        let op = FPOperator::new(
            Arc::new(|x: f64, t: f64| -x + (x + t).sin()),
            Arc::new(|t: f64| 1.0 + 0.5 * t),
        );
        let mut rho = GridDensity::gaussian(grid, 2.0, 0.3)?;
        let dt = 0.5 * op.stable_dt(&grid, 1.0)?;
        let mut worst: f64 = 0.0;
        for scheme in [TimeScheme::Explicit, TimeScheme::Implicit] {
            for n in 0..500 {
                let next = fp_step(&op, &rho, n as f64 * dt, dt, scheme)?;
                worst = worst.max((next.mass() - rho.mass()).abs());
                rho = next;
            }
        }
        Ok((worst <= 1e-12, format!("worst mass change {worst:.2e}")))
    });
    c.run(
        "kl non-increasing and decaying at the rate of the instantaneous objective",
        || {
            let coarse = ou_kl_trace(200, 2e-3)?;
            let fine = ou_kl_trace(400, 5e-4)?;
            let monotone = fine.points.windows(2).all(|w| w[1].kl <= w[0].kl + 1e-15);
            let (dc, df) = (max_defect(&coarse), max_defect(&fine));
            let ok = monotone && df <= 0.02 && df < 0.5 * dc && !fine.underflow_warning;
            Ok((
                ok,
                format!("monotone {monotone}, relative defect h=0.1 {dc:.2e}, h=0.05 {df:.2e}"),
            ))
        },
    );
    c.run("drift-only dynamics hold kl within scheme error", || {
        let change = |cells: usize| -> Result<f64> {
            let grid = CellGrid::new(-12.0, 12.0, cells)?;
            let op = FPOperator::transport(Arc::new(|x: f64, _| -0.5 * x + 0.3 * x.sin()));
            let p = GridDensity::gaussian(grid, 1.0, 1.0)?;
            let q = GridDensity::gaussian(grid, -0.5, 2.0)?;
            let dt = 0.5 * op.stable_dt(&grid, 0.0)?;
            let tr = kl_trace(&op, &p, &q, 1.0, 1.0 / (1.0 / dt).ceil(), TimeScheme::Explicit)?;
            let k0 = tr.points[0].kl;
            Ok(tr.points.iter().map(|pt| (pt.kl - k0).abs()).fold(0.0, f64::max) / k0)
        };
        let (c1, c2) = (change(400)?, change(800)?);
        Ok((
            c2 < 0.02 && c2 < 0.7 * c1,
            format!("relative kl drift h=0.06 {c1:.2e}, h=0.03 {c2:.2e}"),
        ))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert_eq!("fp".parse::<Suite>().unwrap(), Suite::FokkerPlanck);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn quick_suites_pass() {
        let cfg = VerifyConfig::default();
        for s in [Suite::Core, Suite::Conversions, Suite::FokkerPlanck] {
            for c in run_suite(s, &cfg) {
                assert!(c.passed, "{}: {} ({})", c.suite, c.name, c.detail);
            }
        }
    }
}
