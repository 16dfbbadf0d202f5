use langevin_core::field::ConvertedField;
use langevin_core::oracle::GaussianMixture;
use langevin_core::rng::RngStream;
use langevin_core::train::{
    dsm_loss, dsm_terms, score_error, sm_terms, train, Checkpoint, DsmBatch, LinearModel, LossSpec, MlpModel,
    OptimizerConfig, ScoreModel, TrainConfig, WeightMode,
};
use langevin_core::types::{ModelType, Parameterization, PredictionKind};
use langevin_core::Error;

fn mixture_2d() -> GaussianMixture {
    serde_json::from_str(r#"{"weights":[0.4,0.6],"means":[[-1.0,0.5],[1.0,-0.5]],"covariances":[0.3,0.2]}"#).unwrap()
}

fn small_mlp(kind: PredictionKind, dim: usize, seed: u64) -> MlpModel {
    MlpModel::new(kind, dim, &[8, 8], &mut RngStream::new(seed, 0)).unwrap()
}

#[test]
fn gradients_match_central_differences_for_every_row_weighting_and_kind() {
    let data = mixture_2d();
    let h = 1e-5;
    let mut checked = 0;
    for mt in ModelType::ALL {
        for wm in [WeightMode::Canonical, WeightMode::Uniform, WeightMode::NoiseVariance] {
            let spec = LossSpec::for_data(mt, wm.clone(), &data);
            for kind in PredictionKind::ALL {
                let model = small_mlp(kind, 2, 3);
                let batch = DsmBatch::sample(&data, &spec, 16, &mut RngStream::new(4, mt as u64));
                let (_, grad) = dsm_loss(&model, &batch, &spec).unwrap();
                let mut m = model.clone();
                for k in 0..grad.len() {
                    let p0 = model.params()[k];
                    m.params_mut()[k] = p0 + h;
                    let up = dsm_loss(&m, &batch, &spec).unwrap().0;
                    m.params_mut()[k] = p0 - h;
                    let down = dsm_loss(&m, &batch, &spec).unwrap().0;
                    m.params_mut()[k] = p0;
                    let fd = (up - down) / (2.0 * h);
                    // floor at the central-difference round-off level ~ ε_mach·L/h
                    let scale = grad[k].abs().max(fd.abs()).max(1e-7 * up.abs().max(1.0));
                    let rel = (fd - grad[k]).abs() / scale;
                    assert!(
                        rel <= 1e-4,
                        "{mt} {wm:?} {kind} param {k}: analytic {} fd {fd}",
                        grad[k]
                    );
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 5000);
}

/// Per-sample `L_DSM − L_SM` at shared noisy states.
fn dsm_minus_sm(model: &MlpModel, batch: &DsmBatch, data: &GaussianMixture, spec: &LossSpec) -> Vec<f64> {
    let d = dsm_terms(model, batch, spec).unwrap();
    let s = sm_terms(model, batch, data, spec).unwrap();
    d.iter().zip(&s).map(|(a, b)| a - b).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

#[test]
fn dsm_and_sm_differ_by_a_parameter_independent_constant() {
    let data = mixture_2d();
    for mt in ModelType::ALL {
        let spec = LossSpec::for_data(mt, WeightMode::NoiseVariance, &data);
        let base = small_mlp(mt.native_kind(), 2, 5);
        let batch = DsmBatch::sample(&data, &spec, 20_000, &mut RngStream::new(6, mt as u64));
        let diff0 = dsm_minus_sm(&base, &batch, &data, &spec);
        let mut rng = RngStream::new(7, mt as u64);
        let mut gaps = Vec::new();
        let mut dsm = Vec::new();
        let mut bound: f64 = 0.0;
        for _ in 0..20 {
            let mut m = base.clone();
            m.params_mut().iter_mut().for_each(|p| *p += 0.3 * rng.normal());
            let diff = dsm_minus_sm(&m, &batch, &data, &spec);
            // the change in the gap is an MC estimate of zero; its standard error bounds the spread
            let delta: Vec<f64> = diff.iter().zip(&diff0).map(|(a, b)| a - b).collect();
            bound = bound.max(3.0 * std(&delta) / (delta.len() as f64).sqrt());
            gaps.push(mean(&diff));
            dsm.push(mean(&dsm_terms(&m, &batch, &spec).unwrap()));
        }
        let (spread, dsm_spread) = (std(&gaps), std(&dsm));
        println!("{mt}: sd(DSM - SM) {spread:.3e}, bound {bound:.3e}, sd(DSM) {dsm_spread:.3e}");
        assert!(spread <= bound, "{mt}");
        assert!(dsm_spread > 10.0 * spread, "{mt}: perturbations barely move the loss");
    }
}

/// 1D Gaussian mixture density of `a x_0 + b ε`, written out for quadrature.
struct Mix1 {
    w: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
}

impl Mix1 {
    /// density and its derivative
    fn pdf(&self, a: f64, b: f64, x: f64) -> (f64, f64) {
        let (mut p, mut dp) = (0.0, 0.0);
        for k in 0..self.w.len() {
            let v = a * a * self.var[k] + b * b;
            let g =
                self.w[k] * (-(x - a * self.mu[k]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
            p += g;
            dp -= g * (x - a * self.mu[k]) / v;
        }
        (p, dp)
    }

    fn second_moment(&self) -> f64 {
        (0..self.w.len())
            .map(|k| self.w[k] * (self.mu[k].powi(2) + self.var[k]))
            .sum()
    }
}

#[test]
fn the_constant_is_nonnegative_and_matches_quadrature() {
    let mix = Mix1 {
        w: vec![0.3, 0.7],
        mu: vec![-1.5, 1.0],
        var: vec![0.2, 0.4],
    };
    let data: GaussianMixture =
        serde_json::from_str(r#"{"weights":[0.3,0.7],"means":[[-1.5],[1.0]],"covariances":[0.2,0.4]}"#).unwrap();
    let cases = [
        (ModelType::VpSde, 0.2),
        (ModelType::VpSde, 0.6),
        (ModelType::VeKarras, 0.5),
        (ModelType::VeKarras, 2.0),
        (ModelType::RectifiedFlow, 0.3),
        (ModelType::RectifiedFlow, 0.7),
    ];
    for (mt, level) in cases {
        let spec = LossSpec::new(mt, WeightMode::Canonical).at_level(level);
        let (a, b) = match mt.param() {
            Parameterization::Vp => (level.sqrt(), (1.0 - level).sqrt()),
            Parameterization::VeKarras => (1.0, level),
            Parameterization::RectifiedFlow => (1.0 - level, level),
        };
        // E‖conditional target‖²
        let cond = match mt.param() {
            Parameterization::Vp => 1.0 / (b * b),
            Parameterization::VeKarras => 1.0,
            Parameterization::RectifiedFlow => 1.0 + mix.second_moment(),
        };
        // E‖marginal target‖² by midpoint quadrature over ±12 sd
        let (lo, hi, n) = (-12.0 * (a + b) - 3.0, 12.0 * (a + b) + 3.0, 200_000);
        let dx = (hi - lo) / n as f64;
        let mut marg = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * dx;
            let (p, dp) = mix.pdf(a, b, x);
            if p < 1e-300 {
                continue;
            }
            let s = dp / p;
            let t = match mt.param() {
                Parameterization::Vp => s,
                Parameterization::VeKarras => -level * s,
                Parameterization::RectifiedFlow => -(level * s + x) / (1.0 - level),
            };
            marg += p * t * t * dx;
        }
        let c_quad = spec.weight(level) * (cond - marg);
        let model = small_mlp(mt.native_kind(), 1, 8);
        let batch = DsmBatch::sample(&data, &spec, 200_000, &mut RngStream::new(9, mt as u64));
        let diff = dsm_minus_sm(&model, &batch, &data, &spec);
        let (c_mc, se) = (mean(&diff), std(&diff) / (diff.len() as f64).sqrt());
        println!("{mt} level {level}: C quadrature {c_quad:.5}, MC {c_mc:.5} ± {se:.5}");
        assert!(c_quad >= 0.0);
        assert!((c_mc - c_quad).abs() <= 4.0 * se, "{mt} {level}");
    }
}

/// Closed-form minimizer of `E(θ x − target)²` for zero-mean data of variance `v`.
fn linear_argmin(param: Parameterization, v: f64, level: f64) -> f64 {
    match param {
        Parameterization::Vp => -1.0 / (level * v + 1.0 - level),
        Parameterization::VeKarras => level / (v + level * level),
        Parameterization::RectifiedFlow => {
            let s = level;
            (s - (1.0 - s) * v) / ((1.0 - s).powi(2) * v + s * s)
        }
    }
}

#[test]
fn sgd_finds_the_linear_argmin() {
    let v = 0.5;
    let data = GaussianMixture::isotropic(vec![0.0], v).unwrap();
    for (mt, level) in [
        (ModelType::VpSde, 0.3),
        (ModelType::VpSde, 0.8),
        (ModelType::VeKarras, 1.5),
        (ModelType::RectifiedFlow, 0.4),
    ] {
        let spec = LossSpec::new(mt, WeightMode::Uniform).at_level(level);
        let mut model = LinearModel::new(mt.native_kind(), 1, 0.0);
        let cfg = TrainConfig {
            steps: 1,
            batch_size: 8192,
            optimizer: OptimizerConfig::Sgd { lr: 0.3, momentum: 0.0 },
            seed: 0,
        };
        // Polyak average over the second half of the run
        let (mut avg, mut count) = (0.0, 0);
        for step in 0..400 {
            train(
                &mut model,
                &data,
                &spec,
                &TrainConfig {
                    seed: step,
                    ..cfg.clone()
                },
            )
            .unwrap();
            if step >= 200 {
                avg += model.theta[0];
                count += 1;
            }
        }
        let theta = avg / count as f64;
        let exact = linear_argmin(mt.param(), v, level);
        println!("{mt} level {level}: θ {theta:.5}, exact {exact:.5}");
        assert!((theta / exact - 1.0).abs() <= 0.01, "{mt}");
    }
}

#[test]
fn per_level_argmin_does_not_depend_on_the_weighting() {
    let data = GaussianMixture::isotropic(vec![0.3], 0.7).unwrap();
    for mt in ModelType::ALL {
        let level = match mt.param() {
            Parameterization::Vp => 0.4,
            Parameterization::VeKarras => 0.8,
            Parameterization::RectifiedFlow => 0.35,
        };
        let mut argmins = Vec::new();
        let mut values = Vec::new();
        for wm in [WeightMode::Canonical, WeightMode::Uniform, WeightMode::NoiseVariance] {
            let spec = LossSpec::new(mt, wm).at_level(level);
            let batch = DsmBatch::sample(&data, &spec, 4096, &mut RngStream::new(10, 0));
            // the loss is quadratic in θ, so two gradients locate the minimizer
            let g = |theta: f64| dsm_loss(&LinearModel::new(mt.native_kind(), 1, theta), &batch, &spec).unwrap();
            let (l0, g0) = g(0.0);
            let (_, g1) = g(1.0);
            argmins.push(-g0[0] / (g1[0] - g0[0]));
            values.push(l0);
        }
        println!("{mt}: argmins {argmins:?}");
        for w in argmins.windows(2) {
            assert!((w[0] - w[1]).abs() <= 1e-12 * w[0].abs().max(1.0), "{mt}");
        }
        if mt.param() != Parameterization::Vp {
            assert!(
                (values[0] - values[1]).abs() > 1e-6,
                "{mt}: weights should change the loss value"
            );
        }
    }
}

fn adam(lr: f64) -> OptimizerConfig {
    OptimizerConfig::Adam {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    }
}

/// A fast phase, then a quieter one to settle the constant-rate Adam jitter.
fn train_mlp(kind: PredictionKind, data: &GaussianMixture, spec: &LossSpec, seed: u64) -> MlpModel {
    let mut model = MlpModel::new(kind, data.dim(), &[32, 32], &mut RngStream::new(seed, 0)).unwrap();
    for (steps, batch_size, lr, phase) in [(4000, 256, 2e-3, 0), (3000, 512, 1e-4, 1000)] {
        let cfg = TrainConfig {
            steps,
            batch_size,
            optimizer: adam(lr),
            seed: seed + phase,
        };
        train(&mut model, data, spec, &cfg).unwrap();
    }
    model
}

#[test]
fn trained_velocity_model_matches_the_analytic_velocity() {
    let (m, v) = (1.0, 0.5);
    let data = GaussianMixture::isotropic(vec![m], v).unwrap();
    // flow-matching weight; b² = s² starves the small-s end of a velocity target
    let spec = LossSpec::new(ModelType::RectifiedFlow, WeightMode::Uniform);
    let model = train_mlp(PredictionKind::Velocity, &data, &spec, 11);
    for s in [0.25, 0.5, 0.75] {
        // v(r) = -(s s_r + r)/(1-s) with s_r = -(r - (1-s)m)/((1-s)² v + s²)
        let var = (1.0 - s) * (1.0 - s) * v + s * s;
        let mean = (1.0 - s) * m;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..201 {
            // bulk: central ±1.645 sd
            let r = mean + var.sqrt() * 1.645 * (i as f64 / 100.0 - 1.0);
            let exact = -(s * (-(r - mean) / var) + r) / (1.0 - s);
            let mut out = [0.0];
            model.predict_into(&[r], s, &mut out);
            num += (out[0] - exact).powi(2);
            den += exact * exact;
        }
        let rel = (num / den).sqrt();
        println!("s = {s}: relative error {rel:.4}");
        assert!(rel <= 0.05, "s = {s}: {rel}");
    }
}

#[test]
fn zero_steps_leave_the_initialization_untouched() {
    let data = mixture_2d();
    let init = MlpModel::new(PredictionKind::Score, 2, &[16, 16], &mut RngStream::new(12, 0)).unwrap();
    let mut model = init.clone();
    let spec = LossSpec::new(ModelType::VpSde, WeightMode::NoiseVariance);
    let cfg = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let trace = train(&mut model, &data, &spec, &cfg).unwrap();
    assert!(trace.is_empty());
    let ck = Checkpoint {
        model,
        loss: spec,
        train: cfg,
        data,
        init_seed: 12,
        final_loss: None,
    };
    let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    assert_eq!(back.model.params(), init.params());
}

#[test]
fn runaway_learning_rate_aborts_with_the_trace() {
    let data = GaussianMixture::isotropic(vec![0.0], 1.0).unwrap();
    let spec = LossSpec::new(ModelType::VpSde, WeightMode::Uniform).at_level(0.5);
    let mut model = LinearModel::new(PredictionKind::Score, 1, 0.0);
    let cfg = TrainConfig {
        steps: 200,
        batch_size: 64,
        optimizer: OptimizerConfig::Sgd { lr: 5.0, momentum: 0.0 },
        seed: 0,
    };
    match train(&mut model, &data, &spec, &cfg) {
        Err(Error::Diverged { step, loss, trace }) => {
            assert_eq!(trace.len(), step);
            assert!(!(loss <= 1e6));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn training_is_reproducible() {
    let data = mixture_2d();
    let spec = LossSpec::for_data(ModelType::VeKarras, WeightMode::NoiseVariance, &data);
    let cfg = TrainConfig {
        steps: 50,
        optimizer: adam(2e-3),
        ..TrainConfig::default()
    };
    let init = MlpModel::new(PredictionKind::Noise, 2, &[16, 16], &mut RngStream::new(13, 0)).unwrap();
    let (mut a, mut b) = (init.clone(), init);
    let ta = train(&mut a, &data, &spec, &cfg).unwrap();
    let tb = train(&mut b, &data, &spec, &cfg).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a.params(), b.params());
}

#[test]
fn score_and_noise_training_agree_after_conversion() {
    let data = GaussianMixture::symmetric_1d(&[-1.0, 1.0], 0.2).unwrap();
    // the same band in both coordinates: α ∈ [0.2, 0.8] is σ ∈ [0.5, 2]
    let mut vp_spec = LossSpec::new(ModelType::VpSde, WeightMode::NoiseVariance);
    (vp_spec.level_min, vp_spec.level_max) = (0.2, 0.8);
    let mut ve_spec = LossSpec::new(ModelType::VeKarras, WeightMode::NoiseVariance);
    (ve_spec.level_min, ve_spec.level_max) = (0.5, 2.0);
    let vp = train_mlp(PredictionKind::Score, &data, &vp_spec, 14);
    let ve = train_mlp(PredictionKind::Noise, &data, &ve_spec, 15);
    let as_noise = ConvertedField {
        inner: vp.clone(),
        kind: PredictionKind::Noise,
    };
    for alpha in [0.3, 0.5] {
        let mut rng = RngStream::new(16, 0);
        let e_vp = score_error(&as_noise, &data, alpha, 20_000, 0.9, &mut rng).unwrap();
        let e_ve = score_error(&ve, &data, alpha, 20_000, 0.9, &mut rng).unwrap();
        println!("α = {alpha}: converted score model {e_vp:.4}, native noise model {e_ve:.4}");
        // soft check: both accurate, and within generous combined training noise of each other
        assert!(e_vp <= 0.1 && e_ve <= 0.1);
        assert!((e_vp - e_ve).abs() <= 0.1);
    }
}
