//! Trains the VP score network on the 2-D two-mode mixture and reports the
//! quantities the training-quality acceptance check thresholds.
//!
//! cargo run --release -p langevin-core --example train_pilot -- [steps] [weight-mode]

use std::time::Instant;

use langevin_core::reverse::{generate, ReverseSpec};
use langevin_core::train::{score_error, train, LossSpec, MlpModel, TrainConfig, WeightMode};
use langevin_core::{GaussianMixture, ModelType, PredictionKind, RngStream};

fn main() {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(20_000);
    let mode: WeightMode = args
        .next()
        .map(|s| serde_json::from_str(&format!("\"{s}\"")).unwrap())
        .unwrap_or(WeightMode::Canonical);
    let data = two_mode();
    let spec = LossSpec::for_data(ModelType::VpSde, mode.clone(), &data);
    let mut model = MlpModel::new(PredictionKind::Score, 2, &[64, 64], &mut RngStream::new(0, 0)).unwrap();
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let trace = train(&mut model, &data, &spec, &cfg).unwrap();
    let tail = &trace[trace.len().saturating_sub(500)..];
    println!(
        "weight={mode:?} steps={steps} train_secs={:.1} mean_loss_last500={:.5}",
        t0.elapsed().as_secs_f64(),
        tail.iter().sum::<f64>() / tail.len() as f64
    );
    if let Ok(path) = std::env::var("PILOT_SAVE") {
        std::fs::write(path, serde_json::to_string(&model).unwrap()).unwrap();
    }
    for alpha in [0.1, 0.25, 0.5, 0.75, 0.9] {
        let e = score_error(&model, &data, alpha, 20_000, 0.9, &mut RngStream::new(5, 0)).unwrap();
        println!("alpha={alpha} rel_l2_score_error={e:.4}");
    }
    for mt in [ModelType::VpSde, ModelType::VpOde] {
        let rs = ReverseSpec::new(mt, model.clone());
        let e = generate(&rs, 20_000, 400, &RngStream::new(9, 0)).unwrap();
        let right = e.rows().filter(|r| r[0] > 0.0).count() as f64 / e.len() as f64;
        println!("{mt} right_mode_mass={right:.4} (target 0.7)");
    }
}

fn two_mode() -> GaussianMixture {
    serde_json::from_str(r#"{"weights":[0.3,0.7],"means":[[-1.5,-1.0],[1.5,1.0]],"covariances":[0.2,0.2]}"#).unwrap()
}
