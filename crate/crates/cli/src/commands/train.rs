use langevin_core::train::{score_error, train, Checkpoint, LossSpec, MlpModel, TrainConfig};
use langevin_core::{Error, RngStream};

use super::{mixture, Run};
use crate::config::{self, TrainRunConfig};
use crate::error::CliError;
use crate::output::{gnuplot, Cell, Csv};
use crate::RunArgs;

pub fn run(args: &RunArgs, steps: Option<usize>) -> Result<(), CliError> {
    let mut cfg: TrainRunConfig = config::load(args.config.as_deref())?;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.steps = steps.unwrap_or(cfg.steps);
    let kind = *cfg.prediction_kind.get_or_insert(cfg.model_type.native_kind());
    let data = mixture(&cfg.data)?;

    let mut loss = LossSpec::for_data(cfg.model_type, cfg.weight_mode.clone(), &data);
    loss.sampling = cfg.sampling;
    loss.level_min = *cfg.level_min.get_or_insert(loss.level_min);
    loss.level_max = *cfg.level_max.get_or_insert(loss.level_max);
    let train_cfg = TrainConfig {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer.clone(),
        seed: cfg.seed,
    };

    let mut model = MlpModel::new(kind, data.dim(), &cfg.hidden, &mut RngStream::new(cfg.seed, 0))?;
    let trace = match train(&mut model, &data, &loss, &train_cfg) {
        Ok(t) => t,
        Err(Error::Diverged { step, loss, trace }) => {
            eprintln!(
                "ldiff train: diverged at step {step} (batch loss {loss}); {} finite steps",
                trace.len()
            );
            return Err(Error::Diverged { step, loss, trace }.into());
        }
        Err(e) => return Err(e.into()),
    };

    let eval_rng = RngStream::new(cfg.seed, 2);
    let errors = cfg
        .eval_alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            score_error(
                &model,
                &data,
                alpha,
                cfg.eval_samples,
                cfg.eval_mass,
                &mut eval_rng.child(k as u64),
            )
        })
        .collect::<Result<Vec<f64>, Error>>()?;

    let ckpt = Checkpoint {
        model,
        loss,
        train: train_cfg,
        data,
        init_seed: cfg.seed,
        final_loss: trace.last().copied(),
    };
    let mut run = Run::start(args, "train", &cfg, cfg.seed)?;
    run.out.write("checkpoint.json", &(ckpt.to_json()? + "\n"))?;
    let mut csv = Csv::new(&["step", "loss"]);
    for (i, l) in trace.iter().enumerate() {
        csv.row(&[Cell::Int(i as u64), Cell::Num(*l)]);
    }
    run.out.write_csv("loss.csv", csv)?;
    let mut csv = Csv::new(&["alpha", "relative_l2_error"]);
    for (a, e) in cfg.eval_alphas.iter().zip(&errors) {
        csv.row(&[Cell::Num(*a), Cell::Num(*e)]);
    }
    run.out.write_csv("score_error.csv", csv)?;
    run.gnuplot(|| {
        gnuplot(
            "training loss",
            "step",
            "batch loss",
            true,
            &[("loss.csv", "step", "loss", "loss")],
        )
    })?;
    for (a, e) in cfg.eval_alphas.iter().zip(&errors) {
        eprintln!("ldiff train: alpha={a} relative L2 score error {e:.4}");
    }
    run.finish()
}
