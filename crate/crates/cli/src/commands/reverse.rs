use std::path::PathBuf;

use clap::Args;
use langevin_core::reverse::{generate_with_snapshots, ReverseSpec};
use langevin_core::train::Checkpoint;
use langevin_core::{perturb, Error, GaussianMixture, ModelType, OracleField, PredictionField, RngStream};

use super::{mixture, Run};
use crate::config::{self, FieldSource, SampleReverseConfig};
use crate::error::CliError;
use crate::output::{gnuplot, Cell, Csv};
use crate::RunArgs;

#[derive(Args, Debug)]
pub struct ReverseArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    model_type: Option<ModelType>,
    /// `oracle`, `checkpoint` (path from the config) or `checkpoint:<path>`.
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

fn apply_overrides(a: &ReverseArgs, cfg: &mut SampleReverseConfig) -> Result<(), CliError> {
    cfg.seed = a.run.seed.unwrap_or(cfg.seed);
    cfg.model_type = a.model_type.unwrap_or(cfg.model_type);
    cfg.chains = a.chains.unwrap_or(cfg.chains);
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    match a.field.as_deref() {
        None => {}
        Some("oracle") => cfg.field = FieldSource::Oracle,
        Some("checkpoint") => cfg.field = FieldSource::Checkpoint,
        Some(f) => match f.strip_prefix("checkpoint:") {
            Some(path) => {
                cfg.field = FieldSource::Checkpoint;
                cfg.checkpoint = Some(path.to_string());
            }
            None => {
                return Err(CliError::Usage(format!(
                    "--field `{f}`: expected oracle or checkpoint:<path>"
                )))
            }
        },
    }
    Ok(())
}

/// The sampling field and the data distribution its exact moments come from.
fn field(cfg: &SampleReverseConfig) -> Result<(Box<dyn PredictionField>, GaussianMixture), CliError> {
    match cfg.field {
        FieldSource::Oracle => {
            let data = mixture(&cfg.data)?;
            let f = OracleField::new(data.clone(), cfg.model_type.native_kind());
            Ok((Box::new(f), data))
        }
        FieldSource::Checkpoint => {
            let path = cfg
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Config("field = \"checkpoint\" needs `checkpoint = <path>`".into()))?;
            let ckpt = Checkpoint::load(&PathBuf::from(path))?;
            Ok((Box::new(ckpt.model), ckpt.data))
        }
    }
}

/// `k` evenly spaced step indices plus the start and the end, without repeats.
fn snapshot_steps(steps: usize, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=k.max(1)).map(|i| (i * steps + k.max(1) / 2) / k.max(1)).collect();
    v.push(steps);
    v.sort_unstable();
    v.dedup();
    v
}

pub fn run(a: &ReverseArgs) -> Result<(), CliError> {
    let mut cfg: SampleReverseConfig = config::load(a.run.config.as_deref())?;
    apply_overrides(a, &mut cfg)?;
    if cfg.chains == 0 {
        return Err(Error::Argument("sample-reverse needs chains > 0".into()).into());
    }
    let (field, data) = field(&cfg)?;
    if field.dim() != data.dim() {
        return Err(Error::Argument("field and data dimensions differ".into()).into());
    }
    let mut spec = ReverseSpec::new(cfg.model_type, field)
        .with_spacing(cfg.spacing)
        .with_solver(cfg.solver);
    if cfg.model_type.param() == langevin_core::Parameterization::VeKarras {
        spec = spec.with_ve_horizon_for(&data);
    }
    if let Some(c) = cfg.start_clock {
        spec = spec.with_start(c);
    }
    if let Some(c) = cfg.end_clock {
        spec = spec.with_end(c);
    }
    let record = snapshot_steps(cfg.steps, cfg.snapshots);
    let rng = RngStream::new(cfg.seed, 0);
    let (ens, snaps) = generate_with_snapshots(&spec, cfg.chains, cfg.steps, &rng, &record)?;
    let clocks = spec.clock_schedule(cfg.steps);
    let d = data.dim();

    let mut run = Run::start(&a.run, "sample-reverse", &cfg, cfg.seed)?;
    if cfg.write_samples {
        let mut header = vec!["chain_id".to_string()];
        header.extend((0..d).map(|j| format!("state_{j}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut csv = Csv::new(&header);
        for (i, r) in ens.rows().enumerate() {
            let mut row = vec![Cell::Int(i as u64)];
            row.extend(r.iter().map(|&v| Cell::Num(v)));
            csv.row(&row);
        }
        run.out.write_csv("samples.csv", csv)?;
    }

    let mut csv = Csv::new(&[
        "step",
        "reverse_time",
        "level",
        "coord",
        "mean",
        "mean_se",
        "variance",
        "variance_se",
        "exact_mean",
        "exact_variance",
    ]);
    for (&step, snap) in record.iter().zip(&snaps) {
        let s = snap.ensemble.summary();
        let (em, ec) = perturb(&data, cfg.model_type.param(), snap.level)?.moments();
        for j in 0..d {
            csv.row(&[
                Cell::Int(step as u64),
                Cell::Num(spec.reverse_time(clocks[step])),
                Cell::Num(snap.level),
                Cell::Int(j as u64),
                Cell::Num(s.mean[j]),
                Cell::Num(s.mean_se[j]),
                Cell::Num(s.variance(j)),
                Cell::Num(s.variance_se(j)),
                Cell::Num(em[j]),
                Cell::Num(ec[j * d + j]),
            ]);
        }
    }
    run.out.write_csv("moments.csv", csv)?;
    run.gnuplot(|| {
        gnuplot(
            "reverse ensemble variance against the forward marginal",
            "reverse time",
            "variance",
            false,
            &[
                ("moments.csv", "reverse_time", "variance", "reverse ensemble"),
                ("moments.csv", "reverse_time", "exact_variance", "forward marginal"),
            ],
        )
    })?;
    run.finish()
}
