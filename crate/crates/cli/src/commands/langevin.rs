use langevin_core::field::MixtureScore;
use langevin_core::langevin::{run_langevin, run_split, LangevinSpec, MomentTrace, SplitStep};
use langevin_core::{par, perturb, Ensemble, Error, ModelType, Parameterization, RngStream};

use super::{mixture, Run};
use crate::config::{self, InitKind, LangevinConfig, LangevinMode};
use crate::error::CliError;
use crate::output::{gnuplot, Cell, Csv};
use crate::RunArgs;

fn default_level(cfg: &LangevinConfig) -> f64 {
    match cfg.mode {
        LangevinMode::Langevin => cfg.param.clean_level(),
        LangevinMode::Split => match cfg.row.param() {
            Parameterization::Vp | Parameterization::RectifiedFlow => 0.5,
            Parameterization::VeKarras => 1.0,
        },
    }
}

fn trace_entry(tau: f64, e: &Ensemble) -> MomentTrace {
    let s = e.summary();
    MomentTrace {
        tau,
        variance: (0..e.dim()).map(|j| s.variance(j)).collect(),
        mean: s.mean,
    }
}

pub fn run(args: &RunArgs, chains: Option<usize>, steps: Option<usize>) -> Result<(), CliError> {
    let mut cfg: LangevinConfig = config::load(args.config.as_deref())?;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.chains = chains.unwrap_or(cfg.chains);
    cfg.steps = steps.unwrap_or(cfg.steps);
    if cfg.level.is_none() {
        cfg.level = Some(default_level(&cfg));
    }
    let level = cfg.level.unwrap();
    let data = mixture(&cfg.data)?;
    let d = data.dim();
    if cfg.chains == 0 {
        return Err(Error::Argument("langevin needs chains > 0".into()).into());
    }
    if cfg.init_mean.as_ref().is_some_and(|m| m.len() != d) {
        return Err(CliError::Config(format!("init_mean must have {d} entries")));
    }
    let param = match cfg.mode {
        LangevinMode::Langevin => cfg.param,
        LangevinMode::Split => cfg.row.param(),
    };
    let target = perturb(&data, param, level)?;

    let init_rng = RngStream::new(cfg.seed, 0);
    let init_flat: Vec<f64> = par::map_indexed(cfg.chains, |i| {
        let mut rng = init_rng.child(i as u64);
        let mut x = vec![0.0; d];
        match cfg.init {
            InitKind::Target => target.sample_into(&mut rng, &mut x),
            InitKind::Normal => {
                for (j, v) in x.iter_mut().enumerate() {
                    let m = cfg.init_mean.as_ref().map_or(0.0, |m| m[j]);
                    *v = m + cfg.init_std * rng.normal();
                }
            }
        }
        x
    })
    .into_iter()
    .flatten()
    .collect();
    let init = Ensemble::from_flat(d, init_flat);

    let dyn_rng = RngStream::new(cfg.seed, 1);
    let score = MixtureScore {
        mixture: data.clone(),
        param,
    };
    let (ens, trace) = match cfg.mode {
        LangevinMode::Langevin => {
            let spec = LangevinSpec::new(score, param, level);
            run_langevin(&spec, &init, cfg.steps, cfg.dtau, &dyn_rng, cfg.record_every)?
        }
        LangevinMode::Split => {
            if cfg.row == ModelType::RectifiedFlow && level <= 0.0 {
                return Err(Error::Argument("the RF split needs level > 0".into()).into());
            }
            let step = SplitStep::new(cfg.row, score);
            let block = if cfg.record_every == 0 {
                cfg.steps.max(1)
            } else {
                cfg.record_every
            };
            let mut ens = init.clone();
            let mut trace = vec![trace_entry(0.0, &ens)];
            let (mut done, mut b) = (0, 0u64);
            while done < cfg.steps {
                let n = block.min(cfg.steps - done);
                ens = run_split(&step, &ens, level, n, cfg.dtau, &dyn_rng.child(b))?;
                done += n;
                b += 1;
                if cfg.record_every != 0 {
                    trace.push(trace_entry(done as f64 * cfg.dtau, &ens));
                }
            }
            (ens, trace)
        }
    };

    let mut run = Run::start(args, "langevin", &cfg, cfg.seed)?;
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
    let (em, ec) = target.moments();
    let mut csv = Csv::new(&["tau", "coord", "mean", "variance", "exact_mean", "exact_variance"]);
    for t in &trace {
        for j in 0..d {
            csv.row(&[
                Cell::Num(t.tau),
                Cell::Int(j as u64),
                Cell::Num(t.mean[j]),
                Cell::Num(t.variance[j]),
                Cell::Num(em[j]),
                Cell::Num(ec[j * d + j]),
            ]);
        }
    }
    run.out.write_csv("trace.csv", csv)?;
    run.gnuplot(|| {
        gnuplot(
            "moment trace",
            "tau",
            "value",
            false,
            &[
                ("trace.csv", "tau", "mean", "mean"),
                ("trace.csv", "tau", "variance", "variance"),
                ("trace.csv", "tau", "exact_variance", "target variance"),
            ],
        )
    })?;
    run.finish()
}
