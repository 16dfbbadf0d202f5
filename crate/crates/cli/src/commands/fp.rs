use langevin_core::fokker_planck::{kl_trace, CellGrid, FPOperator, GridDensity};

use super::Run;
use crate::config::{self, FpConfig, FpOperatorKind};
use crate::error::CliError;
use crate::output::{gnuplot, Cell, Csv};
use crate::RunArgs;

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let cfg: FpConfig = config::load(args.config.as_deref())?;
    if args.seed.is_some() {
        eprintln!("ldiff fp-solve: --seed ignored, the solver is deterministic");
    }
    let op = match cfg.operator {
        FpOperatorKind::Ou => FPOperator::ou(cfg.theta, cfg.g),
        FpOperatorKind::Heat => FPOperator::heat(cfg.g),
        FpOperatorKind::Forward => FPOperator::forward(cfg.param),
    };
    let grid = CellGrid::new(cfg.x_min, cfg.x_max, cfg.cells)?;
    let p0 = GridDensity::gaussian(grid, cfg.p0.mean, cfg.p0.var)?;
    let q0 = GridDensity::gaussian(grid, cfg.q0.mean, cfg.q0.var)?;
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => cfg.dt_fraction * op.stable_dt(&grid, 0.0)?,
    };
    let trace = kl_trace(&op, &p0, &q0, cfg.horizon, dt, cfg.scheme)?;
    if trace.underflow_warning {
        eprintln!(
            "ldiff fp-solve: warning: over 10% of a density sits where the other underflows; KL values are unreliable"
        );
    }

    let mut run = Run::start(args, "fp-solve", &cfg, 0)?;
    let mut csv = Csv::new(&["t", "kl", "dkl_dt", "l_t"]);
    for p in &trace.points {
        csv.row(&[Cell::Num(p.t), Cell::Num(p.kl), Cell::Num(p.dkl_dt), Cell::Num(p.l_t)]);
    }
    run.out.write_csv("kl.csv", csv)?;
    run.gnuplot(|| {
        gnuplot(
            "KL decay",
            "t",
            "KL",
            true,
            &[("kl.csv", "t", "kl", "KL(p_t || q_t)"), ("kl.csv", "t", "l_t", "L_t")],
        )
    })?;
    run.finish()
}
