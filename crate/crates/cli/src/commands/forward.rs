use langevin_core::forward::{integrate_forward_sde, sample_closed_form, ForwardSpec};
use langevin_core::{par, perturb, Ensemble, Error, RngStream};

use super::{mixture, Run};
use crate::config::{self, ForwardMethod, SampleForwardConfig};
use crate::error::CliError;
use crate::output::{gnuplot, Cell, Csv};
use crate::RunArgs;

/// Clock grid uniform up to the largest requested level, with the requested
/// levels inserted exactly. Returns the level grid and the index of each
/// requested level in it.
fn level_grid(spec: &ForwardSpec, levels: &[f64], steps: usize) -> (Vec<f64>, Vec<usize>) {
    let end = levels.iter().map(|&l| spec.clock(l)).fold(0.0, f64::max);
    let mut pts: Vec<(f64, f64, bool)> = (0..=steps.max(1))
        .map(|i| {
            let c = end * i as f64 / steps.max(1) as f64;
            (c, spec.level_at(c), false)
        })
        .collect();
    pts.extend(levels.iter().map(|&l| (spec.clock(l), l, true)));
    // requested entries sort after grid entries at the same clock and replace them
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let mut grid: Vec<(f64, f64)> = Vec::new();
    for (c, l, _) in pts {
        match grid.last_mut() {
            Some(last) if (c - last.0).abs() <= 1e-12 * end.max(1.0) => *last = (last.0, l),
            _ => grid.push((c, l)),
        }
    }
    grid[0].1 = spec.param.clean_level();
    let clocks: Vec<f64> = grid.iter().map(|g| g.0).collect();
    let index = levels
        .iter()
        .map(|&l| {
            let c = spec.clock(l);
            clocks
                .iter()
                .position(|&g| (g - c).abs() <= 1e-12 * end.max(1.0))
                .expect("requested level is on the grid")
        })
        .collect();
    (grid.into_iter().map(|g| g.1).collect(), index)
}

pub fn run(args: &RunArgs, chains: Option<usize>, steps: Option<usize>) -> Result<(), CliError> {
    let mut cfg: SampleForwardConfig = config::load(args.config.as_deref())?;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.chains = chains.unwrap_or(cfg.chains);
    cfg.steps = steps.unwrap_or(cfg.steps);
    let data = mixture(&cfg.data)?;
    if cfg.chains == 0 || cfg.levels.is_empty() {
        return Err(Error::Argument("sample-forward needs chains > 0 and at least one level".into()).into());
    }
    for &l in &cfg.levels {
        cfg.param.check_level(l)?;
    }
    let spec = ForwardSpec::new(cfg.param);
    let d = data.dim();
    let n_levels = cfg.levels.len();
    let root = RngStream::new(cfg.seed, 0);

    let (grid, index) = level_grid(&spec, &cfg.levels, cfg.steps);
    let paths: Vec<Result<Vec<f64>, Error>> = par::map_indexed(cfg.chains, |i| {
        let mut rng = root.child(i as u64);
        let mut x0 = vec![0.0; d];
        data.sample_into(&mut rng, &mut x0);
        let mut kept = Vec::with_capacity(n_levels * d);
        match cfg.method {
            ForwardMethod::Sde => {
                let path = integrate_forward_sde(&spec, &x0, &grid, &mut rng)?;
                for &k in &index {
                    kept.extend_from_slice(&path[k].state);
                }
            }
            ForwardMethod::ClosedForm => {
                for &l in &cfg.levels {
                    kept.extend(sample_closed_form(&spec, &x0, l, &mut rng)?.state);
                }
            }
        }
        Ok(kept)
    });
    let paths = paths.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut run = Run::start(args, "sample-forward", &cfg, cfg.seed)?;
    if cfg.write_samples {
        let mut header = vec!["chain_id".to_string(), "level".to_string()];
        header.extend((0..d).map(|j| format!("state_{j}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut csv = Csv::new(&header);
        for (li, &l) in cfg.levels.iter().enumerate() {
            for (i, p) in paths.iter().enumerate() {
                let mut row = vec![Cell::Int(i as u64), Cell::Num(l)];
                row.extend(p[li * d..(li + 1) * d].iter().map(|&v| Cell::Num(v)));
                csv.row(&row);
            }
        }
        run.out.write_csv("samples.csv", csv)?;
    }

    let mut csv = Csv::new(&[
        "level",
        "coord",
        "sample_mean",
        "mean_se",
        "sample_var",
        "var_se",
        "exact_mean",
        "exact_var",
    ]);
    for (li, &l) in cfg.levels.iter().enumerate() {
        let flat = paths
            .iter()
            .flat_map(|p| p[li * d..(li + 1) * d].iter().copied())
            .collect();
        let s = Ensemble::from_flat(d, flat).summary();
        let (em, ec) = perturb(&data, cfg.param, l)?.moments();
        for j in 0..d {
            csv.row(&[
                Cell::Num(l),
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
            "forward marginal variance",
            "level",
            "variance",
            false,
            &[
                ("moments.csv", "level", "sample_var", "sampled"),
                ("moments.csv", "level", "exact_var", "exact"),
            ],
        )
    })?;
    run.finish()
}
