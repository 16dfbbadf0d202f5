use clap::Args;
use langevin_core::verify::{run_suite, Check, Suite, VerifyConfig};

use crate::error::CliError;

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Suite name (core, conversions, forward, oracle, langevin, reverse, train, fokker-planck) or `all`.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Chains per Monte-Carlo ensemble.
    #[arg(long)]
    chains: Option<usize>,
}

pub fn run(a: &VerifyArgs) -> Result<(), CliError> {
    let suites: Vec<Suite> = if a.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![a.suite.parse().map_err(|e| CliError::Usage(format!("--suite: {e}")))?]
    };
    let mut cfg = VerifyConfig {
        seed: a.seed,
        ..VerifyConfig::default()
    };
    cfg.chains = a.chains.unwrap_or(cfg.chains);
    let checks: Vec<Check> = suites.into_iter().flat_map(|s| run_suite(s, &cfg)).collect();
    let w = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<13} {:<w$}  {}", c.suite.name(), c.name, c.detail);
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}/{}", c.suite, c.name))
        .collect();
    println!("{} of {} checks passed", checks.len() - failed.len(), checks.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed))
    }
}
