use clap::Args;
use langevin_core::{convert_point, convert_prediction, ParamPoint, Parameterization, Prediction, PredictionKind};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Parameterization of the input point.
    #[arg(long, conflicts_with = "json")]
    from: Option<Parameterization>,
    /// Noise level in the `--from` parameterization.
    #[arg(long, conflicts_with_all = ["alpha", "sigma", "s"])]
    level: Option<f64>,
    /// VP level α.
    #[arg(long, conflicts_with_all = ["sigma", "s"])]
    alpha: Option<f64>,
    /// VE level σ.
    #[arg(long, conflicts_with = "s")]
    sigma: Option<f64>,
    /// RF level s.
    #[arg(long)]
    s: Option<f64>,
    /// Comma-separated state vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    state: Vec<f64>,
    /// Treat the input as a prediction of this kind at the point.
    #[arg(long, requires = "value")]
    kind: Option<PredictionKind>,
    /// Comma-separated prediction value.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    value: Vec<f64>,
    /// A ParamPoint or Prediction as JSON, instead of the flags above.
    #[arg(long)]
    json: Option<String>,
    /// Target parameterization (vp, ve, rf) or prediction kind (score, noise, velocity).
    #[arg(long)]
    to: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Input {
    Prediction(Prediction),
    Point(ParamPoint),
}

enum Target {
    Param(Parameterization),
    Kind(PredictionKind),
}

fn target(s: &str) -> Result<Target, CliError> {
    if let Ok(p) = s.parse::<Parameterization>() {
        return Ok(Target::Param(p));
    }
    s.parse::<PredictionKind>().map(Target::Kind).map_err(|_| {
        CliError::Usage(format!(
            "--to `{s}` is neither a parameterization nor a prediction kind"
        ))
    })
}

fn input_from_flags(a: &ConvertArgs) -> Result<Input, CliError> {
    let from = a
        .from
        .ok_or_else(|| CliError::Usage("give --from (or --json)".into()))?;
    let named = [
        (a.alpha, Parameterization::Vp, "--alpha"),
        (a.sigma, Parameterization::VeKarras, "--sigma"),
        (a.s, Parameterization::RectifiedFlow, "--s"),
    ];
    let mut level = a.level;
    for (v, p, flag) in named {
        if let Some(v) = v {
            if p != from {
                return Err(CliError::Usage(format!("{flag} is a {p} level but --from is {from}")));
            }
            level = Some(v);
        }
    }
    let level = level.ok_or_else(|| CliError::Usage("give the level (--level, --alpha, --sigma or --s)".into()))?;
    if a.state.is_empty() {
        return Err(CliError::Usage("give --state".into()));
    }
    let point = ParamPoint::new(from, a.state.clone(), level)?;
    Ok(match a.kind {
        Some(kind) => Input::Prediction(Prediction::new(kind, a.value.clone(), point)?),
        None => Input::Point(point),
    })
}

pub fn run(a: &ConvertArgs) -> Result<(), CliError> {
    let input = match &a.json {
        Some(text) => serde_json::from_str::<Input>(text)
            .map_err(|e| CliError::Config(format!("--json: not a valid point or prediction ({e})")))?,
        None => input_from_flags(a)?,
    };
    let text = match (input, target(&a.to)?) {
        (Input::Point(p), Target::Param(to)) => serde_json::to_string(&convert_point(&p, to)?),
        (Input::Point(_), Target::Kind(k)) => {
            return Err(CliError::Usage(format!(
                "a point has no prediction to convert to `{k}`; add --kind/--value"
            )))
        }
        (Input::Prediction(p), Target::Kind(k)) => serde_json::to_string(&convert_prediction(&p, k)?),
        (Input::Prediction(p), Target::Param(to)) => serde_json::to_string(&convert_prediction(&p, to.native_kind())?),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{text}");
    Ok(())
}
