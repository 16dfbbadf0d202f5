//! Exact conversions between the VP, VE-Karras and rectified-flow
//! parameterizations, and between score / noise / velocity predictions.
//!
//! Every point conversion is a scalar rescaling of the state plus a change of
//! level, and every prediction conversion is affine in the prediction value:
//! `out = value_scale * value + state_scale * state`, where `state` is the
//! evaluation point expressed in the *source* kind's parameterization.
//! The closed forms are kept in that shape so hot loops and backpropagation
//! can reuse them without allocating.
//!
//! A score → velocity conversion mixes VP and RF variables (`x_t`, `α_t`
//! inside `v(r_s, s)`); the evaluation point is always mapped first, so the
//! result is the velocity at the RF point equivalent to the VP one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    ParamPoint, Parameterization, Prediction, PredictionKind, RF_LEVEL_MAX, RF_LEVEL_MIN_SCORE, SIGMA_MIN,
};

use Parameterization::{RectifiedFlow as Rf, VeKarras as Ve, Vp};
use PredictionKind::{Noise, Score, Velocity};

/// `target_state = state_scale * source_state` at level `level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMap {
    pub state_scale: f64,
    pub level: f64,
}

pub fn point_map(from: Parameterization, level: f64, to: Parameterization) -> Result<PointMap> {
    from.check_level(level)?;
    let map = match (from, to) {
        (a, b) if a == b => PointMap {
            state_scale: 1.0,
            level,
        },
        (Vp, Ve) => {
            let a = level;
            PointMap {
                state_scale: 1.0 / a.sqrt(),
                level: ((1.0 - a) / a).sqrt(),
            }
        }
        (Vp, Rf) => {
            let (sa, sb) = (level.sqrt(), (1.0 - level).sqrt());
            PointMap {
                state_scale: 1.0 / (sa + sb),
                level: sb / (sa + sb),
            }
        }
        (Ve, Vp) => {
            let q = 1.0 + level * level;
            PointMap {
                state_scale: 1.0 / q.sqrt(),
                level: 1.0 / q,
            }
        }
        (Ve, Rf) => PointMap {
            state_scale: 1.0 / (1.0 + level),
            level: level / (1.0 + level),
        },
        (Rf, Vp) => {
            let s = level;
            let q = (1.0 - s).powi(2) + s * s;
            PointMap {
                state_scale: 1.0 / q.sqrt(),
                level: (1.0 - s).powi(2) / q,
            }
        }
        (Rf, Ve) => PointMap {
            state_scale: 1.0 / (1.0 - level),
            level: level / (1.0 - level),
        },
        _ => unreachable!(),
    };
    if to == Rf && map.level > RF_LEVEL_MAX {
        return Err(Error::domain(
            "rectified-flow level s = .../(...)",
            format!(
                "{from} level {level} maps to s = {} beyond the clamp 1 - 1e-6",
                map.level
            ),
        ));
    }
    if to == Vp && map.level <= 0.0 {
        return Err(Error::domain(
            "VP level α = 1/(1+σ²)",
            format!("{from} level {level} underflows α to 0"),
        ));
    }
    Ok(map)
}

pub fn convert_point(p: &ParamPoint, target: Parameterization) -> Result<ParamPoint> {
    let map = point_map(p.param, p.level, target)?;
    Ok(ParamPoint {
        param: target,
        state: p.state.iter().map(|v| v * map.state_scale).collect(),
        level: map.level,
    })
}

/// Result of converting a point and converting it back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub source: ParamPoint,
    pub target: ParamPoint,
    /// Largest absolute error over state components and level after the round trip.
    pub max_abs_roundtrip_error: f64,
}

pub fn conversion_report(p: &ParamPoint, target: Parameterization) -> Result<ConversionReport> {
    let t = convert_point(p, target)?;
    let back = convert_point(&t, p.param)?;
    let err = p
        .state
        .iter()
        .zip(&back.state)
        .map(|(a, b)| (a - b).abs())
        .fold((p.level - back.level).abs(), f64::max);
    Ok(ConversionReport {
        source: p.clone(),
        target: t,
        max_abs_roundtrip_error: err,
    })
}

/// `out = value_scale * value + state_scale * state_in_source_coordinates`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionMap {
    pub value_scale: f64,
    pub state_scale: f64,
}

impl PredictionMap {
    pub const IDENTITY: PredictionMap = PredictionMap {
        value_scale: 1.0,
        state_scale: 0.0,
    };

    pub fn apply_into(&self, value: &[f64], state: &[f64], out: &mut [f64]) {
        for ((o, v), x) in out.iter_mut().zip(value).zip(state) {
            *o = self.value_scale * v + self.state_scale * x;
        }
    }
}

/// Affine map taking a `from` prediction to a `to` prediction. `source_level`
/// is the evaluation level in `from`'s native parameterization.
pub fn prediction_map(from: PredictionKind, to: PredictionKind, source_level: f64) -> Result<PredictionMap> {
    from.native_param().check_level(source_level)?;
    let m = match (from, to) {
        (a, b) if a == b => PredictionMap::IDENTITY,
        (Score, Noise) => PredictionMap {
            value_scale: -(1.0 - source_level).sqrt(),
            state_scale: 0.0,
        },
        (Score, Velocity) => {
            let a = source_level;
            let sa = a.sqrt();
            PredictionMap {
                value_scale: -(1.0 - a + (a * (1.0 - a)).sqrt()) / sa,
                state_scale: -1.0 / sa,
            }
        }
        (Noise, Score) => {
            let sigma = source_level;
            if sigma < SIGMA_MIN {
                return Err(Error::domain(
                    "s_x = -sqrt(1+σ²)/σ · ε",
                    format!("σ = {sigma:e} below {SIGMA_MIN:e}"),
                ));
            }
            PredictionMap {
                value_scale: -(1.0 + sigma * sigma).sqrt() / sigma,
                state_scale: 0.0,
            }
        }
        (Noise, Velocity) => PredictionMap {
            value_scale: 1.0 + source_level,
            state_scale: -1.0,
        },
        (Velocity, Score) => {
            let s = source_level;
            if s < RF_LEVEL_MIN_SCORE {
                return Err(Error::domain(
                    "s_x = -sqrt((1-s)²+s²)/s · (r + (1-s) v)",
                    format!("s = {s:e} below {RF_LEVEL_MIN_SCORE:e}"),
                ));
            }
            let c = -((1.0 - s).powi(2) + s * s).sqrt() / s;
            PredictionMap {
                value_scale: c * (1.0 - s),
                state_scale: c,
            }
        }
        (Velocity, Noise) => PredictionMap {
            value_scale: 1.0 - source_level,
            state_scale: 1.0,
        },
        _ => unreachable!(),
    };
    Ok(m)
}

pub fn convert_prediction(pred: &Prediction, target: PredictionKind) -> Result<Prediction> {
    let source = convert_point(&pred.at, pred.kind.native_param())?;
    let at = convert_point(&pred.at, target.native_param())?;
    let map = prediction_map(pred.kind, target, source.level)?;
    let mut value = vec![0.0; pred.value.len()];
    map.apply_into(&pred.value, &source.state, &mut value);
    Ok(Prediction {
        kind: target,
        value,
        at,
    })
}

/// Gradient of log density with respect to the state of `param`, given the
/// VP score at the equivalent point. States are rescaled copies of each other,
/// so scores rescale by the inverse factor.
pub fn native_score_from_vp(vp_score: &[f64], param: Parameterization, level: f64) -> Result<Vec<f64>> {
    // x = c · y  ⇒  ∇_y log p = c · ∇_x log p
    let c = point_map(param, level, Vp)?.state_scale;
    Ok(vp_score.iter().map(|s| s * c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn pt(param: Parameterization, state: &[f64], level: f64) -> ParamPoint {
        ParamPoint::new(param, state.to_vec(), level).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ve_to_vp_and_rf_table_values() {
        let p = pt(Ve, &[2.0], 1.0);
        let vp = convert_point(&p, Vp).unwrap();
        assert!(close(vp.state[0], 2.0 / 2f64.sqrt(), 1e-15));
        assert!(close(vp.level, 0.5, 1e-15));
        let rf = convert_point(&p, Rf).unwrap();
        assert!(close(rf.state[0], 1.0, 1e-15));
        assert!(close(rf.level, 0.5, 1e-15));
    }

    #[test]
    fn zero_noise_is_identity_embedding() {
        let p = pt(Ve, &[3.7], 0.0);
        let vp = convert_point(&p, Vp).unwrap();
        assert_eq!(vp.state, vec![3.7]);
        assert_eq!(vp.level, 1.0);
    }

    #[test]
    fn three_way_cycle() {
        let p = pt(Vp, &[0.3, -1.7, 2.2], 0.5);
        let back = convert_point(&convert_point(&convert_point(&p, Ve).unwrap(), Rf).unwrap(), Vp).unwrap();
        for (a, b) in p.state.iter().zip(&back.state) {
            assert!(close(*a, *b, 1e-12));
        }
        assert!(close(p.level, back.level, 1e-12));
    }

    #[test]
    fn rf_clamp_is_a_domain_error() {
        let p = pt(Ve, &[1.0], 1e7);
        assert!(matches!(convert_point(&p, Rf), Err(Error::Domain { .. })));
    }

    #[test]
    fn ve_noise_to_vp_score_table_value() {
        let at = pt(Ve, &[0.4], 1.0);
        let pred = Prediction::new(Noise, vec![0.5], at).unwrap();
        let s = convert_prediction(&pred, Score).unwrap();
        assert!(close(s.value[0], -(2f64.sqrt()) * 0.5, 1e-15));
        assert_eq!(s.at.param, Vp);
    }

    #[test]
    fn noise_to_score_at_zero_sigma_fails() {
        let pred = Prediction::new(Noise, vec![0.5], pt(Ve, &[0.4], 0.0)).unwrap();
        assert!(matches!(convert_prediction(&pred, Score), Err(Error::Domain { .. })));
    }

    #[test]
    fn velocity_near_pure_noise_gives_eps_equal_state() {
        let s = RF_LEVEL_MAX;
        let pred = Prediction::new(Velocity, vec![-0.8], pt(Rf, &[1.2], s)).unwrap();
        let eps = convert_prediction(&pred, Noise).unwrap();
        assert!(close(eps.value[0], 1.2, 1e-5));
    }

    #[test]
    fn score_to_velocity_matches_two_step() {
        let mut rng = RngStream::new(5, 0);
        for _ in 0..1000 {
            let alpha = 1e-3 + (1.0 - 2e-3) * rng.uniform();
            let at = pt(Vp, &[3.0 * rng.normal(), 3.0 * rng.normal()], alpha);
            let pred = Prediction::new(Score, vec![rng.normal(), rng.normal()], at).unwrap();
            let direct = convert_prediction(&pred, Velocity).unwrap();
            let via = convert_prediction(&convert_prediction(&pred, Noise).unwrap(), Velocity).unwrap();
            for (a, b) in direct.value.iter().zip(&via.value) {
                assert!(close(*a, *b, 1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn native_score_rescales() {
        // VE point (z, σ=1): x = z/√2, so s_z = s_x/√2
        let s = native_score_from_vp(&[1.0], Ve, 1.0).unwrap();
        assert!(close(s[0], 1.0 / 2f64.sqrt(), 1e-15));
    }
}
