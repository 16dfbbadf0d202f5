use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LossSpec, MlpModel, TrainConfig};
use crate::error::Result;
use crate::oracle::GaussianMixture;

/// Trained network with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub data: GaussianMixture,
    pub init_seed: u64,
    pub final_loss: Option<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::train::WeightMode;
    use crate::types::{ModelType, PredictionKind};

    #[test]
    fn roundtrip() {
        let model = MlpModel::new(PredictionKind::Velocity, 1, &[3], &mut RngStream::new(0, 0)).unwrap();
        let c = Checkpoint {
            model,
            loss: LossSpec::new(ModelType::RectifiedFlow, WeightMode::Uniform),
            train: TrainConfig::default(),
            data: GaussianMixture::isotropic(vec![1.0], 0.5).unwrap(),
            init_seed: 0,
            final_loss: Some(0.25),
        };
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        let j = c.to_json().unwrap();
        assert!(j.contains("\"prediction_kind\": \"velocity\""));
    }
}
