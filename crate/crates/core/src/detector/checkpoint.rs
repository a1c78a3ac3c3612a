use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackboneSpec, DetectorModel, Normalization, TrainSchedule};
use crate::error::{Error, Result};
use crate::rng::sha256_hex;
use crate::scalar::Scalar;

/// Data-pipeline provenance stored with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingFingerprint {
    pub policy_preset: String,
    pub manifest_hash: String,
    pub seed: u64,
    /// No weight decay or other regularization is applied.
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: BackboneSpec,
    pub normalization: Normalization,
    pub calibration_bias: f64,
    #[serde(default)]
    pub schedule: Option<TrainSchedule>,
    #[serde(default)]
    pub fingerprint: Option<TrainingFingerprint>,
    /// Parameter tensors in network order.
    pub params: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(
        model: &DetectorModel<T>,
        schedule: Option<TrainSchedule>,
        fingerprint: Option<TrainingFingerprint>,
    ) -> Self {
        Checkpoint {
            spec: model.spec.clone(),
            normalization: model.normalization,
            calibration_bias: model.calibration_bias.as_f64(),
            schedule,
            fingerprint,
            params: model.params_f64(),
        }
    }

    /// Rebuilds the model; the weights replace any initialization.
    pub fn to_model<T: Scalar>(&self) -> Result<DetectorModel<T>> {
        let spec = BackboneSpec { pretrained: false, ..self.spec.clone() };
        let mut model: DetectorModel<T> = super::build_model(&spec, 0)?;
        model.spec = self.spec.clone();
        model.normalization = self.normalization;
        model.calibration_bias = T::lit(self.calibration_bias);
        model.load_params(&self.params)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Content hash of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::build_model;

    #[test]
    fn round_trip_preserves_weights_exactly() {
        let mut model: DetectorModel<f32> = build_model(&BackboneSpec::tiny(), 11).unwrap();
        model.calibration_bias = -0.3;
        let fp = TrainingFingerprint { policy_preset: "no_aug".into(), manifest_hash: "abc".into(), seed: 11, weight_decay: 0.0 };
        let ck = Checkpoint::from_model(&model, Some(TrainSchedule::default()), Some(fp));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let m2: DetectorModel<f32> = back.to_model().unwrap();
        assert_eq!(m2, model);
    }
}
