//! Model persistence: a single self-describing JSON document.
//!
//! Schema v1 layout:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "kind": "noisy_ss" | "moe_ss" | "moe_supervised",
//!   "model": { ... }
//! }
//! ```
//!
//! Loading refuses documents with a newer `schema_version` than this build
//! supports. Floats are written with shortest round-trip formatting, so a
//! save/load cycle reproduces the model exactly.

use std::fs;
use std::path::Path;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::baselines::{MoeModel, MoessModel};
use crate::error::{Error, Result};
use crate::moe::NoisyMoeModel;

pub const SCHEMA_VERSION: u64 = 1;

/// Any fitted model this crate can persist and predict with.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum AnyModel {
    NoisySs(NoisyMoeModel),
    MoeSs(MoessModel),
    MoeSupervised(MoeModel),
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::NoisySs(_) => "noisy_ss",
            AnyModel::MoeSs(_) => "moe_ss",
            AnyModel::MoeSupervised(_) => "moe_supervised",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnyModel::NoisySs(m) => m.dim(),
            AnyModel::MoeSs(m) => m.gmm.dim(),
            AnyModel::MoeSupervised(m) => m.experts[0].coefficients.len(),
        }
    }

    pub fn predict(&self, x: &ArrayView1<f64>) -> f64 {
        match self {
            AnyModel::NoisySs(m) => m.predict(x),
            AnyModel::MoeSs(m) => m.predict(x),
            AnyModel::MoeSupervised(m) => m.predict(x),
        }
    }

    pub fn predict_batch(&self, x: &ArrayView2<f64>) -> Array1<f64> {
        match self {
            AnyModel::NoisySs(m) => m.predict_batch(x),
            AnyModel::MoeSs(m) => m.predict_batch(x),
            AnyModel::MoeSupervised(m) => m.predict_batch(x),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    schema_version: u64,
    #[serde(flatten)]
    model: AnyModel,
}

/// Serializes a model to the schema-v1 JSON document.
pub fn model_to_string(model: &AnyModel) -> Result<String> {
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        model: model.clone(),
    };
    serde_json::to_string_pretty(&envelope).map_err(|e| Error::Serde(e.to_string()))
}

/// Parses a schema-v1 JSON document, refusing newer schema versions.
pub fn model_from_str(text: &str) -> Result<AnyModel> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Serde("missing schema_version".into()))?;
    if found > SCHEMA_VERSION {
        return Err(Error::ModelVersionMismatch {
            found,
            supported: SCHEMA_VERSION,
        });
    }
    let envelope: Envelope =
        serde_json::from_value(value).map_err(|e| Error::Serde(e.to_string()))?;
    Ok(envelope.model)
}

pub fn save_model(path: &Path, model: &AnyModel) -> Result<()> {
    fs::write(path, model_to_string(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    model_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GmmModel;
    use crate::lts::ErrorParams;
    use crate::moe::{ExpertModel, FitDiagnostics};
    use crate::rng::stream_rng;
    use crate::transition::TransitionMatrix;
    use ndarray::{array, Array1, Array2};
    use rand::Rng;

    fn arbitrary_model(seed: u64) -> NoisyMoeModel {
        let mut rng = stream_rng(seed, 0);
        let k = 3;
        let p = 2;
        let mut weights = Array1::from_shape_fn(k, |_| rng.random::<f64>() + 0.1);
        let s = weights.sum();
        weights.mapv_inplace(|w| w / s);
        let means = Array2::from_shape_fn((k, p), |_| rng.random::<f64>() * 4.0 - 2.0);
        let covs = (0..k).map(|_| Array2::eye(p)).collect();
        let gmm = GmmModel::from_parameters(weights, means, covs).unwrap();
        let experts = (0..k)
            .map(|_| ExpertModel {
                intercept: rng.random::<f64>() * 2.0 - 1.0,
                coefficients: Array1::from_shape_fn(p, |_| rng.random::<f64>() * 2.0 - 1.0),
                theta: ErrorParams::Gaussian {
                    sigma: rng.random::<f64>() + 0.05,
                },
            })
            .collect();
        let mut pi = Array2::from_shape_fn((k, k), |_| rng.random::<f64>() + 0.05);
        for j in 0..k {
            let s = pi.column(j).sum();
            for i in 0..k {
                pi[[i, j]] /= s;
            }
        }
        NoisyMoeModel {
            gmm,
            experts,
            transition: TransitionMatrix::new(pi).unwrap(),
            alpha_used: 0.5,
            diagnostics: FitDiagnostics::default(),
        }
    }

    #[test]
    fn round_trip_preserves_predictions_exactly() {
        let model = arbitrary_model(140);
        let doc = model_to_string(&AnyModel::NoisySs(model.clone())).unwrap();
        let loaded = model_from_str(&doc).unwrap();
        let mut rng = stream_rng(141, 0);
        for _ in 0..100 {
            let x = array![rng.random::<f64>() * 6.0 - 3.0, rng.random::<f64>() * 6.0 - 3.0];
            let before = model.predict(&x.view());
            let after = loaded.predict(&x.view());
            assert!(
                (before - after).abs() < 1e-15,
                "prediction changed across save/load"
            );
        }
    }

    #[test]
    fn newer_schema_version_is_refused() {
        let model = arbitrary_model(142);
        let doc = model_to_string(&AnyModel::NoisySs(model)).unwrap();
        let bumped = doc.replacen("\"schema_version\": 1", "\"schema_version\": 999", 1);
        match model_from_str(&bumped) {
            Err(Error::ModelVersionMismatch { found: 999, supported: 1 }) => {}
            other => panic!("expected ModelVersionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn save_and_load_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = AnyModel::NoisySs(arbitrary_model(143));
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.kind(), "noisy_ss");
        assert_eq!(loaded.dim(), 2);
    }

    #[test]
    fn kind_tag_is_stable() {
        let doc = model_to_string(&AnyModel::NoisySs(arbitrary_model(144))).unwrap();
        assert!(doc.contains("\"kind\": \"noisy_ss\""));
        assert!(doc.contains("\"schema_version\": 1"));
    }
}
