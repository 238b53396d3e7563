//! MIP-encodable predictors: ReLU networks and tree ensembles, plus the
//! residual-magnitude model used by the normalized conformal score.
//!
//! Models serialize to a versioned JSON document:
//!
//! ```json
//! {"format": "comicl-model", "version": 1, "model": {"mlp": {...}}}
//! ```

mod mlp;
mod tree;

pub use mlp::{train_mlp, Layer, Mlp, MlpConfig, MlpFit, MlpTarget};
pub use tree::{
    fit_forest, fit_gbt, fit_lmdt, fit_tree, Combination, Ensemble, ForestConfig, GbtConfig, Leaf, Tree, TreeConfig,
    TreeNode,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_FORMAT: &str = "comicl-model";
pub const MODEL_VERSION: u32 = 1;

/// Lower clamp of the uncertainty model output.
pub const U_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data is empty")]
    EmptyData,
    #[error("input has {got} features, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("model document: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A trained point predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    Mlp(Mlp),
    Ensemble(Ensemble),
}

impl Predictor {
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Predictor::Mlp(m) => Some(m.input_dim()),
            Predictor::Ensemble(e) => e.n_features(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Predictor::Mlp(m) => m.output_dim(),
            Predictor::Ensemble(_) => 1,
        }
    }

    /// Regression output (length 1) or class logits.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if let Some(d) = self.input_dim() {
            if x.len() != d {
                return Err(ModelError::Dimension { expected: d, got: x.len() });
            }
        }
        Ok(match self {
            Predictor::Mlp(m) => m.forward(x),
            Predictor::Ensemble(e) => vec![e.predict(x)],
        })
    }

    /// Scalar regression prediction.
    pub fn predict_scalar(&self, x: &[f64]) -> Result<f64, ModelError> {
        let out = self.predict(x)?;
        if out.len() != 1 {
            return Err(ModelError::Invalid(format!("predictor has {} outputs", out.len())));
        }
        Ok(out[0])
    }

    /// Arg-max class of the logits; ties go to the lowest index.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize, ModelError> {
        let z = self.predict(x)?;
        Ok(argmax(&z))
    }
}

pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = k;
        }
    }
    best
}

/// Network predicting `|h(x) - y|`, clamped below at `u_floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyModel {
    pub mlp: Mlp,
    pub u_floor: f64,
}

impl UncertaintyModel {
    pub fn raw(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(self.mlp.predict(x)?[0])
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(self.raw(x)?.max(self.u_floor))
    }
}

/// Absolute residuals of `base` on `(x, y)`.
pub fn residual_targets(base: &Predictor, x: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, ModelError> {
    x.iter().zip(y).map(|(xi, yi)| Ok((base.predict_scalar(xi)? - yi).abs())).collect()
}

/// Trains the secondary model on the absolute residuals of `base`, using the
/// same rows `base` was trained on.
pub fn fit_uncertainty(
    base: &Predictor,
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &MlpConfig,
) -> Result<UncertaintyModel, ModelError> {
    if x.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let r = residual_targets(base, x, y)?;
    let fit = train_mlp(x, MlpTarget::Regression(&r), cfg)?;
    Ok(UncertaintyModel { mlp: fit.model, u_floor: U_FLOOR })
}

/// Anything stored in a model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelBody {
    Predictor(Predictor),
    Uncertainty(UncertaintyModel),
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    model: ModelBody,
}

pub fn to_json(body: &ModelBody) -> Result<String, ModelError> {
    let doc = ModelDocument { format: MODEL_FORMAT.into(), version: MODEL_VERSION, model: body.clone() };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn from_json(text: &str) -> Result<ModelBody, ModelError> {
    let doc: ModelDocument = serde_json::from_str(text)?;
    if doc.format != MODEL_FORMAT {
        return Err(ModelError::Format(format!("unexpected format `{}`", doc.format)));
    }
    if doc.version != MODEL_VERSION {
        return Err(ModelError::Format(format!("unsupported version {}", doc.version)));
    }
    match &doc.model {
        ModelBody::Predictor(Predictor::Mlp(m)) | ModelBody::Uncertainty(UncertaintyModel { mlp: m, .. }) => {
            Mlp::new(m.layers.clone())?;
        }
        ModelBody::Predictor(Predictor::Ensemble(e)) => {
            Ensemble::new(e.trees.clone(), e.combination.clone())?;
        }
    }
    Ok(doc.model)
}
