use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, LinearSoftmaxModel, LossSpec, MlpModel, Model, StageTwoMode};
use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ProbVector, RngStream};

pub const MODEL_SCHEMA: u32 = 1;

/// How a model was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<StageTwoMode>,
    pub loss_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<ProbVector>,
    pub alpha: f64,
    pub seed: RngStream,
}

impl Provenance {
    pub fn stage1(seed: RngStream) -> Self {
        Self {
            stage: 1,
            mode: None,
            loss_kind: "plain-ce".into(),
            prior: None,
            alpha: 0.0,
            seed,
        }
    }

    pub fn stage2(mode: StageTwoMode, prior: ProbVector, alpha: f64, seed: RngStream) -> Self {
        Self {
            stage: 2,
            mode: Some(mode),
            loss_kind: "logit-adjusted".into(),
            prior: Some(prior),
            alpha,
            seed,
        }
    }

    pub fn is_logit_adjusted(&self) -> bool {
        self.loss_kind == "logit-adjusted"
    }

    /// The training loss this provenance records.
    pub fn loss(&self) -> Result<LossSpec> {
        match (self.loss_kind.as_str(), &self.prior) {
            ("plain-ce", _) => Ok(LossSpec::PlainCe),
            ("logit-adjusted", Some(p)) => LossSpec::logit_adjusted(p.clone(), self.alpha),
            ("logit-adjusted", None) => Err(Error::Schema("logit-adjusted model without a prior".into())),
            (other, _) => Err(Error::Schema(format!("unknown loss kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: Model,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ArchJson {
    Linear { classes: usize, dims: usize },
    Mlp { classes: usize, dims: usize, hidden: usize, activation: Activation },
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_biases: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    schema: u32,
    arch: ArchJson,
    params: ParamsJson,
    provenance: Provenance,
}

fn to_json(saved: &SavedModel) -> ModelJson {
    let (arch, params) = match &saved.model {
        Model::Linear(m) => (
            ArchJson::Linear { classes: m.num_classes(), dims: m.dims() },
            ParamsJson {
                weights: m.weights().to_rows(),
                biases: m.biases().to_vec(),
                hidden_weights: None,
                hidden_biases: None,
            },
        ),
        Model::Mlp(m) => (
            ArchJson::Mlp {
                classes: m.head().num_classes(),
                dims: m.hidden_weights().cols(),
                hidden: m.hidden_units(),
                activation: m.activation(),
            },
            ParamsJson {
                weights: m.head().weights().to_rows(),
                biases: m.head().biases().to_vec(),
                hidden_weights: Some(m.hidden_weights().to_rows()),
                hidden_biases: Some(m.hidden_biases().to_vec()),
            },
        ),
    };
    ModelJson { schema: MODEL_SCHEMA, arch, params, provenance: saved.provenance.clone() }
}

fn from_json(j: ModelJson) -> Result<SavedModel> {
    if j.schema != MODEL_SCHEMA {
        return Err(Error::Schema(format!(
            "model schema {} is not supported (expected {MODEL_SCHEMA})",
            j.schema
        )));
    }
    let model = match j.arch {
        ArchJson::Linear { classes, dims } => {
            let w = Matrix::from_rows(&j.params.weights, dims)?;
            if w.rows() != classes {
                return Err(Error::Schema("weight rows do not match class count".into()));
            }
            Model::Linear(LinearSoftmaxModel::new(w, j.params.biases)?)
        }
        ArchJson::Mlp { classes, dims, hidden, activation } => {
            let hw = j
                .params
                .hidden_weights
                .ok_or_else(|| Error::Schema("mlp without hidden_weights".into()))?;
            let hb = j
                .params
                .hidden_biases
                .ok_or_else(|| Error::Schema("mlp without hidden_biases".into()))?;
            let hw = Matrix::from_rows(&hw, dims)?;
            let head = LinearSoftmaxModel::new(Matrix::from_rows(&j.params.weights, hidden)?, j.params.biases)?;
            if hw.rows() != hidden || head.num_classes() != classes {
                return Err(Error::Schema("mlp parameter shapes do not match arch".into()));
            }
            Model::Mlp(MlpModel::new(hw, hb, activation, head)?)
        }
    };
    Ok(SavedModel { model, provenance: j.provenance })
}

pub fn save_model(saved: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    let s = serde_json::to_string_pretty(&to_json(saved))?;
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

pub(crate) fn parse_model(text: &str) -> Result<SavedModel> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    if let Some(v) = raw.get("schema").and_then(|v| v.as_u64()) {
        if v != MODEL_SCHEMA as u64 {
            return Err(Error::Schema(format!("model schema {v} is not supported (expected {MODEL_SCHEMA})")));
        }
    }
    from_json(serde_json::from_value(raw)?)
}
