//! Versioned named-tensor archives for trained parameters.
//!
//! A checkpoint is one JSON document holding the format version, a kind tag
//! saying which stage of the protocol produced it, the architecture needed
//! to rebuild the owning model, the hash of the run configuration, and the
//! tensors in canonical order. Loading refuses version, kind, name, and
//! shape disagreements rather than guessing.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::CheckpointError;
use crate::metrics::{ClassifierConfig, TransferClassifier};
use crate::models::{CrossAlign, CrossAlignConfig, LossWeights, Vae, VaeConfig};

pub const FORMAT_VERSION: u32 = 1;

/// Which stage of the protocol produced the parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CheckpointKind {
    Meta,
    Finetuned(String),
    Pretrained,
    Classifier,
}

impl fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointKind::Meta => f.write_str("meta"),
            CheckpointKind::Finetuned(task_id) => write!(f, "finetuned:{task_id}"),
            CheckpointKind::Pretrained => f.write_str("pretrained"),
            CheckpointKind::Classifier => f.write_str("classifier"),
        }
    }
}

impl From<CheckpointKind> for String {
    fn from(kind: CheckpointKind) -> String {
        kind.to_string()
    }
}

impl TryFrom<String> for CheckpointKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.as_str() {
            "meta" => Ok(CheckpointKind::Meta),
            "pretrained" => Ok(CheckpointKind::Pretrained),
            "classifier" => Ok(CheckpointKind::Classifier),
            other => other
                .strip_prefix("finetuned:")
                .filter(|id| !id.is_empty())
                .map(|id| CheckpointKind::Finetuned(id.to_string()))
                .ok_or_else(|| format!("unknown checkpoint kind {other:?}")),
        }
    }
}

/// The architecture a checkpoint's tensors belong to, carrying everything
/// needed to rebuild the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelSpec {
    CrossAlign {
        config: CrossAlignConfig,
    },
    Vae {
        config: VaeConfig,
        weights: LossWeights,
    },
    Classifier {
        config: ClassifierConfig,
    },
}

impl ModelSpec {
    /// Freshly initialized parameters for this architecture. Base models
    /// draw from the given seed's init stream; the classifier reads the
    /// seed stored in its own config. The shapes double as the layout
    /// oracle when restoring.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        match self {
            ModelSpec::CrossAlign { config } => CrossAlign::new(config.clone()).init_params(seed),
            ModelSpec::Vae { config, .. } => Vae::new(config.clone()).init_params(seed),
            ModelSpec::Classifier { config } => TransferClassifier::init_params(config),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub model: ModelSpec,
    /// Hash of the run configuration that produced the artifact.
    pub config_hash: String,
    /// That configuration itself, stored verbatim as TOML.
    #[serde(default)]
    pub run_config: String,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(
        kind: CheckpointKind,
        model: ModelSpec,
        config_hash: impl Into<String>,
        params: &ParamSet,
    ) -> Self {
        let tensors = params
            .iter()
            .map(|(name, value)| TensorRecord {
                name: name.to_string(),
                rows: value.nrows(),
                cols: value.ncols(),
                data: value.iter().copied().collect(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            kind,
            model,
            config_hash: config_hash.into(),
            run_config: String::new(),
            tensors,
        }
    }

    pub fn with_run_config(mut self, toml: impl Into<String>) -> Self {
        self.run_config = toml.into();
        self
    }

    pub fn expect_kind(&self, want: &CheckpointKind) -> Result<(), CheckpointError> {
        if &self.kind != want {
            return Err(CheckpointError::KindMismatch {
                expected: want.to_string(),
                found: self.kind.to_string(),
            });
        }
        Ok(())
    }

    /// Rebuilds the parameters against the expected layout: every expected
    /// tensor must be present with its exact shape, and nothing else may
    /// appear.
    pub fn restore(&self, expected: &ParamSet) -> Result<ParamSet, CheckpointError> {
        let mut by_name: HashMap<&str, &TensorRecord> = HashMap::new();
        for t in &self.tensors {
            if !expected.contains(&t.name) || by_name.insert(&t.name, t).is_some() {
                return Err(CheckpointError::UnknownTensor(t.name.clone()));
            }
        }
        let mut out = ParamSet::new();
        for (name, want) in expected.iter() {
            let t = by_name
                .get(name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
            if t.data.len() != t.rows * t.cols {
                return Err(CheckpointError::DataLength {
                    name: name.to_string(),
                    rows: t.rows,
                    cols: t.cols,
                    got: t.data.len(),
                });
            }
            let (want_rows, want_cols) = want.dim();
            if t.rows != want_rows || t.cols != want_cols {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    rows: t.rows,
                    cols: t.cols,
                    want_rows,
                    want_cols,
                });
            }
            let arr = Array2::from_shape_vec((t.rows, t.cols), t.data.clone())
                .expect("length was checked against the shape");
            out.insert(name, arr);
        }
        Ok(out)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut bytes = serde_json::to_vec_pretty(ckpt).map_err(|source| CheckpointError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let json_err = |source| CheckpointError::Json {
        path: path.to_path_buf(),
        source,
    };
    // Gate on the version before interpreting the rest; later formats may
    // not share the field layout.
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(CheckpointError::FormatVersion {
            found,
            supported: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(json_err)
}
