//! Run configuration: one TOML document drives every command. The resolved
//! config is validated before any work starts, serialized canonically into
//! the artifacts a run produces, and hashed so downstream commands can
//! refuse to mix artifacts from different runs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::ModelSpec;
use crate::error::ConfigError;
use crate::meta::MetaConfig;
use crate::metrics::ClassifierConfig;
use crate::models::{CrossAlignConfig, LossWeights, VaeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseModel {
    CrossAlign,
    Vae,
}

impl fmt::Display for BaseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseModel::CrossAlign => f.write_str("crossalign"),
            BaseModel::Vae => f.write_str("vae"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossAlignHyper {
    pub embed_dim: usize,
    pub hidden: usize,
    pub style_dim: usize,
    pub disc_filters: usize,
    pub disc_widths: Vec<usize>,
}

impl Default for CrossAlignHyper {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 48,
            style_dim: 8,
            disc_filters: 16,
            disc_widths: vec![3, 4, 5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeHyper {
    pub embed_dim: usize,
    pub hidden: usize,
    pub d_s: usize,
    pub d_c: usize,
    pub adv_entropy_max: bool,
    pub weights: LossWeights,
    /// Steps over which the KL weight ramps from 0 to its configured value;
    /// absent means a fifth of the run's step budget.
    pub kl_warmup: Option<u64>,
}

impl Default for VaeHyper {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 48,
            d_s: 8,
            d_c: 56,
            adv_entropy_max: true,
            weights: LossWeights::default(),
            kl_warmup: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneHyper {
    pub steps: usize,
    pub lr: f64,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainHyper {
    pub steps: usize,
    pub lr: f64,
}

impl Default for PretrainHyper {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierHyper {
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub n_filters: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            widths: vec![3, 4, 5],
            n_filters: 100,
            dropout: 0.5,
            lr: 0.1,
            batch_size: 16,
            epochs: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub base_model: BaseModel,
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_min_count")]
    pub vocab_min_count: usize,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "default_support_fraction")]
    pub support_fraction: f64,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default)]
    pub crossalign: CrossAlignHyper,
    #[serde(default)]
    pub vae: VaeHyper,
    #[serde(default)]
    pub finetune: FinetuneHyper,
    #[serde(default)]
    pub pretrain: PretrainHyper,
    #[serde(default)]
    pub classifier: ClassifierHyper,
}

fn default_batch_size() -> usize {
    16
}

fn default_min_count() -> usize {
    2
}

fn default_max_seq_len() -> usize {
    crate::corpus::DEFAULT_MAX_SEQ_LEN
}

fn default_support_fraction() -> f64 {
    crate::corpus::DEFAULT_SUPPORT_FRACTION
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

fn check_positive(field: &'static str, value: usize) -> Result<(), ConfigError> {
    if value == 0 {
        return Err(invalid(field, "must be positive"));
    }
    Ok(())
}

fn check_rate(field: &'static str, value: f64) -> Result<(), ConfigError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(invalid(field, format!("must be a positive rate, got {value}")));
    }
    Ok(())
}

impl RunConfig {
    /// Smallest useful config; everything else takes defaults.
    pub fn new(base_model: BaseModel, dataset_root: &Path, output_dir: &Path) -> Self {
        toml::from_str(&format!(
            "base_model = {:?}\ndataset_root = {:?}\noutput_dir = {:?}",
            base_model.to_string(),
            dataset_root.display().to_string(),
            output_dir.display().to_string(),
        ))
        .expect("a minimal config always parses")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.dataset_root.is_dir() {
            return Err(ConfigError::MissingDatasetRoot(self.dataset_root.clone()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must fit a TOML integer"));
        }
        check_positive("batch_size", self.batch_size)?;
        check_positive("vocab_min_count", self.vocab_min_count)?;
        check_positive("max_seq_len", self.max_seq_len)?;
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return Err(invalid("support_fraction", "must lie strictly in (0, 1)"));
        }

        check_rate("meta.inner_lr", self.meta.inner_lr)?;
        check_rate("meta.outer_lr", self.meta.outer_lr)?;
        self.meta
            .validate()
            .map_err(|e| invalid("meta", e.to_string()))?;
        if self.meta.meta_batch > i64::MAX as usize {
            return Err(invalid("meta.meta_batch", "must fit a TOML integer"));
        }

        check_positive("crossalign.embed_dim", self.crossalign.embed_dim)?;
        check_positive("crossalign.hidden", self.crossalign.hidden)?;
        check_positive("crossalign.style_dim", self.crossalign.style_dim)?;
        check_positive("crossalign.disc_filters", self.crossalign.disc_filters)?;
        if self.crossalign.disc_widths.is_empty() || self.crossalign.disc_widths.contains(&0) {
            return Err(invalid(
                "crossalign.disc_widths",
                "needs at least one positive kernel width",
            ));
        }

        check_positive("vae.embed_dim", self.vae.embed_dim)?;
        check_positive("vae.hidden", self.vae.hidden)?;
        check_positive("vae.d_s", self.vae.d_s)?;
        check_positive("vae.d_c", self.vae.d_c)?;
        let w = &self.vae.weights;
        let weight_fields = [w.w_rec, w.w_kl, w.w_mul_s, w.w_adv_s, w.w_mul_c, w.w_adv_c];
        if weight_fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid(
                "vae.weights",
                "loss weights must be finite and nonnegative",
            ));
        }

        if self.finetune.steps > 0 {
            check_rate("finetune.lr", self.finetune.lr)?;
        }
        if self.pretrain.steps > 0 {
            check_rate("pretrain.lr", self.pretrain.lr)?;
        }

        check_positive("classifier.embed_dim", self.classifier.embed_dim)?;
        check_positive("classifier.n_filters", self.classifier.n_filters)?;
        check_positive("classifier.batch_size", self.classifier.batch_size)?;
        check_positive("classifier.epochs", self.classifier.epochs)?;
        if self.classifier.widths.is_empty() || self.classifier.widths.contains(&0) {
            return Err(invalid(
                "classifier.widths",
                "needs at least one positive kernel width",
            ));
        }
        if !(0.0..1.0).contains(&self.classifier.dropout) {
            return Err(invalid("classifier.dropout", "must lie in [0, 1)"));
        }
        check_rate("classifier.lr", self.classifier.lr)?;
        Ok(())
    }

    /// Canonical serialization; the form embedded in artifacts and hashed.
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self)
            .map_err(|e| invalid("(serialize)", e.to_string()))
    }

    /// Hex digest of the canonical serialization.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let text = self.to_toml()?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn crossalign_config(&self, vocab: usize) -> CrossAlignConfig {
        CrossAlignConfig {
            vocab,
            embed_dim: self.crossalign.embed_dim,
            hidden: self.crossalign.hidden,
            style_dim: self.crossalign.style_dim,
            disc_filters: self.crossalign.disc_filters,
            disc_widths: self.crossalign.disc_widths.clone(),
        }
    }

    pub fn vae_config(&self, vocab: usize) -> VaeConfig {
        VaeConfig {
            vocab,
            embed_dim: self.vae.embed_dim,
            hidden: self.vae.hidden,
            d_s: self.vae.d_s,
            d_c: self.vae.d_c,
            adv_entropy_max: self.vae.adv_entropy_max,
        }
    }

    pub fn classifier_config(&self, vocab: usize) -> ClassifierConfig {
        ClassifierConfig {
            vocab,
            embed_dim: self.classifier.embed_dim,
            widths: self.classifier.widths.clone(),
            n_filters: self.classifier.n_filters,
            dropout: self.classifier.dropout,
            lr: self.classifier.lr,
            batch_size: self.classifier.batch_size,
            seed: self.seed,
        }
    }

    /// The architecture record stored in model checkpoints.
    pub fn model_spec(&self, vocab: usize) -> ModelSpec {
        match self.base_model {
            BaseModel::CrossAlign => ModelSpec::CrossAlign {
                config: self.crossalign_config(vocab),
            },
            BaseModel::Vae => ModelSpec::Vae {
                config: self.vae_config(vocab),
                weights: self.vae.weights,
            },
        }
    }

    /// KL warmup horizon for a run budgeted at `total_steps`.
    pub fn kl_warmup_for(&self, total_steps: usize) -> u64 {
        self.vae.kl_warmup.unwrap_or(total_steps as u64 / 5)
    }
}

/// Reads a TOML run config. The boolean reports whether the file itself set
/// `seed`, so callers can decide when the environment fallback applies.
pub fn load_config(path: &Path) -> Result<(RunConfig, bool), ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |source: toml::de::Error| ConfigError::Parse {
        path: path.to_path_buf(),
        source: Box::new(source),
    };
    let doc: toml::Value = text.parse().map_err(parse_err)?;
    let seed_in_file = doc.get("seed").is_some();
    let config: RunConfig = toml::from_str(&text).map_err(parse_err)?;
    Ok((config, seed_in_file))
}
