//! Automatic evaluation suite: corpus BLEU, Kneser-Ney perplexity,
//! classifier transfer accuracy, and embedding separation.

mod bleu;
mod classifier;
mod export;
mod lm;
mod separation;

pub use bleu::{bleu, self_bleu, Smoothing};
pub use classifier::{
    train_classifier, transfer_accuracy, AccuracyMode, ClassifierConfig, TransferClassifier,
};
pub use export::{
    crossalign_embeddings, read_embeddings_csv, vae_embeddings, write_embeddings_csv,
    EmbeddingTable,
};
pub use lm::{perplexity, train_kn_lm, KneserNeyBigramLM, DEFAULT_DISCOUNT};
pub use separation::separation_score;

use serde::{Deserialize, Serialize};

/// One task's automatic scores. Each metric is present exactly when its
/// inputs were available: `bleu_ref` needs parallel references, `acc` needs
/// a classifier, and so on. Serialized as a single JSON document.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_self: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    /// Sentences scored per direction.
    pub n_sentences: usize,
    /// Hash of the run configuration the scored artifacts came from.
    pub config_hash: String,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Field-wise mean over several reports, used by whole-suite summaries.
    /// Each optional metric averages over the reports that carry it; counts
    /// sum. The hash is kept only if every report agrees.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        fn avg(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let present: Vec<f64> = values.flatten().collect();
            if present.is_empty() {
                None
            } else {
                Some(present.iter().sum::<f64>() / present.len() as f64)
            }
        }
        let hash = if reports
            .iter()
            .all(|r| r.config_hash == reports[0].config_hash)
        {
            reports[0].config_hash.clone()
        } else {
            String::new()
        };
        Some(MetricReport {
            bleu_ref: avg(reports.iter().map(|r| r.bleu_ref)),
            bleu_self: avg(reports.iter().map(|r| r.bleu_self)),
            ppl: avg(reports.iter().map(|r| r.ppl)),
            acc: avg(reports.iter().map(|r| r.acc)),
            separation: avg(reports.iter().map(|r| r.separation)),
            n_sentences: reports.iter().map(|r| r.n_sentences).sum(),
            config_hash: hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_json_round_trips_and_elides_missing_fields() {
        let r = MetricReport {
            bleu_ref: None,
            bleu_self: Some(41.25),
            ppl: Some(12.5),
            acc: Some(0.875),
            separation: None,
            n_sentences: 64,
            config_hash: "abc123".to_string(),
        };
        let json = r.to_json();
        assert!(!json.contains("bleu_ref"));
        assert!(!json.contains("separation"));
        assert!(json.contains("bleu_self"));
        assert_eq!(MetricReport::from_json(&json).unwrap(), r);
    }

    #[test]
    fn mean_averages_present_fields_only() {
        let a = MetricReport {
            bleu_ref: Some(10.0),
            acc: Some(0.5),
            n_sentences: 3,
            config_hash: "h".to_string(),
            ..MetricReport::default()
        };
        let b = MetricReport {
            bleu_ref: None,
            acc: Some(1.0),
            n_sentences: 5,
            config_hash: "h".to_string(),
            ..MetricReport::default()
        };
        let m = MetricReport::mean(&[a, b]).unwrap();
        assert_eq!(m.bleu_ref, Some(10.0));
        assert_eq!(m.acc, Some(0.75));
        assert_eq!(m.ppl, None);
        assert_eq!(m.n_sentences, 8);
        assert_eq!(m.config_hash, "h");
        assert!(MetricReport::mean(&[]).is_none());
    }
}
