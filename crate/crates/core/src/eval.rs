//! Task-level evaluation: transfer a task's held-out sentences to the
//! opposite style, score the output with the automatic metric suite, and
//! assemble a [`MetricReport`]. Test pairs drive the evaluation when the
//! task has them (enabling reference BLEU); otherwise the query split
//! stands in, without references.

use ndarray::Array2;

use crate::autodiff::ParamSet;
use crate::checkpoint::ModelSpec;
use crate::corpus::{Split, StyleTask, Vocabulary};
use crate::error::{MetricError, ModelError};
use crate::metrics::{
    bleu, crossalign_embeddings, perplexity, self_bleu, separation_score, train_kn_lm,
    transfer_accuracy, vae_embeddings, AccuracyMode, MetricReport, Smoothing, TransferClassifier,
    DEFAULT_DISCOUNT,
};
use crate::models::{CrossAlign, DecodeMode, Vae};
use crate::corpus::Batch;

/// A base model reconstructed from a checkpoint, ready to transfer.
pub enum EvalModel {
    CrossAlign(CrossAlign),
    Vae(Vae),
}

impl EvalModel {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, MetricError> {
        match spec {
            ModelSpec::CrossAlign { config } => {
                Ok(EvalModel::CrossAlign(CrossAlign::new(config.clone())))
            }
            ModelSpec::Vae { config, .. } => Ok(EvalModel::Vae(Vae::new(config.clone()))),
            ModelSpec::Classifier { .. } => Err(MetricError::InvalidArgument(
                "a classifier checkpoint cannot drive transfer".to_string(),
            )),
        }
    }

    fn vae(&self) -> Option<&Vae> {
        match self {
            EvalModel::Vae(m) => Some(m),
            EvalModel::CrossAlign(_) => None,
        }
    }
}

/// Transfers `sources` (all of style `source_label`) into `target_label`,
/// preserving order. The style-substitution target for the latent-split
/// model is the mean style code of the target training side.
pub fn transfer_corpus(
    model: &EvalModel,
    ps: &ParamSet,
    task: &StyleTask,
    sources: &[Vec<usize>],
    source_label: u8,
    target_label: u8,
    max_len: usize,
) -> Result<Vec<Vec<usize>>, ModelError> {
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    let target_emb: Option<Array2<f64>> = match model.vae() {
        Some(m) => Some(m.target_style_embedding(ps, task.side(target_label))?),
        None => None,
    };
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(64) {
        let rows: Vec<&[usize]> = chunk.iter().map(|s| s.as_slice()).collect();
        let batch = Batch::from_content(&rows, source_label);
        let mut decoded = match model {
            EvalModel::CrossAlign(m) => {
                m.transfer(ps, &batch, target_label, max_len, DecodeMode::Greedy)?
            }
            EvalModel::Vae(m) => m.transfer(
                ps,
                &batch,
                target_emb.as_ref().expect("embedding built for this model"),
                max_len,
                DecodeMode::Greedy,
            )?,
        };
        out.append(&mut decoded);
    }
    Ok(out)
}

pub struct EvalOptions {
    pub acc_mode: AccuracyMode,
    pub max_len: usize,
    pub config_hash: String,
}

struct EvalSet {
    sources: Vec<Vec<usize>>,
    source_labels: Vec<u8>,
    references: Option<Vec<Vec<usize>>>,
}

fn eval_set(task: &StyleTask) -> EvalSet {
    if let Some(pairs) = task.test_pairs.as_ref().filter(|p| !p.is_empty()) {
        return EvalSet {
            sources: pairs.iter().map(|p| p.source.clone()).collect(),
            source_labels: pairs.iter().map(|p| p.source_style).collect(),
            references: Some(pairs.iter().map(|p| p.reference.clone()).collect()),
        };
    }
    let mut sources = Vec::new();
    let mut source_labels = Vec::new();
    for label in [0u8, 1u8] {
        for &i in task.split_indices(label, Split::Query) {
            sources.push(task.side(label)[i].clone());
            source_labels.push(label);
        }
    }
    EvalSet {
        sources,
        source_labels,
        references: None,
    }
}

/// Transfers every evaluation sentence to the opposite style and scores the
/// result: BLEU against references when the task has aligned pairs, BLEU
/// against the originals, perplexity under a bigram language model trained
/// on each target side's training text, classifier transfer accuracy
/// against the target labels, and the separation of the style embeddings
/// over the evaluation sources.
pub fn evaluate_task(
    model: &EvalModel,
    ps: &ParamSet,
    task: &StyleTask,
    vocab: &Vocabulary,
    classifier: &TransferClassifier,
    opts: &EvalOptions,
) -> Result<MetricReport, MetricError> {
    let set = eval_set(task);
    if set.sources.is_empty() {
        return Err(MetricError::InvalidArgument(format!(
            "task {:?} has nothing to evaluate",
            task.task_id
        )));
    }

    // Transfer side-by-side groups, then reassemble in presentation order.
    let mut hyps: Vec<Vec<usize>> = vec![Vec::new(); set.sources.len()];
    let mut target_labels = vec![0u8; set.sources.len()];
    for source_label in [0u8, 1u8] {
        let target = 1 - source_label;
        let idx: Vec<usize> = (0..set.sources.len())
            .filter(|&i| set.source_labels[i] == source_label)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let group: Vec<Vec<usize>> = idx.iter().map(|&i| set.sources[i].clone()).collect();
        let decoded =
            transfer_corpus(model, ps, task, &group, source_label, target, opts.max_len)?;
        for (&i, d) in idx.iter().zip(decoded) {
            hyps[i] = d;
            target_labels[i] = target;
        }
    }

    let detok = |seqs: &[Vec<usize>]| -> Vec<String> {
        seqs.iter().map(|ids| vocab.detokenize(ids)).collect()
    };
    let hyp_text = detok(&hyps);
    let src_text = detok(&set.sources);

    let bleu_ref = match &set.references {
        Some(refs) => Some(bleu(&hyp_text, &detok(refs), Smoothing::None)?),
        None => None,
    };
    let bleu_self = self_bleu(&hyp_text, &src_text, Smoothing::None)?;

    let mut log_ppl_sum = 0.0;
    let mut scored_tokens = 0usize;
    for label in [0u8, 1u8] {
        let group: Vec<String> = hyp_text
            .iter()
            .zip(&target_labels)
            .filter(|(_, &t)| t == label)
            .map(|(h, _)| h.clone())
            .collect();
        if group.is_empty() {
            continue;
        }
        let train_text = detok(task.side(label));
        let lm = train_kn_lm(&train_text, DEFAULT_DISCOUNT)?;
        let ppl = perplexity(&lm, &group)?;
        // Weight each side by its scored token count (words plus one end
        // marker per sentence) so the pooled value matches a single pass.
        let tokens: usize = group
            .iter()
            .map(|s| s.split_whitespace().count() + 1)
            .sum();
        log_ppl_sum += tokens as f64 * ppl.ln();
        scored_tokens += tokens;
    }
    let ppl = (log_ppl_sum / scored_tokens as f64).exp();

    let acc = transfer_accuracy(classifier, &hyps, &target_labels, opts.acc_mode)?;

    // Undefined when every evaluation sentence comes from one side.
    let both_sides = set.source_labels.contains(&0) && set.source_labels.contains(&1);
    let separation = if both_sides {
        let table = match model {
            EvalModel::Vae(m) => vae_embeddings(m, ps, &set.sources, &set.source_labels)?,
            EvalModel::CrossAlign(m) => {
                crossalign_embeddings(m, ps, &set.sources, &set.source_labels)?
            }
        };
        match separation_score(&table.style, &table.labels) {
            Ok(s) => Some(s),
            Err(MetricError::DegenerateGeometry) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    Ok(MetricReport {
        bleu_ref,
        bleu_self: Some(bleu_self),
        ppl: Some(ppl),
        acc: Some(acc),
        separation,
        n_sentences: set.sources.len(),
        config_hash: opts.config_hash.clone(),
    })
}
