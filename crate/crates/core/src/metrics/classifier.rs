//! Convolutional style classifier used for the transfer-accuracy metric:
//! token embeddings, parallel filter banks of several widths max-pooled
//! over time, dropout on the pooled features, and a sigmoid head.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Var};
use crate::corpus::PAD;
use crate::error::{MetricError, ModelError};
use crate::models::{conv_pool, glorot, init_conv, Binder};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub vocab: usize,
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub n_filters: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn with_vocab(vocab: usize) -> Self {
        Self {
            vocab,
            embed_dim: 32,
            widths: vec![3, 4, 5],
            n_filters: 100,
            dropout: 0.5,
            lr: 0.1,
            batch_size: 16,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), MetricError> {
        if self.vocab == 0
            || self.embed_dim == 0
            || self.widths.is_empty()
            || self.n_filters == 0
            || self.batch_size == 0
        {
            return Err(MetricError::InvalidArgument(
                "classifier dimensions must be positive".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MetricError::InvalidArgument(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(MetricError::InvalidArgument(
                "classifier learning rate must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Trained binary style classifier; `predict_proba` outputs the probability
/// that a sentence carries style label 1.
#[derive(Clone, Debug)]
pub struct TransferClassifier {
    cfg: ClassifierConfig,
    params: ParamSet,
}

/// Thresholded accuracy reproduces a fraction-correct count; the mean mode
/// averages the target-class probability mass instead.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AccuracyMode {
    #[default]
    Thresholded,
    MeanProbability,
}

fn init_classifier(cfg: &ClassifierConfig) -> ParamSet {
    let mut rng = substream(cfg.seed, &["init", "classifier"]);
    let mut ps = ParamSet::new();
    ps.insert("embed", glorot(&mut rng, cfg.vocab, cfg.embed_dim));
    init_conv(&mut ps, &mut rng, "cls", cfg.embed_dim, &cfg.widths, cfg.n_filters);
    let feat = cfg.widths.len() * cfg.n_filters;
    ps.insert("out.w", glorot(&mut rng, feat, 1));
    ps.insert("out.b", Array2::zeros((1, 1)));
    ps
}

/// Pooled features then logits for a batch of sequences; `dropout_mask` is a
/// `[B, widths*filters]` inverted-dropout mask, absent at evaluation time.
fn logits_graph(
    cfg: &ClassifierConfig,
    tape: &mut Tape,
    bind: Binder,
    seqs: &[&[usize]],
    dropout_mask: Option<Array2<f64>>,
) -> Result<Var, ModelError> {
    let embed = bind.get(tape, "embed")?;
    let mut pooled = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let ids: &[usize] = if seq.is_empty() { &[PAD] } else { seq };
        if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab) {
            return Err(ModelError::VocabMismatch {
                id: bad,
                vocab: cfg.vocab,
            });
        }
        let x = tape.rows(embed, ids);
        pooled.push(conv_pool(tape, bind, "cls", x, &cfg.widths, cfg.n_filters)?);
    }
    let mut feats = tape.concat_rows(&pooled);
    if let Some(mask) = dropout_mask {
        let m = tape.constant(mask);
        feats = tape.mul(feats, m);
    }
    let w = bind.get(tape, "out.w")?;
    let b = bind.get(tape, "out.b")?;
    let scores = tape.matmul(feats, w);
    Ok(tape.add(scores, b))
}

fn dropout_mask(
    rng: &mut rand_chacha::ChaCha8Rng,
    rows: usize,
    cols: usize,
    p: f64,
) -> Option<Array2<f64>> {
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 - p;
    Some(Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen_bool(keep) {
            1.0 / keep
        } else {
            0.0
        }
    }))
}

/// Trains on style-labeled sequences with a held-out validation slice and
/// returns the classifier together with its validation accuracy.
pub fn train_classifier(
    cfg: &ClassifierConfig,
    seqs: &[Vec<usize>],
    labels: &[u8],
    epochs: usize,
) -> Result<(TransferClassifier, f64), MetricError> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(MetricError::InvalidArgument(
            "cannot train a classifier without sentences".to_string(),
        ));
    }
    if seqs.len() != labels.len() {
        return Err(MetricError::InvalidArgument(format!(
            "{} sentences but {} labels",
            seqs.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricError::InvalidArgument(format!(
            "style labels must be 0 or 1, got {bad}"
        )));
    }

    let mut order: Vec<usize> = (0..seqs.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = substream(cfg.seed, &["classifier", "val-split"]);
        order.shuffle(&mut rng);
    }
    let n_val = if seqs.len() >= 2 {
        (seqs.len() / 10).max(1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);

    let mut ps = init_classifier(cfg);
    let feat = cfg.widths.len() * cfg.n_filters;
    for epoch in 0..epochs {
        let mut epoch_order = train_idx.to_vec();
        {
            use rand::seq::SliceRandom;
            let mut rng =
                substream(cfg.seed, &["classifier", "epoch", &epoch.to_string()]);
            epoch_order.shuffle(&mut rng);
        }
        for (step, chunk) in epoch_order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| seqs[i].as_slice()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| labels[i] as f64).collect();
            let row_w = vec![1.0 / batch.len() as f64; batch.len()];
            let mut drop_rng = substream(
                cfg.seed,
                &["classifier", "drop", &epoch.to_string(), &step.to_string()],
            );
            let mask = dropout_mask(&mut drop_rng, batch.len(), feat, cfg.dropout);
            let mut tape = Tape::new();
            let logits =
                logits_graph(cfg, &mut tape, Binder::tracked(&ps), &batch, mask)?;
            let loss = tape.bce_rows(logits, &targets, &row_w);
            if !tape.scalar(loss).is_finite() {
                return Err(MetricError::Model(ModelError::NonFinite));
            }
            let grads = tape.grads(loss, &ps);
            ps.add_scaled(-cfg.lr, &grads);
        }
    }

    let clf = TransferClassifier {
        cfg: cfg.clone(),
        params: ps,
    };
    let val_acc = if val_idx.is_empty() {
        f64::NAN
    } else {
        let val_seqs: Vec<Vec<usize>> = val_idx.iter().map(|&i| seqs[i].clone()).collect();
        let val_labels: Vec<u8> = val_idx.iter().map(|&i| labels[i]).collect();
        transfer_accuracy(&clf, &val_seqs, &val_labels, AccuracyMode::Thresholded)?
    };
    Ok((clf, val_acc))
}

impl TransferClassifier {
    /// Freshly initialized parameters for this configuration; also the
    /// layout oracle for stored weights.
    pub fn init_params(cfg: &ClassifierConfig) -> ParamSet {
        init_classifier(cfg)
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Rebuilds a classifier from stored weights.
    pub fn from_parts(cfg: ClassifierConfig, params: ParamSet) -> Result<Self, MetricError> {
        cfg.validate()?;
        let expected = init_classifier(&cfg);
        if !params.aligned_with(&expected) {
            return Err(MetricError::Model(ModelError::MissingParam(
                "classifier weights do not match the configured architecture".to_string(),
            )));
        }
        Ok(Self { cfg, params })
    }

    /// Probability that the sentence carries style label 1 (no dropout).
    pub fn predict_proba(&self, seq: &[usize]) -> Result<f64, MetricError> {
        Ok(self.predict_batch(&[seq])?[0])
    }

    fn predict_batch(&self, seqs: &[&[usize]]) -> Result<Vec<f64>, MetricError> {
        let mut tape = Tape::new();
        let logits = logits_graph(
            &self.cfg,
            &mut tape,
            Binder::frozen(&self.params),
            seqs,
            None,
        )?;
        let probs = tape.sigmoid(logits);
        Ok(tape.value(probs).column(0).to_vec())
    }
}

/// Fraction of sentences the classifier assigns to their target style
/// (probability mass in the mean mode).
pub fn transfer_accuracy(
    clf: &TransferClassifier,
    seqs: &[Vec<usize>],
    target_labels: &[u8],
    mode: AccuracyMode,
) -> Result<f64, MetricError> {
    if seqs.is_empty() {
        return Err(MetricError::InvalidArgument(
            "transfer accuracy needs at least one sentence".to_string(),
        ));
    }
    if seqs.len() != target_labels.len() {
        return Err(MetricError::InvalidArgument(format!(
            "{} sentences but {} target labels",
            seqs.len(),
            target_labels.len()
        )));
    }
    if let Some(&bad) = target_labels.iter().find(|&&l| l > 1) {
        return Err(MetricError::InvalidArgument(format!(
            "style labels must be 0 or 1, got {bad}"
        )));
    }
    let mut total = 0.0;
    for (chunk, lbl_chunk) in seqs.chunks(64).zip(target_labels.chunks(64)) {
        let refs: Vec<&[usize]> = chunk.iter().map(|s| s.as_slice()).collect();
        let probs = clf.predict_batch(&refs)?;
        for (p, &y) in probs.iter().zip(lbl_chunk) {
            total += match mode {
                AccuracyMode::Thresholded => {
                    let predicted = if *p > 0.5 { 1 } else { 0 };
                    if predicted == y {
                        1.0
                    } else {
                        0.0
                    }
                }
                AccuracyMode::MeanProbability => {
                    if y == 1 {
                        *p
                    } else {
                        1.0 - *p
                    }
                }
            };
        }
    }
    Ok(total / seqs.len() as f64)
}
