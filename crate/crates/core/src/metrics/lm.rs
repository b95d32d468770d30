//! Interpolated Kneser-Ney bigram language model and perplexity, used to
//! score the fluency of generated text against a target-side corpus.

use std::collections::{BTreeSet, HashMap};

use crate::error::MetricError;

const BOS_TOKEN: &str = "<bos>";
const EOS_TOKEN: &str = "<eos>";
const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_DISCOUNT: f64 = 0.75;

/// Bigram model with absolute discounting interpolated against the
/// continuation-count unigram distribution. Every conditional distribution
/// over the predicted vocabulary sums to one; unseen histories fall back to
/// the continuation distribution itself.
#[derive(Clone, Debug)]
pub struct KneserNeyBigramLM {
    discount: f64,
    /// history -> (token count, distinct continuation types)
    histories: HashMap<String, (usize, usize)>,
    bigrams: HashMap<(String, String), usize>,
    /// word -> distinct histories it follows, the continuation numerator
    continuations: HashMap<String, usize>,
    n_bigram_types: usize,
    /// Predicted vocabulary: every trained word type plus the end marker.
    vocab: BTreeSet<String>,
    uniform: bool,
}

/// Trains the interpolated Kneser-Ney bigram model on whitespace-tokenized
/// sentences; each sentence is framed with a begin-of-sentence history and
/// a scored end-of-sentence token.
pub fn train_kn_lm(sentences: &[String], discount: f64) -> Result<KneserNeyBigramLM, MetricError> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(MetricError::InvalidArgument(format!(
            "discount must lie strictly between 0 and 1, got {discount}"
        )));
    }
    if sentences.is_empty() {
        return Err(MetricError::InvalidArgument(
            "cannot train a language model on an empty corpus".to_string(),
        ));
    }

    let mut bigrams: HashMap<(String, String), usize> = HashMap::new();
    let mut vocab = BTreeSet::new();
    vocab.insert(EOS_TOKEN.to_string());
    for sentence in sentences {
        let mut history = BOS_TOKEN;
        for token in sentence.split_whitespace().chain([EOS_TOKEN]) {
            if token != EOS_TOKEN {
                vocab.insert(token.to_string());
            }
            *bigrams
                .entry((history.to_string(), token.to_string()))
                .or_insert(0) += 1;
            history = token;
        }
    }

    let mut histories: HashMap<String, (usize, usize)> = HashMap::new();
    let mut continuations: HashMap<String, usize> = HashMap::new();
    for ((h, w), &count) in &bigrams {
        let entry = histories.entry(h.clone()).or_insert((0, 0));
        entry.0 += count;
        entry.1 += 1;
        *continuations.entry(w.clone()).or_insert(0) += 1;
    }

    Ok(KneserNeyBigramLM {
        discount,
        histories,
        n_bigram_types: bigrams.len(),
        bigrams,
        continuations,
        vocab,
        uniform: false,
    })
}

impl KneserNeyBigramLM {
    /// Degenerate baseline assigning every vocabulary item (plus the end
    /// marker) the same probability regardless of history.
    pub fn uniform<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut vocab: BTreeSet<String> =
            tokens.iter().map(|t| t.as_ref().to_string()).collect();
        vocab.insert(EOS_TOKEN.to_string());
        Self {
            discount: DEFAULT_DISCOUNT,
            histories: HashMap::new(),
            bigrams: HashMap::new(),
            continuations: HashMap::new(),
            n_bigram_types: 0,
            vocab,
            uniform: true,
        }
    }

    /// Size of the predicted vocabulary, end marker included.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    fn map_oov<'a>(&self, token: &'a str) -> &'a str {
        if token == BOS_TOKEN || self.vocab.contains(token) {
            token
        } else {
            UNK_TOKEN
        }
    }

    fn continuation_prob(&self, word: &str) -> f64 {
        match self.continuations.get(word) {
            Some(&n) => n as f64 / self.n_bigram_types as f64,
            None => 0.0,
        }
    }

    /// P(word | history) under the interpolated model. Out-of-vocabulary
    /// tokens on either side are mapped to the unknown-word type first; a
    /// word type the model has never predicted gets probability zero.
    pub fn prob(&self, history: &str, word: &str) -> f64 {
        if self.uniform {
            return if self.vocab.contains(self.map_oov(word)) {
                1.0 / self.vocab.len() as f64
            } else {
                0.0
            };
        }
        let history = self.map_oov(history);
        let word = self.map_oov(word);
        match self.histories.get(history) {
            None => self.continuation_prob(word),
            Some(&(count, distinct)) => {
                let c_hw = self
                    .bigrams
                    .get(&(history.to_string(), word.to_string()))
                    .copied()
                    .unwrap_or(0) as f64;
                let discounted = (c_hw - self.discount).max(0.0) / count as f64;
                let backoff_mass = self.discount * distinct as f64 / count as f64;
                discounted + backoff_mass * self.continuation_prob(word)
            }
        }
    }
}

/// exp of the mean negative log-likelihood over every scored token, the
/// end-of-sentence marker included, with a begin-of-sentence initial
/// history. Any zero-probability event yields an infinite perplexity.
pub fn perplexity(lm: &KneserNeyBigramLM, sentences: &[String]) -> Result<f64, MetricError> {
    if sentences.is_empty() {
        return Err(MetricError::InvalidArgument(
            "perplexity needs at least one sentence".to_string(),
        ));
    }
    let mut log_sum = 0.0;
    let mut n_tokens = 0usize;
    for sentence in sentences {
        let mut history = BOS_TOKEN;
        for token in sentence.split_whitespace().chain([EOS_TOKEN]) {
            let p = lm.prob(history, token);
            if p <= 0.0 {
                return Ok(f64::INFINITY);
            }
            log_sum += p.ln();
            n_tokens += 1;
            history = token;
        }
    }
    Ok((-log_sum / n_tokens as f64).exp())
}
