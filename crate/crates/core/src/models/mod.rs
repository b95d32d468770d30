//! The two base models and their shared building blocks.

mod conv;
mod crossalign;
mod gru;
mod vae;

pub use conv::{conv_pool, init_conv};
pub use crossalign::{CrossAlign, CrossAlignConfig, CrossAlignOutput, DiscProbe};
pub use gru::gru_step;
pub use vae::{
    bow_distribution, kl_loss, LatentCode, LossWeights, Vae, VaeConfig, VaeEps, VaeLossBreakdown,
};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tape, Var};
use crate::corpus::Batch;
use crate::error::ModelError;

/// Decoding strategy for inference-time transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DecodeMode {
    #[default]
    Greedy,
}

/// Binds parameters onto a tape either tracked (receiving gradients) or
/// frozen (values only). Adversarial training builds its generator and
/// discriminator graphs from the same forward code by flipping binders.
#[derive(Clone, Copy)]
pub struct Binder<'a> {
    ps: &'a ParamSet,
    tracked: bool,
}

impl<'a> Binder<'a> {
    pub fn tracked(ps: &'a ParamSet) -> Self {
        Self { ps, tracked: true }
    }

    pub fn frozen(ps: &'a ParamSet) -> Self {
        Self { ps, tracked: false }
    }

    pub fn get(&self, tape: &mut Tape, name: &str) -> Result<Var, ModelError> {
        if self.tracked {
            tape.param(self.ps, name)
        } else {
            tape.frozen(self.ps, name)
        }
    }
}

/// Uniform Glorot initialization for a weight matrix.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Standard-normal draws via Box-Muller, keeping the dependency surface to
/// the uniform generator.
pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

/// Rejects batches holding token ids outside the model's vocabulary.
pub fn validate_batch(batch: &Batch, vocab_size: usize) -> Result<(), ModelError> {
    for &id in batch.token_ids.iter() {
        if id >= vocab_size {
            return Err(ModelError::VocabMismatch {
                id,
                vocab: vocab_size,
            });
        }
    }
    Ok(())
}

/// Per-row argmax of a logit matrix with ties to the lowest index; `banned`
/// columns are skipped.
pub fn argmax_rows(logits: &Array2<f64>, banned: &[usize]) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = usize::MAX;
            let mut best_v = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if banned.contains(&j) {
                    continue;
                }
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Teacher-forcing view of a batch row sequence: decoder input ids at step
/// `t` (BOS-shifted gold) for every row.
pub fn decoder_input_ids(batch: &Batch, t: usize) -> Vec<usize> {
    if t == 0 {
        vec![crate::corpus::BOS; batch.len()]
    } else {
        batch.step_ids(t - 1)
    }
}

/// Masked per-token loss weights at step `t`: `1/n_tokens` on real
/// positions, 0 on PAD, so summing step losses yields the batch's mean
/// per-token negative log-likelihood.
pub fn nll_step_weights(batch: &Batch, t: usize) -> Vec<f64> {
    let n = batch.n_tokens() as f64;
    batch
        .step_mask(t)
        .into_iter()
        .map(|m| m / n)
        .collect()
}
