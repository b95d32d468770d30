//! Few-shot text style transfer with meta-learned disentangling autoencoders.
//!
//! The crate trains two base models — a cross-aligned adversarial
//! encoder/decoder and a style/content-disentangled variational autoencoder —
//! under a gradient-based meta-learning loop over a set of style-pair tasks,
//! and evaluates transfers with corpus BLEU, a Kneser-Ney bigram language
//! model, a convolutional style classifier, and a latent-separation score.
//!
//! Module map:
//! - [`autodiff`]: f64 reverse-mode tape plus named parameter sets.
//! - [`corpus`]: vocabularies, style-pair tasks, batching.
//! - [`models`]: the two base models and their shared layers.
//! - [`meta`]: inner/outer loop training, fine-tuning, pretraining.
//! - [`metrics`]: the automatic evaluation suite.
//! - [`synth`]: deterministic synthetic style-pair generators.
//! - [`checkpoint`], [`config`], [`eval`]: run plumbing.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod meta;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod synth;
