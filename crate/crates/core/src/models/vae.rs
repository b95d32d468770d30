//! Disentangled variational autoencoder: a GRU VAE whose latent splits into
//! a style part and a content part. Four auxiliary heads shape the split:
//! multitask classifiers force each part to carry its own factor (style
//! label from style latent, bag-of-words from content latent), and two
//! adversary heads read the opposite part, with the encoder trained to make
//! their predictions uninformative. Transfer substitutes the style part of
//! the latent at decode time.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Var};
use crate::corpus::{Batch, Vocabulary, BOS, EOS, PAD, UNK};
use crate::error::ModelError;

use super::gru::{gru_step, init_gru, masked_update};
use super::{
    argmax_rows, decoder_input_ids, glorot, nll_step_weights, normal_matrix, validate_batch,
    Binder, DecodeMode,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub d_s: usize,
    pub d_c: usize,
    /// Adversarial sign switch. `true` (the default) trains the encoder to
    /// maximize the adversaries' prediction entropy, matching the stated
    /// goal of hiding the opposite factor; `false` keeps the literal
    /// minimum-entropy reading of the printed objective.
    pub adv_entropy_max: bool,
}

impl VaeConfig {
    pub fn with_vocab(vocab: usize) -> Self {
        Self {
            vocab,
            embed_dim: 32,
            hidden: 64,
            d_s: 8,
            d_c: 56,
            adv_entropy_max: true,
        }
    }

    fn adv_sign(&self) -> f64 {
        if self.adv_entropy_max {
            -1.0
        } else {
            1.0
        }
    }
}

/// Loss weights for the autoencoder objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_rec: f64,
    pub w_kl: f64,
    pub w_mul_s: f64,
    pub w_adv_s: f64,
    pub w_mul_c: f64,
    pub w_adv_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_rec: 1.0,
            w_kl: 1.0,
            w_mul_s: 10.0,
            w_adv_s: 1.0,
            w_mul_c: 1.0,
            w_adv_c: 0.03,
        }
    }
}

impl LossWeights {
    pub fn reconstruction_only() -> Self {
        Self {
            w_rec: 1.0,
            w_kl: 0.0,
            w_mul_s: 0.0,
            w_adv_s: 0.0,
            w_mul_c: 0.0,
            w_adv_c: 0.0,
        }
    }

    /// Reconstruction plus KL, auxiliary heads off.
    pub fn plain_vae() -> Self {
        Self {
            w_rec: 1.0,
            w_kl: 1.0,
            ..Self::reconstruction_only()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.w_rec,
            self.w_kl,
            self.w_mul_s,
            self.w_adv_s,
            self.w_mul_c,
            self.w_adv_c,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::InvalidArgument(
                "loss weights must be finite and nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Reparameterization noise for one batch, recorded so any forward pass can
/// be replayed exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeEps {
    pub s: Array2<f64>,
    pub c: Array2<f64>,
}

impl VaeEps {
    pub fn draw(rng: &mut rand_chacha::ChaCha8Rng, b: usize, d_s: usize, d_c: usize) -> Self {
        Self {
            s: normal_matrix(rng, b, d_s),
            c: normal_matrix(rng, b, d_c),
        }
    }

    pub fn zeros(b: usize, d_s: usize, d_c: usize) -> Self {
        Self {
            s: Array2::zeros((b, d_s)),
            c: Array2::zeros((b, d_c)),
        }
    }
}

/// Batched latent codes: one row per sequence, with the noise that produced
/// the samples.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub style_mu: Array2<f64>,
    pub style_logvar: Array2<f64>,
    pub content_mu: Array2<f64>,
    pub content_logvar: Array2<f64>,
    pub style_sample: Array2<f64>,
    pub content_sample: Array2<f64>,
    pub eps: VaeEps,
}

/// `KL(N(mu, sigma^2) || N(0, I))` summed over style and content parts,
/// averaged over the batch: `0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2)`.
pub fn kl_loss(code: &LatentCode) -> f64 {
    let part = |mu: &Array2<f64>, lv: &Array2<f64>| -> f64 {
        mu.iter()
            .zip(lv.iter())
            .map(|(&m, &l)| m * m + l.exp() - 1.0 - l)
            .sum::<f64>()
    };
    let b = code.style_mu.nrows().max(1) as f64;
    0.5 * (part(&code.style_mu, &code.style_logvar)
        + part(&code.content_mu, &code.content_logvar))
        / b
}

/// Empirical token distribution of a sentence over the vocabulary,
/// excluding special ids; the bag-of-words target.
pub fn bow_distribution(seq: &[usize], vocab: &Vocabulary) -> Result<Vec<f64>, ModelError> {
    let mut counts = vec![0usize; vocab.len()];
    let mut n = 0usize;
    for &id in seq {
        if id == PAD || id == BOS || id == EOS || id == UNK {
            continue;
        }
        if id >= vocab.len() {
            return Err(ModelError::VocabMismatch {
                id,
                vocab: vocab.len(),
            });
        }
        counts[id] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(ModelError::DegenerateSentence);
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / n as f64)
        .collect())
}

/// Per-component loss values of one forward pass. The `j_adv_*` entries
/// carry the configured adversarial sign, so
/// `total = w_rec*j_rec + w_kl*kl + w_mul_s*j_mul_s + w_adv_s*j_adv_s +
/// w_mul_c*j_mul_c + w_adv_c*j_adv_c` holds exactly; their magnitudes are
/// the adversaries' prediction entropies. The `j_dis_*` values train the
/// adversaries and never enter the total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLossBreakdown {
    pub j_rec: f64,
    pub kl: f64,
    pub j_mul_s: f64,
    pub j_adv_s: f64,
    pub j_mul_c: f64,
    pub j_adv_c: f64,
    pub j_dis_s: f64,
    pub j_dis_c: f64,
    pub total: f64,
}

struct VaeEncNodes {
    mu_s: Var,
    lv_s: Var,
    mu_c: Var,
    lv_c: Var,
    s_sample: Var,
    c_sample: Var,
}

pub struct Vae {
    cfg: VaeConfig,
}

impl Vae {
    pub fn new(cfg: VaeConfig) -> Self {
        assert!(cfg.vocab > UNK, "vocab must include specials");
        assert!(cfg.d_s >= 1 && cfg.d_c >= 1);
        Self { cfg }
    }

    pub fn config(&self) -> &VaeConfig {
        &self.cfg
    }

    pub fn init_params(&self, seed: u64) -> ParamSet {
        let c = &self.cfg;
        let mut rng = crate::rng::substream(seed, &["init", "vae"]);
        let mut ps = ParamSet::new();
        ps.insert("embed", glorot(&mut rng, c.vocab, c.embed_dim));
        init_gru(&mut ps, &mut rng, "enc", c.embed_dim, c.hidden);
        for (name, d) in [
            ("style_mu", c.d_s),
            ("style_lv", c.d_s),
            ("content_mu", c.d_c),
            ("content_lv", c.d_c),
        ] {
            ps.insert(&format!("{name}.w"), glorot(&mut rng, c.hidden, d));
            ps.insert(&format!("{name}.b"), Array2::zeros((1, d)));
        }
        init_gru(
            &mut ps,
            &mut rng,
            "dec",
            c.embed_dim + c.d_s + c.d_c,
            c.hidden,
        );
        ps.insert("dec.wout", glorot(&mut rng, c.hidden, c.vocab));
        ps.insert("dec.bout", Array2::zeros((1, c.vocab)));
        ps.insert("mul_style.w", glorot(&mut rng, c.d_s, 2));
        ps.insert("mul_style.b", Array2::zeros((1, 2)));
        ps.insert("dis_style.w", glorot(&mut rng, c.d_c, 2));
        ps.insert("dis_style.b", Array2::zeros((1, 2)));
        ps.insert("mul_content.w", glorot(&mut rng, c.d_c, c.vocab));
        ps.insert("mul_content.b", Array2::zeros((1, c.vocab)));
        ps.insert("dis_content.w", glorot(&mut rng, c.d_s, c.vocab));
        ps.insert("dis_content.b", Array2::zeros((1, c.vocab)));
        ps
    }

    /// True for the adversary heads, which train on their own objective and
    /// never from the autoencoder total.
    pub fn is_disc_param(name: &str) -> bool {
        name.starts_with("dis_style.") || name.starts_with("dis_content.")
    }

    fn linear(
        &self,
        tape: &mut Tape,
        bind: Binder,
        prefix: &str,
        x: Var,
    ) -> Result<Var, ModelError> {
        let w = bind.get(tape, &format!("{prefix}.w"))?;
        let b = bind.get(tape, &format!("{prefix}.b"))?;
        let s = tape.matmul(x, w);
        Ok(tape.add(s, b))
    }

    fn encode_sample_graph(
        &self,
        tape: &mut Tape,
        bind: Binder,
        batch: &Batch,
        eps: &VaeEps,
    ) -> Result<VaeEncNodes, ModelError> {
        validate_batch(batch, self.cfg.vocab)?;
        let b = batch.len();
        assert_eq!(eps.s.dim(), (b, self.cfg.d_s), "eps.s shape mismatch");
        assert_eq!(eps.c.dim(), (b, self.cfg.d_c), "eps.c shape mismatch");
        let embed = bind.get(tape, "embed")?;
        let mut h = tape.zeros(b, self.cfg.hidden);
        for step in 0..batch.width() {
            let emb = tape.rows(embed, &batch.step_ids(step));
            let hn = gru_step(tape, bind, "enc", emb, h)?;
            h = masked_update(tape, h, hn, &batch.step_mask(step));
        }
        let mu_s = self.linear(tape, bind, "style_mu", h)?;
        let lv_s = self.linear(tape, bind, "style_lv", h)?;
        let mu_c = self.linear(tape, bind, "content_mu", h)?;
        let lv_c = self.linear(tape, bind, "content_lv", h)?;
        let sample = |tape: &mut Tape, mu: Var, lv: Var, e: &Array2<f64>| {
            let half = tape.affine(lv, 0.5, 0.0);
            let sigma = tape.exp(half);
            let ec = tape.constant(e.clone());
            let noise = tape.mul(sigma, ec);
            tape.add(mu, noise)
        };
        let s_sample = sample(tape, mu_s, lv_s, &eps.s);
        let c_sample = sample(tape, mu_c, lv_c, &eps.c);
        Ok(VaeEncNodes {
            mu_s,
            lv_s,
            mu_c,
            lv_c,
            s_sample,
            c_sample,
        })
    }

    fn kl_node(&self, tape: &mut Tape, enc: &VaeEncNodes, b: usize) -> Var {
        let part = |tape: &mut Tape, mu: Var, lv: Var| {
            let mu2 = tape.mul(mu, mu);
            let var = tape.exp(lv);
            let s = tape.add(mu2, var);
            let s = tape.sub(s, lv);
            let s = tape.affine(s, 1.0, -1.0);
            tape.sum_all(s)
        };
        let ks = part(tape, enc.mu_s, enc.lv_s);
        let kc = part(tape, enc.mu_c, enc.lv_c);
        let total = tape.add(ks, kc);
        tape.affine(total, 0.5 / b as f64, 0.0)
    }

    /// Teacher-forced reconstruction with the latent concatenated to every
    /// decoder input step; initial decoder state is zero.
    fn decode_loss_graph(
        &self,
        tape: &mut Tape,
        bind: Binder,
        batch: &Batch,
        z: Var,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        if batch.n_tokens() == 0 {
            return Err(ModelError::DegenerateBatch(
                "no non-PAD tokens to reconstruct".to_string(),
            ));
        }
        let embed = bind.get(tape, "embed")?;
        let wout = bind.get(tape, "dec.wout")?;
        let bout = bind.get(tape, "dec.bout")?;
        let mut h = tape.zeros(batch.len(), self.cfg.hidden);
        let mut step_losses = Vec::with_capacity(batch.width());
        let mut logits_nodes = Vec::with_capacity(batch.width());
        for step in 0..batch.width() {
            let emb = tape.rows(embed, &decoder_input_ids(batch, step));
            let inp = tape.concat_cols(&[emb, z]);
            h = gru_step(tape, bind, "dec", inp, h)?;
            let scores = tape.matmul(h, wout);
            let logits = tape.add(scores, bout);
            logits_nodes.push(logits);
            let w = nll_step_weights(batch, step);
            step_losses.push(tape.ce_rows(logits, &batch.step_ids(step), &w));
        }
        Ok((tape.add_many(&step_losses), logits_nodes))
    }

    /// Bag-of-words target rows for a batch; rows whose content is entirely
    /// special tokens get zero weight instead of failing the whole batch.
    fn bow_targets(&self, batch: &Batch) -> (Array2<f64>, Vec<f64>) {
        let v = self.cfg.vocab;
        let mut targets = Array2::zeros((batch.len(), v));
        let mut flags = vec![0.0; batch.len()];
        for i in 0..batch.len() {
            let content = batch.row_content(i);
            let mut n = 0usize;
            for &id in &content {
                if id == PAD || id == BOS || id == EOS || id == UNK {
                    continue;
                }
                targets[[i, id]] += 1.0;
                n += 1;
            }
            if n > 0 {
                let mut row = targets.row_mut(i);
                row.mapv_inplace(|x| x / n as f64);
                flags[i] = 1.0;
            } else {
                // ce_dist requires rows summing to 1; give the unused row a
                // valid placeholder distribution under weight zero.
                targets[[i, UNK]] = 1.0;
            }
        }
        let valid = flags.iter().sum::<f64>().max(1.0);
        let weights = flags.into_iter().map(|f| f / valid).collect();
        (targets, weights)
    }

    fn mean_weights(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    /// Builds the full objective graph. `bind` controls whether
    /// encoder/decoder/multitask parameters are tracked; adversary heads are
    /// always frozen here (they train in [`Vae::disc_step_grads`]), and the
    /// reported `j_dis_*` values are computed on detached samples.
    fn objective_graph(
        &self,
        tape: &mut Tape,
        bind: Binder,
        batch: &Batch,
        weights: &LossWeights,
        eps: &VaeEps,
        ps: &ParamSet,
    ) -> Result<(Var, VaeLossBreakdown), ModelError> {
        weights.validate()?;
        let b = batch.len();
        let frozen = Binder::frozen(ps);
        let enc = self.encode_sample_graph(tape, bind, batch, eps)?;
        let z = tape.concat_cols(&[enc.s_sample, enc.c_sample]);
        let (j_rec, _) = self.decode_loss_graph(tape, bind, batch, z)?;
        let kl = self.kl_node(tape, &enc, b);

        let labels: Vec<usize> = batch.style_label.iter().map(|&l| l as usize).collect();
        let mw = Self::mean_weights(b);

        let mul_s_logits = self.linear(tape, bind, "mul_style", enc.s_sample)?;
        let j_mul_s = tape.ce_rows(mul_s_logits, &labels, &mw);

        let adv_s_logits = self.linear(tape, frozen, "dis_style", enc.c_sample)?;
        let adv_s_entropy = tape.entropy_rows(adv_s_logits, &mw);

        let (bow, bow_w) = self.bow_targets(batch);
        let mul_c_logits = self.linear(tape, bind, "mul_content", enc.c_sample)?;
        let j_mul_c = tape.ce_dist(mul_c_logits, &bow, &bow_w);

        let adv_c_logits = self.linear(tape, frozen, "dis_content", enc.s_sample)?;
        let adv_c_entropy = tape.entropy_rows(adv_c_logits, &mw);

        // Adversary training losses, reported only: detached inputs, frozen
        // heads, dead-end nodes.
        let c_detached = tape.detach(enc.c_sample);
        let s_detached = tape.detach(enc.s_sample);
        let dis_s_logits = self.linear(tape, frozen, "dis_style", c_detached)?;
        let j_dis_s = tape.ce_rows(dis_s_logits, &labels, &mw);
        let dis_c_logits = self.linear(tape, frozen, "dis_content", s_detached)?;
        let j_dis_c = tape.ce_dist(dis_c_logits, &bow, &bow_w);

        let sign = self.cfg.adv_sign();
        let terms = [
            tape.scale(j_rec, weights.w_rec),
            tape.scale(kl, weights.w_kl),
            tape.scale(j_mul_s, weights.w_mul_s),
            tape.scale(adv_s_entropy, weights.w_adv_s * sign),
            tape.scale(j_mul_c, weights.w_mul_c),
            tape.scale(adv_c_entropy, weights.w_adv_c * sign),
        ];
        let total = tape.add_many(&terms);
        let breakdown = VaeLossBreakdown {
            j_rec: tape.scalar(j_rec),
            kl: tape.scalar(kl),
            j_mul_s: tape.scalar(j_mul_s),
            j_adv_s: sign * tape.scalar(adv_s_entropy),
            j_mul_c: tape.scalar(j_mul_c),
            j_adv_c: sign * tape.scalar(adv_c_entropy),
            j_dis_s: tape.scalar(j_dis_s),
            j_dis_c: tape.scalar(j_dis_c),
            total: tape.scalar(total),
        };
        Ok((total, breakdown))
    }

    /// Encodes a batch, drawing fresh reparameterization noise.
    pub fn encode(
        &self,
        ps: &ParamSet,
        batch: &Batch,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<LatentCode, ModelError> {
        let eps = VaeEps::draw(rng, batch.len(), self.cfg.d_s, self.cfg.d_c);
        self.encode_with_eps(ps, batch, &eps)
    }

    /// Encodes a batch under the given noise; replaying the same noise
    /// reproduces the same code exactly.
    pub fn encode_with_eps(
        &self,
        ps: &ParamSet,
        batch: &Batch,
        eps: &VaeEps,
    ) -> Result<LatentCode, ModelError> {
        let mut tape = Tape::new();
        let enc = self.encode_sample_graph(&mut tape, Binder::frozen(ps), batch, eps)?;
        Ok(LatentCode {
            style_mu: tape.value(enc.mu_s).clone(),
            style_logvar: tape.value(enc.lv_s).clone(),
            content_mu: tape.value(enc.mu_c).clone(),
            content_logvar: tape.value(enc.lv_c).clone(),
            style_sample: tape.value(enc.s_sample).clone(),
            content_sample: tape.value(enc.c_sample).clone(),
            eps: eps.clone(),
        })
    }

    /// Style-classifier cross entropy on style samples.
    pub fn multitask_style_loss(
        &self,
        ps: &ParamSet,
        style_sample: &Array2<f64>,
        labels: &[u8],
    ) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(style_sample.clone());
        let logits = self.linear(&mut tape, Binder::frozen(ps), "mul_style", x)?;
        let ids: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let loss = tape.ce_rows(logits, &ids, &Self::mean_weights(labels.len()));
        Ok(tape.scalar(loss))
    }

    /// `(J_dis_s, J_adv_s)`: the style-from-content adversary's training
    /// cross entropy and its prediction entropy (the encoder's objective is
    /// the entropy under the configured sign).
    pub fn adversarial_style_pair(
        &self,
        ps: &ParamSet,
        content_sample: &Array2<f64>,
        labels: &[u8],
    ) -> Result<(f64, f64), ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(content_sample.clone());
        let logits = self.linear(&mut tape, Binder::frozen(ps), "dis_style", x)?;
        let ids: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let mw = Self::mean_weights(labels.len());
        let dis = tape.ce_rows(logits, &ids, &mw);
        let adv = tape.entropy_rows(logits, &mw);
        Ok((tape.scalar(dis), tape.scalar(adv)))
    }

    /// Bag-of-words cross entropy of the content head.
    pub fn multitask_content_loss(
        &self,
        ps: &ParamSet,
        content_sample: &Array2<f64>,
        bow_target: &Array2<f64>,
    ) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(content_sample.clone());
        let logits = self.linear(&mut tape, Binder::frozen(ps), "mul_content", x)?;
        let n = bow_target.nrows();
        let loss = tape.ce_dist(logits, bow_target, &Self::mean_weights(n));
        Ok(tape.scalar(loss))
    }

    /// `(J_dis_c, J_adv_c)`: the BoW-from-style adversary's training cross
    /// entropy and its prediction entropy.
    pub fn adversarial_content_pair(
        &self,
        ps: &ParamSet,
        style_sample: &Array2<f64>,
        bow_target: &Array2<f64>,
    ) -> Result<(f64, f64), ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(style_sample.clone());
        let logits = self.linear(&mut tape, Binder::frozen(ps), "dis_content", x)?;
        let n = bow_target.nrows();
        let mw = Self::mean_weights(n);
        let dis = tape.ce_dist(logits, bow_target, &mw);
        let adv = tape.entropy_rows(logits, &mw);
        Ok((tape.scalar(dis), tape.scalar(adv)))
    }

    /// The weighted objective and its component breakdown.
    pub fn total_loss(
        &self,
        ps: &ParamSet,
        batch: &Batch,
        weights: &LossWeights,
        eps: &VaeEps,
    ) -> Result<(f64, VaeLossBreakdown), ModelError> {
        let mut tape = Tape::new();
        let (total, breakdown) =
            self.objective_graph(&mut tape, Binder::frozen(ps), batch, weights, eps, ps)?;
        Ok((tape.scalar(total), breakdown))
    }

    /// Reconstruction loss plus the per-step logits it was computed from.
    pub fn reconstruct_probe(
        &self,
        ps: &ParamSet,
        batch: &Batch,
        eps: &VaeEps,
    ) -> Result<(f64, Vec<Array2<f64>>), ModelError> {
        let mut tape = Tape::new();
        let bind = Binder::frozen(ps);
        let enc = self.encode_sample_graph(&mut tape, bind, batch, eps)?;
        let z = tape.concat_cols(&[enc.s_sample, enc.c_sample]);
        let (loss, logit_nodes) = self.decode_loss_graph(&mut tape, bind, batch, z)?;
        let logits = logit_nodes
            .into_iter()
            .map(|n| tape.value(n).clone())
            .collect();
        Ok((tape.scalar(loss), logits))
    }

    /// Autoencoder step: gradients of the weighted objective for everything
    /// except the adversary heads (which stay at exact zero).
    pub fn gen_step_grads(
        &self,
        ps: &ParamSet,
        batch: &Batch,
        weights: &LossWeights,
        eps: &VaeEps,
    ) -> Result<(f64, VaeLossBreakdown, ParamSet), ModelError> {
        let mut tape = Tape::new();
        let (total, breakdown) =
            self.objective_graph(&mut tape, Binder::tracked(ps), batch, weights, eps, ps)?;
        let grads = tape.grads(total, ps);
        Ok((breakdown.total, breakdown, grads))
    }

    /// Adversary step: gradients of `J_dis_s + J_dis_c` for the two
    /// adversary heads only; the encoder side is frozen.
    pub fn disc_step_grads(
        &self,
        ps: &ParamSet,
        batch: &Batch,
        eps: &VaeEps,
    ) -> Result<(f64, ParamSet), ModelError> {
        let mut tape = Tape::new();
        let frozen = Binder::frozen(ps);
        let tracked = Binder::tracked(ps);
        let enc = self.encode_sample_graph(&mut tape, frozen, batch, eps)?;
        let labels: Vec<usize> = batch.style_label.iter().map(|&l| l as usize).collect();
        let mw = Self::mean_weights(batch.len());
        let dis_s_logits = self.linear(&mut tape, tracked, "dis_style", enc.c_sample)?;
        let j_dis_s = tape.ce_rows(dis_s_logits, &labels, &mw);
        let (bow, bow_w) = self.bow_targets(batch);
        let dis_c_logits = self.linear(&mut tape, tracked, "dis_content", enc.s_sample)?;
        let j_dis_c = tape.ce_dist(dis_c_logits, &bow, &bow_w);
        let loss = tape.add(j_dis_s, j_dis_c);
        let grads = tape.grads(loss, ps);
        Ok((tape.scalar(loss), grads))
    }

    /// Greedy decode from explicit per-row latents `[B, d_s + d_c]`.
    fn decode_greedy(
        &self,
        ps: &ParamSet,
        z_rows: &Array2<f64>,
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>, ModelError> {
        let b = z_rows.nrows();
        let mut tape = Tape::new();
        let bind = Binder::frozen(ps);
        let z = tape.constant(z_rows.clone());
        let embed = bind.get(&mut tape, "embed")?;
        let wout = bind.get(&mut tape, "dec.wout")?;
        let bout = bind.get(&mut tape, "dec.bout")?;
        let mut h = tape.zeros(b, self.cfg.hidden);
        let mut cur = vec![BOS; b];
        let mut done = vec![false; b];
        let mut outs: Vec<Vec<usize>> = vec![Vec::new(); b];
        for step in 0..max_len {
            let emb = tape.rows(embed, &cur);
            let inp = tape.concat_cols(&[emb, z]);
            h = gru_step(&mut tape, bind, "dec", inp, h)?;
            let scores = tape.matmul(h, wout);
            let logits = tape.add(scores, bout);
            let banned: &[usize] = if step == 0 {
                &[PAD, BOS, EOS]
            } else {
                &[PAD, BOS]
            };
            let next = argmax_rows(tape.value(logits), banned);
            for i in 0..b {
                if done[i] {
                    continue;
                }
                if next[i] == EOS {
                    done[i] = true;
                } else {
                    outs[i].push(next[i]);
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
            cur = next;
        }
        Ok(outs)
    }

    /// Style-substituted transfer: every row decodes from
    /// `target_style ⊕ content_mu(row)` with deterministic encoding (ε=0).
    pub fn transfer(
        &self,
        ps: &ParamSet,
        batch: &Batch,
        target_style: &Array2<f64>,
        max_len: usize,
        _mode: DecodeMode,
    ) -> Result<Vec<Vec<usize>>, ModelError> {
        if max_len < 1 {
            return Err(ModelError::InvalidArgument(
                "max_len must be at least 1".to_string(),
            ));
        }
        if target_style.dim() != (1, self.cfg.d_s) {
            return Err(ModelError::InvalidArgument(format!(
                "target style embedding must be [1,{}], got [{},{}]",
                self.cfg.d_s,
                target_style.nrows(),
                target_style.ncols()
            )));
        }
        let eps = VaeEps::zeros(batch.len(), self.cfg.d_s, self.cfg.d_c);
        let code = self.encode_with_eps(ps, batch, &eps)?;
        let mut z = Array2::zeros((batch.len(), self.cfg.d_s + self.cfg.d_c));
        for i in 0..batch.len() {
            for j in 0..self.cfg.d_s {
                z[[i, j]] = target_style[[0, j]];
            }
            for j in 0..self.cfg.d_c {
                z[[i, self.cfg.d_s + j]] = code.content_mu[[i, j]];
            }
        }
        self.decode_greedy(ps, &z, max_len)
    }

    /// Mean style latent over a set of sequences; the default transfer
    /// target for a style side.
    pub fn target_style_embedding(
        &self,
        ps: &ParamSet,
        seqs: &[Vec<usize>],
    ) -> Result<Array2<f64>, ModelError> {
        if seqs.is_empty() {
            return Err(ModelError::InvalidArgument(
                "cannot average style over an empty corpus".to_string(),
            ));
        }
        let mut sum = Array2::zeros((1, self.cfg.d_s));
        let mut count = 0.0;
        for chunk in seqs.chunks(64) {
            let rows: Vec<&[usize]> = chunk.iter().map(|s| s.as_slice()).collect();
            let batch = Batch::from_content(&rows, 0);
            let eps = VaeEps::zeros(batch.len(), self.cfg.d_s, self.cfg.d_c);
            let code = self.encode_with_eps(ps, &batch, &eps)?;
            for i in 0..batch.len() {
                for j in 0..self.cfg.d_s {
                    sum[[0, j]] += code.style_mu[[i, j]];
                }
            }
            count += batch.len() as f64;
        }
        sum.mapv_inplace(|x| x / count);
        Ok(sum)
    }
}
