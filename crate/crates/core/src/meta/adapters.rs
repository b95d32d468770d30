//! Meta-trainable adapters for the two base models. Each adapter owns the
//! model plus its batching policy and derives every batch and noise draw
//! from the step context, so the loops stay deterministic end to end.

use rand::seq::SliceRandom;

use crate::autodiff::ParamSet;
use crate::corpus::{Batch, PairBatch, Split, StyleTask};
use crate::error::ModelError;
use crate::models::{CrossAlign, LossWeights, Vae, VaeEps};
use crate::rng::substream;

use super::{LanguageModel, MetaModel, Scope, StepCtx};

/// Substep order within one adaptation step: the adversary trains first,
/// then the generator side.
pub const DISC_SUBSTEP: usize = 0;
pub const GEN_SUBSTEP: usize = 1;

enum RowScope {
    Split(Split),
    Full,
}

fn scope_rows(task: &StyleTask, label: u8, scope: &RowScope) -> Vec<usize> {
    match scope {
        RowScope::Split(split) => task.split_indices(label, *split).to_vec(),
        RowScope::Full => (0..task.side(label).len()).collect(),
    }
}

/// Draws one batch of up to `n` rows from the chosen scope of one side,
/// fully determined by the tag path.
fn sample_side(
    task: &StyleTask,
    label: u8,
    scope: &RowScope,
    n: usize,
    seed: u64,
    tags: &[&str],
) -> Result<Batch, ModelError> {
    let mut idx = scope_rows(task, label, scope);
    if idx.is_empty() {
        return Err(ModelError::DegenerateBatch(format!(
            "task {:?} has no rows to sample on side {label}",
            task.task_id
        )));
    }
    let side_tag = if label == 0 { "a" } else { "b" };
    let mut labels: Vec<&str> = tags.to_vec();
    labels.push(side_tag);
    let mut rng = substream(seed, &labels);
    idx.shuffle(&mut rng);
    idx.truncate(n.max(1));
    let seqs = task.side(label);
    let rows: Vec<&[usize]> = idx.iter().map(|&i| seqs[i].as_slice()).collect();
    Ok(Batch::from_content(&rows, label))
}

fn sample_pair(
    task: &StyleTask,
    scope: &RowScope,
    n: usize,
    seed: u64,
    tags: &[&str],
) -> Result<PairBatch, ModelError> {
    Ok(PairBatch {
        a: sample_side(task, 0, scope, n, seed, tags)?,
        b: sample_side(task, 1, scope, n, seed, tags)?,
    })
}

fn adapt_scope(scope: Scope) -> RowScope {
    match scope {
        Scope::Support => RowScope::Split(Split::Support),
        Scope::Full => RowScope::Full,
    }
}

/// Adversarial seq2seq model under the meta loops. Each inner step runs one
/// discriminator update then one generator update on the same support pair.
pub struct CrossAlignMeta {
    pub model: CrossAlign,
    pub batch_size: usize,
}

impl CrossAlignMeta {
    fn adapt_pair(
        &self,
        task: &StyleTask,
        scope: Scope,
        ctx: StepCtx,
    ) -> Result<PairBatch, ModelError> {
        let (round, step) = (ctx.round.to_string(), ctx.step.to_string());
        sample_pair(
            task,
            &adapt_scope(scope),
            self.batch_size,
            ctx.seed,
            &["adapt", &task.task_id, &round, &step],
        )
    }
}

impl MetaModel for CrossAlignMeta {
    type Task = StyleTask;

    fn task_id(&self, task: &StyleTask) -> String {
        task.task_id.clone()
    }

    fn n_substeps(&self) -> usize {
        2
    }

    fn substep_grad(
        &self,
        ps: &ParamSet,
        task: &StyleTask,
        scope: Scope,
        ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        let pair = self.adapt_pair(task, scope, ctx)?;
        if ctx.substep == DISC_SUBSTEP {
            self.model.disc_step_grads(ps, &pair)
        } else {
            let (total, _, _, grads) = self.model.gen_step_grads(ps, &pair, true)?;
            Ok((total, grads))
        }
    }

    fn query_grad(
        &self,
        ps: &ParamSet,
        task: &StyleTask,
        ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        let round = ctx.round.to_string();
        let pair = sample_pair(
            task,
            &RowScope::Split(Split::Query),
            self.batch_size,
            ctx.seed,
            &["query", &task.task_id, &round],
        )?;
        // The outer update moves every parameter, so the query gradient
        // joins the generator objective with the adversary objective; their
        // gradient supports are disjoint by construction.
        let (total, _, _, mut grads) = self.model.gen_step_grads(ps, &pair, true)?;
        let (_, disc_grads) = self.model.disc_step_grads(ps, &pair)?;
        grads.add_scaled(1.0, &disc_grads);
        Ok((total, grads))
    }
}

impl LanguageModel for CrossAlignMeta {
    fn lm_grad(
        &self,
        ps: &ParamSet,
        pair: &PairBatch,
        _ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        let (_, rec, _, grads) = self.model.gen_step_grads(ps, pair, false)?;
        Ok((rec, grads))
    }
}

/// Disentangled VAE under the meta loops. Batches merge both sides so the
/// style heads always see both labels; reparameterization noise is drawn
/// per step context.
pub struct VaeMeta {
    pub model: Vae,
    pub batch_size: usize,
    pub weights: LossWeights,
    /// Steps over which the KL weight ramps linearly from 0 to its
    /// configured value; 0 disables the ramp.
    pub kl_warmup: u64,
}

impl VaeMeta {
    pub fn new(model: Vae, batch_size: usize) -> Self {
        Self {
            model,
            batch_size,
            weights: LossWeights::default(),
            kl_warmup: 0,
        }
    }

    fn warmed_weights(&self, ctx: StepCtx) -> LossWeights {
        if self.kl_warmup == 0 {
            return self.weights;
        }
        // Whichever counter the current phase advances.
        let t = ctx.round.max(ctx.step);
        let scale = ((t + 1) as f64 / self.kl_warmup as f64).min(1.0);
        LossWeights {
            w_kl: self.weights.w_kl * scale,
            ..self.weights
        }
    }

    fn draw_eps(&self, b: usize, seed: u64, tags: &[&str]) -> VaeEps {
        let mut rng = substream(seed, tags);
        let cfg = self.model.config();
        VaeEps::draw(&mut rng, b, cfg.d_s, cfg.d_c)
    }

    fn adapt_batch(
        &self,
        task: &StyleTask,
        scope: Scope,
        ctx: StepCtx,
    ) -> Result<Batch, ModelError> {
        let (round, step) = (ctx.round.to_string(), ctx.step.to_string());
        let half = (self.batch_size / 2).max(1);
        let pair = sample_pair(
            task,
            &adapt_scope(scope),
            half,
            ctx.seed,
            &["adapt", &task.task_id, &round, &step],
        )?;
        Ok(pair.merged())
    }
}

impl MetaModel for VaeMeta {
    type Task = StyleTask;

    fn task_id(&self, task: &StyleTask) -> String {
        task.task_id.clone()
    }

    fn n_substeps(&self) -> usize {
        2
    }

    fn substep_grad(
        &self,
        ps: &ParamSet,
        task: &StyleTask,
        scope: Scope,
        ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        let batch = self.adapt_batch(task, scope, ctx)?;
        let (round, step, sub) = (
            ctx.round.to_string(),
            ctx.step.to_string(),
            ctx.substep.to_string(),
        );
        let eps = self.draw_eps(
            batch.len(),
            ctx.seed,
            &["eps", &task.task_id, &round, &step, &sub],
        );
        if ctx.substep == DISC_SUBSTEP {
            self.model.disc_step_grads(ps, &batch, &eps)
        } else {
            let w = self.warmed_weights(ctx);
            let (total, _, grads) = self.model.gen_step_grads(ps, &batch, &w, &eps)?;
            Ok((total, grads))
        }
    }

    fn query_grad(
        &self,
        ps: &ParamSet,
        task: &StyleTask,
        ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        let round = ctx.round.to_string();
        let half = (self.batch_size / 2).max(1);
        let pair = sample_pair(
            task,
            &RowScope::Split(Split::Query),
            half,
            ctx.seed,
            &["query", &task.task_id, &round],
        )?;
        let batch = pair.merged();
        let eps = self.draw_eps(
            batch.len(),
            ctx.seed,
            &["eps-query", &task.task_id, &round],
        );
        let w = self.warmed_weights(ctx);
        let (total, _, mut grads) = self.model.gen_step_grads(ps, &batch, &w, &eps)?;
        let (_, disc_grads) = self.model.disc_step_grads(ps, &batch, &eps)?;
        grads.add_scaled(1.0, &disc_grads);
        Ok((total, grads))
    }
}

impl LanguageModel for VaeMeta {
    fn lm_grad(
        &self,
        ps: &ParamSet,
        pair: &PairBatch,
        ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        let batch = pair.merged();
        let step = ctx.step.to_string();
        let eps = self.draw_eps(batch.len(), ctx.seed, &["eps-pretrain", &step]);
        let base = LossWeights::plain_vae();
        let w = if self.kl_warmup == 0 {
            base
        } else {
            let scale = ((ctx.step + 1) as f64 / self.kl_warmup as f64).min(1.0);
            LossWeights {
                w_kl: base.w_kl * scale,
                ..base
            }
        };
        let (_, bd, grads) = self.model.gen_step_grads(ps, &batch, &w, &eps)?;
        Ok((bd.j_rec, grads))
    }
}

/// Builds tiny style tasks in memory for smoke tests: side a draws from one
/// token range, side b from another.
#[cfg(test)]
pub(crate) fn toy_style_task(
    id: &str,
    vocab: usize,
    sentences: usize,
    seed: u64,
) -> StyleTask {
    use crate::corpus::UNK;
    use rand::Rng;
    let gen_side = |tag: &str, lo: usize, hi: usize| -> Vec<Vec<usize>> {
        let mut rng = substream(seed, &["toy-task", id, tag]);
        (0..sentences)
            .map(|_| {
                let len = rng.gen_range(2..6);
                (0..len).map(|_| rng.gen_range(lo..hi)).collect()
            })
            .collect()
    };
    let mid = (UNK + 1 + vocab) / 2;
    let train_a = gen_side("a", UNK + 1, mid);
    let train_b = gen_side("b", mid, vocab);
    let n_support = (sentences as f64 * 0.8).round() as usize;
    StyleTask {
        task_id: id.to_string(),
        style_a: "a".to_string(),
        style_b: "b".to_string(),
        support_a: (0..n_support).collect(),
        query_a: (n_support..sentences).collect(),
        support_b: (0..n_support).collect(),
        query_b: (n_support..sentences).collect(),
        train_a,
        train_b,
        support_fraction: 0.8,
        test_pairs: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::{finetune, inner_adapt, pretrain_base, train_meta, MetaConfig, Order};
    use crate::models::{CrossAlignConfig, VaeConfig};

    fn tiny_vae_meta(vocab: usize) -> VaeMeta {
        VaeMeta::new(
            Vae::new(VaeConfig {
                vocab,
                embed_dim: 8,
                hidden: 12,
                d_s: 2,
                d_c: 4,
                adv_entropy_max: true,
            }),
            8,
        )
    }

    fn tiny_ca_meta(vocab: usize) -> CrossAlignMeta {
        CrossAlignMeta {
            model: CrossAlign::new(CrossAlignConfig {
                vocab,
                embed_dim: 6,
                hidden: 10,
                style_dim: 3,
                disc_filters: 4,
                disc_widths: vec![2, 3],
            }),
            batch_size: 6,
        }
    }

    #[test]
    fn substeps_are_deterministic_and_separated() {
        let m = tiny_vae_meta(30);
        let ps = m.model.init_params(3);
        let task = toy_style_task("t0", 30, 20, 3);
        let ctx = StepCtx {
            seed: 5,
            round: 2,
            step: 1,
            substep: GEN_SUBSTEP,
        };
        let (l1, g1) = m.substep_grad(&ps, &task, Scope::Support, ctx).unwrap();
        let (l2, g2) = m.substep_grad(&ps, &task, Scope::Support, ctx).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
        for (name, g) in g1.iter() {
            if Vae::is_disc_param(name) {
                assert!(g.iter().all(|&x| x == 0.0));
            }
        }
        let dctx = StepCtx {
            substep: DISC_SUBSTEP,
            ..ctx
        };
        let (_, gd) = m.substep_grad(&ps, &task, Scope::Support, dctx).unwrap();
        for (name, g) in gd.iter() {
            if !Vae::is_disc_param(name) {
                assert!(g.iter().all(|&x| x == 0.0));
            }
        }
        // The query gradient covers both parameter groups.
        let (_, gq) = m.query_grad(&ps, &task, ctx).unwrap();
        assert!(gq
            .iter()
            .any(|(n, g)| Vae::is_disc_param(n) && g.iter().any(|&x| x != 0.0)));
        assert!(gq
            .iter()
            .any(|(n, g)| !Vae::is_disc_param(n) && g.iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn inner_adapt_runs_on_both_base_models() {
        let vm = tiny_vae_meta(30);
        let task = toy_style_task("t0", 30, 20, 7);
        let cfg = MetaConfig {
            inner_lr: 0.05,
            outer_lr: 0.05,
            inner_steps: 2,
            order: Order::First,
            max_outer_steps: 1,
            seed: 7,
            ..MetaConfig::default()
        };
        let ps = vm.model.init_params(7);
        let adapted = inner_adapt(&vm, &ps, &task, &cfg).unwrap();
        assert!(adapted.aligned_with(&ps));
        assert_ne!(adapted, ps);

        let cm = tiny_ca_meta(30);
        let ps = cm.model.init_params(7);
        let adapted = inner_adapt(&cm, &ps, &task, &cfg).unwrap();
        assert!(adapted.aligned_with(&ps));
        assert_ne!(adapted, ps);
    }

    #[test]
    fn meta_training_improves_summed_query_loss_across_seeds() {
        let mut improved = 0;
        for seed in 0..10u64 {
            let m = tiny_vae_meta(40);
            let tasks: Vec<StyleTask> = (0..4)
                .map(|i| toy_style_task(&format!("t{i}"), 40, 30, 100 + i))
                .collect();
            let ps = m.model.init_params(seed);
            let cfg = MetaConfig {
                inner_lr: 0.02,
                outer_lr: 0.01,
                inner_steps: 1,
                order: Order::First,
                max_outer_steps: 30,
                seed,
                ..MetaConfig::default()
            };
            let Ok((_, records)) = train_meta(&m, &ps, &tasks, &cfg, |_, _| true) else {
                continue;
            };
            if records.last().unwrap().total_query_loss < records[0].total_query_loss {
                improved += 1;
            }
        }
        assert!(improved >= 9, "only {improved}/10 seeds improved");
    }

    #[test]
    fn finetune_reduces_fixed_batch_loss() {
        let m = tiny_vae_meta(30);
        let task = toy_style_task("t0", 30, 24, 11);
        let ps = m.model.init_params(11);
        let eval = |p: &ParamSet| {
            let pair = sample_pair(&task, &RowScope::Full, 12, 999, &["eval"]).unwrap();
            let batch = pair.merged();
            let eps = VaeEps::zeros(batch.len(), 2, 4);
            m.model
                .total_loss(p, &batch, &m.weights, &eps)
                .unwrap()
                .0
        };
        let before = eval(&ps);
        let (tuned, trace) = finetune(&m, &ps, &task, 100, 0.05, 11).unwrap();
        assert_eq!(trace.len(), 100);
        let after = eval(&tuned);
        assert!(after <= before, "loss went {before} -> {after}");
    }

    #[test]
    fn pretraining_trains_lm_only_and_improves() {
        let tasks: Vec<StyleTask> = (0..7)
            .map(|i| toy_style_task(&format!("t{i}"), 36, 30, 200 + i))
            .collect();

        let vm = tiny_vae_meta(36);
        let ps = vm.model.init_params(1);
        let (trained, losses) = pretrain_base(&vm, &ps, &tasks, 200, 0.1, 16, 1).unwrap();
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[190..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "reconstruction did not improve: {head} -> {tail}");
        for (name, v) in trained.iter() {
            if Vae::is_disc_param(name) {
                let before = ps.get(name).unwrap();
                assert!(v
                    .iter()
                    .zip(before.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }

        let cm = tiny_ca_meta(36);
        let ps = cm.model.init_params(1);
        let (trained, _) = pretrain_base(&cm, &ps, &tasks, 5, 0.1, 8, 1).unwrap();
        for (name, v) in trained.iter() {
            if CrossAlign::is_disc_param(name) {
                let before = ps.get(name).unwrap();
                assert!(v
                    .iter()
                    .zip(before.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }

        let (same, losses) = pretrain_base(&vm, &vm.model.init_params(2), &tasks, 0, 0.1, 8, 1).unwrap();
        assert!(losses.is_empty());
        assert_eq!(same, vm.model.init_params(2));
    }
}
