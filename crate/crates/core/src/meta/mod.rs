//! Model-agnostic meta-learning over flat named-parameter models: inner
//! adaptation on a task's support split, an outer update from query losses
//! summed across tasks, plus the per-task fine-tuning and pooled
//! language-model pretraining used by the comparison protocols.

pub mod adapters;
pub mod toy;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::corpus::{Batch, PairBatch, StyleTask};
use crate::error::{MetaError, ModelError};

/// Which rows an adaptation substep may draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// The task's support split; used by inner adaptation.
    Support,
    /// Support plus query; used by plain fine-tuning.
    Full,
}

/// Differentiation mode for the outer update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    /// Treat adapted parameters as constants of the meta parameters.
    #[default]
    First,
    /// Differentiate through the inner steps via Hessian-vector products.
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Inner-loop step size α.
    pub inner_lr: f64,
    /// Outer-loop step size β.
    pub outer_lr: f64,
    /// Inner adaptation steps K per task.
    pub inner_steps: usize,
    /// Tasks drawn per outer step; larger than the task count means all.
    pub meta_batch: usize,
    pub order: Order,
    pub max_outer_steps: usize,
    pub seed: u64,
    /// Replace the plain outer descent step with an adaptive-moment update.
    /// The moment accumulators live for the duration of one training run.
    pub outer_adam: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 1e-2,
            outer_lr: 1e-3,
            inner_steps: 5,
            // The largest count a TOML integer can carry; effectively "all".
            meta_batch: i64::MAX as usize,
            order: Order::First,
            max_outer_steps: 100,
            seed: 0,
            outer_adam: false,
        }
    }
}

impl MetaConfig {
    /// Structural validation. Positivity of the learning rates is a
    /// run-configuration concern; the loops themselves are well defined at
    /// zero step size.
    pub fn validate(&self) -> Result<(), MetaError> {
        if self.inner_steps < 1 {
            return Err(MetaError::InvalidArgument(
                "inner_steps must be at least 1".to_string(),
            ));
        }
        if self.meta_batch < 1 {
            return Err(MetaError::InvalidArgument(
                "meta_batch must be at least 1".to_string(),
            ));
        }
        let rates = [self.inner_lr, self.outer_lr];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(MetaError::InvalidArgument(
                "learning rates must be finite and nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Identifies one objective evaluation inside the training loops, so models
/// can derive batches and noise deterministically.
#[derive(Clone, Copy, Debug)]
pub struct StepCtx {
    pub seed: u64,
    /// Outer step (meta round), or 0 outside meta-training.
    pub round: u64,
    /// Inner/fine-tune step index.
    pub step: u64,
    pub substep: usize,
}

/// One task's contribution to the outer update.
#[derive(Clone, Debug)]
pub struct TaskGrad {
    pub task_id: String,
    pub query_loss: f64,
    pub grad: ParamSet,
}

/// A model trainable under the meta loops: it exposes its adaptation
/// objective as per-substep gradients over a flat named-parameter set.
/// Multi-substep models run an adversary update followed by a generator
/// update within each inner step.
pub trait MetaModel: Sync {
    type Task: Sync;

    fn task_id(&self, task: &Self::Task) -> String;

    /// Sequential updates making up one inner step.
    fn n_substeps(&self) -> usize {
        1
    }

    /// Loss and gradient of adaptation substep `ctx.substep` at `ps`.
    fn substep_grad(
        &self,
        ps: &ParamSet,
        task: &Self::Task,
        scope: Scope,
        ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError>;

    /// Loss and gradient of the query objective at adapted parameters. The
    /// gradient covers every parameter the outer update should move,
    /// including adversary tensors where the model has them.
    fn query_grad(
        &self,
        ps: &ParamSet,
        task: &Self::Task,
        ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError>;

    /// Hessian-vector product of the substep objective at `ps` in direction
    /// `v`; the default is a central finite difference of `substep_grad`.
    fn substep_hvp(
        &self,
        ps: &ParamSet,
        task: &Self::Task,
        scope: Scope,
        ctx: StepCtx,
        v: &ParamSet,
    ) -> Result<ParamSet, ModelError> {
        let norm = v.l2_norm_sq().sqrt();
        if norm == 0.0 {
            return Ok(v.zeros_like());
        }
        let eps = 1e-5 / norm;
        let mut plus = ps.clone();
        plus.add_scaled(eps, v);
        let mut minus = ps.clone();
        minus.add_scaled(-eps, v);
        let (_, gp) = self.substep_grad(&plus, task, scope, ctx)?;
        let (_, gm) = self.substep_grad(&minus, task, scope, ctx)?;
        let mut hv = gp;
        hv.add_scaled(-1.0, &gm);
        hv.scale(1.0 / (2.0 * eps));
        Ok(hv)
    }
}

fn diverged<M: MetaModel>(model: &M, task: &M::Task, step: usize, loss: f64) -> MetaError {
    MetaError::DivergedAdaptation {
        task_id: model.task_id(task),
        step,
        loss,
    }
}

/// Runs the inner loop; optionally records the parameters entering every
/// substep so the second-order pass can replay them.
fn adapt_with_trace<M: MetaModel>(
    model: &M,
    ps: &ParamSet,
    task: &M::Task,
    cfg: &MetaConfig,
    scope: Scope,
    round: u64,
    keep_trace: bool,
) -> Result<(ParamSet, Vec<ParamSet>), MetaError> {
    let mut theta = ps.clone();
    let mut trace = Vec::new();
    for step in 0..cfg.inner_steps {
        for sub in 0..model.n_substeps() {
            if keep_trace {
                trace.push(theta.clone());
            }
            let ctx = StepCtx {
                seed: cfg.seed,
                round,
                step: step as u64,
                substep: sub,
            };
            let (loss, grad) = model.substep_grad(&theta, task, scope, ctx)?;
            if !loss.is_finite() {
                return Err(diverged(model, task, step, loss));
            }
            theta.add_scaled(-cfg.inner_lr, &grad);
        }
    }
    Ok((theta, trace))
}

/// K inner gradient steps on the task's support split, starting from (and
/// not modifying) the meta parameters.
pub fn inner_adapt<M: MetaModel>(
    model: &M,
    meta_params: &ParamSet,
    task: &M::Task,
    cfg: &MetaConfig,
) -> Result<ParamSet, MetaError> {
    cfg.validate()?;
    adapt_with_trace(model, meta_params, task, cfg, Scope::Support, 0, false).map(|(p, _)| p)
}

/// Adapts on support, evaluates the query objective, and produces the
/// task's meta gradient. Second order backpropagates through each inner
/// substep as g ← g − α·H·g using the recorded trajectory.
fn task_grad<M: MetaModel>(
    model: &M,
    ps: &ParamSet,
    task: &M::Task,
    cfg: &MetaConfig,
    round: u64,
) -> Result<TaskGrad, MetaError> {
    let second = cfg.order == Order::Second;
    let (theta_t, trace) = adapt_with_trace(model, ps, task, cfg, Scope::Support, round, second)?;
    let qctx = StepCtx {
        seed: cfg.seed,
        round,
        step: 0,
        substep: 0,
    };
    let (query_loss, mut grad) = model.query_grad(&theta_t, task, qctx)?;
    if !query_loss.is_finite() {
        return Err(diverged(model, task, cfg.inner_steps, query_loss));
    }
    if second {
        let mut i = trace.len();
        for step in (0..cfg.inner_steps).rev() {
            for sub in (0..model.n_substeps()).rev() {
                i -= 1;
                let ctx = StepCtx {
                    seed: cfg.seed,
                    round,
                    step: step as u64,
                    substep: sub,
                };
                let hv = model.substep_hvp(&trace[i], task, Scope::Support, ctx, &grad)?;
                grad.add_scaled(-cfg.inner_lr, &hv);
            }
        }
    }
    Ok(TaskGrad {
        task_id: model.task_id(task),
        query_loss,
        grad,
    })
}

fn collect_task_grads<M: MetaModel>(
    model: &M,
    ps: &ParamSet,
    tasks: &[&M::Task],
    cfg: &MetaConfig,
    round: u64,
) -> Result<Vec<TaskGrad>, MetaError> {
    if tasks.is_empty() {
        return Err(MetaError::InvalidArgument(
            "meta step needs at least one task".to_string(),
        ));
    }
    let mut grads: Vec<TaskGrad> = tasks
        .par_iter()
        .map(|t| task_grad(model, ps, t, cfg, round))
        .collect::<Result<_, _>>()?;
    // Accumulation in task-id order keeps the update independent of both
    // list order and thread schedule.
    grads.sort_by(|x, y| x.task_id.cmp(&y.task_id));
    Ok(grads)
}

/// Adaptive-moment accumulators for the outer update, kept across rounds
/// within one `train_meta` run.
struct AdamState {
    m: ParamSet,
    v: ParamSet,
    t: i32,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(template: &ParamSet) -> Self {
        Self {
            m: template.zeros_like(),
            v: template.zeros_like(),
            t: 0,
        }
    }

    fn update(&mut self, theta: &mut ParamSet, grad: &ParamSet, lr: f64) {
        assert!(theta.aligned_with(grad) && theta.aligned_with(&self.m));
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for (((_, th), (_, g)), ((_, m), (_, v))) in theta
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(th).and(g).and(m).and(v).for_each(
                |th, &g, m, v| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    *th -= lr * (*m / bc1) / ((*v / bc2).sqrt() + Self::EPS);
                },
            );
        }
    }
}

/// One outer update over the given tasks: adapt each on support, evaluate
/// on query, and move the meta parameters against the summed query-loss
/// gradients. Always the plain descent step; the adaptive-moment variant
/// needs state across rounds and therefore lives in [`train_meta`].
pub fn meta_step<M: MetaModel>(
    model: &M,
    meta_params: &ParamSet,
    tasks: &[M::Task],
    cfg: &MetaConfig,
    round: u64,
) -> Result<(ParamSet, Vec<TaskGrad>), MetaError> {
    cfg.validate()?;
    let refs: Vec<&M::Task> = tasks.iter().collect();
    let grads = collect_task_grads(model, meta_params, &refs, cfg, round)?;
    let mut new_ps = meta_params.clone();
    for tg in &grads {
        new_ps.add_scaled(-cfg.outer_lr, &tg.grad);
    }
    Ok((new_ps, grads))
}

/// Per-round training record: the summed query loss and its per-task parts.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub round: u64,
    pub total_query_loss: f64,
    pub task_losses: Vec<(String, f64)>,
}

/// Runs outer steps until `max_outer_steps` or until the hook returns
/// false. The hook sees each round's record and the updated parameters
/// (checkpointing lives there); the full trace is returned.
pub fn train_meta<M, F>(
    model: &M,
    meta_params: &ParamSet,
    tasks: &[M::Task],
    cfg: &MetaConfig,
    mut on_step: F,
) -> Result<(ParamSet, Vec<StepRecord>), MetaError>
where
    M: MetaModel,
    F: FnMut(&StepRecord, &ParamSet) -> bool,
{
    cfg.validate()?;
    let mut theta = meta_params.clone();
    let mut records = Vec::new();
    let mut adam = cfg.outer_adam.then(|| AdamState::new(&theta));
    for round in 0..cfg.max_outer_steps as u64 {
        let chosen = sample_tasks(tasks, cfg, round);
        let grads = collect_task_grads(model, &theta, &chosen, cfg, round)?;
        match adam.as_mut() {
            Some(state) => {
                let mut summed = theta.zeros_like();
                for tg in &grads {
                    summed.add_scaled(1.0, &tg.grad);
                }
                state.update(&mut theta, &summed, cfg.outer_lr);
            }
            None => {
                for tg in &grads {
                    theta.add_scaled(-cfg.outer_lr, &tg.grad);
                }
            }
        }
        let record = StepRecord {
            round,
            total_query_loss: grads.iter().map(|g| g.query_loss).sum(),
            task_losses: grads
                .into_iter()
                .map(|g| (g.task_id, g.query_loss))
                .collect(),
        };
        let keep_going = on_step(&record, &theta);
        records.push(record);
        if !keep_going {
            break;
        }
    }
    Ok((theta, records))
}

fn sample_tasks<'a, T>(tasks: &'a [T], cfg: &MetaConfig, round: u64) -> Vec<&'a T> {
    if cfg.meta_batch >= tasks.len() {
        return tasks.iter().collect();
    }
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..tasks.len()).collect();
    let mut rng = crate::rng::substream(cfg.seed, &["meta", "sample", &round.to_string()]);
    idx.shuffle(&mut rng);
    idx.truncate(cfg.meta_batch);
    idx.into_iter().map(|i| &tasks[i]).collect()
}

/// Plain gradient descent of the model's own objective on the task's full
/// training split, starting from (and not modifying) `params`. Returns the
/// specialized parameters and the per-step loss of the final substep (the
/// generator objective for adversarial models).
pub fn finetune<M: MetaModel>(
    model: &M,
    params: &ParamSet,
    task: &M::Task,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(ParamSet, Vec<f64>), MetaError> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(MetaError::InvalidArgument(
            "learning rate must be finite and nonnegative".to_string(),
        ));
    }
    let mut theta = params.clone();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut last = 0.0;
        for sub in 0..model.n_substeps() {
            let ctx = StepCtx {
                seed,
                round: 0,
                step: step as u64,
                substep: sub,
            };
            let (loss, grad) = model.substep_grad(&theta, task, Scope::Full, ctx)?;
            if !loss.is_finite() {
                return Err(diverged(model, task, step, loss));
            }
            theta.add_scaled(-lr, &grad);
            last = loss;
        }
        losses.push(last);
    }
    Ok((theta, losses))
}

/// Reconstruction-only training surface of a base model, for pooled
/// language-model pretraining. Adversary and auxiliary-head parameters get
/// exactly zero gradient here.
pub trait LanguageModel: Sync {
    /// Reconstruction loss (the value traced) and gradients of the
    /// reconstruction objective on one batch pair.
    fn lm_grad(
        &self,
        ps: &ParamSet,
        pair: &PairBatch,
        ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError>;
}

/// Trains only the reconstruction objective on the pooled corpus of every
/// task. Discriminator tensors are untouched by contract.
pub fn pretrain_base<M: LanguageModel>(
    model: &M,
    params: &ParamSet,
    tasks: &[StyleTask],
    steps: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<(ParamSet, Vec<f64>), MetaError> {
    let mut pool_a: Vec<&[usize]> = Vec::new();
    let mut pool_b: Vec<&[usize]> = Vec::new();
    for task in tasks {
        pool_a.extend(task.train_a.iter().map(|s| s.as_slice()));
        pool_b.extend(task.train_b.iter().map(|s| s.as_slice()));
    }
    if pool_a.is_empty() || pool_b.is_empty() {
        return Err(MetaError::Data(crate::error::DataError::EmptyCorpus(
            "pretraining pool has an empty side".to_string(),
        )));
    }
    let per_side = (batch_size / 2).max(1);
    let mut theta = params.clone();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut rng = crate::rng::substream(seed, &["pretrain", "batch", &step.to_string()]);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, pool: &[&[usize]], label: u8| {
            use rand::Rng;
            let rows: Vec<&[usize]> = (0..per_side.min(pool.len()))
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .collect();
            Batch::from_content(&rows, label)
        };
        let pair = PairBatch {
            a: draw(&mut rng, &pool_a, 0),
            b: draw(&mut rng, &pool_b, 1),
        };
        let ctx = StepCtx {
            seed,
            round: 0,
            step: step as u64,
            substep: 0,
        };
        let (loss, grad) = model.lm_grad(&theta, &pair, ctx)?;
        if !loss.is_finite() {
            return Err(MetaError::DivergedAdaptation {
                task_id: "<pretrain>".to_string(),
                step,
                loss,
            });
        }
        theta.add_scaled(-lr, &grad);
        losses.push(loss);
    }
    Ok((theta, losses))
}
