//! The inner solver training loop shared by every session-update method.
//!
//! One call to [`train_solver`] runs the margin / logistic SGD loop for a
//! single session: shuffle, mini-batch, corrupt, step, and record a
//! validation trace entry per epoch. Method-specific behavior plugs in
//! through three hooks rather than subclassing:
//!
//! * `penalty` adds a regularization term (and its gradients) each step,
//! * `view` maps the in-training model to the model that should be
//!   evaluated (consolidated stores evaluate a merged preview),
//! * `step_hook` observes every raw gradient and the actual parameter
//!   delta it caused, which path-integral consolidation needs.

use std::collections::HashSet;

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::eval::{eval_split, Phase, RankMode, TraceEntry};
use crate::model::{
    corrupt_negatives, loss_grad, sgd_step, FreezeMask, ModelState, SparseGrads, TrainBatch,
};
use crate::rng;
use rand::seq::SliceRandom;

/// Hyper-parameters of the solver loop.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub margin: f64,
    pub neg_ratio: usize,
    /// Check validation MRR every `check_every` epochs and stop after
    /// `patience` consecutive checks without improvement. Ignored when the
    /// validation set is empty.
    pub early_stopping: bool,
    pub check_every: usize,
    pub patience: usize,
    pub rank_mode: RankMode,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.check_every == 0 || self.patience == 0 {
            return Err(Error::Config(
                "early-stopping check interval and patience must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// What the per-epoch trace is measured against.
pub struct EvalCtx<'a> {
    pub valid: &'a [Triple],
    /// Ranking candidates, normally the entities observed so far.
    pub candidates: &'a [u32],
    /// Known positives filtered out of the candidate rankings.
    pub filter: &'a HashSet<Triple>,
}

pub type PenaltyFn<'a> = &'a dyn Fn(&ModelState) -> Result<(f64, SparseGrads)>;
pub type ViewFn<'a> = &'a dyn Fn(&ModelState) -> Result<ModelState>;
pub type StepHook<'a> = &'a mut dyn FnMut(&SparseGrads, &SparseGrads);

/// Everything one session's solver run needs besides the model itself.
pub struct SessionJob<'a> {
    pub session: usize,
    /// Cell seed; all randomness inside the loop derives from it together
    /// with the session, epoch, and batch indices.
    pub seed: u64,
    pub train: &'a [Triple],
    /// Sorted pool negatives are drawn from, normally the entities observed
    /// so far.
    pub entity_pool: &'a [u32],
    /// Positives that negative sampling must avoid reproducing.
    pub known_positives: &'a HashSet<Triple>,
    pub mask: &'a FreezeMask,
    pub penalty: Option<PenaltyFn<'a>>,
    pub view: Option<ViewFn<'a>>,
    pub eval: EvalCtx<'a>,
}

/// Train `model` in place for one session and return the per-epoch
/// validation trace. An empty validation set yields zero-valued trace
/// entries and disables early stopping.
pub fn train_solver(
    model: &mut ModelState,
    job: &SessionJob<'_>,
    cfg: &SolverConfig,
    mut step_hook: Option<StepHook<'_>>,
) -> Result<Vec<TraceEntry>> {
    cfg.validate()?;
    if job.train.is_empty() {
        return Err(Error::Data(format!(
            "session {} has no training triples",
            job.session
        )));
    }

    let mut trace = Vec::new();
    let mut best = f64::MIN;
    let mut strikes = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..job.train.len()).collect();
        order.shuffle(&mut rng::stream(
            job.seed,
            &["shuffle".into(), job.session.into(), epoch.into()],
        ));

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let positives: Vec<Triple> = chunk.iter().map(|&i| job.train[i]).collect();
            let neg_seed = rng::derive_seed(
                job.seed,
                &["neg".into(), job.session.into(), epoch.into(), batch_idx.into()],
            );
            let sample = corrupt_negatives(
                &positives,
                job.entity_pool,
                cfg.neg_ratio,
                neg_seed,
                job.known_positives,
            )?;
            // corrupt_negatives emits `neg_ratio` corruptions per positive in
            // order, so repeating each positive pairs them back up.
            let expanded: Vec<Triple> = positives
                .iter()
                .flat_map(|&p| std::iter::repeat(p).take(cfg.neg_ratio))
                .collect();
            let batch = TrainBatch::new(expanded, sample.negatives)?;

            let (_, mut grads) = loss_grad(model, &batch, cfg.margin)?;
            if let Some(pen) = job.penalty {
                let (_, pgrads) = pen(model)?;
                grads.add_scaled(&pgrads, 1.0, model.dim());
            }
            let deltas = sgd_step(model, &grads, cfg.lr, job.mask)?;
            if let Some(hook) = step_hook.as_deref_mut() {
                hook(&grads, &deltas);
            }
        }

        let (mrr, hits) = if job.eval.valid.is_empty() {
            (0.0, 0.0)
        } else if let Some(view) = job.view {
            let preview = view(model)?;
            eval_split(&preview, job.eval.valid, job.eval.candidates, job.eval.filter, cfg.rank_mode)?
        } else {
            eval_split(model, job.eval.valid, job.eval.candidates, job.eval.filter, cfg.rank_mode)?
        };
        trace.push(TraceEntry {
            session: job.session,
            epoch: epoch + 1,
            phase: Phase::Solver,
            mrr,
            hits,
        });

        if cfg.early_stopping && !job.eval.valid.is_empty() && (epoch + 1) % cfg.check_every == 0 {
            if mrr > best {
                best = mrr;
                strikes = 0;
            } else {
                strikes += 1;
                if strikes >= cfg.patience {
                    break;
                }
            }
        }
    }
    Ok(trace)
}
