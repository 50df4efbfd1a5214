//! The seven session-update strategies: Batch, Finetune, PNN, CWR, L2R,
//! SI, and DGR. All of them drive the same solver loop; they differ in what
//! they remember between sessions and how that memory shapes the next one.
//!
//! A [`Strategy`] owns that memory. The caller (the experiment runner)
//! expands the model to the session's cumulative vocabulary first, then
//! hands it to [`Strategy::train_session`] together with the session data.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::eval::{eval_split, Phase, TraceEntry};
use crate::model::{FreezeMask, ModelState, SparseGrads};
use crate::rng;
use crate::sampler::SessionDataset;
use crate::trainer::{
    train_solver, EvalCtx, PenaltyFn, SessionJob, SolverConfig, StepHook, ViewFn,
};
use crate::vae::{
    sample_triples, train_generator, GenConfig, GenEpochStats, GeneratorParams,
};

/// Bytes one stored triple costs: three u32 ids.
pub const TRIPLE_BYTES: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Batch,
    Finetune,
    Pnn,
    Cwr,
    L2r,
    Si,
    Dgr,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Batch,
        Method::Finetune,
        Method::Pnn,
        Method::Cwr,
        Method::L2r,
        Method::Si,
        Method::Dgr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Batch => "batch",
            Method::Finetune => "finetune",
            Method::Pnn => "pnn",
            Method::Cwr => "cwr",
            Method::L2r => "l2r",
            Method::Si => "si",
            Method::Dgr => "dgr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Method hyper-parameters on top of the shared solver configuration.
#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub solver: SolverConfig,
    pub gen: GenConfig,
    pub l2r_lambda: f64,
    pub si_lambda: f64,
    pub si_xi: f64,
    /// Weighting convention for the SI penalty: false (default) puts the
    /// importance outside the square, sum of omega * delta^2; true squares
    /// the product, sum of (omega * delta)^2.
    pub si_squared_inside: bool,
    /// Generator sizes (token embedding, latent, hidden) for DGR.
    pub gen_dv: usize,
    pub gen_dz: usize,
    pub gen_dh: usize,
    /// Whether the scenario permits keeping raw training triples around.
    /// When false, Batch degrades to Finetune behavior with a warning.
    pub retention_allowed: bool,
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.gen.validate()?;
        if self.l2r_lambda < 0.0 || self.si_lambda < 0.0 {
            return Err(Error::Config("regularization strength cannot be negative".into()));
        }
        if self.si_xi <= 0.0 {
            return Err(Error::Config("SI damping must be positive".into()));
        }
        if self.gen_dv == 0 || self.gen_dz == 0 || self.gen_dh == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Per-parameter importance (or path-integral) store with the same row
/// layout as the model's embedding matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Importance {
    pub entity: Vec<f64>,
    pub relation: Vec<f64>,
    pub dim: usize,
}

impl Importance {
    pub fn zeros(n_entities: usize, n_relations: usize, dim: usize) -> Self {
        Importance {
            entity: vec![0.0; n_entities * dim],
            relation: vec![0.0; n_relations * dim],
            dim,
        }
    }

    /// Extend to a larger vocabulary; new rows start at zero.
    pub fn grow(&mut self, n_entities: usize, n_relations: usize, dim: usize) {
        if self.dim == 0 {
            self.dim = dim;
        }
        assert_eq!(self.dim, dim, "importance dims cannot change");
        self.entity.resize(n_entities * dim, 0.0);
        self.relation.resize(n_relations * dim, 0.0);
    }

    pub fn len(&self) -> usize {
        self.entity.len() + self.relation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reset(&mut self) {
        self.entity.iter_mut().for_each(|x| *x = 0.0);
        self.relation.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Quadratic pull toward the previous session's parameters, restricted to
/// rows that existed back then. Returns the penalty value and its gradient
/// with respect to the current parameters.
pub fn l2r_penalty(
    m: &ModelState,
    snapshot: &ModelState,
    lambda: f64,
) -> Result<(f64, SparseGrads)> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    if m.dim() != snapshot.dim() {
        return Err(Error::Data("snapshot dimension mismatch".into()));
    }
    let mut penalty = 0.0;
    let mut grads = SparseGrads::default();
    for e in 0..snapshot.n_entities() as u32 {
        let (cur, old) = (m.entity_row(e), snapshot.entity_row(e));
        let mut row = vec![0.0; m.dim()];
        let mut touched = false;
        for k in 0..m.dim() {
            let d = cur[k] - old[k];
            penalty += lambda * d * d;
            row[k] = 2.0 * lambda * d;
            touched |= d != 0.0;
        }
        if touched {
            grads.entity.insert(e, row);
        }
    }
    for r in 0..snapshot.n_relations() as u32 {
        let (cur, old) = (m.relation_row(r), snapshot.relation_row(r));
        let mut row = vec![0.0; m.dim()];
        let mut touched = false;
        for k in 0..m.dim() {
            let d = cur[k] - old[k];
            penalty += lambda * d * d;
            row[k] = 2.0 * lambda * d;
            touched |= d != 0.0;
        }
        if touched {
            grads.relation.insert(r, row);
        }
    }
    Ok((penalty, grads))
}

/// SI's importance-weighted pull toward the previous session's parameters.
/// With `squared_inside` false the penalty is lambda * sum Omega * delta^2;
/// with it true, lambda * sum (Omega * delta)^2.
pub fn si_penalty(
    m: &ModelState,
    snapshot: &ModelState,
    omega: &Importance,
    lambda: f64,
    squared_inside: bool,
) -> Result<(f64, SparseGrads)> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    if m.dim() != snapshot.dim() || omega.dim != m.dim() {
        return Err(Error::Data("snapshot or importance dimension mismatch".into()));
    }
    if omega.entity.len() < snapshot.n_entities() * m.dim()
        || omega.relation.len() < snapshot.n_relations() * m.dim()
    {
        return Err(Error::Data("importance store smaller than snapshot".into()));
    }
    let dim = m.dim();
    let mut penalty = 0.0;
    let mut grads = SparseGrads::default();
    let mut accumulate = |cur: &[f64], old: &[f64], imp: &[f64]| -> Option<Vec<f64>> {
        let mut row = vec![0.0; dim];
        let mut touched = false;
        for k in 0..dim {
            let d = cur[k] - old[k];
            let w = imp[k];
            if squared_inside {
                penalty += lambda * (w * d) * (w * d);
                row[k] = 2.0 * lambda * w * w * d;
            } else {
                penalty += lambda * w * d * d;
                row[k] = 2.0 * lambda * w * d;
            }
            touched |= row[k] != 0.0;
        }
        touched.then_some(row)
    };
    for e in 0..snapshot.n_entities() {
        if let Some(row) = accumulate(
            m.entity_row(e as u32),
            snapshot.entity_row(e as u32),
            &omega.entity[e * dim..(e + 1) * dim],
        ) {
            grads.entity.insert(e as u32, row);
        }
    }
    for r in 0..snapshot.n_relations() {
        if let Some(row) = accumulate(
            m.relation_row(r as u32),
            snapshot.relation_row(r as u32),
            &omega.relation[r * dim..(r + 1) * dim],
        ) {
            grads.relation.insert(r as u32, row);
        }
    }
    Ok((penalty, grads))
}

/// Add one optimizer step's path contribution: omega += -grad * delta,
/// where delta is the actual (post-projection) parameter change.
pub fn si_accumulate(
    omega: &mut Importance,
    grads: &SparseGrads,
    deltas: &SparseGrads,
) -> Result<()> {
    let dim = omega.dim;
    for (&e, delta) in &deltas.entity {
        let g = grads
            .entity
            .get(&e)
            .ok_or_else(|| Error::Data(format!("delta for entity {e} has no gradient")))?;
        let at = e as usize * dim;
        if delta.len() != dim || g.len() != dim || at + dim > omega.entity.len() {
            return Err(Error::Data("path accumulator dimension mismatch".into()));
        }
        let row = &mut omega.entity[at..at + dim];
        for k in 0..dim {
            row[k] -= g[k] * delta[k];
        }
    }
    for (&r, delta) in &deltas.relation {
        let g = grads
            .relation
            .get(&r)
            .ok_or_else(|| Error::Data(format!("delta for relation {r} has no gradient")))?;
        let at = r as usize * dim;
        if delta.len() != dim || g.len() != dim || at + dim > omega.relation.len() {
            return Err(Error::Data("path accumulator dimension mismatch".into()));
        }
        let row = &mut omega.relation[at..at + dim];
        for k in 0..dim {
            row[k] -= g[k] * delta[k];
        }
    }
    Ok(())
}

/// Fold a session's path integrals into the consolidated importance:
/// Omega += max(0, omega) / ((theta_end - theta_start)^2 + xi), then reset
/// the per-session accumulator.
pub fn si_consolidate(
    omega: &mut Importance,
    big_omega: &mut Importance,
    theta_start: &ModelState,
    theta_end: &ModelState,
    xi: f64,
) -> Result<()> {
    if xi <= 0.0 {
        return Err(Error::Config(format!("SI damping must be positive, got {xi}")));
    }
    if theta_start.param_count() != theta_end.param_count() {
        return Err(Error::Data("session start/end parameter shapes differ".into()));
    }
    if omega.len() != theta_end.param_count() || big_omega.len() != omega.len() {
        return Err(Error::Data("importance store does not match the model".into()));
    }
    let dim = omega.dim;
    for e in 0..theta_end.n_entities() {
        let (start, end) = (theta_start.entity_row(e as u32), theta_end.entity_row(e as u32));
        for k in 0..dim {
            let diff = end[k] - start[k];
            let w = omega.entity[e * dim + k].max(0.0);
            big_omega.entity[e * dim + k] += w / (diff * diff + xi);
        }
    }
    for r in 0..theta_end.n_relations() {
        let (start, end) = (theta_start.relation_row(r as u32), theta_end.relation_row(r as u32));
        for k in 0..dim {
            let diff = end[k] - start[k];
            let w = omega.relation[r * dim + k].max(0.0);
            big_omega.relation[r * dim + k] += w / (diff * diff + xi);
        }
    }
    omega.reset();
    Ok(())
}

/// Merge a session-local temporary store into the consolidated one:
/// ids first seen this session are copied, already-consolidated ids are
/// averaged (CE + TE) / 2. `entity_map[local] = global` and likewise for
/// relations; ids at or past `prev_*` counts are the new ones.
pub fn cwr_merge(
    ce: &ModelState,
    te: &ModelState,
    entity_map: &[u32],
    relation_map: &[u32],
    prev_entities: usize,
    prev_relations: usize,
) -> Result<ModelState> {
    if ce.kind() != te.kind() || ce.dim() != te.dim() {
        return Err(Error::Data("CE and TE stores are incompatible".into()));
    }
    if entity_map.len() != te.n_entities() || relation_map.len() != te.n_relations() {
        return Err(Error::Data("session-local id maps do not match the TE store".into()));
    }
    let mut merged = ce.clone();
    for (local, &global) in entity_map.iter().enumerate() {
        if global as usize >= ce.n_entities() {
            return Err(Error::Data(format!("entity {global} outside the CE store")));
        }
        let te_row = te.entity_row(local as u32).to_vec();
        let row = merged.entity_row_mut(global);
        if (global as usize) < prev_entities {
            for (c, t) in row.iter_mut().zip(&te_row) {
                *c = (*c + t) / 2.0;
            }
        } else {
            row.copy_from_slice(&te_row);
        }
    }
    for (local, &global) in relation_map.iter().enumerate() {
        if global as usize >= ce.n_relations() {
            return Err(Error::Data(format!("relation {global} outside the CE store")));
        }
        let te_row = te.relation_row(local as u32).to_vec();
        let row = merged.relation_row_mut(global);
        if (global as usize) < prev_relations {
            for (c, t) in row.iter_mut().zip(&te_row) {
                *c = (*c + t) / 2.0;
            }
        } else {
            row.copy_from_slice(&te_row);
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SiVars {
    pub(crate) omega: Importance,
    pub(crate) big_omega: Importance,
    pub(crate) snapshot: Option<ModelState>,
}

#[derive(Debug, Clone)]
pub(crate) enum StateVariant {
    Batch { retained: Vec<Triple>, warned: bool },
    Finetune,
    Pnn { mask: FreezeMask },
    Cwr,
    L2r { snapshot: Option<ModelState> },
    Si(SiVars),
    Dgr { generator: Option<GeneratorParams>, prior_train_total: usize },
}

/// What one session's training produced besides the updated model.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub trace: Vec<TraceEntry>,
    /// Raw triples held in storage when the session began, in bytes.
    pub stored_sample_bytes: u64,
    /// Replayed triples this session (DGR only).
    pub replay_count: usize,
    /// Generator training curve (DGR only).
    pub gen_stats: Vec<GenEpochStats>,
}

/// A continual-learning method plus everything it carries across sessions.
#[derive(Debug, Clone)]
pub struct Strategy {
    pub(crate) method: Method,
    pub(crate) next_session: usize,
    pub(crate) prev_entities: usize,
    pub(crate) prev_relations: usize,
    pub(crate) state: StateVariant,
}

impl Strategy {
    pub fn new(method: Method) -> Self {
        let state = match method {
            Method::Batch => StateVariant::Batch { retained: Vec::new(), warned: false },
            Method::Finetune => StateVariant::Finetune,
            Method::Pnn => StateVariant::Pnn { mask: FreezeMask::default() },
            Method::Cwr => StateVariant::Cwr,
            Method::L2r => StateVariant::L2r { snapshot: None },
            Method::Si => StateVariant::Si(SiVars::default()),
            Method::Dgr => StateVariant::Dgr { generator: None, prior_train_total: 0 },
        };
        Strategy { method, next_session: 0, prev_entities: 0, prev_relations: 0, state }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn next_session(&self) -> usize {
        self.next_session
    }

    /// Raw triples that will sit in storage when the next session starts.
    pub fn stored_bytes_next(&self) -> u64 {
        match &self.state {
            StateVariant::Batch { retained, .. } => retained.len() as u64 * TRIPLE_BYTES,
            _ => 0,
        }
    }

    /// The trained replay generator, when this strategy keeps one.
    pub fn generator(&self) -> Option<&GeneratorParams> {
        match &self.state {
            StateVariant::Dgr { generator, .. } => generator.as_ref(),
            _ => None,
        }
    }

    /// Bytes of model plus method state: embeddings, snapshots, importance
    /// stores, freeze masks, and the generator. Per-session path
    /// accumulators (SI's omega) live only inside a session and do not
    /// count. Stored raw triples are reported separately per session.
    pub fn state_bytes(&self, model: &ModelState) -> u64 {
        let base = 8 * model.param_count() as u64;
        let extra = match &self.state {
            StateVariant::Batch { .. } | StateVariant::Finetune | StateVariant::Cwr => 0,
            StateVariant::Pnn { mask } => mask.byte_size() as u64,
            StateVariant::L2r { snapshot } => {
                snapshot.as_ref().map_or(0, |s| 8 * s.param_count() as u64)
            }
            StateVariant::Si(si) => {
                let snap = si.snapshot.as_ref().map_or(0, |s| 8 * s.param_count() as u64);
                snap + 8 * si.big_omega.len() as u64
            }
            StateVariant::Dgr { generator, .. } => {
                generator.as_ref().map_or(0, |g| 8 * g.param_count() as u64)
            }
        };
        base + extra
    }

    /// Run one session. The model must already be expanded to the session's
    /// cumulative vocabulary; sessions must arrive in order.
    pub fn train_session(
        &mut self,
        model: &mut ModelState,
        session: &SessionDataset,
        cfg: &MethodConfig,
        cell_seed: u64,
    ) -> Result<SessionOutcome> {
        cfg.validate()?;
        if session.index != self.next_session {
            return Err(Error::Config(format!(
                "session {} arrived out of order; expected {}",
                session.index, self.next_session
            )));
        }
        let n_ent = session.seen_entities.len();
        let n_rel = session.seen_relations.len();
        if model.n_entities() != n_ent || model.n_relations() != n_rel {
            return Err(Error::Data(format!(
                "model covers {}x{} rows but session {} has seen {}x{}",
                model.n_entities(),
                model.n_relations(),
                session.index,
                n_ent,
                n_rel
            )));
        }

        let candidates: Vec<u32> = session.seen_entities.iter().copied().collect();
        let outcome = match &mut self.state {
            StateVariant::Finetune => {
                let trace = run_solver_on(
                    model,
                    session,
                    &session.train,
                    &candidates,
                    cfg,
                    cell_seed,
                    &FreezeMask::default(),
                    None,
                    None,
                    None,
                )?;
                SessionOutcome { trace, stored_sample_bytes: 0, replay_count: 0, gen_stats: vec![] }
            }
            StateVariant::Batch { retained, warned } => {
                if cfg.retention_allowed {
                    let stored = retained.len() as u64 * TRIPLE_BYTES;
                    let init_seed =
                        rng::derive_seed(cell_seed, &["init".into(), session.index.into()]);
                    *model =
                        ModelState::init(model.kind(), n_ent, n_rel, model.dim(), init_seed)?;
                    let mut union = retained.clone();
                    union.extend(session.train.iter().copied());
                    let trace = run_solver_on(
                        model,
                        session,
                        &union,
                        &candidates,
                        cfg,
                        cell_seed,
                        &FreezeMask::default(),
                        None,
                        None,
                        None,
                    )?;
                    retained.extend(session.train.iter().copied());
                    SessionOutcome {
                        trace,
                        stored_sample_bytes: stored,
                        replay_count: 0,
                        gen_stats: vec![],
                    }
                } else {
                    if !*warned {
                        log::warn!(
                            "scenario forbids sample retention; batch degrades to finetune"
                        );
                        *warned = true;
                    }
                    let trace = run_solver_on(
                        model,
                        session,
                        &session.train,
                        &candidates,
                        cfg,
                        cell_seed,
                        &FreezeMask::default(),
                        None,
                        None,
                        None,
                    )?;
                    SessionOutcome {
                        trace,
                        stored_sample_bytes: 0,
                        replay_count: 0,
                        gen_stats: vec![],
                    }
                }
            }
            StateVariant::Pnn { mask } => {
                // The mask was fixed when the previous session ended, so
                // everything learned before this session stays untouched.
                let frozen = mask.clone();
                let trace = run_solver_on(
                    model,
                    session,
                    &session.train,
                    &candidates,
                    cfg,
                    cell_seed,
                    &frozen,
                    None,
                    None,
                    None,
                )?;
                mask.entities = vec![true; n_ent];
                mask.relations = vec![true; n_rel];
                SessionOutcome { trace, stored_sample_bytes: 0, replay_count: 0, gen_stats: vec![] }
            }
            StateVariant::L2r { snapshot } => {
                let trace = {
                    let holder;
                    let penalty: Option<PenaltyFn<'_>> = match snapshot.as_ref() {
                        Some(snap) => {
                            let lambda = cfg.l2r_lambda;
                            holder = move |m: &ModelState| l2r_penalty(m, snap, lambda);
                            Some(&holder)
                        }
                        None => None,
                    };
                    run_solver_on(
                        model,
                        session,
                        &session.train,
                        &candidates,
                        cfg,
                        cell_seed,
                        &FreezeMask::default(),
                        penalty,
                        None,
                        None,
                    )?
                };
                *snapshot = Some(model.clone());
                SessionOutcome { trace, stored_sample_bytes: 0, replay_count: 0, gen_stats: vec![] }
            }
            StateVariant::Si(si) => {
                si.omega.grow(n_ent, n_rel, model.dim());
                si.big_omega.grow(n_ent, n_rel, model.dim());
                let theta_start = model.clone();
                let trace = {
                    let (omega, big_omega, snapshot) =
                        (&mut si.omega, &si.big_omega, &si.snapshot);
                    let holder;
                    let penalty: Option<PenaltyFn<'_>> = match snapshot.as_ref() {
                        Some(snap) => {
                            let (lambda, sq) = (cfg.si_lambda, cfg.si_squared_inside);
                            holder = move |m: &ModelState| {
                                si_penalty(m, snap, big_omega, lambda, sq)
                            };
                            Some(&holder)
                        }
                        None => None,
                    };
                    let mut hook = |grads: &SparseGrads, deltas: &SparseGrads| {
                        si_accumulate(omega, grads, deltas)
                            .expect("solver emits matching gradient/delta rows");
                    };
                    run_solver_on(
                        model,
                        session,
                        &session.train,
                        &candidates,
                        cfg,
                        cell_seed,
                        &FreezeMask::default(),
                        penalty,
                        None,
                        Some(&mut hook),
                    )?
                };
                si_consolidate(&mut si.omega, &mut si.big_omega, &theta_start, model, cfg.si_xi)?;
                si.snapshot = Some(model.clone());
                SessionOutcome { trace, stored_sample_bytes: 0, replay_count: 0, gen_stats: vec![] }
            }
            StateVariant::Cwr => {
                let trace = run_cwr(
                    model,
                    session,
                    cfg,
                    cell_seed,
                    self.prev_entities,
                    self.prev_relations,
                    &candidates,
                )?;
                SessionOutcome { trace, stored_sample_bytes: 0, replay_count: 0, gen_stats: vec![] }
            }
            StateVariant::Dgr { generator, prior_train_total } => {
                run_dgr(model, session, cfg, cell_seed, generator, prior_train_total, &candidates)?
            }
        };

        self.prev_entities = n_ent;
        self.prev_relations = n_rel;
        self.next_session += 1;
        Ok(outcome)
    }
}

/// Shared solver invocation. The triples the method actually trains on,
/// together with the session's validation set, double as the corruption
/// filter and the ranking filter.
#[allow(clippy::too_many_arguments)]
fn run_solver_on(
    model: &mut ModelState,
    session: &SessionDataset,
    train: &[Triple],
    candidates: &[u32],
    cfg: &MethodConfig,
    cell_seed: u64,
    mask: &FreezeMask,
    penalty: Option<PenaltyFn<'_>>,
    view: Option<ViewFn<'_>>,
    step_hook: Option<StepHook<'_>>,
) -> Result<Vec<TraceEntry>> {
    let mut filter: HashSet<Triple> = train.iter().copied().collect();
    filter.extend(session.valid.iter().copied());
    let job = SessionJob {
        session: session.index,
        seed: cell_seed,
        train,
        entity_pool: candidates,
        known_positives: &filter,
        mask,
        penalty,
        view,
        eval: EvalCtx { valid: &session.valid, candidates, filter: &filter },
    };
    train_solver(model, &job, &cfg.solver, step_hook)
}

/// CWR session: train a temporary store from scratch over the session-local
/// vocabulary, previewing the merged store for the per-epoch trace, then
/// fold it into the consolidated store.
fn run_cwr(
    model: &mut ModelState,
    session: &SessionDataset,
    cfg: &MethodConfig,
    cell_seed: u64,
    prev_entities: usize,
    prev_relations: usize,
    candidates: &[u32],
) -> Result<Vec<TraceEntry>> {
    let entity_map: Vec<u32> = session.entities.iter().copied().collect();
    let relation_map: Vec<u32> = session.relations.iter().copied().collect();
    let ent_local = |g: u32| entity_map.binary_search(&g).expect("session entity") as u32;
    let rel_local = |g: u32| relation_map.binary_search(&g).expect("session relation") as u32;
    let local_train: Vec<Triple> = session
        .train
        .iter()
        .map(|t| Triple::new(ent_local(t.head), rel_local(t.relation), ent_local(t.tail)))
        .collect();
    let te_seed = rng::derive_seed(cell_seed, &["te-init".into(), session.index.into()]);
    let mut te = ModelState::init(
        model.kind(),
        entity_map.len(),
        relation_map.len(),
        model.dim(),
        te_seed,
    )?;

    // Negatives are drawn session-locally; the validation triples cannot
    // join the corruption filter here because they may touch entities the
    // session-local vocabulary does not cover.
    let local_pool: Vec<u32> = (0..entity_map.len() as u32).collect();
    let local_filter: HashSet<Triple> = local_train.iter().copied().collect();
    let mut global_filter: HashSet<Triple> = session.train.iter().copied().collect();
    global_filter.extend(session.valid.iter().copied());

    let trace = {
        let ce: &ModelState = &*model;
        let (e_map, r_map) = (entity_map.clone(), relation_map.clone());
        let view = move |te_now: &ModelState| {
            cwr_merge(ce, te_now, &e_map, &r_map, prev_entities, prev_relations)
        };
        let job = SessionJob {
            session: session.index,
            seed: cell_seed,
            train: &local_train,
            entity_pool: &local_pool,
            known_positives: &local_filter,
            mask: &FreezeMask::default(),
            penalty: None,
            view: Some(&view),
            eval: EvalCtx { valid: &session.valid, candidates, filter: &global_filter },
        };
        train_solver(&mut te, &job, &cfg.solver, None)?
    };

    *model = cwr_merge(model, &te, &entity_map, &relation_map, prev_entities, prev_relations)?;
    Ok(trace)
}

/// DGR session: sample replay from the previous generator, train a fresh
/// solver on replay plus the new data, then train the expanded generator on
/// the same combined set. In the trace, generator epochs are billed up
/// front at the performance the incoming model shows on this session's
/// validation set: until the new solver is trained, that stale model is
/// all the system has, so learning-curve areas that charge for generator
/// time see a long flat stretch before the solver starts improving.
fn run_dgr(
    model: &mut ModelState,
    session: &SessionDataset,
    cfg: &MethodConfig,
    cell_seed: u64,
    generator: &mut Option<GeneratorParams>,
    prior_train_total: &mut usize,
    candidates: &[u32],
) -> Result<SessionOutcome> {
    let n = session.index;
    let replay = match generator.as_ref() {
        Some(g) => {
            let mut rng = rng::stream(cell_seed, &["replay".into(), n.into()]);
            sample_triples(g, *prior_train_total, &mut rng)
        }
        None => Vec::new(),
    };
    let replay_count = replay.len();

    let mut combined = replay;
    combined.extend(session.train.iter().copied());

    // Performance of the still-deployed incoming model on this session's
    // validation set, measured exactly the way the solver trace will.
    let (stale_mrr, stale_hits) = if session.valid.is_empty() {
        (0.0, 0.0)
    } else {
        let mut filter: HashSet<Triple> = combined.iter().copied().collect();
        filter.extend(session.valid.iter().copied());
        eval_split(model, &session.valid, candidates, &filter, cfg.solver.rank_mode)?
    };

    let init_seed = rng::derive_seed(cell_seed, &["init".into(), n.into()]);
    *model = ModelState::init(
        model.kind(),
        session.seen_entities.len(),
        session.seen_relations.len(),
        model.dim(),
        init_seed,
    )?;
    let solver_trace = run_solver_on(
        model,
        session,
        &combined,
        candidates,
        cfg,
        cell_seed,
        &FreezeMask::default(),
        None,
        None,
        None,
    )?;

    let (n_ent, n_rel) = (session.seen_entities.len(), session.seen_relations.len());
    let mut gen = match generator.take() {
        Some(mut g) => {
            let expand_seed = rng::derive_seed(cell_seed, &["gen-expand".into(), n.into()]);
            g.expand(n_ent, n_rel, expand_seed)?;
            g
        }
        None => {
            let gen_seed = rng::derive_seed(cell_seed, &["gen".into(), n.into()]);
            GeneratorParams::init(n_ent, n_rel, cfg.gen_dv, cfg.gen_dz, cfg.gen_dh, gen_seed)?
        }
    };
    let train_seed = rng::derive_seed(cell_seed, &["gen-train".into(), n.into()]);
    let gen_stats = train_generator(&mut gen, &combined, &cfg.gen, train_seed)?;

    // Generator epochs first, flat at the stale level, then the solver
    // ramp. Epochs are numbered within their phase.
    let mut trace: Vec<TraceEntry> = (0..gen_stats.len())
        .map(|k| TraceEntry {
            session: n,
            epoch: k + 1,
            phase: Phase::Generator,
            mrr: stale_mrr,
            hits: stale_hits,
        })
        .collect();
    trace.extend(solver_trace);

    *generator = Some(gen);
    *prior_train_total += session.train.len();
    Ok(SessionOutcome { trace, stored_sample_bytes: 0, replay_count, gen_stats })
}
