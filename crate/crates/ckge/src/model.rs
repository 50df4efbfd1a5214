//! Embedding models over a knowledge graph: TransE and Analogy.
//!
//! Both models keep one d-dimensional row per entity and one per relation.
//! TransE treats a relation as a translation and scores a triple with the
//! L1 distance ||v_h + W_r - v_t||_1, lower is better. Analogy treats a
//! relation as a block-diagonal mapping of d/2 scaled 2x2 rotations and
//! scores with <W_r v_h, v_t>, higher is better. The shared `goodness`
//! (negated distance for TransE, raw score for Analogy) gives ranking code
//! a single "higher is better" polarity.
//!
//! Gradients are derived by hand and checked against finite differences in
//! the tests; there is no autodiff on this path.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModelKind {
    TransE,
    Analogy,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::TransE => write!(f, "transe"),
            ModelKind::Analogy => write!(f, "analogy"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "analogy" => Ok(ModelKind::Analogy),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Entity and relation embeddings, stored row-major.
///
/// For Analogy a relation row holds d/2 (a, b) pairs; pair k encodes the
/// 2x2 block [[a, -b], [b, a]] applied to the matching entity coordinates,
/// so the mapping is normal and any two relation mappings commute by
/// construction. The relation dimension always equals the entity dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    kind: ModelKind,
    dim: usize,
    entity_emb: Vec<f64>,
    relation_emb: Vec<f64>,
}

/// Per-row frozen flags, used by methods that protect previously learned
/// parameters. Rows past the end of a vector are unfrozen, so an empty mask
/// freezes nothing and masks stay valid across expansion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FreezeMask {
    pub entities: Vec<bool>,
    pub relations: Vec<bool>,
}

impl FreezeMask {
    pub fn entity_frozen(&self, e: u32) -> bool {
        self.entities.get(e as usize).copied().unwrap_or(false)
    }

    pub fn relation_frozen(&self, r: u32) -> bool {
        self.relations.get(r as usize).copied().unwrap_or(false)
    }

    /// Bytes needed to persist the mask, one byte per flag.
    pub fn byte_size(&self) -> usize {
        self.entities.len() + self.relations.len()
    }
}

/// Sparse per-row gradients (or row deltas), keyed by id. BTreeMap keeps
/// iteration order deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrads {
    pub entity: BTreeMap<u32, Vec<f64>>,
    pub relation: BTreeMap<u32, Vec<f64>>,
}

impl SparseGrads {
    pub fn is_empty(&self) -> bool {
        self.entity.is_empty() && self.relation.is_empty()
    }

    fn entity_row(&mut self, e: u32, dim: usize) -> &mut [f64] {
        self.entity.entry(e).or_insert_with(|| vec![0.0; dim])
    }

    fn relation_row(&mut self, r: u32, dim: usize) -> &mut [f64] {
        self.relation.entry(r).or_insert_with(|| vec![0.0; dim])
    }

    /// Add `scale * other` into self, allocating rows as needed.
    pub fn add_scaled(&mut self, other: &SparseGrads, scale: f64, dim: usize) {
        for (&e, g) in &other.entity {
            let row = self.entity_row(e, dim);
            for (a, b) in row.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
        for (&r, g) in &other.relation {
            let row = self.relation_row(r, dim);
            for (a, b) in row.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.entity
            .values()
            .chain(self.relation.values())
            .all(|row| row.iter().all(|x| x.is_finite()))
    }
}

/// A mini-batch of positive triples paired one-to-one with corruptions.
/// Implicit labels: +1 for positives, -1 for negatives.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    positives: Vec<Triple>,
    negatives: Vec<Triple>,
}

impl TrainBatch {
    /// Validates the pairing: equal lengths and every negative differs from
    /// its positive in exactly one of head/tail (same relation).
    pub fn new(positives: Vec<Triple>, negatives: Vec<Triple>) -> Result<Self> {
        if positives.len() != negatives.len() {
            return Err(Error::Data(format!(
                "batch has {} positives but {} negatives",
                positives.len(),
                negatives.len()
            )));
        }
        for (p, n) in positives.iter().zip(&negatives) {
            let head_differs = p.head != n.head;
            let tail_differs = p.tail != n.tail;
            if p.relation != n.relation || head_differs == tail_differs {
                return Err(Error::Data(format!(
                    "negative ({},{},{}) does not differ from positive ({},{},{}) \
                     in exactly one of head/tail",
                    n.head, n.relation, n.tail, p.head, p.relation, p.tail
                )));
            }
        }
        Ok(TrainBatch { positives, negatives })
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Triple, &Triple)> {
        self.positives.iter().zip(self.negatives.iter())
    }
}

/// Corruptions produced by negative sampling. `fallback_count` counts
/// negatives that are still known positives because every retry collided;
/// that only happens on degenerate graphs.
#[derive(Debug, Clone)]
pub struct NegativeSample {
    pub negatives: Vec<Triple>,
    pub fallback_count: usize,
}

fn uniform_bound(dim: usize) -> f64 {
    6.0 / (dim as f64).sqrt()
}

fn l2_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn project_row(row: &mut [f64]) {
    let norm = l2_norm(row);
    if norm > 1.0 {
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
}

impl ModelState {
    /// Fresh model with entries drawn uniform in [-6/sqrt(d), 6/sqrt(d)]
    /// and then constraint-projected (a no-op for Analogy).
    pub fn init(
        kind: ModelKind,
        n_entities: usize,
        n_relations: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if kind == ModelKind::Analogy && dim % 2 != 0 {
            return Err(Error::Config(format!(
                "Analogy needs an even dimension for its 2x2 blocks, got {dim}"
            )));
        }
        let bound = uniform_bound(dim);
        let mut rng = rng::stream(seed, &["model-init".into()]);
        let mut draw = |count: usize| -> Vec<f64> {
            (0..count).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let entity_emb = draw(n_entities * dim);
        let relation_emb = draw(n_relations * dim);
        let mut m = ModelState { kind, dim, entity_emb, relation_emb };
        m.project_constraints(None);
        Ok(m)
    }

    /// Build a model from explicit rows. Used by checkpoint loading and by
    /// tests that need hand-crafted states.
    pub fn from_rows(
        kind: ModelKind,
        dim: usize,
        entity_rows: &[Vec<f64>],
        relation_rows: &[Vec<f64>],
    ) -> Result<Self> {
        if kind == ModelKind::Analogy && dim % 2 != 0 {
            return Err(Error::Config(format!(
                "Analogy needs an even dimension for its 2x2 blocks, got {dim}"
            )));
        }
        let flatten = |rows: &[Vec<f64>], what: &str| -> Result<Vec<f64>> {
            let mut flat = Vec::with_capacity(rows.len() * dim);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != dim {
                    return Err(Error::Data(format!(
                        "{what} row {i} has {} entries, expected {dim}",
                        row.len()
                    )));
                }
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical(format!("{what} row {i} has a non-finite entry")));
                }
                flat.extend_from_slice(row);
            }
            Ok(flat)
        };
        let entity_emb = flatten(entity_rows, "entity")?;
        let relation_emb = flatten(relation_rows, "relation")?;
        Ok(ModelState { kind, dim, entity_emb, relation_emb })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_entities(&self) -> usize {
        self.entity_emb.len() / self.dim
    }

    pub fn n_relations(&self) -> usize {
        self.relation_emb.len() / self.dim
    }

    /// Total float parameter count, for space accounting.
    pub fn param_count(&self) -> usize {
        self.entity_emb.len() + self.relation_emb.len()
    }

    pub fn entity_row(&self, e: u32) -> &[f64] {
        let i = e as usize * self.dim;
        &self.entity_emb[i..i + self.dim]
    }

    pub fn relation_row(&self, r: u32) -> &[f64] {
        let i = r as usize * self.dim;
        &self.relation_emb[i..i + self.dim]
    }

    pub(crate) fn entity_row_mut(&mut self, e: u32) -> &mut [f64] {
        let i = e as usize * self.dim;
        &mut self.entity_emb[i..i + self.dim]
    }

    pub(crate) fn relation_row_mut(&mut self, r: u32) -> &mut [f64] {
        let i = r as usize * self.dim;
        &mut self.relation_emb[i..i + self.dim]
    }

    /// Whether all three ids of `t` are in range for this model.
    pub fn covers(&self, t: Triple) -> bool {
        (t.head as usize) < self.n_entities()
            && (t.tail as usize) < self.n_entities()
            && (t.relation as usize) < self.n_relations()
    }

    fn check_triple(&self, t: Triple) -> Result<()> {
        if !self.covers(t) {
            return Err(Error::Data(format!(
                "triple ({},{},{}) out of range for model with {} entities, {} relations",
                t.head,
                t.relation,
                t.tail,
                self.n_entities(),
                self.n_relations()
            )));
        }
        Ok(())
    }

    /// Ranking goodness: higher is better for both model kinds.
    pub fn goodness(&self, t: Triple) -> Result<f64> {
        self.check_triple(t)?;
        Ok(match self.kind {
            ModelKind::TransE => -transe_raw(self.entity_row(t.head), self.relation_row(t.relation), self.entity_row(t.tail)),
            ModelKind::Analogy => analogy_raw(self.entity_row(t.head), self.relation_row(t.relation), self.entity_row(t.tail)),
        })
    }

    /// Precomputed head-side context so goodness against many candidate
    /// tails costs O(d) each. See `goodness_with_tail_context`.
    pub fn tail_context(&self, head: u32, relation: u32) -> Vec<f64> {
        let h = self.entity_row(head);
        let r = self.relation_row(relation);
        match self.kind {
            // v_h + W_r; goodness(t) = -||ctx - v_t||_1.
            ModelKind::TransE => h.iter().zip(r).map(|(a, b)| a + b).collect(),
            // W_r v_h; goodness(t) = <ctx, v_t>.
            ModelKind::Analogy => {
                let mut out = vec![0.0; self.dim];
                for k in 0..self.dim / 2 {
                    let (a, b) = (r[2 * k], r[2 * k + 1]);
                    out[2 * k] = a * h[2 * k] - b * h[2 * k + 1];
                    out[2 * k + 1] = b * h[2 * k] + a * h[2 * k + 1];
                }
                out
            }
        }
    }

    /// Tail-side context for candidate heads. See `goodness_with_head_context`.
    pub fn head_context(&self, tail: u32, relation: u32) -> Vec<f64> {
        let t = self.entity_row(tail);
        let r = self.relation_row(relation);
        match self.kind {
            // v_t - W_r; goodness(h) = -||v_h - ctx||_1.
            ModelKind::TransE => t.iter().zip(r).map(|(a, b)| a - b).collect(),
            // W_r^T v_t; goodness(h) = <v_h, ctx>.
            ModelKind::Analogy => {
                let mut out = vec![0.0; self.dim];
                for k in 0..self.dim / 2 {
                    let (a, b) = (r[2 * k], r[2 * k + 1]);
                    out[2 * k] = a * t[2 * k] + b * t[2 * k + 1];
                    out[2 * k + 1] = -b * t[2 * k] + a * t[2 * k + 1];
                }
                out
            }
        }
    }

    pub fn goodness_with_tail_context(&self, ctx: &[f64], tail: u32) -> f64 {
        let t = self.entity_row(tail);
        match self.kind {
            ModelKind::TransE => -ctx.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>(),
            ModelKind::Analogy => ctx.iter().zip(t).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn goodness_with_head_context(&self, ctx: &[f64], head: u32) -> f64 {
        let h = self.entity_row(head);
        match self.kind {
            ModelKind::TransE => -h.iter().zip(ctx).map(|(a, b)| (a - b).abs()).sum::<f64>(),
            ModelKind::Analogy => h.iter().zip(ctx).map(|(a, b)| a * b).sum(),
        }
    }

    /// Rescale every row with L2 norm above 1 back to the unit sphere,
    /// skipping frozen rows. Analogy needs no projection: its constraints
    /// hold by parameterization.
    pub fn project_constraints(&mut self, mask: Option<&FreezeMask>) {
        if self.kind != ModelKind::TransE {
            return;
        }
        let dim = self.dim;
        for e in 0..self.n_entities() {
            if mask.map_or(false, |m| m.entity_frozen(e as u32)) {
                continue;
            }
            project_row(&mut self.entity_emb[e * dim..(e + 1) * dim]);
        }
        for r in 0..self.n_relations() {
            if mask.map_or(false, |m| m.relation_frozen(r as u32)) {
                continue;
            }
            project_row(&mut self.relation_emb[r * dim..(r + 1) * dim]);
        }
    }

    /// Grow the embedding matrices to the new counts. Existing rows are
    /// preserved bit-exactly; new rows are initialized as in `init`.
    pub fn expand(&mut self, n_entities: usize, n_relations: usize, seed: u64) -> Result<()> {
        if n_entities < self.n_entities() || n_relations < self.n_relations() {
            return Err(Error::Data(format!(
                "cannot shrink model from {}x{} to {}x{} rows",
                self.n_entities(),
                self.n_relations(),
                n_entities,
                n_relations
            )));
        }
        let bound = uniform_bound(self.dim);
        let mut rng = rng::stream(seed, &["model-expand".into()]);
        let old_entities = self.n_entities();
        let old_relations = self.n_relations();
        for _ in 0..(n_entities - old_entities) * self.dim {
            self.entity_emb.push(rng.gen_range(-bound..bound));
        }
        for _ in 0..(n_relations - old_relations) * self.dim {
            self.relation_emb.push(rng.gen_range(-bound..bound));
        }
        if self.kind == ModelKind::TransE {
            let dim = self.dim;
            for e in old_entities..n_entities {
                project_row(&mut self.entity_emb[e * dim..(e + 1) * dim]);
            }
            for r in old_relations..n_relations {
                project_row(&mut self.relation_emb[r * dim..(r + 1) * dim]);
            }
        }
        Ok(())
    }
}

fn transe_raw(head: &[f64], rel: &[f64], tail: &[f64]) -> f64 {
    head.iter()
        .zip(rel)
        .zip(tail)
        .map(|((h, r), t)| (h + r - t).abs())
        .sum()
}

fn analogy_raw(head: &[f64], rel: &[f64], tail: &[f64]) -> f64 {
    let mut f = 0.0;
    for k in 0..head.len() / 2 {
        let (h1, h2) = (head[2 * k], head[2 * k + 1]);
        let (t1, t2) = (tail[2 * k], tail[2 * k + 1]);
        let (a, b) = (rel[2 * k], rel[2 * k + 1]);
        let m1 = a * h1 - b * h2;
        let m2 = b * h1 + a * h2;
        f += m1 * t1 + m2 * t2;
    }
    f
}

/// TransE distance ||v_h + W_r - v_t||_1. Lower is better.
pub fn transe_score(m: &ModelState, t: Triple) -> Result<f64> {
    if m.kind() != ModelKind::TransE {
        return Err(Error::Config("transe_score called on a non-TransE model".into()));
    }
    m.check_triple(t)?;
    Ok(transe_raw(m.entity_row(t.head), m.relation_row(t.relation), m.entity_row(t.tail)))
}

/// Analogy bilinear score <W_r v_h, v_t>. Higher is better.
pub fn analogy_score(m: &ModelState, t: Triple) -> Result<f64> {
    if m.kind() != ModelKind::Analogy {
        return Err(Error::Config("analogy_score called on a non-Analogy model".into()));
    }
    m.check_triple(t)?;
    Ok(analogy_raw(m.entity_row(t.head), m.relation_row(t.relation), m.entity_row(t.tail)))
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Accumulate `scale * d f/d row` for the TransE distance of `t`.
fn accumulate_transe(m: &ModelState, t: Triple, scale: f64, grads: &mut SparseGrads) {
    let dim = m.dim();
    let h = m.entity_row(t.head);
    let r = m.relation_row(t.relation);
    let tl = m.entity_row(t.tail);
    let signs: Vec<f64> = (0..dim).map(|k| sign0(h[k] + r[k] - tl[k]) * scale).collect();
    {
        let row = grads.entity_row(t.head, dim);
        for (g, s) in row.iter_mut().zip(&signs) {
            *g += s;
        }
    }
    {
        let row = grads.relation_row(t.relation, dim);
        for (g, s) in row.iter_mut().zip(&signs) {
            *g += s;
        }
    }
    let row = grads.entity_row(t.tail, dim);
    for (g, s) in row.iter_mut().zip(&signs) {
        *g -= s;
    }
}

/// Margin-ranking loss sum_i [f(pos_i) + margin - f(neg_i)]_+ with analytic
/// subgradients. The L1 subgradient at a kink is 0; a hinge term exactly at
/// the boundary is treated as active (its gradient flows).
pub fn transe_loss_grad(
    m: &ModelState,
    batch: &TrainBatch,
    margin: f64,
) -> Result<(f64, SparseGrads)> {
    if margin < 0.0 {
        return Err(Error::Config(format!("margin must be nonnegative, got {margin}")));
    }
    if m.kind() != ModelKind::TransE {
        return Err(Error::Config("transe_loss_grad called on a non-TransE model".into()));
    }
    let mut loss = 0.0;
    let mut grads = SparseGrads::default();
    for (pos, neg) in batch.pairs() {
        m.check_triple(*pos)?;
        m.check_triple(*neg)?;
        let f_pos = transe_raw(m.entity_row(pos.head), m.relation_row(pos.relation), m.entity_row(pos.tail));
        let f_neg = transe_raw(m.entity_row(neg.head), m.relation_row(neg.relation), m.entity_row(neg.tail));
        let term = f_pos + margin - f_neg;
        if term >= 0.0 {
            loss += term;
            accumulate_transe(m, *pos, 1.0, &mut grads);
            accumulate_transe(m, *neg, -1.0, &mut grads);
        }
    }
    Ok((loss, grads))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One labeled Analogy example: loss -log sigmoid(y * f) in softplus form,
/// with gradients accumulated into `grads`.
fn analogy_example(m: &ModelState, t: Triple, y: f64, grads: &mut SparseGrads) -> f64 {
    let dim = m.dim();
    let h = m.entity_row(t.head);
    let r = m.relation_row(t.relation);
    let tl = m.entity_row(t.tail);
    let f = analogy_raw(h, r, tl);
    let loss = softplus(-y * f);
    let dldf = -y * sigmoid(-y * f);

    let mut dh = vec![0.0; dim];
    let mut dr = vec![0.0; dim];
    let mut dt = vec![0.0; dim];
    for k in 0..dim / 2 {
        let (h1, h2) = (h[2 * k], h[2 * k + 1]);
        let (t1, t2) = (tl[2 * k], tl[2 * k + 1]);
        let (a, b) = (r[2 * k], r[2 * k + 1]);
        let m1 = a * h1 - b * h2;
        let m2 = b * h1 + a * h2;
        dh[2 * k] = dldf * (a * t1 + b * t2);
        dh[2 * k + 1] = dldf * (-b * t1 + a * t2);
        dt[2 * k] = dldf * m1;
        dt[2 * k + 1] = dldf * m2;
        dr[2 * k] = dldf * (h1 * t1 + h2 * t2);
        dr[2 * k + 1] = dldf * (-h2 * t1 + h1 * t2);
    }
    {
        let row = grads.entity_row(t.head, dim);
        for (g, d) in row.iter_mut().zip(&dh) {
            *g += d;
        }
    }
    {
        let row = grads.relation_row(t.relation, dim);
        for (g, d) in row.iter_mut().zip(&dr) {
            *g += d;
        }
    }
    let row = grads.entity_row(t.tail, dim);
    for (g, d) in row.iter_mut().zip(&dt) {
        *g += d;
    }
    loss
}

/// Logistic loss sum over positives (y=+1) and negatives (y=-1).
pub fn analogy_loss_grad(m: &ModelState, batch: &TrainBatch) -> Result<(f64, SparseGrads)> {
    if m.kind() != ModelKind::Analogy {
        return Err(Error::Config("analogy_loss_grad called on a non-Analogy model".into()));
    }
    let mut loss = 0.0;
    let mut grads = SparseGrads::default();
    for (pos, neg) in batch.pairs() {
        m.check_triple(*pos)?;
        m.check_triple(*neg)?;
        loss += analogy_example(m, *pos, 1.0, &mut grads);
        loss += analogy_example(m, *neg, -1.0, &mut grads);
    }
    Ok((loss, grads))
}

/// Kind-dispatched loss and gradient for one batch. `margin` only applies
/// to TransE.
pub fn loss_grad(m: &ModelState, batch: &TrainBatch, margin: f64) -> Result<(f64, SparseGrads)> {
    match m.kind() {
        ModelKind::TransE => transe_loss_grad(m, batch, margin),
        ModelKind::Analogy => analogy_loss_grad(m, batch),
    }
}

const NEGATIVE_RETRIES: usize = 20;

/// For each positive, draw `ratio` corruptions that replace the head or the
/// tail (chosen uniformly) with an entity drawn uniformly from `entities`.
/// Corruptions that hit `known_positives` are resampled a bounded number of
/// times and emitted anyway if every retry collides.
pub fn corrupt_negatives(
    positives: &[Triple],
    entities: &[u32],
    ratio: usize,
    seed: u64,
    known_positives: &HashSet<Triple>,
) -> Result<NegativeSample> {
    if entities.len() < 2 {
        return Err(Error::Data(format!(
            "negative sampling needs at least 2 candidate entities, got {}",
            entities.len()
        )));
    }
    if ratio < 1 {
        return Err(Error::Config("negative ratio must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, &["negatives".into()]);
    let mut negatives = Vec::with_capacity(positives.len() * ratio);
    let mut fallback_count = 0;
    for p in positives {
        for _ in 0..ratio {
            let mut chosen = Triple::new(0, 0, 0);
            for _ in 0..NEGATIVE_RETRIES {
                let corrupt_head = rng.gen_bool(0.5);
                let original = if corrupt_head { p.head } else { p.tail };
                // Draw uniformly among entities other than the original so the
                // negative always differs in the chosen slot.
                let replacement = match entities.binary_search(&original) {
                    Ok(skip) => {
                        let j = rng.gen_range(0..entities.len() - 1);
                        entities[if j >= skip { j + 1 } else { j }]
                    }
                    Err(_) => entities[rng.gen_range(0..entities.len())],
                };
                chosen = if corrupt_head {
                    Triple::new(replacement, p.relation, p.tail)
                } else {
                    Triple::new(p.head, p.relation, replacement)
                };
                if !known_positives.contains(&chosen) {
                    break;
                }
            }
            // Every retry collided: emit the last draw anyway and record it.
            if known_positives.contains(&chosen) {
                fallback_count += 1;
            }
            negatives.push(chosen);
        }
    }
    Ok(NegativeSample { negatives, fallback_count })
}

/// One SGD step: rows named in `grads` move by `-lr * grad` unless frozen,
/// then the touched rows are constraint-projected. Returns the actual
/// post-projection change of every row that moved, which consolidation
/// methods need.
pub fn sgd_step(
    m: &mut ModelState,
    grads: &SparseGrads,
    lr: f64,
    mask: &FreezeMask,
) -> Result<SparseGrads> {
    if lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !grads.all_finite() {
        return Err(Error::Numerical(
            "non-finite gradient; aborting before corrupting the model".into(),
        ));
    }
    let transe = m.kind() == ModelKind::TransE;
    let mut deltas = SparseGrads::default();
    for (&e, g) in &grads.entity {
        if mask.entity_frozen(e) {
            continue;
        }
        let row = m.entity_row_mut(e);
        let old = row.to_vec();
        for (x, gk) in row.iter_mut().zip(g) {
            *x -= lr * gk;
        }
        if transe {
            project_row(row);
        }
        let delta: Vec<f64> = row.iter().zip(&old).map(|(new, old)| new - old).collect();
        deltas.entity.insert(e, delta);
    }
    for (&r, g) in &grads.relation {
        if mask.relation_frozen(r) {
            continue;
        }
        let row = m.relation_row_mut(r);
        let old = row.to_vec();
        for (x, gk) in row.iter_mut().zip(g) {
            *x -= lr * gk;
        }
        if transe {
            project_row(row);
        }
        let delta: Vec<f64> = row.iter().zip(&old).map(|(new, old)| new - old).collect();
        deltas.relation.insert(r, delta);
    }
    Ok(deltas)
}

/// Materialize an Analogy relation row as its dense block-diagonal matrix,
/// mainly so tests can verify normality and commutation directly.
pub fn analogy_dense(rel_row: &[f64]) -> Vec<Vec<f64>> {
    let d = rel_row.len();
    let mut w = vec![vec![0.0; d]; d];
    for k in 0..d / 2 {
        let (a, b) = (rel_row[2 * k], rel_row[2 * k + 1]);
        w[2 * k][2 * k] = a;
        w[2 * k][2 * k + 1] = -b;
        w[2 * k + 1][2 * k] = b;
        w[2 * k + 1][2 * k + 1] = a;
    }
    w
}
