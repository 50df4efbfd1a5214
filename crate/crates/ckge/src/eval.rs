//! Filtered link-prediction ranking, MRR and Hits@10, the NxN performance
//! matrices, and the continual-learning measures ACC, FWT, BWT (+BWT, REM),
//! MS, SSS, and LCA.

use std::collections::HashSet;

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::sampler::SessionDataset;

/// How to rank the true triple among equally-scored corruptions. The paper
/// is silent on ties; optimistic ranking (1 + strictly better) is the
/// default, the others exist for sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RankMode {
    Optimistic,
    Pessimistic,
    Mean,
}

impl Default for RankMode {
    fn default() -> Self {
        RankMode::Optimistic
    }
}

/// Rank of the true triple against corruptions of one slot.
fn rank_from_counts(better: usize, ties: usize, mode: RankMode) -> f64 {
    match mode {
        RankMode::Optimistic => (1 + better) as f64,
        RankMode::Pessimistic => (1 + better + ties) as f64,
        RankMode::Mean => 1.0 + better as f64 + ties as f64 / 2.0,
    }
}

/// Filtered ranks of `t` under head and tail replacement.
///
/// Corruptions come from `candidates` (the entities observed so far);
/// corruptions present in `filter` still represent true relationships and
/// are removed from the competition, as is the true triple itself.
pub fn filtered_rank(
    m: &ModelState,
    t: Triple,
    candidates: &[u32],
    filter: &HashSet<Triple>,
    mode: RankMode,
) -> Result<(f64, f64)> {
    if candidates.len() < 2 {
        return Err(Error::Data(format!(
            "ranking needs at least 2 candidate entities, got {}",
            candidates.len()
        )));
    }
    m.goodness(t)?;

    // Scoring the true triple through the same context path as the
    // corruptions keeps floating-point rounding identical on both sides of
    // every comparison.
    let tail_ctx = m.tail_context(t.head, t.relation);
    let true_tail = m.goodness_with_tail_context(&tail_ctx, t.tail);
    let (mut better, mut ties) = (0usize, 0usize);
    for &c in candidates {
        if c == t.tail {
            continue;
        }
        if filter.contains(&Triple::new(t.head, t.relation, c)) {
            continue;
        }
        let g = m.goodness_with_tail_context(&tail_ctx, c);
        if g > true_tail {
            better += 1;
        } else if g == true_tail {
            ties += 1;
        }
    }
    let tail_rank = rank_from_counts(better, ties, mode);

    let head_ctx = m.head_context(t.tail, t.relation);
    let true_head = m.goodness_with_head_context(&head_ctx, t.head);
    let (mut better, mut ties) = (0usize, 0usize);
    for &c in candidates {
        if c == t.head {
            continue;
        }
        if filter.contains(&Triple::new(c, t.relation, t.tail)) {
            continue;
        }
        let g = m.goodness_with_head_context(&head_ctx, c);
        if g > true_head {
            better += 1;
        } else if g == true_head {
            ties += 1;
        }
    }
    let head_rank = rank_from_counts(better, ties, mode);

    Ok((head_rank, tail_rank))
}

/// Fold a list of ranks (`None` marks a triple the model cannot score,
/// which counts as a miss) into (MRR, Hits@10).
fn aggregate_ranks(ranks: &[Option<f64>]) -> (f64, f64) {
    if ranks.is_empty() {
        return (0.0, 0.0);
    }
    let mut rr = 0.0;
    let mut hits = 0.0;
    for r in ranks {
        if let Some(rank) = r {
            rr += 1.0 / rank;
            if *rank <= 10.0 {
                hits += 1.0;
            }
        }
    }
    (rr / ranks.len() as f64, hits / ranks.len() as f64)
}

/// MRR and Hits@10 over a test set, averaging head and tail ranks of every
/// triple. Triples naming an entity or relation the model has no row for
/// count as misses rather than being skipped, so a model evaluated on a
/// later session's test set is penalized for what it has not yet seen.
pub fn eval_split(
    m: &ModelState,
    test: &[Triple],
    candidates: &[u32],
    filter: &HashSet<Triple>,
    mode: RankMode,
) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::Data("cannot evaluate an empty test set".into()));
    }
    let mut ranks = Vec::with_capacity(test.len() * 2);
    for &t in test {
        if m.covers(t) {
            let (head, tail) = filtered_rank(m, t, candidates, filter, mode)?;
            ranks.push(Some(head));
            ranks.push(Some(tail));
        } else {
            ranks.push(None);
            ranks.push(None);
        }
    }
    Ok(aggregate_ranks(&ranks))
}

/// Square matrix of a measure: entry (i, j) is performance on session j's
/// test set after training session i.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct MetricMatrix {
    values: Vec<Vec<f64>>,
}

impl MetricMatrix {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Data("metric matrix must be nonempty".into()));
        }
        for row in &values {
            if row.len() != n {
                return Err(Error::Data(format!(
                    "metric matrix is not square: {n} rows but a row of length {}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !(-1e-9..=1.0 + 1e-9).contains(x)) {
                return Err(Error::Data("metric matrix entry outside [0,1]".into()));
            }
        }
        Ok(MetricMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Average performance over the lower triangle including the diagonal:
/// every test set measured after it has been trained on.
pub fn acc(m: &MetricMatrix) -> f64 {
    let n = m.n();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..=i {
            sum += m.get(i, j);
        }
    }
    sum / (n * (n + 1) / 2) as f64
}

/// Average performance on not-yet-trained test sets (strict upper
/// triangle). Undefined for a single session.
pub fn fwt(m: &MetricMatrix) -> Option<f64> {
    let n = m.n();
    if n < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += m.get(i, j);
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

/// Mean change on earlier test sets relative to when they were first
/// trained; negative values are forgetting. Undefined for a single session.
pub fn bwt(m: &MetricMatrix) -> Option<f64> {
    let n = m.n();
    if n < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 1..n {
        for j in 0..i {
            sum += m.get(i, j) - m.get(j, j);
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

pub fn plus_bwt(m: &MetricMatrix) -> Option<f64> {
    bwt(m).map(|b| b.max(0.0))
}

pub fn rem(m: &MetricMatrix) -> Option<f64> {
    bwt(m).map(|b| 1.0 - b.min(0.0).abs())
}

/// Model-size efficiency: min(1, mean of U(theta_1)/U(theta_i)).
pub fn ms(model_bytes: &[u64]) -> Result<f64> {
    if model_bytes.is_empty() {
        return Err(Error::Data("ms needs at least one byte count".into()));
    }
    if model_bytes.iter().any(|&b| b == 0) {
        return Err(Error::Data("ms is undefined for a zero-byte model".into()));
    }
    let first = model_bytes[0] as f64;
    let sum: f64 = model_bytes.iter().map(|&b| first / b as f64).sum();
    Ok((sum / model_bytes.len() as f64).min(1.0))
}

/// Samples-stored efficiency: 1 - min(1, mean of U(SS_i)/U(D_Tr)).
pub fn sss(stored_bytes: &[u64], total_bytes: u64) -> Result<f64> {
    if stored_bytes.is_empty() {
        return Err(Error::Data("sss needs at least one byte count".into()));
    }
    if total_bytes == 0 {
        return Err(Error::Data("sss is undefined for an empty training set".into()));
    }
    let sum: f64 = stored_bytes.iter().map(|&b| b as f64 / total_bytes as f64).sum();
    Ok(1.0 - (sum / stored_bytes.len() as f64).min(1.0))
}

/// Which training loop produced a trace point. Generator epochs belong to
/// DGR's generative model and are excluded from the DGR-prime LCA variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    Solver,
    Generator,
}

/// Which measure a summary is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Measure {
    Mrr,
    Hits10,
}

/// One per-epoch measurement of the running validation performance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TraceEntry {
    pub session: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub mrr: f64,
    pub hits: f64,
}

impl TraceEntry {
    pub fn measure(&self, measure: Measure) -> f64 {
        match measure {
            Measure::Mrr => self.mrr,
            Measure::Hits10 => self.hits,
        }
    }
}

/// Learning-curve area: the area under the measure trace up to the first
/// epoch that attains the best value, as a proportion of the rectangle a
/// perfect zero-shot learner would cover. An all-zero (or empty) trace is
/// defined as 0.
pub fn lca(trace: &[TraceEntry], measure: Measure, include_generator_epochs: bool) -> f64 {
    let values: Vec<f64> = trace
        .iter()
        .filter(|e| include_generator_epochs || e.phase == Phase::Solver)
        .map(|e| e.measure(measure))
        .collect();
    if values.is_empty() {
        return 0.0;
    }
    let best = values.iter().copied().fold(f64::MIN, f64::max);
    if best <= 0.0 {
        return 0.0;
    }
    let t_star = values.iter().position(|&v| v == best).expect("max exists") + 1;
    let area: f64 = values[..t_star].iter().sum();
    area / (best * t_star as f64)
}

/// Fill both performance matrices (MRR, Hits@10) from one model snapshot
/// per session. Row i uses the entities observed by session i as candidates
/// and filters against all train triples seen so far plus session i's valid
/// and test sets.
pub fn build_matrices(
    models: &[ModelState],
    sessions: &[SessionDataset],
    mode: RankMode,
) -> Result<(MetricMatrix, MetricMatrix)> {
    if models.len() != sessions.len() {
        return Err(Error::Data(format!(
            "have {} model snapshots for {} sessions",
            models.len(),
            sessions.len()
        )));
    }
    let n = sessions.len();
    let mut mrr = vec![vec![0.0; n]; n];
    let mut hits = vec![vec![0.0; n]; n];
    let mut train_filter: HashSet<Triple> = HashSet::new();
    for (i, model) in models.iter().enumerate() {
        train_filter.extend(sessions[i].train.iter().copied());
        let mut filter = train_filter.clone();
        filter.extend(sessions[i].valid.iter().copied());
        filter.extend(sessions[i].test.iter().copied());
        let candidates: Vec<u32> = sessions[i].seen_entities.iter().copied().collect();
        for j in 0..n {
            if sessions[j].test.is_empty() {
                continue;
            }
            let (m, h) = eval_split(model, &sessions[j].test, &candidates, &filter, mode)?;
            mrr[i][j] = m;
            hits[i][j] = h;
        }
    }
    Ok((MetricMatrix::new(mrr)?, MetricMatrix::new(hits)?))
}
