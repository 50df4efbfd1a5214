//! Heuristic partition of a graph into N learning-session datasets.
//!
//! Training triples are sampled uniformly without replacement, `⌊|Tr|/N⌋`
//! per session (remainder appended to the final session), so session train
//! sets are pairwise disjoint and their union is the original training set.
//! A session's valid/test sets are the original valid/test triples whose
//! head, relation, and tail have all been observed in the training triples
//! of this or any earlier session, so they grow as coverage grows.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::{entities_of, relations_of, write_triples, GraphSplits, Triple};
use crate::error::{Error, Result};
use crate::rng;

/// The data visible to one learning session.
#[derive(Debug, Clone)]
pub struct SessionDataset {
    /// 0-based session number.
    pub index: usize,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Entities occurring in this session's train triples (E^n).
    pub entities: BTreeSet<u32>,
    /// Relations occurring in this session's train triples (R^n).
    pub relations: BTreeSet<u32>,
    /// All entities observed in train triples up to and including this
    /// session (cumulative union).
    pub seen_entities: BTreeSet<u32>,
    /// All relations observed so far (cumulative union).
    pub seen_relations: BTreeSet<u32>,
}

/// Partition `splits` into `n_sessions` session datasets.
///
/// Deterministic for a fixed seed. Errors if there are fewer training
/// triples than sessions.
pub fn sample_sessions(
    splits: &GraphSplits,
    n_sessions: usize,
    seed: u64,
) -> Result<Vec<SessionDataset>> {
    if n_sessions == 0 {
        return Err(Error::Config("session count must be at least 1".into()));
    }
    if splits.train.len() < n_sessions {
        return Err(Error::Data(format!(
            "cannot split {} training triples into {} sessions",
            splits.train.len(),
            n_sessions
        )));
    }

    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut rng = rng::stream(seed, &["session-sampler".into()]);
    order.shuffle(&mut rng);

    let per_session = splits.train.len() / n_sessions;
    let mut sessions = Vec::with_capacity(n_sessions);
    let mut seen_entities: BTreeSet<u32> = BTreeSet::new();
    let mut seen_relations: BTreeSet<u32> = BTreeSet::new();
    let mut offset = 0;

    for n in 0..n_sessions {
        // Remainder triples go to the last session.
        let take = if n + 1 == n_sessions {
            splits.train.len() - offset
        } else {
            per_session
        };
        let train: Vec<Triple> = order[offset..offset + take]
            .iter()
            .map(|&i| splits.train[i])
            .collect();
        offset += take;

        let entities = entities_of(&train);
        let relations = relations_of(&train);
        seen_entities.extend(entities.iter().copied());
        seen_relations.extend(relations.iter().copied());

        let in_scope = |t: &Triple| {
            seen_entities.contains(&t.head)
                && seen_entities.contains(&t.tail)
                && seen_relations.contains(&t.relation)
        };
        let valid: Vec<Triple> = splits.valid.iter().filter(|t| in_scope(t)).copied().collect();
        let test: Vec<Triple> = splits.test.iter().filter(|t| in_scope(t)).copied().collect();

        sessions.push(SessionDataset {
            index: n,
            train,
            valid,
            test,
            entities,
            relations,
            seen_entities: seen_entities.clone(),
            seen_relations: seen_relations.clone(),
        });
    }

    Ok(sessions)
}

/// Renumbering of entity and relation ids by first observation in session
/// train sets. After remapping, the ids observed by session n form the
/// contiguous prefix 0..|observed(n)|, so embedding matrices can grow by
/// appending rows and "row exists" means "seen by now".
#[derive(Debug, Clone)]
pub struct IdRemap {
    /// global entity id -> model id; None for entities never observed in
    /// any session's train triples (they cannot be embedded or ranked).
    pub entity_to_model: Vec<Option<u32>>,
    /// model id -> global entity id.
    pub model_to_entity: Vec<u32>,
    pub relation_to_model: Vec<Option<u32>>,
    pub model_to_relation: Vec<u32>,
}

/// Rewrite all session triples into first-observation id order.
///
/// New ids within one session are assigned in ascending global-id order,
/// which keeps the mapping deterministic for a fixed session list.
pub fn remap_by_first_observation(
    sessions: &[SessionDataset],
    n_entities: usize,
    n_relations: usize,
) -> (Vec<SessionDataset>, IdRemap) {
    let mut entity_to_model: Vec<Option<u32>> = vec![None; n_entities];
    let mut model_to_entity: Vec<u32> = Vec::new();
    let mut relation_to_model: Vec<Option<u32>> = vec![None; n_relations];
    let mut model_to_relation: Vec<u32> = Vec::new();

    for s in sessions {
        for &e in &s.entities {
            if entity_to_model[e as usize].is_none() {
                entity_to_model[e as usize] = Some(model_to_entity.len() as u32);
                model_to_entity.push(e);
            }
        }
        for &r in &s.relations {
            if relation_to_model[r as usize].is_none() {
                relation_to_model[r as usize] = Some(model_to_relation.len() as u32);
                model_to_relation.push(r);
            }
        }
    }

    let map = |t: &Triple| {
        Triple::new(
            entity_to_model[t.head as usize].expect("head observed"),
            relation_to_model[t.relation as usize].expect("relation observed"),
            entity_to_model[t.tail as usize].expect("tail observed"),
        )
    };
    let remapped = sessions
        .iter()
        .map(|s| {
            let train: Vec<Triple> = s.train.iter().map(&map).collect();
            let entities = entities_of(&train);
            let relations = relations_of(&train);
            SessionDataset {
                index: s.index,
                valid: s.valid.iter().map(&map).collect(),
                test: s.test.iter().map(&map).collect(),
                seen_entities: (0..s.seen_entities.len() as u32).collect(),
                seen_relations: (0..s.seen_relations.len() as u32).collect(),
                train,
                entities,
                relations,
            }
        })
        .collect();

    let remap = IdRemap {
        entity_to_model,
        model_to_entity,
        relation_to_model,
        model_to_relation,
    };
    (remapped, remap)
}

/// One row of the per-session statistics table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SessionStats {
    pub session: usize,
    pub n_entities: usize,
    /// Cumulative observed entities / total entities.
    pub entity_coverage: f64,
    pub n_relations: usize,
    pub relation_coverage: f64,
    pub n_train: usize,
    /// Cumulative sampled train triples / |train|.
    pub train_coverage: f64,
    pub n_valid: usize,
    pub valid_coverage: f64,
    pub n_test: usize,
    pub test_coverage: f64,
}

/// Per-session counts and coverage percentages against the full graph.
pub fn session_stats(sessions: &[SessionDataset], splits: &GraphSplits) -> Vec<SessionStats> {
    let total_entities = splits.vocab.n_entities().max(1);
    let total_relations = splits.vocab.n_relations().max(1);
    let total_train = splits.train.len().max(1);
    let total_valid = splits.valid.len().max(1);
    let total_test = splits.test.len().max(1);

    let mut cumulative_train = 0usize;
    sessions
        .iter()
        .map(|s| {
            cumulative_train += s.train.len();
            SessionStats {
                session: s.index,
                n_entities: s.entities.len(),
                entity_coverage: s.seen_entities.len() as f64 / total_entities as f64,
                n_relations: s.relations.len(),
                relation_coverage: s.seen_relations.len() as f64 / total_relations as f64,
                n_train: s.train.len(),
                train_coverage: cumulative_train as f64 / total_train as f64,
                n_valid: s.valid.len(),
                valid_coverage: s.valid.len() as f64 / total_valid as f64,
                n_test: s.test.len(),
                test_coverage: s.test.len() as f64 / total_test as f64,
            }
        })
        .collect()
}

fn stats_row(label: &str, cells: impl Iterator<Item = String>) -> String {
    let mut row = label.to_owned();
    for c in cells {
        row.push('\t');
        row.push_str(&c);
    }
    row
}

/// Write `sessions/<n>/{train,valid,test}.tsv` plus a `stats.tsv` table with
/// one statistic per row and one session per column (value/(coverage%)).
pub fn write_sessions(sessions: &[SessionDataset], splits: &GraphSplits, dir: &Path) -> Result<()> {
    for s in sessions {
        let sdir = dir.join(s.index.to_string());
        fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        write_triples(&sdir.join("train.tsv"), &s.train, &splits.vocab)?;
        write_triples(&sdir.join("valid.tsv"), &s.valid, &splits.vocab)?;
        write_triples(&sdir.join("test.tsv"), &s.test, &splits.vocab)?;
    }

    let stats = session_stats(sessions, splits);
    let pct = |x: f64| format!("({:.0}%)", x * 100.0);
    let lines = vec![
        stats_row("", stats.iter().map(|s| format!("LS-{}", s.session + 1))),
        stats_row(
            "E_n",
            stats.iter().map(|s| format!("{}/{}", s.n_entities, pct(s.entity_coverage))),
        ),
        stats_row(
            "R_n",
            stats.iter().map(|s| format!("{}/{}", s.n_relations, pct(s.relation_coverage))),
        ),
        stats_row(
            "D_tr",
            stats.iter().map(|s| format!("{}/{}", s.n_train, pct(s.train_coverage))),
        ),
        stats_row(
            "D_va",
            stats.iter().map(|s| format!("{}/{}", s.n_valid, pct(s.valid_coverage))),
        ),
        stats_row(
            "D_te",
            stats.iter().map(|s| format!("{}/{}", s.n_test, pct(s.test_coverage))),
        ),
    ];
    crate::data::write_tsv(&dir.join("stats.tsv"), lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocab;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn graph(n_entities: u32, triples: Vec<(u32, u32, u32)>) -> GraphSplits {
        let vocab = Vocab::new(
            (0..n_entities).map(|i| format!("e{i}")).collect(),
            vec!["r0".into(), "r1".into()],
        )
        .unwrap();
        GraphSplits {
            vocab,
            train: triples.into_iter().map(|(h, r, t)| Triple::new(h, r, t)).collect(),
            valid: vec![],
            test: vec![],
        }
    }

    fn ten_triple_graph() -> GraphSplits {
        graph(
            6,
            vec![
                (0, 0, 1),
                (1, 0, 2),
                (2, 0, 3),
                (3, 0, 4),
                (4, 0, 5),
                (5, 1, 0),
                (0, 1, 2),
                (1, 1, 3),
                (2, 1, 4),
                (3, 1, 5),
            ],
        )
    }

    #[test]
    fn two_sessions_partition_exactly() {
        // Set-algebra oracle: disjointness and union checked exhaustively.
        let g = ten_triple_graph();
        let sessions = sample_sessions(&g, 2, 13).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].train.len(), 5);
        assert_eq!(sessions[1].train.len(), 5);

        let a: HashSet<Triple> = sessions[0].train.iter().copied().collect();
        let b: HashSet<Triple> = sessions[1].train.iter().copied().collect();
        assert!(a.is_disjoint(&b));
        let union: HashSet<Triple> = a.union(&b).copied().collect();
        let original: HashSet<Triple> = g.train.iter().copied().collect();
        assert_eq!(union, original);
    }

    #[test]
    fn single_session_is_identity_partition() {
        let mut g = ten_triple_graph();
        g.valid = vec![Triple::new(0, 0, 2)];
        g.test = vec![Triple::new(1, 0, 4)];
        let sessions = sample_sessions(&g, 1, 99).unwrap();
        assert_eq!(sessions.len(), 1);
        let train: HashSet<Triple> = sessions[0].train.iter().copied().collect();
        assert_eq!(train, g.train.iter().copied().collect());
        assert_eq!(sessions[0].valid, g.valid);
        assert_eq!(sessions[0].test, g.test);
    }

    #[test]
    fn oversized_session_count_is_an_error() {
        let g = ten_triple_graph();
        assert!(sample_sessions(&g, 11, 1).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let g = ten_triple_graph();
        let a = sample_sessions(&g, 3, 7).unwrap();
        let b = sample_sessions(&g, 3, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.train, y.train);
            assert_eq!(x.valid, y.valid);
            assert_eq!(x.test, y.test);
        }
    }

    #[test]
    fn remainder_goes_to_last_session() {
        let g = ten_triple_graph();
        let sessions = sample_sessions(&g, 3, 7).unwrap();
        assert_eq!(sessions[0].train.len(), 3);
        assert_eq!(sessions[1].train.len(), 3);
        assert_eq!(sessions[2].train.len(), 4);
    }

    #[test]
    fn valid_and_test_filter_on_cumulative_sets() {
        let mut g = graph(4, vec![(0, 0, 1), (2, 0, 3)]);
        g.valid = vec![Triple::new(0, 0, 3), Triple::new(0, 0, 1)];
        // One session sees {0,1}, the other {2,3}; (0,0,3) spans both so it
        // only appears once all four entities are observed.
        let sessions = sample_sessions(&g, 2, 5).unwrap();
        assert_eq!(sessions[0].valid.len(), 1);
        assert_eq!(sessions[1].valid.len(), 2);
    }

    #[test]
    fn stats_single_session_has_full_coverage() {
        let mut g = ten_triple_graph();
        g.valid = vec![Triple::new(0, 0, 2)];
        g.test = vec![Triple::new(1, 0, 4)];
        let sessions = sample_sessions(&g, 1, 3).unwrap();
        let stats = session_stats(&sessions, &g);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].entity_coverage, 1.0);
        assert_eq!(stats[0].relation_coverage, 1.0);
        assert_eq!(stats[0].train_coverage, 1.0);
        assert_eq!(stats[0].valid_coverage, 1.0);
        assert_eq!(stats[0].test_coverage, 1.0);
    }

    #[test]
    fn stats_match_independent_recount() {
        // Recount coverage from the raw session triples rather than the
        // sampler's bookkeeping.
        let mut g = ten_triple_graph();
        g.valid = vec![Triple::new(0, 0, 3), Triple::new(1, 0, 5)];
        g.test = vec![Triple::new(2, 0, 5)];
        let sessions = sample_sessions(&g, 2, 21).unwrap();
        let stats = session_stats(&sessions, &g);

        let mut seen = BTreeSet::new();
        for (s, st) in sessions.iter().zip(&stats) {
            seen.extend(entities_of(&s.train));
            let expected = seen.len() as f64 / g.vocab.n_entities() as f64;
            assert!((st.entity_coverage - expected).abs() < 1e-12);
            assert_eq!(st.n_train, s.train.len());
            assert_eq!(st.n_valid, s.valid.len());
        }
    }

    #[test]
    fn remap_makes_observed_ids_contiguous() {
        let mut g = ten_triple_graph();
        g.valid = vec![Triple::new(0, 0, 3), Triple::new(1, 0, 5)];
        g.test = vec![Triple::new(2, 0, 5)];
        let sessions = sample_sessions(&g, 3, 17).unwrap();
        let (remapped, remap) =
            remap_by_first_observation(&sessions, g.vocab.n_entities(), g.vocab.n_relations());

        // Observed sets become contiguous prefixes that line up with counts.
        for (orig, new) in sessions.iter().zip(&remapped) {
            assert_eq!(orig.seen_entities.len(), new.seen_entities.len());
            let max = new.seen_entities.iter().max().copied().unwrap();
            assert_eq!(max as usize + 1, new.seen_entities.len());
            assert_eq!(orig.train.len(), new.train.len());
            assert_eq!(orig.valid.len(), new.valid.len());
        }

        // Round-trip through the mapping recovers the original triples.
        for (orig, new) in sessions.iter().zip(&remapped) {
            for (a, b) in orig.train.iter().zip(&new.train) {
                assert_eq!(remap.model_to_entity[b.head as usize], a.head);
                assert_eq!(remap.model_to_relation[b.relation as usize], a.relation);
                assert_eq!(remap.model_to_entity[b.tail as usize], a.tail);
            }
        }

        // Mapping is consistent in both directions.
        for (g_id, m_id) in remap.entity_to_model.iter().enumerate() {
            if let Some(m) = m_id {
                assert_eq!(remap.model_to_entity[*m as usize] as usize, g_id);
            }
        }
    }

    proptest! {
        #[test]
        fn partition_invariants_hold(
            raw in proptest::collection::hash_set((0u32..12, 0u32..2, 0u32..12), 2..60),
            n_sessions in 1usize..5,
            seed in 0u64..1000,
        ) {
            let triples: Vec<(u32, u32, u32)> = raw.into_iter().collect();
            prop_assume!(triples.len() >= n_sessions);
            let g = graph(12, triples);
            let sessions = sample_sessions(&g, n_sessions, seed).unwrap();

            // Exact sizes.
            let per = g.train.len() / n_sessions;
            for s in &sessions[..n_sessions - 1] {
                prop_assert_eq!(s.train.len(), per);
            }

            // Disjoint, union = original.
            let mut all = HashSet::new();
            for s in &sessions {
                for t in &s.train {
                    prop_assert!(all.insert(*t), "duplicate across sessions");
                }
            }
            let original: HashSet<Triple> = g.train.iter().copied().collect();
            prop_assert_eq!(all, original);

            // Monotone observed sets and nondecreasing valid/test sizes.
            for w in sessions.windows(2) {
                prop_assert!(w[0].seen_entities.is_subset(&w[1].seen_entities));
                prop_assert!(w[0].seen_relations.is_subset(&w[1].seen_relations));
                prop_assert!(w[0].valid.len() <= w[1].valid.len());
                prop_assert!(w[0].test.len() <= w[1].test.len());
            }
        }
    }
}
