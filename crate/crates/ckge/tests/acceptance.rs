//! Acceptance gate: one test per criterion, each printing a PASS line with
//! the numbers it verified. Criteria cover sampler set algebra, gradient and
//! ranking oracles, metric identities, method contracts, generator sanity,
//! desk-scale directional results, and whole-pipeline determinism.

use std::collections::HashSet;
use std::fs;
use std::time::{Duration, Instant};

use rand::Rng;

use ckge::data::{entities_of, relations_of, write_splits, Triple};
use ckge::eval::{
    acc, bwt, filtered_rank, fwt, lca, ms, plus_bwt, rem, sss, Measure, MetricMatrix, Phase,
    RankMode, TraceEntry,
};
use ckge::methods::{l2r_penalty, si_penalty, Importance, Method, MethodConfig, Strategy};
use ckge::model::{loss_grad, FreezeMask, ModelKind, ModelState, SparseGrads, TrainBatch};
use ckge::rng::{derive_seed, stream};
use ckge::sampler::{sample_sessions, SessionDataset};
use ckge::synth::{generate, SynthSpec};
use ckge::trainer::{train_solver, EvalCtx, SessionJob, SolverConfig};
use ckge::autodiff::Tensor;
use ckge::vae::{
    reconstruct_greedy, sample_triples, train_generator, vae_loss, GenConfig, GeneratorParams,
};

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_sampler_set_algebra() {
    let started = Instant::now();
    // Synthetic stand-in at the scale of the reference benchmark: ~41k
    // entities, ~87k training triples. (The per-session coverage comparison
    // against published percentages applies to the real dataset only.)
    let spec = SynthSpec::benchmark_scale(7);
    let splits = generate(&spec).unwrap();
    assert_eq!(splits.vocab.n_entities(), 40_943);
    assert_eq!(splits.train.len(), 86_835);

    let sessions = sample_sessions(&splits, 5, 7).unwrap();
    let floor = splits.train.len() / 5;
    for s in &sessions {
        assert_eq!(s.train.len(), floor, "session {} train size", s.index);
    }

    let full: HashSet<Triple> = splits.train.iter().copied().collect();
    let mut union: HashSet<Triple> = HashSet::new();
    let mut total = 0;
    for s in &sessions {
        total += s.train.len();
        union.extend(s.train.iter().copied());
    }
    assert_eq!(total, union.len(), "session train sets overlap");
    assert_eq!(union, full, "union of session trains is not the training set");

    let mut prev = 0;
    for s in &sessions {
        assert!(s.seen_entities.len() >= prev, "coverage shrank at session {}", s.index);
        prev = s.seen_entities.len();
    }
    let final_coverage = prev as f64 / splits.vocab.n_entities() as f64;
    assert!(final_coverage >= 0.99, "final entity coverage {final_coverage:.4} < 0.99");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "criterion 1 PASS: 5 disjoint sessions of {floor} triples, exact union, \
         final coverage {:.1}%, {elapsed:?}",
        final_coverage * 100.0
    );
}

// ---------------------------------------------------------------- criterion 2

/// |analytic - numeric| measured relative to the larger magnitude, floored
/// at 1 so near-zero gradients are compared absolutely.
fn fd_mismatch(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn grad_at(grads: &SparseGrads, entity: bool, row: u32, k: usize) -> f64 {
    let map = if entity { &grads.entity } else { &grads.relation };
    map.get(&row).map_or(0.0, |r| r[k])
}

/// Random batch over a tiny vocabulary; negatives corrupt head or tail.
fn random_batch(rng: &mut impl Rng, n_ent: u32, n_rel: u32) -> TrainBatch {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for _ in 0..3 {
        let p = Triple::new(
            rng.gen_range(0..n_ent),
            rng.gen_range(0..n_rel),
            rng.gen_range(0..n_ent),
        );
        let other = (0..8)
            .map(|_| rng.gen_range(0..n_ent))
            .find(|&e| e != p.head && e != p.tail)
            .unwrap_or((p.head + 1) % n_ent);
        let n = if rng.gen_bool(0.5) {
            Triple::new(other, p.relation, p.tail)
        } else {
            Triple::new(p.head, p.relation, other)
        };
        pos.push(p);
        neg.push(n);
    }
    TrainBatch::new(pos, neg).unwrap()
}

fn random_rows(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-0.8..0.8)).collect()).collect()
}

/// Central finite difference of a loss expressed over explicit row storage.
fn fd_rows(
    ents: &[Vec<f64>],
    rels: &[Vec<f64>],
    entity: bool,
    row: usize,
    k: usize,
    h: f64,
    f: &dyn Fn(&[Vec<f64>], &[Vec<f64>]) -> f64,
) -> f64 {
    let mut up = (ents.to_vec(), rels.to_vec());
    let mut dn = (ents.to_vec(), rels.to_vec());
    if entity {
        up.0[row][k] += h;
        dn.0[row][k] -= h;
    } else {
        up.1[row][k] += h;
        dn.1[row][k] -= h;
    }
    (f(&up.0, &up.1) - f(&dn.0, &dn.1)) / (2.0 * h)
}

/// The margin loss is piecewise linear, so instances are resampled until
/// every L1 coordinate and every hinge term is safely away from its kink.
fn guarded_transe_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, TrainBatch) {
    let mut rng = stream(seed, &["fd-transe".into()]);
    loop {
        let ents = random_rows(&mut rng, 5, 4);
        let rels = random_rows(&mut rng, 2, 4);
        let batch = random_batch(&mut rng, 5, 2);
        let m = ModelState::from_rows(ModelKind::TransE, 4, &ents, &rels).unwrap();
        let score = |t: &Triple| ckge::model::transe_score(&m, *t).unwrap();
        let residual_ok = |t: &Triple| {
            (0..4).all(|k| {
                let r = ents[t.head as usize][k] + rels[t.relation as usize][k]
                    - ents[t.tail as usize][k];
                r.abs() > 1e-3
            })
        };
        let ok = batch.pairs().all(|(p, n)| {
            residual_ok(p) && residual_ok(n) && (score(p) + 1.0 - score(n)).abs() > 1e-3
        });
        if ok {
            return (ents, rels, batch);
        }
    }
}

#[test]
fn criterion_2_gradient_oracles() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;

    // TransE margin loss.
    for i in 0..20 {
        let (ents, rels, batch) = guarded_transe_instance(100 + i);
        let m = ModelState::from_rows(ModelKind::TransE, 4, &ents, &rels).unwrap();
        let (_, grads) = loss_grad(&m, &batch, 1.0).unwrap();
        let f = |e: &[Vec<f64>], r: &[Vec<f64>]| {
            let m = ModelState::from_rows(ModelKind::TransE, 4, e, r).unwrap();
            loss_grad(&m, &batch, 1.0).unwrap().0
        };
        for row in 0..5 {
            for k in 0..4 {
                let fd = fd_rows(&ents, &rels, true, row, k, 1e-5, &f);
                let err = fd_mismatch(grad_at(&grads, true, row as u32, k), fd);
                assert!(err < 1e-4, "transe entity grad off by {err}");
                worst = worst.max(err);
            }
        }
        for row in 0..2 {
            for k in 0..4 {
                let fd = fd_rows(&ents, &rels, false, row, k, 1e-5, &f);
                let err = fd_mismatch(grad_at(&grads, false, row as u32, k), fd);
                assert!(err < 1e-4, "transe relation grad off by {err}");
                worst = worst.max(err);
            }
        }
    }

    // Analogy logistic loss (smooth, no guards needed).
    for i in 0..20 {
        let mut rng = stream(200 + i, &["fd-analogy".into()]);
        let ents = random_rows(&mut rng, 5, 4);
        let rels = random_rows(&mut rng, 2, 4);
        let batch = random_batch(&mut rng, 5, 2);
        let m = ModelState::from_rows(ModelKind::Analogy, 4, &ents, &rels).unwrap();
        let (_, grads) = loss_grad(&m, &batch, 1.0).unwrap();
        let f = |e: &[Vec<f64>], r: &[Vec<f64>]| {
            let m = ModelState::from_rows(ModelKind::Analogy, 4, e, r).unwrap();
            loss_grad(&m, &batch, 1.0).unwrap().0
        };
        for row in 0..5 {
            for k in 0..4 {
                let fd = fd_rows(&ents, &rels, true, row, k, 1e-5, &f);
                let err = fd_mismatch(grad_at(&grads, true, row as u32, k), fd);
                assert!(err < 1e-4, "analogy entity grad off by {err}");
                worst = worst.max(err);
            }
        }
        for row in 0..2 {
            for k in 0..4 {
                let fd = fd_rows(&ents, &rels, false, row, k, 1e-5, &f);
                let err = fd_mismatch(grad_at(&grads, false, row as u32, k), fd);
                assert!(err < 1e-4, "analogy relation grad off by {err}");
                worst = worst.max(err);
            }
        }
    }

    // L2R and SI penalties (quadratic; tighter tolerance).
    for i in 0..20 {
        let mut rng = stream(300 + i, &["fd-penalty".into()]);
        let ents = random_rows(&mut rng, 5, 4);
        let rels = random_rows(&mut rng, 2, 4);
        let snap = ModelState::from_rows(
            ModelKind::TransE,
            4,
            &random_rows(&mut rng, 3, 4),
            &random_rows(&mut rng, 1, 4),
        )
        .unwrap();
        let mut omega = Importance::zeros(3, 1, 4);
        omega.entity.iter_mut().for_each(|w| *w = rng.gen_range(0.0..2.0));
        omega.relation.iter_mut().for_each(|w| *w = rng.gen_range(0.0..2.0));
        let squared_inside = i % 2 == 1;

        let m = ModelState::from_rows(ModelKind::TransE, 4, &ents, &rels).unwrap();
        let (_, l2r_grads) = l2r_penalty(&m, &snap, 0.3).unwrap();
        let (_, si_grads) = si_penalty(&m, &snap, &omega, 0.7, squared_inside).unwrap();
        let f_l2r = |e: &[Vec<f64>], r: &[Vec<f64>]| {
            let m = ModelState::from_rows(ModelKind::TransE, 4, e, r).unwrap();
            l2r_penalty(&m, &snap, 0.3).unwrap().0
        };
        let f_si = |e: &[Vec<f64>], r: &[Vec<f64>]| {
            let m = ModelState::from_rows(ModelKind::TransE, 4, e, r).unwrap();
            si_penalty(&m, &snap, &omega, 0.7, squared_inside).unwrap().0
        };
        for row in 0..5 {
            for k in 0..4 {
                let fd = fd_rows(&ents, &rels, true, row, k, 1e-5, &f_l2r);
                let err = fd_mismatch(grad_at(&l2r_grads, true, row as u32, k), fd);
                assert!(err < 1e-6, "l2r grad off by {err}");
                let fd = fd_rows(&ents, &rels, true, row, k, 1e-5, &f_si);
                let err = fd_mismatch(grad_at(&si_grads, true, row as u32, k), fd);
                assert!(err < 1e-6, "si grad off by {err}");
                worst = worst.max(err);
            }
        }
        for k in 0..4 {
            let fd = fd_rows(&ents, &rels, false, 0, k, 1e-5, &f_si);
            let err = fd_mismatch(grad_at(&si_grads, false, 0, k), fd);
            assert!(err < 1e-6, "si relation grad off by {err}");
            worst = worst.max(err);
        }
    }

    // Full VAE loss over a sampled subset of coordinates per instance.
    for i in 0..20 {
        let mut rng = stream(400 + i, &["fd-vae".into()]);
        let p = GeneratorParams::init(4, 2, 4, 3, 4, 4000 + i).unwrap();
        let batch: Vec<Triple> = (0..3)
            .map(|_| {
                Triple::new(rng.gen_range(0..4), rng.gen_range(0..2), rng.gen_range(0..4))
            })
            .collect();
        let alpha = 0.7;
        let eps_seed = 900 + i;
        let out = vae_loss(&p, &batch, alpha, eps_seed).unwrap();
        let tensors: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        for _ in 0..40 {
            let ti = rng.gen_range(0..tensors.len());
            if tensors[ti].data.is_empty() {
                continue;
            }
            let ci = rng.gen_range(0..tensors[ti].data.len());
            let h = 1e-5;
            let eval = |delta: f64| {
                let mut t2 = tensors.clone();
                t2[ti].data[ci] += delta;
                let p2 = GeneratorParams::from_tensors(4, 2, 4, 3, 4, t2).unwrap();
                vae_loss(&p2, &batch, alpha, eps_seed).unwrap().loss
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = fd_mismatch(out.grads[ti].data[ci], fd);
            assert!(err < 1e-4, "vae grad off by {err} (tensor {ti}, coord {ci})");
            worst = worst.max(err);
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!("criterion 2 PASS: all gradients match central differences (worst {worst:.2e}), {elapsed:?}");
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_ranking_matches_brute_force() {
    let started = Instant::now();
    let mut checked = 0;
    for g in 0..100u64 {
        let mut rng = stream(g, &["rank-oracle".into()]);
        let n_ent = rng.gen_range(3..=50usize);
        let n_rel = rng.gen_range(1..=5usize);
        let kind = if g % 2 == 0 { ModelKind::TransE } else { ModelKind::Analogy };
        let ents = random_rows(&mut rng, n_ent, 4);
        let rels = random_rows(&mut rng, n_rel, 4);
        let m = ModelState::from_rows(kind, 4, &ents, &rels).unwrap();

        let target = Triple::new(
            rng.gen_range(0..n_ent as u32),
            rng.gen_range(0..n_rel as u32),
            rng.gen_range(0..n_ent as u32),
        );
        let mut filter: HashSet<Triple> = (0..2 * n_ent)
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..n_ent as u32),
                    rng.gen_range(0..n_rel as u32),
                    rng.gen_range(0..n_ent as u32),
                )
            })
            .collect();
        if g % 2 == 0 {
            filter.insert(target);
        }
        let candidates: Vec<u32> = (0..n_ent as u32).collect();

        // Brute force: score every surviving corruption, count outcomes.
        let brute = |replace_head: bool| -> (usize, usize) {
            let true_score = m.goodness(target).unwrap();
            let mut better = 0;
            let mut ties = 0;
            for &c in &candidates {
                let (skip, corrupted) = if replace_head {
                    (c == target.head, Triple::new(c, target.relation, target.tail))
                } else {
                    (c == target.tail, Triple::new(target.head, target.relation, c))
                };
                if skip || filter.contains(&corrupted) {
                    continue;
                }
                let s = m.goodness(corrupted).unwrap();
                if s > true_score {
                    better += 1;
                } else if s == true_score {
                    ties += 1;
                }
            }
            (better, ties)
        };
        let (hb, ht) = brute(true);
        let (tb, tt) = brute(false);

        for mode in [RankMode::Optimistic, RankMode::Pessimistic, RankMode::Mean] {
            let expect = |better: usize, ties: usize| -> f64 {
                match mode {
                    RankMode::Optimistic => (1 + better) as f64,
                    RankMode::Pessimistic => (1 + better + ties) as f64,
                    RankMode::Mean => (1 + better) as f64 + ties as f64 / 2.0,
                }
            };
            let (head_rank, tail_rank) =
                filtered_rank(&m, target, &candidates, &filter, mode).unwrap();
            assert_eq!(head_rank, expect(hb, ht), "head rank, graph {g}, {mode:?}");
            assert_eq!(tail_rank, expect(tb, tt), "tail rank, graph {g}, {mode:?}");
            checked += 2;
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!("criterion 3 PASS: {checked} ranks across 100 graphs match brute force exactly, {elapsed:?}");
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_metric_oracles() {
    let tol = 1e-12;
    for i in 0..20u64 {
        let mut rng = stream(i, &["metric-oracle".into()]);
        let n = rng.gen_range(3..=6usize);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let m = MetricMatrix::new(rows.clone()).unwrap();

        // Independent summations, written straight from the definitions.
        let mut lower = 0.0;
        let mut upper = 0.0;
        let mut drift = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r >= c {
                    lower += rows[r][c];
                } else {
                    upper += rows[r][c];
                }
                if r > c {
                    drift += rows[r][c] - rows[c][c];
                }
            }
        }
        let pairs = (n * (n + 1) / 2) as f64;
        let cross = (n * (n - 1) / 2) as f64;
        assert!((acc(&m) - lower / pairs).abs() < tol);
        assert!((fwt(&m).unwrap() - upper / cross).abs() < tol);
        let b = drift / cross;
        assert!((bwt(&m).unwrap() - b).abs() < tol);
        assert!((plus_bwt(&m).unwrap() - b.max(0.0)).abs() < tol);
        assert!((rem(&m).unwrap() - (1.0 - b.min(0.0).abs())).abs() < tol);

        // Memory and storage scores.
        let sizes: Vec<u64> = (0..n).map(|_| rng.gen_range(1..1_000_000u64)).collect();
        let manual: f64 =
            sizes.iter().map(|&u| sizes[0] as f64 / u as f64).sum::<f64>() / n as f64;
        assert!((ms(&sizes).unwrap() - manual.min(1.0)).abs() < tol);

        let total = rng.gen_range(1_000..100_000u64);
        let stored: Vec<u64> = (0..n).map(|_| rng.gen_range(0..2 * total)).collect();
        let manual: f64 =
            stored.iter().map(|&s| s as f64 / total as f64).sum::<f64>() / n as f64;
        assert!((sss(&stored, total).unwrap() - (1.0 - manual.min(1.0))).abs() < tol);

        // Learning-curve area against a literal re-derivation.
        let trace: Vec<TraceEntry> = (0..rng.gen_range(5..40usize))
            .map(|e| {
                let v = (rng.gen_range(0.0..1.0f64) * 100.0).round() / 100.0;
                TraceEntry {
                    session: 0,
                    epoch: e + 1,
                    phase: if rng.gen_bool(0.3) { Phase::Generator } else { Phase::Solver },
                    mrr: v,
                    hits: v / 2.0,
                }
            })
            .collect();
        for include in [true, false] {
            let vals: Vec<f64> = trace
                .iter()
                .filter(|e| include || e.phase == Phase::Solver)
                .map(|e| e.mrr)
                .collect();
            let manual = if vals.is_empty() {
                0.0
            } else {
                let best = vals.iter().cloned().fold(f64::MIN, f64::max);
                if best <= 0.0 {
                    0.0
                } else {
                    let t = vals.iter().position(|&v| v == best).unwrap() + 1;
                    vals[..t].iter().sum::<f64>() / (best * t as f64)
                }
            };
            assert!((lca(&trace, Measure::Mrr, include) - manual).abs() < tol);
        }
    }

    // Trivial identities.
    let flat = MetricMatrix::new(vec![vec![0.4; 4]; 4]).unwrap();
    assert_eq!(bwt(&flat).unwrap(), 0.0);
    assert_eq!(rem(&flat).unwrap(), 1.0);
    assert_eq!(plus_bwt(&flat).unwrap(), 0.0);
    assert!((acc(&flat) - 0.4).abs() < tol);
    assert_eq!(ms(&[640, 640, 640]).unwrap(), 1.0);
    assert_eq!(sss(&[0, 0, 0], 1_000).unwrap(), 1.0);
    let flat_trace: Vec<TraceEntry> = (0..7)
        .map(|e| TraceEntry { session: 0, epoch: e + 1, phase: Phase::Solver, mrr: 0.8, hits: 0.8 })
        .collect();
    assert_eq!(lca(&flat_trace, Measure::Hits10, true), 1.0);

    println!("criterion 4 PASS: 20 random matrices match brute-force sums to 1e-12; identities hold");
}

// ---------------------------------------------------------------- criterion 5

/// Chain graph sessions over a growing contiguous vocabulary, mirroring the
/// id layout the sampler's remapping produces.
fn fixture_sessions() -> Vec<SessionDataset> {
    let ring: Vec<Triple> = (0..6u32).map(|i| Triple::new(i, 0, (i + 1) % 6)).collect();
    let mut extension: Vec<Triple> = (6..10u32).map(|i| Triple::new(i, 1, 6 + (i - 5) % 4)).collect();
    extension.push(Triple::new(0, 1, 6));
    extension.push(Triple::new(2, 1, 8));

    let build = |index: usize, train: Vec<Triple>, valid: Vec<Triple>, prev: Option<&SessionDataset>| {
        let entities = entities_of(&train);
        let relations = relations_of(&train);
        let mut seen_entities = prev.map(|p| p.seen_entities.clone()).unwrap_or_default();
        let mut seen_relations = prev.map(|p| p.seen_relations.clone()).unwrap_or_default();
        seen_entities.extend(entities.iter().copied());
        seen_relations.extend(relations.iter().copied());
        SessionDataset {
            index,
            train,
            valid,
            test: vec![],
            entities,
            relations,
            seen_entities,
            seen_relations,
        }
    };
    let s0 = build(0, ring.clone(), vec![ring[0], ring[3]], None);
    let s1 = build(1, extension.clone(), vec![extension[0]], Some(&s0));
    vec![s0, s1]
}

fn fixture_config() -> MethodConfig {
    MethodConfig {
        solver: SolverConfig {
            epochs: 8,
            batch_size: 8,
            lr: 0.05,
            margin: 1.0,
            neg_ratio: 1,
            early_stopping: false,
            check_every: 10,
            patience: 3,
            rank_mode: RankMode::Mean,
        },
        gen: GenConfig::with_epochs(10),
        l2r_lambda: 0.1,
        si_lambda: 1.0,
        si_xi: 1e-3,
        si_squared_inside: false,
        gen_dv: 8,
        gen_dz: 4,
        gen_dh: 8,
        retention_allowed: true,
    }
}

fn row_bits(m: &ModelState) -> Vec<Vec<u64>> {
    let mut rows = Vec::new();
    for e in 0..m.n_entities() as u32 {
        rows.push(m.entity_row(e).iter().map(|v| v.to_bits()).collect());
    }
    for r in 0..m.n_relations() as u32 {
        rows.push(m.relation_row(r).iter().map(|v| v.to_bits()).collect());
    }
    rows
}

#[test]
fn criterion_5_freeze_and_bound_contracts() {
    let sessions = fixture_sessions();
    let cfg = fixture_config();
    let seed = 11;

    let fresh_model = |sess: &SessionDataset| {
        ModelState::init(
            ModelKind::TransE,
            sess.seen_entities.len(),
            sess.seen_relations.len(),
            4,
            derive_seed(seed, &["init".into(), 0usize.into()]),
        )
        .unwrap()
    };

    // PNN: everything trained before a session stays bit-identical.
    let mut pnn = Strategy::new(Method::Pnn);
    let mut model = fresh_model(&sessions[0]);
    pnn.train_session(&mut model, &sessions[0], &cfg, seed).unwrap();
    let after_s0 = row_bits(&model);
    model.expand(10, 2, derive_seed(seed, &["init".into(), 1usize.into()])).unwrap();
    pnn.train_session(&mut model, &sessions[1], &cfg, seed).unwrap();
    let after_s1 = row_bits(&model);
    for e in 0..6 {
        assert_eq!(after_s0[e], after_s1[e], "pnn entity row {e} changed");
    }
    assert_eq!(after_s0[6], after_s1[10], "pnn relation row 0 changed");
    // New rows did train: they no longer match their freshly expanded init.
    let mut untouched = fresh_model(&sessions[0]);
    untouched.expand(10, 2, derive_seed(seed, &["init".into(), 1usize.into()])).unwrap();
    let init_rows = row_bits(&untouched);
    assert!((6..10).any(|e| init_rows[e] != after_s1[e]), "pnn never trained the new rows");

    // Batch: session n equals training from scratch on the cumulative
    // union with the same seed.
    let mut batch = Strategy::new(Method::Batch);
    let mut batch_model = fresh_model(&sessions[0]);
    batch.train_session(&mut batch_model, &sessions[0], &cfg, seed).unwrap();
    batch_model.expand(10, 2, derive_seed(seed, &["init".into(), 1usize.into()])).unwrap();
    batch.train_session(&mut batch_model, &sessions[1], &cfg, seed).unwrap();

    let mut scratch = ModelState::init(
        ModelKind::TransE,
        10,
        2,
        4,
        derive_seed(seed, &["init".into(), 1usize.into()]),
    )
    .unwrap();
    let mut union = sessions[0].train.clone();
    union.extend(sessions[1].train.iter().copied());
    let mut filter: HashSet<Triple> = union.iter().copied().collect();
    filter.extend(sessions[1].valid.iter().copied());
    let candidates: Vec<u32> = (0..10).collect();
    let job = SessionJob {
        session: 1,
        seed,
        train: &union,
        entity_pool: &candidates,
        known_positives: &filter,
        mask: &FreezeMask::default(),
        penalty: None,
        view: None,
        eval: EvalCtx { valid: &sessions[1].valid, candidates: &candidates, filter: &filter },
    };
    train_solver(&mut scratch, &job, &cfg.solver, None).unwrap();
    assert_eq!(
        row_bits(&batch_model),
        row_bits(&scratch),
        "batch diverged from from-scratch training on the union"
    );

    // SI with importance identically 1 is exactly the L2R penalty.
    for i in 0..20u64 {
        let mut rng = stream(i, &["si-eq-l2r".into()]);
        let cur = ModelState::from_rows(
            ModelKind::TransE,
            4,
            &random_rows(&mut rng, 6, 4),
            &random_rows(&mut rng, 2, 4),
        )
        .unwrap();
        let snap = ModelState::from_rows(
            ModelKind::TransE,
            4,
            &random_rows(&mut rng, 4, 4),
            &random_rows(&mut rng, 2, 4),
        )
        .unwrap();
        let mut ones = Importance::zeros(4, 2, 4);
        ones.entity.iter_mut().for_each(|w| *w = 1.0);
        ones.relation.iter_mut().for_each(|w| *w = 1.0);
        let lambda = rng.gen_range(0.01..3.0);
        let (lv, lg) = l2r_penalty(&cur, &snap, lambda).unwrap();
        let (sv, sg) = si_penalty(&cur, &snap, &ones, lambda, false).unwrap();
        assert_eq!(lv, sv, "penalty values differ at instance {i}");
        assert_eq!(lg, sg, "penalty gradients differ at instance {i}");
    }

    println!("criterion 5 PASS: pnn rows frozen, batch == from-scratch union, si(1) == l2r");
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_generator_sanity() {
    let started = Instant::now();
    let triples = vec![
        Triple::new(0, 0, 1),
        Triple::new(1, 1, 2),
        Triple::new(2, 2, 3),
        Triple::new(3, 0, 4),
        Triple::new(4, 1, 0),
    ];
    let mut p = GeneratorParams::init(5, 3, 8, 4, 10, 13).unwrap();
    let cfg = GenConfig {
        epochs: 2000,
        batch_size: 5,
        lr: 0.05,
        momentum: 0.9,
        lambda_am: 0.05,
        lambda_as: 20.0,
        lambda_ap: 0.0,
    };
    train_generator(&mut p, &triples, &cfg, 21).unwrap();

    let mut reconstructed = 0;
    for &t in &triples {
        if reconstruct_greedy(&p, t).unwrap() == t {
            reconstructed += 1;
        }
    }
    assert_eq!(reconstructed, 5, "greedy reconstruction must cover the whole fixture");

    let members: HashSet<Triple> = triples.iter().copied().collect();
    let mut rng = stream(99, &["sample".into()]);
    let samples = sample_triples(&p, 1000, &mut rng);
    assert_eq!(samples.len(), 1000);
    for s in &samples {
        assert!(
            (s.head as usize) < 5 && (s.relation as usize) < 3 && (s.tail as usize) < 5,
            "structurally invalid sample {s:?}"
        );
    }
    let hits = samples.iter().filter(|s| members.contains(s)).count();
    assert!(hits >= 900, "only {hits}/1000 prior samples fall in the fixture set");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "criterion 6 PASS: 5/5 reconstructed, {hits}/1000 samples in set, {elapsed:?}"
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_desk_scale_directional() {
    use ckge::config::{RunConfig, Scenario};
    use ckge::report::{build_report, Report};
    use ckge::runner::cmd_train;

    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_splits(&generate(&SynthSpec::desk_scale(5)).unwrap(), &data).unwrap();

    let run = |out: &std::path::Path, scenario: Scenario, methods: Vec<Method>| -> Report {
        let mut cfg = RunConfig::defaults(ModelKind::TransE);
        cfg.dataset = data.clone();
        cfg.out = out.to_path_buf();
        cfg.sessions = 5;
        cfg.methods = methods;
        cfg.seeds = vec![1, 2, 3, 4, 5];
        cfg.scenario = scenario;
        cfg.dim = 25;
        cfg.epochs = 300;
        cfg.batch_size = 32;
        cfg.lr = 0.05;
        cfg.patience = 6;
        cfg.l2r_lambda = 0.1;
        cfg.si_lambda = 0.002;
        cfg.si_xi = 0.1;
        cfg.gen_epochs = 1000;
        cfg.gen_batch_size = 64;
        cfg.gen_lr = 0.05;
        cfg.lambda_am = 0.3;
        cfg.lambda_as = 20.0;
        cfg.lambda_ap = Some(0.0);
        cfg.gen_dv = 32;
        cfg.gen_dz = 8;
        cfg.gen_dh = 32;
        cmd_train(&cfg).unwrap();
        build_report(out).unwrap()
    };

    let dc = run(
        &tmp.path().join("dc"),
        Scenario::DataConstrained,
        vec![
            Method::Finetune,
            Method::Pnn,
            Method::Cwr,
            Method::L2r,
            Method::Si,
            Method::Dgr,
        ],
    );
    let acc = |r: &Report, m: Method| r.summary_of(m, "acc_hits10").unwrap();
    let lca = |r: &Report, m: Method| r.summary_of(m, "lca_hits10").unwrap();

    let ft = acc(&dc, Method::Finetune);
    assert!(acc(&dc, Method::Dgr) > ft, "dgr {} !> finetune {ft}", acc(&dc, Method::Dgr));
    assert!(acc(&dc, Method::L2r) > ft, "l2r {} !> finetune {ft}", acc(&dc, Method::L2r));
    assert!(acc(&dc, Method::Si) > ft, "si {} !> finetune {ft}", acc(&dc, Method::Si));
    assert!(acc(&dc, Method::Pnn) <= ft, "pnn {} above finetune {ft}", acc(&dc, Method::Pnn));
    assert!(acc(&dc, Method::Cwr) <= ft, "cwr {} above finetune {ft}", acc(&dc, Method::Cwr));
    let dgr_lca = lca(&dc, Method::Dgr);
    for other in [Method::L2r, Method::Si, Method::Finetune] {
        assert!(
            dgr_lca < lca(&dc, other),
            "dgr lca {dgr_lca} not below {} ({})",
            other.name(),
            lca(&dc, other)
        );
    }

    let uc = run(
        &tmp.path().join("uc"),
        Scenario::Unconstrained,
        vec![
            Method::Batch,
            Method::Finetune,
            Method::Pnn,
            Method::Cwr,
            Method::L2r,
            Method::Si,
        ],
    );
    let batch = acc(&uc, Method::Batch);
    for other in [Method::Finetune, Method::Pnn, Method::Cwr, Method::L2r, Method::Si] {
        assert!(
            batch > acc(&uc, other),
            "batch {batch} not above {} ({})",
            other.name(),
            acc(&uc, other)
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30 * 60), "took {elapsed:?}");
    println!(
        "criterion 7 PASS: data-constrained acc(hits@10) dgr {:.3} / si {:.3} / l2r {:.3} > \
         finetune {:.3} >= pnn {:.3}, cwr {:.3}; dgr lca {:.3} lowest; \
         unconstrained batch {:.3} highest; {elapsed:?}",
        acc(&dc, Method::Dgr),
        acc(&dc, Method::Si),
        acc(&dc, Method::L2r),
        ft,
        acc(&dc, Method::Pnn),
        acc(&dc, Method::Cwr),
        dgr_lca,
        batch
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_pipeline_determinism() {
    use ckge::config::RunConfig;
    use ckge::report::cmd_report;
    use ckge::runner::{cmd_sample, cmd_train};

    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let spec = SynthSpec {
        n_entities: 40,
        n_relations: 4,
        n_train: 120,
        n_valid: 16,
        n_test: 16,
        holdout_frac: 0.05,
        seed: 3,
    };
    write_splits(&generate(&spec).unwrap(), &data).unwrap();

    let out = tmp.path().join("run");
    let run_pipeline = || {
        cmd_sample(&data, 3, 7, &out).unwrap();
        let mut cfg = RunConfig::defaults(ModelKind::TransE);
        cfg.dataset = data.clone();
        cfg.out = out.clone();
        cfg.sessions = 3;
        cfg.methods = vec![Method::Finetune, Method::Dgr];
        cfg.seeds = vec![1, 2];
        cfg.dim = 8;
        cfg.epochs = 12;
        cfg.batch_size = 16;
        cfg.gen_epochs = 15;
        cfg.gen_batch_size = 16;
        cfg.gen_dv = 12;
        cfg.gen_dz = 6;
        cfg.gen_dh = 12;
        cmd_train(&cfg).unwrap();
        cmd_report(&out, None).unwrap();
    };

    let tracked = [
        "sessions/stats.tsv",
        "sessions/0/train.tsv",
        "config.txt",
        "finetune/seed_1/session_2/model.ckpt",
        "dgr/seed_2/session_2/model.ckpt",
        "dgr/seed_2/session_2/generator.ckpt",
        "dgr/seed_2/session_2/method_state.ckpt",
        "dgr/seed_1/session_1/trace.tsv",
        "report.json",
        "report.tsv",
    ];

    run_pipeline();
    let first: Vec<Vec<u8>> =
        tracked.iter().map(|p| fs::read(out.join(p)).expect(p)).collect();

    fs::remove_dir_all(&out).unwrap();
    run_pipeline();
    for (path, before) in tracked.iter().zip(&first) {
        let after = fs::read(out.join(path)).expect(path);
        assert_eq!(before, &after, "{path} differs between identical pipelines");
    }

    println!("criterion 8 PASS: sample/train/report rerun is byte-identical across {} files", tracked.len());
}
