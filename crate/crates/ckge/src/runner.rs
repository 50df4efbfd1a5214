//! Orchestration of a continual-learning run: session sampling, the
//! (method x seed) training grid with per-session checkpoints, and
//! session-level resume after interruption.
//!
//! A run directory is self-describing. It holds the effective config, the
//! sampled session files, and one checkpoint directory per trained session,
//! so a report can be rebuilt from disk alone (plus the original dataset,
//! whose session split is re-derived deterministically from the config).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{load_graph, GraphSplits};
use crate::error::{Error, Result};
use crate::methods::{Method, Strategy};
use crate::model::ModelState;
use crate::rng::derive_seed;
use crate::sampler::{
    remap_by_first_observation, sample_sessions, write_sessions, SessionDataset,
};

/// File name of the persisted effective config inside a run directory.
pub const CONFIG_FILE: &str = "config.txt";

pub fn cell_dir(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join(method.name()).join(format!("seed_{seed}"))
}

pub fn session_dir(cell: &Path, n: usize) -> PathBuf {
    cell.join(format!("session_{n}"))
}

/// The dataset and its session split, in both id spaces: `named_sessions`
/// keeps the dataset's original ids (for writing name-based TSVs), while
/// `sessions` is remapped to first-observation order for training, where
/// the ids seen by session n are exactly 0..|seen(n)|.
pub struct RunData {
    pub splits: GraphSplits,
    pub named_sessions: Vec<SessionDataset>,
    pub sessions: Vec<SessionDataset>,
}

/// Load the dataset and re-derive the session split a run is built on.
/// Deterministic in (dataset, sessions, split_seed), so training and
/// reporting always agree on the data without shipping it around.
pub fn prepare(cfg: &RunConfig) -> Result<RunData> {
    let splits = load_graph(&cfg.dataset)?;
    let named_sessions = sample_sessions(&splits, cfg.sessions, cfg.split_seed)?;
    let (sessions, _) = remap_by_first_observation(
        &named_sessions,
        splits.vocab.n_entities(),
        splits.vocab.n_relations(),
    );
    Ok(RunData { splits, named_sessions, sessions })
}

/// `sample` subcommand: write session TSVs and the stats table under
/// `<out>/sessions/`.
pub fn cmd_sample(dataset: &Path, n_sessions: usize, seed: u64, out: &Path) -> Result<()> {
    let splits = load_graph(dataset)?;
    let sessions = sample_sessions(&splits, n_sessions, seed)?;
    let dir = out.join("sessions");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_sessions(&sessions, &splits, &dir)?;
    log::info!("wrote {} sessions to {}", sessions.len(), dir.display());
    Ok(())
}

/// Persist the effective config, or verify it if the run directory already
/// has one. Resuming under a different configuration would silently mix
/// incompatible checkpoints, so it is rejected instead.
fn persist_config(cfg: &RunConfig) -> Result<()> {
    let path = cfg.out.join(CONFIG_FILE);
    if path.exists() {
        let prior = RunConfig::build(&crate::config::parse_file(&path)?)?;
        if prior != *cfg {
            return Err(Error::Config(format!(
                "{} holds a run with a different configuration; \
                 use a fresh output directory",
                cfg.out.display()
            )));
        }
        return Ok(());
    }
    cfg.write(&path)
}

/// `train` subcommand: run every (method, seed) grid cell, resuming cells
/// that already have complete session checkpoints.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let data = prepare(cfg)?;
    persist_config(cfg)?;

    let sessions_dir = cfg.out.join("sessions");
    if !sessions_dir.join("stats.tsv").exists() {
        fs::create_dir_all(&sessions_dir).map_err(|e| Error::io(&sessions_dir, e))?;
        write_sessions(&data.named_sessions, &data.splits, &sessions_dir)?;
    }

    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            run_cell(cfg, method, seed, &data.sessions)?;
        }
    }
    Ok(())
}

/// Checkpoint file set a finished session must have.
pub(crate) fn session_complete(dir: &Path, method: Method) -> bool {
    let base = dir.join("model.ckpt").exists()
        && dir.join("method_state.ckpt").exists()
        && dir.join("trace.tsv").exists();
    base && (method != Method::Dgr || dir.join("generator.ckpt").exists())
}

/// Restore strategy and model from the checkpoints of session `n`.
pub fn load_session(
    cell: &Path,
    n: usize,
) -> Result<(ModelState, Strategy)> {
    let dir = session_dir(cell, n);
    let (model, at) = checkpoint::read_model(&dir.join("model.ckpt"))?;
    if at != n {
        return Err(Error::Data(format!(
            "{} holds a checkpoint of session {at}, expected {n}",
            dir.display()
        )));
    }
    let (mut strategy, needs_generator) =
        checkpoint::read_strategy(&dir.join("method_state.ckpt"))?;
    if needs_generator {
        let g = checkpoint::read_generator(&dir.join("generator.ckpt"))?;
        strategy.attach_generator(g)?;
    }
    if strategy.next_session() != n + 1 {
        return Err(Error::Data(format!(
            "{} holds method state after session {}, expected {n}",
            dir.display(),
            strategy.next_session().wrapping_sub(1)
        )));
    }
    Ok((model, strategy))
}

fn run_cell(
    cfg: &RunConfig,
    method: Method,
    seed: u64,
    sessions: &[SessionDataset],
) -> Result<()> {
    let cell = cell_dir(&cfg.out, method, seed);
    fs::create_dir_all(&cell).map_err(|e| Error::io(&cell, e))?;

    let mut done = 0;
    while done < cfg.sessions && session_complete(&session_dir(&cell, done), method) {
        done += 1;
    }
    if done == cfg.sessions {
        log::info!("{}/seed_{seed}: already complete", method.name());
        return Ok(());
    }

    let (mut model, mut strategy) = if done == 0 {
        (None, Strategy::new(method))
    } else {
        let (m, s) = load_session(&cell, done - 1)?;
        if s.method() != method {
            return Err(Error::Data(format!(
                "{} holds {} state, expected {}",
                cell.display(),
                s.method(),
                method
            )));
        }
        log::info!("{}/seed_{seed}: resuming at session {done}", method.name());
        (Some(m), s)
    };

    let mcfg = cfg.method_config();
    for session in &sessions[done..] {
        let n = session.index;
        let started = Instant::now();
        let n_ent = session.seen_entities.len();
        let n_rel = session.seen_relations.len();
        let init_seed = derive_seed(seed, &["init".into(), n.into()]);
        let m = match model.as_mut() {
            Some(m) => {
                m.expand(n_ent, n_rel, init_seed)?;
                m
            }
            None => {
                model = Some(ModelState::init(cfg.model, n_ent, n_rel, cfg.dim, init_seed)?);
                model.as_mut().expect("just set")
            }
        };

        let outcome = strategy.train_session(m, session, &mcfg, seed)?;

        let dir = session_dir(&cell, n);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        checkpoint::write_model(&dir.join("model.ckpt"), m, n)?;
        checkpoint::write_strategy(&dir.join("method_state.ckpt"), &strategy)?;
        if let Some(g) = strategy.generator() {
            checkpoint::write_generator(&dir.join("generator.ckpt"), g)?;
        }
        checkpoint::write_trace(&dir.join("trace.tsv"), &outcome.trace)?;

        let last = outcome.trace.last();
        log::info!(
            "{}/seed_{seed}: session {n} done in {:.1}s ({} trace epochs, val mrr {:.4})",
            method.name(),
            started.elapsed().as_secs_f64(),
            outcome.trace.len(),
            last.map_or(0.0, |e| e.mrr),
        );
    }
    Ok(())
}
