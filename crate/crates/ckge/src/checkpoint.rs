//! Plain-text checkpoint files. Every f64 is printed with Rust's shortest
//! round-trip formatting, so writing and re-reading a checkpoint reproduces
//! the exact bit pattern. The formats are line-based:
//!
//! `model.ckpt`
//! ```text
//! ckge-model v1
//! kind transe
//! session 2
//! dim 4
//! entities 10
//! relations 2
//! <one row per line, values separated by single spaces>
//! ```
//! Entity rows come first, then relation rows.
//!
//! `generator.ckpt` holds the 25 named VAE tensors in canonical order, each
//! introduced by `tensor <name> <rows> <cols>` and followed by its rows.
//!
//! `method_state.ckpt` carries the cross-session memory of a strategy:
//! counters for every method, then a variant-specific section (retained
//! triples, freeze mask, parameter snapshot, importance store, or replay
//! bookkeeping). A DGR generator is stored next to it in `generator.ckpt`,
//! not inline.
//!
//! `trace.tsv` is a headered TSV of per-epoch validation measurements.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::eval::{Phase, TraceEntry};
use crate::methods::{Importance, Method, SiVars, StateVariant, Strategy};
use crate::model::{FreezeMask, ModelKind, ModelState};
use crate::vae::{GeneratorParams, PARAM_NAMES};

fn push_row(out: &mut String, row: &[f64]) {
    let mut first = true;
    for v in row {
        if !first {
            out.push(' ');
        }
        write!(out, "{v}").expect("writing to a string cannot fail");
        first = false;
    }
    out.push('\n');
}

/// Sequential line reader with positions for error messages.
struct Lines<'a> {
    path: &'a Path,
    lines: Vec<&'a str>,
    at: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Lines { path, lines: text.lines().collect(), at: 0 }
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.at)
            .ok_or_else(|| Error::parse(self.path, self.at + 1, "unexpected end of file"))?;
        self.at += 1;
        Ok(line)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.at, msg)
    }

    fn done(&self) -> Result<()> {
        if self.at == self.lines.len() {
            Ok(())
        } else {
            Err(Error::parse(self.path, self.at + 1, "trailing content"))
        }
    }

    /// Expect `key <value>` and return the value.
    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected '{key} <value>', got '{line}'")))
    }

    fn keyed_parse<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.keyed(key)?;
        raw.parse()
            .map_err(|_| self.err(format!("cannot parse '{raw}' as {}", std::any::type_name::<T>())))
    }

    fn row(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let mut row = Vec::with_capacity(expected);
        for tok in line.split(' ') {
            let v: f64 = tok
                .parse()
                .map_err(|_| self.err(format!("cannot parse '{tok}' as a float")))?;
            row.push(v);
        }
        if row.len() != expected {
            return Err(self.err(format!("expected {expected} values, got {}", row.len())));
        }
        Ok(row)
    }
}

fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::TransE => "transe",
        ModelKind::Analogy => "analogy",
    }
}

fn parse_kind(s: &str, lines: &Lines<'_>) -> Result<ModelKind> {
    match s {
        "transe" => Ok(ModelKind::TransE),
        "analogy" => Ok(ModelKind::Analogy),
        other => Err(lines.err(format!("unknown model kind '{other}'"))),
    }
}

fn model_block(out: &mut String, m: &ModelState) {
    let _ = writeln!(out, "kind {}", kind_name(m.kind()));
    let _ = writeln!(out, "dim {}", m.dim());
    let _ = writeln!(out, "entities {}", m.n_entities());
    let _ = writeln!(out, "relations {}", m.n_relations());
    for e in 0..m.n_entities() as u32 {
        push_row(out, m.entity_row(e));
    }
    for r in 0..m.n_relations() as u32 {
        push_row(out, m.relation_row(r));
    }
}

fn read_model_block(lines: &mut Lines<'_>) -> Result<ModelState> {
    let kind = parse_kind(lines.keyed("kind")?, lines)?;
    let dim: usize = lines.keyed_parse("dim")?;
    let n_entities: usize = lines.keyed_parse("entities")?;
    let n_relations: usize = lines.keyed_parse("relations")?;
    let mut entity_rows = Vec::with_capacity(n_entities);
    for _ in 0..n_entities {
        entity_rows.push(lines.row(dim)?);
    }
    let mut relation_rows = Vec::with_capacity(n_relations);
    for _ in 0..n_relations {
        relation_rows.push(lines.row(dim)?);
    }
    ModelState::from_rows(kind, dim, &entity_rows, &relation_rows)
}

/// Persist the solver model together with the session index it belongs to.
pub fn write_model(path: &Path, m: &ModelState, session: usize) -> Result<()> {
    let mut out = String::from("ckge-model v1\n");
    let _ = writeln!(out, "session {session}");
    model_block(&mut out, m);
    write_atomic(path, &out)
}

pub fn read_model(path: &Path) -> Result<(ModelState, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines::new(path, &text);
    let header = lines.next()?;
    if header != "ckge-model v1" {
        return Err(lines.err(format!("unexpected header '{header}'")));
    }
    let session: usize = lines.keyed_parse("session")?;
    let model = read_model_block(&mut lines)?;
    lines.done()?;
    Ok((model, session))
}

pub fn write_generator(path: &Path, g: &GeneratorParams) -> Result<()> {
    let mut out = String::from("ckge-generator v1\n");
    let (d_v, d_z, d_h) = g.dims();
    let _ = writeln!(out, "entities {}", g.n_entities());
    let _ = writeln!(out, "relations {}", g.n_relations());
    let _ = writeln!(out, "d_v {d_v}");
    let _ = writeln!(out, "d_z {d_z}");
    let _ = writeln!(out, "d_h {d_h}");
    for (name, tensor) in PARAM_NAMES.iter().zip(g.tensors()) {
        let _ = writeln!(out, "tensor {name} {} {}", tensor.rows, tensor.cols);
        for i in 0..tensor.rows {
            push_row(&mut out, &tensor.data[i * tensor.cols..(i + 1) * tensor.cols]);
        }
    }
    write_atomic(path, &out)
}

pub fn read_generator(path: &Path) -> Result<GeneratorParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines::new(path, &text);
    let header = lines.next()?;
    if header != "ckge-generator v1" {
        return Err(lines.err(format!("unexpected header '{header}'")));
    }
    let n_entities: usize = lines.keyed_parse("entities")?;
    let n_relations: usize = lines.keyed_parse("relations")?;
    let d_v: usize = lines.keyed_parse("d_v")?;
    let d_z: usize = lines.keyed_parse("d_z")?;
    let d_h: usize = lines.keyed_parse("d_h")?;
    let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
    for name in PARAM_NAMES {
        let spec = lines.keyed("tensor")?;
        let mut parts = spec.split(' ');
        let got_name = parts.next().unwrap_or_default();
        if got_name != name {
            return Err(lines.err(format!("expected tensor '{name}', got '{got_name}'")));
        }
        let rows: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| lines.err("bad tensor row count"))?;
        let cols: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| lines.err("bad tensor column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(lines.row(cols)?);
        }
        tensors.push(crate::autodiff::Tensor::from_vec(rows, cols, data));
    }
    lines.done()?;
    GeneratorParams::from_tensors(n_entities, n_relations, d_v, d_z, d_h, tensors)
}

fn bits_line(flags: &[bool]) -> String {
    flags.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn parse_bits(s: &str, lines: &Lines<'_>) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(lines.err(format!("bad mask bit '{other}'"))),
        })
        .collect()
}

fn importance_block(out: &mut String, label: &str, imp: &Importance) {
    let _ = writeln!(
        out,
        "{label} {} {} {}",
        imp.dim,
        imp.entity.len(),
        imp.relation.len()
    );
    push_row(out, &imp.entity);
    push_row(out, &imp.relation);
}

fn read_importance_block(lines: &mut Lines<'_>, label: &str) -> Result<Importance> {
    let spec = lines.keyed(label)?;
    let mut parts = spec.split(' ');
    let mut field = |what: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(lines.path, lines.at, format!("bad importance {what}")))
    };
    let dim = field("dim")?;
    let n_entity = field("entity length")?;
    let n_relation = field("relation length")?;
    let entity = lines.row(n_entity)?;
    let relation = lines.row(n_relation)?;
    Ok(Importance { entity, relation, dim })
}

fn optional_model(out: &mut String, label: &str, m: &Option<ModelState>) {
    match m {
        Some(m) => {
            let _ = writeln!(out, "{label} 1");
            model_block(out, m);
        }
        None => {
            let _ = writeln!(out, "{label} 0");
        }
    }
}

fn read_optional_model(lines: &mut Lines<'_>, label: &str) -> Result<Option<ModelState>> {
    match lines.keyed(label)? {
        "1" => Ok(Some(read_model_block(lines)?)),
        "0" => Ok(None),
        other => Err(lines.err(format!("expected 0 or 1, got '{other}'"))),
    }
}

/// Persist a strategy's cross-session memory. A DGR generator is written
/// separately with [`write_generator`]; here only its presence is recorded.
pub fn write_strategy(path: &Path, s: &Strategy) -> Result<()> {
    let mut out = String::from("ckge-method-state v1\n");
    let _ = writeln!(out, "method {}", s.method());
    let _ = writeln!(out, "next_session {}", s.next_session);
    let _ = writeln!(out, "prev_entities {}", s.prev_entities);
    let _ = writeln!(out, "prev_relations {}", s.prev_relations);
    match &s.state {
        StateVariant::Finetune | StateVariant::Cwr => {}
        StateVariant::Batch { retained, warned } => {
            let _ = writeln!(out, "warned {}", u8::from(*warned));
            let _ = writeln!(out, "retained {}", retained.len());
            for t in retained {
                let _ = writeln!(out, "{} {} {}", t.head, t.relation, t.tail);
            }
        }
        StateVariant::Pnn { mask } => {
            let _ = writeln!(out, "mask_entities {}", bits_line(&mask.entities));
            let _ = writeln!(out, "mask_relations {}", bits_line(&mask.relations));
        }
        StateVariant::L2r { snapshot } => {
            optional_model(&mut out, "snapshot", snapshot);
        }
        StateVariant::Si(si) => {
            importance_block(&mut out, "big_omega", &si.big_omega);
            optional_model(&mut out, "snapshot", &si.snapshot);
        }
        StateVariant::Dgr { generator, prior_train_total } => {
            let _ = writeln!(out, "prior_train_total {prior_train_total}");
            let _ = writeln!(out, "has_generator {}", u8::from(generator.is_some()));
        }
    }
    write_atomic(path, &out)
}

/// Restore a strategy. A DGR state reporting `has_generator 1` comes back
/// with the generator slot empty; load `generator.ckpt` and attach it with
/// [`Strategy::attach_generator`] before training the next session.
pub fn read_strategy(path: &Path) -> Result<(Strategy, bool)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines::new(path, &text);
    let header = lines.next()?;
    if header != "ckge-method-state v1" {
        return Err(lines.err(format!("unexpected header '{header}'")));
    }
    let method: Method = lines.keyed("method")?.parse()?;
    let next_session: usize = lines.keyed_parse("next_session")?;
    let prev_entities: usize = lines.keyed_parse("prev_entities")?;
    let prev_relations: usize = lines.keyed_parse("prev_relations")?;

    let mut needs_generator = false;
    let state = match method {
        Method::Finetune => StateVariant::Finetune,
        Method::Cwr => StateVariant::Cwr,
        Method::Batch => {
            let warned = lines.keyed("warned")? == "1";
            let count: usize = lines.keyed_parse("retained")?;
            let mut retained = Vec::with_capacity(count);
            for _ in 0..count {
                let line = lines.next()?;
                let mut ids = line.split(' ').map(|s| s.parse::<u32>());
                let mut take = || -> Result<u32> {
                    ids.next()
                        .and_then(|r| r.ok())
                        .ok_or_else(|| Error::parse(path, lines.at, "bad retained triple"))
                };
                retained.push(Triple::new(take()?, take()?, take()?));
            }
            StateVariant::Batch { retained, warned }
        }
        Method::Pnn => {
            let entities = parse_bits(lines.keyed("mask_entities")?, &lines)?;
            let relations = parse_bits(lines.keyed("mask_relations")?, &lines)?;
            StateVariant::Pnn { mask: FreezeMask { entities, relations } }
        }
        Method::L2r => StateVariant::L2r { snapshot: read_optional_model(&mut lines, "snapshot")? },
        Method::Si => {
            let big_omega = read_importance_block(&mut lines, "big_omega")?;
            let snapshot = read_optional_model(&mut lines, "snapshot")?;
            let dim = big_omega.dim;
            let mut si = SiVars { omega: Importance::default(), big_omega, snapshot };
            si.omega.grow(
                si.big_omega.entity.len() / dim.max(1),
                si.big_omega.relation.len() / dim.max(1),
                dim,
            );
            StateVariant::Si(si)
        }
        Method::Dgr => {
            let prior_train_total: usize = lines.keyed_parse("prior_train_total")?;
            needs_generator = lines.keyed("has_generator")? == "1";
            StateVariant::Dgr { generator: None, prior_train_total }
        }
    };
    lines.done()?;
    Ok((
        Strategy { method, next_session, prev_entities, prev_relations, state },
        needs_generator,
    ))
}

impl Strategy {
    /// Put a reloaded generator back into a restored DGR strategy.
    pub fn attach_generator(&mut self, g: GeneratorParams) -> Result<()> {
        match &mut self.state {
            StateVariant::Dgr { generator, .. } => {
                *generator = Some(g);
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "cannot attach a generator to method {}",
                self.method
            ))),
        }
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Solver => "solver",
        Phase::Generator => "generator",
    }
}

pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut out = String::from("session\tepoch\tphase\tmrr\thits10\n");
    for e in trace {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            e.session,
            e.epoch,
            phase_name(e.phase),
            e.mrr,
            e.hits
        );
    }
    write_atomic(path, &out)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines::new(path, &text);
    let header = lines.next()?;
    if header != "session\tepoch\tphase\tmrr\thits10" {
        return Err(lines.err("unexpected trace header"));
    }
    let mut trace = Vec::new();
    while lines.at < lines.lines.len() {
        let line = lines.next()?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(lines.err(format!("expected 5 columns, got {}", cols.len())));
        }
        let phase = match cols[2] {
            "solver" => Phase::Solver,
            "generator" => Phase::Generator,
            other => return Err(lines.err(format!("unknown phase '{other}'"))),
        };
        let parse_num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| lines.err(format!("cannot parse '{s}' as a float")))
        };
        trace.push(TraceEntry {
            session: cols[0]
                .parse()
                .map_err(|_| lines.err("bad session index"))?,
            epoch: cols[1].parse().map_err(|_| lines.err("bad epoch"))?,
            phase,
            mrr: parse_num(cols[3])?,
            hits: parse_num(cols[4])?,
        });
    }
    Ok(trace)
}
