//! Knowledge-graph data model, vocabulary management, and TSV I/O.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! <dataset>/
//!   entity2id.tsv     name<TAB>id, one per line
//!   relation2id.tsv   name<TAB>id
//!   train.tsv         head_name<TAB>relation_name<TAB>tail_name
//!   valid.tsv
//!   test.tsv
//! ```
//!
//! Ids are dense, 0-based, and assigned by vocab-file line order so runs
//! reproduce across platforms regardless of sort locale.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A fact `(head, relation, tail)` with integer ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Bidirectional name <-> id maps for entities and relations.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_ids: HashMap<String, u32>,
    relation_ids: HashMap<String, u32>,
}

impl Vocab {
    /// Build from ordered name lists. Errors on duplicates.
    pub fn new(entity_names: Vec<String>, relation_names: Vec<String>) -> Result<Self> {
        let mut v = Vocab::default();
        for name in entity_names {
            v.push_entity(name)?;
        }
        for name in relation_names {
            v.push_relation(name)?;
        }
        Ok(v)
    }

    fn push_entity(&mut self, name: String) -> Result<u32> {
        if self.entity_ids.contains_key(&name) {
            return Err(Error::Data(format!("duplicate entity name: {name}")));
        }
        let id = self.entity_names.len() as u32;
        self.entity_ids.insert(name.clone(), id);
        self.entity_names.push(name);
        Ok(id)
    }

    fn push_relation(&mut self, name: String) -> Result<u32> {
        if self.relation_ids.contains_key(&name) {
            return Err(Error::Data(format!("duplicate relation name: {name}")));
        }
        let id = self.relation_names.len() as u32;
        self.relation_ids.insert(name.clone(), id);
        self.relation_names.push(name);
        Ok(id)
    }

    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<u32> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<u32> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: u32) -> &str {
        &self.entity_names[id as usize]
    }

    pub fn relation_name(&self, id: u32) -> &str {
        &self.relation_names[id as usize]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }
}

/// Full-graph train/valid/test splits plus the vocabulary.
#[derive(Debug, Clone)]
pub struct GraphSplits {
    pub vocab: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

/// Entity ids occurring as head or tail in `triples`.
pub fn entities_of(triples: &[Triple]) -> BTreeSet<u32> {
    let mut set = BTreeSet::new();
    for t in triples {
        set.insert(t.head);
        set.insert(t.tail);
    }
    set
}

/// Relation ids occurring in `triples`.
pub fn relations_of(triples: &[Triple]) -> BTreeSet<u32> {
    triples.iter().map(|t| t.relation).collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn load_vocab_file(path: &Path, kind: &str) -> Result<Vec<String>> {
    let lines = read_lines(path)?;
    let mut names = Vec::with_capacity(lines.len());
    let mut seen: HashSet<&str> = HashSet::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let name = cols
            .next()
            .ok_or_else(|| Error::parse(path, i + 1, "empty line"))?;
        let id: usize = cols
            .next()
            .ok_or_else(|| Error::parse(path, i + 1, "expected name<TAB>id"))?
            .parse()
            .map_err(|_| Error::parse(path, i + 1, "id is not an integer"))?;
        if cols.next().is_some() {
            return Err(Error::parse(path, i + 1, "expected exactly 2 columns"));
        }
        if id != names.len() {
            return Err(Error::parse(
                path,
                i + 1,
                format!("{kind} ids must be dense and in line order; expected {}", names.len()),
            ));
        }
        if !seen.insert(name) {
            return Err(Error::parse(path, i + 1, format!("duplicate {kind} name: {name}")));
        }
        names.push(name.to_owned());
    }
    Ok(names)
}

fn load_triple_file(path: &Path, vocab: &Vocab) -> Result<Vec<Triple>> {
    let lines = read_lines(path)?;
    let mut triples = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 3 tab-separated columns, got {}", cols.len()),
            ));
        }
        let head = vocab
            .entity_id(cols[0])
            .ok_or_else(|| Error::parse(path, i + 1, format!("unknown entity: {}", cols[0])))?;
        let relation = vocab
            .relation_id(cols[1])
            .ok_or_else(|| Error::parse(path, i + 1, format!("unknown relation: {}", cols[1])))?;
        let tail = vocab
            .entity_id(cols[2])
            .ok_or_else(|| Error::parse(path, i + 1, format!("unknown entity: {}", cols[2])))?;
        triples.push(Triple::new(head, relation, tail));
    }
    Ok(triples)
}

/// Deduplicate preserving first-occurrence order; returns removed count.
fn dedup_triples(triples: &mut Vec<Triple>) -> usize {
    let mut seen = HashSet::with_capacity(triples.len());
    let before = triples.len();
    triples.retain(|t| seen.insert(*t));
    before - triples.len()
}

/// Load a dataset directory into validated [`GraphSplits`].
///
/// Duplicate triples within a split are removed with a logged warning
/// (duplicates would otherwise inflate their loss weight). Overlap across
/// splits is a data error.
pub fn load_graph(dir: &Path) -> Result<GraphSplits> {
    let entity_names = load_vocab_file(&dir.join("entity2id.tsv"), "entity")?;
    let relation_names = load_vocab_file(&dir.join("relation2id.tsv"), "relation")?;
    let vocab = Vocab::new(entity_names, relation_names)?;

    let mut train = load_triple_file(&dir.join("train.tsv"), &vocab)?;
    let mut valid = load_triple_file(&dir.join("valid.tsv"), &vocab)?;
    let mut test = load_triple_file(&dir.join("test.tsv"), &vocab)?;

    if train.is_empty() {
        return Err(Error::Data(format!("empty split: {}", dir.join("train.tsv").display())));
    }

    for (name, split) in [("train", &mut train), ("valid", &mut valid), ("test", &mut test)] {
        let removed = dedup_triples(split);
        if removed > 0 {
            log::warn!("{name}.tsv: removed {removed} duplicate triples");
        }
    }

    let train_set: HashSet<&Triple> = train.iter().collect();
    for (name, split) in [("valid", &valid), ("test", &test)] {
        if split.iter().any(|t| train_set.contains(t)) {
            return Err(Error::Data(format!("{name}.tsv overlaps train.tsv")));
        }
    }
    let valid_set: HashSet<&Triple> = valid.iter().collect();
    if test.iter().any(|t| valid_set.contains(t)) {
        return Err(Error::Data("test.tsv overlaps valid.tsv".into()));
    }

    log::info!(
        "loaded graph: {} entities, {} relations, {}/{}/{} train/valid/test triples",
        vocab.n_entities(),
        vocab.n_relations(),
        train.len(),
        valid.len(),
        test.len()
    );

    Ok(GraphSplits {
        vocab,
        train,
        valid,
        test,
    })
}

pub(crate) fn write_tsv(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for line in lines {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Write triples as `head<TAB>relation<TAB>tail` names under `vocab`.
pub fn write_triples(path: &Path, triples: &[Triple], vocab: &Vocab) -> Result<()> {
    write_tsv(
        path,
        triples.iter().map(|t| {
            format!(
                "{}\t{}\t{}",
                vocab.entity_name(t.head),
                vocab.relation_name(t.relation),
                vocab.entity_name(t.tail)
            )
        }),
    )
}

/// Write a full dataset directory; inverse of [`load_graph`].
pub fn write_splits(splits: &GraphSplits, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tsv(
        &dir.join("entity2id.tsv"),
        splits
            .vocab
            .entity_names()
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{n}\t{i}")),
    )?;
    write_tsv(
        &dir.join("relation2id.tsv"),
        splits
            .vocab
            .relation_names()
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{n}\t{i}")),
    )?;
    write_triples(&dir.join("train.tsv"), &splits.train, &splits.vocab)?;
    write_triples(&dir.join("valid.tsv"), &splits.valid, &splits.vocab)?;
    write_triples(&dir.join("test.tsv"), &splits.test, &splits.vocab)?;
    Ok(())
}
