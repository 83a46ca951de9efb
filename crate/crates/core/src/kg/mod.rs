//! Triple datasets: parsing, ordinal encoding, corruption statistics, and
//! the on-disk cache.
//!
//! A dataset directory holds three TSV files (`train.txt`, `valid.txt`,
//! `test.txt`), one `head<TAB>relation<TAB>tail` fact per line. Labels are
//! interned in first-seen order over train, then valid, then test, so the
//! encoding is deterministic given file order. Everything downstream works
//! on dense ordinal ids.

mod cache;

pub use cache::{cache_path, load_cache, save_cache, CACHE_VERSION};

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("missing dataset file {path}: {source}")]
    MissingFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine {
        file: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("triple ({head}, {relation}, {tail}) out of range for |E|={n_entities}, |R|={n_relations}")]
    InvalidTriple {
        head: u32,
        relation: u32,
        tail: u32,
        n_entities: usize,
        n_relations: usize,
    },
    #[error("cache version mismatch: expected {expected:?}, found {found:?}")]
    CacheVersion { expected: String, found: String },
    #[error("cache checksum mismatch (file is corrupt)")]
    CacheChecksum,
    #[error("cache file truncated or malformed")]
    CacheTruncated,
}

/// An ordinal-encoded fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Self { head, relation, tail }
    }
}

/// Dense label ↔ id maps. Entity and relation ids live in separate
/// namespaces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    entity_to_id: HashMap<String, u32>,
    relation_to_id: HashMap<String, u32>,
    entities: Vec<String>,
    relations: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the existing id or assigns the next dense one.
    pub fn intern_entity(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.entity_to_id.get(label) {
            return id;
        }
        let id = self.entities.len() as u32;
        self.entities.push(label.to_owned());
        self.entity_to_id.insert(label.to_owned(), id);
        id
    }

    pub fn intern_relation(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.relation_to_id.get(label) {
            return id;
        }
        let id = self.relations.len() as u32;
        self.relations.push(label.to_owned());
        self.relation_to_id.insert(label.to_owned(), id);
        id
    }

    pub fn entity_id(&self, label: &str) -> Option<u32> {
        self.entity_to_id.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<u32> {
        self.relation_to_id.get(label).copied()
    }

    pub fn entity_label(&self, id: u32) -> &str {
        &self.entities[id as usize]
    }

    pub fn relation_label(&self, id: u32) -> &str {
        &self.relations[id as usize]
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relations
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }
}

/// Per-relation corruption statistics from the train split: mean tails per
/// head and mean heads per tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BernStat {
    pub tph: f64,
    pub hpt: f64,
}

/// Mean tails-per-head and heads-per-tail for every relation present in
/// `train`. Relations absent from train have no entry.
pub fn bern_stats(train: &[Triple]) -> HashMap<u32, BernStat> {
    let mut count: HashMap<u32, usize> = HashMap::new();
    let mut heads: HashMap<u32, HashSet<u32>> = HashMap::new();
    let mut tails: HashMap<u32, HashSet<u32>> = HashMap::new();
    for t in train {
        *count.entry(t.relation).or_default() += 1;
        heads.entry(t.relation).or_default().insert(t.head);
        tails.entry(t.relation).or_default().insert(t.tail);
    }
    count
        .into_iter()
        .map(|(r, n)| {
            let stat = BernStat {
                tph: n as f64 / heads[&r].len() as f64,
                hpt: n as f64 / tails[&r].len() as f64,
            };
            (r, stat)
        })
        .collect()
}

/// Counts surfaced after parsing; entities or relations first seen outside
/// the train split still get embeddings but are worth flagging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub entities_not_in_train: usize,
    pub relations_not_in_train: usize,
}

/// Filenames of the three splits inside a dataset directory.
#[derive(Clone, Debug)]
pub struct SplitFiles {
    pub train: String,
    pub valid: String,
    pub test: String,
}

impl Default for SplitFiles {
    fn default() -> Self {
        Self {
            train: "train.txt".into(),
            valid: "valid.txt".into(),
            test: "test.txt".into(),
        }
    }
}

/// A fully parsed dataset. Immutable after construction; safe to share
/// across threads behind an `Arc`.
#[derive(Clone, Debug, PartialEq)]
pub struct KgDataset {
    pub vocab: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Every triple appearing in any split, deduplicated.
    pub filter_index: HashSet<Triple>,
    pub bern_stats: HashMap<u32, BernStat>,
}

impl KgDataset {
    /// Builds the derived indexes from raw parts, validating id ranges.
    pub fn from_parts(
        vocab: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, KgError> {
        let ne = vocab.n_entities();
        let nr = vocab.n_relations();
        for t in train.iter().chain(&valid).chain(&test) {
            if (t.head as usize) >= ne || (t.tail as usize) >= ne || (t.relation as usize) >= nr {
                return Err(KgError::InvalidTriple {
                    head: t.head,
                    relation: t.relation,
                    tail: t.tail,
                    n_entities: ne,
                    n_relations: nr,
                });
            }
        }
        let filter_index = train.iter().chain(&valid).chain(&test).copied().collect();
        let stats = bern_stats(&train);
        Ok(Self {
            vocab,
            train,
            valid,
            test,
            filter_index,
            bern_stats: stats,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.vocab.n_entities()
    }

    pub fn n_relations(&self) -> usize {
        self.vocab.n_relations()
    }

    pub fn load_summary(&self) -> LoadSummary {
        let mut train_ents = HashSet::new();
        let mut train_rels = HashSet::new();
        for t in &self.train {
            train_ents.insert(t.head);
            train_ents.insert(t.tail);
            train_rels.insert(t.relation);
        }
        LoadSummary {
            n_entities: self.n_entities(),
            n_relations: self.n_relations(),
            n_train: self.train.len(),
            n_valid: self.valid.len(),
            n_test: self.test.len(),
            entities_not_in_train: self.n_entities() - train_ents.len(),
            relations_not_in_train: self.n_relations() - train_rels.len(),
        }
    }
}

/// Parses the three split files under `dir` into an encoded dataset.
///
/// Duplicate lines within a split are kept in the split list (they weight
/// the sampler) but stored once in the filter index.
pub fn parse_dataset(dir: &Path, names: &SplitFiles) -> Result<KgDataset, KgError> {
    let mut vocab = Vocab::new();
    let train = parse_split(&dir.join(&names.train), &mut vocab)?;
    let valid = parse_split(&dir.join(&names.valid), &mut vocab)?;
    let test = parse_split(&dir.join(&names.test), &mut vocab)?;
    KgDataset::from_parts(vocab, train, valid, test)
}

fn parse_split(path: &Path, vocab: &mut Vocab) -> Result<Vec<Triple>, KgError> {
    let file = File::open(path).map_err(|source| KgError::MissingFile {
        path: path.to_owned(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut triples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| KgError::Io {
            path: path.to_owned(),
            source,
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::MalformedLine {
                file: path.to_owned(),
                line: idx + 1,
                found: fields.len(),
            });
        }
        let head = vocab.intern_entity(fields[0]);
        let relation = vocab.intern_relation(fields[1]);
        let tail = vocab.intern_entity(fields[2]);
        triples.push(Triple::new(head, relation, tail));
    }
    Ok(triples)
}
