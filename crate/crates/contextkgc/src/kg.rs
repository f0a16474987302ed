//! Interned triple store with by-head / by-relation / by-tail indexes.
//!
//! Graphs are built once from raw label triples and are immutable afterwards.
//! Entity and relation ids are dense and assigned by first appearance in file
//! order (head scanned before tail within a triple), which keeps builds
//! single-pass and deterministic.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense index into the entity catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

/// Dense index into the relation catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// A triple as read from a file, before interning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
        }
    }
}

/// Supported triple file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFormat {
    /// `head<TAB>relation<TAB>tail`, UTF-8, no header.
    Tsv,
}

/// Parses a triple file. Fields are whitespace-trimmed, empty lines skipped,
/// file order preserved. Errors name the offending 1-based line number.
pub fn parse_triple_file<R: BufRead>(mut reader: R, format: TripleFormat) -> Result<Vec<RawTriple>> {
    let TripleFormat::Tsv = format;
    let mut triples = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if buf.last() == Some(&b'\n') {
            buf.pop();
        }
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        let line = std::str::from_utf8(&buf).map_err(|_| Error::Parse {
            line: line_no,
            message: "invalid UTF-8".to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        triples.push(RawTriple::new(
            fields[0].trim(),
            fields[1].trim(),
            fields[2].trim(),
        ));
    }
    Ok(triples)
}

/// Reads and parses a triple file from disk.
pub fn load_triple_file(path: &Path) -> Result<Vec<RawTriple>> {
    let file = std::fs::File::open(path)?;
    parse_triple_file(std::io::BufReader::new(file), TripleFormat::Tsv)
}

/// Label interner: id <-> label, ids dense in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Catalog {
    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn id_of(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    pub entity_count: usize,
    pub relation_count: usize,
    pub triple_count: usize,
}

/// Immutable interned triple store. Index lists hold positions into `triples`
/// and are ascending by construction.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    by_head: Vec<Vec<u32>>,
    by_relation: Vec<Vec<u32>>,
    by_tail: Vec<Vec<u32>>,
    entities: Catalog,
    relations: Catalog,
    fingerprint: [u8; 32],
}

/// Interns and indexes raw triples. Duplicate triples are retained as
/// distinct entries. Errors on empty input.
pub fn build_graph(raw: &[RawTriple]) -> Result<KnowledgeGraph> {
    if raw.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut entities = Catalog::default();
    let mut relations = Catalog::default();
    let mut triples = Vec::with_capacity(raw.len());
    let mut hasher = Sha256::new();
    for t in raw {
        let head = EntityId(entities.intern(&t.head));
        let relation = RelationId(relations.intern(&t.relation));
        let tail = EntityId(entities.intern(&t.tail));
        triples.push(Triple {
            head,
            relation,
            tail,
        });
        hasher.update(t.head.as_bytes());
        hasher.update(b"\t");
        hasher.update(t.relation.as_bytes());
        hasher.update(b"\t");
        hasher.update(t.tail.as_bytes());
        hasher.update(b"\n");
    }
    let mut by_head = vec![Vec::new(); entities.len()];
    let mut by_relation = vec![Vec::new(); relations.len()];
    let mut by_tail = vec![Vec::new(); entities.len()];
    for (i, t) in triples.iter().enumerate() {
        by_head[t.head.index()].push(i as u32);
        by_relation[t.relation.index()].push(i as u32);
        by_tail[t.tail.index()].push(i as u32);
    }
    Ok(KnowledgeGraph {
        triples,
        by_head,
        by_relation,
        by_tail,
        entities,
        relations,
        fingerprint: hasher.finalize().into(),
    })
}

impl KnowledgeGraph {
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, index: u32) -> Triple {
        self.triples[index as usize]
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// Triple positions with the given head, ascending.
    pub fn head_triples(&self, h: EntityId) -> &[u32] {
        &self.by_head[h.index()]
    }

    pub fn relation_triples(&self, r: RelationId) -> &[u32] {
        &self.by_relation[r.index()]
    }

    pub fn tail_triples(&self, t: EntityId) -> &[u32] {
        &self.by_tail[t.index()]
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0)
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0)
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.id_of(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.id_of(label).map(RelationId)
    }

    pub fn entity_catalog(&self) -> &Catalog {
        &self.entities
    }

    pub fn relation_catalog(&self) -> &Catalog {
        &self.relations
    }

    pub fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.index() < self.entities.len() {
            Ok(())
        } else {
            Err(Error::InvalidEntityId(id.0, self.entities.len()))
        }
    }

    pub fn check_relation(&self, id: RelationId) -> Result<()> {
        if id.index() < self.relations.len() {
            Ok(())
        } else {
            Err(Error::InvalidRelationId(id.0, self.relations.len()))
        }
    }

    /// SHA-256 over the raw label triples in file order.
    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        to_hex(&self.fingerprint)
    }

    /// Resolves a raw triple against this graph's catalogs.
    pub fn resolve(&self, raw: &RawTriple) -> ResolvedTriple {
        let head = self.entity_id(&raw.head);
        let relation = self.relation_id(&raw.relation);
        let tail = self.entity_id(&raw.tail);
        match (head, relation, tail) {
            (Some(h), Some(r), Some(t)) => ResolvedTriple::Known(Triple {
                head: h,
                relation: r,
                tail: t,
            }),
            _ => ResolvedTriple::Partial {
                head,
                relation,
                tail,
            },
        }
    }

    /// Serializes the triples back to TSV, bit-compatible with the input
    /// format.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity_label(t.head),
                self.relation_label(t.relation),
                self.entity_label(t.tail)
            )?;
        }
        Ok(())
    }
}

/// Outcome of resolving a raw triple against a graph's catalogs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolvedTriple {
    Known(Triple),
    Partial {
        head: Option<EntityId>,
        relation: Option<RelationId>,
        tail: Option<EntityId>,
    },
}

pub fn graph_stats(graph: &KnowledgeGraph) -> GraphStats {
    GraphStats {
        entity_count: graph.entity_count(),
        relation_count: graph.relation_count(),
        triple_count: graph.triples().len(),
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Train/valid/test splits of a dataset. Only the training split is interned;
/// validation and test triples are kept raw and resolved on demand so that
/// entities unseen during training stay observable.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: KnowledgeGraph,
    pub valid: Vec<RawTriple>,
    pub test: Vec<RawTriple>,
}

impl Splits {
    pub fn load(train: &Path, valid: Option<&Path>, test: Option<&Path>) -> Result<Self> {
        let train_raw = load_triple_file(train)?;
        let train = build_graph(&train_raw)?;
        let valid = match valid {
            Some(p) => load_triple_file(p)?,
            None => Vec::new(),
        };
        let test = match test {
            Some(p) => load_triple_file(p)?,
            None => Vec::new(),
        };
        Ok(Self { train, valid, test })
    }

    pub fn from_raw(train_raw: &[RawTriple], valid: Vec<RawTriple>, test: Vec<RawTriple>) -> Result<Self> {
        Ok(Self {
            train: build_graph(train_raw)?,
            valid,
            test,
        })
    }
}

/// Configuration for the synthetic graph generator.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    /// Fraction of entities designated hubs; hubs attract extra edges,
    /// skewing the degree distribution. 0 disables hub bias.
    pub hub_fraction: f64,
    pub seed: u64,
}

/// Deterministically generates a synthetic graph as raw triples (same TSV
/// label conventions as benchmark files: entities `e{i}`, relations `r{j}`).
/// No self-loops; when `triples >= entities` every entity is referenced.
/// Every (head, relation) pair is emitted at most once, so each query has a
/// single gold tail and generated corpora are memorizable.
pub fn generate_synthetic_kg(cfg: &SyntheticConfig) -> Result<Vec<RawTriple>> {
    if cfg.entities < 2 {
        return Err(Error::InvalidConfig(
            "synthetic graph needs at least 2 entities (no self-loops)".to_string(),
        ));
    }
    if cfg.relations < 1 || cfg.triples < 1 {
        return Err(Error::InvalidConfig(
            "synthetic graph needs at least 1 relation and 1 triple".to_string(),
        ));
    }
    if cfg.triples > cfg.entities * cfg.relations {
        return Err(Error::InvalidConfig(format!(
            "cannot place {} triples over {} distinct (head, relation) pairs",
            cfg.triples,
            cfg.entities * cfg.relations
        )));
    }
    if !(0.0..=1.0).contains(&cfg.hub_fraction) {
        return Err(Error::InvalidConfig(
            "hub_fraction must be in [0, 1]".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hubs = ((cfg.entities as f64 * cfg.hub_fraction).ceil() as usize).min(cfg.entities);
    let sample_entity = move |rng: &mut ChaCha8Rng| -> usize {
        if hubs > 0 && rng.random_range(0..2) == 0 {
            rng.random_range(0..hubs)
        } else {
            rng.random_range(0..cfg.entities)
        }
    };
    let mut used_relations = vec![0usize; cfg.entities]; // per-head count
    let mut used = HashSet::with_capacity(cfg.triples);
    let mut out = Vec::with_capacity(cfg.triples);
    for i in 0..cfg.triples {
        // First pass pins entity i as head so every entity is referenced
        // once triples >= entities.
        let mut head = if cfg.triples >= cfg.entities && i < cfg.entities {
            i
        } else {
            sample_entity(&mut rng)
        };
        // Saturated heads fall through to the next entity id.
        while used_relations[head] == cfg.relations {
            head = (head + 1) % cfg.entities;
        }
        let free: Vec<usize> = (0..cfg.relations)
            .filter(|&r| !used.contains(&(head, r)))
            .collect();
        let relation = free[rng.random_range(0..free.len())];
        used.insert((head, relation));
        used_relations[head] += 1;
        let mut tail = sample_entity(&mut rng);
        while tail == head {
            tail = rng.random_range(0..cfg.entities);
        }
        out.push(RawTriple::new(
            &format!("e{head}"),
            &format!("r{relation}"),
            &format!("e{tail}"),
        ));
    }
    Ok(out)
}
