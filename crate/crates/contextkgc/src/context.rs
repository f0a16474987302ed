//! Head and relation context extraction.
//!
//! For a query (h, r) the model consumes two context structures derived from
//! the training triples:
//!
//! * the head context: the distinct relations incident to h and the distinct
//!   entities adjacent to h (entity-centric local signal), and
//! * the relation context: the distinct entities participating in triples
//!   with relation r (relation-centric global signal).
//!
//! Both are ordered by first appearance in triple-file order, deduplicated,
//! and truncated to a configurable budget. Contexts for all ids can be
//! precomputed in one pass per family, linear in the number of triples.

use std::collections::HashSet;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

/// Which context channels a query sequence carries. Emptying a channel at
/// sequence level isolates its contribution without retraining vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    Full,
    HeadOnly,
    RelationOnly,
}

impl Default for ContextMode {
    fn default() -> Self {
        ContextMode::Full
    }
}

impl std::fmt::Display for ContextMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ContextMode::Full => "full",
            ContextMode::HeadOnly => "head_only",
            ContextMode::RelationOnly => "relation_only",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ContextMode::Full),
            "head_only" => Ok(ContextMode::HeadOnly),
            "relation_only" => Ok(ContextMode::RelationOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown context mode `{other}` (expected full|head_only|relation_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    /// Also match h in tail position (undirected neighborhood).
    pub include_incoming: bool,
    /// Recompute a training example's contexts as if its own triple were
    /// absent, preventing the gold tail from leaking into the input.
    pub leave_one_out: bool,
    /// Max token count for the head context (relations are kept first).
    pub head_context_budget: usize,
    /// Max token count for the relation context.
    pub relation_context_budget: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            include_incoming: false,
            leave_one_out: false,
            head_context_budget: 64,
            relation_context_budget: 64,
        }
    }
}

/// Ordered, deduplicated context of a head entity.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeadContext {
    pub relations: Vec<RelationId>,
    pub entities: Vec<EntityId>,
}

/// Ordered, deduplicated context of a relation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RelationContext {
    pub entities: Vec<EntityId>,
}

/// Collects distinct items in first-appearance order up to a budget.
struct OrderedSet<T> {
    items: Vec<T>,
    seen: HashSet<T>,
    budget: usize,
}

impl<T: Copy + Eq + std::hash::Hash> OrderedSet<T> {
    fn new(budget: usize) -> Self {
        Self {
            items: Vec::new(),
            seen: HashSet::new(),
            budget,
        }
    }

    fn push(&mut self, item: T) {
        if self.items.len() >= self.budget {
            return;
        }
        if self.seen.insert(item) {
            self.items.push(item);
        }
    }

    fn into_vec(self) -> Vec<T> {
        self.items
    }
}

/// Iterates triple positions involving `h` (outgoing, plus incoming when
/// requested) in ascending file order. `skip` drops one specific position,
/// used for leave-one-out queries.
fn neighborhood_indices(
    graph: &KnowledgeGraph,
    h: EntityId,
    include_incoming: bool,
    skip: Option<u32>,
) -> Vec<u32> {
    let out = graph.head_triples(h);
    if !include_incoming {
        return match skip {
            None => out.to_vec(),
            Some(s) => out.iter().copied().filter(|&i| i != s).collect(),
        };
    }
    let inc = graph.tail_triples(h);
    let mut merged = Vec::with_capacity(out.len() + inc.len());
    let (mut a, mut b) = (0, 0);
    while a < out.len() || b < inc.len() {
        let next = match (out.get(a), inc.get(b)) {
            (Some(&x), Some(&y)) => {
                if x <= y {
                    a += 1;
                    if x == y {
                        b += 1; // self-loop: same triple in both roles
                    }
                    x
                } else {
                    b += 1;
                    y
                }
            }
            (Some(&x), None) => {
                a += 1;
                x
            }
            (None, Some(&y)) => {
                b += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        if Some(next) != skip {
            merged.push(next);
        }
    }
    merged
}

fn relation_neighborhood_at(
    graph: &KnowledgeGraph,
    h: EntityId,
    cfg: &ContextConfig,
    skip: Option<u32>,
) -> Result<Vec<RelationId>> {
    graph.check_entity(h)?;
    let mut set = OrderedSet::new(cfg.head_context_budget);
    for idx in neighborhood_indices(graph, h, cfg.include_incoming, skip) {
        set.push(graph.triple(idx).relation);
    }
    Ok(set.into_vec())
}

fn entity_neighborhood_at(
    graph: &KnowledgeGraph,
    h: EntityId,
    cfg: &ContextConfig,
    budget: usize,
    skip: Option<u32>,
) -> Result<Vec<EntityId>> {
    graph.check_entity(h)?;
    let mut set = OrderedSet::new(budget);
    for idx in neighborhood_indices(graph, h, cfg.include_incoming, skip) {
        let t = graph.triple(idx);
        // Outgoing triples contribute the tail; incoming ones the head.
        let neighbor = if t.head == h { t.tail } else { t.head };
        set.push(neighbor);
    }
    Ok(set.into_vec())
}

fn relation_context_at(
    graph: &KnowledgeGraph,
    r: RelationId,
    cfg: &ContextConfig,
    skip: Option<u32>,
) -> Result<RelationContext> {
    graph.check_relation(r)?;
    let mut set = OrderedSet::new(cfg.relation_context_budget);
    for &idx in graph.relation_triples(r) {
        if Some(idx) == skip {
            continue;
        }
        let t = graph.triple(idx);
        set.push(t.head);
        set.push(t.tail);
    }
    Ok(RelationContext {
        entities: set.into_vec(),
    })
}

/// Distinct relations of triples with head h (plus relations of triples with
/// tail h when `include_incoming`), first-appearance order, truncated to the
/// head context budget.
pub fn relation_neighborhood(
    graph: &KnowledgeGraph,
    h: EntityId,
    cfg: &ContextConfig,
) -> Result<Vec<RelationId>> {
    relation_neighborhood_at(graph, h, cfg, None)
}

/// Distinct entities adjacent to h, first-appearance order, truncated to the
/// head context budget.
pub fn entity_neighborhood(
    graph: &KnowledgeGraph,
    h: EntityId,
    cfg: &ContextConfig,
) -> Result<Vec<EntityId>> {
    entity_neighborhood_at(graph, h, cfg, cfg.head_context_budget, None)
}

/// Head context: relation neighborhood followed by entity neighborhood, with
/// the shared budget spent on relations first.
pub fn head_context(graph: &KnowledgeGraph, h: EntityId, cfg: &ContextConfig) -> Result<HeadContext> {
    head_context_at(graph, h, cfg, None)
}

fn head_context_at(
    graph: &KnowledgeGraph,
    h: EntityId,
    cfg: &ContextConfig,
    skip: Option<u32>,
) -> Result<HeadContext> {
    let relations = relation_neighborhood_at(graph, h, cfg, skip)?;
    let remaining = cfg.head_context_budget - relations.len();
    let entities = entity_neighborhood_at(graph, h, cfg, remaining, skip)?;
    Ok(HeadContext {
        relations,
        entities,
    })
}

/// Relation context: for each triple (e_i, r, e_j) in file order, e_i then
/// e_j, deduplicated and truncated to the relation context budget.
pub fn relation_context(
    graph: &KnowledgeGraph,
    r: RelationId,
    cfg: &ContextConfig,
) -> Result<RelationContext> {
    relation_context_at(graph, r, cfg, None)
}

/// Precomputed contexts for every entity and relation id of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTable {
    head_contexts: Vec<HeadContext>,
    relation_contexts: Vec<RelationContext>,
    source_fingerprint: [u8; 32],
}

/// Builds the full context table in one pass per context family, linear in
/// the number of triples.
pub fn precompute_all_contexts(graph: &KnowledgeGraph, cfg: &ContextConfig) -> ContextTable {
    precompute_with_extra(graph, &[], cfg)
}

/// Like [`precompute_all_contexts`] but with extra triples (already interned
/// against the graph's catalogs) appended to the context source. Used to fold
/// validation triples into contexts at evaluation time.
pub fn precompute_with_extra(
    graph: &KnowledgeGraph,
    extra: &[Triple],
    cfg: &ContextConfig,
) -> ContextTable {
    let n_ent = graph.entity_count();
    let n_rel = graph.relation_count();
    let scan = || graph.triples().iter().chain(extra.iter());

    // Family 1: relation neighborhoods.
    let mut rels: Vec<OrderedSet<RelationId>> = (0..n_ent)
        .map(|_| OrderedSet::new(cfg.head_context_budget))
        .collect();
    for t in scan() {
        rels[t.head.index()].push(t.relation);
        if cfg.include_incoming {
            rels[t.tail.index()].push(t.relation);
        }
    }

    // Family 2: entity neighborhoods.
    let mut ents: Vec<OrderedSet<EntityId>> = (0..n_ent)
        .map(|_| OrderedSet::new(cfg.head_context_budget))
        .collect();
    for t in scan() {
        ents[t.head.index()].push(t.tail);
        if cfg.include_incoming {
            ents[t.tail.index()].push(t.head);
        }
    }

    // Family 3: relation contexts.
    let mut rcs: Vec<OrderedSet<EntityId>> = (0..n_rel)
        .map(|_| OrderedSet::new(cfg.relation_context_budget))
        .collect();
    for t in scan() {
        let rc = &mut rcs[t.relation.index()];
        rc.push(t.head);
        rc.push(t.tail);
    }

    let head_contexts = rels
        .into_iter()
        .zip(ents)
        .map(|(r, e)| {
            let relations = r.into_vec();
            let mut entities = e.into_vec();
            entities.truncate(cfg.head_context_budget - relations.len());
            HeadContext {
                relations,
                entities,
            }
        })
        .collect();
    let relation_contexts = rcs
        .into_iter()
        .map(|s| RelationContext {
            entities: s.into_vec(),
        })
        .collect();

    let source_fingerprint = if extra.is_empty() {
        graph.fingerprint()
    } else {
        let mut hasher = Sha256::new();
        hasher.update(graph.fingerprint());
        for t in extra {
            hasher.update(t.head.0.to_le_bytes());
            hasher.update(t.relation.0.to_le_bytes());
            hasher.update(t.tail.0.to_le_bytes());
        }
        hasher.finalize().into()
    };

    ContextTable {
        head_contexts,
        relation_contexts,
        source_fingerprint,
    }
}

impl ContextTable {
    pub fn head_context(&self, h: EntityId) -> &HeadContext {
        &self.head_contexts[h.index()]
    }

    pub fn relation_context(&self, r: RelationId) -> &RelationContext {
        &self.relation_contexts[r.index()]
    }

    pub fn entity_count(&self) -> usize {
        self.head_contexts.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_contexts.len()
    }

    pub fn source_fingerprint(&self) -> [u8; 32] {
        self.source_fingerprint
    }
}

/// Looks up the contexts for a query (h, r). With `leave_one_out` set and an
/// `exclude` triple given, the contexts are recomputed as if that one triple
/// (the first occurrence, when duplicates exist) were deleted from the source
/// set; otherwise the precomputed table entries are returned unchanged.
pub fn query_context(
    table: &ContextTable,
    graph: &KnowledgeGraph,
    h: EntityId,
    r: RelationId,
    cfg: &ContextConfig,
    exclude: Option<&Triple>,
) -> Result<(HeadContext, RelationContext)> {
    graph.check_entity(h)?;
    graph.check_relation(r)?;
    let excluded = match exclude {
        Some(t) if cfg.leave_one_out => first_occurrence(graph, t),
        _ => None,
    };
    match excluded {
        None => Ok((
            table.head_context(h).clone(),
            table.relation_context(r).clone(),
        )),
        Some(idx) => Ok((
            head_context_at(graph, h, cfg, Some(idx))?,
            relation_context_at(graph, r, cfg, Some(idx))?,
        )),
    }
}

fn first_occurrence(graph: &KnowledgeGraph, t: &Triple) -> Option<u32> {
    if t.head.index() >= graph.entity_count() {
        return None;
    }
    graph
        .head_triples(t.head)
        .iter()
        .copied()
        .find(|&i| graph.triple(i) == *t)
}

const CACHE_MAGIC: &[u8; 4] = b"MCTX";
const CACHE_VERSION: u32 = 1;

/// Writes the table to a versioned binary cache. The header records the
/// config fields that shape the table so stale caches can be rejected.
pub fn write_context_cache<W: Write>(
    mut w: W,
    table: &ContextTable,
    cfg: &ContextConfig,
) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_u32::<LittleEndian>(CACHE_VERSION)?;
    w.write_u8(cfg.include_incoming as u8)?;
    w.write_u64::<LittleEndian>(cfg.head_context_budget as u64)?;
    w.write_u64::<LittleEndian>(cfg.relation_context_budget as u64)?;
    w.write_all(&table.source_fingerprint)?;
    w.write_u64::<LittleEndian>(table.head_contexts.len() as u64)?;
    w.write_u64::<LittleEndian>(table.relation_contexts.len() as u64)?;
    let write_ids = |w: &mut W, ids: &[u32]| -> Result<()> {
        w.write_u32::<LittleEndian>(ids.len() as u32)?;
        for &id in ids {
            w.write_u32::<LittleEndian>(id)?;
        }
        Ok(())
    };
    for hc in &table.head_contexts {
        let rels: Vec<u32> = hc.relations.iter().map(|r| r.0).collect();
        let ents: Vec<u32> = hc.entities.iter().map(|e| e.0).collect();
        write_ids(&mut w, &rels)?;
        write_ids(&mut w, &ents)?;
    }
    for rc in &table.relation_contexts {
        let ents: Vec<u32> = rc.entities.iter().map(|e| e.0).collect();
        write_ids(&mut w, &ents)?;
    }
    Ok(())
}

/// Reads a context cache. Returns `Ok(None)` when the cache is valid but
/// stale (fingerprint or config mismatch), in which case callers rebuild.
pub fn read_context_cache<R: Read>(
    mut r: R,
    expected_fingerprint: &[u8; 32],
    cfg: &ContextConfig,
) -> Result<Option<ContextTable>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::CorruptCache(e.to_string()))?;
    if &magic != CACHE_MAGIC {
        return Err(Error::NotAContextCache);
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::CorruptCache(e.to_string()))?;
    if version != CACHE_VERSION {
        return Err(Error::UnsupportedCacheVersion(version));
    }
    let corrupt = |e: std::io::Error| Error::CorruptCache(e.to_string());
    let incoming = r.read_u8().map_err(corrupt)? != 0;
    let head_budget = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
    let rel_budget = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
    let mut fingerprint = [0u8; 32];
    r.read_exact(&mut fingerprint).map_err(corrupt)?;
    if &fingerprint != expected_fingerprint
        || incoming != cfg.include_incoming
        || head_budget != cfg.head_context_budget
        || rel_budget != cfg.relation_context_budget
    {
        return Ok(None);
    }
    let n_ent = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
    let n_rel = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
    let read_ids = |r: &mut R| -> Result<Vec<u32>> {
        let len = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(r.read_u32::<LittleEndian>().map_err(corrupt)?);
        }
        Ok(out)
    };
    let mut head_contexts = Vec::with_capacity(n_ent);
    for _ in 0..n_ent {
        let relations = read_ids(&mut r)?.into_iter().map(RelationId).collect();
        let entities = read_ids(&mut r)?.into_iter().map(EntityId).collect();
        head_contexts.push(HeadContext {
            relations,
            entities,
        });
    }
    let mut relation_contexts = Vec::with_capacity(n_rel);
    for _ in 0..n_rel {
        let entities = read_ids(&mut r)?.into_iter().map(EntityId).collect();
        relation_contexts.push(RelationContext { entities });
    }
    Ok(Some(ContextTable {
        head_contexts,
        relation_contexts,
        source_fingerprint: fingerprint,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_graph, RawTriple};

    fn toy() -> KnowledgeGraph {
        build_graph(&[
            RawTriple::new("A", "r1", "B"),
            RawTriple::new("A", "r2", "C"),
            RawTriple::new("B", "r1", "C"),
            RawTriple::new("D", "r2", "A"),
        ])
        .unwrap()
    }

    fn e(g: &KnowledgeGraph, l: &str) -> EntityId {
        g.entity_id(l).unwrap()
    }

    fn r(g: &KnowledgeGraph, l: &str) -> RelationId {
        g.relation_id(l).unwrap()
    }

    #[test]
    fn relation_neighborhood_outgoing() {
        let g = toy();
        let cfg = ContextConfig::default();
        let got = relation_neighborhood(&g, e(&g, "A"), &cfg).unwrap();
        assert_eq!(got, vec![r(&g, "r1"), r(&g, "r2")]);
        assert!(relation_neighborhood(&g, e(&g, "C"), &cfg).unwrap().is_empty());
    }

    #[test]
    fn relation_neighborhood_incoming_dedups() {
        let g = toy();
        let cfg = ContextConfig {
            include_incoming: true,
            ..Default::default()
        };
        let got = relation_neighborhood(&g, e(&g, "A"), &cfg).unwrap();
        assert_eq!(got, vec![r(&g, "r1"), r(&g, "r2")]);
    }

    #[test]
    fn entity_neighborhood_directions() {
        let g = toy();
        let cfg = ContextConfig::default();
        assert_eq!(
            entity_neighborhood(&g, e(&g, "A"), &cfg).unwrap(),
            vec![e(&g, "B"), e(&g, "C")]
        );
        assert_eq!(
            entity_neighborhood(&g, e(&g, "D"), &cfg).unwrap(),
            vec![e(&g, "A")]
        );
        let undirected = ContextConfig {
            include_incoming: true,
            ..Default::default()
        };
        assert_eq!(
            entity_neighborhood(&g, e(&g, "A"), &undirected).unwrap(),
            vec![e(&g, "B"), e(&g, "C"), e(&g, "D")]
        );
    }

    #[test]
    fn head_context_budget_spends_relations_first() {
        let g = toy();
        let cfg = ContextConfig {
            head_context_budget: 2,
            ..Default::default()
        };
        let hc = head_context(&g, e(&g, "A"), &cfg).unwrap();
        assert_eq!(hc.relations, vec![r(&g, "r1"), r(&g, "r2")]);
        assert!(hc.entities.is_empty());
    }

    #[test]
    fn head_context_of_isolated_entity_is_empty() {
        let g = build_graph(&[
            RawTriple::new("A", "r1", "B"),
            RawTriple::new("C", "r1", "A"),
        ])
        .unwrap();
        // C never appears as tail and B never as head.
        let hc = head_context(&g, e(&g, "B"), &ContextConfig::default()).unwrap();
        assert!(hc.relations.is_empty() && hc.entities.is_empty());
    }

    #[test]
    fn relation_context_file_order() {
        let g = toy();
        let cfg = ContextConfig::default();
        assert_eq!(
            relation_context(&g, r(&g, "r1"), &cfg).unwrap().entities,
            vec![e(&g, "A"), e(&g, "B"), e(&g, "C")]
        );
        assert_eq!(
            relation_context(&g, r(&g, "r2"), &cfg).unwrap().entities,
            vec![e(&g, "A"), e(&g, "C"), e(&g, "D")]
        );
    }

    #[test]
    fn zero_budget_yields_empty_contexts() {
        let g = toy();
        let cfg = ContextConfig {
            head_context_budget: 0,
            relation_context_budget: 0,
            ..Default::default()
        };
        let hc = head_context(&g, e(&g, "A"), &cfg).unwrap();
        assert!(hc.relations.is_empty() && hc.entities.is_empty());
        assert!(relation_context(&g, r(&g, "r1"), &cfg).unwrap().entities.is_empty());
    }

    #[test]
    fn invalid_ids_are_rejected() {
        let g = toy();
        let cfg = ContextConfig::default();
        assert!(head_context(&g, EntityId(99), &cfg).is_err());
        assert!(relation_context(&g, RelationId(99), &cfg).is_err());
    }

    #[test]
    fn precompute_matches_per_query() {
        let raw = crate::kg::generate_synthetic_kg(&crate::kg::SyntheticConfig {
            entities: 80,
            relations: 6,
            triples: 400,
            hub_fraction: 0.2,
            seed: 9,
        })
        .unwrap();
        let g = build_graph(&raw).unwrap();
        for cfg in [
            ContextConfig::default(),
            ContextConfig {
                include_incoming: true,
                head_context_budget: 7,
                relation_context_budget: 5,
                ..Default::default()
            },
        ] {
            let table = precompute_all_contexts(&g, &cfg);
            for ent in 0..g.entity_count() {
                let h = EntityId(ent as u32);
                assert_eq!(table.head_context(h), &head_context(&g, h, &cfg).unwrap());
            }
            for rel in 0..g.relation_count() {
                let rid = RelationId(rel as u32);
                assert_eq!(
                    table.relation_context(rid),
                    &relation_context(&g, rid, &cfg).unwrap()
                );
            }
        }
    }

    #[test]
    fn leave_one_out_excludes_single_triple() {
        let g = toy();
        let cfg = ContextConfig {
            leave_one_out: true,
            ..Default::default()
        };
        let table = precompute_all_contexts(&g, &cfg);
        let exclude = Triple {
            head: e(&g, "A"),
            relation: r(&g, "r1"),
            tail: e(&g, "B"),
        };
        let (hc, rc) =
            query_context(&table, &g, e(&g, "A"), r(&g, "r1"), &cfg, Some(&exclude)).unwrap();
        assert_eq!(hc.relations, vec![r(&g, "r2")]);
        assert_eq!(hc.entities, vec![e(&g, "C")]);
        assert_eq!(rc.entities, vec![e(&g, "B"), e(&g, "C")]);
    }

    #[test]
    fn leave_one_out_flag_off_returns_table_entry() {
        let g = toy();
        let cfg = ContextConfig::default();
        let table = precompute_all_contexts(&g, &cfg);
        let exclude = Triple {
            head: e(&g, "A"),
            relation: r(&g, "r1"),
            tail: e(&g, "B"),
        };
        let (hc, rc) =
            query_context(&table, &g, e(&g, "A"), r(&g, "r1"), &cfg, Some(&exclude)).unwrap();
        assert_eq!(&hc, table.head_context(e(&g, "A")));
        assert_eq!(&rc, table.relation_context(r(&g, "r1")));
    }

    #[test]
    fn excluding_absent_triple_is_noop() {
        let g = toy();
        let cfg = ContextConfig {
            leave_one_out: true,
            ..Default::default()
        };
        let table = precompute_all_contexts(&g, &cfg);
        let exclude = Triple {
            head: e(&g, "A"),
            relation: r(&g, "r1"),
            tail: e(&g, "C"), // not a triple of the graph
        };
        let (hc, rc) =
            query_context(&table, &g, e(&g, "A"), r(&g, "r1"), &cfg, Some(&exclude)).unwrap();
        assert_eq!(&hc, table.head_context(e(&g, "A")));
        assert_eq!(&rc, table.relation_context(r(&g, "r1")));
    }

    #[test]
    fn exclusion_keeps_tail_supported_by_duplicate() {
        let g = build_graph(&[
            RawTriple::new("A", "r1", "B"),
            RawTriple::new("A", "r1", "B"),
        ])
        .unwrap();
        let cfg = ContextConfig {
            leave_one_out: true,
            ..Default::default()
        };
        let table = precompute_all_contexts(&g, &cfg);
        let exclude = g.triple(0);
        let (hc, _) =
            query_context(&table, &g, e(&g, "A"), r(&g, "r1"), &cfg, Some(&exclude)).unwrap();
        // The duplicate still supports B.
        assert_eq!(hc.entities, vec![e(&g, "B")]);
    }

    #[test]
    fn budget_truncation_is_prefix_monotone() {
        let raw = crate::kg::generate_synthetic_kg(&crate::kg::SyntheticConfig {
            entities: 80,
            relations: 4,
            triples: 300,
            hub_fraction: 0.3,
            seed: 21,
        })
        .unwrap();
        let g = build_graph(&raw).unwrap();
        for b in 0..12 {
            let small = ContextConfig {
                head_context_budget: b,
                relation_context_budget: b,
                ..Default::default()
            };
            let big = ContextConfig {
                head_context_budget: b + 1,
                relation_context_budget: b + 1,
                ..Default::default()
            };
            for ent in 0..g.entity_count() {
                let h = EntityId(ent as u32);
                let a = relation_neighborhood(&g, h, &small).unwrap();
                let c = relation_neighborhood(&g, h, &big).unwrap();
                assert_eq!(a.as_slice(), &c[..a.len()]);
            }
            for rel in 0..g.relation_count() {
                let rid = RelationId(rel as u32);
                let a = relation_context(&g, rid, &small).unwrap().entities;
                let c = relation_context(&g, rid, &big).unwrap().entities;
                assert_eq!(a.as_slice(), &c[..a.len()]);
            }
        }
    }

    #[test]
    fn cache_round_trip() {
        let g = toy();
        let cfg = ContextConfig::default();
        let table = precompute_all_contexts(&g, &cfg);
        let mut buf = Vec::new();
        write_context_cache(&mut buf, &table, &cfg).unwrap();
        let got = read_context_cache(&buf[..], &g.fingerprint(), &cfg)
            .unwrap()
            .expect("cache should be valid");
        assert_eq!(got, table);
    }

    #[test]
    fn cache_rejects_bad_magic_and_version() {
        let g = toy();
        let cfg = ContextConfig::default();
        let table = precompute_all_contexts(&g, &cfg);
        let mut buf = Vec::new();
        write_context_cache(&mut buf, &table, &cfg).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            read_context_cache(&bad_magic[..], &g.fingerprint(), &cfg),
            Err(Error::NotAContextCache)
        ));

        let mut bad_version = buf.clone();
        bad_version[4] = 99;
        assert!(matches!(
            read_context_cache(&bad_version[..], &g.fingerprint(), &cfg),
            Err(Error::UnsupportedCacheVersion(99))
        ));

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            read_context_cache(truncated, &g.fingerprint(), &cfg),
            Err(Error::CorruptCache(_))
        ));
    }

    #[test]
    fn cache_invalidated_on_fingerprint_or_config_mismatch() {
        let g = toy();
        let cfg = ContextConfig::default();
        let table = precompute_all_contexts(&g, &cfg);
        let mut buf = Vec::new();
        write_context_cache(&mut buf, &table, &cfg).unwrap();

        let other = [0u8; 32];
        assert!(read_context_cache(&buf[..], &other, &cfg).unwrap().is_none());

        let other_cfg = ContextConfig {
            head_context_budget: 8,
            ..cfg
        };
        assert!(read_context_cache(&buf[..], &g.fingerprint(), &other_cfg)
            .unwrap()
            .is_none());
    }

    #[test]
    fn extra_triples_extend_contexts_and_fingerprint() {
        let g = toy();
        let cfg = ContextConfig::default();
        let base = precompute_all_contexts(&g, &cfg);
        let extra = vec![Triple {
            head: e(&g, "C"),
            relation: r(&g, "r1"),
            tail: e(&g, "D"),
        }];
        let extended = precompute_with_extra(&g, &extra, &cfg);
        assert_ne!(base.source_fingerprint(), extended.source_fingerprint());
        assert_eq!(
            extended.head_context(e(&g, "C")).entities,
            vec![e(&g, "D")]
        );
    }
}
