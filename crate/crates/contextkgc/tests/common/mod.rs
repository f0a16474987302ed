//! Independent oracles and fixtures for the acceptance suite.
//!
//! The context oracles re-derive every context from a linear scan of the
//! triple list alone; they never touch the graph's adjacency indexes or the
//! precomputed table. The ranking oracle re-derives ranks by sorting. Both
//! exist to cross-check the production paths, so keep them dumb.

use std::collections::HashSet;
use std::path::PathBuf;

use contextkgc::context::ContextConfig;
use contextkgc::eval::RankPolicy;
use contextkgc::kg::{EntityId, RawTriple, RelationId, Triple};

/// First-appearance dedup with a budget, the oracle way: no early exit
/// cleverness, just a scan.
fn push_unique<T: Copy + Eq + std::hash::Hash>(
    out: &mut Vec<T>,
    seen: &mut HashSet<T>,
    budget: usize,
    item: T,
) {
    if out.len() < budget && seen.insert(item) {
        out.push(item);
    }
}

fn oracle_skip_index(triples: &[Triple], exclude: &Triple) -> Option<usize> {
    triples.iter().position(|t| t == exclude)
}

pub fn oracle_relation_neighborhood(
    triples: &[Triple],
    h: EntityId,
    cfg: &ContextConfig,
    skip: Option<usize>,
) -> Vec<RelationId> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, t) in triples.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if t.head == h || (cfg.include_incoming && t.tail == h) {
            push_unique(&mut out, &mut seen, cfg.head_context_budget, t.relation);
        }
    }
    out
}

pub fn oracle_entity_neighborhood(
    triples: &[Triple],
    h: EntityId,
    cfg: &ContextConfig,
    budget: usize,
    skip: Option<usize>,
) -> Vec<EntityId> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, t) in triples.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if t.head == h {
            push_unique(&mut out, &mut seen, budget, t.tail);
        } else if cfg.include_incoming && t.tail == h {
            push_unique(&mut out, &mut seen, budget, t.head);
        }
    }
    out
}

pub fn oracle_relation_context(
    triples: &[Triple],
    r: RelationId,
    cfg: &ContextConfig,
    skip: Option<usize>,
) -> Vec<EntityId> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, t) in triples.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if t.relation == r {
            push_unique(&mut out, &mut seen, cfg.relation_context_budget, t.head);
            push_unique(&mut out, &mut seen, cfg.relation_context_budget, t.tail);
        }
    }
    out
}

/// Brute-force equivalent of the production `query_context`.
pub fn oracle_query_context(
    triples: &[Triple],
    h: EntityId,
    r: RelationId,
    cfg: &ContextConfig,
    exclude: Option<&Triple>,
) -> (Vec<RelationId>, Vec<EntityId>, Vec<EntityId>) {
    let skip = match exclude {
        Some(e) if cfg.leave_one_out => oracle_skip_index(triples, e),
        _ => None,
    };
    let relations = oracle_relation_neighborhood(triples, h, cfg, skip);
    let entities = oracle_entity_neighborhood(
        triples,
        h,
        cfg,
        cfg.head_context_budget - relations.len(),
        skip,
    );
    let rc = oracle_relation_context(triples, r, cfg, skip);
    (relations, entities, rc)
}

/// Sort-based rank: position of the gold score in the descending candidate
/// list, tie block resolved per policy.
pub fn oracle_rank(
    scores: &[f64],
    gold: usize,
    filtered: &HashSet<usize>,
    policy: RankPolicy,
) -> f64 {
    let mut candidates: Vec<f64> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !filtered.contains(i))
        .map(|(_, &s)| s)
        .collect();
    candidates.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let gs = scores[gold];
    let first = candidates.iter().position(|&s| s == gs).unwrap() + 1;
    let last = candidates.len() - candidates.iter().rev().position(|&s| s == gs).unwrap();
    match policy {
        RankPolicy::Optimistic => first as f64,
        RankPolicy::Pessimistic => last as f64,
        RankPolicy::Mean => (first + last) as f64 / 2.0,
    }
}

/// Mean reciprocal rank and Hits@k from first principles, summed in input
/// order (the same order the production path uses).
pub fn oracle_mrr_hits(ranks: &[f64], ks: &[usize]) -> (f64, Vec<f64>) {
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r).sum::<f64>() / n;
    let hits = ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / n)
        .collect();
    (mrr, hits)
}

/// Synthetic corpus with learnable structure for the generalization check:
/// entities fall into clusters and each (cluster(head), relation) cell maps
/// to one fixed tail entity, so unseen (head, relation) queries are
/// predictable from patterns seen in training.
pub struct ClusteredKg {
    pub train: Vec<RawTriple>,
    pub test: Vec<RawTriple>,
}

pub fn clustered_kg(
    entities: usize,
    relations: usize,
    clusters: usize,
    train_triples: usize,
    test_triples: usize,
    seed: u64,
) -> ClusteredKg {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let cluster_of = |e: usize| e % clusters;
    // One gold tail per (cluster, relation) cell, drawn once.
    let gold: Vec<Vec<usize>> = (0..clusters)
        .map(|_| (0..relations).map(|_| rng.random_range(0..entities)).collect())
        .collect();

    // All (h, r) cells, shuffled; the first slice trains, the next tests,
    // so train and test pairs are disjoint.
    let mut cells: Vec<(usize, usize)> = (0..entities)
        .flat_map(|h| (0..relations).map(move |r| (h, r)))
        .collect();
    cells.shuffle(&mut rng);
    assert!(train_triples + test_triples <= cells.len());

    let make = |cells: &[(usize, usize)]| -> Vec<RawTriple> {
        cells
            .iter()
            .map(|&(h, r)| {
                let mut t = gold[cluster_of(h)][r];
                if t == h {
                    t = (t + 1) % entities;
                }
                RawTriple::new(&format!("e{h}"), &format!("r{r}"), &format!("e{t}"))
            })
            .collect()
    };
    ClusteredKg {
        train: make(&cells[..train_triples]),
        test: make(&cells[train_triples..train_triples + test_triples]),
    }
}

/// Locates a benchmark dataset directory (`train.txt`, `valid.txt`,
/// `test.txt`), checking `$CONTEXTKGC_DATA/<name>` and `<workspace>/data/<name>`.
pub fn dataset_dir(name: &str) -> Option<PathBuf> {
    let mut candidates = Vec::new();
    if let Ok(root) = std::env::var("CONTEXTKGC_DATA") {
        candidates.push(PathBuf::from(root).join(name));
    }
    candidates.push(
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../data")
            .join(name),
    );
    candidates
        .into_iter()
        .find(|d| d.join("train.txt").exists())
}
