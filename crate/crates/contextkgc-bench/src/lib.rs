//! Shared fixtures for the benchmark targets.

use contextkgc::kg::{build_graph, generate_synthetic_kg, KnowledgeGraph, SyntheticConfig};

/// Synthetic graph sized for throughput measurements; entity count scales
/// with the triple count so density stays comparable across sizes.
pub fn bench_graph(triples: usize, seed: u64) -> KnowledgeGraph {
    let raw = generate_synthetic_kg(&SyntheticConfig {
        entities: (triples / 10).max(16),
        relations: 50,
        triples,
        hub_fraction: 0.05,
        seed,
    })
    .expect("bench config is satisfiable");
    build_graph(&raw).expect("non-empty graph")
}
