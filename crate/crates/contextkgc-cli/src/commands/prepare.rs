use anyhow::Result;

use contextkgc::kg::graph_stats;

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;

use super::load_workspace;

pub fn cmd_prepare(cfg: RunConfig) -> Result<()> {
    let mut manifest = ManifestBuilder::start("prepare");
    let ws = load_workspace(cfg)?;
    let stats = graph_stats(&ws.splits.train);
    println!(
        "entities={} relations={} triples={}",
        stats.entity_count, stats.relation_count, stats.triple_count
    );
    if !ws.splits.valid.is_empty() {
        println!("valid_triples={}", ws.splits.valid.len());
    }
    if !ws.splits.test.is_empty() {
        println!("test_triples={}", ws.splits.test.len());
    }
    println!(
        "contexts: {} ({})",
        ws.cfg.cache_path().display(),
        if ws.cache_hit { "cache hit" } else { "computed" }
    );
    println!("vocabulary: {} tokens", ws.vocab.total_size());

    manifest.add_file(&ws.cfg.cache_path());
    manifest.write(
        &ws.cfg,
        &ws.splits.train.fingerprint_hex(),
        &ws.cfg.out_dir.join("manifest_prepare.json"),
    )?;
    Ok(())
}
