mod ablate;
mod eval;
mod predict;
mod prepare;
mod train;

pub use ablate::cmd_ablate;
pub use eval::cmd_eval;
pub use predict::cmd_predict;
pub use prepare::cmd_prepare;
pub use train::cmd_train;

use anyhow::{Context, Result};
use std::fs::File;
use std::io::BufReader;

use contextkgc::context::{
    precompute_all_contexts, read_context_cache, write_context_cache, ContextTable,
};
use contextkgc::kg::Splits;
use contextkgc::sequence::{build_vocabulary, TokenVocabulary};

use crate::config::{write_atomic, RunConfig};

/// Loaded dataset plus the derived context table and vocabulary.
pub struct Workspace {
    pub cfg: RunConfig,
    pub splits: Splits,
    pub table: ContextTable,
    pub vocab: TokenVocabulary,
    pub cache_hit: bool,
}

/// Loads the splits and obtains contexts, reusing the on-disk cache when its
/// fingerprint and config match.
pub fn load_workspace(cfg: RunConfig) -> Result<Workspace> {
    let splits = Splits::load(
        &cfg.train_path,
        cfg.valid_path.as_deref(),
        cfg.test_path.as_deref(),
    )
    .with_context(|| format!("loading dataset (train: {})", cfg.train_path.display()))?;
    let graph = &splits.train;

    let cache_path = cfg.cache_path();
    let mut cache_hit = false;
    let table = if cache_path.exists() {
        let reader = BufReader::new(File::open(&cache_path)?);
        match read_context_cache(reader, &graph.fingerprint(), &cfg.context) {
            Ok(Some(table)) => {
                cache_hit = true;
                table
            }
            Ok(None) => precompute_all_contexts(graph, &cfg.context),
            Err(e) => {
                eprintln!(
                    "warning: ignoring unreadable context cache {}: {e}",
                    cache_path.display()
                );
                precompute_all_contexts(graph, &cfg.context)
            }
        }
    } else {
        precompute_all_contexts(graph, &cfg.context)
    };
    if !cache_hit {
        let mut buf = Vec::new();
        write_context_cache(&mut buf, &table, &cfg.context)?;
        write_atomic(&cache_path, &buf)?;
    }

    let vocab = build_vocabulary(graph);
    Ok(Workspace {
        cfg,
        splits,
        table,
        vocab,
        cache_hit,
    })
}
