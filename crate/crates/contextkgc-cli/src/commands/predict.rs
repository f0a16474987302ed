use std::path::PathBuf;

use anyhow::{bail, Result};

use contextkgc::context::ContextMode;
use contextkgc::kg::{to_hex, Splits};
use contextkgc::model::{load_checkpoint, predict};
use contextkgc::sequence::{assemble_sequence, UNK};

use crate::config::RunConfig;

use super::load_workspace;

pub fn cmd_predict(
    cfg: RunConfig,
    checkpoint: PathBuf,
    head: String,
    relation: String,
    top_k: usize,
) -> Result<()> {
    if top_k < 1 {
        bail!("top_k must be at least 1");
    }
    let ckpt = load_checkpoint(&checkpoint)?;
    {
        let splits = Splits::load(&cfg.train_path, None, None)?;
        if splits.train.fingerprint() != ckpt.graph_fingerprint {
            bail!(
                "checkpoint was trained on a different dataset (checkpoint fingerprint {}, dataset {})",
                to_hex(&ckpt.graph_fingerprint),
                splits.train.fingerprint_hex()
            );
        }
    }
    // Contexts come from the training graph (cache-aware), with the
    // checkpoint's context and sequence configs.
    let mut cfg = cfg;
    cfg.context = ckpt.context;
    cfg.sequence = ckpt.sequence;
    let ws = load_workspace(cfg)?;
    let graph = &ws.splits.train;
    let vocab = &ckpt.vocab;
    let mode = ws.cfg.eval.context_mode;

    let head_id = vocab.entity_id_for_label(&head);
    let rel_id = vocab.relation_id_for_label(&relation);
    if head_id.is_none() {
        eprintln!("warning: unknown head label `{head}`; querying with UNK and empty head context");
    }
    if rel_id.is_none() {
        eprintln!(
            "warning: unknown relation label `{relation}`; querying with UNK and empty relation context"
        );
    }

    let h_token = match head_id {
        Some(h) => vocab.entity_token(h)?,
        None => UNK,
    };
    let r_token = match rel_id {
        Some(r) => vocab.relation_token(r)?,
        None => UNK,
    };
    let (hcr, hce) = match head_id {
        Some(h) if mode != ContextMode::RelationOnly => {
            let hc = ws.table.head_context(h);
            (
                hc.relations
                    .iter()
                    .map(|&r| vocab.relation_token(r))
                    .collect::<contextkgc::Result<Vec<_>>>()?,
                hc.entities
                    .iter()
                    .map(|&e| vocab.entity_token(e))
                    .collect::<contextkgc::Result<Vec<_>>>()?,
            )
        }
        _ => (Vec::new(), Vec::new()),
    };
    let rce = match rel_id {
        Some(r) if mode != ContextMode::HeadOnly => ws
            .table
            .relation_context(r)
            .entities
            .iter()
            .map(|&e| vocab.entity_token(e))
            .collect::<contextkgc::Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let seq = assemble_sequence(h_token, r_token, &hcr, &hce, &rce, &ws.cfg.sequence)?;
    let dist = predict(&ckpt.params, &seq)?;

    let mut ranked: Vec<(usize, f64)> = dist.probs.iter().copied().enumerate().collect();
    // Descending probability, ties by entity id.
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let k = if top_k > ranked.len() {
        eprintln!(
            "warning: top_k {} exceeds entity count {}; clamping",
            top_k,
            ranked.len()
        );
        ranked.len()
    } else {
        top_k
    };
    for (id, prob) in ranked.into_iter().take(k) {
        println!("{}\t{:.6}", graph.entity_label(contextkgc::kg::EntityId(id as u32)), prob);
    }
    Ok(())
}
