use anyhow::{Context, Result};

use contextkgc::eval::{evaluate_scorer, model_scorer, EvalConfig, FilterIndex};
use contextkgc::kg::{ResolvedTriple, Triple};
use contextkgc::model::{save_checkpoint, train_with, TrainControl};

use crate::config::{write_atomic, RunConfig};
use crate::manifest::ManifestBuilder;

use super::load_workspace;

/// Validation MRR must move less than this across this many consecutive
/// epochs to trigger early stopping.
const STABILIZE_DELTA: f64 = 1e-3;
const STABILIZE_EPOCHS: usize = 3;

pub fn cmd_train(cfg: RunConfig) -> Result<()> {
    let mut manifest = ManifestBuilder::start("train");
    let ws = load_workspace(cfg)?;
    let cfg = &ws.cfg;
    let graph = &ws.splits.train;

    for line in &cfg.overrides {
        println!("override: {line}");
    }

    // Early stopping probes validation MRR when a validation split exists.
    let valid_triples: Vec<Triple> = ws
        .splits
        .valid
        .iter()
        .filter_map(|r| match graph.resolve(r) {
            ResolvedTriple::Known(t) => Some(t),
            _ => None,
        })
        .collect();
    let filter = if valid_triples.is_empty() {
        None
    } else {
        Some(FilterIndex::build([graph.triples(), valid_triples.as_slice()]))
    };
    let probe_eval = EvalConfig {
        context_mode: cfg.train.context_mode,
        ..cfg.eval.clone()
    };

    let mut mrr_history: Vec<f64> = Vec::new();
    let (params, log) = train_with(
        graph,
        &ws.table,
        &ws.vocab,
        &cfg.context,
        &cfg.sequence,
        &cfg.encoder,
        &cfg.train,
        |rec, params| {
            let mut line = format!(
                "epoch {:>3}  loss {:.6}  examples {}  {} ms",
                rec.epoch, rec.mean_loss, rec.examples, rec.wall_ms
            );
            let mut control = TrainControl::Continue;
            if let (Some(filter), false) = (&filter, valid_triples.is_empty()) {
                let scorer = model_scorer(
                    params,
                    graph,
                    &ws.table,
                    &ws.vocab,
                    &cfg.context,
                    &cfg.sequence,
                    cfg.train.context_mode,
                );
                if let Ok(report) =
                    evaluate_scorer(&scorer, &valid_triples, Some(filter), &probe_eval)
                {
                    line.push_str(&format!("  valid mrr {:.6}", report.mrr));
                    mrr_history.push(report.mrr);
                    let n = mrr_history.len();
                    if n > STABILIZE_EPOCHS {
                        let stable = (n - STABILIZE_EPOCHS..n)
                            .all(|i| (mrr_history[i] - mrr_history[i - 1]).abs() < STABILIZE_DELTA);
                        if stable {
                            line.push_str("  (stabilized)");
                            control = TrainControl::Stop;
                        }
                    }
                }
            }
            println!("{line}");
            control
        },
    )
    .context("training")?;

    let ckpt_path = cfg.checkpoint_path();
    std::fs::create_dir_all(&cfg.out_dir)?;
    save_checkpoint(
        &ckpt_path,
        &params,
        &ws.vocab,
        &cfg.sequence,
        &cfg.context,
        Some(&cfg.train),
        graph.fingerprint(),
    )?;
    manifest.add_file(&ckpt_path);

    let log_path = cfg.out_dir.join("trainlog.json");
    write_atomic(&log_path, &serde_json::to_vec_pretty(&log)?)?;
    manifest.add_file(&log_path);

    let last = log.epochs.last().expect("at least one epoch");
    println!(
        "done: {} epochs, final loss {:.6}, checkpoint {}",
        last.epoch,
        last.mean_loss,
        ckpt_path.display()
    );
    manifest.write(
        cfg,
        &graph.fingerprint_hex(),
        &cfg.out_dir.join("manifest_train.json"),
    )?;
    Ok(())
}
