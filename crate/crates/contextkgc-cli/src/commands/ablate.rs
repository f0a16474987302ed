use anyhow::{bail, Result};

use contextkgc::eval::{ablation_run, FilterIndex};
use contextkgc::kg::{ResolvedTriple, Triple};
use contextkgc::model::save_checkpoint;

use crate::config::{write_atomic, RunConfig};
use crate::manifest::ManifestBuilder;

use super::load_workspace;

pub fn cmd_ablate(cfg: RunConfig) -> Result<()> {
    let ws = load_workspace(cfg)?;
    let cfg = &ws.cfg;
    let graph = &ws.splits.train;
    if ws.splits.test.is_empty() {
        bail!("ablation needs a test split (set [data].test or pass --test)");
    }

    let valid: Vec<Triple> = ws
        .splits
        .valid
        .iter()
        .filter_map(|r| match graph.resolve(r) {
            ResolvedTriple::Known(t) => Some(t),
            _ => None,
        })
        .collect();
    let test: Vec<Triple> = ws
        .splits
        .test
        .iter()
        .filter_map(|r| match graph.resolve(r) {
            ResolvedTriple::Known(t) => Some(t),
            _ => None,
        })
        .collect();
    if test.is_empty() {
        bail!("no test triple is fully resolvable against the training catalogs");
    }
    let filter = FilterIndex::build([graph.triples(), valid.as_slice(), test.as_slice()]);

    let outcomes = ablation_run(
        graph,
        &ws.table,
        &ws.vocab,
        &cfg.context,
        &cfg.sequence,
        &cfg.encoder,
        &cfg.train,
        &cfg.eval,
        &test,
        Some(&filter),
    )?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut rows = Vec::new();
    let mut header = None;
    for (mode, outcome) in &outcomes {
        let mut manifest = ManifestBuilder::start(&format!("ablate:{mode}"));
        println!(
            "{mode}: mrr {:.6}  hits@1 {:.6}  n {}",
            outcome.report.mrr,
            outcome.report.hits.get(&1).copied().unwrap_or(0.0),
            outcome.report.n_examples
        );
        let report_path = cfg.out_dir.join(format!("ablation_report_{mode}.json"));
        write_atomic(&report_path, &serde_json::to_vec_pretty(&outcome.report.to_json())?)?;
        let ckpt_path = cfg.out_dir.join(format!("model_{mode}.muco"));
        save_checkpoint(
            &ckpt_path,
            &outcome.params,
            &ws.vocab,
            &cfg.sequence,
            &cfg.context,
            Some(&cfg.train),
            graph.fingerprint(),
        )?;
        let log_path = cfg.out_dir.join(format!("trainlog_{mode}.json"));
        write_atomic(&log_path, &serde_json::to_vec_pretty(&outcome.log)?)?;
        manifest.add_file(&report_path);
        manifest.add_file(&ckpt_path);
        manifest.add_file(&log_path);
        manifest.write(
            cfg,
            &graph.fingerprint_hex(),
            &cfg.out_dir.join(format!("manifest_ablate_{mode}.json")),
        )?;
        header.get_or_insert_with(|| outcome.report.tsv_header());
        rows.push(outcome.report.tsv_row(&mode.to_string()));
    }
    let tsv_path = cfg.out_dir.join("ablation_summary.tsv");
    let tsv = format!("{}\n{}\n", header.unwrap(), rows.join("\n"));
    write_atomic(&tsv_path, tsv.as_bytes())?;
    println!("comparison table: {}", tsv_path.display());
    Ok(())
}
