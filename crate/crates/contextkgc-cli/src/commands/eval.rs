use std::path::PathBuf;

use anyhow::{bail, Result};

use contextkgc::eval::{evaluate, EvalConfig, EvalReport};
use contextkgc::kg::{to_hex, Splits};
use contextkgc::model::load_checkpoint;

use crate::config::{write_atomic, RunConfig};
use crate::manifest::ManifestBuilder;

/// Which protocols to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolChoice {
    Filtered,
    Raw,
    Both,
}

impl std::str::FromStr for ProtocolChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" | "filtered" => Ok(ProtocolChoice::Filtered),
            "false" | "raw" => Ok(ProtocolChoice::Raw),
            "both" => Ok(ProtocolChoice::Both),
            other => bail!("--filtered expects true|false|both, got `{other}`"),
        }
    }
}

pub fn cmd_eval(cfg: RunConfig, checkpoint: PathBuf, protocols: Option<ProtocolChoice>) -> Result<()> {
    let mut manifest = ManifestBuilder::start("eval");
    let ckpt = load_checkpoint(&checkpoint)?;
    let splits = Splits::load(
        &cfg.train_path,
        cfg.valid_path.as_deref(),
        cfg.test_path.as_deref(),
    )?;
    if splits.train.fingerprint() != ckpt.graph_fingerprint {
        bail!(
            "checkpoint was trained on a different dataset (checkpoint fingerprint {}, dataset {})",
            to_hex(&ckpt.graph_fingerprint),
            splits.train.fingerprint_hex()
        );
    }
    if splits.test.is_empty() {
        bail!("no test split configured (set [data].test or pass --test)");
    }

    let protocols = protocols.unwrap_or(if cfg.eval.filtered {
        ProtocolChoice::Filtered
    } else {
        ProtocolChoice::Raw
    });
    let runs: Vec<bool> = match protocols {
        ProtocolChoice::Filtered => vec![true],
        ProtocolChoice::Raw => vec![false],
        ProtocolChoice::Both => vec![true, false],
    };

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut summary_rows = Vec::new();
    let mut header = None;
    for filtered in runs {
        let eval_cfg = EvalConfig {
            filtered,
            ..cfg.eval.clone()
        };
        // Checkpointed configs drive the query pipeline; the eval section of
        // the run config drives the protocol.
        let report: EvalReport = evaluate(
            &ckpt.params,
            &splits,
            &ckpt.vocab,
            &ckpt.context,
            &ckpt.sequence,
            &eval_cfg,
        )?;
        let name = if filtered { "filtered" } else { "raw" };
        println!(
            "{name}: mrr {:.6}  hits@1 {:.6}  hits@3 {:.6}  hits@10 {:.6}  n {}",
            report.mrr,
            report.hits.get(&1).copied().unwrap_or(0.0),
            report.hits.get(&3).copied().unwrap_or(0.0),
            report.hits.get(&10).copied().unwrap_or(0.0),
            report.n_examples
        );
        if let Some(u) = &report.unseen {
            println!(
                "{name} (unseen-component bucket): mrr {:.6}  n {}",
                u.mrr, u.n_examples
            );
        }
        if report.n_unrankable > 0 {
            println!(
                "{name}: {} test triples have tails outside the training entity set",
                report.n_unrankable
            );
        }
        let path = cfg.out_dir.join(format!("eval_report_{name}.json"));
        write_atomic(&path, &serde_json::to_vec_pretty(&report.to_json())?)?;
        manifest.add_file(&path);
        header.get_or_insert_with(|| report.tsv_header());
        summary_rows.push(report.tsv_row(name));
    }
    let tsv_path = cfg.out_dir.join("eval_summary.tsv");
    let tsv = format!("{}\n{}\n", header.unwrap(), summary_rows.join("\n"));
    write_atomic(&tsv_path, tsv.as_bytes())?;
    manifest.add_file(&tsv_path);

    manifest.write(
        &cfg,
        &splits.train.fingerprint_hex(),
        &cfg.out_dir.join("manifest_eval.json"),
    )?;
    Ok(())
}
