//! Run configuration: a TOML file with sections mirroring the module
//! configs, overridden by command-line flags. The effective config is echoed
//! into the run manifest together with the applied overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use contextkgc::context::ContextConfig;
use contextkgc::eval::EvalConfig;
use contextkgc::model::{EncoderConfig, TrainConfig};
use contextkgc::sequence::SequenceConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    data: Option<DataSection>,
    output: Option<OutputSection>,
    context: Option<ContextConfig>,
    sequence: Option<SequenceConfig>,
    encoder: Option<EncoderConfig>,
    train: Option<TrainConfig>,
    eval: Option<EvalConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    train: Option<PathBuf>,
    valid: Option<PathBuf>,
    test: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

/// Flag-level overrides shared by every subcommand.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct CommonArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RNG seed (mandatory here or in the config file; no wall-clock
    /// seeding).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training triples (TSV).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation triples (TSV).
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Test triples (TSV).
    #[arg(long)]
    pub test: Option<PathBuf>,
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub train_path: PathBuf,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub context: ContextConfig,
    pub sequence: SequenceConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Human-readable log of flag overrides applied on top of the file.
    pub overrides: Vec<String>,
}

impl RunConfig {
    pub fn load(common: &CommonArgs) -> Result<Self> {
        let file: FileConfig = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config file {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let mut overrides = Vec::new();
        let mut push_override = |name: &str, v: String| overrides.push(format!("--{name} {v}"));

        let seed = match (common.seed, file.seed) {
            (Some(s), _) => {
                if common.seed.is_some() && file.seed.is_some() {
                    push_override("seed", s.to_string());
                }
                s
            }
            (None, Some(s)) => s,
            (None, None) => bail!("a seed is required (set `seed` in the config or pass --seed)"),
        };

        let data = file.data.unwrap_or_default();
        let train_path = match common.train.clone().or(data.train) {
            Some(p) => p,
            None => bail!("a training file is required (set [data].train or pass --train)"),
        };
        let valid_path = common.valid.clone().or(data.valid);
        let test_path = common.test.clone().or(data.test);
        let out_dir = common
            .out
            .clone()
            .or(file.output.unwrap_or_default().dir)
            .unwrap_or_else(|| PathBuf::from("out"));

        let context = file.context.unwrap_or_default();
        let sequence = file.sequence.unwrap_or_default();
        let mut encoder = file.encoder.unwrap_or_default();
        // The encoder consumes sequences of exactly this length; the
        // sequence section is authoritative.
        encoder.max_seq_len = sequence.max_seq_len;
        let mut train = file.train.unwrap_or_default();
        train.seed = seed;
        let eval = file.eval.unwrap_or_default();

        for path in [Some(&train_path), valid_path.as_ref(), test_path.as_ref()]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                bail!("dataset file {} does not exist", path.display());
            }
        }
        sequence
            .validate()
            .map_err(|e| anyhow::anyhow!("config: {e}"))?;
        encoder
            .validate()
            .map_err(|e| anyhow::anyhow!("config: {e}"))?;
        eval.validate().map_err(|e| anyhow::anyhow!("config: {e}"))?;

        Ok(Self {
            seed,
            train_path,
            valid_path,
            test_path,
            out_dir,
            context,
            sequence,
            encoder,
            train,
            eval,
            overrides,
        })
    }

    pub fn apply_train_overrides(
        &mut self,
        learning_rate: Option<f64>,
        epochs: Option<usize>,
        batch_size: Option<usize>,
    ) {
        if let Some(lr) = learning_rate {
            self.overrides
                .push(format!("--learning-rate {lr} (was {})", self.train.learning_rate));
            self.train.learning_rate = lr;
        }
        if let Some(e) = epochs {
            self.overrides
                .push(format!("--epochs {e} (was {})", self.train.max_epochs));
            self.train.max_epochs = e;
        }
        if let Some(b) = batch_size {
            self.overrides
                .push(format!("--batch-size {b} (was {})", self.train.batch_size));
            self.train.batch_size = b;
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("model.muco")
    }

    pub fn cache_path(&self) -> PathBuf {
        self.out_dir.join("contexts.mctx")
    }
}

/// Writes bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
