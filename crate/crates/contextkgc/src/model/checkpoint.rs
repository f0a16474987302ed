//! Binary checkpoint format.
//!
//! Layout: magic `MUCO`, format version (u32 LE), length-prefixed UTF-8 JSON
//! metadata (configs, vocabulary labels, graph fingerprint, entity count),
//! then named tensor records: name length (u32 LE) + name bytes + dtype code
//! (u8, 0 = f32) + rank (u8) + dims (u64 LE each) + little-endian f32
//! payload. Round trips are bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::context::ContextConfig;
use crate::error::{Error, Result};
use crate::kg::to_hex;
use crate::sequence::{SequenceConfig, TokenVocabulary};

use super::{init_model, EncoderConfig, ModelParameters, TrainConfig};

const MAGIC: &[u8; 4] = b"MUCO";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    encoder: EncoderConfig,
    sequence: SequenceConfig,
    context: ContextConfig,
    train: Option<TrainConfig>,
    entity_count: usize,
    vocab_size: usize,
    graph_fingerprint: String,
    relation_labels: Vec<String>,
    entity_labels: Vec<String>,
}

/// A loaded checkpoint: parameters plus everything needed to rebuild the
/// query pipeline against the original dataset.
pub struct Checkpoint {
    pub params: ModelParameters<f32>,
    pub vocab: TokenVocabulary,
    pub encoder: EncoderConfig,
    pub sequence: SequenceConfig,
    pub context: ContextConfig,
    pub train: Option<TrainConfig>,
    pub graph_fingerprint: [u8; 32],
}

#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParameters<f32>,
    vocab: &TokenVocabulary,
    seq_cfg: &SequenceConfig,
    ctx_cfg: &ContextConfig,
    train_cfg: Option<&TrainConfig>,
    graph_fingerprint: [u8; 32],
) -> Result<()> {
    let meta = Metadata {
        encoder: params.config,
        sequence: *seq_cfg,
        context: *ctx_cfg,
        train: train_cfg.copied(),
        entity_count: params.entity_count,
        vocab_size: params.vocab_size,
        graph_fingerprint: to_hex(&graph_fingerprint),
        relation_labels: vocab.relation_labels().to_vec(),
        entity_labels: vocab.entity_labels().to_vec(),
    };
    let meta_json =
        serde_json::to_vec(&meta).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(meta_json.len() as u64)?;
    w.write_all(&meta_json)?;

    let tensors = params.named_tensors();
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, view) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(DTYPE_F32)?;
        w.write_u8(view.ndim() as u8)?;
        for &dim in view.shape() {
            w.write_u64::<LittleEndian>(dim as u64)?;
        }
        let data = view.as_slice().expect("standard layout");
        for &x in data {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if &magic != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if version != VERSION {
        return Err(Error::UnsupportedCheckpointVersion(version));
    }
    let corrupt = |e: std::io::Error| Error::CorruptCheckpoint(e.to_string());
    let meta_len = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes).map_err(corrupt)?;
    let meta: Metadata = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;

    let vocab = TokenVocabulary::from_labels(meta.relation_labels.clone(), meta.entity_labels.clone());
    if vocab.total_size() != meta.vocab_size || vocab.entity_count() != meta.entity_count {
        return Err(Error::CorruptCheckpoint(
            "metadata sizes disagree with vocabulary labels".to_string(),
        ));
    }
    let graph_fingerprint = from_hex(&meta.graph_fingerprint)?;

    // Materialize the parameter skeleton, then overwrite every tensor from
    // the records.
    let mut params: ModelParameters<f32> =
        init_model(&meta.encoder, &vocab, meta.entity_count, 0)?;
    let n_tensors = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
    let mut filled: HashMap<String, bool> = params
        .named_tensors()
        .into_iter()
        .map(|(n, _)| (n, false))
        .collect();
    for _ in 0..n_tensors {
        let name_len = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(corrupt)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::CorruptCheckpoint(format!("tensor name: {e}")))?;
        let dtype = r.read_u8().map_err(corrupt)?;
        if dtype != DTYPE_F32 {
            return Err(Error::CorruptCheckpoint(format!(
                "unsupported dtype code {dtype} for tensor {name}"
            )));
        }
        let rank = r.read_u8().map_err(corrupt)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u64::<LittleEndian>().map_err(corrupt)? as usize);
        }
        let count: usize = dims.iter().product();
        let mut payload = vec![0f32; count];
        r.read_f32_into::<LittleEndian>(&mut payload).map_err(corrupt)?;

        let mut views = params.named_tensors_mut();
        let view = views
            .iter_mut()
            .find(|(n, _)| n == &name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown tensor {name}")))?;
        if view.1.shape() != dims.as_slice() {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} has dims {:?}, expected {:?}",
                dims,
                view.1.shape()
            )));
        }
        view.1
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(&payload);
        filled.insert(name, true);
    }
    if let Some((missing, _)) = filled.iter().find(|(_, &f)| !f) {
        return Err(Error::CorruptCheckpoint(format!(
            "tensor {missing} missing from checkpoint"
        )));
    }

    Ok(Checkpoint {
        params,
        vocab,
        encoder: meta.encoder,
        sequence: meta.sequence,
        context: meta.context,
        train: meta.train,
        graph_fingerprint,
    })
}

fn from_hex(s: &str) -> Result<[u8; 32]> {
    if s.len() != 64 {
        return Err(Error::CorruptCheckpoint(
            "fingerprint must be 64 hex chars".to_string(),
        ));
    }
    let mut out = [0u8; 32];
    for i in 0..32 {
        out[i] = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
            .map_err(|e| Error::CorruptCheckpoint(format!("fingerprint: {e}")))?;
    }
    Ok(out)
}
