//! Token vocabulary and query sequence assembly.
//!
//! Tokenization is label-level: one token per entity and one per relation,
//! plus the four specials. A query (h, r) with its contexts becomes
//!
//! ```text
//! [CLS] h  hc.relations...  hc.entities...  [SEP] r  rc.entities...  [PAD]...
//! ```
//!
//! padded to a fixed length. When content overflows, relation-context
//! entities are truncated first, then head-context entities, then
//! head-context relations; h, r, CLS and SEP always survive.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::context::{ContextConfig, ContextMode, ContextTable, HeadContext, RelationContext};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const UNK: u32 = 3;
const SPECIALS: u32 = 4;

/// Label-level token vocabulary: specials, then relation tokens, then entity
/// tokens. Owns copies of the catalog labels so checkpoints stay
/// self-contained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocabulary {
    relation_labels: Vec<String>,
    entity_labels: Vec<String>,
    relation_index: HashMap<String, u32>,
    entity_index: HashMap<String, u32>,
}

pub fn build_vocabulary(graph: &KnowledgeGraph) -> TokenVocabulary {
    TokenVocabulary::from_labels(
        graph.relation_catalog().labels().to_vec(),
        graph.entity_catalog().labels().to_vec(),
    )
}

impl TokenVocabulary {
    pub fn from_labels(relation_labels: Vec<String>, entity_labels: Vec<String>) -> Self {
        let relation_index = relation_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        let entity_index = entity_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        Self {
            relation_labels,
            entity_labels,
            relation_index,
            entity_index,
        }
    }

    pub fn total_size(&self) -> usize {
        SPECIALS as usize + self.relation_labels.len() + self.entity_labels.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn entity_count(&self) -> usize {
        self.entity_labels.len()
    }

    pub fn relation_token(&self, r: RelationId) -> Result<u32> {
        if r.index() < self.relation_labels.len() {
            Ok(SPECIALS + r.0)
        } else {
            Err(Error::InvalidRelationId(r.0, self.relation_labels.len()))
        }
    }

    pub fn entity_token(&self, e: EntityId) -> Result<u32> {
        if e.index() < self.entity_labels.len() {
            Ok(SPECIALS + self.relation_labels.len() as u32 + e.0)
        } else {
            Err(Error::InvalidEntityId(e.0, self.entity_labels.len()))
        }
    }

    pub fn entity_token_for_label(&self, label: &str) -> Option<u32> {
        self.entity_index
            .get(label)
            .map(|&i| SPECIALS + self.relation_labels.len() as u32 + i)
    }

    pub fn relation_token_for_label(&self, label: &str) -> Option<u32> {
        self.relation_index.get(label).map(|&i| SPECIALS + i)
    }

    pub fn entity_id_for_label(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label).map(|&i| EntityId(i))
    }

    pub fn relation_id_for_label(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).map(|&i| RelationId(i))
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        &self.entity_labels[e.index()]
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entity_labels
    }

    pub fn decode_token(&self, token: u32) -> Result<String> {
        if (token as usize) >= self.total_size() {
            return Err(Error::TokenOutOfRange(token, self.total_size()));
        }
        Ok(match token {
            PAD => "[PAD]".to_string(),
            CLS => "[CLS]".to_string(),
            SEP => "[SEP]".to_string(),
            UNK => "[UNK]".to_string(),
            t => {
                let i = (t - SPECIALS) as usize;
                if i < self.relation_labels.len() {
                    self.relation_labels[i].clone()
                } else {
                    self.entity_labels[i - self.relation_labels.len()].clone()
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceConfig {
    pub max_seq_len: usize,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self { max_seq_len: 256 }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_seq_len < 4 {
            return Err(Error::InvalidConfig(
                "max_seq_len must be at least 4 (room for CLS, h, SEP, r)".to_string(),
            ));
        }
        Ok(())
    }
}

/// A fixed-length token sequence with its padding mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSequence {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub true_length: usize,
}

/// Assembles a query sequence from already-resolved tokens. `UNK` is allowed
/// for the head/relation slots (external query entities at inference).
pub fn assemble_sequence(
    h_token: u32,
    r_token: u32,
    hc_relations: &[u32],
    hc_entities: &[u32],
    rc_entities: &[u32],
    cfg: &SequenceConfig,
) -> Result<InputSequence> {
    cfg.validate()?;
    let avail = cfg.max_seq_len - 4;
    let mut overflow = (hc_relations.len() + hc_entities.len() + rc_entities.len())
        .saturating_sub(avail);
    let cut = |items: &[u32], overflow: &mut usize| -> usize {
        let drop = (*items).len().min(*overflow);
        *overflow -= drop;
        items.len() - drop
    };
    let rc_keep = cut(rc_entities, &mut overflow);
    let hce_keep = cut(hc_entities, &mut overflow);
    let hcr_keep = cut(hc_relations, &mut overflow);

    let mut token_ids = Vec::with_capacity(cfg.max_seq_len);
    token_ids.push(CLS);
    token_ids.push(h_token);
    token_ids.extend_from_slice(&hc_relations[..hcr_keep]);
    token_ids.extend_from_slice(&hc_entities[..hce_keep]);
    token_ids.push(SEP);
    token_ids.push(r_token);
    token_ids.extend_from_slice(&rc_entities[..rc_keep]);
    let true_length = token_ids.len();
    token_ids.resize(cfg.max_seq_len, PAD);
    let mut attention_mask = vec![0u8; cfg.max_seq_len];
    attention_mask[..true_length].fill(1);
    Ok(InputSequence {
        token_ids,
        attention_mask,
        true_length,
    })
}

/// Encodes a query (h, r) with its contexts. All ids must resolve in the
/// vocabulary; the UNK path is reserved for external labels at inference
/// (see [`assemble_sequence`]).
pub fn encode_query(
    h: EntityId,
    r: RelationId,
    hc: &HeadContext,
    rc: &RelationContext,
    vocab: &TokenVocabulary,
    cfg: &SequenceConfig,
) -> Result<InputSequence> {
    let h_token = vocab.entity_token(h)?;
    let r_token = vocab.relation_token(r)?;
    let hc_relations: Vec<u32> = hc
        .relations
        .iter()
        .map(|&r| vocab.relation_token(r))
        .collect::<Result<_>>()?;
    let hc_entities: Vec<u32> = hc
        .entities
        .iter()
        .map(|&e| vocab.entity_token(e))
        .collect::<Result<_>>()?;
    let rc_entities: Vec<u32> = rc
        .entities
        .iter()
        .map(|&e| vocab.entity_token(e))
        .collect::<Result<_>>()?;
    assemble_sequence(h_token, r_token, &hc_relations, &hc_entities, &rc_entities, cfg)
}

/// Looks up contexts for (h, r) and encodes the query in one step, applying
/// the context mode (single-channel modes emit the other channel empty).
pub fn build_query_sequence(
    graph: &KnowledgeGraph,
    table: &ContextTable,
    vocab: &TokenVocabulary,
    h: EntityId,
    r: RelationId,
    ctx_cfg: &ContextConfig,
    seq_cfg: &SequenceConfig,
    mode: ContextMode,
    exclude: Option<&Triple>,
) -> Result<InputSequence> {
    let (mut hc, mut rc) = crate::context::query_context(table, graph, h, r, ctx_cfg, exclude)?;
    match mode {
        ContextMode::Full => {}
        ContextMode::HeadOnly => rc = RelationContext::default(),
        ContextMode::RelationOnly => hc = HeadContext::default(),
    }
    encode_query(h, r, &hc, &rc, vocab, seq_cfg)
}

/// Inverse of tokenization; specials render as `[CLS]` etc.
pub fn decode_tokens(token_ids: &[u32], vocab: &TokenVocabulary) -> Result<Vec<String>> {
    token_ids.iter().map(|&t| vocab.decode_token(t)).collect()
}
