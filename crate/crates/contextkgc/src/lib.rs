//! Context-aware knowledge graph completion.
//!
//! Given a head entity and a relation, the toolkit extracts two context
//! structures from the training graph — the head's neighborhood (its
//! incident relations and adjacent entities) and the relation's participant
//! entities — encodes `[CLS] h H_c [SEP] r R_c` with a small trainable
//! transformer, and classifies over all entities to predict the tail.
//! Training is plain cross-entropy over the training triples; there is no
//! negative sampling. Evaluation reports MRR and Hits@k under raw and
//! filtered protocols.
//!
//! Modules:
//! - [`kg`]: interned triple store, TSV parsing, synthetic graph generation
//! - [`context`]: head/relation context extraction and the precomputed table
//! - [`sequence`]: label-level vocabulary and query sequence assembly
//! - [`model`]: encoder, training loop, gradient check, checkpoints
//! - [`eval`]: ranking metrics, filtered protocol, baseline, ablations

pub mod context;
pub mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod sequence;

pub use error::{Error, Result};
