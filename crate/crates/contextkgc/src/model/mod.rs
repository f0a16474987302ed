//! Trainable predictor: a small bidirectional transformer encoder with CLS
//! pooling and a linear softmax classifier over all entities.
//!
//! The encoder is written from scratch (forward and backward passes) over a
//! generic scalar so the same code runs in f32 for training and in f64 for
//! finite-difference gradient checking.

mod checkpoint;
mod encoder;
mod gradcheck;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use encoder::{
    forward, forward_cached, loss, loss_and_dlogits, predict, softmax_f64, BatchCache,
    PredictionDistribution,
};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use train::{
    train, train_with, AdamState, EpochRecord, TrainConfig, TrainControl, TrainLog,
};

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::TokenVocabulary;

/// Float scalar the model runs on (f32 for training, f64 for checking).
pub trait Scalar: NdFloat {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dim: 128,
            ff_dim: 512,
            dropout: 0.1,
            max_seq_len: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.heads < 1 || self.model_dim < 1 || self.ff_dim < 1 {
            return Err(Error::InvalidConfig(
                "encoder dimensions must all be at least 1".to_string(),
            ));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(
                "dropout must be in [0, 1)".to_string(),
            ));
        }
        if self.max_seq_len < 4 {
            return Err(Error::InvalidConfig(
                "max_seq_len must be at least 4".to_string(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub wq: Array2<T>,
    pub bq: Array1<T>,
    pub wk: Array2<T>,
    pub bk: Array1<T>,
    pub wv: Array2<T>,
    pub bv: Array1<T>,
    pub wo: Array2<T>,
    pub bo: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<T> {
    pub norm1: LayerNormParams<T>,
    pub attn: AttentionParams<T>,
    pub norm2: LayerNormParams<T>,
    pub ffn: FeedForwardParams<T>,
}

/// All trainable weights. The classifier row count equals the entity count
/// exactly; every entity is a candidate tail.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub entity_count: usize,
    pub token_embedding: Array2<T>,
    pub position_embedding: Array2<T>,
    pub layers: Vec<EncoderLayerParams<T>>,
    pub final_norm: LayerNormParams<T>,
    pub classifier_weight: Array2<T>,
    pub classifier_bias: Array1<T>,
}

/// Initializes a model deterministically from a seed. Weight matrices are
/// drawn from normal distributions scaled by 1/sqrt(fan_in); norms start at
/// identity and biases at zero.
pub fn init_model<T: Scalar>(
    enc: &EncoderConfig,
    vocab: &TokenVocabulary,
    entity_count: usize,
    seed: u64,
) -> Result<ModelParameters<T>> {
    enc.validate()?;
    if vocab.entity_count() != entity_count {
        return Err(Error::ShapeMismatch(format!(
            "entity_count {} does not match vocabulary entity count {}",
            entity_count,
            vocab.entity_count()
        )));
    }
    let d = enc.model_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |rows: usize, cols: usize, std: f64| -> Array2<T> {
        let dist = Normal::new(0.0, std).expect("valid std");
        Array2::from_shape_fn((rows, cols), |_| T::from_f64(dist.sample(&mut rng)))
    };
    let std_d = 1.0 / (d as f64).sqrt();
    let std_ff = 1.0 / (enc.ff_dim as f64).sqrt();

    let vocab_size = vocab.total_size();
    let token_embedding = normal(vocab_size, d, std_d);
    let position_embedding = normal(enc.max_seq_len, d, std_d);
    let mut layers = Vec::with_capacity(enc.layers);
    for _ in 0..enc.layers {
        layers.push(EncoderLayerParams {
            norm1: LayerNormParams {
                gain: Array1::ones(d),
                bias: Array1::zeros(d),
            },
            attn: AttentionParams {
                wq: normal(d, d, std_d),
                bq: Array1::zeros(d),
                wk: normal(d, d, std_d),
                bk: Array1::zeros(d),
                wv: normal(d, d, std_d),
                bv: Array1::zeros(d),
                wo: normal(d, d, std_d),
                bo: Array1::zeros(d),
            },
            norm2: LayerNormParams {
                gain: Array1::ones(d),
                bias: Array1::zeros(d),
            },
            ffn: FeedForwardParams {
                w1: normal(d, enc.ff_dim, std_d),
                b1: Array1::zeros(enc.ff_dim),
                w2: normal(enc.ff_dim, d, std_ff),
                b2: Array1::zeros(d),
            },
        });
    }
    let final_norm = LayerNormParams {
        gain: Array1::ones(d),
        bias: Array1::zeros(d),
    };
    let classifier_weight = normal(entity_count, d, std_d);
    let classifier_bias = Array1::zeros(entity_count);
    Ok(ModelParameters {
        config: *enc,
        vocab_size,
        entity_count,
        token_embedding,
        position_embedding,
        layers,
        final_norm,
        classifier_weight,
        classifier_bias,
    })
}

impl<T: Scalar> ModelParameters<T> {
    /// Same shapes, all zeros. Gradient and optimizer-state container.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, mut view) in out.named_tensors_mut() {
            view.fill(T::zero());
        }
        out
    }

    pub fn fill_zero(&mut self) {
        for (_, mut view) in self.named_tensors_mut() {
            view.fill(T::zero());
        }
    }

    /// Tensors in a fixed, documented order (the checkpoint record order).
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out: Vec<(String, ArrayViewD<'_, T>)> = Vec::new();
        out.push(("token_embedding".into(), self.token_embedding.view().into_dyn()));
        out.push((
            "position_embedding".into(),
            self.position_embedding.view().into_dyn(),
        ));
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((p("norm1.gain"), l.norm1.gain.view().into_dyn()));
            out.push((p("norm1.bias"), l.norm1.bias.view().into_dyn()));
            out.push((p("attn.wq"), l.attn.wq.view().into_dyn()));
            out.push((p("attn.bq"), l.attn.bq.view().into_dyn()));
            out.push((p("attn.wk"), l.attn.wk.view().into_dyn()));
            out.push((p("attn.bk"), l.attn.bk.view().into_dyn()));
            out.push((p("attn.wv"), l.attn.wv.view().into_dyn()));
            out.push((p("attn.bv"), l.attn.bv.view().into_dyn()));
            out.push((p("attn.wo"), l.attn.wo.view().into_dyn()));
            out.push((p("attn.bo"), l.attn.bo.view().into_dyn()));
            out.push((p("norm2.gain"), l.norm2.gain.view().into_dyn()));
            out.push((p("norm2.bias"), l.norm2.bias.view().into_dyn()));
            out.push((p("ffn.w1"), l.ffn.w1.view().into_dyn()));
            out.push((p("ffn.b1"), l.ffn.b1.view().into_dyn()));
            out.push((p("ffn.w2"), l.ffn.w2.view().into_dyn()));
            out.push((p("ffn.b2"), l.ffn.b2.view().into_dyn()));
        }
        out.push(("final_norm.gain".into(), self.final_norm.gain.view().into_dyn()));
        out.push(("final_norm.bias".into(), self.final_norm.bias.view().into_dyn()));
        out.push((
            "classifier.weight".into(),
            self.classifier_weight.view().into_dyn(),
        ));
        out.push(("classifier.bias".into(), self.classifier_bias.view().into_dyn()));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out: Vec<(String, ArrayViewMutD<'_, T>)> = Vec::new();
        out.push((
            "token_embedding".into(),
            self.token_embedding.view_mut().into_dyn(),
        ));
        out.push((
            "position_embedding".into(),
            self.position_embedding.view_mut().into_dyn(),
        ));
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((p("norm1.gain"), l.norm1.gain.view_mut().into_dyn()));
            out.push((p("norm1.bias"), l.norm1.bias.view_mut().into_dyn()));
            out.push((p("attn.wq"), l.attn.wq.view_mut().into_dyn()));
            out.push((p("attn.bq"), l.attn.bq.view_mut().into_dyn()));
            out.push((p("attn.wk"), l.attn.wk.view_mut().into_dyn()));
            out.push((p("attn.bk"), l.attn.bk.view_mut().into_dyn()));
            out.push((p("attn.wv"), l.attn.wv.view_mut().into_dyn()));
            out.push((p("attn.bv"), l.attn.bv.view_mut().into_dyn()));
            out.push((p("attn.wo"), l.attn.wo.view_mut().into_dyn()));
            out.push((p("attn.bo"), l.attn.bo.view_mut().into_dyn()));
            out.push((p("norm2.gain"), l.norm2.gain.view_mut().into_dyn()));
            out.push((p("norm2.bias"), l.norm2.bias.view_mut().into_dyn()));
            out.push((p("ffn.w1"), l.ffn.w1.view_mut().into_dyn()));
            out.push((p("ffn.b1"), l.ffn.b1.view_mut().into_dyn()));
            out.push((p("ffn.w2"), l.ffn.w2.view_mut().into_dyn()));
            out.push((p("ffn.b2"), l.ffn.b2.view_mut().into_dyn()));
        }
        out.push((
            "final_norm.gain".into(),
            self.final_norm.gain.view_mut().into_dyn(),
        ));
        out.push((
            "final_norm.bias".into(),
            self.final_norm.bias.view_mut().into_dyn(),
        ));
        out.push((
            "classifier.weight".into(),
            self.classifier_weight.view_mut().into_dyn(),
        ));
        out.push((
            "classifier.bias".into(),
            self.classifier_bias.view_mut().into_dyn(),
        ));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, v)| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Converts the scalar type (f32 <-> f64).
    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        let conv2 = |a: &Array2<T>| a.mapv(|x| U::from_f64(x.to_f64()));
        let conv1 = |a: &Array1<T>| a.mapv(|x| U::from_f64(x.to_f64()));
        ModelParameters {
            config: self.config,
            vocab_size: self.vocab_size,
            entity_count: self.entity_count,
            token_embedding: conv2(&self.token_embedding),
            position_embedding: conv2(&self.position_embedding),
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayerParams {
                    norm1: LayerNormParams {
                        gain: conv1(&l.norm1.gain),
                        bias: conv1(&l.norm1.bias),
                    },
                    attn: AttentionParams {
                        wq: conv2(&l.attn.wq),
                        bq: conv1(&l.attn.bq),
                        wk: conv2(&l.attn.wk),
                        bk: conv1(&l.attn.bk),
                        wv: conv2(&l.attn.wv),
                        bv: conv1(&l.attn.bv),
                        wo: conv2(&l.attn.wo),
                        bo: conv1(&l.attn.bo),
                    },
                    norm2: LayerNormParams {
                        gain: conv1(&l.norm2.gain),
                        bias: conv1(&l.norm2.bias),
                    },
                    ffn: FeedForwardParams {
                        w1: conv2(&l.ffn.w1),
                        b1: conv1(&l.ffn.b1),
                        w2: conv2(&l.ffn.w2),
                        b2: conv1(&l.ffn.b2),
                    },
                })
                .collect(),
            final_norm: LayerNormParams {
                gain: conv1(&self.final_norm.gain),
                bias: conv1(&self.final_norm.bias),
            },
            classifier_weight: conv2(&self.classifier_weight),
            classifier_bias: conv1(&self.classifier_bias),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_graph, RawTriple};
    use crate::sequence::build_vocabulary;

    fn tiny_vocab() -> TokenVocabulary {
        let g = build_graph(&[
            RawTriple::new("A", "r1", "B"),
            RawTriple::new("A", "r2", "C"),
            RawTriple::new("B", "r1", "C"),
            RawTriple::new("D", "r2", "A"),
        ])
        .unwrap();
        build_vocabulary(&g)
    }

    #[test]
    fn init_is_deterministic_for_seed() {
        let vocab = tiny_vocab();
        let enc = EncoderConfig {
            model_dim: 16,
            ff_dim: 32,
            heads: 2,
            layers: 2,
            dropout: 0.0,
            max_seq_len: 16,
        };
        let a: ModelParameters<f32> = init_model(&enc, &vocab, 4, 42).unwrap();
        let b: ModelParameters<f32> = init_model(&enc, &vocab, 4, 42).unwrap();
        assert_eq!(a, b);
        let c: ModelParameters<f32> = init_model(&enc, &vocab, 4, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_entity_count_mismatch() {
        let vocab = tiny_vocab();
        let enc = EncoderConfig::default();
        assert!(init_model::<f32>(&enc, &vocab, 5, 0).is_err());
    }

    #[test]
    fn init_shapes_follow_config() {
        let vocab = tiny_vocab();
        let enc = EncoderConfig {
            model_dim: 128,
            ..Default::default()
        };
        let m: ModelParameters<f32> = init_model(&enc, &vocab, 4, 0).unwrap();
        assert_eq!(m.token_embedding.shape(), &[10, 128]);
        assert_eq!(m.classifier_weight.shape(), &[4, 128]);
        assert_eq!(m.classifier_bias.len(), 4);
    }

    #[test]
    fn config_validation() {
        let mut enc = EncoderConfig::default();
        enc.model_dim = 130; // not divisible by 4 heads
        assert!(enc.validate().is_err());
        let mut enc = EncoderConfig::default();
        enc.layers = 0;
        assert!(enc.validate().is_err());
    }

    #[test]
    fn named_tensors_order_is_stable_and_complete() {
        let vocab = tiny_vocab();
        let enc = EncoderConfig {
            model_dim: 8,
            ff_dim: 16,
            heads: 2,
            layers: 1,
            dropout: 0.0,
            max_seq_len: 8,
        };
        let m: ModelParameters<f32> = init_model(&enc, &vocab, 4, 0).unwrap();
        let names: Vec<String> = m.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "token_embedding");
        assert_eq!(names.last().unwrap(), "classifier.bias");
        assert_eq!(names.len(), 2 + 16 + 4);
        let total: usize = m.param_count();
        // emb 10*8 + pos 8*8 + layer (two norms at 2*8 each + 4*(8*8+8) attn
        // + 8*16+16+16*8+8 ffn) + final norm 16 + classifier 4*8+4
        assert_eq!(
            total,
            10 * 8 + 8 * 8 + (2 * 8 + 2 * 8 + 4 * (64 + 8) + (128 + 16 + 128 + 8)) + 16 + (32 + 4)
        );
    }
}
