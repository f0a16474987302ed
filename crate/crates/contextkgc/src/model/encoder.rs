//! Forward and backward passes of the sequence encoder.
//!
//! Computation runs over the unpadded prefix of each sequence only; PAD
//! positions never enter attention or pooling, so appending padding cannot
//! change any output. Pre-norm residual blocks, GELU feed-forward, learned
//! position embeddings, CLS pooling at position 0, linear classifier over
//! all entities.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::sequence::InputSequence;

use super::{LayerNormParams, ModelParameters, Scalar};

const LN_EPS: f64 = 1e-5;

fn gelu<T: Scalar>(x: T) -> T {
    // tanh approximation; smooth everywhere, which keeps finite-difference
    // checks clean.
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let a = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

fn layer_norm<T: Scalar>(x: &Array2<T>, p: &LayerNormParams<T>) -> (Array2<T>, LayerNormCache<T>) {
    let (rows, d) = x.dim();
    let dim = T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    let mut xhat = Array2::zeros((rows, d));
    let mut inv_std = Array1::zeros(rows);
    let mut out = Array2::zeros((rows, d));
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.sum() / dim;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var / dim;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[i] = inv;
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[[i, j]] = h;
            out[[i, j]] = h * p.gain[j] + p.bias[j];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

/// dx for rows of a layer norm; accumulates parameter gradients in place.
fn layer_norm_backward<T: Scalar>(
    dout: &Array2<T>,
    cache: &LayerNormCache<T>,
    p: &LayerNormParams<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    let (rows, d) = dout.dim();
    let dim = T::from_f64(d as f64);
    let mut dx = Array2::zeros((rows, d));
    for i in 0..rows {
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            let dhat = dout[[i, j]] * p.gain[j];
            m1 = m1 + dhat;
            m2 = m2 + dhat * cache.xhat[[i, j]];
            dgain[j] = dgain[j] + dout[[i, j]] * cache.xhat[[i, j]];
            dbias[j] = dbias[j] + dout[[i, j]];
        }
        m1 = m1 / dim;
        m2 = m2 / dim;
        let inv = cache.inv_std[i];
        for j in 0..d {
            let dhat = dout[[i, j]] * p.gain[j];
            dx[[i, j]] = inv * (dhat - m1 - cache.xhat[[i, j]] * m2);
        }
    }
    dx
}

fn softmax_rows_inplace<T: Scalar>(x: &mut Array2<T>) {
    for mut row in x.rows_mut() {
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Stable softmax over an f64 score vector.
pub fn softmax_f64(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct LayerCache<T> {
    ln1: LayerNormCache<T>,
    normed1: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
    attn_mask: Option<Array2<T>>,
    ln2: LayerNormCache<T>,
    normed2: Array2<T>,
    ff_pre: Array2<T>,
    ff_act: Array2<T>,
    ffn_mask: Option<Array2<T>>,
}

pub struct SequenceCache<T> {
    tokens: Vec<usize>,
    emb_mask: Option<Array2<T>>,
    layers: Vec<LayerCache<T>>,
    f_xhat: Array1<T>,
    f_inv_std: T,
    pooled: Array1<T>,
}

/// Per-batch caches from a forward pass, consumed by [`backward`].
pub struct BatchCache<T> {
    seqs: Vec<SequenceCache<T>>,
}

fn dropout_mask<T: Scalar>(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let scale = T::from_f64(1.0 / (1.0 - p));
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < p {
            T::zero()
        } else {
            scale
        }
    })
}

fn forward_sequence<T: Scalar>(
    params: &ModelParameters<T>,
    seq: &InputSequence,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Array1<T>, SequenceCache<T>)> {
    let cfg = &params.config;
    if seq.token_ids.len() != cfg.max_seq_len {
        return Err(Error::ShapeMismatch(format!(
            "sequence length {} does not match max_seq_len {}",
            seq.token_ids.len(),
            cfg.max_seq_len
        )));
    }
    if seq.true_length == 0 || seq.true_length > cfg.max_seq_len {
        return Err(Error::ShapeMismatch(format!(
            "true_length {} out of range",
            seq.true_length
        )));
    }
    let len = seq.true_length;
    let d = cfg.model_dim;
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let p_drop = if dropout.is_some() { cfg.dropout } else { 0.0 };

    let tokens: Vec<usize> = seq.token_ids[..len]
        .iter()
        .map(|&t| {
            let t = t as usize;
            if t >= params.vocab_size {
                Err(Error::TokenOutOfRange(t as u32, params.vocab_size))
            } else {
                Ok(t)
            }
        })
        .collect::<Result<_>>()?;

    let mut x = Array2::zeros((len, d));
    for (i, &tok) in tokens.iter().enumerate() {
        let emb = params.token_embedding.row(tok);
        let pos = params.position_embedding.row(i);
        for j in 0..d {
            x[[i, j]] = emb[j] + pos[j];
        }
    }
    let emb_mask = if p_drop > 0.0 {
        let m = dropout_mask(len, d, p_drop, dropout.as_deref_mut().unwrap());
        x = &x * &m;
        Some(m)
    } else {
        None
    };

    let mut layers = Vec::with_capacity(cfg.layers);
    for layer in &params.layers {
        let x_in = x;
        let (normed1, ln1) = layer_norm(&x_in, &layer.norm1);
        let q = normed1.dot(&layer.attn.wq) + &layer.attn.bq;
        let k = normed1.dot(&layer.attn.wk) + &layer.attn.bk;
        let v = normed1.dot(&layer.attn.wv) + &layer.attn.bv;
        let mut ctx = Array2::zeros((len, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let span = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(span);
            let kh = k.slice(span);
            let vh = v.slice(span);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|v| v * scale);
            softmax_rows_inplace(&mut scores);
            let ctx_h = scores.dot(&vh);
            ctx.slice_mut(span).assign(&ctx_h);
            probs.push(scores);
        }
        let mut attn_out = ctx.dot(&layer.attn.wo) + &layer.attn.bo;
        let attn_mask = if p_drop > 0.0 {
            let m = dropout_mask(len, d, p_drop, dropout.as_deref_mut().unwrap());
            attn_out = &attn_out * &m;
            Some(m)
        } else {
            None
        };
        let x_mid = &x_in + &attn_out;
        let (normed2, ln2) = layer_norm(&x_mid, &layer.norm2);
        let ff_pre = normed2.dot(&layer.ffn.w1) + &layer.ffn.b1;
        let ff_act = ff_pre.mapv(gelu);
        let mut ffn_out = ff_act.dot(&layer.ffn.w2) + &layer.ffn.b2;
        let ffn_mask = if p_drop > 0.0 {
            let m = dropout_mask(len, d, p_drop, dropout.as_deref_mut().unwrap());
            ffn_out = &ffn_out * &m;
            Some(m)
        } else {
            None
        };
        x = &x_mid + &ffn_out;
        layers.push(LayerCache {
            ln1,
            normed1,
            q,
            k,
            v,
            probs,
            ctx,
            attn_mask,
            ln2,
            normed2,
            ff_pre,
            ff_act,
            ffn_mask,
        });
    }

    // Final norm and pooling touch only the CLS position; the other rows
    // feed nothing downstream.
    let cls = x.row(0);
    let dim = T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    let mean = cls.sum() / dim;
    let mut var = T::zero();
    for &v in cls {
        let c = v - mean;
        var = var + c * c;
    }
    var = var / dim;
    let inv = T::one() / (var + eps).sqrt();
    let mut f_xhat = Array1::zeros(d);
    let mut pooled = Array1::zeros(d);
    for j in 0..d {
        let h = (cls[j] - mean) * inv;
        f_xhat[j] = h;
        pooled[j] = h * params.final_norm.gain[j] + params.final_norm.bias[j];
    }

    let logits = params.classifier_weight.dot(&pooled) + &params.classifier_bias;
    Ok((
        logits,
        SequenceCache {
            tokens,
            emb_mask,
            layers,
            f_xhat,
            f_inv_std: inv,
            pooled,
        },
    ))
}

fn backward_sequence<T: Scalar>(
    params: &ModelParameters<T>,
    cache: &SequenceCache<T>,
    dlogits: ArrayView1<'_, T>,
    grads: &mut ModelParameters<T>,
) {
    let cfg = &params.config;
    let len = cache.tokens.len();
    let d = cfg.model_dim;
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let dim = T::from_f64(d as f64);

    // Classifier.
    for (i, &dl) in dlogits.iter().enumerate() {
        if dl != T::zero() {
            let mut row = grads.classifier_weight.row_mut(i);
            for j in 0..d {
                row[j] = row[j] + dl * cache.pooled[j];
            }
        }
        grads.classifier_bias[i] = grads.classifier_bias[i] + dl;
    }
    let dpooled = params.classifier_weight.t().dot(&dlogits);

    // Final norm backward, CLS row only.
    let mut m1 = T::zero();
    let mut m2 = T::zero();
    for j in 0..d {
        let dhat = dpooled[j] * params.final_norm.gain[j];
        m1 = m1 + dhat;
        m2 = m2 + dhat * cache.f_xhat[j];
        grads.final_norm.gain[j] = grads.final_norm.gain[j] + dpooled[j] * cache.f_xhat[j];
        grads.final_norm.bias[j] = grads.final_norm.bias[j] + dpooled[j];
    }
    m1 = m1 / dim;
    m2 = m2 / dim;
    let mut dx = Array2::zeros((len, d));
    for j in 0..d {
        let dhat = dpooled[j] * params.final_norm.gain[j];
        dx[[0, j]] = cache.f_inv_std * (dhat - m1 - cache.f_xhat[j] * m2);
    }

    for idx in (0..params.layers.len()).rev() {
        let layer = &params.layers[idx];
        let lc = &cache.layers[idx];
        let g = &mut grads.layers[idx];

        // Feed-forward branch.
        let dffn_raw = match &lc.ffn_mask {
            Some(m) => &dx * m,
            None => dx.clone(),
        };
        g.ffn.w2 = &g.ffn.w2 + &lc.ff_act.t().dot(&dffn_raw);
        g.ffn.b2 = &g.ffn.b2 + &dffn_raw.sum_axis(Axis(0));
        let mut dff_pre = dffn_raw.dot(&layer.ffn.w2.t());
        dff_pre.zip_mut_with(&lc.ff_pre, |dv, &pre| *dv = *dv * gelu_grad(pre));
        g.ffn.w1 = &g.ffn.w1 + &lc.normed2.t().dot(&dff_pre);
        g.ffn.b1 = &g.ffn.b1 + &dff_pre.sum_axis(Axis(0));
        let dnormed2 = dff_pre.dot(&layer.ffn.w1.t());
        let dx_from_ln2 = layer_norm_backward(
            &dnormed2,
            &lc.ln2,
            &layer.norm2,
            &mut g.norm2.gain,
            &mut g.norm2.bias,
        );
        let dx_mid = &dx + &dx_from_ln2;

        // Attention branch.
        let dattn_raw = match &lc.attn_mask {
            Some(m) => &dx_mid * m,
            None => dx_mid.clone(),
        };
        g.attn.wo = &g.attn.wo + &lc.ctx.t().dot(&dattn_raw);
        g.attn.bo = &g.attn.bo + &dattn_raw.sum_axis(Axis(0));
        let dctx = dattn_raw.dot(&layer.attn.wo.t());
        let mut dq = Array2::zeros((len, d));
        let mut dk = Array2::zeros((len, d));
        let mut dv = Array2::zeros((len, d));
        for h in 0..heads {
            let span = s![.., h * dh..(h + 1) * dh];
            let probs = &lc.probs[h];
            let dctx_h = dctx.slice(span);
            let vh = lc.v.slice(span);
            let qh = lc.q.slice(span);
            let kh = lc.k.slice(span);
            let dprobs = dctx_h.dot(&vh.t());
            dv.slice_mut(span).assign(&probs.t().dot(&dctx_h));
            // Softmax backward row by row, then fold in the score scale.
            let mut dscores = Array2::zeros((len, len));
            for i in 0..len {
                let mut dot = T::zero();
                for j in 0..len {
                    dot = dot + dprobs[[i, j]] * probs[[i, j]];
                }
                for j in 0..len {
                    dscores[[i, j]] = probs[[i, j]] * (dprobs[[i, j]] - dot) * scale;
                }
            }
            dq.slice_mut(span).assign(&dscores.dot(&kh));
            dk.slice_mut(span).assign(&dscores.t().dot(&qh));
        }
        g.attn.wq = &g.attn.wq + &lc.normed1.t().dot(&dq);
        g.attn.bq = &g.attn.bq + &dq.sum_axis(Axis(0));
        g.attn.wk = &g.attn.wk + &lc.normed1.t().dot(&dk);
        g.attn.bk = &g.attn.bk + &dk.sum_axis(Axis(0));
        g.attn.wv = &g.attn.wv + &lc.normed1.t().dot(&dv);
        g.attn.bv = &g.attn.bv + &dv.sum_axis(Axis(0));
        let dnormed1 =
            dq.dot(&layer.attn.wq.t()) + dk.dot(&layer.attn.wk.t()) + dv.dot(&layer.attn.wv.t());
        let dx_from_ln1 = layer_norm_backward(
            &dnormed1,
            &lc.ln1,
            &layer.norm1,
            &mut g.norm1.gain,
            &mut g.norm1.bias,
        );
        dx = &dx_mid + &dx_from_ln1;
    }

    // Embeddings.
    let dx0 = match &cache.emb_mask {
        Some(m) => &dx * m,
        None => dx,
    };
    for (i, &tok) in cache.tokens.iter().enumerate() {
        let src = dx0.row(i);
        let mut trow = grads.token_embedding.row_mut(tok);
        let mut prow = grads.position_embedding.row_mut(i);
        for j in 0..d {
            trow[j] = trow[j] + src[j];
            prow[j] = prow[j] + src[j];
        }
    }
}

/// Forward pass over a batch, returning logits `[batch x entity_count]`.
/// Inference mode: no dropout.
pub fn forward<T: Scalar>(params: &ModelParameters<T>, batch: &[InputSequence]) -> Result<Array2<T>> {
    let (logits, _) = forward_cached(params, batch, None)?;
    Ok(logits)
}

/// Forward pass retaining per-sequence caches for [`backward`]. When a
/// dropout RNG is supplied and the configured rate is positive, dropout masks
/// are sampled (training mode).
pub fn forward_cached<T: Scalar>(
    params: &ModelParameters<T>,
    batch: &[InputSequence],
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Array2<T>, BatchCache<T>)> {
    let mut logits = Array2::zeros((batch.len(), params.entity_count));
    let mut seqs = Vec::with_capacity(batch.len());
    for (i, seq) in batch.iter().enumerate() {
        let (row, cache) = forward_sequence(params, seq, dropout.as_deref_mut())?;
        logits.row_mut(i).assign(&row);
        seqs.push(cache);
    }
    Ok((logits, BatchCache { seqs }))
}

/// Accumulates parameter gradients for a batch given upstream logit
/// gradients.
pub fn backward<T: Scalar>(
    params: &ModelParameters<T>,
    cache: &BatchCache<T>,
    dlogits: &Array2<T>,
    grads: &mut ModelParameters<T>,
) {
    for (i, seq_cache) in cache.seqs.iter().enumerate() {
        backward_sequence(params, seq_cache, dlogits.row(i), grads);
    }
}

/// Softmax distribution over all entities.
#[derive(Debug, Clone)]
pub struct PredictionDistribution {
    pub probs: Vec<f64>,
}

pub fn predict<T: Scalar>(
    params: &ModelParameters<T>,
    seq: &InputSequence,
) -> Result<PredictionDistribution> {
    let logits = forward(params, std::slice::from_ref(seq))?;
    let scores: Vec<f64> = logits.row(0).iter().map(|&x| x.to_f64()).collect();
    Ok(PredictionDistribution {
        probs: softmax_f64(&scores),
    })
}

/// Cross-entropy of one logit row against a gold entity.
pub fn loss<T: Scalar>(logits: ArrayView1<'_, T>, gold: EntityId) -> Result<f64> {
    if gold.index() >= logits.len() {
        return Err(Error::InvalidEntityId(gold.0, logits.len()));
    }
    let mut max = logits[0];
    for &v in logits.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for &v in logits.iter() {
        sum = sum + (v - max).exp();
    }
    let lse = max + sum.ln();
    Ok((lse - logits[gold.index()]).to_f64())
}

/// Mean cross-entropy over a batch plus the logit gradients of that mean.
pub fn loss_and_dlogits<T: Scalar>(
    logits: &Array2<T>,
    golds: &[EntityId],
) -> Result<(f64, Array2<T>)> {
    if logits.nrows() != golds.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows for {} gold labels",
            logits.nrows(),
            golds.len()
        )));
    }
    let inv_b = T::from_f64(1.0 / golds.len() as f64);
    let mut dlogits = Array2::zeros(logits.dim());
    let mut total = 0.0f64;
    for (i, &gold) in golds.iter().enumerate() {
        let row = logits.row(i);
        total += loss(row, gold)?;
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for &v in row.iter() {
            sum = sum + (v - max).exp();
        }
        for (j, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / sum;
            let y = if j == gold.index() { T::one() } else { T::zero() };
            dlogits[[i, j]] = (p - y) * inv_b;
        }
    }
    Ok((total / golds.len() as f64, dlogits))
}
