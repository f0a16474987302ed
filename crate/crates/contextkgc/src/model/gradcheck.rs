//! Finite-difference validation of the analytic gradients.
//!
//! Runs the real pipeline (synthetic graph, contexts, encoded queries) at a
//! tiny configuration in f64 and compares every parameter's backward
//! gradient against central differences.

use crate::context::{precompute_all_contexts, ContextConfig, ContextMode};
use crate::error::Result;
use crate::kg::{build_graph, generate_synthetic_kg, EntityId, SyntheticConfig};
use crate::sequence::{build_query_sequence, build_vocabulary, InputSequence, SequenceConfig};

use super::encoder::{backward, forward_cached, loss_and_dlogits};
use super::{init_model, EncoderConfig, ModelParameters};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub sum_abs_error: f64,
    pub checked: usize,
}

/// Relative error with a small absolute floor so near-zero gradients are
/// compared at a sane scale.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn batch_loss(params: &ModelParameters<f64>, batch: &[InputSequence], golds: &[EntityId]) -> f64 {
    let (logits, _) = forward_cached(params, batch, None).expect("forward");
    let (loss, _) = loss_and_dlogits(&logits, golds).expect("loss");
    loss
}

/// Compares analytic gradients against central finite differences of the
/// mean batch loss, parameter by parameter, in 64-bit precision. Dropout
/// must be disabled in the config (the loss must be a deterministic function
/// of the parameters).
pub fn gradient_check(enc: &EncoderConfig, seed: u64, fd_step: f64) -> Result<GradCheckReport> {
    assert!(
        enc.dropout == 0.0,
        "gradient_check requires dropout = 0 (deterministic loss)"
    );
    let raw = generate_synthetic_kg(&SyntheticConfig {
        entities: 8,
        relations: 3,
        triples: 20,
        hub_fraction: 0.25,
        seed,
    })?;
    let graph = build_graph(&raw)?;
    let vocab = build_vocabulary(&graph);
    let ctx_cfg = ContextConfig::default();
    let table = precompute_all_contexts(&graph, &ctx_cfg);
    let seq_cfg = SequenceConfig {
        max_seq_len: enc.max_seq_len,
    };

    let mut batch = Vec::new();
    let mut golds = Vec::new();
    for t in graph.triples().iter().take(3) {
        batch.push(build_query_sequence(
            &graph,
            &table,
            &vocab,
            t.head,
            t.relation,
            &ctx_cfg,
            &seq_cfg,
            ContextMode::Full,
            None,
        )?);
        golds.push(t.tail);
    }

    let mut params: ModelParameters<f64> =
        init_model(enc, &vocab, graph.entity_count(), seed.wrapping_add(1))?;
    let mut grads = params.zeros_like();
    let (logits, cache) = forward_cached(&params, &batch, None)?;
    let (_, dlogits) = loss_and_dlogits(&logits, &golds)?;
    backward(&params, &cache, &dlogits, &mut grads);

    let analytic: Vec<Vec<f64>> = grads
        .named_tensors()
        .into_iter()
        .map(|(_, v)| v.iter().copied().collect())
        .collect();

    let n_tensors = analytic.len();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        sum_abs_error: 0.0,
        checked: 0,
    };
    for ti in 0..n_tensors {
        let len = analytic[ti].len();
        for j in 0..len {
            let original = {
                let mut views = params.named_tensors_mut();
                let slice = views[ti].1.as_slice_mut().expect("standard layout");
                let orig = slice[j];
                slice[j] = orig + fd_step;
                orig
            };
            let plus = batch_loss(&params, &batch, &golds);
            {
                let mut views = params.named_tensors_mut();
                let slice = views[ti].1.as_slice_mut().expect("standard layout");
                slice[j] = original - fd_step;
            }
            let minus = batch_loss(&params, &batch, &golds);
            {
                let mut views = params.named_tensors_mut();
                let slice = views[ti].1.as_slice_mut().expect("standard layout");
                slice[j] = original;
            }
            let numeric = (plus - minus) / (2.0 * fd_step);
            let a = analytic[ti][j];
            let abs = (a - numeric).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            report.sum_abs_error += abs;
            report.max_rel_error = report.max_rel_error.max(rel_error(a, numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}
