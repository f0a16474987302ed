//! Ranking evaluation: MRR and Hits@k under raw or filtered protocols, with
//! explicit tie policies, a frequency baseline, and the single-channel
//! ablation harness.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::context::{precompute_with_extra, ContextConfig, ContextMode, ContextTable};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, ResolvedTriple, Splits, Triple};
use crate::model::{forward, train, ModelParameters, TrainConfig, TrainLog};
use crate::sequence::{
    assemble_sequence, build_query_sequence, SequenceConfig, TokenVocabulary, UNK,
};

/// How ties against the gold score are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    Optimistic,
    Pessimistic,
    Mean,
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Mean
    }
}

impl std::str::FromStr for RankPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimistic" => Ok(RankPolicy::Optimistic),
            "pessimistic" => Ok(RankPolicy::Pessimistic),
            "mean" => Ok(RankPolicy::Mean),
            other => Err(Error::InvalidConfig(format!(
                "unknown rank policy `{other}` (expected optimistic|pessimistic|mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub filtered: bool,
    pub rank_policy: RankPolicy,
    pub hits_ks: Vec<usize>,
    pub context_mode: ContextMode,
    pub include_validation_in_context: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            filtered: true,
            rank_policy: RankPolicy::Mean,
            hits_ks: vec![1, 3, 10],
            context_mode: ContextMode::Full,
            include_validation_in_context: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hits_ks.is_empty() || self.hits_ks.iter().any(|&k| k < 1) {
            return Err(Error::InvalidConfig(
                "hits_ks must be non-empty with every k >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Rank of the gold entity among all non-filtered candidates. Under the
/// `mean` policy ranks are real-valued (midpoint of the tie block).
pub fn rank_of(
    scores: &[f64],
    gold: EntityId,
    filter_out: &HashSet<EntityId>,
    policy: RankPolicy,
) -> Result<f64> {
    if filter_out.contains(&gold) {
        return Err(Error::GoldFiltered);
    }
    let gold_score = *scores
        .get(gold.index())
        .ok_or(Error::InvalidEntityId(gold.0, scores.len()))?;
    if !gold_score.is_finite() {
        return Err(Error::NonFiniteScore);
    }
    let mut greater = 0usize;
    let mut ties = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if i == gold.index() || filter_out.contains(&EntityId(i as u32)) {
            continue;
        }
        if !s.is_finite() {
            return Err(Error::NonFiniteScore);
        }
        if s > gold_score {
            greater += 1;
        } else if s == gold_score {
            ties += 1;
        }
    }
    let optimistic = (1 + greater) as f64;
    let pessimistic = (1 + greater + ties) as f64;
    Ok(match policy {
        RankPolicy::Optimistic => optimistic,
        RankPolicy::Pessimistic => pessimistic,
        RankPolicy::Mean => (optimistic + pessimistic) / 2.0,
    })
}

/// Known tails per (head, relation) across a set of triple collections;
/// drives the filtered protocol.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(u32, u32), Vec<u32>>,
}

impl FilterIndex {
    pub fn build<'a>(collections: impl IntoIterator<Item = &'a [Triple]>) -> Self {
        let mut tails: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for coll in collections {
            for t in coll {
                tails
                    .entry((t.head.0, t.relation.0))
                    .or_default()
                    .push(t.tail.0);
            }
        }
        Self { tails }
    }

    /// Entities to remove from the candidate list for a query, gold kept.
    pub fn filter_set(&self, h: EntityId, r: RelationId, gold: EntityId) -> HashSet<EntityId> {
        match self.tails.get(&(h.0, r.0)) {
            None => HashSet::new(),
            Some(ts) => ts
                .iter()
                .copied()
                .map(EntityId)
                .filter(|&t| t != gold)
                .collect(),
        }
    }
}

/// Metrics over a separately-scored bucket (queries with unseen components).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenBucket {
    pub n_examples: usize,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub n_examples: usize,
    pub ranks: Vec<f64>,
    /// Test queries with an unseen head or relation, scored via UNK.
    pub unseen: Option<UnseenBucket>,
    /// Test triples whose gold tail is outside the training entity set;
    /// counted, never silently dropped.
    pub n_unrankable: usize,
    pub filtered: bool,
    pub rank_policy: RankPolicy,
    pub context_mode: ContextMode,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl EvalReport {
    pub fn from_ranks(
        ranks: Vec<f64>,
        ks: &[usize],
        filtered: bool,
        policy: RankPolicy,
        mode: ContextMode,
    ) -> Self {
        let (mrr, hits) = summarize_ranks(&ranks, ks);
        Self {
            mrr,
            hits,
            n_examples: ranks.len(),
            ranks,
            unseen: None,
            n_unrankable: 0,
            filtered,
            rank_policy: policy,
            context_mode: mode,
        }
    }

    /// JSON document with metric values rounded to six decimal places and
    /// the protocol echoed.
    pub fn to_json(&self) -> serde_json::Value {
        let hits: serde_json::Map<String, serde_json::Value> = self
            .hits
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::json!(round6(*v))))
            .collect();
        let mut doc = serde_json::json!({
            "mrr": round6(self.mrr),
            "hits": hits,
            "n_examples": self.n_examples,
            "n_unrankable": self.n_unrankable,
            "filtered": self.filtered,
            "rank_policy": self.rank_policy,
            "context_mode": self.context_mode.to_string(),
        });
        if let Some(u) = &self.unseen {
            let uh: serde_json::Map<String, serde_json::Value> = u
                .hits
                .iter()
                .map(|(k, v)| (k.to_string(), serde_json::json!(round6(*v))))
                .collect();
            doc["unseen"] = serde_json::json!({
                "n_examples": u.n_examples,
                "mrr": round6(u.mrr),
                "hits": uh,
            });
        }
        doc
    }

    pub fn tsv_header(&self) -> String {
        let ks: Vec<String> = self.hits.keys().map(|k| format!("hits@{k}")).collect();
        format!("label\tprotocol\tcontext_mode\tn\tmrr\t{}", ks.join("\t"))
    }

    pub fn tsv_row(&self, label: &str) -> String {
        let proto = if self.filtered { "filtered" } else { "raw" };
        let vals: Vec<String> = self
            .hits
            .values()
            .map(|v| format!("{:.6}", round6(*v)))
            .collect();
        format!(
            "{label}\t{proto}\t{}\t{}\t{:.6}\t{}",
            self.context_mode,
            self.n_examples,
            round6(self.mrr),
            vals.join("\t")
        )
    }
}

/// MRR and Hits@k over a rank list (Hits counts ranks <= k).
pub fn summarize_ranks(ranks: &[f64], ks: &[usize]) -> (f64, BTreeMap<usize, f64>) {
    let n = ranks.len() as f64;
    let mrr = if ranks.is_empty() {
        0.0
    } else {
        ranks.iter().map(|&r| 1.0 / r).sum::<f64>() / n
    };
    let hits = ks
        .iter()
        .map(|&k| {
            let h = if ranks.is_empty() {
                0.0
            } else {
                ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / n
            };
            (k, h)
        })
        .collect();
    (mrr, hits)
}

/// Ranks every triple under a scorer. The scorer returns one score per
/// entity (higher is better).
pub fn evaluate_scorer<F>(
    scorer: F,
    triples: &[Triple],
    filter: Option<&FilterIndex>,
    cfg: &EvalConfig,
) -> Result<EvalReport>
where
    F: Fn(EntityId, RelationId) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut ranks = Vec::with_capacity(triples.len());
    let empty = HashSet::new();
    for t in triples {
        let scores = scorer(t.head, t.relation)?;
        let filter_set = match (cfg.filtered, filter) {
            (true, Some(f)) => f.filter_set(t.head, t.relation, t.tail),
            _ => empty.clone(),
        };
        ranks.push(rank_of(&scores, t.tail, &filter_set, cfg.rank_policy)?);
    }
    Ok(EvalReport::from_ranks(
        ranks,
        &cfg.hits_ks,
        cfg.filtered && filter.is_some(),
        cfg.rank_policy,
        cfg.context_mode,
    ))
}

/// Scorer backed by model logits for (h, r) queries built through the
/// standard context + sequence pipeline.
#[allow(clippy::too_many_arguments)]
pub fn model_scorer<'a>(
    params: &'a ModelParameters<f32>,
    graph: &'a KnowledgeGraph,
    table: &'a ContextTable,
    vocab: &'a TokenVocabulary,
    ctx_cfg: &'a ContextConfig,
    seq_cfg: &'a SequenceConfig,
    mode: ContextMode,
) -> impl Fn(EntityId, RelationId) -> Result<Vec<f64>> + 'a {
    move |h, r| {
        let seq = build_query_sequence(graph, table, vocab, h, r, ctx_cfg, seq_cfg, mode, None)?;
        let logits = forward(params, std::slice::from_ref(&seq))?;
        Ok(logits.row(0).iter().map(|&x| x as f64).collect())
    }
}

/// Full evaluation protocol over dataset splits: contexts from the training
/// split (plus validation when configured), filtering against all known
/// triples, unseen test components scored via UNK and reported separately.
pub fn evaluate(
    params: &ModelParameters<f32>,
    splits: &Splits,
    vocab: &TokenVocabulary,
    ctx_cfg: &ContextConfig,
    seq_cfg: &SequenceConfig,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let graph = &splits.train;
    let resolved_valid: Vec<Triple> = splits
        .valid
        .iter()
        .filter_map(|r| match graph.resolve(r) {
            ResolvedTriple::Known(t) => Some(t),
            _ => None,
        })
        .collect();

    let extra: &[Triple] = if cfg.include_validation_in_context {
        &resolved_valid
    } else {
        &[]
    };
    let table = precompute_with_extra(graph, extra, ctx_cfg);

    // Partition the test split.
    let mut main = Vec::new();
    let mut unseen = Vec::new(); // (head id?, relation id?, gold tail)
    let mut n_unrankable = 0usize;
    for raw in &splits.test {
        match graph.resolve(raw) {
            ResolvedTriple::Known(t) => main.push(t),
            ResolvedTriple::Partial { tail: None, .. } => n_unrankable += 1,
            ResolvedTriple::Partial {
                head,
                relation,
                tail: Some(gold),
            } => unseen.push((head, relation, gold)),
        }
    }

    let resolved_test: Vec<Triple> = main.clone();
    let filter = FilterIndex::build([
        graph.triples(),
        resolved_valid.as_slice(),
        resolved_test.as_slice(),
    ]);

    let scorer = model_scorer(params, graph, &table, vocab, ctx_cfg, seq_cfg, cfg.context_mode);
    let mut report = evaluate_scorer(&scorer, &main, Some(&filter), cfg)?;
    report.n_unrankable = n_unrankable;

    // UNK bucket: queries still answered, metrics kept separate. No
    // filtering applies; an unseen (h, r) pair has no known tails by
    // construction.
    if !unseen.is_empty() {
        let empty = HashSet::new();
        let mut ranks = Vec::with_capacity(unseen.len());
        for (h, r, gold) in &unseen {
            let h_token = match h {
                Some(h) => vocab.entity_token(*h)?,
                None => UNK,
            };
            let (r_token, rc_tokens) = match r {
                Some(r) => {
                    let rc = table.relation_context(*r);
                    let toks: Vec<u32> = rc
                        .entities
                        .iter()
                        .map(|&e| vocab.entity_token(e))
                        .collect::<Result<_>>()?;
                    let toks = match cfg.context_mode {
                        ContextMode::HeadOnly => Vec::new(),
                        _ => toks,
                    };
                    (vocab.relation_token(*r)?, toks)
                }
                None => (UNK, Vec::new()),
            };
            let (hcr_tokens, hce_tokens) = match h {
                Some(h) if cfg.context_mode != ContextMode::RelationOnly => {
                    let hc = table.head_context(*h);
                    let rels: Vec<u32> = hc
                        .relations
                        .iter()
                        .map(|&r| vocab.relation_token(r))
                        .collect::<Result<_>>()?;
                    let ents: Vec<u32> = hc
                        .entities
                        .iter()
                        .map(|&e| vocab.entity_token(e))
                        .collect::<Result<_>>()?;
                    (rels, ents)
                }
                _ => (Vec::new(), Vec::new()),
            };
            let seq = assemble_sequence(h_token, r_token, &hcr_tokens, &hce_tokens, &rc_tokens, seq_cfg)?;
            let logits = forward(params, std::slice::from_ref(&seq))?;
            let scores: Vec<f64> = logits.row(0).iter().map(|&x| x as f64).collect();
            ranks.push(rank_of(&scores, *gold, &empty, cfg.rank_policy)?);
        }
        let (mrr, hits) = summarize_ranks(&ranks, &cfg.hits_ks);
        report.unseen = Some(UnseenBucket {
            n_examples: ranks.len(),
            mrr,
            hits,
        });
    }
    Ok(report)
}

/// Tail-frequency baseline: score(e | h, r) is the number of training
/// triples (·, r, e). Ignores the head entirely.
#[derive(Debug, Clone)]
pub struct FrequencyBaseline {
    counts: Vec<Vec<f64>>,
    entity_count: usize,
}

pub fn frequency_baseline(graph: &KnowledgeGraph) -> FrequencyBaseline {
    let mut counts = vec![vec![0.0; graph.entity_count()]; graph.relation_count()];
    for t in graph.triples() {
        counts[t.relation.index()][t.tail.index()] += 1.0;
    }
    FrequencyBaseline {
        counts,
        entity_count: graph.entity_count(),
    }
}

impl FrequencyBaseline {
    pub fn scores(&self, _h: EntityId, r: RelationId) -> Vec<f64> {
        match self.counts.get(r.index()) {
            Some(c) => c.clone(),
            None => vec![0.0; self.entity_count],
        }
    }

    pub fn scorer(&self) -> impl Fn(EntityId, RelationId) -> Result<Vec<f64>> + '_ {
        move |h, r| Ok(self.scores(h, r))
    }
}

/// Result of one ablation arm.
pub struct ModeOutcome {
    pub report: EvalReport,
    pub log: TrainLog,
    pub params: ModelParameters<f32>,
}

/// Trains and evaluates one model per context mode with identical seeds and
/// configs; only the context channel wiring differs.
#[allow(clippy::too_many_arguments)]
pub fn ablation_run(
    graph: &KnowledgeGraph,
    table: &ContextTable,
    vocab: &TokenVocabulary,
    ctx_cfg: &ContextConfig,
    seq_cfg: &SequenceConfig,
    enc: &crate::model::EncoderConfig,
    tc: &TrainConfig,
    eval_cfg: &EvalConfig,
    eval_triples: &[Triple],
    filter: Option<&FilterIndex>,
) -> Result<BTreeMap<ContextMode, ModeOutcome>> {
    let mut out = BTreeMap::new();
    for mode in [ContextMode::Full, ContextMode::HeadOnly, ContextMode::RelationOnly] {
        let tc_mode = TrainConfig {
            context_mode: mode,
            ..*tc
        };
        let (params, log) = train(graph, table, vocab, ctx_cfg, seq_cfg, enc, &tc_mode)?;
        let mode_eval = EvalConfig {
            context_mode: mode,
            ..eval_cfg.clone()
        };
        let report = {
            let scorer = model_scorer(&params, graph, table, vocab, ctx_cfg, seq_cfg, mode);
            evaluate_scorer(&scorer, eval_triples, filter, &mode_eval)?
        };
        out.insert(mode, ModeOutcome { report, log, params });
    }
    Ok(out)
}
