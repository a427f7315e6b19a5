//! The reasoning loop: T steps of question attention, relation scoring and
//! score transfer, followed by the hop mixture and (text forms) the language
//! mask. The forward pass records every intermediate so that [`Model::backward`]
//! can run reverse-mode accumulation and so traces can be exported.

mod ops;
mod trace;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, relation_token_ids, EncodedSequence, EncoderParams, RelationEncodingCache, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::{EntityId, GraphForm, RelationGraph, TextId, TextRelationId};
use crate::tensor::{axpy, dot, softmax_backward, Linear, Tensor};
use crate::text::question_words;

pub use ops::{
    apply_divisors, hop_mixture, label_relation_scores, label_relation_scores_backward,
    language_mask, step_attention, step_attention_backward, text_relation_scores, transfer_step,
    transfer_step_backward, truncate, truncation_divisors, Aggregation, RelationHead,
    ScoredRelation, StepQuery, StepRelationScores,
};
pub use trace::{trace_json, trace_dot, TraceExport, ACTIVATION_THRESHOLD};

/// Architecture and reasoning switches. Stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub form: GraphForm,
    /// Number of transfer steps T.
    pub steps: usize,
    /// Hidden dimension d.
    pub dim: usize,
    pub head: RelationHead,
    pub aggregation: Aggregation,
    /// Activation threshold for text-relation selection.
    pub tau: f64,
    /// Maximum number of text relations scored per step.
    pub omega: usize,
    pub use_truncation: bool,
    pub use_mask: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            form: GraphForm::Label,
            steps: 3,
            dim: 64,
            head: RelationHead::Softmax,
            aggregation: Aggregation::Sum,
            tau: 0.7,
            omega: 400,
            use_truncation: true,
            use_mask: true,
        }
    }
}

impl ModelConfig {
    /// The mask only exists for text and mixed graphs.
    pub fn mask_active(&self) -> bool {
        self.use_mask && self.form.uses_text()
    }
}

/// Every trainable array of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub question: EncoderParams,
    pub relation: Option<EncoderParams>,
    pub step_proj: Vec<Linear>,
    pub predicate_head: Option<Linear>,
    pub relation_head: Option<Linear>,
    pub hop_head: Linear,
    pub mask_head: Option<Linear>,
}

impl ModelParams {
    pub fn new(
        config: &ModelConfig,
        vocab_size: usize,
        num_entities: usize,
        num_predicates: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let text = config.form.uses_text();
        let question = EncoderParams::new(vocab_size, d, &mut rng);
        let relation = text.then(|| EncoderParams::new(vocab_size, d, &mut rng));
        let step_proj = (0..config.steps)
            .map(|_| Linear::new(d, d, d, &mut rng))
            .collect();
        let predicate_head = (!text).then(|| Linear::new(num_predicates, d, d, &mut rng));
        let relation_head = text.then(|| Linear::new(1, d, d, &mut rng));
        let hop_head = Linear::new(config.steps, d, d, &mut rng);
        let mask_head = config
            .mask_active()
            .then(|| Linear::new(num_entities, d, d, &mut rng));
        ModelParams {
            question,
            relation,
            step_proj,
            predicate_head,
            relation_head,
            hop_head,
            mask_head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            question: self.question.zeros_like(),
            relation: self.relation.as_ref().map(EncoderParams::zeros_like),
            step_proj: self.step_proj.iter().map(Linear::zeros_like).collect(),
            predicate_head: self.predicate_head.as_ref().map(Linear::zeros_like),
            relation_head: self.relation_head.as_ref().map(Linear::zeros_like),
            hop_head: self.hop_head.zeros_like(),
            mask_head: self.mask_head.as_ref().map(Linear::zeros_like),
        }
    }

    /// Named parameter blocks in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.question.tensors() {
            out.push((format!("question.{name}"), t));
        }
        if let Some(r) = &self.relation {
            for (name, t) in r.tensors() {
                out.push((format!("relation.{name}"), t));
            }
        }
        for (prefix, l) in self.linears() {
            out.push((format!("{prefix}.weight"), &l.weight));
            out.push((format!("{prefix}.bias"), &l.bias));
        }
        out
    }

    fn linears(&self) -> Vec<(String, &Linear)> {
        let mut out = Vec::new();
        for (t, l) in self.step_proj.iter().enumerate() {
            out.push((format!("step{}", t + 1), l));
        }
        if let Some(l) = &self.predicate_head {
            out.push(("predicate_head".into(), l));
        }
        if let Some(l) = &self.relation_head {
            out.push(("relation_head".into(), l));
        }
        out.push(("hop_head".into(), &self.hop_head));
        if let Some(l) = &self.mask_head {
            out.push(("mask_head".into(), l));
        }
        out
    }

    /// Mutable blocks in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.question.tensors_mut() {
            out.push((format!("question.{name}"), t));
        }
        if let Some(r) = &mut self.relation {
            for (name, t) in r.tensors_mut() {
                out.push((format!("relation.{name}"), t));
            }
        }
        let mut linears = Vec::new();
        for (t, l) in self.step_proj.iter_mut().enumerate() {
            linears.push((format!("step{}", t + 1), l));
        }
        if let Some(l) = &mut self.predicate_head {
            linears.push(("predicate_head".into(), l));
        }
        if let Some(l) = &mut self.relation_head {
            linears.push(("relation_head".into(), l));
        }
        linears.push(("hop_head".into(), &mut self.hop_head));
        if let Some(l) = &mut self.mask_head {
            linears.push(("mask_head".into(), l));
        }
        for (prefix, l) in linears {
            out.push((format!("{prefix}.weight"), &mut l.weight));
            out.push((format!("{prefix}.bias"), &mut l.bias));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

/// Decisions the forward pass takes without a gradient: truncation divisors
/// and the text-relation selection. Replaying them makes the forward pass a
/// smooth function of the parameters, which is what finite differences need.
#[derive(Debug, Clone, PartialEq)]
pub struct Decisions {
    pub divisors: Vec<Vec<f64>>,
    pub selections: Vec<Vec<TextRelationId>>,
}

/// One executed reasoning step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub query: StepQuery,
    pub scores: StepRelationScores,
    /// Entity scores before truncation.
    pub raw: Vec<f64>,
    pub divisors: Vec<f64>,
    /// `a^t` after truncation.
    pub entity_scores: Vec<f64>,
}

/// Full record of one forward pass.
#[derive(Debug, Clone)]
pub struct ReasoningTrace {
    pub topics: Vec<EntityId>,
    pub tokens: Vec<usize>,
    pub encoded: EncodedSequence,
    pub initial: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// Hop distribution `c`.
    pub hop: Vec<f64>,
    /// `a*`, the hop-weighted mixture of step scores.
    pub combined: Vec<f64>,
    pub mask: Option<Vec<f64>>,
    /// Final scores: `â*` when the mask is active, otherwise `a*`.
    pub output: Vec<f64>,
}

impl ReasoningTrace {
    pub fn decisions(&self) -> Decisions {
        Decisions {
            divisors: self.steps.iter().map(|s| s.divisors.clone()).collect(),
            selections: self
                .steps
                .iter()
                .map(|s| match &s.scores {
                    StepRelationScores::Label(_) => Vec::new(),
                    StepRelationScores::Text(sel) => sel.iter().map(|r| r.relation).collect(),
                })
                .collect(),
        }
    }
}

/// Gradients with respect to relation encodings, keyed by text.
pub type RelationGrads = BTreeMap<TextId, Vec<f64>>;

/// Ranked answer list.
#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    /// Entities with positive score, by score descending then id ascending.
    pub ranked: Vec<(EntityId, f64)>,
    /// Set when every score is zero.
    pub degenerate: bool,
}

impl Answer {
    pub fn top(&self) -> Option<EntityId> {
        self.ranked.first().map(|&(e, _)| e)
    }
}

pub fn answer(scores: &[f64]) -> Answer {
    let mut ranked: Vec<(EntityId, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0)
        .map(|(i, &s)| (EntityId(i), s))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let degenerate = ranked.is_empty();
    Answer { ranked, degenerate }
}

/// Configuration, vocabulary and parameters of a model bound to one graph's
/// entity and relation-text tables.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    relation_tokens: Vec<Vec<usize>>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, graph: &RelationGraph, seed: u64) -> Result<Self> {
        Self::check_form(&config, graph)?;
        let params = ModelParams::new(
            &config,
            vocab.len(),
            graph.num_entities(),
            graph.num_predicates(),
            seed,
        );
        Ok(Self::from_parts(config, vocab, params, graph))
    }

    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, params: ModelParams, graph: &RelationGraph) -> Self {
        let relation_tokens = relation_token_ids(graph, &vocab);
        Model {
            config,
            vocab,
            params,
            relation_tokens,
        }
    }

    fn check_form(config: &ModelConfig, graph: &RelationGraph) -> Result<()> {
        if config.form != graph.form() {
            return Err(Error::Config(format!(
                "model form {} does not match graph form {}",
                config.form,
                graph.form()
            )));
        }
        if config.steps == 0 || config.dim == 0 {
            return Err(Error::Config("steps and dim must be positive".into()));
        }
        Ok(())
    }

    /// Token ids of a question; the bracketed topic mention becomes `<sub>`.
    pub fn question_tokens(&self, question: &str) -> Vec<usize> {
        self.vocab.encode(&question_words(question))
    }

    pub fn relation_tokens(&self) -> &[Vec<usize>] {
        &self.relation_tokens
    }

    /// Fresh relation-encoding cache for the current parameters (text forms).
    pub fn relation_cache(&self) -> Option<RelationEncodingCache<'_>> {
        self.params
            .relation
            .as_ref()
            .map(|p| RelationEncodingCache::new(p, &self.relation_tokens))
    }

    pub fn forward(
        &self,
        graph: &RelationGraph,
        cache: Option<&RelationEncodingCache<'_>>,
        tokens: &[usize],
        topics: &[EntityId],
        frozen: Option<&Decisions>,
    ) -> Result<ReasoningTrace> {
        let n = graph.num_entities();
        if topics.is_empty() {
            return Err(Error::UnknownEntity("<no topic>".into()));
        }
        if let Some(bad) = topics.iter().find(|e| e.0 >= n) {
            return Err(Error::EntityOutOfRange(bad.0));
        }
        let cfg = &self.config;
        let p = &self.params;
        let encoded = encoder::encode(&p.question, tokens);
        let q = encoded.q.clone();

        let mut initial = vec![0.0; n];
        for t in topics {
            initial[t.0] = 1.0;
        }
        let mut steps: Vec<StepRecord> = Vec::with_capacity(cfg.steps);
        for t in 0..cfg.steps {
            let a_prev = steps.last().map_or(&initial, |s| &s.entity_scores);
            let query = step_attention(&q, &encoded.h, &p.step_proj[t]);
            let scores = if cfg.form.uses_text() {
                let cache = cache.ok_or_else(|| Error::Config("text form needs a relation cache".into()))?;
                let selected: Vec<(TextRelationId, f64)> = match frozen {
                    Some(d) => d.selections[t]
                        .iter()
                        .map(|&r| (r, a_prev[graph.relation(r).head.0]))
                        .collect(),
                    None => graph.select_text_relations(a_prev, cfg.tau, cfg.omega),
                };
                let head = p.relation_head.as_ref().expect("text model has a relation head");
                StepRelationScores::Text(text_relation_scores(
                    &query.query,
                    &selected,
                    |r| cache.vector(graph.relation(r).text),
                    head,
                ))
            } else {
                let head = p.predicate_head.as_ref().expect("label model has a predicate head");
                StepRelationScores::Label(label_relation_scores(&query.query, head, cfg.head))
            };
            let raw = transfer_step(graph, a_prev, &scores, cfg.aggregation);
            let divisors = match frozen {
                Some(d) => d.divisors[t].clone(),
                None => truncation_divisors(&raw, cfg.use_truncation),
            };
            let entity_scores = apply_divisors(&raw, &divisors);
            steps.push(StepRecord {
                query,
                scores,
                raw,
                divisors,
                entity_scores,
            });
        }

        let per_step: Vec<&[f64]> = steps.iter().map(|s| s.entity_scores.as_slice()).collect();
        let (hop, combined) = hop_mixture(&q, &per_step, &p.hop_head);
        let (mask, output) = match (&p.mask_head, cfg.mask_active()) {
            (Some(head), true) => {
                let (m, out) = language_mask(&q, &combined, head);
                (Some(m), out)
            }
            _ => (None, combined.clone()),
        };
        Ok(ReasoningTrace {
            topics: topics.to_vec(),
            tokens: tokens.to_vec(),
            encoded,
            initial,
            steps,
            hop,
            combined,
            mask,
            output,
        })
    }

    /// Reverse-mode pass. `d_output` is the gradient of the loss with respect
    /// to the final scores and `d_hop` the extra gradient on `c` (auxiliary
    /// hop loss). Parameter gradients accumulate into `grads`; gradients for
    /// relation encodings accumulate into `rel_grads` and are pushed through
    /// the relation encoder by [`Model::relation_backward`].
    pub fn backward(
        &self,
        graph: &RelationGraph,
        cache: Option<&RelationEncodingCache<'_>>,
        trace: &ReasoningTrace,
        d_output: &[f64],
        d_hop: &[f64],
        grads: &mut ModelParams,
        rel_grads: &mut RelationGrads,
    ) {
        let cfg = &self.config;
        let p = &self.params;
        let q = &trace.encoded.q;
        let d = q.len();
        let mut dq = vec![0.0; d];
        let mut dh = vec![vec![0.0; d]; trace.encoded.h.len()];

        let d_combined: Vec<f64> = match (&trace.mask, &p.mask_head) {
            (Some(m), Some(head)) => {
                let d_logits: Vec<f64> = (0..m.len())
                    .map(|i| d_output[i] * trace.combined[i] * m[i] * (1.0 - m[i]))
                    .collect();
                head.backward(q, &d_logits, grads.mask_head.as_mut().unwrap(), &mut dq);
                d_output.iter().zip(m).map(|(g, m)| g * m).collect()
            }
            _ => d_output.to_vec(),
        };

        let d_c: Vec<f64> = trace
            .steps
            .iter()
            .zip(d_hop)
            .map(|(s, extra)| dot(&d_combined, &s.entity_scores) + extra)
            .collect();
        let d_c_logits = softmax_backward(&trace.hop, &d_c);
        p.hop_head.backward(q, &d_c_logits, &mut grads.hop_head, &mut dq);

        let mut d_scores_next: Option<Vec<f64>> = None;
        for t in (0..trace.steps.len()).rev() {
            let step = &trace.steps[t];
            let mut g = vec![0.0; d_combined.len()];
            axpy(trace.hop[t], &d_combined, &mut g);
            if let Some(next) = d_scores_next.take() {
                axpy(1.0, &next, &mut g);
            }
            let g_raw: Vec<f64> = g.iter().zip(&step.divisors).map(|(g, z)| g / z).collect();
            let a_prev = if t == 0 {
                &trace.initial
            } else {
                &trace.steps[t - 1].entity_scores
            };
            let (d_prev, d_rel) = transfer_step_backward(graph, a_prev, &step.scores, cfg.aggregation, &g_raw);
            d_scores_next = Some(d_prev);

            let mut d_query = vec![0.0; d];
            match &step.scores {
                StepRelationScores::Label(probs) => {
                    let d_logits = label_relation_scores_backward(probs, &d_rel, cfg.head);
                    let head = p.predicate_head.as_ref().unwrap();
                    head.backward(
                        &step.query.query,
                        &d_logits,
                        grads.predicate_head.as_mut().unwrap(),
                        &mut d_query,
                    );
                }
                StepRelationScores::Text(scored) => {
                    let cache = cache.expect("text form needs a relation cache");
                    let head = p.relation_head.as_ref().unwrap();
                    let head_grad = grads.relation_head.as_mut().unwrap();
                    for (s, &ds) in scored.iter().zip(&d_rel) {
                        if ds == 0.0 {
                            continue;
                        }
                        let text = graph.relation(s.relation).text;
                        let r = cache.vector(text);
                        let u: Vec<f64> = r.iter().zip(&step.query.query).map(|(a, b)| a * b).collect();
                        let d_logit = ds * s.score * (1.0 - s.score);
                        let mut du = vec![0.0; d];
                        head.backward(&u, &[d_logit], head_grad, &mut du);
                        let dr = rel_grads.entry(text).or_insert_with(|| vec![0.0; d]);
                        for k in 0..d {
                            dr[k] += du[k] * step.query.query[k];
                            d_query[k] += du[k] * r[k];
                        }
                    }
                }
            }
            step_attention_backward(
                &step.query,
                q,
                &trace.encoded.h,
                &p.step_proj[t],
                &d_query,
                &mut grads.step_proj[t],
                &mut dq,
                &mut dh,
            );
        }
        encoder::backward(&p.question, &trace.encoded, &dq, &dh, &mut grads.question);
    }

    /// Pushes accumulated relation-encoding gradients through the relation encoder.
    pub fn relation_backward(
        &self,
        cache: &RelationEncodingCache<'_>,
        rel_grads: &RelationGrads,
        grads: &mut ModelParams,
    ) {
        let (Some(params), Some(g)) = (&self.params.relation, grads.relation.as_mut()) else {
            return;
        };
        for (&text, dr) in rel_grads {
            encoder::backward(params, cache.get(text), dr, &[], g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_ties_break_by_id() {
        let a = answer(&[0.1, 0.9, 0.9]);
        assert_eq!(a.top(), Some(EntityId(1)));
        assert_eq!(a.ranked.len(), 3);
        assert_eq!(answer(&[0.0, 1.0, 0.0]).top(), Some(EntityId(1)));
        let z = answer(&[0.0; 3]);
        assert!(z.degenerate && z.top().is_none());
    }
}
