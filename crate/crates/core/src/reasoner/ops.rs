//! Building blocks of one reasoning pass, each with its backward rule.

use serde::{Deserialize, Serialize};

use crate::graph::{self, PredicateId, RelationGraph, TextRelationId};
use crate::tensor::{axpy, dot, sigmoid, softmax, softmax_backward, Linear};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RelationHead {
    /// Predicates are mutually exclusive at each step.
    #[default]
    Softmax,
    /// Several predicates may fire at once.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// `W_ij` is the sum of the scores of all relations between i and j.
    #[default]
    Sum,
    /// `W_ij` is the largest such score.
    Max,
}

/// Attention of one step over the question tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct StepQuery {
    /// Word attention `b^t`, sums to one.
    pub attention: Vec<f64>,
    /// Query `q^t`, the attention-weighted sum of token states.
    pub query: Vec<f64>,
    /// Query key `qk^t = tanh(W q + b)`.
    pub key: Vec<f64>,
}

pub fn step_attention(q: &[f64], hidden: &[Vec<f64>], proj: &Linear) -> StepQuery {
    let key: Vec<f64> = proj.forward(q).into_iter().map(f64::tanh).collect();
    let logits: Vec<f64> = hidden.iter().map(|h| dot(&key, h)).collect();
    let attention = softmax(&logits);
    let mut query = vec![0.0; q.len()];
    for (b, h) in attention.iter().zip(hidden) {
        axpy(*b, h, &mut query);
    }
    StepQuery {
        attention,
        query,
        key,
    }
}

/// Back-propagates `d_query` through the attention of one step.
pub fn step_attention_backward(
    sq: &StepQuery,
    q: &[f64],
    hidden: &[Vec<f64>],
    proj: &Linear,
    d_query: &[f64],
    proj_grad: &mut Linear,
    dq: &mut [f64],
    dh: &mut [Vec<f64>],
) {
    let d_att: Vec<f64> = hidden.iter().map(|h| dot(d_query, h)).collect();
    let d_logits = softmax_backward(&sq.attention, &d_att);
    let mut d_key = vec![0.0; sq.key.len()];
    for (i, h) in hidden.iter().enumerate() {
        axpy(sq.attention[i], d_query, &mut dh[i]);
        axpy(d_logits[i], &sq.key, &mut dh[i]);
        axpy(d_logits[i], h, &mut d_key);
    }
    let d_pre: Vec<f64> = d_key
        .iter()
        .zip(&sq.key)
        .map(|(g, k)| g * (1.0 - k * k))
        .collect();
    proj.backward(q, &d_pre, proj_grad, dq);
}

/// Predicate distribution `p^t` for the label form.
pub fn label_relation_scores(query: &[f64], head: &Linear, kind: RelationHead) -> Vec<f64> {
    let logits = head.forward(query);
    match kind {
        RelationHead::Softmax => softmax(&logits),
        RelationHead::Sigmoid => logits.into_iter().map(sigmoid).collect(),
    }
}

pub fn label_relation_scores_backward(probs: &[f64], d_probs: &[f64], kind: RelationHead) -> Vec<f64> {
    match kind {
        RelationHead::Softmax => softmax_backward(probs, d_probs),
        RelationHead::Sigmoid => probs
            .iter()
            .zip(d_probs)
            .map(|(p, g)| g * p * (1.0 - p))
            .collect(),
    }
}

/// A selected text relation and its score at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRelation {
    pub relation: TextRelationId,
    pub subject_score: f64,
    pub score: f64,
}

/// `sigmoid(head(r ⊙ q^t))` for every selected relation.
pub fn text_relation_scores<'e>(
    query: &[f64],
    selected: &[(TextRelationId, f64)],
    encoding: impl Fn(TextRelationId) -> &'e [f64],
    head: &Linear,
) -> Vec<ScoredRelation> {
    selected
        .iter()
        .map(|&(relation, subject_score)| {
            let r = encoding(relation);
            let u: Vec<f64> = r.iter().zip(query).map(|(a, b)| a * b).collect();
            ScoredRelation {
                relation,
                subject_score,
                score: sigmoid(head.forward(&u)[0]),
            }
        })
        .collect()
}

/// Relation scores for one step, in whichever form the graph uses.
#[derive(Debug, Clone, PartialEq)]
pub enum StepRelationScores {
    Label(Vec<f64>),
    Text(Vec<ScoredRelation>),
}

/// One weighted edge of the implicit `W^t`; `source` indexes the score that
/// produced it (a predicate, or a position in the selected-relation list).
#[derive(Debug, Clone, Copy)]
struct WeightedEdge {
    head: usize,
    tail: usize,
    weight: f64,
    source: usize,
}

/// Edges of `W^t` after aggregation, optionally only those leaving entities
/// with non-zero score. For `Sum` every edge contributes; for `Max` only the
/// best per pair.
fn active_edges(
    graph: &RelationGraph,
    a_prev: &[f64],
    scores: &StepRelationScores,
    aggregation: Aggregation,
    skip_inactive: bool,
) -> Vec<WeightedEdge> {
    let mut edges = Vec::new();
    match scores {
        StepRelationScores::Label(probs) => {
            for (p, &w) in probs.iter().enumerate() {
                let adj = graph.adjacency(PredicateId(p)).expect("predicate in range");
                for (i, &ai) in a_prev.iter().enumerate() {
                    if skip_inactive && ai == 0.0 {
                        continue;
                    }
                    for &j in adj.successors(i) {
                        edges.push(WeightedEdge {
                            head: i,
                            tail: j,
                            weight: w,
                            source: p,
                        });
                    }
                }
            }
        }
        StepRelationScores::Text(scored) => {
            for (k, s) in scored.iter().enumerate() {
                let r = graph.relation(s.relation);
                if skip_inactive && a_prev[r.head.0] == 0.0 {
                    continue;
                }
                edges.push(WeightedEdge {
                    head: r.head.0,
                    tail: r.tail.0,
                    weight: s.score,
                    source: k,
                });
            }
        }
    }
    if aggregation == Aggregation::Max {
        edges.sort_by(|x, y| {
            (x.head, x.tail)
                .cmp(&(y.head, y.tail))
                .then(y.weight.total_cmp(&x.weight))
                .then(x.source.cmp(&y.source))
        });
        edges.dedup_by(|later, first| later.head == first.head && later.tail == first.tail);
    }
    edges
}

/// `a^t = a^{t-1} W^t` without materialising `W^t`; no truncation.
pub fn transfer_step(
    graph: &RelationGraph,
    a_prev: &[f64],
    scores: &StepRelationScores,
    aggregation: Aggregation,
) -> Vec<f64> {
    let mut out = vec![0.0; a_prev.len()];
    match (scores, aggregation) {
        (StepRelationScores::Label(probs), Aggregation::Sum) => {
            for (p, &w) in probs.iter().enumerate() {
                let adj = graph.adjacency(PredicateId(p)).expect("predicate in range");
                graph::matvec_acc(adj, a_prev, w, &mut out);
            }
        }
        _ => {
            for e in active_edges(graph, a_prev, scores, aggregation, true) {
                out[e.tail] += a_prev[e.head] * e.weight;
            }
        }
    }
    out
}

/// Gradients of a transfer step: `(d a_prev, d scores)` where the score
/// gradient is per predicate (label) or per selected relation (text).
pub fn transfer_step_backward(
    graph: &RelationGraph,
    a_prev: &[f64],
    scores: &StepRelationScores,
    aggregation: Aggregation,
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut d_prev = vec![0.0; a_prev.len()];
    match (scores, aggregation) {
        (StepRelationScores::Label(probs), Aggregation::Sum) => {
            let mut d_scores = vec![0.0; probs.len()];
            for (p, &w) in probs.iter().enumerate() {
                let adj = graph.adjacency(PredicateId(p)).expect("predicate in range");
                graph::matvec_t_acc(adj, grad, w, &mut d_prev);
                d_scores[p] = graph::bilinear(adj, a_prev, grad);
            }
            (d_prev, d_scores)
        }
        _ => {
            let len = match scores {
                StepRelationScores::Label(p) => p.len(),
                StepRelationScores::Text(s) => s.len(),
            };
            let mut d_scores = vec![0.0; len];
            for e in active_edges(graph, a_prev, scores, aggregation, false) {
                d_prev[e.head] += e.weight * grad[e.tail];
                d_scores[e.source] += a_prev[e.head] * grad[e.tail];
            }
            (d_prev, d_scores)
        }
    }
}

/// Divisors `z(a) = a` when `a > 1`, else 1. Disabled truncation uses 1 everywhere.
pub fn truncation_divisors(raw: &[f64], enabled: bool) -> Vec<f64> {
    raw.iter()
        .map(|&a| if enabled && a > 1.0 { a } else { 1.0 })
        .collect()
}

/// `Trunc(a) = a / z(a)`, with `z` treated as a constant when differentiating.
pub fn truncate(raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let z = truncation_divisors(raw, true);
    (apply_divisors(raw, &z), z)
}

pub fn apply_divisors(raw: &[f64], z: &[f64]) -> Vec<f64> {
    raw.iter().zip(z).map(|(a, z)| a / z).collect()
}

/// `c = softmax(head(q))`, `a* = Σ_t c_t a^t`.
pub fn hop_mixture(q: &[f64], step_scores: &[&[f64]], head: &Linear) -> (Vec<f64>, Vec<f64>) {
    let c = softmax(&head.forward(q));
    let n = step_scores.first().map_or(0, |a| a.len());
    let mut combined = vec![0.0; n];
    for (ct, a) in c.iter().zip(step_scores) {
        axpy(*ct, a, &mut combined);
    }
    (c, combined)
}

/// `m = sigmoid(head(q))`, `â* = m ⊙ a*`.
pub fn language_mask(q: &[f64], combined: &[f64], head: &Linear) -> (Vec<f64>, Vec<f64>) {
    let m: Vec<f64> = head.forward(q).into_iter().map(sigmoid).collect();
    let masked = m.iter().zip(combined).map(|(m, a)| m * a).collect();
    (m, masked)
}
