//! Trace export: JSON for inspection tooling, DOT for rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{answer, Model, ReasoningTrace, StepRelationScores};
use crate::graph::{EntityId, PredicateId, RelationGraph};

/// Entities, relations and edges above this score count as activated.
pub const ACTIVATION_THRESHOLD: f64 = 0.8;
const SPARSE_CUTOFF: f64 = 1e-3;
const TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceExport {
    pub question: String,
    pub topic: Vec<String>,
    pub tokens: Vec<String>,
    pub steps: Vec<StepExport>,
    pub hop_distribution: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_top: Option<Vec<EntityScore>>,
    pub answers: Vec<EntityScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepExport {
    pub step: usize,
    pub word_attention: Vec<f64>,
    pub relations: Vec<RelationScore>,
    /// Entities scoring above 1e-3 after this step.
    pub entity_scores: BTreeMap<String, f64>,
}

/// A predicate score (label form) or a selected text relation's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub entity: String,
    pub score: f64,
}

pub fn trace_json(
    model: &Model,
    graph: &RelationGraph,
    question: &str,
    trace: &ReasoningTrace,
) -> TraceExport {
    let name = |i: usize| graph.entity_name(EntityId(i)).to_string();
    let steps = trace
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let relations = match &s.scores {
                StepRelationScores::Label(probs) => probs
                    .iter()
                    .enumerate()
                    .map(|(p, &score)| RelationScore {
                        predicate: Some(graph.predicate_name(PredicateId(p)).to_string()),
                        id: None,
                        text: None,
                        head: None,
                        tail: None,
                        score,
                    })
                    .collect(),
                StepRelationScores::Text(scored) => {
                    let mut out: Vec<RelationScore> = scored
                        .iter()
                        .filter(|r| r.score > SPARSE_CUTOFF)
                        .map(|r| {
                            let rel = graph.relation(r.relation);
                            RelationScore {
                                predicate: None,
                                id: Some(r.relation.0),
                                text: Some(graph.text(rel.text).display()),
                                head: Some(name(rel.head.0)),
                                tail: Some(name(rel.tail.0)),
                                score: r.score,
                            }
                        })
                        .collect();
                    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
                    out
                }
            };
            StepExport {
                step: t + 1,
                word_attention: s.query.attention.clone(),
                relations,
                entity_scores: sparse(&s.entity_scores, &name),
            }
        })
        .collect();

    let mask_top = trace.mask.as_ref().map(|m| {
        let mut active: Vec<(usize, f64)> = trace
            .combined
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > SPARSE_CUTOFF)
            .map(|(i, _)| (i, m[i]))
            .collect();
        active.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        active
            .into_iter()
            .take(TOP_K)
            .map(|(i, score)| EntityScore {
                entity: name(i),
                score,
            })
            .collect()
    });

    let answers = answer(&trace.output)
        .ranked
        .into_iter()
        .take(TOP_K)
        .map(|(e, score)| EntityScore {
            entity: name(e.0),
            score,
        })
        .collect();

    TraceExport {
        question: question.to_string(),
        topic: trace.topics.iter().map(|e| name(e.0)).collect(),
        tokens: trace
            .tokens
            .iter()
            .map(|&t| model.vocab.token(t).to_string())
            .collect(),
        steps,
        hop_distribution: trace.hop.clone(),
        mask_top,
        answers,
    }
}

fn sparse(scores: &[f64], name: &impl Fn(usize) -> String) -> BTreeMap<String, f64> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > SPARSE_CUTOFF)
        .map(|(i, &s)| (name(i), s))
        .collect()
}

/// Graphviz rendering of activated entities and relations (score above
/// [`ACTIVATION_THRESHOLD`]), one edge per step that carried mass.
pub fn trace_dot(graph: &RelationGraph, trace: &ReasoningTrace) -> String {
    let active = |scores: &[f64]| -> BTreeSet<usize> {
        scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > ACTIVATION_THRESHOLD)
            .map(|(i, _)| i)
            .collect()
    };
    let mut nodes: BTreeSet<usize> = trace.topics.iter().map(|e| e.0).collect();
    let mut edges: Vec<(usize, usize, String, f64, usize)> = Vec::new();
    let mut prev = active(&trace.initial);
    for (t, step) in trace.steps.iter().enumerate() {
        let cur = active(&step.entity_scores);
        match &step.scores {
            StepRelationScores::Label(probs) => {
                for (p, &score) in probs.iter().enumerate() {
                    if score <= ACTIVATION_THRESHOLD {
                        continue;
                    }
                    let adj = graph.adjacency(PredicateId(p)).expect("predicate in range");
                    for &i in &prev {
                        for &j in adj.successors(i) {
                            if cur.contains(&j) {
                                let label = graph.predicate_name(PredicateId(p)).to_string();
                                edges.push((i, j, label, score, t + 1));
                            }
                        }
                    }
                }
            }
            StepRelationScores::Text(scored) => {
                for r in scored.iter().filter(|r| r.score > ACTIVATION_THRESHOLD) {
                    let rel = graph.relation(r.relation);
                    if prev.contains(&rel.head.0) && cur.contains(&rel.tail.0) {
                        let label = graph.text(rel.text).display();
                        edges.push((rel.head.0, rel.tail.0, label, r.score, t + 1));
                    }
                }
            }
        }
        nodes.extend(cur.iter().copied());
        prev = cur;
    }
    let answer_top = answer(&trace.output).top().map(|e| e.0);

    let mut s = String::from("digraph trace {\n  rankdir=LR;\n  node [shape=box];\n");
    for i in &nodes {
        let style = if trace.topics.iter().any(|e| e.0 == *i) {
            ", style=bold"
        } else if Some(*i) == answer_top {
            ", style=filled, fillcolor=mistyrose"
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "  n{i} [label=\"{}\", color=red{style}];",
            escape(graph.entity_name(EntityId(*i)))
        );
    }
    for (h, t, label, score, step) in edges {
        let _ = writeln!(
            s,
            "  n{h} -> n{t} [label=\"{} ({score:.2}) @{step}\", color=red];",
            escape(&label)
        );
    }
    s.push_str("}\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
