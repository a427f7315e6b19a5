//! Central finite differences against the analytic backward pass.

use hoptrace::data::{build_vocabulary, QAExample};
use hoptrace::graph::{EntityId, GraphForm, RelationGraph};
use hoptrace::reasoner::{Decisions, Model, ModelConfig, RelationGrads, RelationHead};
use hoptrace::training::{build_target, loss, loss_gradients};

pub const TOL: f64 = 1e-4;
/// Round-off floor of a central difference on an O(1) loss is about machine
/// epsilon over the step; this is that with headroom, times the step.
const ROUND_OFF: f64 = 1e-15;
const AUX: f64 = 0.5;

pub fn label_graph() -> RelationGraph {
    RelationGraph::build_from_triples(&[
        ("a", "r0", "c"),
        ("b", "r0", "c"),
        ("a", "r1", "d"),
        ("c", "r1", "e"),
        ("d", "r0", "e"),
        ("c", "r0", "f"),
        ("e", "r1", "f"),
        ("b", "r1", "a"),
    ])
    .unwrap()
    .add_reverse_relations()
    .unwrap()
}

fn docs() -> Vec<(&'static str, &'static str)> {
    vec![
        ("Ann", "Ann met Cid. Ann praised Dee. Ann wrote to Cid."),
        ("Bob", "Bob met Cid. Bob visited Ann."),
        ("Cid", "Cid praised Eve. Cid met Fay."),
        ("Dee", "Dee met Eve."),
    ]
}

const NAMES: [&str; 6] = ["Ann", "Bob", "Cid", "Dee", "Eve", "Fay"];

pub fn text_graph() -> RelationGraph {
    RelationGraph::build_from_text_corpus(&docs(), &NAMES)
        .unwrap()
        .add_reverse_relations()
        .unwrap()
}

pub fn mixed_graph() -> RelationGraph {
    let triples = [("Ann", "knows", "Dee"), ("Cid", "knows", "Fay"), ("Bob", "likes", "Eve")];
    RelationGraph::build_mixed(&docs(), &NAMES, &triples, 1.0, 3)
        .unwrap()
        .add_reverse_relations()
        .unwrap()
}

pub struct Case {
    pub model: Model,
    pub graph: RelationGraph,
    pub tokens: Vec<usize>,
    pub topics: Vec<EntityId>,
    pub target: Vec<f64>,
    pub hop: Option<usize>,
}

pub fn case(
    graph: RelationGraph,
    config: ModelConfig,
    question: &str,
    topics: &[&str],
    answers: &[&str],
    seed: u64,
) -> Case {
    let ex = QAExample::new(question, answers.iter().map(|s| s.to_string()).collect(), Some(2)).unwrap();
    let vocab = build_vocabulary(std::slice::from_ref(&ex), &graph);
    let mut model = Model::new(config, vocab, &graph, seed).unwrap();
    // Default embeddings (±0.1) leave many encoder gradients near the
    // round-off floor of a 1e-5 central difference; a larger scale keeps the
    // comparison meaningful.
    model.params.question.embedding.scale(10.0);
    if let Some(r) = model.params.relation.as_mut() {
        r.embedding.scale(10.0);
    }
    let tokens = model.question_tokens(question);
    let topics: Vec<EntityId> = topics.iter().map(|t| graph.entity_id(t).unwrap()).collect();
    let answers: Vec<EntityId> = answers.iter().map(|t| graph.entity_id(t).unwrap()).collect();
    let target = build_target(&answers, graph.num_entities()).unwrap();
    Case {
        model,
        graph,
        tokens,
        topics,
        target,
        hop: ex.hop,
    }
}

fn objective(c: &Case, model: &Model, frozen: &Decisions) -> f64 {
    let cache = model.relation_cache();
    let tr = model
        .forward(&c.graph, cache.as_ref(), &c.tokens, &c.topics, Some(frozen))
        .unwrap();
    loss(&tr.output, &c.target, &tr.hop, c.hop, AUX).unwrap().total
}

#[derive(Debug, Clone, Copy)]
pub struct CheckSummary {
    pub checked: usize,
    pub truncated: bool,
    pub worst_relative: f64,
    pub worst_absolute: f64,
}

/// Checks every parameter coordinate at steps 1e-5 and 1e-4. A coordinate
/// passes on relative error, or when analytic and numeric values differ by
/// less than the round-off floor of the step.
pub fn check(c: &Case) -> Result<CheckSummary, String> {
    let out = check_with(c, 1e-5)?;
    check_with(c, 1e-4)?;
    Ok(out)
}

fn check_with(c: &Case, eps: f64) -> Result<CheckSummary, String> {
    let floor = ROUND_OFF / eps;
    let cache = c.model.relation_cache();
    let trace = c
        .model
        .forward(&c.graph, cache.as_ref(), &c.tokens, &c.topics, None)
        .unwrap();
    let frozen = trace.decisions();
    let truncated = frozen.divisors.iter().flatten().any(|&z| z > 1.0);
    let (d_out, d_hop) = loss_gradients(&trace.output, &c.target, &trace.hop, c.hop, AUX);
    let mut grads = c.model.params.zeros_like();
    let mut rel = RelationGrads::new();
    c.model
        .backward(&c.graph, cache.as_ref(), &trace, &d_out, &d_hop, &mut grads, &mut rel);
    if let Some(cache) = &cache {
        c.model.relation_backward(cache, &rel, &mut grads);
    }

    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data.clone()))
        .collect();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    for (block, (name, g)) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let mut plus = c.model.clone();
            plus.params.tensors_mut()[block].1.data[i] += eps;
            let mut minus = c.model.clone();
            minus.params.tensors_mut()[block].1.data[i] -= eps;
            let num = (objective(c, &plus, &frozen) - objective(c, &minus, &frozen)) / (2.0 * eps);
            if num.abs() + g[i].abs() < 1e-8 {
                continue;
            }
            let rel_err = (num - g[i]).abs() / num.abs().max(g[i].abs());
            if rel_err > TOL && (num - g[i]).abs() > floor {
                return Err(format!(
                    "{name}[{i}] at step {eps:e}: analytic {} numeric {num} (relative error {rel_err:e})",
                    g[i]
                ));
            }
            worst = worst.max(rel_err);
            worst_abs = worst_abs.max((num - g[i]).abs());
            checked += 1;
        }
    }
    Ok(CheckSummary {
        checked,
        truncated,
        worst_relative: worst,
        worst_absolute: worst_abs,
    })
}

pub fn config(form: GraphForm) -> ModelConfig {
    ModelConfig {
        form,
        steps: 2,
        dim: 4,
        tau: 0.5,
        ..ModelConfig::default()
    }
}

/// A named instance with the truncation branch it is meant to exercise
/// (`None` when either is fine).
pub struct Named {
    pub name: &'static str,
    pub case: Case,
    pub expect_truncated: Option<bool>,
    pub min_checked: usize,
}

pub fn standard_cases() -> Vec<Named> {
    let mut out = Vec::new();

    let c = case(label_graph(), config(GraphForm::Label), "what follows [a]", &["a", "b"], &["e", "f"], 1);
    out.push(Named { name: "label softmax", case: c, expect_truncated: Some(false), min_checked: 100 });

    let mut cfg = config(GraphForm::Label);
    cfg.head = RelationHead::Sigmoid;
    let mut c = case(label_graph(), cfg, "what follows [a]", &["a", "b"], &["c", "e"], 2);
    c.model.params.predicate_head.as_mut().unwrap().bias.fill(3.0);
    out.push(Named { name: "label sigmoid truncated", case: c, expect_truncated: Some(true), min_checked: 100 });

    let mut cfg = config(GraphForm::Label);
    cfg.head = RelationHead::Sigmoid;
    cfg.use_truncation = false;
    let mut c = case(label_graph(), cfg, "what follows [a]", &["a", "b"], &["c"], 3);
    c.model.params.predicate_head.as_mut().unwrap().bias.fill(2.0);
    out.push(Named { name: "label without truncation", case: c, expect_truncated: Some(false), min_checked: 100 });

    let mut c = case(text_graph(), config(GraphForm::Text), "who did [Ann] meet", &["Ann", "Bob"], &["Cid", "Eve"], 4);
    c.model.params.relation_head.as_mut().unwrap().bias.fill(3.0);
    out.push(Named { name: "text mask truncated", case: c, expect_truncated: Some(true), min_checked: 200 });

    let mut c = case(text_graph(), config(GraphForm::Text), "who did [Ann] meet", &["Ann"], &["Cid"], 5);
    c.model.params.relation_head.as_mut().unwrap().bias.fill(-3.0);
    out.push(Named { name: "text mask untruncated", case: c, expect_truncated: Some(false), min_checked: 200 });

    let mut cfg = config(GraphForm::Text);
    cfg.use_mask = false;
    let c = case(text_graph(), cfg, "who praised [Cid]", &["Cid"], &["Ann"], 6);
    out.push(Named { name: "text without mask", case: c, expect_truncated: None, min_checked: 200 });

    let mut c = case(mixed_graph(), config(GraphForm::Mixed), "who knows the friend of [Ann]", &["Ann", "Bob"], &["Dee", "Fay"], 7);
    c.model.params.relation_head.as_mut().unwrap().bias.fill(2.0);
    out.push(Named { name: "mixed truncated", case: c, expect_truncated: Some(true), min_checked: 200 });

    out
}

/// Runs one named case and checks its coverage expectations.
pub fn run_named(n: &Named) -> Result<CheckSummary, String> {
    let s = check(&n.case)?;
    if s.checked < n.min_checked {
        return Err(format!("{}: only {} coordinates checked", n.name, s.checked));
    }
    if let Some(t) = n.expect_truncated {
        if s.truncated != t {
            return Err(format!("{}: truncation active = {}, expected {t}", n.name, s.truncated));
        }
    }
    Ok(s)
}
