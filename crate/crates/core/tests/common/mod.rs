//! Random graphs and models shared by the property tests.
#![allow(dead_code)]

pub mod gradcheck;

use hoptrace::encoder::Vocabulary;
use hoptrace::graph::{EntityId, GraphBuilder, GraphForm, RelationGraph, RelationText};
use hoptrace::reasoner::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 8] = ["who", "what", "directed", "wrote", "films", "of", "the", "starring"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reversed label graph with up to `max_n` entities.
pub fn random_label_graph(rng: &mut ChaCha8Rng, max_n: usize) -> RelationGraph {
    let n = rng.gen_range(2..=max_n);
    let preds = rng.gen_range(1..=6);
    let edges = rng.gen_range(0..=4 * n);
    let mut b = GraphBuilder::new(GraphForm::Label);
    for i in 0..n {
        b.entity(&format!("e{i}"));
    }
    for p in 0..preds {
        b.predicate(&format!("p{p}"));
    }
    for _ in 0..edges {
        let (h, t, p) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..preds));
        b.add_triple(&format!("e{h}"), &format!("p{p}"), &format!("e{t}"));
    }
    b.finish().add_reverse_relations().unwrap()
}

/// Reversed text (or mixed) graph with up to `max_n` entities.
pub fn random_text_graph(rng: &mut ChaCha8Rng, max_n: usize, form: GraphForm) -> RelationGraph {
    let n = rng.gen_range(2..=max_n);
    let rels = rng.gen_range(0..=3 * n);
    let mut b = GraphBuilder::new(form);
    let ids: Vec<EntityId> = (0..n).map(|i| b.entity(&format!("e{i}"))).collect();
    for _ in 0..rels {
        let (h, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if form == GraphForm::Mixed && rng.gen_bool(0.3) {
            let p = format!("p{}", rng.gen_range(0..3));
            b.add_triple(&format!("e{h}"), &p, &format!("e{t}"));
            b.add_text_relation(ids[h], ids[t], RelationText::predicate(&p));
        } else {
            let w = WORDS[rng.gen_range(0..WORDS.len())];
            let words = vec!["<sub>".to_string(), w.to_string(), "<obj>".to_string()];
            b.add_text_relation(ids[h], ids[t], RelationText::sentence(words));
        }
    }
    b.finish().add_reverse_relations().unwrap()
}

pub fn random_graph(rng: &mut ChaCha8Rng, form: GraphForm, max_n: usize) -> RelationGraph {
    match form {
        GraphForm::Label => random_label_graph(rng, max_n),
        _ => random_text_graph(rng, max_n, form),
    }
}

pub fn vocab() -> Vocabulary {
    let mut v = Vocabulary::new();
    for w in WORDS {
        v.add(w);
    }
    v
}

/// A random model plus a random question (token ids) and topic set.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    config: ModelConfig,
    graph: &RelationGraph,
) -> (Model, Vec<usize>, Vec<EntityId>) {
    let v = vocab();
    let len = rng.gen_range(1..=6);
    let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..v.len())).collect();
    let k = rng.gen_range(1..=2.min(graph.num_entities()));
    let mut topics: Vec<EntityId> = (0..k).map(|_| EntityId(rng.gen_range(0..graph.num_entities()))).collect();
    topics.sort();
    topics.dedup();
    let mut model = Model::new(config, v, graph, rng.gen()).unwrap();
    // Spread the heads so that scores are not all near 0.5.
    let bump: f64 = rng.gen_range(-3.0..3.0);
    if let Some(h) = model.params.relation_head.as_mut() {
        h.bias.fill(bump);
    }
    if let Some(h) = model.params.predicate_head.as_mut() {
        h.bias.data.iter_mut().for_each(|b| *b = rng.gen_range(-3.0..3.0));
    }
    (model, tokens, topics)
}
