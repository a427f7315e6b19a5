//! Sparse transfer against a dense n×n reference.

mod common;

use common::{random_instance, random_label_graph, random_text_graph};
use hoptrace::graph::{GraphForm, PredicateId, RelationGraph, TextRelationId};
use hoptrace::reasoner::{transfer_step, Aggregation, ModelConfig, ScoredRelation, StepRelationScores};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scores(rng: &mut ChaCha8Rng, n: usize, sparsity: f64) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.gen_bool(sparsity) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect()
}

fn dense_apply(a: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    (0..n).map(|j| (0..n).map(|i| a[i] * w[i][j]).sum()).collect()
}

fn assert_close(sparse: &[f64], dense: &[f64], tol: f64) {
    assert_eq!(sparse.len(), dense.len());
    for (j, (s, d)) in sparse.iter().zip(dense).enumerate() {
        assert!((s - d).abs() <= tol, "entity {j}: sparse {s} dense {d}");
    }
}

#[test]
fn label_transfer_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let g = random_label_graph(&mut rng, 50);
        let n = g.num_entities();
        let logits: Vec<f64> = (0..g.num_predicates()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        let probs: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let a = random_scores(&mut rng, n, 0.5);

        let mut w = vec![vec![0.0; n]; n];
        for (p, &prob) in probs.iter().enumerate() {
            for (h, t) in g.adjacency(PredicateId(p)).unwrap().edges() {
                w[h][t] += prob;
            }
        }
        let scores = StepRelationScores::Label(probs);
        for agg in [Aggregation::Sum] {
            let sparse = transfer_step(&g, &a, &scores, agg);
            assert_close(&sparse, &dense_apply(&a, &w), 1e-10);
        }
    }
}

#[test]
fn label_max_aggregation_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let g = random_label_graph(&mut rng, 50);
        let n = g.num_entities();
        let probs: Vec<f64> = (0..g.num_predicates()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = random_scores(&mut rng, n, 0.3);
        let mut w = vec![vec![0.0f64; n]; n];
        for (p, &prob) in probs.iter().enumerate() {
            for (h, t) in g.adjacency(PredicateId(p)).unwrap().edges() {
                w[h][t] = w[h][t].max(prob);
            }
        }
        let sparse = transfer_step(&g, &a, &StepRelationScores::Label(probs), Aggregation::Max);
        assert_close(&sparse, &dense_apply(&a, &w), 1e-10);
    }
}

#[test]
fn text_transfer_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let g = random_text_graph(&mut rng, 50, GraphForm::Text);
        let n = g.num_entities();
        let a = random_scores(&mut rng, n, 0.4);
        let rel_scores: Vec<f64> = (0..g.num_text_relations()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let scored: Vec<ScoredRelation> = g
            .select_text_relations(&a, 0.0, usize::MAX)
            .into_iter()
            .map(|(relation, subject_score)| ScoredRelation {
                relation,
                subject_score,
                score: rel_scores[relation.0],
            })
            .collect();
        for (agg, combine) in [
            (Aggregation::Sum, (|x: f64, y: f64| x + y) as fn(f64, f64) -> f64),
            (Aggregation::Max, |x: f64, y: f64| x.max(y)),
        ] {
            let mut w = vec![vec![0.0; n]; n];
            for (r, rel) in g.relations().iter().enumerate() {
                w[rel.head.0][rel.tail.0] = combine(w[rel.head.0][rel.tail.0], rel_scores[r]);
            }
            let sparse = transfer_step(&g, &a, &StepRelationScores::Text(scored.clone()), agg);
            assert_close(&sparse, &dense_apply(&a, &w), 1e-10);
        }
    }
}

/// With τ = 0 and no cap, selection is exactly the set of relations leaving
/// an entity with positive score, each carrying that entity's score.
#[test]
fn unrestricted_selection_is_dense_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let g = random_text_graph(&mut rng, 50, GraphForm::Text);
        let a = random_scores(&mut rng, g.num_entities(), 0.4);
        let selected = g.select_text_relations(&a, 0.0, usize::MAX);
        let mut expected: Vec<(TextRelationId, f64)> = g
            .relations()
            .iter()
            .enumerate()
            .filter(|(_, r)| a[r.head.0] > 0.0)
            .map(|(i, r)| (TextRelationId(i), a[r.head.0]))
            .collect();
        let mut got = selected.clone();
        expected.sort_by_key(|x| x.0);
        got.sort_by_key(|x| x.0);
        assert_eq!(got, expected);
    }
}

/// `W^t` as an explicit matrix from one step's recorded scores.
fn dense_w(g: &RelationGraph, scores: &StepRelationScores) -> Vec<Vec<f64>> {
    let n = g.num_entities();
    let mut w = vec![vec![0.0; n]; n];
    match scores {
        StepRelationScores::Label(probs) => {
            for (p, &prob) in probs.iter().enumerate() {
                for (h, t) in g.adjacency(PredicateId(p)).unwrap().edges() {
                    w[h][t] += prob;
                }
            }
        }
        StepRelationScores::Text(scored) => {
            for s in scored {
                let r = g.relation(s.relation);
                w[r.head.0][r.tail.0] += s.score;
            }
        }
    }
    w
}

/// Whole forward pass (transfer, truncation, hop mixture, mask) recomputed
/// with dense matrices from the recorded relation scores.
#[test]
fn end_to_end_forward_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for trial in 0..100 {
        let form = [GraphForm::Label, GraphForm::Text, GraphForm::Mixed][trial % 3];
        let g = common::random_graph(&mut rng, form, 50);
        let config = ModelConfig {
            form,
            dim: 6,
            tau: 0.0,
            omega: usize::MAX,
            ..ModelConfig::default()
        };
        let (model, tokens, topics) = random_instance(&mut rng, config, &g);
        let cache = model.relation_cache();
        let trace = model.forward(&g, cache.as_ref(), &tokens, &topics, None).unwrap();

        let n = g.num_entities();
        let mut a = vec![0.0; n];
        for t in &topics {
            a[t.0] = 1.0;
        }
        let mut per_step = Vec::new();
        for step in &trace.steps {
            let raw = dense_apply(&a, &dense_w(&g, &step.scores));
            a = raw.iter().map(|&x| if x > 1.0 { 1.0 } else { x }).collect();
            assert_close(&step.entity_scores, &a, 1e-10);
            per_step.push(a.clone());
        }
        let mut combined = vec![0.0; n];
        for (c, s) in trace.hop.iter().zip(&per_step) {
            for (o, x) in combined.iter_mut().zip(s) {
                *o += c * x;
            }
        }
        let expected: Vec<f64> = match &trace.mask {
            Some(m) => combined.iter().zip(m).map(|(a, m)| a * m).collect(),
            None => combined,
        };
        assert_close(&trace.output, &expected, 1e-10);
    }
}
