//! Generated questions checked against graph traversal, independently of the
//! generator's own bookkeeping: each question is parsed back into a predicate
//! path from the public templates and its gold set recomputed by BFS.

use std::collections::{BTreeSet, HashMap};

use hoptrace::data::{generate_synthetic, path_answers, QAExample, SyntheticDataset, SyntheticSpec, PREDICATES, WRAPPERS};
use hoptrace::graph::{EntityId, PredicateId, RelationGraph};

/// Every predicate path (names, outermost last) that renders `phrase`.
fn parse_phrase(phrase: &str) -> Vec<(String, Vec<String>)> {
    if let Some(topic) = phrase.strip_prefix('[').and_then(|p| p.strip_suffix(']')) {
        if !topic.contains('[') {
            return vec![(topic.to_string(), Vec::new())];
        }
    }
    let mut out = Vec::new();
    for p in &PREDICATES {
        for (templates, suffix) in [(&p.forward, ""), (&p.reverse, "_rev")] {
            for t in templates {
                let (pre, post) = t.split_once("{}").unwrap();
                if let Some(inner) = phrase.strip_prefix(pre).and_then(|r| r.strip_suffix(post)) {
                    for (topic, mut path) in parse_phrase(inner) {
                        path.push(format!("{}{suffix}", p.name));
                        out.push((topic, path));
                    }
                }
            }
        }
    }
    out
}

fn parse_question(q: &str) -> Vec<(String, Vec<String>)> {
    WRAPPERS
        .iter()
        .filter_map(|w| {
            let (pre, post) = w.split_once("{}").unwrap();
            q.strip_prefix(pre).and_then(|r| r.strip_suffix(post))
        })
        .flat_map(parse_phrase)
        .collect()
}

fn dataset() -> SyntheticDataset {
    generate_synthetic(&SyntheticSpec::default()).unwrap()
}

fn all_questions(d: &SyntheticDataset) -> Vec<(&'static str, &QAExample)> {
    let mut out = Vec::new();
    for s in d.hops.values() {
        out.extend(s.train.iter().map(|q| ("train", q)));
        out.extend(s.dev.iter().map(|q| ("dev", q)));
        out.extend(s.test.iter().map(|q| ("test", q)));
    }
    out
}

#[test]
fn every_gold_set_is_the_bfs_answer_of_its_path() {
    let d = dataset();
    let g = RelationGraph::build_from_triples(&d.triples).unwrap().add_reverse_relations().unwrap();
    let questions = all_questions(&d);
    assert!(!questions.is_empty());
    for (_, q) in questions {
        let parses = parse_question(&q.question);
        assert!(!parses.is_empty(), "unparseable question `{}`", q.question);
        let gold: BTreeSet<EntityId> = q.answers.iter().map(|a| g.entity_id(a).unwrap()).collect();
        assert!(!gold.is_empty());
        for (topic, path) in parses {
            assert_eq!(topic, q.topic);
            assert_eq!(Some(path.len()), q.hop, "{}", q.question);
            let preds: Vec<PredicateId> = path.iter().map(|p| g.predicate_id(p).unwrap()).collect();
            let bfs = path_answers(&g, g.entity_id(&topic).unwrap(), &preds).unwrap();
            assert_eq!(bfs, gold, "{}", q.question);
        }
    }
}

#[test]
fn no_question_appears_in_two_splits() {
    let d = dataset();
    let mut seen: HashMap<&str, &str> = HashMap::new();
    for (split, q) in all_questions(&d) {
        if let Some(prev) = seen.insert(&q.question, split) {
            panic!("`{}` in both {prev} and {split}", q.question);
        }
    }
}

#[test]
fn text_graph_reaches_what_the_label_graph_reaches() {
    let d = dataset();
    let label = RelationGraph::build_from_triples(&d.triples).unwrap().add_reverse_relations().unwrap();
    let names = d.entity_names();
    let text = RelationGraph::build_from_text_corpus(&d.corpus, &names).unwrap().add_reverse_relations().unwrap();
    assert_eq!(label.num_entities(), text.num_entities());
    for name in &names {
        let (le, te) = (label.entity_id(name).unwrap(), text.entity_id(name).unwrap());
        let from_label: BTreeSet<&str> = (0..label.num_predicates())
            .flat_map(|p| label.adjacency(PredicateId(p)).unwrap().successors(le.0).to_vec())
            .map(|t| label.entity_name(EntityId(t)))
            .collect();
        let from_text: BTreeSet<&str> = text
            .outgoing(te)
            .iter()
            .map(|r| text.entity_name(text.relation(*r).tail))
            .collect();
        assert_eq!(from_label, from_text, "neighbours of {name}");
    }
}

#[test]
fn default_spec_has_the_intended_scale() {
    let d = dataset();
    let m = d.manifest(hoptrace::graph::GraphForm::Label);
    assert!((400..=600).contains(&m.entities), "{} entities", m.entities);
    assert_eq!(m.predicates, 12);
    for (hop, c) in &m.questions {
        assert!(c.train + c.dev + c.test >= 3000, "hop {hop}: {c:?}");
    }
    assert_eq!(d.ambiguous_movies.len(), 20);
    for movie in &d.ambiguous_movies {
        let doc = &d.corpus.iter().find(|(m, _)| m == movie).unwrap().1;
        assert_eq!(doc.matches("was released in").count(), 2, "{doc}");
    }
}

#[test]
fn identical_specs_write_identical_files() {
    let d = dataset();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    d.write(a.path(), hoptrace::graph::GraphForm::Text).unwrap();
    dataset().write(b.path(), hoptrace::graph::GraphForm::Text).unwrap();
    for f in ["kb.tsv", "corpus.jsonl", "manifest.json", "2-hop/qa_train.txt", "2-hop/qa_train.hop"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
