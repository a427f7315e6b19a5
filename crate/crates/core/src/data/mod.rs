//! Question files (`question<TAB>answer1|answer2`, topic in brackets) and
//! the synthetic movie-domain generator.

mod synthetic;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::warn;

use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::graph::{read_corpus_jsonl, read_triples_tsv, EntityId, GraphForm, PredicateId, RelationGraph};
use crate::reasoner::Model;
use crate::text::{question_words, topic_mention};
use crate::training::TrainingExample;

pub use synthetic::{
    generate_synthetic, EntityKind, Manifest, PredicateTemplate, QuestionSplits, SplitCounts, SyntheticDataset,
    SyntheticSpec, PREDICATES, WRAPPERS,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAExample {
    pub question: String,
    pub topic: String,
    pub answers: Vec<String>,
    pub hop: Option<usize>,
}

impl QAExample {
    pub fn new(question: &str, answers: Vec<String>, hop: Option<usize>) -> Result<Self> {
        let topic = topic_mention(question).ok_or_else(|| Error::MalformedRow {
            row: 0,
            reason: format!("no bracketed topic in `{question}`"),
        })?;
        if answers.is_empty() {
            return Err(Error::EmptyAnswers);
        }
        Ok(QAExample {
            question: question.to_string(),
            topic: topic.to_string(),
            answers,
            hop,
        })
    }

    pub fn to_line(&self) -> String {
        format!("{}\t{}", self.question, self.answers.join("|"))
    }
}

/// Parses question lines; blank lines are skipped. `hops` supplies one label
/// per non-blank line when present.
pub fn parse_questions(raw: &str, hops: Option<&[usize]>) -> Result<Vec<QAExample>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let (question, answers) = line.split_once('\t').ok_or_else(|| Error::MalformedRow {
            row,
            reason: "expected question<TAB>answers".into(),
        })?;
        let answers: Vec<String> = answers
            .split('|')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(String::from)
            .collect();
        let hop = hops.and_then(|h| h.get(out.len()).copied());
        let ex = QAExample::new(question.trim(), answers, hop).map_err(|e| match e {
            Error::MalformedRow { reason, .. } => Error::MalformedRow { row, reason },
            Error::EmptyAnswers => Error::MalformedRow {
                row,
                reason: "no answers".into(),
            },
            other => other,
        })?;
        out.push(ex);
    }
    Ok(out)
}

/// Hop labels for `qa_train.txt` live next to it in `qa_train.hop`.
pub fn hop_sidecar(path: &Path) -> PathBuf {
    path.with_extension("hop")
}

pub fn load_questions(path: &Path) -> Result<Vec<QAExample>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar = hop_sidecar(path);
    let hops = if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let mut hops = Vec::new();
        for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            hops.push(l.trim().parse().map_err(|_| Error::MalformedRow {
                row: i + 1,
                reason: format!("bad hop label `{l}` in {}", sidecar.display()),
            })?);
        }
        Some(hops)
    } else {
        None
    };
    parse_questions(&raw, hops.as_deref())
}

pub fn write_questions(path: &Path, examples: &[QAExample]) -> Result<()> {
    let mut body = String::new();
    for ex in examples {
        body.push_str(&ex.to_line());
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    if examples.iter().all(|e| e.hop.is_some()) && !examples.is_empty() {
        let hops: String = examples.iter().map(|e| format!("{}\n", e.hop.unwrap())).collect();
        let sidecar = hop_sidecar(path);
        std::fs::write(&sidecar, hops).map_err(|e| Error::io(&sidecar, e))?;
    }
    Ok(())
}

/// Every `<dir>/<k>-hop/qa_<split>.txt` in hop order.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<QAExample>> {
    let mut out = Vec::new();
    for hop in 1..=9 {
        let path = dir.join(format!("{hop}-hop")).join(format!("qa_{split}.txt"));
        if path.exists() {
            out.extend(load_questions(&path)?);
        }
    }
    if out.is_empty() {
        let flat = dir.join(format!("qa_{split}.txt"));
        if flat.exists() {
            return load_questions(&flat);
        }
        return Err(Error::io(
            dir.join(format!("*-hop/qa_{split}.txt")),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no question files"),
        ));
    }
    Ok(out)
}

/// Entity names in first-seen order over the triples.
pub fn entity_names(triples: &[(String, String, String)]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (h, _, t) in triples {
        for e in [h, t] {
            if seen.insert(e.as_str()) {
                out.push(e.clone());
            }
        }
    }
    out
}

/// Builds the reversed graph of a dataset directory: `kb.tsv` for label
/// form, `corpus.jsonl` with entity names from `kb.tsv` for text form, and
/// both for mixed form.
pub fn graph_from_dir(dir: &Path, form: GraphForm, mixed_fraction: f64, mixed_seed: u64) -> Result<RelationGraph> {
    let triples = read_triples_tsv(&dir.join("kb.tsv"))?;
    let graph = match form {
        GraphForm::Label => RelationGraph::build_from_triples(&triples)?,
        GraphForm::Text | GraphForm::Mixed => {
            let docs = read_corpus_jsonl(&dir.join("corpus.jsonl"))?;
            let names = entity_names(&triples);
            if form == GraphForm::Text {
                RelationGraph::build_from_text_corpus(&docs, &names)?
            } else {
                RelationGraph::build_mixed(&docs, &names, &triples, mixed_fraction, mixed_seed)?
            }
        }
    };
    graph.add_reverse_relations()
}

/// Vocabulary over training questions and every relation text in the graph.
pub fn build_vocabulary(train: &[QAExample], graph: &RelationGraph) -> Vocabulary {
    let words: Vec<Vec<String>> = train.iter().map(|e| question_words(&e.question)).collect();
    Vocabulary::build(words.iter().map(Vec::as_slice), graph)
}

/// Resolves topics and answers against the graph. Unresolvable examples are
/// logged and skipped.
pub fn resolve_examples(examples: &[QAExample], graph: &RelationGraph, model: &Model) -> Vec<TrainingExample> {
    let mut out = Vec::with_capacity(examples.len());
    for (id, ex) in examples.iter().enumerate() {
        let topics = graph.resolve_mention(&ex.topic);
        if topics.is_empty() {
            warn!("skipping example {id}: unknown topic `{}`", ex.topic);
            continue;
        }
        let answers: Option<Vec<EntityId>> = ex.answers.iter().map(|a| graph.entity_id(a)).collect();
        let Some(answers) = answers else {
            warn!("skipping example {id}: unknown answer in {:?}", ex.answers);
            continue;
        };
        out.push(TrainingExample {
            id,
            tokens: model.question_tokens(&ex.question),
            topics,
            answers,
            hop: ex.hop,
        });
    }
    out
}

/// Entities reachable from `topic` by following `path` exactly, one
/// predicate per hop.
pub fn path_answers(graph: &RelationGraph, topic: EntityId, path: &[PredicateId]) -> Result<BTreeSet<EntityId>> {
    let mut frontier = BTreeSet::from([topic]);
    for &p in path {
        let adj = graph.adjacency(p)?;
        frontier = frontier
            .iter()
            .flat_map(|e| adj.successors(e.0).iter().map(|&t| EntityId(t)))
            .collect();
    }
    Ok(frontier)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_and_multi_answer_lines() {
        let raw = "who directed [Blade]\tStephen Norrington\n\nactors in [Heat]\tAl Pacino|Robert De Niro\n";
        let qs = parse_questions(raw, None).unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].topic, "Blade");
        assert_eq!(qs[0].answers, vec!["Stephen Norrington"]);
        assert_eq!(qs[1].answers.len(), 2);
        assert_eq!(qs[1].hop, None);
    }

    #[test]
    fn hop_labels_follow_non_blank_lines() {
        let qs = parse_questions("a [x]\ty\n\nb [x]\tz\n", Some(&[1, 2])).unwrap();
        assert_eq!(qs[1].hop, Some(2));
    }

    #[test]
    fn rejects_missing_tab_and_topic() {
        assert!(matches!(
            parse_questions("ok [a]\tb\nno tab here\n", None),
            Err(Error::MalformedRow { row: 2, .. })
        ));
        assert!(parse_questions("no topic\tb\n", None).is_err());
        assert!(parse_questions("q [a]\t|\n", None).is_err());
    }

    #[test]
    fn round_trip() {
        let raw = "who directed [Blade]\tStephen Norrington\nactors in [Heat]\tAl Pacino|Robert De Niro\n";
        let qs = parse_questions(raw, None).unwrap();
        let back: String = qs.iter().map(|q| q.to_line() + "\n").collect();
        assert_eq!(back, raw);
    }

    #[test]
    fn path_oracle() {
        let g = RelationGraph::build_from_triples(&[
            ("m1", "directed_by", "p1"),
            ("m2", "directed_by", "p1"),
            ("m3", "directed_by", "p2"),
        ])
        .unwrap()
        .add_reverse_relations()
        .unwrap();
        let m1 = g.entity_id("m1").unwrap();
        let fwd = g.predicate_id("directed_by").unwrap();
        let rev = g.reverse_predicate(fwd);
        let got = path_answers(&g, m1, &[fwd, rev]).unwrap();
        let want: BTreeSet<EntityId> = ["m1", "m2"].iter().map(|n| g.entity_id(n).unwrap()).collect();
        assert_eq!(got, want);
    }
}
