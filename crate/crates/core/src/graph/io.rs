//! On-disk formats: triples TSV, corpus JSONL and the line-oriented graph file.
//!
//! Graph file layout:
//!
//! ```text
//! hoptrace-graph v1 <form> <n> <|P|>
//! #META
//! reversed<TAB>true|false
//! #ENTITIES
//! <name>                      one per line, index order
//! #PREDICATES
//! <name>
//! #EDGES
//! <head><TAB><pred><TAB><tail>  ids, predicate-major, sorted by (head, tail)
//! #TEXTS
//! <sentence|predicate><TAB><space-joined tokens>
//! #TEXT_RELATIONS
//! <head><TAB><tail><TAB><text id>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{EntityId, GraphBuilder, GraphForm, RelationGraph, RelationText, TextKind};
use crate::error::{Error, Result};

pub const GRAPH_MAGIC: &str = "hoptrace-graph";
const VERSION: &str = "v1";

/// `head<TAB>predicate<TAB>tail` rows; blank and `#` lines are skipped.
pub fn read_triples_tsv(path: &Path) -> Result<Vec<(String, String, String)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triples(&raw)
}

pub(crate) fn parse_triples(raw: &str) -> Result<Vec<(String, String, String)>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::MalformedRow {
                row: i + 1,
                reason: format!("expected 3 non-empty tab-separated fields, got `{line}`"),
            });
        }
        out.push((
            fields[0].trim().to_string(),
            fields[1].trim().to_string(),
            fields[2].trim().to_string(),
        ));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CorpusLine {
    subject: String,
    text: String,
}

/// One `{"subject": ..., "text": ...}` object per line.
pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<(String, String)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusLine = serde_json::from_str(line).map_err(|e| Error::MalformedRow {
            row: i + 1,
            reason: e.to_string(),
        })?;
        out.push((doc.subject, doc.text));
    }
    Ok(out)
}

impl RelationGraph {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{GRAPH_MAGIC} {VERSION} {} {} {}",
            self.form,
            self.num_entities(),
            self.num_predicates()
        );
        let _ = writeln!(s, "#META\nreversed\t{}", self.reversed);
        s.push_str("#ENTITIES\n");
        for name in self.entities.names() {
            let _ = writeln!(s, "{name}");
        }
        s.push_str("#PREDICATES\n");
        for name in self.predicates.names() {
            let _ = writeln!(s, "{name}");
        }
        s.push_str("#EDGES\n");
        for (p, adj) in self.label.iter().enumerate() {
            for (h, t) in adj.edges() {
                let _ = writeln!(s, "{h}\t{p}\t{t}");
            }
        }
        s.push_str("#TEXTS\n");
        for text in &self.texts {
            let kind = match text.kind {
                TextKind::Sentence => "sentence",
                TextKind::Predicate => "predicate",
            };
            let _ = writeln!(s, "{kind}\t{}", text.display());
        }
        s.push_str("#TEXT_RELATIONS\n");
        for r in &self.relations {
            let _ = writeln!(s, "{}\t{}\t{}", r.head, r.tail, r.text);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&raw)
    }

    pub fn from_text(raw: &str) -> Result<Self> {
        let bad = |msg: String| Error::GraphFormat(msg);
        let mut lines = raw.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .split_whitespace()
            .collect();
        if header.len() != 5 || header[0] != GRAPH_MAGIC || header[1] != VERSION {
            return Err(bad(format!("bad header `{}`", header.join(" "))));
        }
        let form: GraphForm = header[2].parse()?;
        let n: usize = header[3].parse().map_err(|_| bad("bad entity count".into()))?;
        let np: usize = header[4]
            .parse()
            .map_err(|_| bad("bad predicate count".into()))?;

        let mut b = GraphBuilder::new(form);
        let mut reversed = false;
        let mut section = "";
        let mut texts: Vec<RelationText> = Vec::new();
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::GraphFormat(format!("bad integer `{s}`")))
        };
        for line in lines {
            if let Some(name) = line.strip_prefix('#') {
                section = match name {
                    "META" | "ENTITIES" | "PREDICATES" | "EDGES" | "TEXTS" | "TEXT_RELATIONS" => {
                        name
                    }
                    other => return Err(bad(format!("unknown section `{other}`"))),
                };
                continue;
            }
            match section {
                "META" => {
                    if let Some(v) = line.strip_prefix("reversed\t") {
                        reversed = v == "true";
                    }
                }
                "ENTITIES" => {
                    let before = b.entities.len();
                    b.entity(line);
                    if b.entities.len() == before {
                        return Err(bad(format!("duplicate entity `{line}`")));
                    }
                }
                "PREDICATES" => {
                    b.predicate(line);
                }
                "EDGES" => {
                    let f: Vec<&str> = line.split('\t').collect();
                    if f.len() != 3 {
                        return Err(bad(format!("bad edge `{line}`")));
                    }
                    let (h, p, t) = (num(f[0])?, num(f[1])?, num(f[2])?);
                    if h >= n || t >= n || p >= np {
                        return Err(bad(format!("edge out of range `{line}`")));
                    }
                    b.edges[p].insert((h, t));
                }
                "TEXTS" => {
                    let (kind, body) = line
                        .split_once('\t')
                        .ok_or_else(|| bad(format!("bad text `{line}`")))?;
                    let tokens = body.split(' ').map(String::from).collect();
                    let kind = match kind {
                        "sentence" => TextKind::Sentence,
                        "predicate" => TextKind::Predicate,
                        other => return Err(bad(format!("bad text kind `{other}`"))),
                    };
                    texts.push(RelationText { kind, tokens });
                }
                "TEXT_RELATIONS" => {
                    let f: Vec<&str> = line.split('\t').collect();
                    if f.len() != 3 {
                        return Err(bad(format!("bad text relation `{line}`")));
                    }
                    let (h, t, x) = (num(f[0])?, num(f[1])?, num(f[2])?);
                    if h >= n || t >= n || x >= texts.len() {
                        return Err(bad(format!("text relation out of range `{line}`")));
                    }
                    b.add_text_relation(EntityId(h), EntityId(t), texts[x].clone());
                }
                _ => return Err(bad(format!("content outside a section: `{line}`"))),
            }
        }
        if b.entities.len() != n || b.predicates.len() != np {
            return Err(bad("header counts disagree with body".into()));
        }
        Ok(b.finish_with(reversed))
    }
}
