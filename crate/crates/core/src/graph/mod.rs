//! Relation graphs in label, text and mixed form.
//!
//! Label edges are stored per predicate in compressed rows sorted by
//! `(head, tail)`, so a transfer step is one sparse matvec per predicate.
//! Text relations reference interned token sequences; many relations share the
//! same text once entity mentions have been replaced by placeholders, and the
//! encoder only has to run once per distinct text.

mod corpus;
mod io;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use corpus::{link_mentions, split_sentences, Mention};
pub use io::{read_corpus_jsonl, read_triples_tsv, GRAPH_MAGIC};

pub const SUB: &str = "<sub>";
pub const OBJ: &str = "<obj>";
pub const REVERSE_SUFFIX: &str = "_rev";

macro_rules! index_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

index_type!(EntityId);
index_type!(
    /// After reverse augmentation, predicate `2k + 1` is the reverse of `2k`.
    PredicateId
);
index_type!(TextRelationId);
index_type!(
    /// Index into the table of distinct relation texts.
    TextId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GraphForm {
    #[default]
    Label,
    Text,
    Mixed,
}

impl GraphForm {
    /// Text and mixed graphs are reasoned over with the relation encoder.
    pub fn uses_text(self) -> bool {
        !matches!(self, GraphForm::Label)
    }
}

impl fmt::Display for GraphForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphForm::Label => "label",
            GraphForm::Text => "text",
            GraphForm::Mixed => "mixed",
        })
    }
}

impl FromStr for GraphForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(GraphForm::Label),
            "text" => Ok(GraphForm::Text),
            "mixed" => Ok(GraphForm::Mixed),
            other => Err(Error::Config(format!("unknown graph form `{other}`"))),
        }
    }
}

/// Name ↔ index map with case-insensitive lookup.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> usize {
        let key = name.to_lowercase();
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(key, i);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(&name.to_lowercase()).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One predicate's edges in compressed-row form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    tails: Vec<usize>,
}

impl Adjacency {
    fn from_sorted(n: usize, edges: &BTreeSet<(usize, usize)>) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(h, _) in edges {
            offsets[h + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let tails = edges.iter().map(|&(_, t)| t).collect();
        Adjacency { offsets, tails }
    }

    pub fn len(&self) -> usize {
        self.tails.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tails.is_empty()
    }

    pub fn successors(&self, head: usize) -> &[usize] {
        &self.tails[self.offsets[head]..self.offsets[head + 1]]
    }

    /// `(head, tail)` pairs in storage order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.offsets.len().saturating_sub(1))
            .flat_map(move |h| self.successors(h).iter().map(move |&t| (h, t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    /// A sentence with exactly one `<sub>` and one `<obj>`.
    Sentence,
    /// A label predicate used as a one-word sentence (mixed form).
    Predicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelationText {
    pub kind: TextKind,
    pub tokens: Vec<String>,
}

impl RelationText {
    pub fn sentence(tokens: Vec<String>) -> Self {
        RelationText {
            kind: TextKind::Sentence,
            tokens,
        }
    }

    pub fn predicate(name: &str) -> Self {
        RelationText {
            kind: TextKind::Predicate,
            tokens: vec![name.to_string()],
        }
    }

    /// Sentences swap their placeholders; predicates toggle the reverse suffix.
    pub fn reversed(&self) -> Self {
        let tokens = match self.kind {
            TextKind::Sentence => self
                .tokens
                .iter()
                .map(|t| match t.as_str() {
                    SUB => OBJ.to_string(),
                    OBJ => SUB.to_string(),
                    _ => t.clone(),
                })
                .collect(),
            TextKind::Predicate => {
                let name = &self.tokens[0];
                vec![match name.strip_suffix(REVERSE_SUFFIX) {
                    Some(base) => base.to_string(),
                    None => format!("{name}{REVERSE_SUFFIX}"),
                }]
            }
        };
        RelationText {
            kind: self.kind,
            tokens,
        }
    }

    pub fn display(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextRelation {
    pub id: TextRelationId,
    pub head: EntityId,
    pub tail: EntityId,
    pub text: TextId,
}

/// Collects entities, triples and text relations before the graph is frozen.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    form: GraphForm,
    entities: Vocab,
    predicates: Vocab,
    edges: Vec<BTreeSet<(usize, usize)>>,
    texts: Vec<RelationText>,
    text_index: HashMap<RelationText, usize>,
    relations: Vec<(usize, usize, usize)>,
}

impl GraphBuilder {
    pub fn new(form: GraphForm) -> Self {
        GraphBuilder {
            form,
            entities: Vocab::default(),
            predicates: Vocab::default(),
            edges: Vec::new(),
            texts: Vec::new(),
            text_index: HashMap::new(),
            relations: Vec::new(),
        }
    }

    pub fn entity(&mut self, name: &str) -> EntityId {
        EntityId(self.entities.intern(name))
    }

    pub fn predicate(&mut self, name: &str) -> PredicateId {
        let p = self.predicates.intern(name);
        if p == self.edges.len() {
            self.edges.push(BTreeSet::new());
        }
        PredicateId(p)
    }

    pub fn add_triple(&mut self, head: &str, predicate: &str, tail: &str) {
        let h = self.entity(head);
        let p = self.predicate(predicate);
        let t = self.entity(tail);
        self.edges[p.0].insert((h.0, t.0));
    }

    pub fn add_text_relation(&mut self, head: EntityId, tail: EntityId, text: RelationText) {
        let next = self.texts.len();
        let id = *self.text_index.entry(text.clone()).or_insert(next);
        if id == next {
            self.texts.push(text);
        }
        self.relations.push((head.0, tail.0, id));
    }

    pub fn finish(self) -> RelationGraph {
        self.finish_with(false)
    }

    fn finish_with(self, reversed: bool) -> RelationGraph {
        let n = self.entities.len();
        let label = self
            .edges
            .iter()
            .map(|e| Adjacency::from_sorted(n, e))
            .collect();
        let relations: Vec<TextRelation> = self
            .relations
            .iter()
            .enumerate()
            .map(|(i, &(h, t, x))| TextRelation {
                id: TextRelationId(i),
                head: EntityId(h),
                tail: EntityId(t),
                text: TextId(x),
            })
            .collect();
        let mut text_out = vec![Vec::new(); n];
        for r in &relations {
            text_out[r.head.0].push(r.id);
        }
        let mut surface: HashMap<String, Vec<EntityId>> = HashMap::new();
        for (i, name) in self.entities.names().iter().enumerate() {
            surface
                .entry(surface_form(name).to_lowercase())
                .or_default()
                .push(EntityId(i));
        }
        RelationGraph {
            form: self.form,
            entities: self.entities,
            predicates: self.predicates,
            label,
            texts: self.texts,
            relations,
            text_out,
            surface,
            reversed,
        }
    }
}

/// Entity name with a trailing parenthesised disambiguator removed,
/// e.g. `Night Harbor (2)` → `Night Harbor`.
pub fn surface_form(name: &str) -> &str {
    let trimmed = name.trim_end();
    if trimmed.ends_with(')') {
        if let Some(open) = trimmed.rfind(" (") {
            return &trimmed[..open];
        }
    }
    trimmed
}

#[derive(Debug, Clone)]
pub struct RelationGraph {
    form: GraphForm,
    entities: Vocab,
    predicates: Vocab,
    label: Vec<Adjacency>,
    texts: Vec<RelationText>,
    relations: Vec<TextRelation>,
    text_out: Vec<Vec<TextRelationId>>,
    surface: HashMap<String, Vec<EntityId>>,
    reversed: bool,
}

impl RelationGraph {
    /// Label-form graph from `(head, predicate, tail)` name triples.
    /// Vocabularies follow first-seen order; duplicates collapse.
    pub fn build_from_triples<S: AsRef<str>>(triples: &[(S, S, S)]) -> Result<Self> {
        let mut b = GraphBuilder::new(GraphForm::Label);
        for (row, (h, p, t)) in triples.iter().enumerate() {
            let (h, p, t) = (h.as_ref().trim(), p.as_ref().trim(), t.as_ref().trim());
            if h.is_empty() || p.is_empty() || t.is_empty() {
                return Err(Error::MalformedRow {
                    row: row + 1,
                    reason: "empty field".into(),
                });
            }
            b.add_triple(h, p, t);
        }
        Ok(b.finish())
    }

    /// Text-form graph extracted from `(subject, article)` documents.
    pub fn build_from_text_corpus<S: AsRef<str>>(
        documents: &[(S, S)],
        entity_names: &[S],
    ) -> Result<Self> {
        let b = corpus::extract(GraphForm::Text, documents, entity_names)?;
        Ok(b.finish())
    }

    /// Text relations from the corpus plus a random `label_fraction` of the
    /// triples, each predicate acting as a one-word sentence.
    pub fn build_mixed<S: AsRef<str>>(
        documents: &[(S, S)],
        entity_names: &[S],
        triples: &[(S, S, S)],
        label_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut b = corpus::extract(GraphForm::Mixed, documents, entity_names)?;
        let mut order: Vec<usize> = (0..triples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let keep = ((triples.len() as f64) * label_fraction.clamp(0.0, 1.0)).round() as usize;
        let mut chosen: Vec<usize> = order[..keep].to_vec();
        chosen.sort_unstable();
        for row in chosen {
            let (h, p, t) = &triples[row];
            let (h, p, t) = (h.as_ref().trim(), p.as_ref().trim(), t.as_ref().trim());
            if h.is_empty() || p.is_empty() || t.is_empty() {
                return Err(Error::MalformedRow {
                    row: row + 1,
                    reason: "empty field".into(),
                });
            }
            b.add_triple(h, p, t);
            let (hid, tid) = (b.entity(h), b.entity(t));
            b.add_text_relation(hid, tid, RelationText::predicate(p));
        }
        Ok(b.finish())
    }

    /// Doubles predicates, edges and text relations with their reverses.
    /// Predicate `k` becomes `2k`, its reverse `2k + 1`; relation `r` becomes
    /// `2r` with the reverse twin at `2r + 1`.
    pub fn add_reverse_relations(self) -> Result<Self> {
        if self.reversed {
            return Err(Error::AlreadyReversed);
        }
        let mut b = GraphBuilder::new(self.form);
        for name in self.entities.names() {
            b.entity(name);
        }
        for (p, adj) in self.label.iter().enumerate() {
            let name = self.predicates.name(p);
            let fwd = b.predicate(name);
            let rev = b.predicate(&format!("{name}{REVERSE_SUFFIX}"));
            for (h, t) in adj.edges() {
                b.edges[fwd.0].insert((h, t));
                b.edges[rev.0].insert((t, h));
            }
        }
        for r in &self.relations {
            let text = &self.texts[r.text.0];
            b.add_text_relation(r.head, r.tail, text.clone());
            b.add_text_relation(r.tail, r.head, text.reversed());
        }
        Ok(b.finish_with(true))
    }

    pub fn form(&self) -> GraphForm {
        self.form
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn num_edges(&self) -> usize {
        self.label.iter().map(Adjacency::len).sum()
    }

    pub fn num_text_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn predicates(&self) -> &Vocab {
        &self.predicates
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        self.entities.name(e.0)
    }

    pub fn predicate_id(&self, name: &str) -> Option<PredicateId> {
        self.predicates.get(name).map(PredicateId)
    }

    pub fn predicate_name(&self, p: PredicateId) -> &str {
        self.predicates.name(p.0)
    }

    /// Reverse of a predicate in a reverse-augmented graph.
    pub fn reverse_predicate(&self, p: PredicateId) -> PredicateId {
        PredicateId(p.0 ^ 1)
    }

    /// Every entity whose surface form matches `mention`; an exact full-name
    /// match is the fallback for disambiguated names.
    pub fn resolve_mention(&self, mention: &str) -> Vec<EntityId> {
        let key = mention.trim().to_lowercase();
        match self.surface.get(&key) {
            Some(ids) => ids.clone(),
            None => self.entity_id(mention.trim()).into_iter().collect(),
        }
    }

    pub fn adjacency(&self, p: PredicateId) -> Result<&Adjacency> {
        self.label.get(p.0).ok_or(Error::PredicateOutOfRange(p.0))
    }

    /// `v_j = Σ_{(i,p,j)} a_i`.
    pub fn predicate_matvec(&self, a: &[f64], p: PredicateId) -> Result<Vec<f64>> {
        let adj = self.adjacency(p)?;
        let mut out = vec![0.0; self.num_entities()];
        matvec_acc(adj, a, 1.0, &mut out);
        Ok(out)
    }

    pub fn texts(&self) -> &[RelationText] {
        &self.texts
    }

    pub fn text(&self, id: TextId) -> &RelationText {
        &self.texts[id.0]
    }

    pub fn relations(&self) -> &[TextRelation] {
        &self.relations
    }

    pub fn relation(&self, id: TextRelationId) -> &TextRelation {
        &self.relations[id.0]
    }

    pub fn outgoing(&self, e: EntityId) -> &[TextRelationId] {
        &self.text_out[e.0]
    }

    /// Outgoing text relations of entities scoring above `tau`, capped at
    /// `omega` by subject score (ties: lower entity, then lower relation id).
    /// When nothing clears `tau` the single best-scoring entity is used.
    pub fn select_text_relations(
        &self,
        a_prev: &[f64],
        tau: f64,
        omega: usize,
    ) -> Vec<(TextRelationId, f64)> {
        let mut active: Vec<usize> = (0..a_prev.len()).filter(|&i| a_prev[i] > tau).collect();
        if active.is_empty() {
            let best = (0..a_prev.len()).fold(None, |best: Option<usize>, i| match best {
                Some(b) if a_prev[b] >= a_prev[i] => Some(b),
                _ => Some(i),
            });
            match best {
                Some(b) if a_prev[b] > 0.0 => active.push(b),
                _ => return Vec::new(),
            }
        }
        let mut picked: Vec<(TextRelationId, f64)> = active
            .iter()
            .flat_map(|&i| self.text_out[i].iter().map(move |&r| (r, a_prev[i])))
            .collect();
        if picked.len() > omega {
            picked.sort_by(|x, y| {
                y.1.total_cmp(&x.1)
                    .then_with(|| self.relations[x.0 .0].head.cmp(&self.relations[y.0 .0].head))
                    .then_with(|| x.0.cmp(&y.0))
            });
            picked.truncate(omega);
            picked.sort_by_key(|&(r, _)| r);
        }
        picked
    }
}

/// `out_j += w Σ_{(i,j) ∈ adj} a_i`, skipping inactive heads.
pub fn matvec_acc(adj: &Adjacency, a: &[f64], w: f64, out: &mut [f64]) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let s = w * ai;
        for &j in adj.successors(i) {
            out[j] += s;
        }
    }
}

/// `out_i += w Σ_{(i,j) ∈ adj} g_j`.
pub fn matvec_t_acc(adj: &Adjacency, g: &[f64], w: f64, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let s: f64 = adj.successors(i).iter().map(|&j| g[j]).sum();
        *o += w * s;
    }
}

/// `Σ_{(i,j) ∈ adj} a_i g_j`.
pub fn bilinear(adj: &Adjacency, a: &[f64], g: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let s: f64 = adj.successors(i).iter().map(|&j| g[j]).sum();
        total += ai * s;
    }
    total
}
