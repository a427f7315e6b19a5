//! Text-relation extraction: sentence splitting, exact surface matching and
//! placeholder substitution.

use std::collections::HashMap;

use super::{EntityId, GraphBuilder, GraphForm, RelationText, OBJ, SUB};
use crate::error::{Error, Result};
use crate::text::tokenize_words;

/// Splits on `.`, `!` or `?` followed by whitespace or end of text; the
/// terminator stays with its sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// A matched entity occupying tokens `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub entity: EntityId,
}

/// Greedy left-to-right, longest-match-first over token sequences.
pub fn link_mentions(
    tokens: &[String],
    index: &HashMap<Vec<String>, EntityId>,
    max_len: usize,
) -> Vec<Mention> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = (1..=max_len.min(tokens.len() - i))
            .rev()
            .find_map(|len| index.get(&tokens[i..i + len]).map(|&e| (len, e)));
        match longest {
            Some((len, entity)) => {
                out.push(Mention {
                    start: i,
                    end: i + len,
                    entity,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

pub(super) fn extract<S: AsRef<str>>(
    form: GraphForm,
    documents: &[(S, S)],
    entity_names: &[S],
) -> Result<GraphBuilder> {
    if entity_names.is_empty() {
        return Err(Error::Config("entity name list is empty".into()));
    }
    let mut b = GraphBuilder::new(form);
    let mut index: HashMap<Vec<String>, EntityId> = HashMap::new();
    let mut max_len = 0;
    for name in entity_names {
        let id = b.entity(name.as_ref());
        let toks = tokenize_words(name.as_ref());
        if toks.is_empty() {
            continue;
        }
        max_len = max_len.max(toks.len());
        index.entry(toks).or_insert(id);
    }

    for (doc_index, (subject, text)) in documents.iter().enumerate() {
        let subject_id = b
            .entities
            .get(subject.as_ref())
            .map(EntityId)
            .ok_or_else(|| Error::UnknownSubject {
                index: doc_index,
                subject: subject.as_ref().to_string(),
            })?;
        for sentence in split_sentences(text.as_ref()) {
            let tokens = tokenize_words(sentence);
            let mentions = link_mentions(&tokens, &index, max_len);
            let subject_span = mentions.iter().find(|m| m.entity == subject_id).copied();
            let mut seen = Vec::new();
            for m in &mentions {
                if m.entity == subject_id || seen.contains(&m.entity) {
                    continue;
                }
                seen.push(m.entity);
                let rel = substitute(&tokens, subject_span, *m);
                b.add_text_relation(subject_id, m.entity, RelationText::sentence(rel));
            }
        }
    }
    Ok(b)
}

/// Replaces the subject and object spans with placeholders. A sentence that
/// never names its subject gets `<sub>` prepended.
fn substitute(tokens: &[String], subject: Option<Mention>, object: Mention) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + 1);
    if subject.is_none() {
        out.push(SUB.to_string());
    }
    let mut i = 0;
    while i < tokens.len() {
        match subject {
            Some(s) if s.start == i => {
                out.push(SUB.to_string());
                i = s.end;
                continue;
            }
            _ => {}
        }
        if object.start == i {
            out.push(OBJ.to_string());
            i = object.end;
            continue;
        }
        out.push(tokens[i].clone());
        i += 1;
    }
    out
}
