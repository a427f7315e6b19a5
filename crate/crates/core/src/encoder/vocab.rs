use std::collections::HashMap;

use crate::graph::{RelationGraph, OBJ, SUB};
use crate::text::tokenize_words;

/// Token ↔ index map. Indices 0..4 are reserved for PAD, UNK, `<sub>`, `<obj>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const SUB: usize = 2;
    pub const OBJ: usize = 3;

    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in ["<pad>", "<unk>", SUB, OBJ] {
            v.add(t);
        }
        v
    }

    /// Tokens of the given question word sequences followed by every relation
    /// text in the graph, in first-seen order.
    pub fn build<'a>(
        questions: impl IntoIterator<Item = &'a [String]>,
        graph: &RelationGraph,
    ) -> Self {
        let mut v = Vocabulary::new();
        for q in questions {
            for t in q {
                v.add(t);
            }
        }
        for text in graph.texts() {
            for t in &text.tokens {
                v.add(t);
            }
        }
        v
    }

    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    /// Maps words to indices; an empty sequence becomes `[UNK]`.
    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        if words.is_empty() {
            return vec![Self::UNK];
        }
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        self.encode(&tokenize_words(text))
    }

    /// One token per line, index order.
    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_tokens(tokens: &[String]) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            v.add(t);
        }
        v
    }
}
