//! Word-level tokenization shared by corpus extraction and the encoders.

use crate::graph::{OBJ, SUB};

/// Lowercases and splits on whitespace and punctuation boundaries. Runs of
/// alphanumerics (and `_`) form one token, every other visible character is
/// its own token, and the placeholders `<sub>` / `<obj>` stay atomic.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut rest = lower.as_str();
    while let Some(c) = rest.chars().next() {
        if c == '<' {
            if let Some(ph) = [SUB, OBJ].into_iter().find(|ph| rest.starts_with(ph)) {
                flush(&mut word, &mut tokens);
                tokens.push(ph.to_string());
                rest = &rest[ph.len()..];
                continue;
            }
        }
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            flush(&mut word, &mut tokens);
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn flush(word: &mut String, tokens: &mut Vec<String>) {
    if !word.is_empty() {
        tokens.push(std::mem::take(word));
    }
}

/// Words of a question with the bracketed topic mention replaced by `<sub>`,
/// e.g. `who directed [Blade]` → `who directed <sub>`.
pub fn question_words(question: &str) -> Vec<String> {
    match topic_span(question) {
        Some((start, end)) => {
            let mut words = tokenize_words(&question[..start]);
            words.push(SUB.to_string());
            words.extend(tokenize_words(&question[end..]));
            words
        }
        None => tokenize_words(question),
    }
}

/// Byte range of the first `[...]` span, brackets included.
pub fn topic_span(question: &str) -> Option<(usize, usize)> {
    let start = question.find('[')?;
    let close = question[start..].find(']')?;
    Some((start, start + close + 1))
}

/// The text inside the first `[...]` span.
pub fn topic_mention(question: &str) -> Option<&str> {
    topic_span(question).map(|(s, e)| question[s + 1..e - 1].trim())
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}
