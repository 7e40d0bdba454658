//! Lowercasing tokenizer and multi-word entity joining.

use std::collections::HashMap;

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '"'];

/// Lowercases, splits on whitespace and peels leading/trailing punctuation
/// off each chunk into separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let core = chunk.trim_start_matches(PUNCT);
        let leading = &chunk[..chunk.len() - core.len()];
        let inner = core.trim_end_matches(PUNCT);
        let trailing = &core[inner.len()..];
        out.extend(leading.chars().map(String::from));
        if !inner.is_empty() {
            out.push(inner.to_string());
        }
        out.extend(trailing.chars().map(String::from));
    }
    out
}

/// Single-token form of a KB value: tokenized words joined by `_`.
pub fn normalize_value(raw: &str) -> String {
    tokenize(raw).join("_")
}

/// Replaces every occurrence of a multi-word entity with its joined token.
/// At each position the longest matching entity wins; scanning is left to
/// right and matches do not overlap.
#[derive(Clone, Debug, Default)]
pub struct EntityJoiner {
    by_first: HashMap<String, Vec<Vec<String>>>,
}

impl EntityJoiner {
    pub fn new<'a>(values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut by_first: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for v in values {
            let words: Vec<String> = v.split('_').map(str::to_string).collect();
            if words.len() < 2 || words.iter().any(String::is_empty) {
                continue;
            }
            let bucket = by_first.entry(words[0].clone()).or_default();
            if !bucket.contains(&words) {
                bucket.push(words);
            }
        }
        for bucket in by_first.values_mut() {
            bucket.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        Self { by_first }
    }

    pub fn join(&self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let matched = self.by_first.get(&tokens[i]).and_then(|cands| {
                cands
                    .iter()
                    .find(|words| tokens.len() - i >= words.len() && tokens[i..i + words.len()] == words[..])
            });
            match matched {
                Some(words) => {
                    out.push(words.join("_"));
                    i += words.len();
                }
                None => {
                    out.push(tokens[i].clone());
                    i += 1;
                }
            }
        }
        out
    }
}
