use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use super::dialogue::Dialogue;
use super::kb::{slot_token, NONE_TOKEN};
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

pub const SPECIALS: [&str; 7] = [PAD, BOS, EOS, UNK, "<driver>", "<car>", NONE_TOKEN];

/// Word vocabulary `V` plus the slot-type tokens, which occupy the id range
/// directly after it: ids `0..len()` are words, `len()..extended_len()` are
/// slot types in column order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    slots: Vec<String>,
}

impl Vocabulary {
    /// Builds from the turns and KB values of `dialogues`, which must all be
    /// training data. Tokens seen fewer than `min_count` times are dropped.
    pub fn build(dialogues: &[Dialogue], columns: &[String], min_count: usize) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for d in dialogues {
            if d.split != super::Split::Train {
                return Err(Error::Contract(format!(
                    "vocabulary must be built from train dialogues only, got {:?} dialogue {}",
                    d.split, d.id
                )));
            }
            for tok in d.turns.iter().flat_map(|t| &t.tokens) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
            for v in d.kb.rows().iter().flatten() {
                *counts.entry(v.as_str()).or_default() += 1;
            }
        }
        let slot_tokens: Vec<String> = columns.iter().map(|c| slot_token(c)).collect();
        let mut by_freq: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !SPECIALS.contains(t) && !slot_tokens.iter().any(|s| s == t))
            .collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(by_freq.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_parts(tokens, columns.to_vec())
    }

    pub fn from_parts(tokens: Vec<String>, columns: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::parse("vocabulary", format!("line {} is not a single token", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::parse("vocabulary", format!("duplicate token `{t}`")));
            }
        }
        for s in SPECIALS {
            if !index.contains_key(s) {
                return Err(Error::parse("vocabulary", format!("missing special token `{s}`")));
            }
        }
        let slots: Vec<String> = columns.iter().map(|c| slot_token(c)).collect();
        if let Some(s) = slots.iter().find(|s| index.contains_key(*s)) {
            return Err(Error::Contract(format!("slot token `{s}` also appears in the word vocabulary")));
        }
        Ok(Self {
            tokens,
            index,
            slots,
        })
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str, columns: Vec<String>) -> Result<Self> {
        let tokens = text.lines().map(str::to_string).collect();
        Self::from_parts(tokens, columns)
    }

    /// SHA-256 over the word list and the slot list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        h.update(b"\x00slots\x00");
        h.update(self.slots.join("\n").as_bytes());
        hex::encode(h.finalize())
    }

    /// Size of the word vocabulary `V`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// `|V| + |slots|`.
    pub fn extended_len(&self) -> usize {
        self.tokens.len() + self.slots.len()
    }

    pub fn slot_tokens(&self) -> &[String] {
        &self.slots
    }

    pub fn words(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Word id, `<unk>` when unknown. Slot tokens are not words.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.unk())
    }

    /// Id in the extended space: slot tokens map past the word range.
    pub fn extended_id(&self, token: &str) -> usize {
        match self.slot_index(token) {
            Some(s) => self.tokens.len() + s,
            None => self.id(token),
        }
    }

    pub fn slot_index(&self, token: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == token)
    }

    pub fn token(&self, id: usize) -> &str {
        if id < self.tokens.len() {
            &self.tokens[id]
        } else {
            &self.slots[id - self.tokens.len()]
        }
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn unk(&self) -> usize {
        self.index[UNK]
    }

    pub fn bos(&self) -> usize {
        self.index[BOS]
    }

    pub fn eos(&self) -> usize {
        self.index[EOS]
    }

    pub fn pad(&self) -> usize {
        self.index[PAD]
    }

    /// Fraction of turn tokens not in the vocabulary.
    pub fn oov_rate(&self, dialogues: &[Dialogue]) -> f64 {
        let (mut total, mut oov) = (0usize, 0usize);
        for tok in dialogues.iter().flat_map(|d| d.turns.iter().flat_map(|t| &t.tokens)) {
            total += 1;
            if self.get(tok).is_none() {
                oov += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            oov as f64 / total as f64
        }
    }
}
