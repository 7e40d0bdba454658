//! Live conversations against a loaded model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_value, tokenize, Domain, EntityJoiner, KbTable, Speaker, Turn, NONE_TOKEN};
use crate::error::{Error, Result};
use crate::model::{decode_greedy, DecodeTrace, Model};

/// KB as sent by a client: raw cell strings under named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbInput {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl KbInput {
    /// Normalizes the cells and reorders the columns to `expected`. Any
    /// missing or unknown column is reported by name.
    pub fn to_table(&self, expected: &[String]) -> Result<KbTable> {
        let given: Vec<String> = self.columns.iter().map(|c| normalize_value(c)).collect();
        let missing: Vec<&str> = expected
            .iter()
            .filter(|c| !given.contains(c))
            .map(String::as_str)
            .collect();
        let unknown: Vec<&str> = given
            .iter()
            .filter(|c| !expected.contains(c))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() || !unknown.is_empty() || given.len() != expected.len() {
            return Err(Error::Contract(format!(
                "KB columns must be exactly [{}]; missing [{}], unknown [{}]",
                expected.join(", "),
                missing.join(", "),
                unknown.join(", ")
            )));
        }
        if self.rows.is_empty() {
            return Err(Error::Contract("KB has no rows".into()));
        }
        let order: Vec<usize> = expected
            .iter()
            .map(|c| given.iter().position(|g| g == c).expect("checked above"))
            .collect();
        let mut rows = Vec::with_capacity(self.rows.len());
        for (k, row) in self.rows.iter().enumerate() {
            if row.len() != given.len() {
                return Err(Error::Contract(format!(
                    "KB row {k} has {} cells for {} columns [{}]",
                    row.len(),
                    given.len(),
                    self.columns.join(", ")
                )));
            }
            rows.push(
                order
                    .iter()
                    .map(|&i| {
                        let v = normalize_value(&row[i]);
                        if v.is_empty() {
                            NONE_TOKEN.to_string()
                        } else {
                            v
                        }
                    })
                    .collect(),
            );
        }
        let domain = Domain::from_columns(expected).unwrap_or(Domain::Navigate);
        KbTable::new(domain, expected.to_vec(), rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub response: String,
    pub trace: DecodeTrace,
}

/// One conversation: an immutable KB and an append-only history.
#[derive(Clone, Debug)]
pub struct ChatSession {
    pub id: String,
    kb: Arc<KbTable>,
    history: Vec<Turn>,
    traces: Vec<DecodeTrace>,
    joiner: EntityJoiner,
}

impl ChatSession {
    pub fn new(id: impl Into<String>, kb: KbTable, model: &Model) -> Result<Self> {
        model.table_ids(&kb)?;
        let joiner = EntityJoiner::new(
            kb.lexicon()
                .iter()
                .map(String::as_str)
                .chain(model.vocab.words().iter().map(String::as_str))
                .collect::<Vec<_>>(),
        );
        Ok(Self {
            id: id.into(),
            kb: Arc::new(kb),
            history: Vec::new(),
            traces: Vec::new(),
            joiner,
        })
    }

    pub fn kb(&self) -> &KbTable {
        &self.kb
    }

    pub fn history(&self) -> &[Turn] {
        &self.history
    }

    pub fn traces(&self) -> &[DecodeTrace] {
        &self.traces
    }

    /// Adds the driver's utterance and the model's reply to the history.
    pub fn respond(&mut self, model: &Model, utterance: &str) -> Result<Reply> {
        let tokens = self.joiner.join(&tokenize(utterance));
        if tokens.is_empty() {
            return Err(Error::Contract("empty utterance".into()));
        }
        self.history.push(Turn {
            speaker: Speaker::Driver,
            tokens,
        });
        let input: Vec<String> = self
            .history
            .iter()
            .flat_map(|t| std::iter::once(t.speaker.token().to_string()).chain(t.tokens.iter().cloned()))
            .collect();
        let trace = decode_greedy(model, &input, &self.kb, model.config.max_decode_len)?;
        self.history.push(Turn {
            speaker: Speaker::Car,
            tokens: trace.tokens.clone(),
        });
        self.traces.push(trace.clone());
        Ok(Reply {
            response: trace.response(),
            trace,
        })
    }
}
