//! Response quality: corpus BLEU and entity F1.

mod bleu;
mod entity;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Instance;
use crate::error::Result;
use crate::model::{decode_greedy, Model};

pub use bleu::{corpus_bleu, SMOOTHING_EPSILON};
pub use entity::{entity_f1, extract_entities, Counts, EntityF1};

/// Which values count as entities when scoring a response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconMode {
    /// Values of the instance's own KB.
    #[default]
    Scenario,
    /// Values of every KB in the evaluated set.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
    pub gold_entities: BTreeSet<String>,
    pub predicted_entities: BTreeSet<String>,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub totals: Counts,
    pub lexicon: LexiconMode,
    pub instances: Vec<InstanceRecord>,
}

impl EvalReport {
    /// Scores already decoded responses. `records` need only carry ids and
    /// token sequences; entities and counts are filled in here.
    pub fn score(
        mut records: Vec<InstanceRecord>,
        lexicons: &[HashSet<String>],
        mode: LexiconMode,
    ) -> Result<Self> {
        let mut pairs = Vec::with_capacity(records.len());
        for (r, lex) in records.iter_mut().zip(lexicons) {
            r.gold_entities = extract_entities(&r.gold, lex);
            r.predicted_entities = extract_entities(&r.predicted, lex);
            r.counts = Counts::between(&r.gold_entities, &r.predicted_entities);
            pairs.push((r.gold_entities.clone(), r.predicted_entities.clone()));
        }
        let f1 = entity_f1(&pairs)?;
        let candidates: Vec<Vec<String>> = records.iter().map(|r| r.predicted.clone()).collect();
        let references: Vec<Vec<String>> = records.iter().map(|r| r.gold.clone()).collect();
        let bleu = corpus_bleu(&candidates, &references)?;
        Ok(Self {
            bleu,
            micro_f1: f1.micro,
            macro_f1: f1.macro_,
            totals: f1.totals,
            lexicon: mode,
            instances: records,
        })
    }

    /// `BLEU / Macro F1 / Micro F1` row.
    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label:<12} BLEU {:>5.1} | Macro F1 {:>5.1} | Micro F1 {:>5.1}",
            self.bleu, self.macro_f1, self.micro_f1
        )
    }
}

/// Decodes every non-delexicalized instance greedily and scores the result.
pub fn evaluate(model: &Model, instances: &[Instance], mode: LexiconMode) -> Result<EvalReport> {
    let scored: Vec<&Instance> = instances.iter().filter(|i| !i.delexicalized).collect();
    let global: HashSet<String> = match mode {
        LexiconMode::Global => scored.iter().flat_map(|i| i.kb.lexicon()).collect(),
        LexiconMode::Scenario => HashSet::new(),
    };
    let mut records = Vec::with_capacity(scored.len());
    let mut lexicons = Vec::with_capacity(scored.len());
    for inst in scored {
        let trace = decode_greedy(model, &inst.input, &inst.kb, model.config.max_decode_len)?;
        records.push(InstanceRecord {
            dialogue_id: inst.dialogue_id.clone(),
            turn: inst.turn,
            gold: inst.response().to_vec(),
            predicted: trace.tokens,
            gold_entities: BTreeSet::new(),
            predicted_entities: BTreeSet::new(),
            counts: Counts::default(),
        });
        lexicons.push(match mode {
            LexiconMode::Global => global.clone(),
            LexiconMode::Scenario => inst.kb.lexicon().into_iter().collect(),
        });
    }
    EvalReport::score(records, &lexicons, mode)
}
