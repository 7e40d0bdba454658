//! Export of the per-slot state attention for heatmaps.

use serde::{Deserialize, Serialize};

use crate::model::DecodeTrace;

/// State attention of one turn: `weights[k][i]` is slot `k`'s weight on
/// input token `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub dialogue_id: String,
    pub turn: usize,
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub response: Vec<String>,
    pub entry_probs: Vec<f64>,
}

impl AttentionMap {
    pub fn from_trace(dialogue_id: impl Into<String>, turn: usize, trace: &DecodeTrace) -> Self {
        Self {
            dialogue_id: dialogue_id.into(),
            turn,
            tokens: trace.input_tokens.clone(),
            slots: trace.slots.clone(),
            weights: trace.state_attention.clone(),
            response: trace.tokens.clone(),
            entry_probs: trace.entry_probs.clone(),
        }
    }

    /// Header of input tokens, then one row per slot with six decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("slot");
        for t in &self.tokens {
            out.push('\t');
            out.push_str(t);
        }
        out.push('\n');
        for (slot, row) in self.slots.iter().zip(&self.weights) {
            out.push_str(slot);
            for w in row {
                out.push_str(&format!("\t{w:.6}"));
            }
            out.push('\n');
        }
        out
    }
}
