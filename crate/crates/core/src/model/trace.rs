use serde::{Deserialize, Serialize};

use super::{DecodeStep, Model, TurnContext};
use crate::autodiff::Graph;
use crate::corpus::KbTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub token: String,
    /// Final probability of the emitted token.
    pub prob: f64,
    /// Total probability the step put on slot types.
    pub slot_mass: f64,
}

/// Record of one decoded response, in the JSON shape the chat client reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub tokens: Vec<String>,
    pub input_tokens: Vec<String>,
    pub slots: Vec<String>,
    /// `m x n_in`.
    pub state_attention: Vec<Vec<f64>>,
    pub entry_probs: Vec<f64>,
    pub entry_labels: Vec<String>,
    /// Per emitted token, weights over input positions.
    pub input_attention: Vec<Vec<f64>>,
    /// Per emitted token, weights over memory columns.
    pub memory_attention: Vec<Vec<f64>>,
    pub steps: Vec<StepSummary>,
}

impl DecodeTrace {
    pub(crate) fn start(model: &Model, input: &[String], kb: &KbTable, g: &Graph, ctx: &TurnContext) -> Self {
        Self {
            tokens: Vec::new(),
            input_tokens: input.to_vec(),
            slots: model.config.columns.clone(),
            state_attention: g.value(ctx.state.attention).to_rows(),
            entry_probs: g.value(ctx.kb.entry_probs).data().to_vec(),
            entry_labels: (0..kb.num_rows()).map(|k| kb.row_label(k)).collect(),
            input_attention: Vec::new(),
            memory_attention: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub(crate) fn push_step(&mut self, model: &Model, g: &Graph, step: &DecodeStep, token: String, prob: f64) {
        let ext = g.value(step.extended).data();
        let v = model.vocab.len();
        let slot_mass = if model.config.copy { ext[v..].iter().sum() } else { 0.0 };
        self.input_attention.push(g.value(step.input.weights).data().to_vec());
        self.memory_attention.push(g.value(step.memory.weights).data().to_vec());
        self.steps.push(StepSummary {
            token: token.clone(),
            prob,
            slot_mass,
        });
        self.tokens.push(token);
    }

    /// Entry with the highest probability (lowest index on ties).
    pub fn top_entry(&self) -> usize {
        super::argmax(&self.entry_probs)
    }

    pub fn response(&self) -> String {
        self.tokens.join(" ")
    }
}
