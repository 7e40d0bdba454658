use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dialogue::{Dialogue, Speaker};
use super::kb::{slot_token, KbTable};
use super::vocab::EOS;

/// One training or evaluation example: the flattened history before a car
/// turn and that turn as the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub dialogue_id: String,
    /// Index of the target turn within its dialogue.
    pub turn: usize,
    pub input: Vec<String>,
    /// Target tokens, terminated by `<eos>`.
    pub target: Vec<String>,
    pub kb: Arc<KbTable>,
    pub delexicalized: bool,
}

impl Instance {
    /// Target without the trailing `<eos>`.
    pub fn response(&self) -> &[String] {
        match self.target.last() {
            Some(t) if t == EOS => &self.target[..self.target.len() - 1],
            _ => &self.target,
        }
    }
}

/// Replaces every token equal to a cell value of `kb` with the slot type of
/// the first column that holds it. Idempotent.
pub fn delexicalize(tokens: &[String], kb: &KbTable) -> Vec<String> {
    tokens
        .iter()
        .map(|t| match kb.value_column(t) {
            Some(c) => slot_token(&kb.columns()[c]),
            None => t.clone(),
        })
        .collect()
}

/// Flattens the turns before `turn` into one sequence, each turn prefixed by
/// its speaker token.
pub fn flatten_history(dialogue: &Dialogue, turn: usize) -> Vec<String> {
    dialogue.turns[..turn]
        .iter()
        .flat_map(|t| std::iter::once(t.speaker.token().to_string()).chain(t.tokens.iter().cloned()))
        .collect()
}

/// One instance per car turn that has some history. With `augment`, targets
/// containing at least one KB value also yield a delexicalized copy.
pub fn build_instances(dialogues: &[Dialogue], augment: bool) -> Vec<Instance> {
    let mut out = Vec::new();
    for d in dialogues {
        for (i, turn) in d.turns.iter().enumerate() {
            if turn.speaker != Speaker::Car || i == 0 {
                continue;
            }
            let input = flatten_history(d, i);
            let mut target = turn.tokens.clone();
            target.push(EOS.to_string());
            let delex = if augment {
                Some(delexicalize(&target, &d.kb)).filter(|t| *t != target)
            } else {
                None
            };
            out.push(Instance {
                dialogue_id: d.id.clone(),
                turn: i,
                input: input.clone(),
                target,
                kb: Arc::clone(&d.kb),
                delexicalized: false,
            });
            if let Some(target) = delex {
                out.push(Instance {
                    dialogue_id: d.id.clone(),
                    turn: i,
                    input,
                    target,
                    kb: Arc::clone(&d.kb),
                    delexicalized: true,
                });
            }
        }
    }
    out
}
