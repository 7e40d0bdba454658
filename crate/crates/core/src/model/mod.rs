//! The dialogue model: LSTM encoder with per-slot state attention, soft KB
//! lookup, and an attention decoder that copies cell values through
//! slot-type tokens.

pub mod decoder;
pub mod encoder;
pub mod kb_attention;
mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::corpus::{KbTable, Vocabulary};
use crate::error::{Error, Result};

pub use decoder::{
    copy_redistribute, decode_step, input_attention, memory_attention, output_distribution,
    AttentionKeys, Attended, DecodeStep, DecoderContext, DecoderState,
};
pub use encoder::{encode, state_representation, EncoderOutput, StateRepresentation};
pub use kb_attention::{encode_table, query, EncodedTable, KbQuery, TableIds};
pub use trace::{DecodeTrace, StepSummary};

/// Parameter names.
pub mod names {
    pub const EMBEDDING: &str = "embedding";
    pub const ENCODER: &str = "encoder";
    pub const STATE_W_A: &str = "state.w_a";
    pub const KB_W_C: &str = "kb.w_c";
    pub const KB_W_CAT: &str = "kb.w_cat";
    pub const DECODER: &str = "decoder";
    pub const ATTN_IN: &str = "attn_in";
    pub const ATTN_MEM: &str = "attn_mem";
    pub const OUTPUT_W_O: &str = "output.w_o";

    /// Parameters updated during RL-only pretraining: the embeddings, the
    /// encoder, the state attention and the table encoder.
    pub fn in_pretraining_set(name: &str) -> bool {
        name == EMBEDDING || name.starts_with("encoder.") || name == STATE_W_A || name == KB_W_C
    }
}

pub const DEFAULT_MAX_DECODE_LEN: usize = 60;
const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding and hidden size.
    pub dim: usize,
    /// KB columns, in order; their count is the number of state heads.
    pub columns: Vec<String>,
    /// Copy through slot types. Off reproduces the no-copy ablation.
    pub copy: bool,
    pub dropout: f64,
    pub max_decode_len: usize,
}

impl ModelConfig {
    pub fn num_slots(&self) -> usize {
        self.columns.len()
    }
}

/// Parameters plus the vocabulary they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub vocab: Vocabulary,
}

impl Model {
    /// Fresh model: weights uniform in `[-0.08, 0.08]`, LSTM forget-gate
    /// biases at 1, other biases at 0.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::Contract("model dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Contract(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let expected: Vec<String> = config.columns.iter().map(|c| crate::corpus::slot_token(c)).collect();
        if vocab.slot_tokens() != expected.as_slice() {
            return Err(Error::Contract(format!(
                "vocabulary slots {:?} do not match model columns {:?}",
                vocab.slot_tokens(),
                config.columns
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let m = config.num_slots();
        let out_rows = if config.copy { vocab.extended_len() } else { vocab.len() };
        let mut params = ParamStore::new();
        let mut uniform = |r, c| ParamStore::uniform(r, c, INIT_SCALE, &mut rng);

        params.insert(names::EMBEDDING, uniform(vocab.extended_len(), d));
        for prefix in [names::ENCODER, names::DECODER] {
            params.insert(format!("{prefix}.w_x"), uniform(4 * d, d));
            params.insert(format!("{prefix}.w_h"), uniform(4 * d, d));
            let mut bias = Tensor::zeros(4 * d, 1);
            bias.data_mut()[d..2 * d].fill(1.0);
            params.insert(format!("{prefix}.bias"), bias);
        }
        params.insert(names::STATE_W_A, uniform(d, m));
        params.insert(names::KB_W_C, uniform(d, 2 * d));
        params.insert(names::KB_W_CAT, uniform(d, 2 * d));
        for prefix in [names::ATTN_IN, names::ATTN_MEM] {
            params.insert(format!("{prefix}.w_key"), uniform(d, d));
            params.insert(format!("{prefix}.w_dec"), uniform(d, d));
            params.insert(format!("{prefix}.v"), uniform(1, d));
        }
        params.insert(names::OUTPUT_W_O, uniform(out_rows, 3 * d));
        Ok(Self { config, params, vocab })
    }

    /// Checks that every parameter has the shape this config implies.
    pub fn validate(&self) -> Result<()> {
        let fresh = Model::new(self.config.clone(), self.vocab.clone(), 0)?;
        for (name, t) in fresh.params.iter() {
            let have = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if have.dims() != t.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    have.shape(),
                    t.shape()
                )));
            }
        }
        if fresh.params.len() != self.params.len() {
            return Err(Error::Checkpoint("unexpected extra parameters".into()));
        }
        Ok(())
    }

    pub fn table_ids(&self, kb: &KbTable) -> Result<TableIds> {
        TableIds::new(kb, &self.vocab)
    }
}

/// History encoding, state representation and KB lookup for one turn.
#[derive(Clone, Copy, Debug)]
pub struct TurnContext {
    pub encoder: EncoderOutput,
    pub state: StateRepresentation,
    pub table: EncodedTable,
    pub kb: KbQuery,
}

/// Everything upstream of the decoder for one turn.
pub fn encode_turn(g: &mut Graph, model: &Model, input: &[String], table: &TableIds) -> Result<TurnContext> {
    let ids = model.vocab.encode(input);
    let encoder = encode(g, model, &ids)?;
    let state = state_representation(g, model, encoder.states)?;
    let encoded = encode_table(g, model, table)?;
    let kb = query(g, model, &encoded, state.u_in)?;
    Ok(TurnContext {
        encoder,
        state,
        table: encoded,
        kb,
    })
}

/// Teacher-forced decoding of `target` (extended-space ids, `<eos>`-terminated).
pub fn teacher_forced(
    g: &mut Graph,
    model: &Model,
    ctx: &TurnContext,
    table: &TableIds,
    target: &[usize],
) -> Result<Vec<DecodeStep>> {
    let dctx = DecoderContext::new(g, model, ctx.encoder.states, ctx.kb.memory, ctx.kb.entry_probs, table)?;
    let mut state = DecoderState {
        hidden: ctx.encoder.final_hidden,
        cell: ctx.encoder.final_cell,
    };
    let mut prev = model.vocab.bos();
    let mut steps = Vec::with_capacity(target.len());
    for &y in target {
        let step = decode_step(g, model, &dctx, prev, state)?;
        state = step.state;
        steps.push(step);
        prev = y;
    }
    Ok(steps)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding of a response to `input` against `kb`.
pub fn decode_greedy(model: &Model, input: &[String], kb: &KbTable, max_len: usize) -> Result<DecodeTrace> {
    let table = model.table_ids(kb)?;
    let mut g = Graph::inference();
    let ctx = encode_turn(&mut g, model, input, &table)?;
    let dctx = DecoderContext::new(&mut g, model, ctx.encoder.states, ctx.kb.memory, ctx.kb.entry_probs, &table)?;
    let vocab = &model.vocab;
    let mut state = DecoderState {
        hidden: ctx.encoder.final_hidden,
        cell: ctx.encoder.final_cell,
    };
    let mut prev = vocab.bos();
    let mut trace = DecodeTrace::start(model, input, kb, &g, &ctx);
    for _ in 0..max_len {
        let step = decode_step(&mut g, model, &dctx, prev, state)?;
        state = step.state;
        let probs = g.value(step.final_probs).data();
        let best = argmax(probs);
        if best == vocab.eos() {
            break;
        }
        let token = if best < vocab.len() {
            vocab.token(best).to_string()
        } else {
            table.extra_values[best - vocab.len()].clone()
        };
        trace.push_step(model, &g, &step, token, probs[best]);
        prev = if best < vocab.len() { best } else { vocab.unk() };
    }
    Ok(trace)
}

/// Values of a `Var` as a flat vector; convenience for traces and tests.
pub fn values(g: &Graph, v: Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}
