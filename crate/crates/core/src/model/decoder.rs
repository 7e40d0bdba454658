use super::encoder::{lstm_step, LstmWeights};
use super::kb_attention::TableIds;
use super::{names, Model};
use crate::autodiff::{Axis, Graph, Var};
use crate::error::Result;

/// Keys of an additive attention with their projection precomputed:
/// `score_i = v . tanh(W_key k_i + W_dec h)`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionKeys {
    keys: Var,
    projected: Var,
    w_dec: Var,
    v: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `d x 1` weighted sum of keys.
    pub context: Var,
    /// `1 x n` attention weights.
    pub weights: Var,
}

impl AttentionKeys {
    fn new(g: &mut Graph, model: &Model, prefix: &str, keys: Var) -> Result<Self> {
        let w_key = g.param(&model.params, &format!("{prefix}.w_key"))?;
        let w_dec = g.param(&model.params, &format!("{prefix}.w_dec"))?;
        let v = g.param(&model.params, &format!("{prefix}.v"))?;
        let projected = g.matmul(w_key, keys)?;
        Ok(Self {
            keys,
            projected,
            w_dec,
            v,
        })
    }

    /// Input attention over encoder states.
    pub fn input(g: &mut Graph, model: &Model, states: Var) -> Result<Self> {
        Self::new(g, model, names::ATTN_IN, states)
    }

    /// Memory attention over the columns of the fused memory.
    pub fn memory(g: &mut Graph, model: &Model, memory: Var) -> Result<Self> {
        Self::new(g, model, names::ATTN_MEM, memory)
    }

    pub fn attend(&self, g: &mut Graph, hidden: Var) -> Result<Attended> {
        let q = g.matmul(self.w_dec, hidden)?;
        let pre = g.add_column(self.projected, q)?;
        let act = g.tanh(pre);
        let scores = g.matmul(self.v, act)?;
        let weights = g.softmax(scores, Axis::Cols)?;
        let wt = g.transpose(weights);
        let context = g.matmul(self.keys, wt)?;
        Ok(Attended { context, weights })
    }
}

/// `c^IN_t`: attention of the decoder state over the encoder states.
pub fn input_attention(g: &mut Graph, model: &Model, states: Var, hidden: Var) -> Result<Attended> {
    AttentionKeys::input(g, model, states)?.attend(g, hidden)
}

/// `c^MEM_t`: attention of the decoder state over the memory columns.
pub fn memory_attention(g: &mut Graph, model: &Model, memory: Var, hidden: Var) -> Result<Attended> {
    AttentionKeys::memory(g, model, memory)?.attend(g, hidden)
}

/// `softmax(W_O [h; c_in; c_mem])` over words and, with copying enabled,
/// slot types.
pub fn output_distribution(
    g: &mut Graph,
    model: &Model,
    hidden: Var,
    input_ctx: Var,
    memory_ctx: Var,
) -> Result<Var> {
    let w_o = g.param(&model.params, names::OUTPUT_W_O)?;
    let features = g.concat_rows(&[hidden, input_ctx, memory_ctx])?;
    let logits = g.matmul(w_o, features)?;
    g.softmax(logits, Axis::Rows)
}

/// Moves each slot type's probability onto the values of that column,
/// weighted by the entry distribution. Output covers `V` followed by the
/// scenario's out-of-vocabulary values.
pub fn copy_redistribute(g: &mut Graph, extended: Var, entry_probs: Var, table: &TableIds) -> Result<Var> {
    g.copy_mix(
        extended,
        entry_probs,
        table.vocab_size,
        &table.copy_targets,
        table.output_len(),
    )
}

/// Everything the decoder reads that stays fixed during one response.
pub struct DecoderContext<'t> {
    pub input_keys: AttentionKeys,
    pub memory_keys: AttentionKeys,
    pub entry_probs: Var,
    pub table: &'t TableIds,
    lstm: LstmWeights,
    embedding: Var,
}

impl<'t> DecoderContext<'t> {
    pub fn new(
        g: &mut Graph,
        model: &Model,
        states: Var,
        memory: Var,
        entry_probs: Var,
        table: &'t TableIds,
    ) -> Result<Self> {
        Ok(Self {
            input_keys: AttentionKeys::input(g, model, states)?,
            memory_keys: AttentionKeys::memory(g, model, memory)?,
            entry_probs,
            table,
            lstm: LstmWeights::bind(g, model, names::DECODER)?,
            embedding: g.param(&model.params, names::EMBEDDING)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
}

/// Outputs of one decoding step.
#[derive(Clone, Copy, Debug)]
pub struct DecodeStep {
    pub state: DecoderState,
    pub hidden: Var,
    pub input: Attended,
    pub memory: Attended,
    /// Distribution over `V ∪ slots` (over `V` alone without copying).
    pub extended: Var,
    /// Distribution over `V ∪ cell values` (equal to `extended` without copying).
    pub final_probs: Var,
}

/// Feeds `prev` (an extended-space id) through the decoder LSTM and reads
/// out the next-token distributions.
pub fn decode_step(
    g: &mut Graph,
    model: &Model,
    ctx: &DecoderContext<'_>,
    prev: usize,
    state: DecoderState,
) -> Result<DecodeStep> {
    let rate = model.config.dropout;
    let x = g.embed(ctx.embedding, &[prev])?;
    let x = g.dropout(x, rate)?;
    let x_proj = g.matmul(ctx.lstm.w_x, x)?;
    let (h, c) = lstm_step(g, &ctx.lstm, x_proj, state.hidden, state.cell, model.config.dim)?;
    let out = g.dropout(h, rate)?;
    let input = ctx.input_keys.attend(g, out)?;
    let memory = ctx.memory_keys.attend(g, out)?;
    let extended = output_distribution(g, model, out, input.context, memory.context)?;
    let final_probs = if model.config.copy {
        copy_redistribute(g, extended, ctx.entry_probs, ctx.table)?
    } else {
        extended
    };
    Ok(DecodeStep {
        state: DecoderState { hidden: h, cell: c },
        hidden: out,
        input,
        memory,
        extended,
        final_probs,
    })
}
