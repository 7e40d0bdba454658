use super::{names, Model};
use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Encoder hidden states plus the final LSTM carry.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `d x n` matrix, one column per input token.
    pub states: Var,
    pub final_hidden: Var,
    pub final_cell: Var,
    pub len: usize,
}

/// Per-slot summaries of the history.
#[derive(Clone, Copy, Debug)]
pub struct StateRepresentation {
    /// `d x m`; column `k` is the slot-`k` weighted average of encoder states.
    pub u_in: Var,
    /// `m x n`; row `k` is slot `k`'s attention over input positions.
    pub attention: Var,
}

pub(crate) struct LstmWeights {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
}

impl LstmWeights {
    pub fn bind(g: &mut Graph, model: &Model, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_x: g.param(&model.params, &format!("{prefix}.w_x"))?,
            w_h: g.param(&model.params, &format!("{prefix}.w_h"))?,
            bias: g.param(&model.params, &format!("{prefix}.bias"))?,
        })
    }
}

/// One LSTM step given the already projected input `W_x x` (gate order i, f, g, o).
pub(crate) fn lstm_step(
    g: &mut Graph,
    w: &LstmWeights,
    x_proj: Var,
    hidden: Var,
    cell: Var,
    dim: usize,
) -> Result<(Var, Var)> {
    let rec = g.matmul(w.w_h, hidden)?;
    let z = g.add(x_proj, rec)?;
    let z = g.add(z, w.bias)?;
    let zi = g.slice_rows(z, 0, dim)?;
    let zf = g.slice_rows(z, dim, dim)?;
    let zg = g.slice_rows(z, 2 * dim, dim)?;
    let zo = g.slice_rows(z, 3 * dim, dim)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, cell)?;
    let write = g.mul(i, cand)?;
    let cell = g.add(keep, write)?;
    let squashed = g.tanh(cell);
    let hidden = g.mul(o, squashed)?;
    Ok((hidden, cell))
}

/// Runs the encoder LSTM over token ids. Dropout (training graphs only)
/// applies to the embedded inputs and to the emitted hidden states.
pub fn encode(g: &mut Graph, model: &Model, ids: &[usize]) -> Result<EncoderOutput> {
    if ids.is_empty() {
        return Err(Error::Contract("cannot encode an empty input sequence".into()));
    }
    let dim = model.config.dim;
    let rate = model.config.dropout;
    let table = g.param(&model.params, names::EMBEDDING)?;
    let w = LstmWeights::bind(g, model, names::ENCODER)?;

    let x = g.embed(table, ids)?;
    let x = g.dropout(x, rate)?;
    let x_proj = g.matmul(w.w_x, x)?;

    let mut hidden = g.constant(Tensor::zeros(dim, 1));
    let mut cell = g.constant(Tensor::zeros(dim, 1));
    let mut outputs = Vec::with_capacity(ids.len());
    for t in 0..ids.len() {
        let xt = g.column(x_proj, t)?;
        let (h, c) = lstm_step(g, &w, xt, hidden, cell, dim)?;
        hidden = h;
        cell = c;
        outputs.push(h);
    }
    let states = g.concat_cols(&outputs)?;
    let states = g.dropout(states, rate)?;
    Ok(EncoderOutput {
        states,
        final_hidden: hidden,
        final_cell: cell,
        len: ids.len(),
    })
}

/// `m` attention heads over the encoder states, one per KB column.
pub fn state_representation(g: &mut Graph, model: &Model, states: Var) -> Result<StateRepresentation> {
    let w_a = g.param(&model.params, names::STATE_W_A)?;
    let heads = g.transpose(w_a);
    let scores = g.matmul(heads, states)?;
    let attention = g.softmax(scores, Axis::Cols)?;
    let weights = g.transpose(attention);
    let u_in = g.matmul(states, weights)?;
    Ok(StateRepresentation { u_in, attention })
}
