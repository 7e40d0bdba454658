//! Table encoder and soft entry lookup.

use super::{names, Model};
use crate::autodiff::{Axis, Graph, Var};
use crate::corpus::{slot_token, KbTable, Vocabulary};
use crate::error::{Error, Result};

/// Integer view of a KB against a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TableIds {
    pub rows: usize,
    pub cols: usize,
    /// Embedding ids of the cells, row-major (`k * cols + t`).
    pub value_ids: Vec<usize>,
    /// Embedding ids of the column names (their slot tokens).
    pub column_ids: Vec<usize>,
    /// Output index each cell copies into, row-major.
    pub copy_targets: Vec<usize>,
    /// Cell values outside the word vocabulary; value `i` has output index `|V| + i`.
    pub extra_values: Vec<String>,
    pub vocab_size: usize,
}

impl TableIds {
    pub fn new(kb: &KbTable, vocab: &Vocabulary) -> Result<Self> {
        if kb.is_empty() {
            return Err(Error::Contract("KB has no entries".into()));
        }
        let column_ids = kb
            .columns()
            .iter()
            .map(|c| {
                vocab
                    .slot_index(&slot_token(c))
                    .map(|s| vocab.len() + s)
                    .ok_or_else(|| Error::Contract(format!("KB column `{c}` is not a known slot type")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut value_ids = Vec::with_capacity(kb.num_rows() * kb.num_columns());
        let mut copy_targets = Vec::with_capacity(value_ids.capacity());
        let mut extra_values: Vec<String> = Vec::new();
        for row in kb.rows() {
            for value in row {
                value_ids.push(vocab.id(value));
                let target = match vocab.get(value) {
                    Some(id) => id,
                    None => {
                        let pos = extra_values.iter().position(|v| v == value).unwrap_or_else(|| {
                            extra_values.push(value.clone());
                            extra_values.len() - 1
                        });
                        vocab.len() + pos
                    }
                };
                copy_targets.push(target);
            }
        }
        Ok(Self {
            rows: kb.num_rows(),
            cols: kb.num_columns(),
            value_ids,
            column_ids,
            copy_targets,
            extra_values,
            vocab_size: vocab.len(),
        })
    }

    /// Size of the per-scenario output space `V ∪ {cell values}`.
    pub fn output_len(&self) -> usize {
        self.vocab_size + self.extra_values.len()
    }

    /// Output index of `token` in this scenario's space, if it has one.
    pub fn output_index(&self, vocab: &Vocabulary, token: &str) -> Option<usize> {
        vocab.get(token).or_else(|| {
            self.extra_values
                .iter()
                .position(|v| v == token)
                .map(|p| self.vocab_size + p)
        })
    }
}

/// Cell representations of all entries.
#[derive(Clone, Copy, Debug)]
pub struct EncodedTable {
    /// `d x (rows * cols)`; column `k * cols + t` is cell `c_{k,t}`.
    pub cells: Var,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct KbQuery {
    /// `rows x 1` similarity scores.
    pub sim: Var,
    /// `rows x 1` entry distribution.
    pub entry_probs: Var,
    /// `d x m` expected entry representation.
    pub u_kb: Var,
    /// `d x m` fused memory.
    pub memory: Var,
}

/// `c = tanh(W_C [emb(value); emb(column)])` for every cell.
pub fn encode_table(g: &mut Graph, model: &Model, table: &TableIds) -> Result<EncodedTable> {
    let m = model.config.columns.len();
    if table.cols != m {
        return Err(Error::Contract(format!(
            "KB has {} columns but the model was built for {m}",
            table.cols
        )));
    }
    if table.rows == 0 {
        return Err(Error::Contract("KB has no entries".into()));
    }
    let emb = g.param(&model.params, names::EMBEDDING)?;
    let w_c = g.param(&model.params, names::KB_W_C)?;
    let column_ids: Vec<usize> = (0..table.rows).flat_map(|_| table.column_ids.iter().copied()).collect();
    let values = g.embed(emb, &table.value_ids)?;
    let columns = g.embed(emb, &column_ids)?;
    let stacked = g.concat_rows(&[values, columns])?;
    let proj = g.matmul(w_c, stacked)?;
    let cells = g.tanh(proj);
    Ok(EncodedTable {
        cells,
        rows: table.rows,
        cols: table.cols,
    })
}

/// Scores every entry by `sum_t c_{k,t} . u_t`, normalizes over entries and
/// fuses the expected entry with the dialogue state.
pub fn query(g: &mut Graph, model: &Model, table: &EncodedTable, u_in: Var) -> Result<KbQuery> {
    let (rows, cols) = (table.rows, table.cols);
    let tiled = g.tile_cols(u_in, rows)?;
    let prod = g.mul(table.cells, tiled)?;
    let dots = g.sum_rows(prod);
    let per_cell = g.reshape(dots, rows, cols)?;
    let sim = g.sum_cols(per_cell);
    let entry_probs = g.softmax(sim, Axis::Rows)?;
    let selector = g.kron_eye(entry_probs, cols)?;
    let u_kb = g.matmul(table.cells, selector)?;
    let cat = g.concat_rows(&[u_in, u_kb])?;
    let w_cat = g.param(&model.params, names::KB_W_CAT)?;
    let fused = g.matmul(w_cat, cat)?;
    let memory = g.tanh(fused);
    Ok(KbQuery {
        sim,
        entry_probs,
        u_kb,
        memory,
    })
}
