//! Tape-style reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and `backward` is a single reverse sweep.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tensor::{matmul_a_bt_into, matmul_at_b_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Softmax normalization direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Each column sums to one.
    Rows,
    /// Each row sums to one.
    Cols,
}

/// Backward rule tag plus parent references.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddColumn(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var, Axis),
    Log(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Embed(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Reshape(Var),
    TileCols(Var, usize),
    KronEye(Var, usize),
    Pick(Var, Vec<usize>),
    CopyMix(Box<CopyMixArgs>),
}

#[derive(Clone, Debug)]
struct CopyMixArgs {
    extended: Var,
    entry_probs: Var,
    vocab: usize,
    slots: usize,
    targets: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation graph.
///
/// Build the forward pass with the op methods, call [`Graph::backward`] once
/// on a scalar, then read gradients with [`Graph::grad`] or
/// [`Graph::param_grads`].
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: HashMap<String, Var>,
    train: bool,
    rng: ChaCha8Rng,
    backward_done: bool,
}

impl Graph {
    pub fn new(train: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            backward_done: false,
        }
    }

    /// Evaluation-mode graph: dropout is the identity.
    pub fn inference() -> Self {
        Self::new(false, 0)
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a named parameter; one node per name per graph.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?
            .clone();
        let v = self.leaf(value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::Dimension {
                op,
                lhs: vec![da.0, da.1],
                rhs: vec![db.0, db.1],
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::matrix(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `m (r x c) + v (r x 1)` broadcast over columns.
    pub fn add_column(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.dims(m);
        let (vr, vc) = self.dims(v);
        if vr != r || vc != 1 {
            return Err(Error::Dimension {
                op: "add_column",
                lhs: vec![r, c],
                rhs: vec![vr, vc],
            });
        }
        let mut value = self.value(m).clone();
        let col = self.value(v).data().to_vec();
        for (i, row) in value.data_mut().chunks_mut(c).enumerate() {
            row.iter_mut().for_each(|x| *x += col[i]);
        }
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(value, Op::AddColumn(m, v), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let value = softmax_tensor(self.value(a), axis);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a, axis), rg))
    }

    /// Natural log with inputs clamped from below at `floor`.
    pub fn log(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|x| x.max(floor).ln());
        let rg = self.rg(a);
        self.push(value, Op::Log(a, floor), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = self.dims(*first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: vec![rows, cols],
                    rhs: vec![r, c],
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let rows = self.dims(*first).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: vec![rows, total],
                    rhs: vec![r, c],
                });
            }
            total += c;
        }
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            let c = v.cols();
            for i in 0..rows {
                data[i * total + offset..i * total + offset + c].copy_from_slice(v.row(i));
            }
            offset += c;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, total, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > r {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(len, c, data), Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let v = self.value(a);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, len, data), Op::SliceCols(a, start), rg))
    }

    pub fn column(&mut self, a: Var, index: usize) -> Result<Var> {
        self.slice_cols(a, index, 1)
    }

    /// Gathers rows `ids` of `table` (`V x e`) into the columns of an `e x n` matrix.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, width) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::Contract("embedding lookup of an empty sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Contract(format!(
                "token id {bad} outside embedding table of {vocab} rows"
            )));
        }
        let n = ids.len();
        let t = self.value(table);
        let mut data = vec![0.0; width * n];
        for (j, &id) in ids.iter().enumerate() {
            for (i, &x) in t.row(id).iter().enumerate() {
                data[i * n + j] = x;
            }
        }
        let rg = self.rg(table);
        Ok(self.push(Tensor::matrix(width, n, data), Op::Embed(table, ids.to_vec()), rg))
    }

    /// Inverted dropout: identity in evaluation mode or at rate zero.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::matrix(v.rows(), v.cols(), data);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Dropout(a, mask), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let v = self.value(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(1, c, out), Op::SumRows(a), rg)
    }

    /// `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, _) = self.dims(a);
        let v = self.value(a);
        let out = (0..r).map(|i| v.row(i).iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::column(out), Op::SumCols(a), rg)
    }

    /// Row-major reinterpretation.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a);
        if rows * cols != v.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: vec![v.rows(), v.cols()],
                rhs: vec![rows, cols],
            });
        }
        let value = Tensor::matrix(rows, cols, v.data().to_vec());
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Repeats the whole column block `times` times: `r x c -> r x (times*c)`.
    pub fn tile_cols(&mut self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Contract("tile_cols with zero repeats".into()));
        }
        let (r, c) = self.dims(a);
        let v = self.value(a);
        let mut data = Vec::with_capacity(r * c * times);
        for i in 0..r {
            for _ in 0..times {
                data.extend_from_slice(v.row(i));
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, c * times, data), Op::TileCols(a, times), rg))
    }

    /// `p (n x 1) -> p ⊗ I_m`, an `(n*m) x m` matrix.
    pub fn kron_eye(&mut self, p: Var, m: usize) -> Result<Var> {
        let (n, c) = self.dims(p);
        if c != 1 || m == 0 {
            return Err(Error::Dimension {
                op: "kron_eye",
                lhs: vec![n, c],
                rhs: vec![m],
            });
        }
        let pv = self.value(p).data().to_vec();
        let mut out = Tensor::zeros(n * m, m);
        for (k, &pk) in pv.iter().enumerate() {
            for t in 0..m {
                out.set(k * m + t, t, pk);
            }
        }
        let rg = self.rg(p);
        Ok(self.push(out, Op::KronEye(p, m), rg))
    }

    /// Gathers flat (row-major) entries into a column.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if indices.is_empty() {
            return Err(Error::Contract("pick of no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.len()) {
            return Err(Error::Dimension {
                op: "pick",
                lhs: vec![v.rows(), v.cols()],
                rhs: vec![bad],
            });
        }
        let data = indices.iter().map(|&i| v.data()[i]).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::column(data), Op::Pick(a, indices.to_vec()), rg))
    }

    /// Moves the mass of each slot-type entry of `extended` onto concrete
    /// cell values.
    ///
    /// `extended` is `(vocab + slots) x 1`, `entry_probs` is `rows x 1` and
    /// `targets[k * slots + s]` is the output index of the value that row `k`
    /// holds in column `s`. The output has `out_len >= vocab` entries; the
    /// first `vocab` carry the generation mass unchanged.
    pub fn copy_mix(
        &mut self,
        extended: Var,
        entry_probs: Var,
        vocab: usize,
        targets: &[usize],
        out_len: usize,
    ) -> Result<Var> {
        let (ext_len, ec) = self.dims(extended);
        let (rows, pc) = self.dims(entry_probs);
        if ec != 1 || pc != 1 || ext_len < vocab || out_len < vocab {
            return Err(Error::Dimension {
                op: "copy_mix",
                lhs: vec![ext_len, ec],
                rhs: vec![rows, pc],
            });
        }
        let slots = ext_len - vocab;
        if targets.len() != rows * slots {
            return Err(Error::Contract(format!(
                "copy_mix expects {} targets for {rows} rows x {slots} slots, got {}",
                rows * slots,
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= out_len) {
            return Err(Error::Contract(format!(
                "copy target {bad} outside output space of {out_len}"
            )));
        }
        let ext = self.value(extended).data();
        let p = self.value(entry_probs).data();
        let mut out = vec![0.0; out_len];
        out[..vocab].copy_from_slice(&ext[..vocab]);
        for k in 0..rows {
            for s in 0..slots {
                out[targets[k * slots + s]] += ext[vocab + s] * p[k];
            }
        }
        let rg = self.rg(extended) || self.rg(entry_probs);
        let mix = CopyMixArgs {
            extended,
            entry_probs,
            vocab,
            slots,
            targets: targets.to_vec(),
        };
        Ok(self.push(Tensor::column(out), Op::CopyMix(Box::new(mix)), rg))
    }

    /// Reverse sweep from a scalar loss. A graph supports exactly one call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this graph; build a new graph".into(),
            ));
        }
        let (r, c) = self.dims(loss);
        if (r, c) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape [{r}, {c}]"
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (p, q) = va.dims();
                let r = vb.cols();
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    matmul_a_bt_into(g.data(), vb.data(), ga.data_mut(), p, r, q);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    matmul_at_b_into(va.data(), g.data(), gb.data_mut(), p, q, r);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    ga.axpy(1.0, &g.transpose());
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    ga.axpy(1.0, g);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    gb.axpy(1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    ga.axpy(1.0, g);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    gb.axpy(-1.0, g);
                }
            }
            Op::AddColumn(m, v) => {
                if let Some(gm) = grad_slot(nodes, grads, *m) {
                    gm.axpy(1.0, g);
                }
                if let Some(gv) = grad_slot(nodes, grads, *v) {
                    for (r, acc) in gv.data_mut().iter_mut().enumerate() {
                        *acc += g.row(r).iter().sum::<f64>();
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    for ((acc, gi), bi) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *acc += gi * bi;
                    }
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    for ((acc, gi), ai) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *acc += gi * ai;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    ga.axpy(*f, g);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    for ((acc, gi), y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *acc += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    for ((acc, gi), y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *acc += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax(a, axis) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    softmax_backward(out, g, ga, *axis);
                }
            }
            Op::Log(a, floor) => {
                let va = &nodes[a.0].value;
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    for ((acc, gi), x) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        if *x > *floor {
                            *acc += gi / x;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let cols = out.cols();
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = grad_slot(nodes, grads, *p) {
                        for (acc, gi) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                            *acc += gi;
                        }
                    }
                    offset += len;
                    debug_assert_eq!(len % cols, 0);
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let (rows, c) = nodes[p.0].value.dims();
                    if let Some(gp) = grad_slot(nodes, grads, *p) {
                        for r in 0..rows {
                            let src = &g.data()[r * total + offset..r * total + offset + c];
                            for (acc, gi) in gp.data_mut()[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *acc += gi;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceRows(a, start) => {
                let c = out.cols();
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    let dst = &mut ga.data_mut()[start * c..start * c + g.len()];
                    for (acc, gi) in dst.iter_mut().zip(g.data()) {
                        *acc += gi;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, len) = out.dims();
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    let c = ga.cols();
                    for r in 0..rows {
                        for j in 0..len {
                            ga.data_mut()[r * c + start + j] += g.data()[r * len + j];
                        }
                    }
                }
            }
            Op::Embed(table, ids) => {
                let n = ids.len();
                if let Some(gt) = grad_slot(nodes, grads, *table) {
                    let width = gt.cols();
                    for (j, &id) in ids.iter().enumerate() {
                        let row = &mut gt.data_mut()[id * width..(id + 1) * width];
                        for (i, acc) in row.iter_mut().enumerate() {
                            *acc += g.data()[i * n + j];
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    for ((acc, gi), m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *acc += gi * m;
                    }
                }
            }
            Op::Sum(a) => {
                let gi = g.item();
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    ga.data_mut().iter_mut().for_each(|acc| *acc += gi);
                }
            }
            Op::SumRows(a) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    let c = ga.cols();
                    for (idx, acc) in ga.data_mut().iter_mut().enumerate() {
                        *acc += g.data()[idx % c];
                    }
                }
            }
            Op::SumCols(a) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    let c = ga.cols();
                    for (idx, acc) in ga.data_mut().iter_mut().enumerate() {
                        *acc += g.data()[idx / c];
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    for (acc, gi) in ga.data_mut().iter_mut().zip(g.data()) {
                        *acc += gi;
                    }
                }
            }
            Op::TileCols(a, times) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    let (rows, c) = ga.dims();
                    let total = c * times;
                    for r in 0..rows {
                        for k in 0..*times {
                            for t in 0..c {
                                ga.data_mut()[r * c + t] += g.data()[r * total + k * c + t];
                            }
                        }
                    }
                }
            }
            Op::KronEye(p, m) => {
                if let Some(gp) = grad_slot(nodes, grads, *p) {
                    for (k, acc) in gp.data_mut().iter_mut().enumerate() {
                        for t in 0..*m {
                            *acc += g.get(k * m + t, t);
                        }
                    }
                }
            }
            Op::Pick(a, indices) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    for (j, &idx) in indices.iter().enumerate() {
                        ga.data_mut()[idx] += g.data()[j];
                    }
                }
            }
            Op::CopyMix(mix) => {
                let ext = nodes[mix.extended.0].value.data().to_vec();
                let p = nodes[mix.entry_probs.0].value.data().to_vec();
                let (vocab, slots) = (mix.vocab, mix.slots);
                let gd = g.data();
                if let Some(ge) = grad_slot(nodes, grads, mix.extended) {
                    let ged = ge.data_mut();
                    for y in 0..vocab {
                        ged[y] += gd[y];
                    }
                    for s in 0..slots {
                        let mut acc = 0.0;
                        for (k, pk) in p.iter().enumerate() {
                            acc += pk * gd[mix.targets[k * slots + s]];
                        }
                        ged[vocab + s] += acc;
                    }
                }
                if let Some(gp) = grad_slot(nodes, grads, mix.entry_probs) {
                    for (k, acc) in gp.data_mut().iter_mut().enumerate() {
                        for s in 0..slots {
                            *acc += ext[vocab + s] * gd[mix.targets[k * slots + s]];
                        }
                    }
                }
            }
        }
    }

    /// Gradients of every parameter bound through [`Graph::param`] that
    /// received one.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(name, &v)| self.grad(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

fn grad_slot<'a>(nodes: &[Node], grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    let (r, c) = n.value.dims();
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
}

pub fn softmax_tensor(x: &Tensor, axis: Axis) -> Tensor {
    let (r, c) = x.dims();
    let mut out = x.clone();
    let d = out.data_mut();
    match axis {
        Axis::Cols => {
            for row in d.chunks_mut(c) {
                softmax_slice(row);
            }
        }
        Axis::Rows => {
            let mut buf = vec![0.0; r];
            for j in 0..c {
                for i in 0..r {
                    buf[i] = d[i * c + j];
                }
                softmax_slice(&mut buf);
                for i in 0..r {
                    d[i * c + j] = buf[i];
                }
            }
        }
    }
    out
}

fn softmax_slice(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn softmax_backward(y: &Tensor, g: &Tensor, ga: &mut Tensor, axis: Axis) {
    let (r, c) = y.dims();
    let (yd, gd) = (y.data(), g.data());
    let acc = ga.data_mut();
    match axis {
        Axis::Cols => {
            for i in 0..r {
                let range = i * c..(i + 1) * c;
                let dot: f64 = yd[range.clone()].iter().zip(&gd[range.clone()]).map(|(a, b)| a * b).sum();
                for idx in range {
                    acc[idx] += yd[idx] * (gd[idx] - dot);
                }
            }
        }
        Axis::Rows => {
            for j in 0..c {
                let dot: f64 = (0..r).map(|i| yd[i * c + j] * gd[i * c + j]).sum();
                for i in 0..r {
                    let idx = i * c + j;
                    acc[idx] += yd[idx] * (gd[idx] - dot);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::column(vec![0.0; 3]));
        let y = g.softmax(x, Axis::Rows).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tanh_of_zero() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.tanh(x);
        assert_eq!(g.value(y).item(), 0.0);
    }

    #[test]
    fn eval_dropout_is_identity() {
        let mut g = Graph::new(false, 7);
        let x = g.leaf(Tensor::column(vec![1.0, -2.0, 3.0]));
        let y = g.dropout(x, 0.75).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn train_dropout_scales_survivors() {
        let mut g = Graph::new(true, 7);
        let x = g.leaf(Tensor::filled(50, 4, 1.0));
        let y = g.dropout(x, 0.75).unwrap();
        for &v in g.value(y).data() {
            assert!(v == 0.0 || (v - 4.0).abs() < 1e-12);
        }
        assert!(g.dropout(x, 1.0).is_err());
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new(true, 0);
        let x = g.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn shared_node_sums_paths() {
        // f = sum(x * x) + sum(3x)  =>  df/dx = 2x + 3
        let mut g = Graph::new(true, 0);
        let x = g.leaf(Tensor::column(vec![1.0, -2.0]));
        let sq = g.mul(x, x).unwrap();
        let tri = g.scale(x, 3.0);
        let total = g.add(sq, tri).unwrap();
        let loss = g.sum(total);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[5.0, -1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_repeats() {
        let mut g = Graph::new(true, 0);
        let x = g.leaf(Tensor::column(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new(true, 0);
        let c = g.constant(Tensor::column(vec![1.0, 2.0]));
        let x = g.leaf(Tensor::column(vec![3.0, 4.0]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn copy_mix_moves_slot_mass() {
        let mut g = Graph::inference();
        // vocab of 2 + 1 slot; two rows whose slot value lands on index 2 and 0.
        let ext = g.constant(Tensor::column(vec![0.2, 0.3, 0.5]));
        let p = g.constant(Tensor::column(vec![0.4, 0.6]));
        let out = g.copy_mix(ext, p, 2, &[2, 0], 3).unwrap();
        let v = g.value(out).data();
        assert!((v[0] - (0.2 + 0.5 * 0.6)).abs() < 1e-15);
        assert!((v[1] - 0.3).abs() < 1e-15);
        assert!((v[2] - 0.5 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_axis_is_an_error() {
        let mut g = Graph::inference();
        let t = g.constant(Tensor::zeros(3, 2));
        assert!(g.embed(t, &[]).is_err());
        assert!(g.slice_cols(t, 1, 0).is_err());
    }
}
