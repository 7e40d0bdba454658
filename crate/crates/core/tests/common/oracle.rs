//! The forward pass recomputed with plain loops over `Vec<f64>`.

use kbdialog::autodiff::{Graph, ParamStore};
use kbdialog::corpus::{Domain, KbTable, Vocabulary, SPECIALS};
use kbdialog::model::{decode_step, encode_turn, values, DecoderContext, DecoderState, Model, ModelConfig};

use super::{rng, toks};

type Mat = Vec<Vec<f64>>;

fn mat(model: &Model, name: &str) -> Mat {
    model.params.get(name).unwrap().to_rows()
}

fn matvec(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn lstm(model: &Model, prefix: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = h.len();
    let wx = mat(model, &format!("{prefix}.w_x"));
    let wh = mat(model, &format!("{prefix}.w_h"));
    let b = mat(model, &format!("{prefix}.bias"));
    let zx = matvec(&wx, x);
    let zh = matvec(&wh, h);
    let z: Vec<f64> = (0..4 * d).map(|r| zx[r] + zh[r] + b[r][0]).collect();
    let mut h2 = vec![0.0; d];
    let mut c2 = vec![0.0; d];
    for r in 0..d {
        let i = sigmoid(z[r]);
        let f = sigmoid(z[d + r]);
        let g = z[2 * d + r].tanh();
        let o = sigmoid(z[3 * d + r]);
        c2[r] = f * c[r] + i * g;
        h2[r] = o * c2[r].tanh();
    }
    (h2, c2)
}

/// Additive attention over `keys` (one vector each) from `query`.
fn attend(model: &Model, prefix: &str, keys: &[Vec<f64>], query: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w_key = mat(model, &format!("{prefix}.w_key"));
    let w_dec = mat(model, &format!("{prefix}.w_dec"));
    let v = &mat(model, &format!("{prefix}.v"))[0];
    let q = matvec(&w_dec, query);
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| {
            let pk = matvec(&w_key, k);
            let act: Vec<f64> = pk.iter().zip(&q).map(|(a, b)| (a + b).tanh()).collect();
            dot(v, &act)
        })
        .collect();
    let w = softmax(&scores);
    let d = query.len();
    let ctx = (0..d).map(|r| keys.iter().zip(&w).map(|(k, a)| a * k[r]).sum()).collect();
    (w, ctx)
}

struct Fixture {
    model: Model,
    kb: KbTable,
    input: Vec<String>,
}

/// d = 2, m = 2 slot columns, |T| = 3 input tokens, n = 3 entries. One KB
/// value (`zeta`) is outside the vocabulary.
fn fixture(seed: u64) -> Fixture {
    let columns = vec!["name".to_string(), "place".to_string()];
    let words = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(toks("where is alpha beta gamma north south"))
        .collect();
    let vocab = Vocabulary::from_parts(words, columns.clone()).unwrap();
    let config = ModelConfig {
        dim: 2,
        columns: columns.clone(),
        copy: true,
        dropout: 0.0,
        max_decode_len: 5,
    };
    let mut model = Model::new(config, vocab, seed).unwrap();
    let mut r = rng(seed);
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for n in names {
        let t = model.params.get(&n).unwrap();
        model.params.insert(n, ParamStore::uniform(t.rows(), t.cols(), 1.0, &mut r));
    }
    let rows = vec![toks("alpha north"), toks("beta south"), toks("zeta north")];
    let kb = KbTable::new(Domain::Navigate, columns, rows).unwrap();
    Fixture {
        model,
        kb,
        input: toks("where is beta"),
    }
}

struct Expected {
    a_in: Mat,
    entry_probs: Vec<f64>,
    sim: Vec<f64>,
    u_in: Mat,
    u_kb: Mat,
    memory: Mat,
    input_weights: Vec<f64>,
    memory_weights: Vec<f64>,
    extended: Vec<f64>,
    final_probs: Vec<f64>,
}

fn brute_force(f: &Fixture) -> Expected {
    let model = &f.model;
    let vocab = &model.vocab;
    let d = model.config.dim;
    let emb = mat(model, "embedding");

    let mut h = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut states = Vec::new();
    for t in &f.input {
        (h, c) = lstm(model, "encoder", &emb[vocab.id(t)], &h, &c);
        states.push(h.clone());
    }

    let w_a = mat(model, "state.w_a");
    let m = w_a[0].len();
    let mut a_in = Vec::new();
    let mut u_in_cols = Vec::new();
    for j in 0..m {
        let head: Vec<f64> = (0..d).map(|r| w_a[r][j]).collect();
        let a = softmax(&states.iter().map(|s| dot(&head, s)).collect::<Vec<_>>());
        u_in_cols.push((0..d).map(|r| states.iter().zip(&a).map(|(s, w)| w * s[r]).sum()).collect::<Vec<f64>>());
        a_in.push(a);
    }

    let w_c = mat(model, "kb.w_c");
    let cell = |value: &str, j: usize| -> Vec<f64> {
        let slot = vocab.len() + j;
        let x: Vec<f64> = emb[vocab.id(value)].iter().chain(&emb[slot]).cloned().collect();
        matvec(&w_c, &x).iter().map(|v| v.tanh()).collect()
    };
    let cells: Vec<Vec<Vec<f64>>> = f
        .kb
        .rows()
        .iter()
        .map(|row| row.iter().enumerate().map(|(j, v)| cell(v, j)).collect())
        .collect();
    let sim: Vec<f64> = cells
        .iter()
        .map(|row| row.iter().zip(&u_in_cols).map(|(e, u)| dot(e, u)).sum())
        .collect();
    let p = softmax(&sim);
    let u_kb_cols: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..d).map(|r| cells.iter().zip(&p).map(|(row, pk)| pk * row[j][r]).sum()).collect())
        .collect();
    let w_cat = mat(model, "kb.w_cat");
    let memory_cols: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let x: Vec<f64> = u_in_cols[j].iter().chain(&u_kb_cols[j]).cloned().collect();
            matvec(&w_cat, &x).iter().map(|v| v.tanh()).collect()
        })
        .collect();

    let (hd, _) = lstm(model, "decoder", &emb[vocab.bos()], &h, &c);
    let (input_weights, input_ctx) = attend(model, "attn_in", &states, &hd);
    let (memory_weights, memory_ctx) = attend(model, "attn_mem", &memory_cols, &hd);
    let features: Vec<f64> = hd.iter().chain(&input_ctx).chain(&memory_ctx).cloned().collect();
    let extended = softmax(&matvec(&mat(model, "output.w_o"), &features));

    let v = vocab.len();
    let mut final_probs = extended[..v].to_vec();
    final_probs.push(0.0); // zeta
    for (k, row) in f.kb.rows().iter().enumerate() {
        for (j, value) in row.iter().enumerate() {
            let target = vocab.get(value).unwrap_or(v);
            final_probs[target] += extended[v + j] * p[k];
        }
    }

    let transpose = |cols: &Mat| (0..d).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
    Expected {
        a_in,
        entry_probs: p,
        sim,
        u_in: transpose(&u_in_cols),
        u_kb: transpose(&u_kb_cols),
        memory: transpose(&memory_cols),
        input_weights,
        memory_weights,
        extended,
        final_probs,
    }
}

fn max_diff(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max)
}

fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().cloned().collect()
}

/// Largest absolute difference between the graph and the oracle for each
/// quantity of the fixture built from `seed`.
pub fn deviations(seed: u64) -> Vec<(&'static str, f64)> {
    let f = fixture(seed);
    let want = brute_force(&f);
    let table = f.model.table_ids(&f.kb).unwrap();
    assert_eq!(table.extra_values, vec!["zeta".to_string()]);
    let mut g = Graph::inference();
    let ctx = encode_turn(&mut g, &f.model, &f.input, &table).unwrap();
    let dctx = DecoderContext::new(&mut g, &f.model, ctx.encoder.states, ctx.kb.memory, ctx.kb.entry_probs, &table)
        .unwrap();
    let state = DecoderState {
        hidden: ctx.encoder.final_hidden,
        cell: ctx.encoder.final_cell,
    };
    let step = decode_step(&mut g, &f.model, &dctx, f.model.vocab.bos(), state).unwrap();
    vec![
        ("a_in", max_diff(&values(&g, ctx.state.attention), &flat(&want.a_in))),
        ("u_in", max_diff(&values(&g, ctx.state.u_in), &flat(&want.u_in))),
        ("sim", max_diff(&values(&g, ctx.kb.sim), &want.sim)),
        ("entry_probs", max_diff(&values(&g, ctx.kb.entry_probs), &want.entry_probs)),
        ("u_kb", max_diff(&values(&g, ctx.kb.u_kb), &flat(&want.u_kb))),
        ("memory", max_diff(&values(&g, ctx.kb.memory), &flat(&want.memory))),
        ("input attention", max_diff(&values(&g, step.input.weights), &want.input_weights)),
        ("memory attention", max_diff(&values(&g, step.memory.weights), &want.memory_weights)),
        ("extended", max_diff(&values(&g, step.extended), &want.extended)),
        ("final", max_diff(&values(&g, step.final_probs), &want.final_probs)),
    ]
}
