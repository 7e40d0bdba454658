#![allow(dead_code)]

pub mod bleu_cases;
pub mod normalization;
pub mod oracle;

use kbdialog::autodiff::{Graph, ParamStore, Tensor, Var};
use std::sync::Arc;

use kbdialog::corpus::{Domain, Instance, KbTable, Vocabulary, SPECIALS};
use kbdialog::model::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Below this magnitude gradients are compared absolutely.
const FLOOR: f64 = 1e-4;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces a matrix to a scalar through fixed random weights, so every
/// entry receives a distinct upstream gradient.
pub fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Var {
    let (r, c) = g.value(x).dims();
    let w = g.constant(random(&mut rng(seed), r, c));
    let prod = g.mul(x, w).unwrap();
    g.sum(prod)
}

/// Max relative error between backward and central differences over every
/// entry of every input leaf.
pub fn check_leaves(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |values: &[Tensor]| {
        let mut g = Graph::new(true, 7);
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars);
        (g, vars, out)
    };
    let (mut g, vars, out) = eval(inputs);
    g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += EPS;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= EPS;
            let (gp, _, op) = eval(&plus);
            let (gm, _, om) = eval(&minus);
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * EPS);
            worst = worst.max(rel_error(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Same as [`check_leaves`] but perturbing named model parameters.
pub fn check_params(model: &Model, only: Option<&[&str]>, build: impl Fn(&mut Graph, &Model) -> Var) -> f64 {
    let mut g = Graph::new(true, 7);
    let out = build(&mut g, model);
    g.backward(out).unwrap();
    let grads = g.param_grads();
    let names: Vec<String> = model
        .params
        .names()
        .filter(|n| only.map_or(true, |o| o.contains(n)))
        .map(str::to_string)
        .collect();
    assert!(!names.is_empty());
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for name in names {
        let len = model.params.get(&name).unwrap().len();
        for j in 0..len {
            let base = model.params.get(&name).unwrap().data()[j];
            let mut loss_at = |x: f64| {
                probe.params.get_mut(&name).unwrap().data_mut()[j] = x;
                let mut g = Graph::new(true, 7);
                let out = build(&mut g, &probe);
                g.value(out).item()
            };
            let numeric = (loss_at(base + EPS) - loss_at(base - EPS)) / (2.0 * EPS);
            probe.params.get_mut(&name).unwrap().data_mut()[j] = base;
            let analytic = grads.get(&name).map_or(0.0, |t| t.data()[j]);
            worst = worst.max(rel_error(analytic, numeric));
        }
    }
    worst
}

pub fn navigation_columns() -> Vec<String> {
    Domain::Navigate.columns().iter().map(|c| c.to_string()).collect()
}

pub fn gas_station_kb() -> KbTable {
    let rows = [
        "sigona_farmers_market car_collision_nearby grocery_store 638_amherst_st 3_miles",
        "valero road_block_nearby gas_station 200_alester_ave 2_miles",
        "teavana road_block_nearby coffee_or_tea_place 145_amherst_st 1_miles",
    ];
    KbTable::for_domain(Domain::Navigate, rows.iter().map(|r| toks(r)).collect()).unwrap()
}

pub fn tiny_vocab() -> Vocabulary {
    let words = "address to the is located at . valero gas_station 200_alester_ave 2_miles road_block_nearby";
    let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(toks(words)).collect();
    Vocabulary::from_parts(tokens, navigation_columns()).unwrap()
}

pub fn tiny_model(dim: usize, copy: bool, dropout: f64, seed: u64) -> Model {
    let config = ModelConfig {
        dim,
        columns: navigation_columns(),
        copy,
        dropout,
        max_decode_len: 10,
    };
    let mut model = Model::new(config, tiny_vocab(), seed).unwrap();
    // Larger weights than the default init so gradients are not all tiny.
    let mut r = rng(seed + 100);
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for n in names {
        let t = model.params.get(&n).unwrap();
        let fresh = ParamStore::uniform(t.rows(), t.cols(), 0.5, &mut r);
        model.params.insert(n, fresh);
    }
    model
}

/// A turn of the gas-station dialogue with `target` as the gold response.
pub fn gas_station_instance(target: &str, delexicalized: bool) -> Instance {
    let mut target = toks(target);
    target.push("<eos>".into());
    Instance {
        dialogue_id: "fixture".into(),
        turn: 1,
        input: toks("<driver> address to the gas_station ."),
        target,
        kb: Arc::new(gas_station_kb()),
        delexicalized,
    }
}
