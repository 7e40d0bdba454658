mod common;

use kbdialog::autodiff::{Axis, Graph, Tensor};
use kbdialog::checkpoint::Checkpoint;
use kbdialog::corpus::{build_instances, parse_kvret, synthetic, Dialogue, Domain, Split};
use kbdialog::evaluate::{evaluate, LexiconMode};
use kbdialog::training::{
    example_loss, init_model, prepare_examples, rl_loss, rl_loss_sampled, train, TrainConfig,
};
use kbdialog::Error;

use common::rng;

fn corpus(dialogues: usize, seed: u64) -> (Vec<Dialogue>, Vec<Dialogue>, Vec<Dialogue>) {
    let json = synthetic::generate(&synthetic::SyntheticConfig {
        dialogues,
        rows: 4,
        seed,
    });
    let (tr, dv, te) = synthetic::split(&json, dialogues / 10, dialogues / 10);
    (
        parse_kvret(&tr.to_string(), Domain::Navigate, Split::Train).unwrap(),
        parse_kvret(&dv.to_string(), Domain::Navigate, Split::Dev).unwrap(),
        parse_kvret(&te.to_string(), Domain::Navigate, Split::Test).unwrap(),
    )
}

fn small_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        rl_pretrain_epochs: 4,
        epochs: 4,
        patience: 10,
        min_token_count: 1,
        ..TrainConfig::synthetic()
    }
}

#[test]
fn joint_gradient_is_nll_plus_lambda_rl() {
    let (train_set, _, _) = corpus(10, 4);
    let config = TrainConfig {
        lambda: 0.37,
        ..small_config()
    };
    let model = init_model(&config, &train_set).unwrap();
    let examples = prepare_examples(&model, build_instances(&train_set, true)).unwrap();
    let grads = |cfg: &TrainConfig, rl_only: bool, ex| {
        let mut g = Graph::new(true, 1);
        let terms = example_loss(&mut g, &model, ex, cfg, rl_only, &mut rng(0)).unwrap();
        g.backward(terms.total).unwrap();
        g.param_grads()
    };
    let nll_cfg = TrainConfig {
        no_rl: true,
        ..config.clone()
    };
    for ex in examples.iter().take(6) {
        let joint = grads(&config, false, ex);
        let nll = grads(&nll_cfg, false, ex);
        let rl = grads(&config, true, ex);
        for (name, j) in joint.iter() {
            let zero = Tensor::zeros(j.rows(), j.cols());
            let n = nll.get(name).unwrap_or(&zero);
            let r = rl.get(name).unwrap_or(&zero);
            for i in 0..j.len() {
                let want = n.data()[i] + config.lambda * r.data()[i];
                assert!((j.data()[i] - want).abs() < 1e-12, "{name}[{i}]");
            }
        }
    }
}

#[test]
fn sampled_reinforce_is_unbiased() {
    let logits = vec![0.3, -1.2, 0.8, 0.1];
    let rewards = [3.0, 0.0, 1.0, 2.0];
    let baseline = 1.5;
    let exact = {
        let mut g = Graph::new(true, 0);
        let z = g.leaf(Tensor::column(logits.clone()));
        let p = g.softmax(z, Axis::Rows).unwrap();
        let l = rl_loss(&mut g, p, &rewards, baseline).unwrap();
        g.backward(l).unwrap();
        g.grad(z).unwrap().data().to_vec()
    };
    let samples = 10_000;
    let mut r = rng(99);
    let mut sum = vec![0.0; logits.len()];
    let mut sq = vec![0.0; logits.len()];
    for _ in 0..samples {
        let mut g = Graph::new(true, 0);
        let z = g.leaf(Tensor::column(logits.clone()));
        let p = g.softmax(z, Axis::Rows).unwrap();
        let l = rl_loss_sampled(&mut g, p, &rewards, baseline, &mut r).unwrap();
        g.backward(l).unwrap();
        for (i, v) in g.grad(z).unwrap().data().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let n = samples as f64;
    for i in 0..logits.len() {
        let mean = sum[i] / n;
        let var = sq[i] / n - mean * mean;
        let se = (var / n).sqrt();
        assert!((mean - exact[i]).abs() < 3.0 * se, "component {i}: {mean} vs {exact:?} (se {se})");
    }
}

#[test]
fn losses_fall_and_training_is_deterministic() {
    let (train_set, dev_set, _) = corpus(60, 8);
    let config = small_config();
    let a = train(&config, &train_set, &dev_set, None).unwrap();
    let phase = |p: u8| a.log.iter().filter(|m| m.phase == p).map(|m| m.loss).collect::<Vec<_>>();
    let (p1, p2) = (phase(1), phase(2));
    assert_eq!(p1.len(), 4);
    assert_eq!(p2.len(), 4);
    assert!(p1.last() < p1.first(), "{p1:?}");
    assert!(p2.last() < p2.first(), "{p2:?}");
    assert!(a.log.iter().filter(|m| m.phase == 2).all(|m| m.dev_micro_f1.is_some()));
    let b = train(&config, &train_set, &dev_set, None).unwrap();
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn pretraining_touches_only_the_state_and_kb_parameters() {
    let (train_set, _, _) = corpus(20, 5);
    let config = TrainConfig {
        epochs: 0,
        ..small_config()
    };
    let before = init_model(&config, &train_set).unwrap();
    let after = train(&config, &train_set, &[], None).unwrap().model;
    for (name, t) in before.params.iter() {
        let moved = t != after.params.get(name).unwrap();
        let trainable = kbdialog::model::names::in_pretraining_set(name);
        assert_eq!(moved, trainable, "{name}");
    }
}

#[test]
fn non_finite_loss_names_the_batch() {
    let (train_set, _, _) = corpus(20, 6);
    let config = TrainConfig {
        baseline: f64::NAN,
        ..small_config()
    };
    match train(&config, &train_set, &[], None) {
        Err(Error::Divergence { phase, batch }) => {
            assert_eq!(phase, 1);
            assert_eq!(batch, 0, "batch ids count from zero");
        }
        Err(e) => panic!("wrong error: {e}"),
        Ok(_) => panic!("training should diverge"),
    }
}

#[test]
fn checkpoint_round_trip_evaluates_identically() {
    let (train_set, _, test_set) = corpus(40, 9);
    let config = TrainConfig {
        rl_pretrain_epochs: 1,
        epochs: 1,
        ..small_config()
    };
    let model = train(&config, &train_set, &[], None).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::new(model.clone(), Some(Domain::Navigate), Some(config)).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.model, model);
    let instances = build_instances(&test_set, false);
    let a = evaluate(&model, &instances, LexiconMode::Scenario).unwrap();
    let b = evaluate(&loaded.model, &instances, LexiconMode::Scenario).unwrap();
    assert_eq!(a, b);
}
