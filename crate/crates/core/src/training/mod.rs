//! Supervised and reinforcement objectives and the two-phase training loop.

mod config;
mod loss;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, Adam, Graph, ParamStore, Tensor};
use crate::corpus::{build_instances, Dialogue, Instance, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, LexiconMode};
use crate::model::{encode_turn, names, teacher_forced, Model, ModelConfig, TableIds};

pub use config::TrainConfig;
pub use loss::{compute_rewards, instance_rewards, nll_loss, rl_loss, rl_loss_sampled, NllLoss, RewardTable, PROB_FLOOR};

/// Gold token of one decoding step and the distribution it is scored under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gold {
    /// Index into the copy-resolved output space.
    Final(usize),
    /// Slot-type index into `V ∪ slots`, for delexicalized targets.
    Extended(usize),
}

/// An instance resolved against a vocabulary, ready for repeated forward passes.
#[derive(Clone, Debug)]
pub struct Example {
    pub instance: Instance,
    pub table: TableIds,
    /// Decoder inputs after `<bos>`, in embedding-id space.
    pub feed: Vec<usize>,
    pub gold: Vec<Gold>,
    pub rewards: Vec<f64>,
}

impl Example {
    /// `rewards` may be given to share the lexicalized turn's rewards with a
    /// delexicalized copy.
    pub fn new(model: &Model, instance: Instance, rewards: Option<RewardTable>) -> Result<Self> {
        let vocab = &model.vocab;
        let table = model.table_ids(&instance.kb)?;
        let mut feed = Vec::with_capacity(instance.target.len());
        let mut gold = Vec::with_capacity(instance.target.len());
        for tok in &instance.target {
            if let Some(s) = vocab.slot_index(tok) {
                if !model.config.copy {
                    return Err(Error::Contract(format!(
                        "slot token `{tok}` in a target but copying is disabled"
                    )));
                }
                gold.push(Gold::Extended(vocab.len() + s));
                feed.push(vocab.len() + s);
            } else {
                let out = if model.config.copy {
                    table.output_index(vocab, tok).unwrap_or_else(|| vocab.unk())
                } else {
                    vocab.id(tok)
                };
                gold.push(Gold::Final(out));
                feed.push(vocab.id(tok));
            }
        }
        let rewards = rewards.unwrap_or_else(|| instance_rewards(&instance)).as_f64();
        Ok(Self {
            instance,
            table,
            feed,
            gold,
            rewards,
        })
    }
}

/// Prepares training examples; delexicalized copies inherit the rewards of
/// the turn they were made from.
pub fn prepare_examples(model: &Model, instances: Vec<Instance>) -> Result<Vec<Example>> {
    let mut lexical: HashMap<(String, usize), RewardTable> = HashMap::new();
    for i in instances.iter().filter(|i| !i.delexicalized) {
        lexical.insert((i.dialogue_id.clone(), i.turn), instance_rewards(i));
    }
    instances
        .into_iter()
        .map(|i| {
            let shared = if i.delexicalized {
                lexical.get(&(i.dialogue_id.clone(), i.turn)).cloned()
            } else {
                None
            };
            Example::new(model, i, shared)
        })
        .collect()
}

/// Loss terms of one example in one graph.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub nll: Option<crate::autodiff::Var>,
    pub rl: crate::autodiff::Var,
    pub total: crate::autodiff::Var,
}

/// Builds the forward pass of `ex`. With `rl_only` the decoder is skipped
/// and the total is the RL loss; otherwise it is `nll + lambda * rl`.
pub fn example_loss(
    g: &mut Graph,
    model: &Model,
    ex: &Example,
    config: &TrainConfig,
    rl_only: bool,
    rng: &mut impl Rng,
) -> Result<LossTerms> {
    let ctx = encode_turn(g, model, &ex.instance.input, &ex.table)?;
    let rl = if config.rl_sampling {
        rl_loss_sampled(g, ctx.kb.entry_probs, &ex.rewards, config.baseline, rng)?
    } else {
        rl_loss(g, ctx.kb.entry_probs, &ex.rewards, config.baseline)?
    };
    if rl_only {
        return Ok(LossTerms { nll: None, rl, total: rl });
    }
    let steps = teacher_forced(g, model, &ctx, &ex.table, &ex.feed)?;
    let (probs, gold): (Vec<_>, Vec<_>) = steps
        .iter()
        .zip(&ex.gold)
        .map(|(s, gold)| match *gold {
            Gold::Final(i) => (s.final_probs, i),
            Gold::Extended(i) => (s.extended, i),
        })
        .unzip();
    let nll = nll_loss(g, &probs, &gold)?.loss;
    let lambda = config.effective_lambda();
    let total = if lambda == 0.0 {
        nll
    } else {
        let weighted = g.scale(rl, lambda);
        g.add(nll, weighted)?
    };
    Ok(LossTerms {
        nll: Some(nll),
        rl,
        total,
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: u8,
    pub loss: f64,
    pub dev_bleu: Option<f64>,
    pub dev_micro_f1: Option<f64>,
    pub dev_macro_f1: Option<f64>,
    /// Fraction of training turns whose top entry has the highest reward.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev micro F1 (the last epoch
    /// when there is no dev set).
    pub model: Model,
    pub log: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
}

/// Builds the vocabulary and a fresh model for `train`.
pub fn init_model(config: &TrainConfig, train: &[Dialogue]) -> Result<Model> {
    let first = train
        .first()
        .ok_or_else(|| Error::Contract("no training dialogues".into()))?;
    let domain = first.kb.domain;
    if let Some(d) = train.iter().find(|d| d.kb.domain != domain) {
        return Err(Error::Contract(format!("dialogue {} is not in domain {domain}", d.id)));
    }
    let columns: Vec<String> = first.kb.columns().to_vec();
    let vocab = Vocabulary::build(train, &columns, config.min_token_count)?;
    let model_config = ModelConfig {
        dim: config.dim,
        columns,
        copy: !config.no_copy,
        dropout: config.dropout,
        max_decode_len: config.max_decode_len,
    };
    Model::new(model_config, vocab, config.seed)
}

/// Share of examples whose most probable entry is a highest-reward entry,
/// among examples with any positive reward.
pub fn entry_accuracy(model: &Model, examples: &[Example]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for ex in examples.iter().filter(|e| !e.instance.delexicalized) {
        let best = ex.rewards.iter().cloned().fold(f64::MIN, f64::max);
        if best <= 0.0 {
            continue;
        }
        let mut g = Graph::inference();
        let ctx = encode_turn(&mut g, model, &ex.instance.input, &ex.table)?;
        let probs = g.value(ctx.kb.entry_probs).data();
        total += 1;
        if ex.rewards[crate::model::argmax(probs)] == best {
            hits += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

struct Runner<'a> {
    config: &'a TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    batch_counter: usize,
}

impl Runner<'_> {
    /// One pass over `examples`; returns the mean loss.
    fn epoch(&mut self, model: &mut Model, examples: &[&Example], phase: u8) -> Result<f64> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let id = self.batch_counter;
            self.batch_counter += 1;
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let seed = self.rng.gen();
                let mut g = Graph::new(true, seed);
                let terms = example_loss(&mut g, model, examples[i], self.config, phase == 1, &mut self.rng)?;
                let value = g.value(terms.total).item();
                if !value.is_finite() {
                    log::error!("non-finite loss in batch {id} (phase {phase})");
                    return Err(Error::Divergence { phase, batch: id });
                }
                batch_loss += value;
                g.backward(terms.total)?;
                for (name, grad) in g.param_grads() {
                    match grads.get_mut(&name) {
                        Some(acc) => acc.axpy(1.0, &grad),
                        None => {
                            grads.insert(name, grad);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads.values_mut() {
                g.scale_in_place(scale);
            }
            clip_global_norm(&mut grads, self.config.clip_norm);
            let pretraining = phase == 1;
            self.adam
                .step(&mut model.params, &grads, |name| !pretraining || names::in_pretraining_set(name))
                .map_err(|e| match e {
                    Error::NonFiniteGradient(_) => Error::Divergence { phase, batch: id },
                    other => other,
                })?;
            total += batch_loss;
        }
        Ok(total / examples.len().max(1) as f64)
    }
}

/// RL-only pretraining followed by joint training with early stopping on
/// dev micro F1. Each epoch's metrics are written to `log_sink` as a JSON
/// line.
pub fn train(
    config: &TrainConfig,
    train_set: &[Dialogue],
    dev_set: &[Dialogue],
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = init_model(config, train_set)?;
    let augment = config.augment && !config.no_copy;
    let examples = prepare_examples(&model, build_instances(train_set, augment))?;
    if examples.is_empty() {
        return Err(Error::Contract("training set yields no instances".into()));
    }
    let dev_instances = build_instances(dev_set, false);
    let mut runner = Runner {
        config,
        adam: Adam::new(config.adam()),
        rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed),
        batch_counter: 0,
    };
    let mut log = Vec::new();
    let mut emit = |m: EpochMetrics, log: &mut Vec<EpochMetrics>| -> Result<()> {
        if let Some(sink) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&m)?;
            writeln!(sink, "{line}").map_err(|e| Error::io("metrics log", e))?;
        }
        log::info!(
            "phase {} epoch {} loss {:.4} dev micro-F1 {}",
            m.phase,
            m.epoch,
            m.loss,
            m.dev_micro_f1.map_or("-".to_string(), |f| format!("{f:.1}"))
        );
        log.push(m);
        Ok(())
    };

    let pretrain: Vec<&Example> = examples
        .iter()
        .filter(|e| config.augment_in_pretraining || !e.instance.delexicalized)
        .collect();
    for epoch in 1..=config.effective_pretrain_epochs() {
        let loss = runner.epoch(&mut model, &pretrain, 1)?;
        let acc = entry_accuracy(&model, &examples)?;
        emit(
            EpochMetrics {
                epoch,
                phase: 1,
                loss,
                dev_bleu: None,
                dev_micro_f1: None,
                dev_macro_f1: None,
                entry_accuracy: Some(acc),
            },
            &mut log,
        )?;
    }

    let all: Vec<&Example> = examples.iter().collect();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let loss = runner.epoch(&mut model, &all, 2)?;
        let report = if dev_instances.is_empty() {
            None
        } else {
            Some(evaluate(&model, &dev_instances, LexiconMode::Scenario)?)
        };
        emit(
            EpochMetrics {
                epoch,
                phase: 2,
                loss,
                dev_bleu: report.as_ref().map(|r| r.bleu),
                dev_micro_f1: report.as_ref().map(|r| r.micro_f1),
                dev_macro_f1: report.as_ref().map(|r| r.macro_f1),
                entry_accuracy: None,
            },
            &mut log,
        )?;
        if let Some(r) = report {
            if best.as_ref().map_or(true, |(f, _, _)| r.micro_f1 > *f) {
                best = Some((r.micro_f1, epoch, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}
