use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::{Instance, KbTable, NONE_TOKEN};
use crate::error::{Error, Result};

/// Smallest probability fed to the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `R(e_k)` for every entry of one instance's KB.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardTable(pub Vec<u32>);

impl RewardTable {
    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&r| f64::from(r)).collect()
    }

    /// Entry with the highest reward, lowest index on ties.
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (k, &r) in self.0.iter().enumerate() {
            if r > self.0[best] {
                best = k;
            }
        }
        best
    }
}

/// Counts, per entry, the cells whose value occurs in the history or in the
/// gold response.
pub fn compute_rewards(input: &[String], response: &[String], kb: &KbTable) -> RewardTable {
    let seen: std::collections::HashSet<&str> =
        input.iter().chain(response).map(String::as_str).collect();
    RewardTable(
        kb.rows()
            .iter()
            .map(|row| {
                row.iter()
                    .filter(|v| v.as_str() != NONE_TOKEN && seen.contains(v.as_str()))
                    .count() as u32
            })
            .collect(),
    )
}

/// Rewards of an instance against its own KB.
pub fn instance_rewards(instance: &Instance) -> RewardTable {
    compute_rewards(&instance.input, instance.response(), &instance.kb)
}

/// Exact policy-gradient objective `-sum_k p_k (R_k - b)`.
pub fn rl_loss(g: &mut Graph, entry_probs: Var, rewards: &[f64], baseline: f64) -> Result<Var> {
    let rows = g.value(entry_probs).rows();
    if rewards.len() != rows {
        return Err(Error::Dimension {
            op: "rl_loss",
            lhs: vec![rows, 1],
            rhs: vec![rewards.len()],
        });
    }
    let advantage = g.constant(Tensor::column(rewards.iter().map(|r| r - baseline).collect()));
    let weighted = g.mul(entry_probs, advantage)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, -1.0))
}

/// Single-sample REINFORCE surrogate `-(R_e - b) log p_e` with `e ~ p`.
pub fn rl_loss_sampled(
    g: &mut Graph,
    entry_probs: Var,
    rewards: &[f64],
    baseline: f64,
    rng: &mut impl Rng,
) -> Result<Var> {
    let probs = g.value(entry_probs).data().to_vec();
    if rewards.len() != probs.len() {
        return Err(Error::Dimension {
            op: "rl_loss_sampled",
            lhs: vec![probs.len(), 1],
            rhs: vec![rewards.len()],
        });
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = probs.len() - 1;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            chosen = k;
            break;
        }
    }
    let picked = g.pick(entry_probs, &[chosen])?;
    let logp = g.log(picked, PROB_FLOOR);
    Ok(g.scale(logp, -(rewards[chosen] - baseline)))
}

#[derive(Clone, Copy, Debug)]
pub struct NllLoss {
    pub loss: Var,
    /// Positions whose gold probability fell below the floor.
    pub clamped: usize,
}

/// Mean negative log-likelihood of `gold[t]` under `probs[t]`.
pub fn nll_loss(g: &mut Graph, probs: &[Var], gold: &[usize]) -> Result<NllLoss> {
    if probs.len() != gold.len() || probs.is_empty() {
        return Err(Error::Contract(format!(
            "nll_loss needs one gold token per step, got {} steps and {} tokens",
            probs.len(),
            gold.len()
        )));
    }
    let mut picks = Vec::with_capacity(probs.len());
    let mut clamped = 0;
    for (&p, &y) in probs.iter().zip(gold) {
        let picked = g.pick(p, &[y])?;
        if g.value(picked).item() < PROB_FLOOR {
            clamped += 1;
        }
        picks.push(picked);
    }
    let column = g.concat_rows(&picks)?;
    let logs = g.log(column, PROB_FLOOR);
    let total = g.sum(logs);
    let loss = g.scale(total, -1.0 / gold.len() as f64);
    if clamped > 0 {
        log::debug!("nll: {clamped} gold probabilities clamped at {PROB_FLOOR}");
    }
    Ok(NllLoss { loss, clamped })
}
