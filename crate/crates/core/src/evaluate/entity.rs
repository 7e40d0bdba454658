use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens of `tokens` that are KB values, as a set.
pub fn extract_entities(tokens: &[String], lexicon: &HashSet<String>) -> BTreeSet<String> {
    tokens.iter().filter(|t| lexicon.contains(*t)).cloned().collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn between(gold: &BTreeSet<String>, predicted: &BTreeSet<String>) -> Self {
        let tp = gold.intersection(predicted).count();
        Self {
            tp,
            fp: predicted.len() - tp,
            fn_: gold.len() - tp,
        }
    }

    /// F1 in `[0, 1]`; zero when precision or recall is undefined.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityF1 {
    /// Percentage from globally pooled counts.
    pub micro: f64,
    /// Mean per-instance percentage over instances with any entity.
    pub macro_: f64,
    pub totals: Counts,
    /// Instances that took part in the macro average.
    pub macro_instances: usize,
}

/// Micro and macro entity F1 over `(gold, predicted)` pairs. Instances
/// with no entity on either side are dropped from the macro average; if
/// none remain the macro score is 0.
pub fn entity_f1(pairs: &[(BTreeSet<String>, BTreeSet<String>)]) -> Result<EntityF1> {
    if pairs.is_empty() {
        return Err(Error::Contract("entity F1 over an empty corpus".into()));
    }
    let mut totals = Counts::default();
    let mut macro_sum = 0.0;
    let mut macro_instances = 0;
    for (gold, pred) in pairs {
        let c = Counts::between(gold, pred);
        totals.tp += c.tp;
        totals.fp += c.fp;
        totals.fn_ += c.fn_;
        if !c.is_empty() {
            macro_sum += c.f1();
            macro_instances += 1;
        }
    }
    let macro_ = if macro_instances == 0 {
        0.0
    } else {
        100.0 * macro_sum / macro_instances as f64
    };
    Ok(EntityF1 {
        micro: 100.0 * totals.f1(),
        macro_,
        totals,
        macro_instances,
    })
}
