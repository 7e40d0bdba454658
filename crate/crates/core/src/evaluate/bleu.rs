use std::collections::HashMap;

use crate::error::{Error, Result};

/// Numerator used in place of a zero n-gram match count.
pub const SMOOTHING_EPSILON: f64 = 0.1;
const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 against a single reference per candidate, as a
/// percentage. Counts are clipped by the reference, weights are uniform and
/// a zero match count at some order is replaced by `SMOOTHING_EPSILON`.
pub fn corpus_bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Contract("BLEU needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(cand, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..MAX_ORDER)
        .map(|i| {
            let num = if matches[i] == 0 { SMOOTHING_EPSILON } else { matches[i] as f64 };
            (num / totals[i].max(1) as f64).ln()
        })
        .sum::<f64>()
        / MAX_ORDER as f64;
    let brevity = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * log_precision.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_corpus_scores_100() {
        let c = vec![t("valero is located at 200_alester_ave ."), t("you are welcome .")];
        assert!((corpus_bleu(&c, &c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_candidates_are_an_error() {
        assert!(corpus_bleu(&[], &[]).is_err());
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        assert_eq!(corpus_bleu(&[vec![]], &[t("a b c d")]).unwrap(), 0.0);
    }

    #[test]
    fn clipping_limits_repeated_words() {
        let score = corpus_bleu(&[t("the the the the")], &[t("the cat is here")]).unwrap();
        // p1 = 1/4, higher orders smoothed: (0.25 * 0.1/3 * 0.1/2 * 0.1)^(1/4)
        let expected = 100.0 * (0.25f64 * (0.1 / 3.0) * (0.1 / 2.0) * 0.1).powf(0.25);
        assert!((score - expected).abs() < 1e-9);
    }
}
