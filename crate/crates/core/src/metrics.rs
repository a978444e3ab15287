//! Evaluation metrics: total-variation distance to an exact target, pairwise
//! embedding diversity, and per-run reward summaries.

use std::collections::BTreeMap;

use crate::error::{FkError, Result};
use crate::oracle::ExactDistribution;
use crate::state::{State, Token};

/// Half the L1 distance between normalized counts and an exact distribution,
/// over the union of supports.
pub fn tv_distance(
    empirical: &BTreeMap<Vec<Token>, usize>,
    exact: &ExactDistribution,
) -> Result<f64> {
    let total: usize = empirical.values().sum();
    if total == 0 {
        return Err(FkError::EmptyInput("no empirical counts"));
    }
    let mut tv = 0.0;
    for (outcome, p) in &exact.probs {
        let p_hat = empirical.get(outcome).copied().unwrap_or(0) as f64 / total as f64;
        tv += (p_hat - p).abs();
    }
    for (outcome, count) in empirical {
        if !exact.probs.contains_key(outcome) {
            tv += *count as f64 / total as f64;
        }
    }
    Ok(0.5 * tv)
}

/// Count terminal outcomes of an iterator of states.
pub fn outcome_counts<'a, I: IntoIterator<Item = &'a State>>(
    states: I,
) -> Result<BTreeMap<Vec<Token>, usize>> {
    let mut counts = BTreeMap::new();
    for s in states {
        *counts.entry(s.revealed_tokens()?).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Map from states to embedding vectors for the diversity metric.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSpec {
    /// The state vector itself (Gaussian toy).
    Identity,
    /// Concatenated one-hot encodings per position (discrete toy).
    OneHotFlatten { alphabet: Token },
    /// Concatenated per-token embedding rows (discrete toy).
    TokenTable { table: Vec<Vec<f64>> },
}

pub fn embed(spec: &EmbeddingSpec, state: &State) -> Result<Vec<f64>> {
    match spec {
        EmbeddingSpec::Identity => Ok(state.as_vector()?.to_vec()),
        EmbeddingSpec::OneHotFlatten { alphabet } => {
            let tokens = state.revealed_tokens()?;
            let v = *alphabet as usize;
            let mut out = vec![0.0; tokens.len() * v];
            for (i, &t) in tokens.iter().enumerate() {
                out[i * v + t as usize] = 1.0;
            }
            Ok(out)
        }
        EmbeddingSpec::TokenTable { table } => {
            let tokens = state.revealed_tokens()?;
            let mut out = Vec::new();
            for &t in &tokens {
                let row = table.get(t as usize).ok_or(FkError::IncompatibleReward {
                    reward: "token-table embedding",
                    state: "token outside the table",
                })?;
                out.extend_from_slice(row);
            }
            Ok(out)
        }
    }
}

/// Mean pairwise squared embedding distance,
/// `2 / (k (k-1)) * sum_{i<j} |f(x_i) - f(x_j)|^2`.
pub fn diversity(states: &[State], embedding: &EmbeddingSpec) -> Result<f64> {
    let k = states.len();
    if k < 2 {
        return Err(FkError::UndefinedMetric);
    }
    let vectors: Vec<Vec<f64>> = states.iter().map(|s| embed(embedding, s)).collect::<Result<_>>()?;
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let sq: f64 = vectors[i]
                .iter()
                .zip(&vectors[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += sq;
        }
    }
    Ok(total * 2.0 / (k as f64 * (k as f64 - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSummary {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    /// Fraction of particles satisfying the predicate, when one was supplied.
    pub attribute_fraction: Option<f64>,
}

pub fn reward_summary(rewards: &[f64], hits: Option<&[bool]>) -> Result<RewardSummary> {
    if rewards.is_empty() {
        return Err(FkError::EmptyInput("no rewards"));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    let attribute_fraction = hits.map(|h| h.iter().filter(|&&b| b).count() as f64 / h.len() as f64);
    Ok(RewardSummary {
        mean,
        max,
        min,
        attribute_fraction,
    })
}
