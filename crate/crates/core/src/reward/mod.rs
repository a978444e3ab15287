//! Terminal rewards and the three intermediate-reward estimators.

pub mod learned;

use std::sync::Arc;

use rand::Rng;

pub use learned::{fit_learned_reward, BucketKey, FitMeta, LearnedReward};

use crate::error::{FkError, Result};
use crate::numeric::log_mean_exp;
use crate::process::{Denoised, DiffusionProcess};
use crate::state::{Context, State, Token};

/// Predicates for indicator rewards and attribute hit-rate reporting.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributePredicate {
    AllPositionsEqual { token: Token },
    CountAtLeast { token: Token, min: usize },
    MatchesSequence { tokens: Vec<Token> },
    /// Never true; handy for exercising the zero-reward path.
    Never,
}

impl AttributePredicate {
    pub fn matches(&self, state: &State) -> Result<bool> {
        if let AttributePredicate::Never = self {
            return Ok(false);
        }
        let tokens = state.revealed_tokens()?;
        Ok(match self {
            AttributePredicate::AllPositionsEqual { token } => {
                tokens.iter().all(|t| t == token)
            }
            AttributePredicate::CountAtLeast { token, min } => {
                tokens.iter().filter(|t| *t == token).count() >= *min
            }
            AttributePredicate::MatchesSequence { tokens: want } => tokens == *want,
            AttributePredicate::Never => unreachable!(),
        })
    }
}

/// Terminal reward `r(x_0, c)`: a pure function of the clean sample.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalReward {
    /// Number of occurrences of one token.
    TokenCount { token: Token },
    /// Sum over positions of the log-probability of the observed token under
    /// a per-position table.
    TableLogLikelihood { log_probs: Vec<Vec<f64>> },
    /// `scale` when the predicate holds, 0 otherwise.
    AttributeIndicator {
        predicate: AttributePredicate,
        scale: f64,
    },
    /// Dot product with a fixed vector; exposes an exact gradient.
    Linear { coeffs: Vec<f64> },
    /// Gaussian bump `exp(-|x - center|^2 / (2 width^2))`; exposes an exact
    /// gradient.
    Radial { center: Vec<f64>, width: f64 },
}

impl TerminalReward {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TerminalReward::TokenCount { .. } => "token-count",
            TerminalReward::TableLogLikelihood { .. } => "table-log-likelihood",
            TerminalReward::AttributeIndicator { .. } => "attribute-indicator",
            TerminalReward::Linear { .. } => "linear",
            TerminalReward::Radial { .. } => "radial",
        }
    }

    pub fn is_differentiable(&self) -> bool {
        matches!(
            self,
            TerminalReward::Linear { .. } | TerminalReward::Radial { .. }
        )
    }
}

pub fn terminal_reward(spec: &TerminalReward, x0: &State, _context: &Context) -> Result<f64> {
    match spec {
        TerminalReward::TokenCount { token } => {
            let tokens = x0.revealed_tokens()?;
            Ok(tokens.iter().filter(|t| *t == token).count() as f64)
        }
        TerminalReward::TableLogLikelihood { log_probs } => {
            let tokens = x0.revealed_tokens()?;
            if tokens.len() != log_probs.len() {
                return Err(FkError::IncompatibleReward {
                    reward: "table-log-likelihood",
                    state: "sequence of a different length",
                });
            }
            Ok(tokens
                .iter()
                .zip(log_probs)
                .map(|(t, row)| row[*t as usize])
                .sum())
        }
        TerminalReward::AttributeIndicator { predicate, scale } => {
            Ok(if predicate.matches(x0)? { *scale } else { 0.0 })
        }
        TerminalReward::Linear { coeffs } => {
            let x = x0.as_vector()?;
            if x.len() != coeffs.len() {
                return Err(FkError::IncompatibleReward {
                    reward: "linear",
                    state: "vector of a different dimension",
                });
            }
            Ok(x.iter().zip(coeffs).map(|(a, b)| a * b).sum())
        }
        TerminalReward::Radial { center, width } => {
            let x = x0.as_vector()?;
            let sq: f64 = x
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok((-sq / (2.0 * width * width)).exp())
        }
    }
}

/// Exact analytic gradient of a differentiable reward at `x`.
pub fn reward_gradient(spec: &TerminalReward, x: &State, _context: &Context) -> Result<Vec<f64>> {
    match spec {
        TerminalReward::Linear { coeffs } => Ok(coeffs.clone()),
        TerminalReward::Radial { center, width } => {
            let x = x.as_vector()?;
            let sq: f64 = x
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let value = (-sq / (2.0 * width * width)).exp();
            Ok(x.iter()
                .zip(center)
                .map(|(xi, ci)| value * (ci - xi) / (width * width))
                .collect())
        }
        other => Err(FkError::NonDifferentiableReward(other.kind_name())),
    }
}

/// How to score a noisy state during generation.
#[derive(Debug, Clone)]
pub enum IntermediateReward {
    /// Reward of the denoised estimate; exact expectation for additive
    /// rewards on the discrete toy, one posterior sample otherwise.
    DenoisedMean,
    /// `log (1/N) sum_j exp(r(x_0^j))` over N rollouts of the base process.
    ManySample { n: usize },
    /// Table lookup in a fitted regressor of `E[exp(r)]`; `None` means the
    /// spec was declared but never fitted.
    Learned { model: Option<Arc<LearnedReward>> },
}

#[derive(Debug, Clone)]
pub struct RewardSpec {
    pub terminal: TerminalReward,
    pub intermediate: IntermediateReward,
}

/// Exact expectation of an additive reward under per-position posteriors.
/// Returns `None` for reward kinds without an additive decomposition.
fn expectation_under_simplex(spec: &TerminalReward, simplices: &[Vec<f64>]) -> Option<f64> {
    match spec {
        TerminalReward::TokenCount { token } => Some(
            simplices
                .iter()
                .map(|row| row.get(*token as usize).copied().unwrap_or(0.0))
                .sum(),
        ),
        TerminalReward::TableLogLikelihood { log_probs } => {
            let mut total = 0.0;
            for (row, logs) in simplices.iter().zip(log_probs) {
                for (p, lq) in row.iter().zip(logs) {
                    if *p > 0.0 {
                        total += p * lq;
                    }
                }
            }
            Some(total)
        }
        _ => None,
    }
}

/// Intermediate reward `r_phi(x_t, c)` in the configured mode.
///
/// At `t = 0` every mode returns the terminal reward exactly.
pub fn intermediate_reward<R: Rng>(
    spec: &RewardSpec,
    process: &DiffusionProcess,
    state: &State,
    t: usize,
    context: &Context,
    rng: &mut R,
) -> Result<f64> {
    if t == 0 {
        return terminal_reward(&spec.terminal, state, context);
    }
    match &spec.intermediate {
        IntermediateReward::DenoisedMean => {
            match process.denoised_mean(state, t, context)? {
                Denoised::Point(x) => terminal_reward(&spec.terminal, &State::Vector(x), context),
                Denoised::Simplex(rows) => {
                    if let Some(value) = expectation_under_simplex(&spec.terminal, &rows) {
                        return Ok(value);
                    }
                    // non-additive reward: draw one sequence from the
                    // per-position posterior and score it
                    let tokens: Vec<Option<Token>> = rows
                        .iter()
                        .map(|row| Some(crate::process::masked::sample_categorical(row, rng)))
                        .collect();
                    terminal_reward(&spec.terminal, &State::Sequence(tokens), context)
                }
            }
        }
        IntermediateReward::ManySample { n } => {
            if *n == 0 {
                return Err(FkError::InvalidConfig(
                    "many-sample needs at least one rollout".into(),
                ));
            }
            let mut rewards = Vec::with_capacity(*n);
            for _ in 0..*n {
                let x0 = rollout_to_zero(process, state, t, context, rng)?;
                rewards.push(terminal_reward(&spec.terminal, &x0, context)?);
            }
            Ok(log_mean_exp(&rewards))
        }
        IntermediateReward::Learned { model } => {
            let model = model.as_ref().ok_or(FkError::UnfittedModel)?;
            model.log_value_for(process, state, t)
        }
    }
}

/// Continue the base reverse process from `(state, t)` down to `t = 0`.
pub fn rollout_to_zero<R: Rng>(
    process: &DiffusionProcess,
    state: &State,
    t: usize,
    context: &Context,
    rng: &mut R,
) -> Result<State> {
    let mut current = state.clone();
    for s in (0..t).rev() {
        let (next, _) = process.reverse_sample_and_logdensity(&current, s, context, rng)?;
        current = next;
    }
    Ok(current)
}
