//! Error types shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FkError>;

#[derive(Debug, Error)]
pub enum FkError {
    /// Every particle carries zero weight; the run cannot continue.
    #[error("degenerate ensemble at t = {t}: every particle has zero weight")]
    DegenerateEnsemble { t: usize },

    /// A reward evaluation produced NaN or an infinity.
    #[error("non-finite reward {value} for particle {particle} at t = {t}")]
    NonFiniteReward {
        t: usize,
        particle: usize,
        value: f64,
    },

    /// Weights handed to `ess` were not a normalized probability vector.
    #[error("weight vector violates the ess contract: {0}")]
    WeightContract(String),

    #[error("time index {t} outside the grid 0..={t_max}")]
    TimeOutOfRange { t: usize, t_max: usize },

    #[error("proposal `{proposal}` is incompatible with process `{process}`")]
    IncompatibleProposal {
        proposal: &'static str,
        process: &'static str,
    },

    #[error("reward `{reward}` is incompatible with state kind `{state}`")]
    IncompatibleReward {
        reward: &'static str,
        state: &'static str,
    },

    #[error("reward kind `{0}` does not expose a gradient")]
    NonDifferentiableReward(&'static str),

    /// A terminal reward or attribute predicate saw a sequence that still
    /// contains mask symbols.
    #[error("terminal evaluation on a sequence with unresolved mask symbols")]
    MaskedInput,

    #[error("learned reward queried before fitting")]
    UnfittedModel,

    #[error("state space too large for exact enumeration: {size} > {bound}")]
    EnumerationBound { size: u64, bound: u64 },

    /// Diversity over fewer than two particles.
    #[error("diversity is undefined for fewer than two particles")]
    UndefinedMetric,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
