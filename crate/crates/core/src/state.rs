//! States and run-level conditioning.

use crate::error::{FkError, Result};

pub type Token = u16;

/// A token sequence where `None` marks a position still absorbed by the mask
/// symbol.
pub type Pattern = Vec<Option<Token>>;

/// A point in a process's state space: a real vector for the continuous toy,
/// a (possibly partially masked) token sequence for the discrete one.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Vector(Vec<f64>),
    Sequence(Pattern),
}

impl State {
    pub fn as_vector(&self) -> Result<&[f64]> {
        match self {
            State::Vector(v) => Ok(v),
            State::Sequence(_) => Err(FkError::IncompatibleReward {
                reward: "vector",
                state: "sequence",
            }),
        }
    }

    pub fn as_sequence(&self) -> Result<&Pattern> {
        match self {
            State::Sequence(p) => Ok(p),
            State::Vector(_) => Err(FkError::IncompatibleReward {
                reward: "sequence",
                state: "vector",
            }),
        }
    }

    /// Tokens of a fully revealed sequence; errors if any mask remains.
    pub fn revealed_tokens(&self) -> Result<Vec<Token>> {
        let pattern = self.as_sequence()?;
        pattern
            .iter()
            .map(|s| s.ok_or(FkError::MaskedInput))
            .collect()
    }
}

/// Opaque conditioning for a run. Immutable once the run starts.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Context {
    #[default]
    None,
    /// Pin the first tokens of the discrete toy; they are revealed from the
    /// start and every posterior conditions on them.
    PinnedPrefix(Vec<Token>),
    /// Restrict the Gaussian toy to a single mixture component.
    MixtureComponent(usize),
}

pub fn token_char(token: Token) -> char {
    (b'A' + (token as u8)) as char
}

pub fn parse_token_char(c: char) -> Option<Token> {
    if c.is_ascii_uppercase() {
        Some((c as u8 - b'A') as Token)
    } else {
        None
    }
}

/// Render a pattern, `?` for masked positions.
pub fn pattern_string(pattern: &Pattern) -> String {
    pattern
        .iter()
        .map(|s| match s {
            Some(t) => token_char(*t),
            None => '?',
        })
        .collect()
}

pub fn outcome_string(tokens: &[Token]) -> String {
    tokens.iter().map(|t| token_char(*t)).collect()
}

pub fn parse_pattern(s: &str) -> Result<Pattern> {
    s.chars()
        .map(|c| {
            if c == '?' {
                Ok(None)
            } else {
                parse_token_char(c)
                    .map(Some)
                    .ok_or_else(|| FkError::Parse(format!("bad pattern symbol `{c}`")))
            }
        })
        .collect()
}
