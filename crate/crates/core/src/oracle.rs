//! Exact brute-force references for enumerable instances.
//!
//! The trajectory enumeration walks the full reverse chain over the
//! `(V+1)^L` mask/token state space, summing path mass state by state, so
//! the terminal marginal and any conditional quantity come out exact to
//! floating-point precision. No sampling anywhere in this module.

use std::collections::BTreeMap;

use crate::error::{FkError, Result};
use crate::process::MaskedDiscreteDiffusion;
use crate::reward::{terminal_reward, TerminalReward};
use crate::state::{Context, Pattern, State, Token};

/// A fully enumerated distribution over terminal outcomes together with the
/// tilt normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub probs: BTreeMap<Vec<Token>, f64>,
    pub z: f64,
}

/// Enumeration refusal thresholds: V <= 8, L <= 6, V^L <= 1e6.
fn check_enumerable(process: &MaskedDiscreteDiffusion) -> Result<()> {
    let size = (process.alphabet() as u64)
        .checked_pow(process.length() as u32)
        .unwrap_or(u64::MAX);
    const BOUND: u64 = 1_000_000;
    if process.alphabet() > 8 || process.length() > 6 || size > BOUND {
        return Err(FkError::EnumerationBound { size, bound: BOUND });
    }
    Ok(())
}

fn pattern_rank(pattern: &Pattern, alphabet: Token) -> usize {
    let base = alphabet as usize + 1;
    pattern.iter().fold(0usize, |acc, s| {
        acc * base
            + match s {
                None => 0,
                Some(t) => *t as usize + 1,
            }
    })
}

fn pattern_unrank(mut rank: usize, alphabet: Token, length: usize) -> Pattern {
    let base = alphabet as usize + 1;
    let mut out = vec![None; length];
    for pos in (0..length).rev() {
        let digit = rank % base;
        rank /= base;
        out[pos] = if digit == 0 {
            None
        } else {
            Some((digit - 1) as Token)
        };
    }
    out
}

/// Exact terminal marginal of the reverse chain, computed by exhausting every
/// unmasking trajectory from the prior state down to t = 0.
pub fn enumerate_x0_marginal(
    process: &MaskedDiscreteDiffusion,
    context: &Context,
) -> Result<BTreeMap<Vec<Token>, f64>> {
    check_enumerable(process)?;
    let base = process.alphabet() as usize + 1;
    let states = base.pow(process.length() as u32);
    let mut mass = vec![0.0f64; states];
    let start = process.prior_pattern(context)?;
    mass[pattern_rank(&start, process.alphabet())] = 1.0;

    for t in (0..process.t_max()).rev() {
        let mut next = vec![0.0f64; states];
        for (rank, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let pattern = pattern_unrank(rank, process.alphabet(), process.length());
            for (child, log_p) in process.reverse_step_support(&pattern, t)? {
                next[pattern_rank(&child, process.alphabet())] += m * log_p.exp();
            }
        }
        mass = next;
    }

    let mut out = BTreeMap::new();
    for (rank, &m) in mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let pattern = pattern_unrank(rank, process.alphabet(), process.length());
        let tokens: Vec<Token> = pattern
            .iter()
            .map(|s| s.expect("terminal state still masked"))
            .collect();
        out.insert(tokens, m);
    }
    Ok(out)
}

/// The exact reward-tilted target `p(x0) exp(lambda r(x0)) / Z` over the
/// enumerable toy, with the base marginal obtained by trajectory enumeration.
pub fn exact_tilted_target(
    process: &MaskedDiscreteDiffusion,
    reward: &TerminalReward,
    lambda: f64,
    context: &Context,
) -> Result<ExactDistribution> {
    let marginal = enumerate_x0_marginal(process, context)?;
    let mut tilted = BTreeMap::new();
    let mut z = 0.0;
    for (tokens, &p) in &marginal {
        let state = State::Sequence(tokens.iter().map(|&t| Some(t)).collect());
        let r = terminal_reward(reward, &state, context)?;
        let mass = p * (lambda * r).exp();
        z += mass;
        tilted.insert(tokens.clone(), mass);
    }
    for mass in tilted.values_mut() {
        *mass /= z;
    }
    Ok(ExactDistribution { probs: tilted, z })
}

/// Exact `E[exp(r(x0)) | x_t agrees with `pattern`]` under the forward
/// process from data. With absorbing masking the conditional reduces to the
/// base distribution restricted to sequences compatible with the revealed
/// tokens.
pub fn conditional_exp_reward(
    process: &MaskedDiscreteDiffusion,
    reward: &TerminalReward,
    pattern: &Pattern,
    context: &Context,
) -> Result<f64> {
    check_enumerable(process)?;
    let mut numer = 0.0;
    let mut denom = 0.0;
    for tokens in process.outcomes()? {
        if pattern
            .iter()
            .zip(&tokens)
            .any(|(s, &t)| matches!(s, Some(v) if *v != t))
        {
            continue;
        }
        let p = process.outcome_prob(&tokens);
        if p == 0.0 {
            continue;
        }
        let state = State::Sequence(tokens.iter().map(|&t| Some(t)).collect());
        let r = terminal_reward(reward, &state, context)?;
        numer += p * r.exp();
        denom += p;
    }
    if denom == 0.0 {
        return Err(FkError::EmptyInput("no outcome compatible with pattern"));
    }
    Ok(numer / denom)
}

/// Serialize an exact distribution as two-column text, one `outcome prob`
/// row per line, preceded by a comment carrying Z.
pub fn write_distribution<W: std::io::Write>(
    dist: &ExactDistribution,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "# z {}", dist.z)?;
    for (tokens, p) in &dist.probs {
        writeln!(w, "{} {}", crate::state::outcome_string(tokens), p)?;
    }
    Ok(())
}

/// Adaptive Simpson quadrature.
pub fn quadrature<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth >= 50 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth + 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth + 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, 0)
}
