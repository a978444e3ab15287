//! Absorbing-mask discrete diffusion toy.
//!
//! Forward process: every position of a length-`L` token sequence is
//! independently replaced by the mask symbol, with keep probability
//! `keep[t]` at time `t` (`keep[0] = 1`, `keep[T] = 0`). The reverse kernel
//! is the exact posterior of that chain under the base sequence
//! distribution: going from `t+1` to `t` each masked position unmasks with
//! probability `(keep[t] - keep[t+1]) / (1 - keep[t+1])` and newly revealed
//! positions are filled jointly from the base distribution conditioned on
//! everything already revealed.

use rand::Rng;

use crate::error::{FkError, Result};
use crate::state::{Context, Pattern, Token};

/// Base distribution over full token sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceDistribution {
    /// Uniform over all V^L sequences.
    Uniform,
    /// Explicit table over outcomes, indexed by base-V rank with position 0
    /// most significant.
    Table { probs: Vec<f64> },
    /// First-order Markov chain over tokens.
    Markov {
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDiscreteDiffusion {
    alphabet: Token,
    length: usize,
    /// `keep[t]`: probability a position is still revealed at time t.
    keep: Vec<f64>,
    base: SequenceDistribution,
}

/// Uniform unmasking: keep[t] = 1 - t/T.
pub fn uniform_keep_schedule(t_max: usize) -> Vec<f64> {
    (0..=t_max)
        .map(|t| 1.0 - t as f64 / t_max as f64)
        .collect()
}

fn validate_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&p| p < 0.0) {
        return Err(FkError::InvalidConfig(format!(
            "{what} has a negative entry"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(FkError::InvalidConfig(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

fn renormalize(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    for p in v.iter_mut() {
        *p /= sum;
    }
}

impl MaskedDiscreteDiffusion {
    pub fn new(
        alphabet: Token,
        length: usize,
        keep: Vec<f64>,
        base: SequenceDistribution,
    ) -> Result<Self> {
        if alphabet < 2 || alphabet > 26 {
            return Err(FkError::InvalidConfig(
                "alphabet size must be in 2..=26".into(),
            ));
        }
        if length == 0 {
            return Err(FkError::InvalidConfig("sequence length must be >= 1".into()));
        }
        if keep.len() < 2 {
            return Err(FkError::InvalidConfig(
                "unmasking schedule needs at least two entries".into(),
            ));
        }
        if keep[0] != 1.0 || *keep.last().unwrap() != 0.0 {
            return Err(FkError::InvalidConfig(
                "unmasking schedule must start at 1 and end at 0".into(),
            ));
        }
        if keep.windows(2).any(|w| w[1] >= w[0]) {
            return Err(FkError::InvalidConfig(
                "unmasking schedule must be strictly decreasing".into(),
            ));
        }
        let mut base = base;
        match &mut base {
            SequenceDistribution::Uniform => {}
            SequenceDistribution::Table { probs } => {
                let expect = (alphabet as u64).checked_pow(length as u32);
                if expect != Some(probs.len() as u64) {
                    return Err(FkError::InvalidConfig(format!(
                        "table has {} entries, expected alphabet^length",
                        probs.len()
                    )));
                }
                validate_simplex(probs, "base table")?;
                renormalize(probs);
            }
            SequenceDistribution::Markov {
                initial,
                transition,
            } => {
                if initial.len() != alphabet as usize || transition.len() != alphabet as usize {
                    return Err(FkError::InvalidConfig(
                        "markov tables must match the alphabet size".into(),
                    ));
                }
                validate_simplex(initial, "markov initial distribution")?;
                renormalize(initial);
                for row in transition.iter_mut() {
                    if row.len() != alphabet as usize {
                        return Err(FkError::InvalidConfig(
                            "markov transition rows must match the alphabet size".into(),
                        ));
                    }
                    validate_simplex(row, "markov transition row")?;
                    renormalize(row);
                }
            }
        }
        Ok(MaskedDiscreteDiffusion {
            alphabet,
            length,
            keep,
            base,
        })
    }

    /// Default schedule: uniform unmasking over 8 steps.
    pub fn with_default_schedule(
        alphabet: Token,
        length: usize,
        base: SequenceDistribution,
    ) -> Result<Self> {
        Self::new(alphabet, length, uniform_keep_schedule(8), base)
    }

    pub fn alphabet(&self) -> Token {
        self.alphabet
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn t_max(&self) -> usize {
        self.keep.len() - 1
    }

    pub fn keep(&self, t: usize) -> f64 {
        self.keep[t]
    }

    pub fn base(&self) -> &SequenceDistribution {
        &self.base
    }

    /// Probability that a position masked at `t+1` is revealed at `t`.
    pub fn unmask_prob(&self, t: usize) -> f64 {
        (self.keep[t] - self.keep[t + 1]) / (1.0 - self.keep[t + 1])
    }

    /// P(base sequence agrees with every revealed position of `pattern`).
    pub fn pattern_mass(&self, pattern: &Pattern) -> f64 {
        let v = self.alphabet as usize;
        match &self.base {
            SequenceDistribution::Uniform => {
                let revealed = pattern.iter().filter(|s| s.is_some()).count();
                (1.0 / v as f64).powi(revealed as i32)
            }
            SequenceDistribution::Table { probs } => {
                let masked: Vec<usize> = (0..self.length)
                    .filter(|&i| pattern[i].is_none())
                    .collect();
                let mut total = 0.0;
                let mut fill = vec![0usize; masked.len()];
                loop {
                    let mut rank = 0usize;
                    for i in 0..self.length {
                        let tok = match pattern[i] {
                            Some(t) => t as usize,
                            None => fill[masked.iter().position(|&m| m == i).unwrap()],
                        };
                        rank = rank * v + tok;
                    }
                    total += probs[rank];
                    // odometer over the masked positions
                    let mut pos = masked.len();
                    loop {
                        if pos == 0 {
                            return total;
                        }
                        pos -= 1;
                        fill[pos] += 1;
                        if fill[pos] < v {
                            break;
                        }
                        fill[pos] = 0;
                    }
                }
            }
            SequenceDistribution::Markov {
                initial,
                transition,
            } => {
                // forward pass with evidence on revealed positions
                let mut alpha: Vec<f64> = (0..v)
                    .map(|s| match pattern[0] {
                        Some(t) => {
                            if s == t as usize {
                                initial[s]
                            } else {
                                0.0
                            }
                        }
                        None => initial[s],
                    })
                    .collect();
                for i in 1..self.length {
                    let mut next = vec![0.0; v];
                    for (s, a) in alpha.iter().enumerate() {
                        if *a == 0.0 {
                            continue;
                        }
                        match pattern[i] {
                            Some(t) => next[t as usize] += a * transition[s][t as usize],
                            None => {
                                for (sn, row) in next.iter_mut().zip(&transition[s]) {
                                    *sn += a * row;
                                }
                            }
                        }
                    }
                    alpha = next;
                }
                alpha.iter().sum()
            }
        }
    }

    /// Exact token posterior at one position given the revealed positions of
    /// `pattern`. Returns a normalized vector over the alphabet.
    pub fn position_conditionals(&self, pattern: &Pattern, pos: usize) -> Vec<f64> {
        if let SequenceDistribution::Uniform = self.base {
            return vec![1.0 / self.alphabet as f64; self.alphabet as usize];
        }
        let mut probe = pattern.clone();
        let mut out = Vec::with_capacity(self.alphabet as usize);
        for v in 0..self.alphabet {
            probe[pos] = Some(v);
            out.push(self.pattern_mass(&probe));
        }
        probe[pos] = pattern[pos];
        let sum: f64 = out.iter().sum();
        for o in &mut out {
            *o /= sum;
        }
        out
    }

    /// All-masked start state, with the context's pinned prefix revealed.
    pub fn prior_pattern(&self, context: &Context) -> Result<Pattern> {
        let mut pattern: Pattern = vec![None; self.length];
        if let Context::PinnedPrefix(prefix) = context {
            if prefix.len() > self.length {
                return Err(FkError::InvalidConfig(
                    "pinned prefix longer than the sequence".into(),
                ));
            }
            if prefix.iter().any(|&t| t >= self.alphabet) {
                return Err(FkError::InvalidConfig(
                    "pinned prefix token outside the alphabet".into(),
                ));
            }
            for (i, &t) in prefix.iter().enumerate() {
                pattern[i] = Some(t);
            }
        }
        Ok(pattern)
    }

    /// Draw a full sequence from the base distribution, respecting a pinned
    /// prefix.
    pub fn sample_data<R: Rng>(&self, context: &Context, rng: &mut R) -> Result<Vec<Token>> {
        let mut pattern = self.prior_pattern(context)?;
        for pos in 0..self.length {
            if pattern[pos].is_some() {
                continue;
            }
            let cond = self.position_conditionals(&pattern, pos);
            pattern[pos] = Some(sample_categorical(&cond, rng));
        }
        Ok(pattern.into_iter().map(|s| s.unwrap()).collect())
    }

    /// Independently mask each position of `x0` per the schedule at `t`.
    pub fn forward_sample<R: Rng>(&self, x0: &[Token], t: usize, rng: &mut R) -> Pattern {
        let keep = self.keep[t];
        x0.iter()
            .map(|&tok| {
                if rng.gen::<f64>() < keep {
                    Some(tok)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Draw `x_t` from the exact reverse kernel given `x_{t+1}` and return
    /// its log-density under the same kernel.
    ///
    /// Coins and fills both walk positions in ascending order, matching the
    /// enumeration in [`reverse_step_support`](Self::reverse_step_support) so
    /// the two routes produce bit-identical log-densities.
    pub fn reverse_sample<R: Rng>(
        &self,
        x_next: &Pattern,
        t: usize,
        rng: &mut R,
    ) -> (Pattern, f64) {
        let rho = self.unmask_prob(t);
        let mut unmask = Vec::new();
        let mut log_density = 0.0;
        for (pos, sym) in x_next.iter().enumerate() {
            if sym.is_some() {
                continue;
            }
            if rng.gen::<f64>() < rho {
                unmask.push(pos);
                log_density += rho.ln();
            } else {
                log_density += (1.0 - rho).ln();
            }
        }
        let mut pattern = x_next.clone();
        for pos in unmask {
            let cond = self.position_conditionals(&pattern, pos);
            let tok = sample_categorical(&cond, rng);
            log_density += cond[tok as usize].ln();
            pattern[pos] = Some(tok);
        }
        (pattern, log_density)
    }

    /// Enumerate the full support of the reverse transition from `x_next`
    /// down to `t`, with exact log-probabilities. Errors when the support
    /// exceeds the enumeration bound.
    pub fn reverse_step_support(&self, x_next: &Pattern, t: usize) -> Result<Vec<(Pattern, f64)>> {
        let masked: Vec<usize> = (0..self.length)
            .filter(|&i| x_next[i].is_none())
            .collect();
        let size = ((self.alphabet as u64) + 1)
            .checked_pow(masked.len() as u32)
            .unwrap_or(u64::MAX);
        const BOUND: u64 = 1_000_000;
        if size > BOUND {
            return Err(FkError::EnumerationBound { size, bound: BOUND });
        }
        let rho = self.unmask_prob(t);
        let mut out = Vec::new();
        let mut pattern = x_next.clone();
        self.support_dfs(&masked, 0, &mut pattern, 0.0, rho, &mut out);
        Ok(out)
    }

    fn support_dfs(
        &self,
        masked: &[usize],
        depth: usize,
        pattern: &mut Pattern,
        log_p: f64,
        rho: f64,
        out: &mut Vec<(Pattern, f64)>,
    ) {
        if depth == masked.len() {
            out.push((pattern.clone(), log_p));
            return;
        }
        let pos = masked[depth];
        if rho < 1.0 {
            self.support_dfs(masked, depth + 1, pattern, log_p + (1.0 - rho).ln(), rho, out);
        }
        let cond = self.position_conditionals(pattern, pos);
        for (tok, &p) in cond.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            pattern[pos] = Some(tok as Token);
            self.support_dfs(
                masked,
                depth + 1,
                pattern,
                log_p + rho.ln() + p.ln(),
                rho,
                out,
            );
            pattern[pos] = None;
        }
    }

    /// Iterate all V^L full outcomes; bound-guarded.
    pub fn outcomes(&self) -> Result<Vec<Vec<Token>>> {
        let size = (self.alphabet as u64)
            .checked_pow(self.length as u32)
            .unwrap_or(u64::MAX);
        const BOUND: u64 = 1_000_000;
        if size > BOUND || self.alphabet > 8 || self.length > 6 {
            return Err(FkError::EnumerationBound {
                size,
                bound: BOUND,
            });
        }
        let v = self.alphabet as usize;
        let mut out = Vec::with_capacity(size as usize);
        let mut cur = vec![0usize; self.length];
        loop {
            out.push(cur.iter().map(|&t| t as Token).collect());
            let mut pos = self.length;
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                cur[pos] += 1;
                if cur[pos] < v {
                    break;
                }
                cur[pos] = 0;
            }
        }
    }

    /// Probability of one full outcome under the base distribution.
    pub fn outcome_prob(&self, tokens: &[Token]) -> f64 {
        let pattern: Pattern = tokens.iter().map(|&t| Some(t)).collect();
        self.pattern_mass(&pattern)
    }
}

pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> Token {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as Token;
        }
    }
    (probs.len() - 1) as Token
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamPurpose};

    fn uniform22() -> MaskedDiscreteDiffusion {
        MaskedDiscreteDiffusion::with_default_schedule(2, 2, SequenceDistribution::Uniform)
            .unwrap()
    }

    #[test]
    fn forward_at_terminal_time_masks_everything() {
        let p = uniform22();
        let mut rng = stream(3, 8, 0, StreamPurpose::Propose);
        let x = p.forward_sample(&[0, 1], p.t_max(), &mut rng);
        assert_eq!(x, vec![None, None]);
    }

    #[test]
    fn forward_at_zero_keeps_everything() {
        let p = uniform22();
        let mut rng = stream(3, 0, 0, StreamPurpose::Propose);
        let x = p.forward_sample(&[0, 1], 0, &mut rng);
        assert_eq!(x, vec![Some(0), Some(1)]);
    }

    #[test]
    fn reverse_of_fully_revealed_state_is_identity_with_zero_logdensity() {
        let p = uniform22();
        let full: Pattern = vec![Some(1), Some(0)];
        let mut rng = stream(3, 4, 0, StreamPurpose::Propose);
        let (x, ld) = p.reverse_sample(&full, 4, &mut rng);
        assert_eq!(x, full);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn reverse_support_sums_to_one() {
        let p = uniform22();
        for t in 0..p.t_max() {
            let support = p
                .reverse_step_support(&vec![None, None], t)
                .unwrap();
            let total: f64 = support.iter().map(|(_, lp)| lp.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "t = {t}: total = {total}");
        }
    }

    #[test]
    fn sampled_logdensity_matches_support_entry() {
        let base = SequenceDistribution::Markov {
            initial: vec![0.7, 0.3],
            transition: vec![vec![0.6, 0.4], vec![0.2, 0.8]],
        };
        let p = MaskedDiscreteDiffusion::with_default_schedule(2, 3, base).unwrap();
        for t in 0..p.t_max() {
            let start: Pattern = vec![None, Some(1), None];
            let mut rng = stream(11, t, 0, StreamPurpose::Propose);
            let (x, ld) = p.reverse_sample(&start, t, &mut rng);
            let support = p.reverse_step_support(&start, t).unwrap();
            let entry = support.iter().find(|(s, _)| *s == x).unwrap();
            assert_eq!(ld, entry.1);
        }
    }

    #[test]
    fn pattern_mass_markov_matches_enumeration() {
        let base = SequenceDistribution::Markov {
            initial: vec![0.7, 0.3],
            transition: vec![vec![0.6, 0.4], vec![0.2, 0.8]],
        };
        let p = MaskedDiscreteDiffusion::with_default_schedule(2, 3, base).unwrap();
        let pattern: Pattern = vec![None, Some(0), None];
        let brute: f64 = p
            .outcomes()
            .unwrap()
            .iter()
            .filter(|o| o[1] == 0)
            .map(|o| p.outcome_prob(o))
            .sum();
        assert!((p.pattern_mass(&pattern) - brute).abs() < 1e-12);
    }

    #[test]
    fn support_bound_is_enforced() {
        let p = MaskedDiscreteDiffusion::new(
            8,
            20,
            uniform_keep_schedule(4),
            SequenceDistribution::Uniform,
        )
        .unwrap();
        let all_masked: Pattern = vec![None; 20];
        assert!(matches!(
            p.reverse_step_support(&all_masked, 1),
            Err(FkError::EnumerationBound { .. })
        ));
    }

    #[test]
    fn pinned_prefix_shows_up_in_prior_and_data_samples() {
        let p = uniform22();
        let ctx = Context::PinnedPrefix(vec![1]);
        assert_eq!(p.prior_pattern(&ctx).unwrap(), vec![Some(1), None]);
        let mut rng = stream(5, 0, 0, StreamPurpose::Fit);
        for _ in 0..20 {
            let x = p.sample_data(&ctx, &mut rng).unwrap();
            assert_eq!(x[0], 1);
        }
    }
}
