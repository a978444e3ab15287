//! Potential families `G_t` and their terminal corrections.
//!
//! Every family satisfies the product requirement: the log-potentials applied
//! along a lineage, terminal correction included, sum to exactly
//! `lambda * r(x_0)`. The terminal step therefore always applies
//! `lambda * r(x_0) - cum_log_potential`, which doubles as the telescoped
//! difference step and as the max/sum correction.

use crate::particle::TrajectoryStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    /// Unit potential until the terminal step: plain importance sampling.
    Bon,
    /// Reward increments between retained steps.
    Difference,
    /// Running maximum of retained rewards.
    Max,
    /// Running sum of retained rewards (each step re-scores the whole sum;
    /// the terminal correction absorbs the repetition).
    Sum,
}

impl PotentialKind {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialKind::Bon => "bon",
            PotentialKind::Difference => "difference",
            PotentialKind::Max => "max",
            PotentialKind::Sum => "sum",
        }
    }
}

/// Log-potential applied at a retained step, given the lineage statistics
/// current through the previous retained step. The caller records updates to
/// the stats after scoring.
pub fn log_potential(
    kind: PotentialKind,
    lambda: f64,
    stats: &TrajectoryStats,
    r_now: f64,
    t: usize,
) -> f64 {
    if t == 0 {
        // terminal correction: force the lineage total to lambda * r(x_0)
        return lambda * r_now - stats.cum_log_potential;
    }
    match kind {
        PotentialKind::Bon => 0.0,
        PotentialKind::Difference => lambda * (r_now - stats.prev_r),
        PotentialKind::Max => lambda * stats.max_r.max(r_now),
        PotentialKind::Sum => lambda * (stats.sum_r + r_now),
    }
}
