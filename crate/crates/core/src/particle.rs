//! Particles, their lineage statistics, and the ensemble they form.

use crate::state::State;

/// Descending time grid `T, T-1, ..., 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    t_max: usize,
}

impl TimeGrid {
    pub fn new(t_max: usize) -> Self {
        assert!(t_max >= 1, "time grid needs at least one transition");
        TimeGrid { t_max }
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// The indices in generation order: T, T-1, ..., 0.
    pub fn steps(&self) -> impl Iterator<Item = usize> {
        (0..=self.t_max).rev()
    }
}

/// Running reward statistics a potential reads from and the lineage-level
/// log-potential total.
///
/// `cum_log_potential` is lineage state: it is copied on resampling and never
/// reset, so after the terminal correction it equals the total log-potential
/// applied along the particle's ancestral path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrajectoryStats {
    /// Intermediate reward at the previous retained (scored) step. Starts at
    /// 0, the convention for the reward of the pure-noise state.
    pub prev_r: f64,
    /// Running max of rewards over scored steps (seeded with the same 0).
    pub max_r: f64,
    /// Running sum of rewards over scored steps.
    pub sum_r: f64,
    /// Total log-potential applied so far along the lineage.
    pub cum_log_potential: f64,
}

impl TrajectoryStats {
    /// Fold in the reward observed at a scored step and the log-potential the
    /// engine just applied for it.
    pub fn record(&mut self, r_now: f64, log_potential: f64) {
        self.max_r = self.max_r.max(r_now);
        self.sum_r += r_now;
        self.prev_r = r_now;
        self.cum_log_potential += log_potential;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: State,
    pub log_weight: f64,
    pub stats: TrajectoryStats,
    /// Stable between resampling events; rewritten to the ancestor's id when
    /// the particle is replaced by a copy.
    pub lineage_id: usize,
}

/// The interacting particle system at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    /// Time index shared by every particle.
    pub t: usize,
}

impl Ensemble {
    pub fn k(&self) -> usize {
        self.particles.len()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }

    pub fn states(&self) -> Vec<State> {
        self.particles.iter().map(|p| p.state.clone()).collect()
    }
}
