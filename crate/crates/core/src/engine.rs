//! The interacting particle system loop: propose, re-weight, resample.
//!
//! Weights accumulate additively in log space between resampling events and
//! reset to zero after each event. The terminal step applies the potential's
//! correction so every lineage total equals `lambda * r(x_0)`, then an
//! optional final multinomial resample turns the weighted ensemble into
//! unweighted target samples. Resampling is skipped whenever every weight is
//! equal: it could only inject variance.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{FkError, Result};
use crate::numeric::{argmax_lowest, log_mean_exp, normalize_log_weights};
use crate::particle::{Ensemble, Particle, TrajectoryStats};
use crate::potential::{log_potential, PotentialKind};
use crate::process::DiffusionProcess;
use crate::proposal::{check_compatibility, propose_and_correct, ProposalSpec, ProposalStep};
use crate::reward::{intermediate_reward, terminal_reward, IntermediateReward, RewardSpec};
use crate::rng::{stream, StreamPurpose};
use crate::state::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResampleMode {
    EveryStep,
    /// Resample only at these time indices; must contain 0.
    Interval(BTreeSet<usize>),
}

/// Gate on the effective sample size at scheduled steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EssGate {
    Off,
    /// Skip resampling once ESS has dropped below `fraction * k`; favors
    /// particle diversity over weight balance. The default.
    SkipWhenLow,
    /// Conventional adaptive resampling: resample only when ESS is below
    /// `fraction * k`.
    ResampleWhenLow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleSchedule {
    pub mode: ResampleMode,
    pub ess_gate: EssGate,
    pub ess_threshold_fraction: f64,
}

impl Default for ResampleSchedule {
    fn default() -> Self {
        ResampleSchedule {
            mode: ResampleMode::EveryStep,
            ess_gate: EssGate::SkipWhenLow,
            ess_threshold_fraction: 0.5,
        }
    }
}

impl ResampleSchedule {
    pub fn every_step() -> Self {
        Self::default()
    }

    pub fn interval(indices: impl IntoIterator<Item = usize>) -> Self {
        ResampleSchedule {
            mode: ResampleMode::Interval(indices.into_iter().collect()),
            ..Self::default()
        }
    }

    pub fn with_gate(mut self, gate: EssGate, fraction: f64) -> Self {
        self.ess_gate = gate;
        self.ess_threshold_fraction = fraction;
        self
    }

    pub fn is_scheduled(&self, t: usize) -> bool {
        match &self.mode {
            ResampleMode::EveryStep => true,
            ResampleMode::Interval(set) => set.contains(&t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FKConfig {
    pub k: usize,
    /// Tilt strength; shared by the potential and the target.
    pub lambda: f64,
    pub potential: PotentialKind,
    pub proposal: ProposalSpec,
    pub reward: RewardSpec,
    pub schedule: ResampleSchedule,
    pub resample_method: ResampleMethod,
    /// Convert the weighted terminal ensemble into unweighted target samples.
    pub final_resample: bool,
    /// Candidate selection for the nested sampler: argmax instead of a
    /// finite-temperature multinomial.
    pub svdd_argmax: bool,
    pub seed: u64,
    pub context: Context,
}

impl FKConfig {
    pub fn new(k: usize, lambda: f64, potential: PotentialKind, reward: RewardSpec) -> Self {
        FKConfig {
            k,
            lambda,
            potential,
            proposal: ProposalSpec::BaseModel,
            reward,
            schedule: ResampleSchedule::default(),
            resample_method: ResampleMethod::Multinomial,
            final_resample: true,
            svdd_argmax: false,
            seed: 0,
            context: Context::None,
        }
    }
}

/// Per-run diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDiagnostics {
    /// `(t, ess)` for every step the loop visited, in generation order.
    pub ess_trace: Vec<(usize, f64)>,
    /// Time indices where the ensemble was actually resampled.
    pub resample_events: Vec<usize>,
    /// Running sum of log-mean-weights over resampling events plus the final
    /// unresampled segment.
    pub log_z_hat: f64,
    /// Terminal rewards recorded before the final resample.
    pub final_rewards: Vec<f64>,
    /// Argmax of `final_rewards`, ties toward the lowest index.
    pub best_index: usize,
}

/// The log-partition estimate accumulated by a completed run.
pub fn estimate_log_partition(diagnostics: &RunDiagnostics) -> f64 {
    diagnostics.log_z_hat
}

/// Effective sample size `1 / sum w_i^2` of a normalized weight vector.
pub fn ess(normalized_weights: &[f64]) -> Result<f64> {
    if normalized_weights.is_empty() {
        return Err(FkError::WeightContract("empty weight vector".into()));
    }
    if normalized_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(FkError::WeightContract(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = normalized_weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(FkError::WeightContract(format!(
            "weights sum to {sum}, expected 1"
        )));
    }
    Ok(1.0 / normalized_weights.iter().map(|w| w * w).sum::<f64>())
}

/// Whether the engine resamples at time `t` given the schedule and the
/// current effective sample size.
///
/// Uniform weights (detected as `ess` within rounding of `k`) never trigger a
/// resample; it would only inject variance.
pub fn should_resample(t: usize, schedule: &ResampleSchedule, ess_value: f64, k: usize) -> bool {
    if !schedule.is_scheduled(t) {
        return false;
    }
    let kf = k as f64;
    if ess_value >= kf * (1.0 - 1e-9) {
        return false;
    }
    let threshold = schedule.ess_threshold_fraction * kf;
    match schedule.ess_gate {
        EssGate::Off => true,
        EssGate::SkipWhenLow => ess_value >= threshold,
        EssGate::ResampleWhenLow => ess_value < threshold,
    }
}

fn ancestors_multinomial<R: rand::Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    (0..k)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * acc;
            cumulative.partition_point(|&c| c <= u).min(weights.len() - 1)
        })
        .collect()
}

fn ancestors_systematic<R: rand::Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let step = total / k as f64;
    let mut u = rng.gen::<f64>() * step;
    let mut out = Vec::with_capacity(k);
    let mut acc = weights[0];
    let mut j = 0;
    for _ in 0..k {
        while u >= acc && j + 1 < weights.len() {
            j += 1;
            acc += weights[j];
        }
        out.push(j);
        u += step;
    }
    out
}

fn resample_particles<R: rand::Rng>(
    particles: &[Particle],
    method: ResampleMethod,
    t: usize,
    rng: &mut R,
) -> Result<Vec<Particle>> {
    let log_w: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    let weights =
        normalize_log_weights(&log_w).ok_or(FkError::DegenerateEnsemble { t })?;
    let k = particles.len();
    let ancestors = match method {
        ResampleMethod::Multinomial => ancestors_multinomial(&weights, k, rng),
        ResampleMethod::Systematic => ancestors_systematic(&weights, k, rng),
    };
    Ok(ancestors
        .into_iter()
        .map(|a| {
            let mut copy = particles[a].clone();
            copy.log_weight = 0.0;
            copy
        })
        .collect())
}

/// Multinomially (or systematically) resample an ensemble on its normalized
/// weights; the survivors keep their full state and statistics and every
/// log-weight resets to zero.
pub fn resample<R: rand::Rng>(
    ensemble: &Ensemble,
    method: ResampleMethod,
    rng: &mut R,
) -> Result<Ensemble> {
    Ok(Ensemble {
        particles: resample_particles(&ensemble.particles, method, ensemble.t, rng)?,
        t: ensemble.t,
    })
}

fn validate(config: &FKConfig, process: &DiffusionProcess) -> Result<()> {
    if config.k == 0 {
        return Err(FkError::InvalidConfig("k must be >= 1".into()));
    }
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        return Err(FkError::InvalidConfig(
            "lambda must be finite and >= 0".into(),
        ));
    }
    let f = config.schedule.ess_threshold_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(FkError::InvalidConfig(
            "ess threshold fraction must be in (0, 1]".into(),
        ));
    }
    if let ResampleMode::Interval(set) = &config.schedule.mode {
        if !set.contains(&0) {
            return Err(FkError::InvalidConfig(
                "interval schedule must contain t = 0".into(),
            ));
        }
        if let Some(&max) = set.iter().next_back() {
            if max >= process.t_max() {
                return Err(FkError::InvalidConfig(format!(
                    "schedule index {max} outside the process grid (T = {})",
                    process.t_max()
                )));
            }
        }
    }
    if let IntermediateReward::ManySample { n } = config.reward.intermediate {
        if n == 0 {
            return Err(FkError::InvalidConfig(
                "many-sample needs at least one rollout".into(),
            ));
        }
    }
    check_compatibility(&config.proposal, process, &config.reward)
}

fn all_equal(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

fn advance_particle(
    particle: &Particle,
    index: usize,
    t: usize,
    scored: bool,
    config: &FKConfig,
    process: &DiffusionProcess,
) -> Result<(Particle, Option<f64>)> {
    let mut propose_rng = stream(config.seed, t, index, StreamPurpose::Propose);
    let mut scan_rng = stream(config.seed, t, index, StreamPurpose::Scan);
    let step = ProposalStep {
        t,
        scored,
        lambda: config.lambda,
        potential: config.potential,
        stats: &particle.stats,
    };
    let proposed = propose_and_correct(
        &config.proposal,
        process,
        &particle.state,
        step,
        &config.reward,
        &config.context,
        &mut propose_rng,
        &mut scan_rng,
    )?;
    let mut next = Particle {
        state: proposed.state,
        log_weight: particle.log_weight + proposed.log_correction,
        stats: particle.stats,
        lineage_id: particle.lineage_id,
    };
    if !scored {
        return Ok((next, None));
    }
    let r_now = match proposed.cached_reward {
        Some(r) => r,
        None if t == 0 => terminal_reward(&config.reward.terminal, &next.state, &config.context)?,
        None => {
            let mut reward_rng = stream(config.seed, t, index, StreamPurpose::Reward);
            intermediate_reward(
                &config.reward,
                process,
                &next.state,
                t,
                &config.context,
                &mut reward_rng,
            )?
        }
    };
    if !r_now.is_finite() {
        return Err(FkError::NonFiniteReward {
            t,
            particle: index,
            value: r_now,
        });
    }
    let log_g = log_potential(config.potential, config.lambda, &next.stats, r_now, t);
    next.stats.record(r_now, log_g);
    next.log_weight += log_g;
    Ok((next, Some(r_now)))
}

/// Run the full particle system from the prior down to `t = 0`.
///
/// Returns the terminal ensemble (unweighted target samples when the final
/// resample is on) and the run diagnostics.
pub fn fk_sample(config: &FKConfig, process: &DiffusionProcess) -> Result<(Ensemble, RunDiagnostics)> {
    validate(config, process)?;
    let t_max = process.t_max();
    let k = config.k;

    let mut particles = (0..k)
        .map(|i| {
            let mut rng = stream(config.seed, t_max, i, StreamPurpose::Init);
            Ok(Particle {
                state: process.prior_sample(&config.context, &mut rng)?,
                log_weight: 0.0,
                stats: TrajectoryStats::default(),
                lineage_id: i,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut diagnostics = RunDiagnostics {
        ess_trace: Vec::with_capacity(t_max),
        resample_events: Vec::new(),
        log_z_hat: 0.0,
        final_rewards: Vec::new(),
        best_index: 0,
    };

    for t in (0..t_max).rev() {
        let scheduled = config.schedule.is_scheduled(t);
        // bon applies a unit potential before the terminal step, so skip the
        // reward evaluation entirely there
        let scored = scheduled && (t == 0 || config.potential != PotentialKind::Bon);

        let stepped: Vec<(Particle, Option<f64>)> = (0..k)
            .into_par_iter()
            .map(|i| advance_particle(&particles[i], i, t, scored, config, process))
            .collect::<Result<Vec<_>>>()?;
        let mut rewards = Vec::with_capacity(k);
        particles = stepped
            .into_iter()
            .map(|(p, r)| {
                if let Some(r) = r {
                    rewards.push(r);
                }
                p
            })
            .collect();

        let log_w: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
        let normalized =
            normalize_log_weights(&log_w).ok_or(FkError::DegenerateEnsemble { t })?;
        let ess_value = ess(&normalized)?;
        diagnostics.ess_trace.push((t, ess_value));
        let uniform = all_equal(&log_w);

        if t == 0 {
            diagnostics.final_rewards = rewards;
            diagnostics.best_index = argmax_lowest(&diagnostics.final_rewards);
            if config.final_resample && !uniform {
                diagnostics.log_z_hat += log_mean_exp(&log_w);
                diagnostics.resample_events.push(0);
                let mut rng = stream(config.seed, 0, 0, StreamPurpose::Resample);
                particles =
                    resample_particles(&particles, ResampleMethod::Multinomial, 0, &mut rng)?;
            }
        } else if !uniform && should_resample(t, &config.schedule, ess_value, k) {
            diagnostics.log_z_hat += log_mean_exp(&log_w);
            diagnostics.resample_events.push(t);
            let mut rng = stream(config.seed, t, 0, StreamPurpose::Resample);
            particles = resample_particles(&particles, config.resample_method, t, &mut rng)?;
        }
    }

    // close the last weight segment; exactly zero if the run just resampled
    let log_w: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    diagnostics.log_z_hat += log_mean_exp(&log_w);

    Ok((Ensemble { particles, t: 0 }, diagnostics))
}
