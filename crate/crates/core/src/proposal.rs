//! Proposal generators and their importance corrections.
//!
//! Whatever kernel actually advances a particle, the returned correction
//! `log p_theta - log tau` keeps the weighted system on the Feynman-Kac
//! target.

use rand::Rng;

use crate::error::{FkError, Result};
use crate::numeric::log_sum_exp;
use crate::particle::TrajectoryStats;
use crate::potential::{log_potential, PotentialKind};
use crate::process::DiffusionProcess;
use crate::reward::{intermediate_reward, reward_gradient, terminal_reward, RewardSpec};
use crate::state::{Context, State};

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalSpec {
    /// The process's own reverse kernel; correction is identically zero.
    BaseModel,
    /// Gaussian toy only: shift each kernel component mean by
    /// `variance * guidance_lambda * grad r`. The gradient is taken at the
    /// denoised mean of the current state by default, at the raw state when
    /// `at_denoised_mean` is false.
    GradientGuided {
        guidance_lambda: f64,
        at_denoised_mean: bool,
    },
    /// Discrete toy only: sample `x_t` proportional to
    /// `p_theta(x_t | x_{t+1}) G_t(x_t)` over the step's enumerated support.
    DiscreteNormalized,
}

impl ProposalSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ProposalSpec::BaseModel => "base",
            ProposalSpec::GradientGuided { .. } => "gradient-guided",
            ProposalSpec::DiscreteNormalized => "discrete-normalized",
        }
    }
}

/// Everything a proposal may need to know about the step being proposed.
#[derive(Debug, Clone, Copy)]
pub struct ProposalStep<'a> {
    /// Target time index (the particle moves from `t + 1` to `t`).
    pub t: usize,
    /// Whether a non-unit potential is applied at `t`.
    pub scored: bool,
    pub lambda: f64,
    pub potential: PotentialKind,
    pub stats: &'a TrajectoryStats,
}

#[derive(Debug, Clone)]
pub struct Proposed {
    pub state: State,
    pub log_correction: f64,
    /// Reward the proposal already evaluated for the chosen state, so the
    /// engine can reuse it instead of re-evaluating. Set only by the
    /// normalized discrete proposal at scored steps.
    pub cached_reward: Option<f64>,
}

/// Validate a proposal against a process and reward without running it.
pub fn check_compatibility(
    spec: &ProposalSpec,
    process: &DiffusionProcess,
    reward: &RewardSpec,
) -> Result<()> {
    match (spec, process) {
        (ProposalSpec::GradientGuided { .. }, DiffusionProcess::Masked(_)) => {
            Err(FkError::IncompatibleProposal {
                proposal: spec.kind_name(),
                process: process.kind_name(),
            })
        }
        (ProposalSpec::DiscreteNormalized, DiffusionProcess::Gaussian(_)) => {
            Err(FkError::IncompatibleProposal {
                proposal: spec.kind_name(),
                process: process.kind_name(),
            })
        }
        (ProposalSpec::GradientGuided { .. }, _) if !reward.terminal.is_differentiable() => {
            Err(FkError::NonDifferentiableReward(reward.terminal.kind_name()))
        }
        _ => Ok(()),
    }
}

/// Advance one particle from `t + 1` to `step.t` and return the proposed
/// state, its importance correction, and any cached reward.
///
/// `rng` drives the proposal draw itself; `scan_rng` drives candidate
/// scoring inside the normalized discrete proposal (sampled reward modes
/// consume it in support order).
#[allow(clippy::too_many_arguments)]
pub fn propose_and_correct<R: Rng>(
    spec: &ProposalSpec,
    process: &DiffusionProcess,
    state: &State,
    step: ProposalStep,
    reward: &RewardSpec,
    context: &Context,
    rng: &mut R,
    scan_rng: &mut R,
) -> Result<Proposed> {
    match spec {
        ProposalSpec::BaseModel => base_proposal(process, state, step.t, context, rng),
        ProposalSpec::GradientGuided {
            guidance_lambda,
            at_denoised_mean,
        } => {
            let p = match process {
                DiffusionProcess::Gaussian(p) => p,
                DiffusionProcess::Masked(_) => {
                    return Err(FkError::IncompatibleProposal {
                        proposal: spec.kind_name(),
                        process: process.kind_name(),
                    })
                }
            };
            let x_next = state.as_vector()?;
            let kernel = p.reverse_kernel(x_next, step.t, context)?;
            let grad_at = if *at_denoised_mean {
                State::Vector(p.denoised_mean(x_next, step.t + 1, context)?)
            } else {
                state.clone()
            };
            let grad = reward_gradient(&reward.terminal, &grad_at, context)?;
            let guided = kernel.shifted(*guidance_lambda, &grad);
            let sample = guided.sample(rng);
            let log_correction = kernel.log_density(&sample) - guided.log_density(&sample);
            Ok(Proposed {
                state: State::Vector(sample),
                log_correction,
                cached_reward: None,
            })
        }
        ProposalSpec::DiscreteNormalized => {
            let p = match process {
                DiffusionProcess::Masked(p) => p,
                DiffusionProcess::Gaussian(_) => {
                    return Err(FkError::IncompatibleProposal {
                        proposal: spec.kind_name(),
                        process: process.kind_name(),
                    })
                }
            };
            // off-schedule (or bon before the terminal step) the potential is
            // a unit factor and the normalized proposal reduces to the base
            // kernel
            if !step.scored {
                return base_proposal(process, state, step.t, context, rng);
            }
            let scan =
                normalized_step_distribution(p, process, state, step, reward, context, scan_rng)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = scan.candidates.len() - 1;
            for (i, c) in scan.candidates.iter().enumerate() {
                acc += c.log_tau.exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let chosen = &scan.candidates[pick];
            Ok(Proposed {
                state: State::Sequence(chosen.pattern.clone()),
                log_correction: scan.log_normalizer - chosen.log_potential,
                cached_reward: Some(chosen.reward),
            })
        }
    }
}

fn base_proposal<R: Rng>(
    process: &DiffusionProcess,
    state: &State,
    t: usize,
    context: &Context,
    rng: &mut R,
) -> Result<Proposed> {
    let (next, _) = process.reverse_sample_and_logdensity(state, t, context, rng)?;
    Ok(Proposed {
        state: next,
        log_correction: 0.0,
        cached_reward: None,
    })
}

/// One candidate of the normalized discrete proposal.
#[derive(Debug, Clone)]
pub struct ScanCandidate {
    pub pattern: crate::state::Pattern,
    /// log p_theta(x_t | x_{t+1}) of the candidate.
    pub log_base: f64,
    /// log G_t of the candidate under the step's potential.
    pub log_potential: f64,
    /// Normalized log tau.
    pub log_tau: f64,
    pub reward: f64,
}

pub struct ScanResult {
    pub candidates: Vec<ScanCandidate>,
    /// log sum over the support of `p_theta * G_t`.
    pub log_normalizer: f64,
}

/// Enumerate the normalized proposal distribution for one scored step.
/// Shared by the sampler and by tests that verify the correction identity by
/// exact summation.
pub fn normalized_step_distribution<R: Rng>(
    masked: &crate::process::MaskedDiscreteDiffusion,
    process: &DiffusionProcess,
    state: &State,
    step: ProposalStep,
    reward: &RewardSpec,
    context: &Context,
    scan_rng: &mut R,
) -> Result<ScanResult> {
    let pattern = state.as_sequence()?;
    let support = masked.reverse_step_support(pattern, step.t)?;
    let mut candidates = Vec::with_capacity(support.len());
    for (cand, log_base) in support {
        let cand_state = State::Sequence(cand.clone());
        let r = if step.t == 0 {
            terminal_reward(&reward.terminal, &cand_state, context)?
        } else {
            intermediate_reward(reward, process, &cand_state, step.t, context, scan_rng)?
        };
        let log_g = log_potential(step.potential, step.lambda, step.stats, r, step.t);
        candidates.push(ScanCandidate {
            pattern: cand,
            log_base,
            log_potential: log_g,
            log_tau: 0.0,
            reward: r,
        });
    }
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| c.log_base + c.log_potential)
        .collect();
    let log_normalizer = log_sum_exp(&scores);
    for (c, s) in candidates.iter_mut().zip(scores) {
        c.log_tau = s - log_normalizer;
    }
    Ok(ScanResult {
        candidates,
        log_normalizer,
    })
}
