//! Baseline samplers: best-of-n importance sampling and the nested
//! candidate-selection scheme (svdd).
//!
//! Both consume the same counter-based streams as the particle engine, so
//! best-of-n is draw-for-draw identical to `fk_sample` with the bon potential
//! and the final resample turned off.

use rayon::prelude::*;

use crate::engine::{ess, FKConfig, RunDiagnostics};
use crate::error::{FkError, Result};
use crate::numeric::{argmax_lowest, log_mean_exp, normalize_log_weights};
use crate::particle::{Ensemble, Particle, TrajectoryStats};
use crate::process::DiffusionProcess;
use crate::reward::{intermediate_reward, terminal_reward};
use crate::rng::{stream, StreamPurpose};

/// `k` independent rollouts of the base process, scored only at the end.
pub fn best_of_n(config: &FKConfig, process: &DiffusionProcess) -> Result<(Ensemble, RunDiagnostics)> {
    if config.k == 0 {
        return Err(FkError::InvalidConfig("k must be >= 1".into()));
    }
    let t_max = process.t_max();
    let k = config.k;
    let particles: Vec<Particle> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(config.seed, t_max, i, StreamPurpose::Init);
            let mut state = process.prior_sample(&config.context, &mut rng)?;
            for t in (0..t_max).rev() {
                let mut rng = stream(config.seed, t, i, StreamPurpose::Propose);
                let (next, _) =
                    process.reverse_sample_and_logdensity(&state, t, &config.context, &mut rng)?;
                state = next;
            }
            let r = terminal_reward(&config.reward.terminal, &state, &config.context)?;
            if !r.is_finite() {
                return Err(FkError::NonFiniteReward {
                    t: 0,
                    particle: i,
                    value: r,
                });
            }
            // mirror the stats the engine would record at the terminal step
            let mut stats = TrajectoryStats::default();
            let log_g = config.lambda * r;
            stats.record(r, log_g);
            Ok(Particle {
                state,
                log_weight: log_g,
                stats,
                lineage_id: i,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let rewards: Vec<f64> = particles.iter().map(|p| p.stats.prev_r).collect();
    let log_w: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    let normalized = normalize_log_weights(&log_w).ok_or(FkError::DegenerateEnsemble { t: 0 })?;
    let diagnostics = RunDiagnostics {
        ess_trace: vec![(0, ess(&normalized)?)],
        resample_events: Vec::new(),
        log_z_hat: log_mean_exp(&log_w),
        best_index: argmax_lowest(&rewards),
        final_rewards: rewards,
    };
    Ok((Ensemble { particles, t: 0 }, diagnostics))
}

/// Pick one candidate index from selection log-weights: multinomial on the
/// normalized weights, or argmax (ties toward the lowest index) in the
/// infinite-temperature mode.
pub fn select_candidate<R: rand::Rng>(
    selection_log_weights: &[f64],
    argmax: bool,
    rng: &mut R,
) -> Result<usize> {
    if argmax {
        return Ok(argmax_lowest(selection_log_weights));
    }
    let weights = normalize_log_weights(selection_log_weights)
        .ok_or(FkError::DegenerateEnsemble { t: 0 })?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(weights.len() - 1)
}

/// Nested scheme: at every step draw `k` candidates from the current single
/// state, keep one (multinomial on `exp(lambda * delta r)`, or argmax when
/// `svdd_argmax` is set), and duplicate it `k`-fold.
pub fn svdd_sample(config: &FKConfig, process: &DiffusionProcess) -> Result<(Ensemble, RunDiagnostics)> {
    if config.k == 0 {
        return Err(FkError::InvalidConfig("k must be >= 1".into()));
    }
    let t_max = process.t_max();
    let k = config.k;
    let mut rng = stream(config.seed, t_max, 0, StreamPurpose::Init);
    let mut state = process.prior_sample(&config.context, &mut rng)?;
    let mut stats = TrajectoryStats::default();
    let mut diagnostics = RunDiagnostics {
        ess_trace: Vec::with_capacity(t_max),
        resample_events: Vec::new(),
        log_z_hat: 0.0,
        final_rewards: Vec::new(),
        best_index: 0,
    };

    for t in (0..t_max).rev() {
        let candidates: Vec<(crate::state::State, f64)> = (0..k)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(config.seed, t, i, StreamPurpose::Propose);
                let (cand, _) =
                    process.reverse_sample_and_logdensity(&state, t, &config.context, &mut rng)?;
                let r = if t == 0 {
                    terminal_reward(&config.reward.terminal, &cand, &config.context)?
                } else {
                    let mut reward_rng = stream(config.seed, t, i, StreamPurpose::Reward);
                    intermediate_reward(
                        &config.reward,
                        process,
                        &cand,
                        t,
                        &config.context,
                        &mut reward_rng,
                    )?
                };
                if !r.is_finite() {
                    return Err(FkError::NonFiniteReward {
                        t,
                        particle: i,
                        value: r,
                    });
                }
                Ok((cand, r))
            })
            .collect::<Result<Vec<_>>>()?;

        let selection: Vec<f64> = candidates
            .iter()
            .map(|(_, r)| config.lambda * (r - stats.prev_r))
            .collect();
        if let Some(normalized) = normalize_log_weights(&selection) {
            diagnostics.ess_trace.push((t, ess(&normalized)?));
        }
        if !config.svdd_argmax {
            diagnostics.log_z_hat += log_mean_exp(&selection);
        }
        diagnostics.resample_events.push(t);
        let mut select_rng = stream(config.seed, t, 0, StreamPurpose::Resample);
        let pick = select_candidate(&selection, config.svdd_argmax, &mut select_rng)?;
        let (cand, r) = candidates.into_iter().nth(pick).expect("pick in range");
        state = cand;
        stats.record(r, 0.0);
    }
    if config.svdd_argmax {
        // the infinite-temperature selection has no partition estimate
        diagnostics.log_z_hat = f64::NAN;
    }

    let final_reward = stats.prev_r;
    diagnostics.final_rewards = vec![final_reward; k];
    diagnostics.best_index = 0;
    let particles = (0..k)
        .map(|_| Particle {
            state: state.clone(),
            log_weight: 0.0,
            stats,
            lineage_id: 0,
        })
        .collect();
    Ok((Ensemble { particles, t: 0 }, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::fk_sample;
    use crate::potential::PotentialKind;
    use crate::process::{MaskedDiscreteDiffusion, SequenceDistribution};
    use crate::reward::{IntermediateReward, RewardSpec, TerminalReward};

    fn toy(k: usize, lambda: f64) -> (FKConfig, DiffusionProcess) {
        let process = DiffusionProcess::Masked(
            MaskedDiscreteDiffusion::with_default_schedule(2, 2, SequenceDistribution::Uniform)
                .unwrap(),
        );
        let reward = RewardSpec {
            terminal: TerminalReward::TokenCount { token: 0 },
            intermediate: IntermediateReward::DenoisedMean,
        };
        (
            FKConfig::new(k, lambda, PotentialKind::Bon, reward),
            process,
        )
    }

    #[test]
    fn bon_reports_the_max_over_rollouts() {
        let (mut config, process) = toy(8, 1.0);
        config.seed = 3;
        let (_, diag) = best_of_n(&config, &process).unwrap();
        let max = diag
            .final_rewards
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(diag.final_rewards[diag.best_index], max);
    }

    #[test]
    fn fk_with_bon_potential_reproduces_bon_draw_for_draw() {
        let (mut config, process) = toy(8, 1.4);
        config.seed = 19;
        config.final_resample = false;
        let (fk_ensemble, fk_diag) = fk_sample(&config, &process).unwrap();
        let (bon_ensemble, bon_diag) = best_of_n(&config, &process).unwrap();
        assert_eq!(fk_ensemble.particles, bon_ensemble.particles);
        assert_eq!(fk_diag.final_rewards, bon_diag.final_rewards);
        assert_eq!(fk_diag.best_index, bon_diag.best_index);
        assert_eq!(fk_diag.log_z_hat, bon_diag.log_z_hat);
        assert!(fk_diag.resample_events.is_empty());
    }

    #[test]
    fn bon_single_rollout_partition_estimate() {
        let (mut config, process) = toy(1, 2.0);
        config.seed = 4;
        let (_, diag) = best_of_n(&config, &process).unwrap();
        assert!((diag.log_z_hat - config.lambda * diag.final_rewards[0]).abs() < 1e-12);
    }

    #[test]
    fn argmax_selection_picks_the_largest_potential() {
        // step potentials [0.1, 5.0, 0.2, 0.3] -> index 1
        let log_w: Vec<f64> = [0.1f64, 5.0, 0.2, 0.3].iter().map(|p| p.ln()).collect();
        let mut rng = stream(0, 0, 0, StreamPurpose::Resample);
        assert_eq!(select_candidate(&log_w, true, &mut rng).unwrap(), 1);
    }

    #[test]
    fn svdd_duplicates_the_selected_particle() {
        let (mut config, process) = toy(6, 2.0);
        config.seed = 9;
        let (ensemble, diag) = svdd_sample(&config, &process).unwrap();
        assert_eq!(ensemble.k(), 6);
        let first = &ensemble.particles[0];
        for p in &ensemble.particles {
            assert_eq!(p.state, first.state);
        }
        assert_eq!(diag.final_rewards, vec![diag.final_rewards[0]; 6]);
    }

    #[test]
    fn single_candidate_svdd_and_bon_agree_with_each_other() {
        let (mut config, process) = toy(1, 1.0);
        config.seed = 13;
        let (svdd_ensemble, _) = svdd_sample(&config, &process).unwrap();
        let (bon_ensemble, _) = best_of_n(&config, &process).unwrap();
        assert_eq!(
            svdd_ensemble.particles[0].state,
            bon_ensemble.particles[0].state
        );
    }
}
