//! Property tests for the metric and weight-handling invariants.

use std::collections::BTreeMap;

use fkps::numeric::log_mean_exp;
use fkps::oracle::ExactDistribution;
use fkps::rng::{stream, StreamPurpose};
use fkps::{
    diversity, ess, fit_learned_reward, resample, tv_distance, Context, DiffusionProcess,
    EmbeddingSpec, Ensemble, MaskedDiscreteDiffusion, Particle, ResampleMethod,
    SequenceDistribution, State, TerminalReward, TrajectoryStats,
};
use proptest::prelude::*;

fn normalize(weights: &[f64]) -> Vec<f64> {
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| w / sum).collect()
}

fn counts_to_dist(counts: &BTreeMap<Vec<u16>, usize>) -> ExactDistribution {
    let total: usize = counts.values().sum();
    ExactDistribution {
        probs: counts
            .iter()
            .map(|(o, &c)| (o.clone(), c as f64 / total as f64))
            .collect(),
        z: 1.0,
    }
}

fn counts_strategy() -> impl Strategy<Value = BTreeMap<Vec<u16>, usize>> {
    proptest::collection::btree_map(
        proptest::collection::vec(0u16..3, 2),
        1usize..50,
        1..6,
    )
}

proptest! {
    #[test]
    fn ess_stays_within_bounds(raw in proptest::collection::vec(1e-6f64..1.0, 1..40)) {
        let w = normalize(&raw);
        let k = w.len() as f64;
        let e = ess(&w).unwrap();
        prop_assert!(e >= 1.0 - 1e-9);
        prop_assert!(e <= k + 1e-9);
    }

    #[test]
    fn ess_hits_k_only_for_uniform_weights(k in 2usize..30) {
        let uniform = vec![1.0 / k as f64; k];
        let e = ess(&uniform).unwrap();
        prop_assert!((e - k as f64).abs() < 1e-9);
        // perturb one weight: ess must drop strictly below k
        let mut skew = uniform;
        skew[0] += 0.5 / k as f64;
        skew[1] -= 0.5 / k as f64;
        let e = ess(&normalize(&skew)).unwrap();
        prop_assert!(e < k as f64 - 1e-9);
    }

    #[test]
    fn resampling_preserves_k_and_zeroes_weights(
        raw in proptest::collection::vec(-3.0f64..3.0, 2..20),
        seed in 0u64..1000,
    ) {
        let particles: Vec<Particle> = raw
            .iter()
            .enumerate()
            .map(|(i, &lw)| Particle {
                state: State::Vector(vec![i as f64]),
                log_weight: lw,
                stats: TrajectoryStats::default(),
                lineage_id: i,
            })
            .collect();
        let ensemble = Ensemble { particles, t: 1 };
        for method in [ResampleMethod::Multinomial, ResampleMethod::Systematic] {
            let mut rng = stream(seed, 1, 0, StreamPurpose::Resample);
            let out = resample(&ensemble, method, &mut rng).unwrap();
            prop_assert_eq!(out.k(), ensemble.k());
            prop_assert!(out.particles.iter().all(|p| p.log_weight == 0.0));
            // survivors are genuine copies
            for p in &out.particles {
                prop_assert_eq!(&p.state, &ensemble.particles[p.lineage_id].state);
            }
        }
    }

    #[test]
    fn tv_is_a_distance(
        a in counts_strategy(),
        b in counts_strategy(),
        c in counts_strategy(),
    ) {
        let da = counts_to_dist(&a);
        let db = counts_to_dist(&b);
        let dc = counts_to_dist(&c);
        let ab = tv_distance(&a, &db).unwrap();
        let ba = tv_distance(&b, &da).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0 && ab <= 1.0 + 1e-12);
        prop_assert!((tv_distance(&a, &da).unwrap()).abs() < 1e-12);
        let ac = tv_distance(&a, &dc).unwrap();
        let bc = tv_distance(&b, &dc).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn diversity_is_invariant_under_permutation_and_translation(
        points in proptest::collection::vec(
            proptest::collection::vec(-5.0f64..5.0, 2),
            2..8,
        ),
        shift in proptest::collection::vec(-10.0f64..10.0, 2),
        rotate in 0usize..7,
    ) {
        let states: Vec<State> = points.iter().cloned().map(State::Vector).collect();
        let base = diversity(&states, &EmbeddingSpec::Identity).unwrap();

        let mut permuted = states.clone();
        let mid = rotate % states.len();
        permuted.rotate_left(mid);
        let perm = diversity(&permuted, &EmbeddingSpec::Identity).unwrap();
        prop_assert!((base - perm).abs() < 1e-9);

        let translated: Vec<State> = points
            .iter()
            .map(|p| State::Vector(p.iter().zip(&shift).map(|(x, s)| x + s).collect()))
            .collect();
        let trans = diversity(&translated, &EmbeddingSpec::Identity).unwrap();
        prop_assert!((base - trans).abs() < 1e-9);
    }

    #[test]
    fn log_mean_exp_fixed_point(values in proptest::collection::vec(-4.0f64..4.0, 1..12)) {
        // appending a sample equal to the current log-mean-exp leaves the
        // value unchanged
        let current = log_mean_exp(&values);
        let mut extended = values.clone();
        extended.push(current);
        prop_assert!((log_mean_exp(&extended) - current).abs() < 1e-12);
    }
}

#[test]
fn learned_reward_loss_does_not_grow_with_more_data() {
    let process = DiffusionProcess::Masked(
        MaskedDiscreteDiffusion::with_default_schedule(2, 2, SequenceDistribution::Uniform)
            .unwrap(),
    );
    let terminal = TerminalReward::TokenCount { token: 0 };
    let mean_loss = |n: usize| -> f64 {
        (0..10u64)
            .map(|seed| {
                let mut rng = stream(40 + seed, 0, 0, StreamPurpose::Fit);
                fit_learned_reward(&process, &terminal, &Context::None, n, &mut rng)
                    .unwrap()
                    .meta()
                    .holdout_loss
            })
            .sum::<f64>()
            / 10.0
    };
    let small = mean_loss(1_000);
    let large = mean_loss(100_000);
    assert!(
        large <= small,
        "holdout loss grew with more data: {small} -> {large}"
    );
}
