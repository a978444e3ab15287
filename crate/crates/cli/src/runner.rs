//! Experiment execution and machine-readable output.
//!
//! Sweep points and seeds run in parallel worker slots; every row's entropy
//! comes from counter-based streams, so the CSV is byte-identical across
//! repeat runs and thread counts (wall_time_ms, the last column, excepted).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use fkps::{
    best_of_n, diversity, exact_tilted_target, fk_sample, outcome_counts, reward_summary,
    svdd_sample, tv_distance, AttributePredicate, DiffusionProcess, Ensemble, ExactDistribution,
    FKConfig, RunDiagnostics,
};

use crate::config::{Experiment, Sampler, SweepAxis};
use crate::AppError;

pub const CSV_HEADER: [&str; 13] = [
    "seed",
    "sampler",
    "k",
    "lambda",
    "potential",
    "proposal",
    "mean_reward",
    "max_reward",
    "attribute_fraction",
    "tv",
    "diversity",
    "log_z_hat",
    "wall_time_ms",
];

pub struct ResultRow {
    pub seed: u64,
    pub sampler: Sampler,
    pub k: usize,
    pub lambda: f64,
    pub potential: &'static str,
    pub proposal: &'static str,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub attribute_fraction: Option<f64>,
    pub tv: Option<f64>,
    pub diversity: Option<f64>,
    pub log_z_hat: f64,
    pub wall_time_ms: f64,
    pub diagnostics: RunDiagnostics,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultRow {
    fn record(&self) -> [String; 13] {
        [
            self.seed.to_string(),
            self.sampler.name().to_string(),
            self.k.to_string(),
            self.lambda.to_string(),
            self.potential.to_string(),
            self.proposal.to_string(),
            self.mean_reward.to_string(),
            self.max_reward.to_string(),
            fmt_opt(self.attribute_fraction),
            fmt_opt(self.tv),
            fmt_opt(self.diversity),
            self.log_z_hat.to_string(),
            self.wall_time_ms.to_string(),
        ]
    }
}

/// One task: a sampler at a sweep point with a concrete seed.
struct Job {
    sampler: Sampler,
    config: FKConfig,
    target: Option<std::sync::Arc<ExactDistribution>>,
}

fn run_sampler(
    sampler: Sampler,
    config: &FKConfig,
    process: &DiffusionProcess,
) -> fkps::Result<(Ensemble, RunDiagnostics)> {
    match sampler {
        Sampler::Fk => fk_sample(config, process),
        Sampler::Bon => best_of_n(config, process),
        Sampler::Svdd => svdd_sample(config, process),
        Sampler::Base => {
            let mut base = config.clone();
            base.lambda = 0.0;
            best_of_n(&base, process)
        }
    }
}

fn execute(job: &Job, experiment: &Experiment) -> Result<ResultRow, AppError> {
    let start = Instant::now();
    let (ensemble, diagnostics) = run_sampler(job.sampler, &job.config, &experiment.process)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;

    let summary = reward_summary(&diagnostics.final_rewards, None)
        .map_err(|e| AppError::Runtime(e.to_string()))?;

    let attribute_fraction = match &experiment.predicate {
        None => None,
        Some(predicate) => Some(attribute_fraction(
            job.sampler,
            predicate,
            &ensemble,
            &diagnostics,
        )?),
    };

    let tv = match &job.target {
        None => None,
        Some(target) => {
            let counts = outcome_counts(ensemble.particles.iter().map(|p| &p.state))
                .map_err(|e| AppError::Runtime(e.to_string()))?;
            Some(tv_distance(&counts, target).map_err(|e| AppError::Runtime(e.to_string()))?)
        }
    };

    let diversity_score = if ensemble.k() >= 2 {
        Some(
            diversity(&ensemble.states(), &experiment.embedding)
                .map_err(|e| AppError::Runtime(e.to_string()))?,
        )
    } else {
        None
    };

    Ok(ResultRow {
        seed: job.config.seed,
        sampler: job.sampler,
        k: job.config.k,
        lambda: effective_lambda(job.sampler, &job.config),
        potential: job.config.potential.name(),
        proposal: job.config.proposal.kind_name(),
        mean_reward: summary.mean,
        max_reward: summary.max,
        attribute_fraction,
        tv,
        diversity: diversity_score,
        log_z_hat: diagnostics.log_z_hat,
        wall_time_ms,
        diagnostics,
    })
}

fn effective_lambda(sampler: Sampler, config: &FKConfig) -> f64 {
    // the base sampler ignores the tilt
    if sampler == Sampler::Base {
        0.0
    } else {
        config.lambda
    }
}

/// Hit-rate semantics per sampler: best-of-n reports its selected (best)
/// particle, everything else reports the fraction of the output ensemble.
fn attribute_fraction(
    sampler: Sampler,
    predicate: &AttributePredicate,
    ensemble: &Ensemble,
    diagnostics: &RunDiagnostics,
) -> Result<f64, AppError> {
    let as_runtime = |e: fkps::FkError| AppError::Runtime(e.to_string());
    match sampler {
        Sampler::Bon => {
            let best = &ensemble.particles[diagnostics.best_index];
            Ok(if predicate.matches(&best.state).map_err(as_runtime)? {
                1.0
            } else {
                0.0
            })
        }
        _ => {
            let hits = ensemble
                .particles
                .iter()
                .map(|p| predicate.matches(&p.state))
                .collect::<fkps::Result<Vec<bool>>>()
                .map_err(as_runtime)?;
            Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
        }
    }
}

/// Exact target for the tv column, when the oracle is enabled and the
/// process is enumerable. Sweeps over lambda need one target per point.
fn target_for(
    experiment: &Experiment,
    lambda: f64,
) -> Result<Option<std::sync::Arc<ExactDistribution>>, AppError> {
    if !experiment.oracle_enabled {
        return Ok(None);
    }
    let masked = match experiment.process.as_ref() {
        DiffusionProcess::Masked(p) => p,
        DiffusionProcess::Gaussian(_) => return Ok(None),
    };
    let dist = exact_tilted_target(
        masked,
        &experiment.template.reward.terminal,
        lambda,
        &experiment.template.context,
    )
    .map_err(|e| AppError::Runtime(e.to_string()))?;
    Ok(Some(std::sync::Arc::new(dist)))
}

fn jobs_for(
    experiment: &Experiment,
    samplers: &[Sampler],
) -> Result<Vec<Job>, AppError> {
    let points: Vec<(usize, f64)> = match &experiment.sweep {
        None => vec![(experiment.template.k, experiment.template.lambda)],
        Some((SweepAxis::K, values)) => values
            .iter()
            .map(|&v| (v as usize, experiment.template.lambda))
            .collect(),
        Some((SweepAxis::Lambda, values)) => values
            .iter()
            .map(|&v| (experiment.template.k, v))
            .collect(),
    };
    let mut jobs = Vec::new();
    for &sampler in samplers {
        for &(k, lambda) in &points {
            let target = target_for(experiment, effective_lambda_value(sampler, lambda))?;
            for rep in 0..experiment.seeds {
                let mut config = experiment.template.clone();
                config.k = k;
                config.lambda = lambda;
                config.seed = experiment.template.seed.wrapping_add(rep as u64);
                jobs.push(Job {
                    sampler,
                    config,
                    target: target.clone(),
                });
            }
        }
    }
    Ok(jobs)
}

fn effective_lambda_value(sampler: Sampler, lambda: f64) -> f64 {
    if sampler == Sampler::Base {
        0.0
    } else {
        lambda
    }
}

fn run_jobs(jobs: &[Job], experiment: &Experiment, verbose: bool) -> Result<Vec<ResultRow>, AppError> {
    jobs.par_iter()
        .map(|job| {
            let row = execute(job, experiment)?;
            if verbose {
                eprintln!(
                    "ran sampler={} k={} lambda={} seed={}",
                    row.sampler.name(),
                    row.k,
                    row.lambda,
                    row.seed
                );
            }
            Ok(row)
        })
        .collect()
}

fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), AppError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    for row in rows {
        writer
            .write_record(row.record())
            .map_err(|e| AppError::Runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| AppError::Runtime(e.to_string()))
}

fn write_diagnostics(rows: &[ResultRow], path: &Path) -> Result<(), AppError> {
    let mut out = std::io::BufWriter::new(
        fs::File::create(path).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?,
    );
    let mut emit = || -> std::io::Result<()> {
        writeln!(out, "# fkps diagnostics v1")?;
        for row in rows {
            writeln!(
                out,
                "run seed={} sampler={} k={} lambda={} potential={} proposal={}",
                row.seed,
                row.sampler.name(),
                row.k,
                row.lambda,
                row.potential,
                row.proposal
            )?;
            for (t, e) in &row.diagnostics.ess_trace {
                writeln!(out, "ess {t} {e}")?;
            }
            for t in &row.diagnostics.resample_events {
                writeln!(out, "resample {t}")?;
            }
            writeln!(out, "log_z_hat {}", row.diagnostics.log_z_hat)?;
            writeln!(out, "best_index {}", row.diagnostics.best_index)?;
            let rewards: Vec<String> = row
                .diagnostics
                .final_rewards
                .iter()
                .map(|r| r.to_string())
                .collect();
            writeln!(out, "final_rewards {}", rewards.join(" "))?;
            writeln!(out, "end")?;
        }
        Ok(())
    };
    emit().map_err(|e| AppError::Runtime(e.to_string()))
}

pub fn cmd_run(experiment: &Experiment, verbose: bool) -> Result<(), AppError> {
    fs::create_dir_all(&experiment.out_dir).map_err(|e| AppError::Runtime(e.to_string()))?;
    let jobs = jobs_for(experiment, &[experiment.sampler])?;
    let rows = run_jobs(&jobs, experiment, verbose)?;
    write_csv(&rows, &experiment.out_dir.join("results.csv"))?;
    write_diagnostics(&rows, &experiment.out_dir.join("diagnostics.txt"))?;
    Ok(())
}

pub fn cmd_compare(experiment: &Experiment, verbose: bool) -> Result<(), AppError> {
    fs::create_dir_all(&experiment.out_dir).map_err(|e| AppError::Runtime(e.to_string()))?;
    let samplers = [Sampler::Fk, Sampler::Bon, Sampler::Svdd, Sampler::Base];
    let jobs = jobs_for(experiment, &samplers)?;
    let rows = run_jobs(&jobs, experiment, verbose)?;
    write_csv(&rows, &experiment.out_dir.join("compare.csv"))?;
    write_diagnostics(&rows, &experiment.out_dir.join("diagnostics.txt"))?;
    write_summary(&rows, &samplers, &experiment.out_dir.join("summary.txt"))?;
    Ok(())
}

/// Paired mean-reward differences with standard errors, every sampler pair.
fn write_summary(rows: &[ResultRow], samplers: &[Sampler], path: &Path) -> Result<(), AppError> {
    let mut by_sampler: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        by_sampler.entry(row.sampler.name()).or_default().push(row);
    }
    let mut out = std::io::BufWriter::new(
        fs::File::create(path).map_err(|e| AppError::Runtime(e.to_string()))?,
    );
    let mut emit = || -> std::io::Result<()> {
        writeln!(out, "# paired differences, seed-matched")?;
        writeln!(out, "pair metric mean_diff se n")?;
        for (i, a) in samplers.iter().enumerate() {
            for b in samplers.iter().skip(i + 1) {
                let rows_a = &by_sampler[a.name()];
                let rows_b = &by_sampler[b.name()];
                for (metric, field) in [
                    ("mean_reward", 0usize),
                    ("attribute_fraction", 1usize),
                ] {
                    let diffs: Vec<f64> = rows_a
                        .iter()
                        .zip(rows_b.iter())
                        .filter_map(|(ra, rb)| {
                            debug_assert_eq!(ra.seed, rb.seed);
                            match field {
                                0 => Some(ra.mean_reward - rb.mean_reward),
                                _ => match (ra.attribute_fraction, rb.attribute_fraction) {
                                    (Some(x), Some(y)) => Some(x - y),
                                    _ => None,
                                },
                            }
                        })
                        .collect();
                    if diffs.is_empty() {
                        continue;
                    }
                    let n = diffs.len() as f64;
                    let mean = diffs.iter().sum::<f64>() / n;
                    let var = if diffs.len() > 1 {
                        diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)
                    } else {
                        0.0
                    };
                    let se = (var / n).sqrt();
                    writeln!(
                        out,
                        "{}-{} {metric} {mean} {se} {}",
                        a.name(),
                        b.name(),
                        diffs.len()
                    )?;
                }
            }
        }
        Ok(())
    };
    emit().map_err(|e| AppError::Runtime(e.to_string()))
}

pub fn cmd_oracle(experiment: &Experiment) -> Result<(), AppError> {
    fs::create_dir_all(&experiment.out_dir).map_err(|e| AppError::Runtime(e.to_string()))?;
    let masked = match experiment.process.as_ref() {
        DiffusionProcess::Masked(p) => p,
        DiffusionProcess::Gaussian(_) => {
            return Err(AppError::Config(
                "the oracle enumerates the discrete process only".into(),
            ))
        }
    };
    let dist = exact_tilted_target(
        masked,
        &experiment.template.reward.terminal,
        experiment.template.lambda,
        &experiment.template.context,
    )
    .map_err(|e| AppError::Runtime(e.to_string()))?;
    let path = experiment.out_dir.join("target.txt");
    let file =
        fs::File::create(&path).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    fkps::oracle::write_distribution(&dist, std::io::BufWriter::new(file))
        .map_err(|e| AppError::Runtime(e.to_string()))
}
