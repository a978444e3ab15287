//! TOML experiment configuration and its translation into engine types.
//!
//! One file fully determines a run, so identical configs reproduce
//! byte-identical outputs (wall time aside).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use fkps::{
    AttributePredicate, Context, DiffusionProcess, EmbeddingSpec, EssGate, FKConfig,
    GaussianMixtureDiffusion, IntermediateReward, LearnedReward, MaskedDiscreteDiffusion,
    MixtureComponent, PotentialKind, ProposalSpec, ResampleMethod, ResampleMode,
    ResampleSchedule, RewardSpec, SequenceDistribution, TerminalReward,
};

use crate::AppError;

fn config_err(msg: impl Into<String>) -> AppError {
    AppError::Config(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub process: ProcessConfig,
    #[serde(default)]
    pub run: RunConfig,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub proposal: ProposalConfig,
    pub reward: RewardConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub context: ContextConfig,
    pub attribute: Option<PredicateConfig>,
    #[serde(default)]
    pub oracle: OracleConfig,
    pub diversity: Option<DiversityConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub kind: String,
    pub steps: Option<usize>,
    // masked-discrete fields
    pub alphabet: Option<u16>,
    pub length: Option<usize>,
    pub keep: Option<Vec<f64>>,
    pub base: Option<BaseConfig>,
    // gaussian-mixture fields
    pub dimension: Option<usize>,
    pub alpha_bar: Option<Vec<f64>>,
    pub components: Option<Vec<ComponentConfig>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseConfig {
    Uniform,
    Table { probs: Vec<f64> },
    Markov {
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sampler: String,
    pub k: usize,
    pub lambda: f64,
    pub seed: u64,
    pub seeds: usize,
    pub threads: usize,
    pub final_resample: bool,
    pub resample_method: String,
    pub svdd_argmax: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sampler: "fk".into(),
            k: 4,
            lambda: 1.0,
            seed: 0,
            seeds: 1,
            threads: 1,
            final_resample: true,
            resample_method: "multinomial".into(),
            svdd_argmax: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialConfig {
    pub kind: String,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig { kind: "max".into() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub kind: String,
    pub guidance_lambda: f64,
    pub gradient_at: String,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            kind: "base".into(),
            guidance_lambda: 0.0,
            gradient_at: "denoised-mean".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub terminal: TerminalConfig,
    #[serde(default)]
    pub intermediate: IntermediateConfig,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalConfig {
    TokenCount {
        token: u16,
    },
    TableLogLikelihood {
        probs: Vec<Vec<f64>>,
    },
    AttributeIndicator {
        predicate: PredicateConfig,
        #[serde(default = "one")]
        scale: f64,
    },
    Linear {
        coeffs: Vec<f64>,
    },
    Radial {
        center: Vec<f64>,
        width: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PredicateConfig {
    AllEqual { token: u16 },
    CountAtLeast { token: u16, min: usize },
    Matches { tokens: Vec<u16> },
    Never,
}

#[derive(Debug, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IntermediateConfig {
    #[default]
    DenoisedMean,
    ManySample {
        n: usize,
    },
    Learned {
        fit_samples: Option<usize>,
        table: Option<PathBuf>,
        save_table: Option<PathBuf>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub mode: String,
    pub interval: Option<Vec<usize>>,
    pub ess_gate: String,
    pub ess_threshold_fraction: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            mode: "every-step".into(),
            interval: None,
            ess_gate: "skip-when-low".into(),
            ess_threshold_fraction: 0.5,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    pub pinned_prefix: Option<Vec<u16>>,
    pub mixture_component: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub enabled: bool,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiversityConfig {
    Identity,
    OneHot,
    TokenTable { table: Vec<Vec<f64>> },
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Everything a resolved experiment needs, ready to execute.
pub struct Experiment {
    pub process: Arc<DiffusionProcess>,
    pub template: FKConfig,
    pub sampler: Sampler,
    pub seeds: usize,
    pub threads: usize,
    pub sweep: Option<(SweepAxis, Vec<f64>)>,
    pub predicate: Option<AttributePredicate>,
    pub oracle_enabled: bool,
    pub embedding: EmbeddingSpec,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Fk,
    Bon,
    Svdd,
    Base,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Fk => "fk",
            Sampler::Bon => "bon",
            Sampler::Svdd => "svdd",
            Sampler::Base => "base",
        }
    }

    pub fn parse(s: &str) -> Result<Sampler, AppError> {
        match s {
            "fk" => Ok(Sampler::Fk),
            "bon" => Ok(Sampler::Bon),
            "svdd" => Ok(Sampler::Svdd),
            "base" => Ok(Sampler::Base),
            other => Err(config_err(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    K,
    Lambda,
}

pub fn load(path: &Path) -> Result<FileConfig, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn build_process(cfg: &ProcessConfig) -> Result<DiffusionProcess, AppError> {
    match cfg.kind.as_str() {
        "masked-discrete" => {
            let alphabet = cfg
                .alphabet
                .ok_or_else(|| config_err("process.alphabet is required"))?;
            let length = cfg
                .length
                .ok_or_else(|| config_err("process.length is required"))?;
            let keep = match &cfg.keep {
                Some(keep) => keep.clone(),
                None => fkps::process::uniform_keep_schedule(cfg.steps.unwrap_or(8)),
            };
            let base = match &cfg.base {
                None | Some(BaseConfig::Uniform) => SequenceDistribution::Uniform,
                Some(BaseConfig::Table { probs }) => SequenceDistribution::Table {
                    probs: probs.clone(),
                },
                Some(BaseConfig::Markov {
                    initial,
                    transition,
                }) => SequenceDistribution::Markov {
                    initial: initial.clone(),
                    transition: transition.clone(),
                },
            };
            Ok(DiffusionProcess::Masked(
                MaskedDiscreteDiffusion::new(alphabet, length, keep, base)
                    .map_err(|e| config_err(e.to_string()))?,
            ))
        }
        "gaussian-mixture" => {
            let dimension = cfg
                .dimension
                .ok_or_else(|| config_err("process.dimension is required"))?;
            let components = cfg
                .components
                .as_ref()
                .ok_or_else(|| config_err("process.components is required"))?
                .iter()
                .map(|c| MixtureComponent {
                    weight: c.weight,
                    mean: c.mean.clone(),
                    variance: c.variance,
                })
                .collect();
            let alpha_bar = match &cfg.alpha_bar {
                Some(a) => a.clone(),
                None => fkps::process::linear_alpha_bar(cfg.steps.unwrap_or(16)),
            };
            Ok(DiffusionProcess::Gaussian(
                GaussianMixtureDiffusion::new(dimension, components, alpha_bar)
                    .map_err(|e| config_err(e.to_string()))?,
            ))
        }
        other => Err(config_err(format!("unknown process kind `{other}`"))),
    }
}

fn build_predicate(cfg: &PredicateConfig) -> AttributePredicate {
    match cfg {
        PredicateConfig::AllEqual { token } => {
            AttributePredicate::AllPositionsEqual { token: *token }
        }
        PredicateConfig::CountAtLeast { token, min } => AttributePredicate::CountAtLeast {
            token: *token,
            min: *min,
        },
        PredicateConfig::Matches { tokens } => AttributePredicate::MatchesSequence {
            tokens: tokens.clone(),
        },
        PredicateConfig::Never => AttributePredicate::Never,
    }
}

fn build_terminal(cfg: &TerminalConfig) -> Result<TerminalReward, AppError> {
    Ok(match cfg {
        TerminalConfig::TokenCount { token } => TerminalReward::TokenCount { token: *token },
        TerminalConfig::TableLogLikelihood { probs } => {
            for row in probs {
                if row.iter().any(|&p| p < 0.0) {
                    return Err(config_err("reward table has a negative probability"));
                }
            }
            TerminalReward::TableLogLikelihood {
                log_probs: probs
                    .iter()
                    .map(|row| row.iter().map(|p| p.ln()).collect())
                    .collect(),
            }
        }
        TerminalConfig::AttributeIndicator { predicate, scale } => {
            TerminalReward::AttributeIndicator {
                predicate: build_predicate(predicate),
                scale: *scale,
            }
        }
        TerminalConfig::Linear { coeffs } => TerminalReward::Linear {
            coeffs: coeffs.clone(),
        },
        TerminalConfig::Radial { center, width } => {
            if *width <= 0.0 {
                return Err(config_err("radial width must be positive"));
            }
            TerminalReward::Radial {
                center: center.clone(),
                width: *width,
            }
        }
    })
}

fn build_intermediate(
    cfg: &IntermediateConfig,
    process: &DiffusionProcess,
    terminal: &TerminalReward,
    context: &Context,
    seed: u64,
) -> Result<IntermediateReward, AppError> {
    Ok(match cfg {
        IntermediateConfig::DenoisedMean => IntermediateReward::DenoisedMean,
        IntermediateConfig::ManySample { n } => IntermediateReward::ManySample { n: *n },
        IntermediateConfig::Learned {
            fit_samples,
            table,
            save_table,
        } => {
            let model = if let Some(path) = table {
                let file = std::fs::File::open(path).map_err(|e| {
                    config_err(format!("cannot open reward table {}: {e}", path.display()))
                })?;
                LearnedReward::load(std::io::BufReader::new(file))
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?
            } else {
                let n = fit_samples.unwrap_or(100_000);
                let mut rng = fkps::rng::stream(seed, 0, 0, fkps::rng::StreamPurpose::Fit);
                fkps::fit_learned_reward(process, terminal, context, n, &mut rng)
                    .map_err(|e| AppError::Runtime(e.to_string()))?
            };
            if let Some(path) = save_table {
                let file = std::fs::File::create(path)
                    .map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
                model
                    .save(std::io::BufWriter::new(file))
                    .map_err(|e| AppError::Runtime(e.to_string()))?;
            }
            IntermediateReward::Learned {
                model: Some(Arc::new(model)),
            }
        }
    })
}

pub fn resolve(
    cfg: &FileConfig,
    out_override: Option<PathBuf>,
    seeds_override: Option<usize>,
    threads_override: Option<usize>,
) -> Result<Experiment, AppError> {
    let process = build_process(&cfg.process)?;

    let context = match (&cfg.context.pinned_prefix, &cfg.context.mixture_component) {
        (Some(_), Some(_)) => {
            return Err(config_err(
                "context cannot pin both a prefix and a mixture component",
            ))
        }
        (Some(prefix), None) => Context::PinnedPrefix(prefix.clone()),
        (None, Some(j)) => Context::MixtureComponent(*j),
        (None, None) => Context::None,
    };

    let terminal = build_terminal(&cfg.reward.terminal)?;
    let intermediate = build_intermediate(
        &cfg.reward.intermediate,
        &process,
        &terminal,
        &context,
        cfg.run.seed,
    )?;

    let potential = match cfg.potential.kind.as_str() {
        "bon" => PotentialKind::Bon,
        "difference" => PotentialKind::Difference,
        "max" => PotentialKind::Max,
        "sum" => PotentialKind::Sum,
        other => return Err(config_err(format!("unknown potential kind `{other}`"))),
    };

    let proposal = match cfg.proposal.kind.as_str() {
        "base" => ProposalSpec::BaseModel,
        "gradient-guided" => ProposalSpec::GradientGuided {
            guidance_lambda: cfg.proposal.guidance_lambda,
            at_denoised_mean: match cfg.proposal.gradient_at.as_str() {
                "denoised-mean" => true,
                "raw-state" => false,
                other => {
                    return Err(config_err(format!("unknown gradient_at `{other}`")));
                }
            },
        },
        "discrete-normalized" => ProposalSpec::DiscreteNormalized,
        other => return Err(config_err(format!("unknown proposal kind `{other}`"))),
    };

    let mode = match cfg.schedule.mode.as_str() {
        "every-step" => ResampleMode::EveryStep,
        "interval" => {
            let indices = cfg
                .schedule
                .interval
                .as_ref()
                .ok_or_else(|| config_err("interval schedule needs schedule.interval"))?;
            ResampleMode::Interval(indices.iter().copied().collect())
        }
        other => return Err(config_err(format!("unknown schedule mode `{other}`"))),
    };
    let ess_gate = match cfg.schedule.ess_gate.as_str() {
        "off" => EssGate::Off,
        "skip-when-low" => EssGate::SkipWhenLow,
        "resample-when-low" => EssGate::ResampleWhenLow,
        other => return Err(config_err(format!("unknown ess gate `{other}`"))),
    };

    let resample_method = match cfg.run.resample_method.as_str() {
        "multinomial" => ResampleMethod::Multinomial,
        "systematic" => ResampleMethod::Systematic,
        other => return Err(config_err(format!("unknown resample method `{other}`"))),
    };

    let sweep = match &cfg.sweep {
        None => None,
        Some(s) => {
            if s.values.is_empty() {
                return Err(config_err("sweep.values must be nonempty"));
            }
            let axis = match s.axis.as_str() {
                "k" => {
                    for v in &s.values {
                        if v.fract() != 0.0 || *v < 1.0 {
                            return Err(config_err(format!("sweep over k has bad value {v}")));
                        }
                    }
                    SweepAxis::K
                }
                "lambda" => SweepAxis::Lambda,
                other => return Err(config_err(format!("unknown sweep axis `{other}`"))),
            };
            Some((axis, s.values.clone()))
        }
    };

    let predicate = match (&cfg.attribute, &terminal) {
        (Some(p), _) => Some(build_predicate(p)),
        (None, TerminalReward::AttributeIndicator { predicate, .. }) => Some(predicate.clone()),
        _ => None,
    };

    let embedding = match &cfg.diversity {
        Some(DiversityConfig::Identity) => EmbeddingSpec::Identity,
        Some(DiversityConfig::OneHot) => match &process {
            DiffusionProcess::Masked(p) => EmbeddingSpec::OneHotFlatten {
                alphabet: p.alphabet(),
            },
            DiffusionProcess::Gaussian(_) => {
                return Err(config_err("one-hot diversity needs the discrete process"))
            }
        },
        Some(DiversityConfig::TokenTable { table }) => EmbeddingSpec::TokenTable {
            table: table.clone(),
        },
        None => match &process {
            DiffusionProcess::Masked(p) => EmbeddingSpec::OneHotFlatten {
                alphabet: p.alphabet(),
            },
            DiffusionProcess::Gaussian(_) => EmbeddingSpec::Identity,
        },
    };

    let template = FKConfig {
        k: cfg.run.k.max(1),
        lambda: cfg.run.lambda,
        potential,
        proposal,
        reward: RewardSpec {
            terminal,
            intermediate,
        },
        schedule: ResampleSchedule {
            mode,
            ess_gate,
            ess_threshold_fraction: cfg.schedule.ess_threshold_fraction,
        },
        resample_method,
        final_resample: cfg.run.final_resample,
        svdd_argmax: cfg.run.svdd_argmax,
        seed: cfg.run.seed,
        context,
    };

    let seeds = seeds_override.unwrap_or(cfg.run.seeds).max(1);
    let threads = threads_override.unwrap_or(cfg.run.threads).max(1);
    let out_dir = out_override
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(Experiment {
        process: Arc::new(process),
        template,
        sampler: Sampler::parse(&cfg.run.sampler)?,
        seeds,
        threads,
        sweep,
        predicate,
        oracle_enabled: cfg.oracle.enabled,
        embedding,
        out_dir,
    })
}
