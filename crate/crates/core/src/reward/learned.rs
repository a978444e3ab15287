//! Learned intermediate rewards.
//!
//! A bucketed least-squares regressor of `a(x_t, t) ~= E[exp(r(x_0)) | x_t]`,
//! fitted from `(x_0, t, x_t)` triples drawn via the data distribution and the
//! forward kernel. Buckets are the revealed-token pattern for the discrete
//! toy and a fixed grid cell per dimension for the Gaussian toy; the
//! intermediate reward is `log a`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{FkError, Result};
use crate::process::DiffusionProcess;
use crate::reward::{terminal_reward, TerminalReward};
use crate::state::{parse_pattern, pattern_string, Context, State};

pub const GRID_CELLS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BucketKey {
    /// Revealed-token pattern of the discrete toy plus the time index.
    Pattern { pattern: Vec<Option<u16>>, t: usize },
    /// Per-dimension grid cell of the Gaussian toy plus the time index.
    Cell { cells: Vec<u16>, t: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: usize,
}

impl GridSpec {
    fn for_process(process: &crate::process::GaussianMixtureDiffusion) -> GridSpec {
        let d = process.dimension();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for c in process.components() {
            let pad = 6.0 * c.variance.sqrt().max(1.0);
            for i in 0..d {
                lo[i] = lo[i].min(c.mean[i] - pad);
                hi[i] = hi[i].max(c.mean[i] + pad);
            }
        }
        GridSpec {
            lo,
            hi,
            cells: GRID_CELLS,
        }
    }

    fn cell_of(&self, x: &[f64]) -> Vec<u16> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let frac = (v - self.lo[i]) / (self.hi[i] - self.lo[i]);
                let idx = (frac * self.cells as f64).floor();
                idx.clamp(0.0, (self.cells - 1) as f64) as u16
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Bucketing {
    Pattern,
    Grid(GridSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitMeta {
    pub samples: usize,
    pub holdout_count: usize,
    pub holdout_loss: f64,
}

#[derive(Debug, Clone)]
pub struct LearnedReward {
    bucketing: Bucketing,
    table: HashMap<BucketKey, f64>,
    /// Global mean of `exp(r)`; served, flagged, for buckets never seen
    /// during fitting.
    fallback: f64,
    meta: FitMeta,
}

impl LearnedReward {
    pub fn meta(&self) -> FitMeta {
        self.meta
    }

    pub fn bucket_count(&self) -> usize {
        self.table.len()
    }

    /// Iterate every fitted bucket and its value.
    pub fn buckets(&self) -> impl Iterator<Item = (&BucketKey, f64)> {
        self.table.iter().map(|(k, &v)| (k, v))
    }

    pub fn bucket_of(&self, process: &DiffusionProcess, state: &State, t: usize) -> Result<BucketKey> {
        match (&self.bucketing, state) {
            (Bucketing::Pattern, State::Sequence(pattern)) => Ok(BucketKey::Pattern {
                pattern: pattern.clone(),
                t,
            }),
            (Bucketing::Grid(grid), State::Vector(x)) => Ok(BucketKey::Cell {
                cells: grid.cell_of(x),
                t,
            }),
            _ => Err(FkError::IncompatibleReward {
                reward: "learned",
                state: process.kind_name(),
            }),
        }
    }

    /// Fitted value for a bucket and whether it fell back to the global mean.
    pub fn value(&self, key: &BucketKey) -> (f64, bool) {
        match self.table.get(key) {
            Some(&v) => (v, false),
            None => (self.fallback, true),
        }
    }

    pub fn log_value_for(&self, process: &DiffusionProcess, state: &State, t: usize) -> Result<f64> {
        let key = self.bucket_of(process, state, t)?;
        Ok(self.value(&key).0.ln())
    }

    /// Flat text serialization: one `bucket t value` row per bucket.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# fkps learned-reward v1")?;
        match &self.bucketing {
            Bucketing::Pattern => writeln!(w, "# kind pattern")?,
            Bucketing::Grid(g) => {
                writeln!(w, "# kind cell")?;
                writeln!(
                    w,
                    "# grid {} {} {}",
                    g.cells,
                    join(&g.lo),
                    join(&g.hi)
                )?;
            }
        }
        writeln!(
            w,
            "# fit {} {} {}",
            self.meta.samples, self.meta.holdout_count, self.meta.holdout_loss
        )?;
        writeln!(w, "# fallback {}", self.fallback)?;
        let mut rows: Vec<(String, usize, f64)> = self
            .table
            .iter()
            .map(|(key, &v)| match key {
                BucketKey::Pattern { pattern, t } => (pattern_string(pattern), *t, v),
                BucketKey::Cell { cells, t } => (
                    cells
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join(":"),
                    *t,
                    v,
                ),
            })
            .collect();
        rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        for (id, t, v) in rows {
            writeln!(w, "{id} {t} {v}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<LearnedReward> {
        let mut bucketing: Option<Bucketing> = None;
        let mut meta = FitMeta {
            samples: 0,
            holdout_count: 0,
            holdout_loss: 0.0,
        };
        let mut fallback = None;
        let mut table = HashMap::new();
        let mut grid_pending: Option<GridSpec> = None;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                match fields.first() {
                    Some(&"kind") => {
                        bucketing = Some(match fields.get(1) {
                            Some(&"pattern") => Bucketing::Pattern,
                            Some(&"cell") => Bucketing::Grid(GridSpec {
                                lo: vec![],
                                hi: vec![],
                                cells: GRID_CELLS,
                            }),
                            other => {
                                return Err(FkError::Parse(format!(
                                    "unknown bucket kind {other:?}"
                                )))
                            }
                        });
                    }
                    Some(&"grid") => {
                        let cells = parse_field(fields.get(1))?;
                        let lo = parse_list(fields.get(2))?;
                        let hi = parse_list(fields.get(3))?;
                        grid_pending = Some(GridSpec { lo, hi, cells });
                    }
                    Some(&"fit") => {
                        meta.samples = parse_field(fields.get(1))?;
                        meta.holdout_count = parse_field(fields.get(2))?;
                        meta.holdout_loss = parse_field(fields.get(3))?;
                    }
                    Some(&"fallback") => fallback = Some(parse_field(fields.get(1))?),
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(FkError::Parse(format!("bad table row `{line}`")));
            }
            let t: usize = parse_field(fields.get(1))?;
            let v: f64 = parse_field(fields.get(2))?;
            let key = match bucketing {
                Some(Bucketing::Pattern) => BucketKey::Pattern {
                    pattern: parse_pattern(fields[0])?,
                    t,
                },
                Some(Bucketing::Grid(_)) => BucketKey::Cell {
                    cells: fields[0]
                        .split(':')
                        .map(|c| {
                            c.parse()
                                .map_err(|_| FkError::Parse(format!("bad cell id `{c}`")))
                        })
                        .collect::<Result<Vec<u16>>>()?,
                    t,
                },
                None => return Err(FkError::Parse("table row before kind header".into())),
            };
            table.insert(key, v);
        }
        let bucketing = match (bucketing, grid_pending) {
            (Some(Bucketing::Grid(_)), Some(g)) => Bucketing::Grid(g),
            (Some(b), _) => b,
            (None, _) => return Err(FkError::Parse("missing kind header".into())),
        };
        Ok(LearnedReward {
            bucketing,
            table,
            fallback: fallback.ok_or_else(|| FkError::Parse("missing fallback".into()))?,
            meta,
        })
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list(field: Option<&&str>) -> Result<Vec<f64>> {
    field
        .ok_or_else(|| FkError::Parse("missing grid field".into()))?
        .split(',')
        .map(|x| {
            x.parse()
                .map_err(|_| FkError::Parse(format!("bad number `{x}`")))
        })
        .collect()
}

fn parse_field<T: std::str::FromStr>(field: Option<&&str>) -> Result<T> {
    field
        .ok_or_else(|| FkError::Parse("missing field".into()))?
        .parse()
        .map_err(|_| FkError::Parse("unparseable field".into()))
}

/// Fit the bucketed regressor from `n_samples` forward-process draws.
///
/// Every tenth draw is held out; the recorded loss is the mean squared error
/// of the fitted table on the held-out draws.
pub fn fit_learned_reward<R: Rng>(
    process: &DiffusionProcess,
    terminal: &TerminalReward,
    context: &Context,
    n_samples: usize,
    rng: &mut R,
) -> Result<LearnedReward> {
    if n_samples == 0 {
        return Err(FkError::InvalidConfig(
            "learned-reward fit needs at least one sample".into(),
        ));
    }
    let bucketing = match process {
        DiffusionProcess::Masked(_) => Bucketing::Pattern,
        DiffusionProcess::Gaussian(p) => Bucketing::Grid(GridSpec::for_process(p)),
    };
    let t_max = process.t_max();
    let mut train: HashMap<BucketKey, (f64, usize)> = HashMap::new();
    let mut holdout: Vec<(BucketKey, f64)> = Vec::new();
    let mut global_sum = 0.0;
    let mut global_count = 0usize;

    let shell = LearnedReward {
        bucketing: bucketing.clone(),
        table: HashMap::new(),
        fallback: 1.0,
        meta: FitMeta {
            samples: 0,
            holdout_count: 0,
            holdout_loss: 0.0,
        },
    };

    for j in 0..n_samples {
        let x0 = process.sample_data(context, rng)?;
        let t = rng.gen_range(0..=t_max);
        let xt = process.forward_sample(&x0, t, rng)?;
        let y = terminal_reward(terminal, &x0, context)?.exp();
        let key = shell.bucket_of(process, &xt, t)?;
        if n_samples >= 10 && j % 10 == 9 {
            holdout.push((key, y));
        } else {
            let entry = train.entry(key).or_insert((0.0, 0));
            entry.0 += y;
            entry.1 += 1;
            global_sum += y;
            global_count += 1;
        }
    }

    let table: HashMap<BucketKey, f64> = train
        .into_iter()
        .map(|(k, (sum, count))| (k, sum / count as f64))
        .collect();
    let fallback = global_sum / global_count.max(1) as f64;
    let model = LearnedReward {
        bucketing,
        table,
        fallback,
        meta: FitMeta {
            samples: n_samples,
            holdout_count: holdout.len(),
            holdout_loss: 0.0,
        },
    };
    let holdout_loss = if holdout.is_empty() {
        0.0
    } else {
        holdout
            .iter()
            .map(|(k, y)| {
                let (v, _) = model.value(k);
                (v - y) * (v - y)
            })
            .sum::<f64>()
            / holdout.len() as f64
    };
    Ok(LearnedReward {
        meta: FitMeta {
            holdout_loss,
            ..model.meta
        },
        ..model
    })
}
