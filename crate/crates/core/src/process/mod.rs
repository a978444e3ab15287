//! The two exactly tractable diffusion processes and their shared surface.

pub mod gaussian;
pub mod masked;

use rand::Rng;

pub use gaussian::{
    linear_alpha_bar, GaussianMixtureDiffusion, GaussianReverseKernel, MixtureComponent,
};
pub use masked::{uniform_keep_schedule, MaskedDiscreteDiffusion, SequenceDistribution};

use crate::error::{FkError, Result};
use crate::particle::TimeGrid;
use crate::state::{Context, State};

/// Denoised estimate of `x_0` given a noisy state: a point for the Gaussian
/// toy, per-position token posteriors for the discrete one.
#[derive(Debug, Clone, PartialEq)]
pub enum Denoised {
    Point(Vec<f64>),
    /// One simplex per position; revealed positions carry a point mass.
    Simplex(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionProcess {
    Gaussian(GaussianMixtureDiffusion),
    Masked(MaskedDiscreteDiffusion),
}

impl DiffusionProcess {
    pub fn t_max(&self) -> usize {
        match self {
            DiffusionProcess::Gaussian(p) => p.t_max(),
            DiffusionProcess::Masked(p) => p.t_max(),
        }
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::new(self.t_max())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DiffusionProcess::Gaussian(_) => "gaussian-mixture",
            DiffusionProcess::Masked(_) => "masked-discrete",
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.t_max() {
            return Err(FkError::TimeOutOfRange {
                t,
                t_max: self.t_max(),
            });
        }
        Ok(())
    }

    /// Draw from the prior at the top of the grid.
    pub fn prior_sample<R: Rng>(&self, context: &Context, rng: &mut R) -> Result<State> {
        match self {
            DiffusionProcess::Gaussian(p) => Ok(State::Vector(p.prior_sample(rng))),
            DiffusionProcess::Masked(p) => Ok(State::Sequence(p.prior_pattern(context)?)),
        }
    }

    /// Noise a clean sample up to time `t`.
    pub fn forward_sample<R: Rng>(&self, x0: &State, t: usize, rng: &mut R) -> Result<State> {
        self.check_t(t)?;
        match (self, x0) {
            (DiffusionProcess::Gaussian(p), State::Vector(x)) => {
                Ok(State::Vector(p.forward_sample(x, t, rng)))
            }
            (DiffusionProcess::Masked(p), State::Sequence(x)) => {
                let tokens = x
                    .iter()
                    .map(|s| s.ok_or(FkError::MaskedInput))
                    .collect::<Result<Vec<_>>>()?;
                Ok(State::Sequence(p.forward_sample(&tokens, t, rng)))
            }
            _ => Err(FkError::IncompatibleReward {
                reward: "forward-sample state",
                state: "mismatched process",
            }),
        }
    }

    /// Draw `x_t` from the exact reverse kernel given `x_{t+1}` and return
    /// its log-density under that kernel.
    pub fn reverse_sample_and_logdensity<R: Rng>(
        &self,
        x_next: &State,
        t: usize,
        context: &Context,
        rng: &mut R,
    ) -> Result<(State, f64)> {
        self.check_t(t + 1)?;
        match (self, x_next) {
            (DiffusionProcess::Gaussian(p), State::Vector(x)) => {
                let kernel = p.reverse_kernel(x, t, context)?;
                let sample = kernel.sample(rng);
                let ld = kernel.log_density(&sample);
                Ok((State::Vector(sample), ld))
            }
            (DiffusionProcess::Masked(p), State::Sequence(x)) => {
                let (sample, ld) = p.reverse_sample(x, t, rng);
                Ok((State::Sequence(sample), ld))
            }
            _ => Err(FkError::IncompatibleReward {
                reward: "reverse-sample state",
                state: "mismatched process",
            }),
        }
    }

    /// Exact `E[x_0 | x_t]` (Gaussian) or per-position token posteriors
    /// (discrete).
    pub fn denoised_mean(&self, x_t: &State, t: usize, context: &Context) -> Result<Denoised> {
        self.check_t(t)?;
        match (self, x_t) {
            (DiffusionProcess::Gaussian(p), State::Vector(x)) => {
                Ok(Denoised::Point(p.denoised_mean(x, t, context)?))
            }
            (DiffusionProcess::Masked(p), State::Sequence(x)) => {
                let v = p.alphabet() as usize;
                let simplices = (0..p.length())
                    .map(|pos| match x[pos] {
                        Some(tok) => {
                            let mut point = vec![0.0; v];
                            point[tok as usize] = 1.0;
                            point
                        }
                        None => p.position_conditionals(x, pos),
                    })
                    .collect();
                Ok(Denoised::Simplex(simplices))
            }
            _ => Err(FkError::IncompatibleReward {
                reward: "denoised-mean state",
                state: "mismatched process",
            }),
        }
    }

    /// Draw a clean sample from the data distribution.
    pub fn sample_data<R: Rng>(&self, context: &Context, rng: &mut R) -> Result<State> {
        match self {
            DiffusionProcess::Gaussian(p) => Ok(State::Vector(p.sample_data(context, rng)?)),
            DiffusionProcess::Masked(p) => Ok(State::Sequence(
                p.sample_data(context, rng)?.into_iter().map(Some).collect(),
            )),
        }
    }
}
