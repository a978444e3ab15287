//! Gaussian-mixture diffusion toy.
//!
//! The data distribution is a finite isotropic Gaussian mixture, the forward
//! process is the usual variance-preserving noising
//! `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`, and the reverse kernel is
//! the exact posterior transition under the mixture - itself a Gaussian
//! mixture with closed-form responsibilities, means, and variances. No
//! learning error anywhere, so distributional claims about the steering
//! engine can be tested sharply.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FkError, Result};
use crate::numeric::log_sum_exp;
use crate::state::Context;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Scalar isotropic variance.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureDiffusion {
    dimension: usize,
    components: Vec<MixtureComponent>,
    /// `abar[t]` for t = 0..=T; abar[0] = 1, abar[T] close to 0.
    alpha_bar: Vec<f64>,
}

/// Linear-in-`abar` schedule from 1 down to `1e-4` over `t_max` steps.
pub fn linear_alpha_bar(t_max: usize) -> Vec<f64> {
    let end = 1e-4;
    (0..=t_max)
        .map(|t| 1.0 - (t as f64 / t_max as f64) * (1.0 - end))
        .collect()
}

/// The exact reverse transition `p(x_t | x_{t+1})`: a Gaussian mixture with
/// one isotropic component per data component.
#[derive(Debug, Clone)]
pub struct GaussianReverseKernel {
    pub log_weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl GaussianReverseKernel {
    /// Overall kernel mean, `sum_j gamma_j mu_j`.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.means[0].len();
        let mut out = vec![0.0; d];
        for (lw, m) in self.log_weights.iter().zip(&self.means) {
            let w = lw.exp();
            for (o, mi) in out.iter_mut().zip(m) {
                *o += w * mi;
            }
        }
        out
    }

    /// Responsibility-weighted component variance. For a single-component
    /// process this is exactly the kernel's isotropic variance.
    pub fn mean_variance(&self) -> f64 {
        self.log_weights
            .iter()
            .zip(&self.variances)
            .map(|(lw, v)| lw.exp() * v)
            .sum()
    }

    /// Shift every component mean by `component_variance * scale * direction`.
    pub fn shifted(&self, scale: f64, direction: &[f64]) -> GaussianReverseKernel {
        let means = self
            .means
            .iter()
            .zip(&self.variances)
            .map(|(m, v)| {
                m.iter()
                    .zip(direction)
                    .map(|(mi, g)| mi + v * scale * g)
                    .collect()
            })
            .collect();
        GaussianReverseKernel {
            log_weights: self.log_weights.clone(),
            means,
            variances: self.variances.clone(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut j = self.log_weights.len() - 1;
        for (i, lw) in self.log_weights.iter().enumerate() {
            acc += lw.exp();
            if u < acc {
                j = i;
                break;
            }
        }
        let sd = self.variances[j].sqrt();
        self.means[j]
            .iter()
            .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .log_weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(lw, (m, v))| lw + iso_normal_logpdf(x, m, *v))
            .collect();
        log_sum_exp(&terms)
    }
}

pub fn iso_normal_logpdf(x: &[f64], mean: &[f64], variance: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x
        .iter()
        .zip(mean)
        .map(|(xi, mi)| (xi - mi) * (xi - mi))
        .sum();
    -0.5 * (d * ((2.0 * std::f64::consts::PI * variance).ln()) + sq / variance)
}

impl GaussianMixtureDiffusion {
    pub fn new(
        dimension: usize,
        components: Vec<MixtureComponent>,
        alpha_bar: Vec<f64>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(FkError::InvalidConfig("dimension must be >= 1".into()));
        }
        if components.is_empty() {
            return Err(FkError::InvalidConfig("mixture needs a component".into()));
        }
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-9 || components.iter().any(|c| c.weight <= 0.0) {
            return Err(FkError::InvalidConfig(
                "mixture weights must be positive and sum to 1".into(),
            ));
        }
        for c in &components {
            if c.mean.len() != dimension {
                return Err(FkError::InvalidConfig(format!(
                    "component mean has dimension {}, expected {dimension}",
                    c.mean.len()
                )));
            }
            if !(c.variance > 0.0) {
                return Err(FkError::InvalidConfig(
                    "component variance must be positive".into(),
                ));
            }
        }
        if alpha_bar.len() < 2 {
            return Err(FkError::InvalidConfig(
                "noise schedule needs at least two entries".into(),
            ));
        }
        if alpha_bar[0] != 1.0 {
            return Err(FkError::InvalidConfig("alpha_bar[0] must be 1".into()));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) || alpha_bar.iter().any(|&a| a <= 0.0) {
            return Err(FkError::InvalidConfig(
                "alpha_bar must be strictly decreasing and positive".into(),
            ));
        }
        let last = *alpha_bar.last().unwrap();
        if last > 0.1 {
            return Err(FkError::InvalidConfig(format!(
                "alpha_bar[T] = {last} is too far from 0 for the standard-normal prior"
            )));
        }
        // renormalize weights so downstream sums hit 1 to machine precision
        let mut components = components;
        for c in &mut components {
            c.weight /= wsum;
        }
        Ok(GaussianMixtureDiffusion {
            dimension,
            components,
            alpha_bar,
        })
    }

    /// Default schedule: linear alpha-bar over 16 steps.
    pub fn with_default_schedule(
        dimension: usize,
        components: Vec<MixtureComponent>,
    ) -> Result<Self> {
        Self::new(dimension, components, linear_alpha_bar(16))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    fn active(&self, context: &Context) -> Result<Vec<&MixtureComponent>> {
        match context {
            Context::MixtureComponent(j) => {
                let c = self.components.get(*j).ok_or_else(|| {
                    FkError::InvalidConfig(format!("mixture component {j} out of range"))
                })?;
                Ok(vec![c])
            }
            _ => Ok(self.components.iter().collect()),
        }
    }

    /// Posterior over components and per-component `x_0` posterior given an
    /// observation of `x` at noise level `abar`:
    /// responsibilities (log), posterior means, posterior variances.
    #[allow(clippy::type_complexity)]
    fn x0_posterior(
        &self,
        x: &[f64],
        abar: f64,
        context: &Context,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
        let comps = self.active(context)?;
        let root = abar.sqrt();
        let noise = 1.0 - abar;
        let mut log_resp = Vec::with_capacity(comps.len());
        let mut means = Vec::with_capacity(comps.len());
        let mut vars = Vec::with_capacity(comps.len());
        for c in &comps {
            // marginal likelihood of x under component c at this noise level
            let marg_var = abar * c.variance + noise;
            let scaled_mean: Vec<f64> = c.mean.iter().map(|m| root * m).collect();
            log_resp.push(c.weight.ln() + iso_normal_logpdf(x, &scaled_mean, marg_var));
            if noise == 0.0 {
                // zero noise: the observation is x_0
                means.push(x.to_vec());
                vars.push(0.0);
                continue;
            }
            // conjugate posterior of x_0 given x within the component
            let denom = abar * c.variance + noise;
            means.push(
                x.iter()
                    .zip(&c.mean)
                    .map(|(xi, mi)| (root * c.variance * xi + noise * mi) / denom)
                    .collect(),
            );
            vars.push(c.variance * noise / denom);
        }
        let lse = log_sum_exp(&log_resp);
        for lr in &mut log_resp {
            *lr -= lse;
        }
        Ok((log_resp, means, vars))
    }

    /// Exact `E[x_0 | x_t]` under the mixture.
    pub fn denoised_mean(&self, x_t: &[f64], t: usize, context: &Context) -> Result<Vec<f64>> {
        if self.alpha_bar(t) == 1.0 {
            return Ok(x_t.to_vec());
        }
        let (log_resp, means, _) = self.x0_posterior(x_t, self.alpha_bar(t), context)?;
        let mut out = vec![0.0; self.dimension];
        for (lr, m) in log_resp.iter().zip(&means) {
            let w = lr.exp();
            for (o, mi) in out.iter_mut().zip(m) {
                *o += w * mi;
            }
        }
        Ok(out)
    }

    /// The exact posterior reverse transition from `x_{t+1}` down to `t`.
    pub fn reverse_kernel(
        &self,
        x_next: &[f64],
        t: usize,
        context: &Context,
    ) -> Result<GaussianReverseKernel> {
        let abar_next = self.alpha_bar(t + 1);
        let abar_t = self.alpha_bar(t);
        let alpha = abar_next / abar_t;
        let beta = 1.0 - alpha;
        // coefficients of the forward-posterior bridge q(x_t | x_{t+1}, x_0)
        let coef_x0 = abar_t.sqrt() * beta / (1.0 - abar_next);
        let coef_xnext = alpha.sqrt() * (1.0 - abar_t) / (1.0 - abar_next);
        let bridge_var = beta * (1.0 - abar_t) / (1.0 - abar_next);

        let (log_resp, post_means, post_vars) = self.x0_posterior(x_next, abar_next, context)?;
        let means = post_means
            .iter()
            .map(|pm| {
                pm.iter()
                    .zip(x_next)
                    .map(|(m0, xn)| coef_x0 * m0 + coef_xnext * xn)
                    .collect()
            })
            .collect();
        let variances = post_vars
            .iter()
            .map(|pv| bridge_var + coef_x0 * coef_x0 * pv)
            .collect();
        Ok(GaussianReverseKernel {
            log_weights: log_resp,
            means,
            variances,
        })
    }

    pub fn prior_sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dimension)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn forward_sample<R: Rng>(&self, x0: &[f64], t: usize, rng: &mut R) -> Vec<f64> {
        let abar = self.alpha_bar(t);
        let root = abar.sqrt();
        let noise = (1.0 - abar).sqrt();
        x0.iter()
            .map(|x| root * x + noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Draw `x_0` from the data mixture (the context may pin one component).
    pub fn sample_data<R: Rng>(&self, context: &Context, rng: &mut R) -> Result<Vec<f64>> {
        let comps = self.active(context)?;
        let wsum: f64 = comps.iter().map(|c| c.weight).sum();
        let u: f64 = rng.gen::<f64>() * wsum;
        let mut acc = 0.0;
        let mut pick = comps.len() - 1;
        for (i, c) in comps.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        let c = comps[pick];
        let sd = c.variance.sqrt();
        Ok(c.mean
            .iter()
            .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }
}
