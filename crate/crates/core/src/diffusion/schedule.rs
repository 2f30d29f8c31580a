use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Squared-cosine signal level with per-step betas capped at 0.999.
    Cosine,
}

/// What is needed to rebuild a schedule; stored in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub kind: ScheduleKind,
    pub zero_terminal_snr: bool,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            timesteps: 1000,
            kind: ScheduleKind::Cosine,
            zero_terminal_snr: true,
        }
    }
}

/// Variance-preserving coefficients `(alpha_t, sigma_t)` on the grid `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

fn cosine_alpha_bar(u: f64) -> f64 {
    let c = ((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos();
    c * c
}

impl NoiseSchedule {
    pub fn build(params: ScheduleParams) -> Result<Self> {
        let t_max = params.timesteps;
        if t_max < 2 {
            return Err(Error::InvalidTimesteps(t_max));
        }
        // alpha_bar_0 = 1 exactly, so t = 0 is the clean sample.
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 1..=t_max {
            let ratio = cosine_alpha_bar(i as f64 / t_max as f64)
                / cosine_alpha_bar((i - 1) as f64 / t_max as f64);
            let beta = (1.0 - ratio).min(MAX_BETA);
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        let mut alpha: Vec<f64> = alpha_bar.iter().map(|a| a.sqrt()).collect();
        if params.zero_terminal_snr {
            // Affine map of alpha fixing alpha_0 and sending alpha_T to zero.
            let (a0, at) = (alpha[0], alpha[t_max]);
            for a in alpha.iter_mut() {
                *a = (*a - at) * a0 / (a0 - at);
            }
            alpha[t_max] = 0.0;
        }
        let sigma = alpha
            .iter()
            .map(|a| (1.0 - a * a).max(0.0).sqrt())
            .collect();
        Ok(NoiseSchedule {
            params,
            alpha,
            sigma,
        })
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// `T`, the terminal grid index.
    pub fn timesteps(&self) -> usize {
        self.params.timesteps
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.params.timesteps {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.params.timesteps,
            });
        }
        Ok(())
    }
}

/// `x_t = alpha_t x0 + sigma_t eps`.
pub fn forward_noise(x0: &Tensor, eps: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "forward_noise",
            shapes: vec![x0.shape().to_vec(), eps.shape().to_vec()],
        });
    }
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    Ok(x0.zip_map(eps, |x, e| a * x + s * e))
}

/// `x0_hat = (x_t - sigma_t eps_hat) / alpha_t`.
pub fn x0_hat(x_t: &Tensor, eps_hat: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check(t)?;
    let a = sched.alpha(t);
    if a == 0.0 {
        return Err(Error::SingularAlpha(t));
    }
    if x_t.shape() != eps_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "x0_hat",
            shapes: vec![x_t.shape().to_vec(), eps_hat.shape().to_vec()],
        });
    }
    let s = sched.sigma(t);
    Ok(x_t.zip_map(eps_hat, |x, e| (x - s * e) / a))
}

/// First-order DDIM update from `t` to `t_prev`.
pub fn ddim_step(
    x_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if t_prev >= t {
        return Err(Error::InvalidStepSet {
            steps: vec![t, t_prev],
            reason: "t_prev must be below t".into(),
        });
    }
    let x0 = x0_hat(x_t, eps_hat, t, sched)?;
    let (a, s) = (sched.alpha(t_prev), sched.sigma(t_prev));
    Ok(x0.zip_map(eps_hat, |x, e| a * x + s * e))
}
