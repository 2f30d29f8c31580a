use serde::{Deserialize, Serialize};

use super::schedule::{ddim_step, x0_hat, NoiseSchedule};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::Condition;
use crate::rng;

/// Anything that predicts the noise component of a latent.
pub trait EpsPredictor {
    fn sample_dim(&self) -> usize;
    fn predict_eps(&self, x: &Tensor, t: usize, cond: &[Condition]) -> Result<Tensor>;
}

impl<P: EpsPredictor + ?Sized> EpsPredictor for &P {
    fn sample_dim(&self) -> usize {
        (**self).sample_dim()
    }
    fn predict_eps(&self, x: &Tensor, t: usize, cond: &[Condition]) -> Result<Tensor> {
        (**self).predict_eps(x, t, cond)
    }
}

/// Classifier-free guidance: `eps_u + w (eps_c - eps_u)`.
///
/// Both branches run as one stacked batch. `w = 1` and `w = 0` skip the unused branch.
pub fn cfg_eps<P: EpsPredictor + ?Sized>(
    model: &P,
    x: &Tensor,
    t: usize,
    cond: &[Condition],
    w: f64,
) -> Result<Tensor> {
    if w == 1.0 {
        return model.predict_eps(x, t, cond);
    }
    let null = vec![Condition::Null; cond.len()];
    if w == 0.0 {
        return model.predict_eps(x, t, &null);
    }
    let stacked = x.vstack(x)?;
    let mut both = cond.to_vec();
    both.extend_from_slice(&null);
    let out = model.predict_eps(&stacked, t, &both)?;
    let (c, u) = out.split_rows(x.rows());
    Ok(u.zip_map(&c, |eu, ec| eu + w * (ec - eu)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Strictly descending; the sampler finishes with a step to `t = 0`.
    pub step_set: Vec<usize>,
    pub cfg_weight: f64,
    pub noise_correction: bool,
    pub seed: u64,
}

/// `n` uniformly spaced timesteps from `T - 1` downwards.
pub fn uniform_steps(timesteps: usize, n: usize) -> Vec<usize> {
    let top = (timesteps - 1) as f64;
    (0..n)
        .map(|i| (top * (n - i) as f64 / n as f64).round() as usize)
        .collect()
}

pub fn validate_step_set(steps: &[usize], timesteps: usize) -> Result<()> {
    let fail = |reason: &str| {
        Err(Error::InvalidStepSet {
            steps: steps.to_vec(),
            reason: reason.into(),
        })
    };
    if steps.is_empty() {
        return fail("empty");
    }
    if steps[0] != timesteps - 1 {
        return fail("must start at T-1");
    }
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return fail("must be strictly descending");
    }
    if *steps.last().unwrap() == 0 {
        return fail("must not contain 0; the final step to 0 is implicit");
    }
    Ok(())
}

/// The noise-corrected first update: `alpha_prev x0_hat + sigma_prev * noise`,
/// where `noise` is the draw that initialized the trajectory.
pub fn noise_corrected_step(
    x_t: &Tensor,
    eps_hat: &Tensor,
    noise: &Tensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    let x0 = x0_hat(x_t, eps_hat, t, sched)?;
    let (a, s) = (sched.alpha(t_prev), sched.sigma(t_prev));
    Ok(x0.zip_map(noise, |x, e| a * x + s * e))
}

/// Latents visited when running DDIM over `steps` from `x_start`, stopping once
/// the timestep `until` is reached (`until = 0` runs to completion).
///
/// Element `i` of the result is the latent at `steps[i]`; the final element is
/// the latent at `until`. With `noise_correction` the first update uses
/// `x_start` in place of the predicted noise.
#[allow(clippy::too_many_arguments)]
pub fn trajectory<P: EpsPredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    steps: &[usize],
    x_start: &Tensor,
    cond: &[Condition],
    cfg_weight: f64,
    noise_correction: bool,
    until: usize,
) -> Result<Vec<Tensor>> {
    if until != 0 && !steps.contains(&until) {
        return Err(Error::Unreachable {
            t: until,
            steps: steps.to_vec(),
        });
    }
    let mut xs = vec![x_start.clone()];
    for (i, &t) in steps.iter().enumerate() {
        if t <= until {
            break;
        }
        let t_prev = steps.get(i + 1).copied().unwrap_or(0);
        let x = xs.last().unwrap();
        let eps = cfg_eps(model, x, t, cond, cfg_weight)?;
        let next = if i == 0 && noise_correction {
            noise_corrected_step(x, &eps, x_start, t, t_prev, sched)?
        } else {
            ddim_step(x, &eps, t, t_prev, sched)?
        };
        xs.push(next);
    }
    Ok(xs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub samples: Tensor,
    /// Latents at each step of the step set followed by the final samples.
    pub trajectory: Vec<Tensor>,
}

/// Sample one row per entry of `cond`, drawing `x_T` from `cfg.seed`.
pub fn sample<P: EpsPredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    cond: &[Condition],
) -> Result<SampleOutput> {
    let mut r = rng::stream(cfg.seed, "sample-noise", 0);
    let x_t = rng::normal_tensor(&mut r, cond.len(), model.sample_dim());
    sample_from(model, sched, cfg, &x_t, cond)
}

/// [`sample`] from an explicit initial latent.
pub fn sample_from<P: EpsPredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    x_t: &Tensor,
    cond: &[Condition],
) -> Result<SampleOutput> {
    validate_step_set(&cfg.step_set, sched.timesteps())?;
    let traj = trajectory(
        model,
        sched,
        &cfg.step_set,
        x_t,
        cond,
        cfg.cfg_weight,
        cfg.noise_correction,
        0,
    )?;
    Ok(SampleOutput {
        samples: traj.last().unwrap().clone(),
        trajectory: traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleParams;

    /// Predicts `eps_hat = scale * x` plus a per-class offset; null has no offset.
    struct Linear {
        scale: f64,
    }

    impl EpsPredictor for Linear {
        fn sample_dim(&self) -> usize {
            2
        }
        fn predict_eps(&self, x: &Tensor, _t: usize, cond: &[Condition]) -> Result<Tensor> {
            let mut out = x.map(|v| v * self.scale);
            for (i, c) in cond.iter().enumerate() {
                if let Condition::Class(k) = c {
                    out.row_mut(i)
                        .iter_mut()
                        .for_each(|v| *v += 0.1 * (*k as f64 + 1.0));
                }
            }
            Ok(out)
        }
    }

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(ScheduleParams::default()).unwrap()
    }

    #[test]
    fn cfg_limits() {
        let m = Linear { scale: 0.9 };
        let x = Tensor::from_rows(&[[0.3, -1.0], [2.0, 0.5]]);
        let cond = [Condition::Class(1), Condition::Class(4)];
        let ec = m.predict_eps(&x, 10, &cond).unwrap();
        let eu = m.predict_eps(&x, 10, &[Condition::Null; 2]).unwrap();
        assert_eq!(cfg_eps(&m, &x, 10, &cond, 1.0).unwrap(), ec);
        assert_eq!(cfg_eps(&m, &x, 10, &cond, 0.0).unwrap(), eu);
        let nulls = [Condition::Null; 2];
        for w in [0.5, 3.0, 7.5] {
            assert_eq!(cfg_eps(&m, &x, 10, &nulls, w).unwrap(), eu);
            let g = cfg_eps(&m, &x, 10, &cond, w).unwrap();
            let expect = eu.zip_map(&ec, |u, c| u + w * (c - u));
            assert!(g.max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn step_set_validation() {
        assert!(validate_step_set(&[999, 750, 500], 1000).is_ok());
        assert!(validate_step_set(&[998, 500], 1000).is_err());
        assert!(validate_step_set(&[999, 750, 750], 1000).is_err());
        assert!(validate_step_set(&[999, 0], 1000).is_err());
        assert!(validate_step_set(&[], 1000).is_err());
        assert_eq!(uniform_steps(1000, 3), vec![999, 666, 333]);
        let s25 = uniform_steps(1000, 25);
        assert_eq!(s25.len(), 25);
        assert!(validate_step_set(&s25, 1000).is_ok());
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let m = Linear { scale: 0.95 };
        let cfg = SamplerConfig {
            step_set: vec![999, 750, 500],
            cfg_weight: 2.0,
            noise_correction: true,
            seed: 5,
        };
        let cond = vec![Condition::Class(0); 16];
        let a = sample(&m, &sched(), &cfg, &cond).unwrap();
        let b = sample(&m, &sched(), &cfg, &cond).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory.len(), 4);
    }

    #[test]
    fn noise_correction_is_noop_when_eps_equals_x() {
        let m = Linear { scale: 1.0 };
        let nulls = vec![Condition::Null; 8];
        let mut cfg = SamplerConfig {
            step_set: vec![999, 600, 200],
            cfg_weight: 1.0,
            noise_correction: true,
            seed: 9,
        };
        let on = sample(&m, &sched(), &cfg, &nulls).unwrap();
        cfg.noise_correction = false;
        let off = sample(&m, &sched(), &cfg, &nulls).unwrap();
        assert_eq!(on, off);
    }

    #[test]
    fn one_step_with_correction_is_x0_hat() {
        let m = Linear { scale: 0.8 };
        let s = sched();
        let cond = vec![Condition::Class(2); 8];
        let cfg = SamplerConfig {
            step_set: vec![999],
            cfg_weight: 1.0,
            noise_correction: true,
            seed: 3,
        };
        let out = sample(&m, &s, &cfg, &cond).unwrap();
        let x_t = &out.trajectory[0];
        let eps = m.predict_eps(x_t, 999, &cond).unwrap();
        let direct = x0_hat(x_t, &eps, 999, &s).unwrap();
        assert!(out.samples.max_abs_diff(&direct) < 1e-6);
    }

    #[test]
    fn unreachable_stop() {
        let m = Linear { scale: 1.0 };
        let x = Tensor::zeros(&[1, 2]);
        let r = trajectory(
            &m,
            &sched(),
            &[999, 750],
            &x,
            &[Condition::Null],
            1.0,
            false,
            600,
        );
        assert!(matches!(r, Err(Error::Unreachable { t: 600, .. })));
    }
}
