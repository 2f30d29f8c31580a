//! Noise schedules, forward noising, DDIM stepping, guidance and sampling.

mod sampler;
mod schedule;

pub use sampler::{
    cfg_eps, noise_corrected_step, sample, sample_from, trajectory, uniform_steps,
    validate_step_set, EpsPredictor, SampleOutput, SamplerConfig,
};
pub use schedule::{ddim_step, forward_noise, x0_hat, NoiseSchedule, ScheduleKind, ScheduleParams};
