//! Few-step student distillation from a frozen teacher.

mod config;
mod loss;
mod train;

pub use config::{DistillConfig, DistillHyper, DistillMode, GammaTable};
pub use loss::{
    adversarial_losses, distill_loss, distill_loss_at, input_latent, reconstruction, rollout_grid,
    srl_target, student_backward_latent, teacher_rollout, x0_hat_on_tape, DistillBatch,
    StudentLoss, TapeEps,
};
pub use train::{
    distill, distill_from, distill_step, draw_distill_batch, DistillMetrics, DistillState,
};
