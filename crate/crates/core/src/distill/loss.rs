use super::config::{DistillConfig, DistillMode, GammaTable};
use crate::autodiff::{Tape, Tensor, Var};
use crate::diffusion::{
    cfg_eps, ddim_step, forward_noise, trajectory, x0_hat, EpsPredictor, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::model::{Condition, DiscModel, EpsModel};
use crate::rng::{self, Stream};

/// A noise predictor that can be recorded on a tape for training.
pub trait TapeEps: EpsPredictor {
    fn bind(&self, tape: &mut Tape) -> Vec<Var>;
    fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        t: usize,
        cond: &[Condition],
    ) -> Result<Var>;
}

impl TapeEps for EpsModel {
    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        EpsModel::bind(self, tape, true)
    }

    fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        t: usize,
        cond: &[Condition],
    ) -> Result<Var> {
        let rows = tape.value(x).rows();
        self.forward(tape, params, x, &vec![t; rows], cond)
    }
}

/// Latent the student reaches at `t_target` by running its own sampler from
/// `x_start` over the prefix of `step_set` above `t_target`.
///
/// The result is a plain tensor: no gradient path back through the trajectory.
pub fn student_backward_latent<P: EpsPredictor + ?Sized>(
    student: &P,
    sched: &NoiseSchedule,
    step_set: &[usize],
    t_target: usize,
    x_start: &Tensor,
    cond: &[Condition],
    noise_correction: bool,
) -> Result<Tensor> {
    if !step_set.contains(&t_target) {
        return Err(Error::Unreachable {
            t: t_target,
            steps: step_set.to_vec(),
        });
    }
    let traj = trajectory(
        student,
        sched,
        step_set,
        x_start,
        cond,
        1.0,
        noise_correction,
        t_target,
    )?;
    Ok(traj.into_iter().last().unwrap())
}

/// The student's training input at `t` for either distillation mode.
///
/// Forward mode noises the ground-truth batch `x0` with `x_start` as the noise;
/// backward mode ignores `x0` entirely.
#[allow(clippy::too_many_arguments)]
pub fn input_latent<P: EpsPredictor + ?Sized>(
    mode: DistillMode,
    student: &P,
    sched: &NoiseSchedule,
    step_set: &[usize],
    noise_correction: bool,
    t: usize,
    x_start: &Tensor,
    x0: &Tensor,
    cond: &[Condition],
) -> Result<Tensor> {
    match mode {
        DistillMode::Forward => forward_noise(x0, x_start, t, sched),
        DistillMode::Backward => {
            student_backward_latent(student, sched, step_set, t, x_start, cond, noise_correction)
        }
    }
}

/// Grid visited by a `k`-step teacher rollout from `t_start` to `round(t_start / k)`.
pub fn rollout_grid(t_start: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || t_start < k {
        return Err(Error::RolloutTooShort { t_start, k });
    }
    if k == 1 {
        return Ok(vec![t_start]);
    }
    let end = (t_start as f64 / k as f64).round();
    let span = t_start as f64 - end;
    let mut grid: Vec<usize> = (0..=k)
        .map(|i| (t_start as f64 - span * i as f64 / k as f64).round() as usize)
        .collect();
    grid.dedup();
    Ok(grid)
}

/// Teacher target: guided DDIM over [`rollout_grid`], then `x0_hat` at the endpoint.
/// `k = 1` evaluates `x0_hat` at `t_start` directly.
pub fn teacher_rollout<P: EpsPredictor + ?Sized>(
    teacher: &P,
    x_start: &Tensor,
    t_start: usize,
    k: usize,
    cfg_weight: f64,
    sched: &NoiseSchedule,
    cond: &[Condition],
) -> Result<Tensor> {
    let grid = rollout_grid(t_start, k)?;
    let mut x = x_start.clone();
    for pair in grid.windows(2) {
        let eps = cfg_eps(teacher, &x, pair[0], cond, cfg_weight)?;
        x = ddim_step(&x, &eps, pair[0], pair[1], sched)?;
    }
    let end = *grid.last().unwrap();
    let eps = cfg_eps(teacher, &x, end, cond, cfg_weight)?;
    x0_hat(&x, &eps, end, sched)
}

/// Shifted reconstruction target: renoise the (detached) student prediction to
/// `gamma(t)` with fresh noise and let the teacher denoise it.
#[allow(clippy::too_many_arguments)]
pub fn srl_target<P: EpsPredictor + ?Sized>(
    teacher: &P,
    student_x0_pred: &Tensor,
    t: usize,
    gamma: &GammaTable,
    k: usize,
    cfg_weight: f64,
    sched: &NoiseSchedule,
    cond: &[Condition],
    rng: &mut Stream,
) -> Result<Tensor> {
    let t_phi = gamma.apply(t);
    let eps = rng::normal_tensor(rng, student_x0_pred.rows(), student_x0_pred.cols());
    let chi = forward_noise(student_x0_pred, &eps, t_phi, sched)?;
    teacher_rollout(teacher, &chi, t_phi, k, cfg_weight, sched, cond)
}

/// Hinge losses. `d_loss` sees the fake batch through a stop-gradient, so the
/// generator only receives signal from `g_loss`.
pub fn adversarial_losses(
    disc: &DiscModel,
    tape: &mut Tape,
    disc_params: &[Var],
    real: Var,
    fake: Var,
    t: &[usize],
) -> Result<(Var, Var)> {
    let one = tape.constant(Tensor::scalar(1.0));
    let d_real = disc.forward(tape, disc_params, real, t)?;
    let fake_detached = tape.stop_gradient(fake)?;
    let d_fake_detached = disc.forward(tape, disc_params, fake_detached, t)?;
    let real_margin = tape.sub(one, d_real)?;
    let real_hinge = tape.relu(real_margin)?;
    let fake_margin = tape.add(one, d_fake_detached)?;
    let fake_hinge = tape.relu(fake_margin)?;
    let real_term = tape.mean(real_hinge)?;
    let fake_term = tape.mean(fake_hinge)?;
    let d_loss = tape.add(real_term, fake_term)?;

    let d_fake = disc.forward(tape, disc_params, fake, t)?;
    let mean_fake = tape.mean(d_fake)?;
    let g_loss = tape.scale(mean_fake, -1.0)?;
    Ok((d_loss, g_loss))
}

/// `x0_hat` recorded on the tape for a single timestep.
pub fn x0_hat_on_tape(
    tape: &mut Tape,
    x: Var,
    eps_hat: Var,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let alpha = sched.alpha(t);
    if alpha == 0.0 {
        return Err(Error::SingularAlpha(t));
    }
    let noise = tape.scale(eps_hat, sched.sigma(t))?;
    let signal = tape.sub(x, noise)?;
    tape.scale(signal, 1.0 / alpha)
}

/// `mean_rows || target - pred ||^2`.
pub fn reconstruction(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    let rows = target.rows();
    let target = tape.constant(target.clone());
    let diff = tape.sub(target, pred)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / rows as f64)
}

/// Inputs for one distillation step.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillBatch {
    /// Initial noise; also the forward-mode noise.
    pub x_start: Tensor,
    /// Ground-truth samples (forward-mode inputs and discriminator reals).
    pub x0: Tensor,
    pub cond: Vec<Condition>,
}

/// A recorded student loss, ready for `backward`.
pub struct StudentLoss {
    pub tape: Tape,
    pub student_params: Vec<Var>,
    pub loss: Var,
    pub t: usize,
    pub latent: Tensor,
    pub target: Tensor,
    pub x0_pred: Tensor,
    pub recon: f64,
    pub g_loss: f64,
}

/// Student objective at an explicit timestep `t`.
///
/// The target is built from the teacher only and enters the tape as a constant.
#[allow(clippy::too_many_arguments)]
pub fn distill_loss_at<S: TapeEps, P: EpsPredictor + ?Sized>(
    student: &S,
    teacher: &P,
    disc: Option<&DiscModel>,
    batch: &DistillBatch,
    cfg: &DistillConfig,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut Stream,
) -> Result<StudentLoss> {
    let latent = input_latent(
        cfg.mode,
        student,
        sched,
        &cfg.step_set,
        cfg.noise_correction,
        t,
        &batch.x_start,
        &batch.x0,
        &batch.cond,
    )?;
    let mut tape = Tape::new();
    let student_params = student.bind(&mut tape);
    let x = tape.constant(latent.clone());
    let eps_hat = student.forward_tape(&mut tape, &student_params, x, t, &batch.cond)?;
    let pred = x0_hat_on_tape(&mut tape, x, eps_hat, t, sched)?;
    let x0_pred = tape.value(pred).clone();

    let target = if cfg.srl {
        srl_target(
            teacher,
            &x0_pred,
            t,
            &cfg.gamma,
            cfg.k,
            cfg.cfg_weight,
            sched,
            &batch.cond,
            rng,
        )?
    } else {
        teacher_rollout(
            teacher,
            &latent,
            t,
            cfg.k,
            cfg.cfg_weight,
            sched,
            &batch.cond,
        )?
    };
    let recon_var = reconstruction(&mut tape, pred, &target)?;
    let recon = tape.value(recon_var).item();

    let (loss, g_loss) = match disc {
        Some(d) if cfg.disc && cfg.adv_weight > 0.0 => {
            let dparams = d.bind(&mut tape, false);
            let logits = d.forward(&mut tape, &dparams, pred, &vec![t; latent.rows()])?;
            let mean = tape.mean(logits)?;
            let g = tape.scale(mean, -1.0)?;
            let g_value = tape.value(g).item();
            let weighted = tape.scale(g, cfg.adv_weight)?;
            (tape.add(recon_var, weighted)?, g_value)
        }
        _ => (recon_var, 0.0),
    };
    Ok(StudentLoss {
        tape,
        student_params,
        loss,
        t,
        latent,
        target,
        x0_pred,
        recon,
        g_loss,
    })
}

/// Student objective with `t` drawn uniformly from the step set.
pub fn distill_loss<S: TapeEps, P: EpsPredictor + ?Sized>(
    student: &S,
    teacher: &P,
    disc: Option<&DiscModel>,
    batch: &DistillBatch,
    cfg: &DistillConfig,
    sched: &NoiseSchedule,
    rng: &mut Stream,
) -> Result<StudentLoss> {
    cfg.validate(sched.timesteps())?;
    let t = cfg.step_set[rng::index(rng, cfg.step_set.len())];
    distill_loss_at(student, teacher, disc, batch, cfg, sched, t, rng)
}
