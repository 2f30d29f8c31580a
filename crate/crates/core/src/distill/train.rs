use serde::{Deserialize, Serialize};

use super::config::{DistillConfig, DistillHyper};
use super::loss::{adversarial_losses, distill_loss, DistillBatch};
use crate::autodiff::{AdamHyper, AdamState, Tape, Tensor};
use crate::data::Dataset;
use crate::diffusion::EpsPredictor;
use crate::error::{Error, Result};
use crate::model::{Condition, DiscConfig, DiscModel, EpsModel};
use crate::rng;

/// One row of the distillation log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillMetrics {
    pub step: usize,
    pub t: usize,
    pub recon_loss: f64,
    pub g_loss: f64,
    pub d_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillState {
    pub student: EpsModel,
    pub student_adam: AdamState,
    pub disc: DiscModel,
    pub disc_adam: AdamState,
    pub step: usize,
}

impl DistillState {
    /// Student starts as a copy of the teacher; the discriminator is freshly initialized.
    pub fn init(
        teacher: &EpsModel,
        disc_config: DiscConfig,
        hyper: &DistillHyper,
        seed: u64,
    ) -> Result<Self> {
        let student = teacher.clone();
        let disc = DiscModel::init(disc_config, seed)?;
        Ok(DistillState {
            student_adam: AdamState::new(student.params(), AdamHyper::with_lr(hyper.student_lr)),
            disc_adam: AdamState::new(disc.params(), AdamHyper::with_lr(hyper.disc_lr)),
            student,
            disc,
            step: 0,
        })
    }
}

fn diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged {
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Draw the batch for step `step`: ground-truth rows with their labels as conditions
/// and a fresh initial latent.
pub fn draw_distill_batch(
    data: &Dataset,
    batch_size: usize,
    sample_dim: usize,
    rng: &mut rng::Stream,
) -> DistillBatch {
    let n = data.samples.rows();
    let idx: Vec<usize> = (0..batch_size).map(|_| rng::index(rng, n)).collect();
    let x0 = data.samples.select_rows(&idx);
    let cond = idx
        .iter()
        .map(|&i| Condition::Class(data.labels[i]))
        .collect();
    let x_start = rng::normal_tensor(rng, batch_size, sample_dim);
    DistillBatch { x_start, x0, cond }
}

/// One student update followed, when enabled, by one discriminator update.
/// The teacher is only read.
pub fn distill_step<P: EpsPredictor + ?Sized>(
    state: &mut DistillState,
    teacher: &P,
    data: &Dataset,
    cfg: &DistillConfig,
    hyper: &DistillHyper,
) -> Result<DistillMetrics> {
    let step = state.step;
    let mut r = rng::stream(cfg.seed, "distill-step", step as u64);
    let batch = draw_distill_batch(data, hyper.batch_size, state.student.sample_dim(), &mut r);
    let sched = state.student.schedule().clone();
    let disc = cfg.disc.then_some(&state.disc);

    let out = distill_loss(&state.student, teacher, disc, &batch, cfg, &sched, &mut r)
        .map_err(diverged(step))?;
    let total = out.tape.value(out.loss).item();
    if !total.is_finite() {
        return Err(Error::Diverged { step, loss: total });
    }
    let grads = out.tape.backward(out.loss)?;
    let grads: Vec<Tensor> = out.student_params.iter().map(|&p| grads.wrt(p)).collect();
    state
        .student_adam
        .step(state.student.params_mut(), &grads)?;

    let mut d_loss = 0.0;
    if cfg.disc {
        let mut tape = Tape::new();
        let params = state.disc.bind(&mut tape, true);
        let real = tape.constant(batch.x0.clone());
        let fake = tape.constant(out.x0_pred.clone());
        let ts = vec![out.t; batch.x0.rows()];
        let (d, _) = adversarial_losses(&state.disc, &mut tape, &params, real, fake, &ts)
            .map_err(diverged(step))?;
        d_loss = tape.value(d).item();
        if !d_loss.is_finite() {
            return Err(Error::Diverged { step, loss: d_loss });
        }
        let grads = tape.backward(d)?;
        let grads: Vec<Tensor> = params.iter().map(|&p| grads.wrt(p)).collect();
        state.disc_adam.step(state.disc.params_mut(), &grads)?;
    }
    state.step += 1;
    Ok(DistillMetrics {
        step,
        t: out.t,
        recon_loss: out.recon,
        g_loss: out.g_loss,
        d_loss,
    })
}

/// Run until `hyper.steps`, calling `on_step` after every update.
pub fn distill_from<P: EpsPredictor + ?Sized>(
    state: &mut DistillState,
    teacher: &P,
    data: &Dataset,
    cfg: &DistillConfig,
    hyper: &DistillHyper,
    mut on_step: impl FnMut(&DistillMetrics, &DistillState) -> Result<()>,
) -> Result<()> {
    cfg.validate(state.student.schedule().timesteps())?;
    while state.step < hyper.steps {
        let m = distill_step(state, teacher, data, cfg, hyper)?;
        on_step(&m, state)?;
    }
    Ok(())
}

/// Fresh distillation run from `teacher`; returns the final state and the metrics log.
pub fn distill(
    teacher: &EpsModel,
    data: &Dataset,
    disc_config: DiscConfig,
    cfg: &DistillConfig,
    hyper: &DistillHyper,
) -> Result<(DistillState, Vec<DistillMetrics>)> {
    let mut state = DistillState::init(teacher, disc_config, hyper, cfg.seed)?;
    let mut log = Vec::with_capacity(hyper.steps);
    distill_from(&mut state, teacher, data, cfg, hyper, |m, _| {
        log.push(*m);
        Ok(())
    })?;
    Ok((state, log))
}
