//! Denoising score matching with condition dropout.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamHyper, AdamState, Tape, Tensor, Var};
use crate::data::Dataset;
use crate::diffusion::ScheduleParams;
use crate::error::{Error, Result};
use crate::model::{Condition, EpsConfig, EpsModel};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherHyper {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub cond_drop_prob: f64,
}

impl Default for TeacherHyper {
    fn default() -> Self {
        TeacherHyper {
            steps: 20_000,
            batch_size: 256,
            lr: 1e-3,
            cond_drop_prob: 0.1,
        }
    }
}

/// Per-row inputs of one teacher loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedBatch {
    pub t: Vec<usize>,
    pub eps: Tensor,
    pub x_t: Tensor,
    pub cond: Vec<Condition>,
}

/// Draw `t ~ U{0..T-1}`, `eps ~ N(0, I)` and condition dropout for each row of `x0`.
pub fn draw_noised_batch(
    x0: &Tensor,
    labels: &[usize],
    model: &EpsModel,
    cond_drop_prob: f64,
    rng: &mut Stream,
) -> Result<NoisedBatch> {
    if x0.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "teacher batch labels",
            left: x0.rows(),
            right: labels.len(),
        });
    }
    let sched = model.schedule();
    let rows = x0.rows();
    let t: Vec<usize> = (0..rows)
        .map(|_| rng::index(rng, sched.timesteps()))
        .collect();
    let eps = rng::normal_tensor(rng, rows, x0.cols());
    let cond = labels
        .iter()
        .map(|&l| {
            if rng::bernoulli(rng, cond_drop_prob) {
                Condition::Null
            } else {
                Condition::Class(l)
            }
        })
        .collect();
    let mut x_t = x0.clone();
    for (i, &ti) in t.iter().enumerate() {
        let (a, s) = (sched.alpha(ti), sched.sigma(ti));
        for (x, e) in x_t.row_mut(i).iter_mut().zip(eps.row(i)) {
            *x = a * *x + s * e;
        }
    }
    Ok(NoisedBatch { t, eps, x_t, cond })
}

/// `mean_rows || eps_hat - eps ||^2`.
pub fn eps_mse(tape: &mut Tape, eps_hat: Var, eps: &Tensor) -> Result<Var> {
    let target = tape.constant(eps.clone());
    let diff = tape.sub(eps_hat, target)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / eps.rows() as f64)
}

/// Teacher objective on one minibatch, recorded on `tape` against bound `params`.
pub fn teacher_loss(
    model: &EpsModel,
    tape: &mut Tape,
    params: &[Var],
    x0: &Tensor,
    labels: &[usize],
    cond_drop_prob: f64,
    rng: &mut Stream,
) -> Result<Var> {
    if x0.rows() == 0 {
        return Err(Error::InvalidSpec("empty teacher batch".into()));
    }
    let batch = draw_noised_batch(x0, labels, model, cond_drop_prob, rng)?;
    let x = tape.constant(batch.x_t);
    let eps_hat = model.forward(tape, params, x, &batch.t, &batch.cond)?;
    eps_mse(tape, eps_hat, &batch.eps)
}

/// Model and optimizer state at a given step; everything needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherState {
    pub model: EpsModel,
    pub adam: AdamState,
    pub step: usize,
}

impl TeacherState {
    pub fn init(
        config: EpsConfig,
        schedule: ScheduleParams,
        hyper: &TeacherHyper,
        seed: u64,
    ) -> Result<Self> {
        let model = EpsModel::init(config, schedule, seed)?;
        let adam = AdamState::new(model.params(), AdamHyper::with_lr(hyper.lr));
        Ok(TeacherState {
            model,
            adam,
            step: 0,
        })
    }
}

/// One optimizer step; returns the minibatch loss before the update.
pub fn teacher_step(
    state: &mut TeacherState,
    data: &Dataset,
    hyper: &TeacherHyper,
    seed: u64,
) -> Result<f64> {
    let step = state.step;
    let mut r = rng::stream(seed, "teacher-step", step as u64);
    let n = data.samples.rows();
    let idx: Vec<usize> = (0..hyper.batch_size)
        .map(|_| rng::index(&mut r, n))
        .collect();
    let x0 = data.samples.select_rows(&idx);
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();

    let mut tape = Tape::new();
    let params = state.model.bind(&mut tape, true);
    let loss = teacher_loss(
        &state.model,
        &mut tape,
        &params,
        &x0,
        &labels,
        hyper.cond_drop_prob,
        &mut r,
    )
    .map_err(|e| match e {
        Error::NonFinite { .. } => Error::Diverged {
            step,
            loss: f64::NAN,
        },
        other => other,
    })?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Diverged { step, loss: value });
    }
    let grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = params.iter().map(|&p| grads.wrt(p)).collect();
    state.adam.step(state.model.params_mut(), &grads)?;
    state.step += 1;
    Ok(value)
}

/// Train until `hyper.steps`, calling `on_step(step, loss, state)` after every update.
pub fn train_teacher_from(
    state: &mut TeacherState,
    data: &Dataset,
    hyper: &TeacherHyper,
    seed: u64,
    mut on_step: impl FnMut(usize, f64, &TeacherState) -> Result<()>,
) -> Result<()> {
    while state.step < hyper.steps {
        let step = state.step;
        let loss = teacher_step(state, data, hyper, seed)?;
        on_step(step, loss, state)?;
    }
    Ok(())
}

/// Fresh training run; returns the final state and the per-step loss curve.
pub fn train_teacher(
    data: &Dataset,
    config: EpsConfig,
    schedule: ScheduleParams,
    hyper: &TeacherHyper,
    seed: u64,
) -> Result<(TeacherState, Vec<f64>)> {
    let mut state = TeacherState::init(config, schedule, hyper, seed)?;
    let mut losses = Vec::with_capacity(hyper.steps);
    train_teacher_from(&mut state, data, hyper, seed, |_, l, _| {
        losses.push(l);
        Ok(())
    })?;
    Ok((state, losses))
}
