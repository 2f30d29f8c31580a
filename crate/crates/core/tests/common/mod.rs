#![allow(dead_code)]

use flashdistill::autodiff::{Tape, Tensor, Var};
use flashdistill::diffusion::{EpsPredictor, NoiseSchedule, ScheduleParams};
use flashdistill::model::Condition;
use flashdistill::rng;
use flashdistill::Result;

pub mod invariants;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

pub fn schedule() -> NoiseSchedule {
    NoiseSchedule::build(ScheduleParams::default()).unwrap()
}

/// Scalar readout `sum(out * w)` with fixed pseudo-random weights, so every
/// output coordinate contributes a distinct amount to the gradient.
pub fn readout(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut r = rng::stream(seed, "readout", 0);
    let w = Tensor::new(
        shape,
        (0..n).map(|_| rng::uniform(&mut r, 0.5, 1.5)).collect(),
    )?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Largest relative disagreement between tape gradients and central
/// differences over every coordinate of every input.
pub fn gradcheck(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let root = f(&mut tape, &vars).unwrap();
        (tape, vars, root)
    };
    let (tape, vars, root) = eval(inputs);
    let grads = tape.backward(root).unwrap();
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for j in 0..xs[i].numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + FD_STEP;
            let (t, _, r) = eval(&xs);
            let up = t.value(r).item();
            xs[i].data_mut()[j] = orig - FD_STEP;
            let (t, _, r) = eval(&xs);
            let down = t.value(r).item();
            xs[i].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let a = g.data()[j];
            let diff = (a - fd).abs();
            if diff > 1e-9 {
                worst = worst.max(diff / a.abs().max(fd.abs()));
            }
        }
    }
    worst
}

/// Exact noise predictor for data distributed as `N(mu, s^2 I)`:
/// `E[eps | x_t] = sigma (x_t - alpha mu) / (alpha^2 s^2 + sigma^2)`.
pub struct GaussianEps {
    pub mu: Vec<f64>,
    pub s: f64,
    pub sched: NoiseSchedule,
}

impl EpsPredictor for GaussianEps {
    fn sample_dim(&self) -> usize {
        self.mu.len()
    }
    fn predict_eps(&self, x: &Tensor, t: usize, _: &[Condition]) -> Result<Tensor> {
        let (a, sg) = (self.sched.alpha(t), self.sched.sigma(t));
        let denom = a * a * self.s * self.s + sg * sg;
        let mut out = x.clone();
        let d = self.mu.len();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = sg * (*v - a * self.mu[k % d]) / denom;
        }
        Ok(out)
    }
}

/// Exact noise for data concentrated on the rows of `x0`.
pub struct PointMass {
    pub x0: Tensor,
    pub sched: NoiseSchedule,
}

impl EpsPredictor for PointMass {
    fn sample_dim(&self) -> usize {
        self.x0.cols()
    }
    fn predict_eps(&self, x: &Tensor, t: usize, _: &[Condition]) -> Result<Tensor> {
        let (a, s) = (self.sched.alpha(t), self.sched.sigma(t));
        Ok(x.zip_map(&self.x0, |x, x0| (x - a * x0) / s))
    }
}

pub fn normal(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut r = rng::stream(seed, "test-normal", 0);
    rng::normal_tensor(&mut r, rows, cols)
}
