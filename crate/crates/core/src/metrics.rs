//! Desk-scale evaluation: sliced Wasserstein distance, mode coverage,
//! condition fidelity, a leakage probe for the distillation inputs, and the
//! first-step bias measurement used to assess noise correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{gen_dataset, posterior_mode, MixtureSpec};
use crate::diffusion::{
    cfg_eps, ddim_step, forward_noise, noise_corrected_step, validate_step_set, EpsPredictor,
    NoiseSchedule,
};
use crate::distill::{input_latent, DistillMode};
use crate::error::{Error, Result};
use crate::model::Condition;
use crate::rng;

/// Wasserstein-1 distance between two 1-D empirical distributions given sorted values.
fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let (mut u, mut total) = (0.0f64, 0.0);
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (a[i] - b[j]).abs() * (next - u);
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

fn project_sorted(x: &Tensor, dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = (0..x.rows())
        .map(|i| x.row(i).iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Mean 1-D Wasserstein-1 distance over `n_proj` random unit directions.
pub fn sliced_wasserstein(a: &Tensor, b: &Tensor, n_proj: usize, seed: u64) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "sliced_wasserstein",
            shapes: vec![a.shape().to_vec(), b.shape().to_vec()],
        });
    }
    if a.numel() == 0 || b.numel() == 0 || n_proj == 0 {
        return Err(Error::LengthMismatch {
            what: "sliced_wasserstein inputs",
            left: a.rows(),
            right: b.rows(),
        });
    }
    let dim = a.cols();
    let mut r = rng::stream(seed, "sw-directions", 0);
    let mut total = 0.0;
    for _ in 0..n_proj {
        let mut dir: Vec<f64> = (0..dim).map(|_| rng::normal(&mut r)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        total += wasserstein_1d(&project_sorted(a, &dir), &project_sorted(b, &dir));
    }
    Ok(total / n_proj as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub histogram: Vec<usize>,
    /// Fraction of modes holding at least 1% of the samples.
    pub recall: f64,
}

pub fn mode_coverage(samples: &Tensor, spec: &MixtureSpec) -> ModeCoverage {
    let mut histogram = vec![0; spec.n_modes()];
    for i in 0..samples.rows() {
        let row = samples.row(i);
        histogram[posterior_mode([row[0], row[1]], spec).0] += 1;
    }
    let threshold = 0.01 * samples.rows() as f64;
    let covered = histogram
        .iter()
        .filter(|&&c| c as f64 >= threshold && c > 0)
        .count();
    ModeCoverage {
        histogram,
        recall: covered as f64 / spec.n_modes() as f64,
    }
}

/// Fraction of samples whose most likely class is the requested one.
pub fn condition_fidelity(
    samples: &Tensor,
    requested: &[usize],
    spec: &MixtureSpec,
) -> Result<f64> {
    if samples.rows() != requested.len() {
        return Err(Error::LengthMismatch {
            what: "condition_fidelity labels",
            left: samples.rows(),
            right: requested.len(),
        });
    }
    if requested.is_empty() {
        return Ok(0.0);
    }
    let hits = (0..samples.rows())
        .filter(|&i| {
            let row = samples.row(i);
            posterior_mode([row[0], row[1]], spec).1 == requested[i]
        })
        .count();
    Ok(hits as f64 / requested.len() as f64)
}

/// Labels drawn from the class frequencies of `spec`.
pub fn draw_labels(spec: &MixtureSpec, n: usize, seed: u64) -> Vec<usize> {
    let weights = spec.class_weights();
    let mut r = rng::stream(seed, "labels", 0);
    (0..n)
        .map(|_| {
            let u = rng::uniform(&mut r, 0.0, 1.0);
            let mut acc = 0.0;
            for (c, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    return c;
                }
            }
            weights.len() - 1
        })
        .collect()
}

pub fn class_conditions(labels: &[usize]) -> Vec<Condition> {
    labels.iter().map(|&l| Condition::Class(l)).collect()
}

fn column(x: &Tensor, c: usize) -> impl Iterator<Item = f64> + Clone + '_ {
    (0..x.rows()).map(move |i| x.row(i)[c])
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Per-coordinate corr(latent, x0) for the batch fed to the student.
    pub corr: Vec<f64>,
    /// Largest absolute latent difference between two runs that share seeds
    /// and conditions but see different ground-truth batches.
    pub max_latent_diff: f64,
}

/// How much the distillation input latent at `t` depends on ground truth.
#[allow(clippy::too_many_arguments)]
pub fn leakage_probe<P: EpsPredictor + ?Sized>(
    mode: DistillMode,
    student: &P,
    sched: &NoiseSchedule,
    step_set: &[usize],
    noise_correction: bool,
    t: usize,
    spec: &MixtureSpec,
    n: usize,
    seed: u64,
) -> Result<LeakageReport> {
    let mut r = rng::stream(seed, "leakage-noise", 0);
    let x_t = rng::normal_tensor(&mut r, n, student.sample_dim());
    let cond = class_conditions(&draw_labels(spec, n, seed));
    let data_a = gen_dataset(spec, n, seed ^ 0xa5a5)?.samples;
    let data_b = gen_dataset(spec, n, seed ^ 0x5a5a)?.samples;
    let latent_a = input_latent(
        mode,
        student,
        sched,
        step_set,
        noise_correction,
        t,
        &x_t,
        &data_a,
        &cond,
    )?;
    let latent_b = input_latent(
        mode,
        student,
        sched,
        step_set,
        noise_correction,
        t,
        &x_t,
        &data_b,
        &cond,
    )?;
    let corr = (0..latent_a.cols())
        .map(|c| {
            let l: Vec<f64> = column(&latent_a, c).collect();
            let d: Vec<f64> = column(&data_a, c).collect();
            pearson(&l, &d)
        })
        .collect();
    Ok(LeakageReport {
        corr,
        max_latent_diff: latent_a.max_abs_diff(&latent_b),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStepBias {
    /// L2 distance between sample mean and reference mean, with / without correction.
    pub mean_shift_corrected: f64,
    pub mean_shift_plain: f64,
    /// Mean over coordinates of sample variance / reference variance.
    pub var_ratio_corrected: f64,
    pub var_ratio_plain: f64,
}

impl FirstStepBias {
    /// True when the corrected sampler's variance ratio is strictly closer to 1.
    pub fn correction_closer(&self) -> bool {
        (self.var_ratio_corrected - 1.0).abs() < (self.var_ratio_plain - 1.0).abs()
    }
}

fn moments_vs(samples: &Tensor, reference: &Tensor) -> (f64, f64) {
    let dim = samples.cols();
    let mut shift = 0.0;
    let mut ratio = 0.0;
    for c in 0..dim {
        let (ms, vs) = mean_var(column(samples, c));
        let (mr, vr) = mean_var(column(reference, c));
        shift += (ms - mr).powi(2);
        ratio += vs / vr.max(f64::MIN_POSITIVE);
    }
    (shift.sqrt(), ratio / dim as f64)
}

/// Run the first sampling step from the same `x_T` with and without noise
/// correction and compare the first two moments of the resulting latents
/// against the forward marginal of `reference` at that timestep. For a
/// one-element step set the first step lands on the final samples.
#[allow(clippy::too_many_arguments)]
pub fn first_step_bias<P: EpsPredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    step_set: &[usize],
    cfg_weight: f64,
    spec: &MixtureSpec,
    reference: &Tensor,
    n: usize,
    seed: u64,
) -> Result<FirstStepBias> {
    if n == 0 {
        return Err(Error::LengthMismatch {
            what: "first_step_bias samples",
            left: 0,
            right: 1,
        });
    }
    validate_step_set(step_set, sched.timesteps())?;
    let mut r = rng::stream(seed, "bias-noise", 0);
    let x_t = rng::normal_tensor(&mut r, n, model.sample_dim());
    let cond = class_conditions(&draw_labels(spec, n, seed));
    let (t0, t1) = (step_set[0], step_set.get(1).copied().unwrap_or(0));
    let eps = cfg_eps(model, &x_t, t0, &cond, cfg_weight)?;
    let on = noise_corrected_step(&x_t, &eps, &x_t, t0, t1, sched)?;
    let off = ddim_step(&x_t, &eps, t0, t1, sched)?;
    let mut r = rng::stream(seed, "bias-reference", 0);
    let noise = rng::normal_tensor(&mut r, reference.rows(), reference.cols());
    let marginal = forward_noise(reference, &noise, t1, sched)?;
    let (mean_shift_corrected, var_ratio_corrected) = moments_vs(&on, &marginal);
    let (mean_shift_plain, var_ratio_plain) = moments_vs(&off, &marginal);
    Ok(FirstStepBias {
        mean_shift_corrected,
        mean_shift_plain,
        var_ratio_corrected,
        var_ratio_plain,
    })
}
