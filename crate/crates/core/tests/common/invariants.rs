//! Property checks shared by the invariant tests and the acceptance run.

use flashdistill::autodiff::{Tape, Tensor, Var};
use flashdistill::diffusion::{
    forward_noise, sample_from, uniform_steps, x0_hat, NoiseSchedule, SamplerConfig, ScheduleParams,
};
use flashdistill::model::{Condition, DiscConfig, DiscModel, EpsConfig, EpsModel};
use flashdistill::Result;

use super::{gradcheck, normal, readout, schedule, PointMass, FD_TOL};

pub type Check = std::result::Result<(), String>;

pub fn variance_preservation() -> Check {
    for ztsnr in [true, false] {
        let s = NoiseSchedule::build(ScheduleParams {
            zero_terminal_snr: ztsnr,
            ..Default::default()
        })
        .unwrap();
        for t in 0..=s.timesteps() {
            let v = s.alpha(t).powi(2) + s.sigma(t).powi(2);
            if (v - 1.0).abs() > 1e-12 {
                return Err(format!("alpha^2 + sigma^2 = {v} at t={t} (ztsnr={ztsnr})"));
            }
        }
    }
    Ok(())
}

pub fn x0_round_trip() -> Check {
    let s = schedule();
    let x0 = normal(1, 64, 2);
    let eps = normal(2, 64, 2);
    for t in 0..s.timesteps() {
        let x_t = forward_noise(&x0, &eps, t, &s).unwrap();
        let back = x0_hat(&x_t, &eps, t, &s).unwrap();
        let err = back.max_abs_diff(&x0);
        if err > 1e-10 {
            return Err(format!("x0 round trip error {err:e} at t={t}"));
        }
    }
    Ok(())
}

/// With the exact noise of a point mass, DDIM lands on the data in any number of steps.
pub fn step_count_invariance() -> Check {
    let s = schedule();
    let x0 = normal(3, 32, 2);
    let oracle = PointMass {
        x0: x0.clone(),
        sched: s.clone(),
    };
    let x_t = normal(4, 32, 2);
    let cond = vec![Condition::Null; 32];
    for nc in [false, true] {
        let run = |n: usize| {
            let cfg = SamplerConfig {
                step_set: uniform_steps(1000, n),
                cfg_weight: 1.0,
                noise_correction: nc,
                seed: 0,
            };
            sample_from(&oracle, &s, &cfg, &x_t, &cond).unwrap().samples
        };
        let (one, many) = (run(1), run(25));
        let err = one.max_abs_diff(&many).max(one.max_abs_diff(&x0));
        if err > 1e-10 {
            return Err(format!(
                "1-step vs 25-step disagreement {err:e} (noise_correction={nc})"
            ));
        }
    }
    Ok(())
}

pub fn stop_gradient_zero_flow() -> Check {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 3.0]).unwrap());
    let sg = tape.stop_gradient(x).unwrap();
    let sq = tape.square(sg).unwrap();
    let blocked = tape.sum(sq).unwrap();
    let g = tape.backward(blocked).unwrap().wrt(x);
    if g.data().iter().any(|&v| v != 0.0) {
        return Err(format!(
            "gradient leaked through stop_gradient: {:?}",
            g.data()
        ));
    }
    let prod = tape.mul(x, sg).unwrap();
    let mixed = tape.sum(prod).unwrap();
    let g = tape.backward(mixed).unwrap().wrt(x);
    if g.data() != [0.5, -1.0, 2.0, 3.0] {
        return Err(format!(
            "d/dx sum(x * sg(x)) should equal x, got {:?}",
            g.data()
        ));
    }
    Ok(())
}

type OpCase = (
    &'static str,
    Vec<Tensor>,
    Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
);

/// Inputs kept away from the ReLU kink so central differences are exact to O(h^2).
fn away_from_zero(seed: u64, rows: usize, cols: usize) -> Tensor {
    normal(seed, rows, cols).map(|v| if v.abs() < 0.1 { v + 0.2 } else { v })
}

pub fn op_cases() -> Vec<OpCase> {
    let a = || away_from_zero(10, 3, 4);
    let b = || away_from_zero(11, 3, 4);
    let w = || normal(12, 4, 5);
    let bias = || Tensor::vector(normal(13, 1, 5).into_data());
    let s = || Tensor::scalar(0.7);
    vec![
        (
            "add",
            vec![a(), b()],
            Box::new(|t, v| {
                let o = t.add(v[0], v[1])?;
                readout(t, o, 1)
            }),
        ),
        (
            "add_scalar",
            vec![s(), a()],
            Box::new(|t, v| {
                let o = t.add(v[0], v[1])?;
                readout(t, o, 2)
            }),
        ),
        (
            "sub",
            vec![a(), b()],
            Box::new(|t, v| {
                let o = t.sub(v[0], v[1])?;
                readout(t, o, 3)
            }),
        ),
        (
            "sub_scalar",
            vec![a(), s()],
            Box::new(|t, v| {
                let o = t.sub(v[0], v[1])?;
                readout(t, o, 4)
            }),
        ),
        (
            "mul",
            vec![a(), b()],
            Box::new(|t, v| {
                let o = t.mul(v[0], v[1])?;
                readout(t, o, 5)
            }),
        ),
        (
            "mul_scalar",
            vec![s(), a()],
            Box::new(|t, v| {
                let o = t.mul(v[0], v[1])?;
                readout(t, o, 6)
            }),
        ),
        (
            "matmul",
            vec![a(), w()],
            Box::new(|t, v| {
                let o = t.matmul(v[0], v[1])?;
                readout(t, o, 7)
            }),
        ),
        (
            "affine",
            vec![a(), w(), bias()],
            Box::new(|t, v| {
                let o = t.affine(v[0], v[1], v[2])?;
                readout(t, o, 8)
            }),
        ),
        (
            "silu",
            vec![a()],
            Box::new(|t, v| {
                let o = t.silu(v[0])?;
                readout(t, o, 9)
            }),
        ),
        (
            "relu",
            vec![a()],
            Box::new(|t, v| {
                let o = t.relu(v[0])?;
                readout(t, o, 10)
            }),
        ),
        (
            "sum",
            vec![a()],
            Box::new(|t, v| {
                let o = t.sum(v[0])?;
                t.square(o)
            }),
        ),
        (
            "mean",
            vec![a()],
            Box::new(|t, v| {
                let o = t.mean(v[0])?;
                t.square(o)
            }),
        ),
        (
            "square",
            vec![a()],
            Box::new(|t, v| {
                let o = t.square(v[0])?;
                readout(t, o, 11)
            }),
        ),
        (
            "concat",
            vec![a(), normal(14, 3, 2)],
            Box::new(|t, v| {
                let o = t.concat(&[v[0], v[1]])?;
                readout(t, o, 12)
            }),
        ),
        (
            "scale",
            vec![a()],
            Box::new(|t, v| {
                let o = t.scale(v[0], -1.7)?;
                readout(t, o, 13)
            }),
        ),
        (
            "scale_rows",
            vec![a()],
            Box::new(|t, v| {
                let o = t.scale_rows(v[0], vec![0.5, -2.0, 3.0])?;
                readout(t, o, 14)
            }),
        ),
        (
            "gather",
            vec![normal(15, 5, 3)],
            Box::new(|t, v| {
                let o = t.gather(v[0], vec![4, 0, 4, 2])?;
                readout(t, o, 15)
            }),
        ),
    ]
}

pub fn op_gradients() -> Check {
    for (name, inputs, f) in op_cases() {
        let err = gradcheck(&inputs, f);
        if !(err < FD_TOL) {
            return Err(format!("{name}: relative gradient error {err:e}"));
        }
    }
    Ok(())
}

pub fn tiny_eps() -> EpsModel {
    let config = EpsConfig {
        width: 8,
        depth: 2,
        time_embed_dim: 4,
        cond_embed_dim: 3,
        ..Default::default()
    };
    EpsModel::init(config, ScheduleParams::default(), 21).unwrap()
}

pub fn tiny_disc() -> DiscModel {
    DiscModel::init(
        DiscConfig {
            width: 8,
            depth: 2,
            time_embed_dim: 4,
            ..Default::default()
        },
        22,
    )
    .unwrap()
}

pub fn model_gradients() -> Check {
    let eps = tiny_eps();
    let x = normal(30, 4, 2);
    let t = vec![999, 640, 17, 300];
    let cond = vec![
        Condition::Class(3),
        Condition::Null,
        Condition::Class(7),
        Condition::Class(3),
    ];
    let mut inputs = vec![x.clone()];
    inputs.extend(eps.params().iter().cloned());
    let err = gradcheck(&inputs, |tape, v| {
        let out = eps.forward(tape, &v[1..], v[0], &t, &cond)?;
        readout(tape, out, 31)
    });
    if !(err < FD_TOL) {
        return Err(format!("eps model: relative gradient error {err:e}"));
    }

    let disc = tiny_disc();
    let mut inputs = vec![x];
    inputs.extend(disc.params().iter().cloned());
    let err = gradcheck(&inputs, |tape, v| {
        let out = disc.forward(tape, &v[1..], v[0], &t)?;
        readout(tape, out, 32)
    });
    if !(err < FD_TOL) {
        return Err(format!("discriminator: relative gradient error {err:e}"));
    }
    Ok(())
}

pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("variance preservation", variance_preservation()),
        ("x0 round trip", x0_round_trip()),
        ("DDIM step-count invariance", step_count_invariance()),
        ("stop_gradient zero flow", stop_gradient_zero_flow()),
        ("op gradients vs finite differences", op_gradients()),
        ("model gradients vs finite differences", model_gradients()),
    ]
}
