//! Conditional epsilon-prediction MLP and a time-conditioned MLP discriminator.

mod disc;
mod embed;
mod eps;

pub use disc::{DiscConfig, DiscModel};
pub use embed::time_embedding;
pub use eps::{EpsConfig, EpsModel};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::rng;

/// Class label, or the reserved null condition used for classifier-free guidance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Class(usize),
    Null,
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight and bias for a dense layer.
pub(crate) fn init_dense(rng: &mut rng::Stream, fan_in: usize, fan_out: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out)
        .map(|_| rng::uniform(rng, -bound, bound))
        .collect();
    let b = (0..fan_out)
        .map(|_| rng::uniform(rng, -bound, bound))
        .collect();
    (
        Tensor::from_vec(vec![fan_in, fan_out], w),
        Tensor::vector(b),
    )
}

/// Put parameters on a tape, trainable or frozen.
pub(crate) fn bind_params(tape: &mut Tape, params: &[Tensor], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|p| {
            if trainable {
                tape.param(p.clone())
            } else {
                tape.constant(p.clone())
            }
        })
        .collect()
}

/// SiLU hidden stack followed by a linear head. `layers` holds (weight, bias) pairs.
pub(crate) fn mlp(tape: &mut Tape, input: Var, layers: &[Var]) -> Result<Var> {
    let n = layers.len() / 2;
    let mut h = input;
    for i in 0..n {
        h = tape.affine(h, layers[2 * i], layers[2 * i + 1])?;
        if i + 1 < n {
            h = tape.silu(h)?;
        }
    }
    Ok(h)
}
