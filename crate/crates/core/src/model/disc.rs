use serde::{Deserialize, Serialize};

use super::{bind_params, init_dense, mlp, time_embedding};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscConfig {
    pub sample_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            sample_dim: 2,
            width: 64,
            depth: 2,
            time_embed_dim: 32,
        }
    }
}

impl DiscConfig {
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut fan_in = self.sample_dim + self.time_embed_dim;
        for _ in 0..self.depth {
            shapes.push(vec![fan_in, self.width]);
            shapes.push(vec![self.width]);
            fan_in = self.width;
        }
        shapes.push(vec![fan_in, 1]);
        shapes.push(vec![1]);
        shapes
    }
}

/// MLP critic over `(x0-space sample, time embedding)` with one logit per row.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscModel {
    config: DiscConfig,
    params: Vec<Tensor>,
}

impl DiscModel {
    pub fn init(config: DiscConfig, seed: u64) -> Result<Self> {
        if config.width == 0 || config.depth == 0 || config.sample_dim == 0 {
            return Err(Error::InvalidDims(format!("discriminator {config:?}")));
        }
        let mut r = rng::stream(seed, "init-disc", 0);
        let mut params = Vec::new();
        for shape in config.param_shapes().iter().step_by(2) {
            let (w, b) = init_dense(&mut r, shape[0], shape[1]);
            params.push(w);
            params.push(b);
        }
        Ok(DiscModel { config, params })
    }

    pub fn from_params(config: DiscConfig, params: Vec<Tensor>) -> Result<Self> {
        let found: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
        if found != config.param_shapes() {
            return Err(Error::ShapeMismatch {
                op: "disc_model",
                shapes: found,
            });
        }
        Ok(DiscModel { config, params })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        bind_params(tape, &self.params, trainable)
    }

    /// Logits of shape `[rows, 1]`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var, t: &[usize]) -> Result<Var> {
        let rows = tape.value(x).rows();
        if t.len() != rows {
            return Err(Error::LengthMismatch {
                what: "disc_forward rows",
                left: rows,
                right: t.len(),
            });
        }
        let temb = tape.constant(time_embedding(t, self.config.time_embed_dim));
        let input = tape.concat(&[x, temb])?;
        mlp(tape, input, params)
    }

    pub fn logits(&self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &params, xv, t)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_logit_per_row() {
        let d = DiscModel::init(DiscConfig::default(), 0).unwrap();
        let mut r = rng::stream(0, "x", 0);
        let x = rng::normal_tensor(&mut r, 7, 2);
        let out = d.logits(&x, &[500; 7]).unwrap();
        assert_eq!(out.shape(), &[7, 1]);
        assert!(out.is_finite());
    }
}
