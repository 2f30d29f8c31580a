use serde::{Deserialize, Serialize};

use super::{bind_params, init_dense, mlp, time_embedding, Condition};
use crate::autodiff::{Tape, Tensor, Var};
use crate::diffusion::{EpsPredictor, NoiseSchedule, ScheduleParams};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpsConfig {
    pub sample_dim: usize,
    pub n_classes: usize,
    pub width: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub time_embed_dim: usize,
    pub cond_embed_dim: usize,
}

impl Default for EpsConfig {
    fn default() -> Self {
        EpsConfig {
            sample_dim: 2,
            n_classes: 8,
            width: 64,
            depth: 3,
            time_embed_dim: 32,
            cond_embed_dim: 16,
        }
    }
}

impl EpsConfig {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.sample_dim == 0 || self.n_classes == 0 {
            return Err(Error::InvalidDims(format!(
                "sample_dim={} n_classes={} width={} depth={}",
                self.sample_dim, self.n_classes, self.width, self.depth
            )));
        }
        Ok(())
    }

    /// Shapes of the flat parameter list: condition table, then (weight, bias) per layer.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![vec![self.n_classes + 1, self.cond_embed_dim]];
        let mut fan_in = self.sample_dim + self.time_embed_dim + self.cond_embed_dim;
        for _ in 0..self.depth {
            shapes.push(vec![fan_in, self.width]);
            shapes.push(vec![self.width]);
            fan_in = self.width;
        }
        shapes.push(vec![fan_in, self.sample_dim]);
        shapes.push(vec![self.sample_dim]);
        shapes
    }
}

/// Conditional noise predictor.
///
/// The network body `F` is an MLP over `concat(x, time_embed(t), cond_embed(c))`;
/// the prediction is `eps_hat = sigma_t x + alpha_t F`. The skip term keeps the
/// implied `x0_hat = alpha_t x - sigma_t F` well conditioned near `t = T`,
/// where `alpha_t` is tiny and a bare MLP would have to reproduce `x` to
/// within `alpha_t`. The null condition uses the last row of the table.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsModel {
    config: EpsConfig,
    schedule: NoiseSchedule,
    params: Vec<Tensor>,
}

impl EpsModel {
    pub fn init(config: EpsConfig, schedule: ScheduleParams, seed: u64) -> Result<Self> {
        config.validate()?;
        let schedule = NoiseSchedule::build(schedule)?;
        let mut r = rng::stream(seed, "init-eps", 0);
        let table = (0..(config.n_classes + 1) * config.cond_embed_dim)
            .map(|_| rng::uniform(&mut r, -1.0, 1.0))
            .collect();
        let mut params = vec![Tensor::from_vec(
            vec![config.n_classes + 1, config.cond_embed_dim],
            table,
        )];
        for shape in config.param_shapes().iter().skip(1).step_by(2) {
            let (w, b) = init_dense(&mut r, shape[0], shape[1]);
            params.push(w);
            params.push(b);
        }
        Ok(EpsModel {
            config,
            schedule,
            params,
        })
    }

    /// Rebuild from stored parameters; shapes must match `config`.
    pub fn from_params(
        config: EpsConfig,
        schedule: ScheduleParams,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        let found: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
        if expected != found {
            return Err(Error::ShapeMismatch {
                op: "eps_model",
                shapes: found,
            });
        }
        Ok(EpsModel {
            config,
            schedule: NoiseSchedule::build(schedule)?,
            params,
        })
    }

    pub fn config(&self) -> &EpsConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn null_index(&self) -> usize {
        self.config.n_classes
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        bind_params(tape, &self.params, trainable)
    }

    fn cond_rows(&self, cond: &[Condition]) -> Result<Vec<usize>> {
        cond.iter()
            .map(|c| match *c {
                Condition::Class(k) if k < self.config.n_classes => Ok(k),
                Condition::Class(k) => Err(Error::UnknownClass {
                    class: k,
                    n_classes: self.config.n_classes,
                }),
                Condition::Null => Ok(self.config.n_classes),
            })
            .collect()
    }

    /// Record `eps_hat(x, t, cond)` on `tape` using `params` from [`EpsModel::bind`].
    /// `t` and `cond` are per row.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        t: &[usize],
        cond: &[Condition],
    ) -> Result<Var> {
        let rows = tape.value(x).rows();
        if t.len() != rows || cond.len() != rows {
            return Err(Error::LengthMismatch {
                what: "eps_forward rows",
                left: rows,
                right: t.len().min(cond.len()),
            });
        }
        if tape.value(x).cols() != self.config.sample_dim {
            return Err(Error::ShapeMismatch {
                op: "eps_forward",
                shapes: vec![tape.value(x).shape().to_vec()],
            });
        }
        let t_max = self.schedule.timesteps();
        if let Some(&bad) = t.iter().find(|&&ti| ti >= t_max) {
            return Err(Error::TimestepOutOfRange {
                t: bad,
                max: t_max - 1,
            });
        }
        let idx = self.cond_rows(cond)?;
        let temb = tape.constant(time_embedding(t, self.config.time_embed_dim));
        let cemb = tape.gather(params[0], idx)?;
        let input = tape.concat(&[x, temb, cemb])?;
        let body = mlp(tape, input, &params[1..])?;
        let skip = tape.scale_rows(x, t.iter().map(|&ti| self.schedule.sigma(ti)).collect())?;
        let out = tape.scale_rows(body, t.iter().map(|&ti| self.schedule.alpha(ti)).collect())?;
        tape.add(skip, out)
    }

    /// Gradient-free prediction with a per-row timestep.
    pub fn predict_rows(&self, x: &Tensor, t: &[usize], cond: &[Condition]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &params, xv, t, cond)?;
        Ok(tape.value(out).clone())
    }
}

impl EpsPredictor for EpsModel {
    fn sample_dim(&self) -> usize {
        self.config.sample_dim
    }

    fn predict_eps(&self, x: &Tensor, t: usize, cond: &[Condition]) -> Result<Tensor> {
        self.predict_rows(x, &vec![t; x.rows()], cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(seed: u64) -> EpsModel {
        EpsModel::init(
            EpsConfig {
                width: 16,
                depth: 2,
                ..Default::default()
            },
            ScheduleParams::default(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(model(1), model(1));
        assert_ne!(model(1).params(), model(2).params());
    }

    #[test]
    fn output_shape_and_finite() {
        let m = model(3);
        let mut r = rng::stream(0, "x", 0);
        let x = rng::normal_tensor(&mut r, 5, 2);
        let cond = [
            Condition::Class(0),
            Condition::Class(7),
            Condition::Null,
            Condition::Class(3),
            Condition::Null,
        ];
        let eps = m.predict_rows(&x, &[0, 10, 500, 998, 999], &cond).unwrap();
        assert_eq!(eps.shape(), x.shape());
        assert!(eps.is_finite());
    }

    #[test]
    fn rejects_unknown_class_and_bad_dims() {
        let m = model(3);
        let x = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            m.predict_eps(&x, 10, &[Condition::Class(8)]),
            Err(Error::UnknownClass { class: 8, .. })
        ));
        assert!(m.predict_eps(&x, 1000, &[Condition::Null]).is_err());
        let bad = EpsConfig {
            width: 0,
            ..Default::default()
        };
        assert!(matches!(
            EpsModel::init(bad, ScheduleParams::default(), 0),
            Err(Error::InvalidDims(_))
        ));
    }

    #[test]
    fn null_row_is_reserved() {
        let m = model(4);
        assert_eq!(m.params()[0].rows(), m.config().n_classes + 1);
        assert_eq!(m.null_index(), 8);
    }
}
