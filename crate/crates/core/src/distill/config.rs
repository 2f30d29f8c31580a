use serde::{Deserialize, Serialize};

use crate::diffusion::validate_step_set;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    /// Student inputs are forward-noised ground truth.
    Forward,
    /// Student inputs come from the student's own stop-gradient trajectory.
    Backward,
}

/// Shift applied to the student timestep before the teacher renoises and denoises
/// the student's prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaTable {
    /// `gamma(t) = value` of the first piece with `t > above`, else `floor`.
    Piecewise {
        pieces: Vec<(usize, usize)>,
        floor: usize,
    },
    Identity,
}

impl Default for GammaTable {
    fn default() -> Self {
        GammaTable::Piecewise {
            pieces: vec![(900, 990), (500, 950)],
            floor: 200,
        }
    }
}

impl GammaTable {
    pub fn apply(&self, t: usize) -> usize {
        match self {
            GammaTable::Identity => t,
            GammaTable::Piecewise { pieces, floor } => pieces
                .iter()
                .find(|(above, _)| t > *above)
                .map_or(*floor, |(_, v)| *v),
        }
    }

    fn validate(&self, timesteps: usize) -> Result<()> {
        if let GammaTable::Piecewise { pieces, floor } = self {
            if pieces.windows(2).any(|w| w[1].0 >= w[0].0) {
                return Err(Error::Config(
                    "gamma thresholds must be strictly descending".into(),
                ));
            }
            if pieces
                .iter()
                .map(|p| p.1)
                .chain([*floor])
                .any(|v| v >= timesteps)
            {
                return Err(Error::Config(format!(
                    "gamma values must lie in [0, {}]",
                    timesteps - 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub mode: DistillMode,
    pub srl: bool,
    pub step_set: Vec<usize>,
    pub gamma: GammaTable,
    /// Teacher denoising steps per target.
    pub k: usize,
    pub cfg_weight: f64,
    pub adv_weight: f64,
    pub disc: bool,
    pub noise_correction: bool,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            mode: DistillMode::Backward,
            srl: true,
            step_set: vec![999, 750, 500],
            gamma: GammaTable::default(),
            k: 8,
            cfg_weight: 1.0,
            adv_weight: 0.1,
            disc: true,
            noise_correction: true,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, timesteps: usize) -> Result<()> {
        validate_step_set(&self.step_set, timesteps)?;
        self.gamma.validate(timesteps)?;
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.cfg_weight >= 0.0) || !(self.adv_weight >= 0.0) {
            return Err(Error::Config(
                "cfg_weight and adv_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillHyper {
    pub steps: usize,
    pub batch_size: usize,
    pub student_lr: f64,
    pub disc_lr: f64,
}

impl Default for DistillHyper {
    fn default() -> Self {
        DistillHyper {
            steps: 2000,
            batch_size: 128,
            student_lr: 1e-4,
            disc_lr: 1e-4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_table_intervals() {
        let g = GammaTable::default();
        assert_eq!(g.apply(999), 990);
        assert_eq!(g.apply(901), 990);
        assert_eq!(g.apply(900), 950);
        assert_eq!(g.apply(700), 950);
        assert_eq!(g.apply(501), 950);
        assert_eq!(g.apply(500), 200);
        assert_eq!(g.apply(300), 200);
        assert_eq!(g.apply(0), 200);
        assert_eq!(GammaTable::Identity.apply(321), 321);
    }

    #[test]
    fn validation() {
        let ok = DistillConfig::default();
        assert!(ok.validate(1000).is_ok());
        assert!(DistillConfig { k: 0, ..ok.clone() }.validate(1000).is_err());
        assert!(DistillConfig {
            step_set: vec![998, 500],
            ..ok.clone()
        }
        .validate(1000)
        .is_err());
        let bad_gamma = GammaTable::Piecewise {
            pieces: vec![(900, 1000)],
            floor: 200,
        };
        assert!(DistillConfig {
            gamma: bad_gamma,
            ..ok
        }
        .validate(1000)
        .is_err());
    }
}
