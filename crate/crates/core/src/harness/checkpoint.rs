//! JSON checkpoints for teacher, student and discriminator weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts::{read_string, to_json, write_atomic};
use crate::autodiff::Tensor;
use crate::diffusion::ScheduleParams;
use crate::error::{Error, Result};
use crate::model::{DiscConfig, DiscModel, EpsConfig, EpsModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Teacher,
    Student,
    Discriminator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Eps(EpsConfig),
    Disc(DiscConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Sampler settings a student was distilled for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSampling {
    pub step_set: Vec<usize>,
    pub noise_correction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub architecture: Architecture,
    pub schedule: ScheduleParams,
    pub step: usize,
    /// Seeds that produced this checkpoint, outermost stage first.
    pub seed_lineage: Vec<(String, u64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<StudentSampling>,
    pub layers: Vec<Layer>,
}

fn layers(params: &[Tensor]) -> Vec<Layer> {
    params
        .iter()
        .map(|p| Layer {
            shape: p.shape().to_vec(),
            data: p.data().to_vec(),
        })
        .collect()
}

fn tensors(layers: &[Layer]) -> Result<Vec<Tensor>> {
    layers
        .iter()
        .map(|l| Tensor::new(l.shape.clone(), l.data.clone()))
        .collect()
}

impl Checkpoint {
    pub fn from_eps(
        kind: ModelKind,
        model: &EpsModel,
        step: usize,
        seed_lineage: Vec<(String, u64)>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind,
            architecture: Architecture::Eps(model.config().clone()),
            schedule: model.schedule().params(),
            step,
            seed_lineage,
            sampling: None,
            layers: layers(model.params()),
        }
    }

    pub fn from_disc(
        model: &DiscModel,
        schedule: ScheduleParams,
        step: usize,
        seed_lineage: Vec<(String, u64)>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind: ModelKind::Discriminator,
            architecture: Architecture::Disc(model.config().clone()),
            schedule,
            step,
            seed_lineage,
            sampling: None,
            layers: layers(model.params()),
        }
    }

    pub fn eps_model(&self) -> Result<EpsModel> {
        match &self.architecture {
            Architecture::Eps(c) if self.kind != ModelKind::Discriminator => {
                EpsModel::from_params(c.clone(), self.schedule, tensors(&self.layers)?)
            }
            _ => Err(Error::Checkpoint(format!(
                "{:?} checkpoint does not hold a noise predictor",
                self.kind
            ))),
        }
    }

    pub fn disc_model(&self) -> Result<DiscModel> {
        match &self.architecture {
            Architecture::Disc(c) if self.kind == ModelKind::Discriminator => {
                DiscModel::from_params(c.clone(), tensors(&self.layers)?)
            }
            _ => Err(Error::Checkpoint(format!(
                "{:?} checkpoint does not hold a discriminator",
                self.kind
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    /// Parse, checking the format version before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint("missing format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(raw)?;
        for l in &ckpt.layers {
            if l.shape.iter().product::<usize>() != l.data.len() {
                return Err(Error::Checkpoint(format!(
                    "layer shape {:?} holds {} values",
                    l.shape,
                    l.data.len()
                )));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        Self::from_json(&read_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn teacher() -> EpsModel {
        let config = EpsConfig {
            width: 6,
            depth: 2,
            time_embed_dim: 4,
            cond_embed_dim: 3,
            ..Default::default()
        };
        EpsModel::init(config, ScheduleParams::default(), 11).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ckpt = Checkpoint::from_eps(
            ModelKind::Teacher,
            &teacher(),
            42,
            vec![("teacher".into(), 7)],
        );
        let text = ckpt.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.eps_model().unwrap(), teacher());

        let disc = DiscModel::init(
            DiscConfig {
                width: 5,
                depth: 1,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let ckpt = Checkpoint::from_disc(&disc, ScheduleParams::default(), 9, vec![]);
        let text = ckpt.to_json().unwrap();
        assert_eq!(
            Checkpoint::from_json(&text).unwrap().to_json().unwrap(),
            text
        );
        assert_eq!(
            Checkpoint::from_json(&text).unwrap().disc_model().unwrap(),
            disc
        );
    }

    #[test]
    fn version_mismatch_is_fatal() {
        let ckpt = Checkpoint::from_eps(ModelKind::Student, &teacher(), 0, vec![]);
        let text = ckpt
            .to_json()
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(Error::VersionMismatch {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn corrupt_layers_are_rejected() {
        let mut ckpt = Checkpoint::from_eps(ModelKind::Teacher, &teacher(), 0, vec![]);
        ckpt.layers[1].data.pop();
        assert!(Checkpoint::from_json(&ckpt.to_json().unwrap()).is_err());
        let ckpt = Checkpoint::from_eps(ModelKind::Teacher, &teacher(), 0, vec![]);
        assert!(ckpt.disc_model().is_err());
    }
}
