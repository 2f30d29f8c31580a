//! Flat run configuration: a JSON object plus `--key value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::artifacts::read_string;
use crate::data::{DatasetKind, MixtureSpec};
use crate::diffusion::{uniform_steps, validate_step_set, ScheduleKind, ScheduleParams};
use crate::distill::{DistillConfig, DistillHyper, DistillMode, GammaTable};
use crate::error::{Error, Result};
use crate::model::{DiscConfig, EpsConfig};
use crate::teacher::TeacherHyper;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleModel {
    Teacher,
    Student,
}

/// Every tunable of every command. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub output_dir: PathBuf,
    pub seed: u64,

    pub dataset: DatasetKind,
    pub radius: f64,
    pub mode_std: f64,
    pub n_train: usize,
    pub n_eval: usize,

    pub timesteps: usize,
    pub zero_terminal_snr: bool,

    pub width: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub cond_embed_dim: usize,

    pub teacher_steps: usize,
    pub teacher_batch: usize,
    pub teacher_lr: f64,
    pub cond_drop_prob: f64,
    /// Steps between resume snapshots during training.
    pub checkpoint_every: usize,
    /// Teacher checkpoint to distill from; defaults to the run's own.
    pub teacher_ckpt: Option<PathBuf>,

    pub distill_mode: DistillMode,
    pub srl: bool,
    pub student_steps: Vec<usize>,
    pub gamma: GammaTable,
    pub k: usize,
    pub cfg_weight: f64,
    pub adv_weight: f64,
    pub disc: bool,
    pub noise_correction: bool,
    pub distill_steps: usize,
    pub distill_batch: usize,
    pub student_lr: f64,
    pub disc_lr: f64,
    pub disc_width: usize,
    pub disc_depth: usize,

    pub sample_model: SampleModel,
    /// Empty: 25 uniform steps for the teacher, the distilled step set for a student.
    pub sample_steps: Vec<usize>,
    pub n_samples: usize,
    pub sample_seed: u64,

    pub sw_projections: usize,
    pub eval_seeds: Vec<u64>,
    pub ablate_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let teacher = TeacherHyper::default();
        let distill = DistillConfig::default();
        let dh = DistillHyper::default();
        let eps = EpsConfig::default();
        let disc = DiscConfig::default();
        RunConfig {
            run_id: "run".into(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
            dataset: DatasetKind::Ring8,
            radius: 2.0,
            mode_std: 0.35,
            n_train: 50_000,
            n_eval: 10_000,
            timesteps: 1000,
            zero_terminal_snr: true,
            width: eps.width,
            depth: eps.depth,
            time_embed_dim: eps.time_embed_dim,
            cond_embed_dim: eps.cond_embed_dim,
            teacher_steps: teacher.steps,
            teacher_batch: teacher.batch_size,
            teacher_lr: teacher.lr,
            cond_drop_prob: teacher.cond_drop_prob,
            checkpoint_every: 1000,
            teacher_ckpt: None,
            distill_mode: distill.mode,
            srl: distill.srl,
            student_steps: distill.step_set,
            gamma: distill.gamma,
            k: distill.k,
            cfg_weight: distill.cfg_weight,
            adv_weight: distill.adv_weight,
            disc: distill.disc,
            noise_correction: distill.noise_correction,
            distill_steps: dh.steps,
            distill_batch: dh.batch_size,
            student_lr: dh.student_lr,
            disc_lr: dh.disc_lr,
            disc_width: disc.width,
            disc_depth: disc.depth,
            sample_model: SampleModel::Teacher,
            sample_steps: Vec::new(),
            n_samples: 10_000,
            sample_seed: 1,
            sw_projections: 128,
            eval_seeds: vec![0],
            ablate_seeds: vec![0, 1, 2],
        }
    }
}

fn bad(key: &str, why: &str) -> Error {
    Error::Config(format!("{key}: {why}"))
}

impl RunConfig {
    /// Parse a JSON object, rejecting unknown keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        Self::from_value(value)
    }

    fn from_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load `path` (when given) and apply `--key value` overrides in order.
    ///
    /// Override values are read as JSON; a value that is not valid JSON, or any
    /// value for a string-typed key, is taken verbatim as a string.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "config file {} not found",
                        p.display()
                    )));
                }
                match serde_json::from_str::<Value>(&read_string(p)?) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => {
                        return Err(Error::Config("config file must hold a JSON object".into()))
                    }
                    Err(e) => {
                        return Err(Error::Config(format!(
                            "invalid JSON in {}: {e}",
                            p.display()
                        )))
                    }
                }
            }
            None => Map::new(),
        };
        let defaults = serde_json::to_value(RunConfig::default())?;
        for (key, raw) in overrides {
            let Some(default) = defaults.get(key) else {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            };
            let stringy = default.is_string() || (default.is_null() && key.ends_with("_ckpt"));
            let value = if stringy {
                Value::String(raw.clone())
            } else {
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()))
            };
            map.insert(key.clone(), value);
        }
        let cfg = Self::from_value(Value::Object(map))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty()
            || self.run_id.contains(['/', '\\'])
            || self.run_id.starts_with('.')
        {
            return Err(bad("run_id", "must be a plain non-empty name"));
        }
        for (key, v) in [
            ("n_train", self.n_train),
            ("n_eval", self.n_eval),
            ("width", self.width),
            ("depth", self.depth),
            ("time_embed_dim", self.time_embed_dim),
            ("cond_embed_dim", self.cond_embed_dim),
            ("teacher_batch", self.teacher_batch),
            ("checkpoint_every", self.checkpoint_every),
            ("distill_batch", self.distill_batch),
            ("disc_width", self.disc_width),
            ("disc_depth", self.disc_depth),
            ("n_samples", self.n_samples),
            ("sw_projections", self.sw_projections),
        ] {
            if v == 0 {
                return Err(bad(key, "must be positive"));
            }
        }
        for (key, v) in [
            ("teacher_lr", self.teacher_lr),
            ("student_lr", self.student_lr),
            ("disc_lr", self.disc_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(key, "must be a positive finite number"));
            }
        }
        if !(0.0..=1.0).contains(&self.cond_drop_prob) {
            return Err(bad("cond_drop_prob", "must lie in [0, 1]"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite())
            || !(self.mode_std > 0.0 && self.mode_std.is_finite())
        {
            return Err(bad("radius/mode_std", "must be positive"));
        }
        if self.eval_seeds.is_empty() {
            return Err(bad("eval_seeds", "must not be empty"));
        }
        if self.ablate_seeds.is_empty() {
            return Err(bad("ablate_seeds", "must not be empty"));
        }
        let sched = self.schedule();
        crate::diffusion::NoiseSchedule::build(sched)
            .map_err(|e| bad("timesteps", &e.to_string()))?;
        validate_step_set(&self.student_steps, self.timesteps)
            .map_err(|e| bad("student_steps", &e.to_string()))?;
        if !self.sample_steps.is_empty() {
            validate_step_set(&self.sample_steps, self.timesteps)
                .map_err(|e| bad("sample_steps", &e.to_string()))?;
        }
        self.distill_config(self.seed)
            .validate(self.timesteps)
            .map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => Error::Config(other.to_string()),
            })?;
        self.spec().map_err(|e| bad("dataset", &e.to_string()))?;
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn spec(&self) -> Result<MixtureSpec> {
        MixtureSpec::from_kind(self.dataset, self.radius, self.mode_std)
    }

    pub fn schedule(&self) -> ScheduleParams {
        ScheduleParams {
            timesteps: self.timesteps,
            kind: ScheduleKind::Cosine,
            zero_terminal_snr: self.zero_terminal_snr,
        }
    }

    pub fn eps_config(&self, n_classes: usize) -> EpsConfig {
        EpsConfig {
            sample_dim: 2,
            n_classes,
            width: self.width,
            depth: self.depth,
            time_embed_dim: self.time_embed_dim,
            cond_embed_dim: self.cond_embed_dim,
        }
    }

    pub fn disc_config(&self) -> DiscConfig {
        DiscConfig {
            sample_dim: 2,
            width: self.disc_width,
            depth: self.disc_depth,
            time_embed_dim: self.time_embed_dim,
        }
    }

    pub fn teacher_hyper(&self) -> TeacherHyper {
        TeacherHyper {
            steps: self.teacher_steps,
            batch_size: self.teacher_batch,
            lr: self.teacher_lr,
            cond_drop_prob: self.cond_drop_prob,
        }
    }

    pub fn distill_config(&self, seed: u64) -> DistillConfig {
        DistillConfig {
            mode: self.distill_mode,
            srl: self.srl,
            step_set: self.student_steps.clone(),
            gamma: self.gamma.clone(),
            k: self.k,
            cfg_weight: self.cfg_weight,
            adv_weight: self.adv_weight,
            disc: self.disc,
            noise_correction: self.noise_correction,
            seed,
        }
    }

    pub fn distill_hyper(&self) -> DistillHyper {
        DistillHyper {
            steps: self.distill_steps,
            batch_size: self.distill_batch,
            student_lr: self.student_lr,
            disc_lr: self.disc_lr,
        }
    }

    /// Step set used for teacher baselines with `n` steps.
    pub fn teacher_steps_for(&self, n: usize) -> Vec<usize> {
        uniform_steps(self.timesteps, n)
    }
}
