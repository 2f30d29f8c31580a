//! The five CLI commands. Each one is resumable and idempotent per run id.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{fmt_f64, points_csv, read_string, scatter_svg, to_json, write_atomic, Csv};
use super::checkpoint::{Checkpoint, ModelKind, StudentSampling};
use super::config::{RunConfig, SampleModel};
use crate::autodiff::AdamState;
use crate::data::{gen_dataset, Dataset, MixtureSpec};
use crate::diffusion::{sample, EpsPredictor, NoiseSchedule, SamplerConfig};
use crate::distill::{distill_from, DistillConfig, DistillMetrics, DistillMode, DistillState};
use crate::error::{Error, Result};
use crate::metrics::{
    class_conditions, condition_fidelity, draw_labels, first_step_bias, mode_coverage,
    sliced_wasserstein,
};
use crate::model::EpsModel;
use crate::teacher::{train_teacher_from, TeacherState};

/// Files a command produced and a short human-readable summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub written: Vec<PathBuf>,
    /// True when every artifact already existed and nothing was recomputed.
    pub up_to_date: bool,
    pub summary: Vec<String>,
}

/// Offset separating the held-out reference set from the training set.
const EVAL_DATA_OFFSET: u64 = 0x5EED_0000_0000;

pub fn train_data(cfg: &RunConfig, spec: &MixtureSpec) -> Result<Dataset> {
    gen_dataset(spec, cfg.n_train, cfg.seed)
}

pub fn eval_data(cfg: &RunConfig, spec: &MixtureSpec) -> Result<Dataset> {
    gen_dataset(spec, cfg.n_eval, cfg.seed.wrapping_add(EVAL_DATA_OFFSET))
}

const TEACHER_KEYS: &[&str] = &[
    "seed",
    "dataset",
    "radius",
    "mode_std",
    "n_train",
    "timesteps",
    "zero_terminal_snr",
    "width",
    "depth",
    "time_embed_dim",
    "cond_embed_dim",
    "teacher_steps",
    "teacher_batch",
    "teacher_lr",
    "cond_drop_prob",
];
const DISTILL_KEYS: &[&str] = &[
    "teacher_ckpt",
    "distill_mode",
    "srl",
    "student_steps",
    "gamma",
    "k",
    "cfg_weight",
    "adv_weight",
    "disc",
    "noise_correction",
    "distill_steps",
    "distill_batch",
    "student_lr",
    "disc_lr",
    "disc_width",
    "disc_depth",
];
const ABLATE_KEYS: &[&str] = &["n_eval", "sw_projections", "ablate_seeds"];

/// Keys whose values determine a command's training artifacts. Sampling and
/// evaluation are recomputed on every call and are not guarded.
fn guarded_keys(command: &str) -> Vec<&'static str> {
    match command {
        "train-teacher" => TEACHER_KEYS.to_vec(),
        "distill" => [TEACHER_KEYS, DISTILL_KEYS].concat(),
        "ablate" => [TEACHER_KEYS, DISTILL_KEYS, ABLATE_KEYS].concat(),
        _ => Vec::new(),
    }
}

/// Validate `cfg`, create the run directory and write the resolved config for
/// `command`. Resuming a training command under changed settings is refused.
pub fn prepare(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let snapshot = dir.join(format!("config.{command}.json"));
    let text = to_json(cfg)?;
    if snapshot.exists() {
        let old: serde_json::Value = serde_json::from_str(&read_string(&snapshot)?)?;
        let new = serde_json::to_value(cfg)?;
        let changed: Vec<&str> = guarded_keys(command)
            .into_iter()
            .filter(|k| old.get(*k) != new.get(*k))
            .collect();
        if !changed.is_empty() {
            return Err(Error::PartialRun(format!(
                "run '{}' already holds {command} results for different settings ({}); pick a new run_id",
                cfg.run_id,
                changed.join(", ")
            )));
        }
    }
    write_atomic(&snapshot, text.as_bytes())?;
    Ok(dir)
}

#[derive(Serialize, Deserialize)]
struct TeacherResume {
    checkpoint: Checkpoint,
    adam: AdamState,
    losses: Vec<f64>,
}

pub fn cmd_train_teacher(cfg: &RunConfig) -> Result<Report> {
    let dir = prepare(cfg, "train-teacher")?;
    let final_path = dir.join("teacher.ckpt");
    let loss_path = dir.join("teacher_loss.csv");
    let dataset_path = dir.join("dataset.csv");
    let mut report = Report {
        written: vec![final_path.clone(), loss_path.clone(), dataset_path.clone()],
        ..Default::default()
    };
    if final_path.exists() {
        let ckpt = Checkpoint::load(&final_path)?;
        report.up_to_date = true;
        report
            .summary
            .push(format!("teacher already trained ({} steps)", ckpt.step));
        return Ok(report);
    }
    let spec = cfg.spec()?;
    let data = train_data(cfg, &spec)?;
    if !dataset_path.exists() {
        points_csv(&data.samples, &data.labels).write(&dataset_path)?;
    }
    let hyper = cfg.teacher_hyper();
    let lineage = vec![("teacher".to_string(), cfg.seed)];
    let resume_path = dir.join("teacher.resume.json");
    let (mut state, mut losses) = if resume_path.exists() {
        let r: TeacherResume = serde_json::from_str(&read_string(&resume_path)?)?;
        let model = r.checkpoint.eps_model()?;
        report
            .summary
            .push(format!("resuming teacher at step {}", r.checkpoint.step));
        (
            TeacherState {
                model,
                adam: r.adam,
                step: r.checkpoint.step,
            },
            r.losses,
        )
    } else {
        (
            TeacherState::init(
                cfg.eps_config(spec.n_classes()),
                cfg.schedule(),
                &hyper,
                cfg.seed,
            )?,
            Vec::new(),
        )
    };
    if losses.len() != state.step {
        return Err(Error::PartialRun(format!(
            "{} is inconsistent; delete it to restart",
            resume_path.display()
        )));
    }
    train_teacher_from(&mut state, &data, &hyper, cfg.seed, |step, loss, s| {
        losses.push(loss);
        if (step + 1) % cfg.checkpoint_every == 0 && step + 1 < hyper.steps {
            let r = TeacherResume {
                checkpoint: Checkpoint::from_eps(
                    ModelKind::Teacher,
                    &s.model,
                    s.step,
                    lineage.clone(),
                ),
                adam: s.adam.clone(),
                losses: losses.clone(),
            };
            write_atomic(&resume_path, serde_json::to_string(&r)?.as_bytes())?;
        }
        Ok(())
    })?;
    let mut csv = Csv::new(&["step", "loss"]);
    for (i, l) in losses.iter().enumerate() {
        csv.row(&[i.to_string(), fmt_f64(*l)]);
    }
    csv.write(&loss_path)?;
    Checkpoint::from_eps(ModelKind::Teacher, &state.model, state.step, lineage)
        .save(&final_path)?;
    remove_if_exists(&resume_path)?;
    let tail = &losses[losses.len().saturating_sub(100)..];
    let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    report.summary.push(format!(
        "teacher trained for {} steps; final loss (last 100 mean) {mean:.4}",
        state.step
    ));
    Ok(report)
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Teacher checkpoint named by the config, or the run's own.
pub fn load_teacher(cfg: &RunConfig) -> Result<(EpsModel, Checkpoint)> {
    let path = cfg
        .teacher_ckpt
        .clone()
        .unwrap_or_else(|| cfg.run_dir().join("teacher.ckpt"));
    if !path.exists() {
        let resume = path.with_file_name("teacher.resume.json");
        if resume.exists() {
            return Err(Error::PartialRun(format!(
                "teacher run at {} is incomplete; rerun train-teacher to finish it",
                resume.display()
            )));
        }
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.kind != ModelKind::Teacher {
        return Err(Error::Checkpoint(format!(
            "{} is not a teacher checkpoint",
            path.display()
        )));
    }
    Ok((ckpt.eps_model()?, ckpt))
}

#[derive(Serialize, Deserialize)]
struct DistillResume {
    student: Checkpoint,
    disc: Checkpoint,
    student_adam: AdamState,
    disc_adam: AdamState,
    log: Vec<DistillMetrics>,
}

fn metrics_csv(log: &[DistillMetrics]) -> Csv {
    let mut csv = Csv::new(&["step", "t", "recon_loss", "g_loss", "d_loss"]);
    for m in log {
        csv.row(&[
            m.step.to_string(),
            m.t.to_string(),
            fmt_f64(m.recon_loss),
            fmt_f64(m.g_loss),
            fmt_f64(m.d_loss),
        ]);
    }
    csv
}

/// Distill into `dir` (student.ckpt + distill_metrics.csv), resuming from a
/// snapshot when present and returning the finished student directly when it exists.
pub fn distill_into(
    dir: &Path,
    cfg: &RunConfig,
    teacher: &EpsModel,
    teacher_ckpt: &Checkpoint,
    data: &Dataset,
    dcfg: &DistillConfig,
) -> Result<(EpsModel, bool)> {
    let final_path = dir.join("student.ckpt");
    if final_path.exists() {
        return Ok((Checkpoint::load(&final_path)?.eps_model()?, true));
    }
    let hyper = cfg.distill_hyper();
    let sched = teacher.schedule().params();
    let mut lineage = teacher_ckpt.seed_lineage.clone();
    lineage.push(("distill".to_string(), dcfg.seed));
    let resume_path = dir.join("distill.resume.json");
    let (mut state, mut log) = if resume_path.exists() {
        let r: DistillResume = serde_json::from_str(&read_string(&resume_path)?)?;
        let state = DistillState {
            student: r.student.eps_model()?,
            student_adam: r.student_adam,
            disc: r.disc.disc_model()?,
            disc_adam: r.disc_adam,
            step: r.student.step,
        };
        (state, r.log)
    } else {
        (
            DistillState::init(teacher, cfg.disc_config(), &hyper, dcfg.seed)?,
            Vec::new(),
        )
    };
    if log.len() != state.step {
        return Err(Error::PartialRun(format!(
            "{} is inconsistent; delete it to restart",
            resume_path.display()
        )));
    }
    distill_from(&mut state, teacher, data, dcfg, &hyper, |m, s| {
        log.push(*m);
        if s.step % cfg.checkpoint_every == 0 && s.step < hyper.steps {
            let r = DistillResume {
                student: Checkpoint::from_eps(
                    ModelKind::Student,
                    &s.student,
                    s.step,
                    lineage.clone(),
                ),
                disc: Checkpoint::from_disc(&s.disc, sched, s.step, lineage.clone()),
                student_adam: s.student_adam.clone(),
                disc_adam: s.disc_adam.clone(),
                log: log.clone(),
            };
            write_atomic(&resume_path, serde_json::to_string(&r)?.as_bytes())?;
        }
        Ok(())
    })?;
    metrics_csv(&log).write(&dir.join("distill_metrics.csv"))?;
    let mut ckpt = Checkpoint::from_eps(ModelKind::Student, &state.student, state.step, lineage);
    ckpt.sampling = Some(StudentSampling {
        step_set: dcfg.step_set.clone(),
        noise_correction: dcfg.noise_correction,
    });
    ckpt.save(&final_path)?;
    remove_if_exists(&resume_path)?;
    Ok((state.student, false))
}

pub fn cmd_distill(cfg: &RunConfig) -> Result<Report> {
    let dir = prepare(cfg, "distill")?;
    let (teacher, tckpt) = load_teacher(cfg)?;
    let spec = cfg.spec()?;
    let data = train_data(cfg, &spec)?;
    let dcfg = cfg.distill_config(cfg.seed);
    let (_, up_to_date) = distill_into(&dir, cfg, &teacher, &tckpt, &data, &dcfg)?;
    let summary = vec![if up_to_date {
        "student already distilled".to_string()
    } else {
        format!(
            "student distilled for {} steps on step set {:?}",
            cfg.distill_steps, dcfg.step_set
        )
    }];
    Ok(Report {
        written: vec![dir.join("student.ckpt"), dir.join("distill_metrics.csv")],
        up_to_date,
        summary,
    })
}

/// Quality of one sampler configuration against a held-out reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleQuality {
    pub sw: f64,
    pub fidelity: f64,
    pub recall: f64,
}

/// Sample `reference.rows()` points with labels drawn from the mixture and score them.
pub fn evaluate<P: EpsPredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    spec: &MixtureSpec,
    reference: &Dataset,
    n_proj: usize,
) -> Result<SampleQuality> {
    let n = reference.samples.rows();
    let labels = draw_labels(spec, n, sampler.seed);
    let out = sample(model, sched, sampler, &class_conditions(&labels))?;
    Ok(SampleQuality {
        sw: sliced_wasserstein(&out.samples, &reference.samples, n_proj, sampler.seed)?,
        fidelity: condition_fidelity(&out.samples, &labels, spec)?,
        recall: mode_coverage(&out.samples, spec).recall,
    })
}

fn student_sampling(ckpt: &Checkpoint) -> Result<StudentSampling> {
    ckpt.sampling
        .clone()
        .ok_or_else(|| Error::Checkpoint("student checkpoint lacks its step set".into()))
}

pub fn cmd_sample(cfg: &RunConfig) -> Result<Report> {
    let dir = prepare(cfg, "sample")?;
    let spec = cfg.spec()?;
    let (model, steps, nc, w, name) = match cfg.sample_model {
        SampleModel::Teacher => {
            let (m, _) = load_teacher(cfg)?;
            let steps = if cfg.sample_steps.is_empty() {
                cfg.teacher_steps_for(25)
            } else {
                cfg.sample_steps.clone()
            };
            (m, steps, false, cfg.cfg_weight, "teacher")
        }
        SampleModel::Student => {
            let path = dir.join("student.ckpt");
            let ckpt = Checkpoint::load(&path)?;
            let s = student_sampling(&ckpt)?;
            let steps = if cfg.sample_steps.is_empty() {
                s.step_set
            } else {
                cfg.sample_steps.clone()
            };
            (ckpt.eps_model()?, steps, s.noise_correction, 1.0, "student")
        }
    };
    let sched = model.schedule().clone();
    let labels = draw_labels(&spec, cfg.n_samples, cfg.sample_seed);
    let sampler = SamplerConfig {
        step_set: steps,
        cfg_weight: w,
        noise_correction: nc,
        seed: cfg.sample_seed,
    };
    let out = sample(&model, &sched, &sampler, &class_conditions(&labels))?;
    let csv_path = dir.join(format!("samples_{name}.csv"));
    let svg_path = dir.join(format!("samples_{name}.svg"));
    points_csv(&out.samples, &labels).write(&csv_path)?;
    write_atomic(&svg_path, scatter_svg(&out.samples, &labels).as_bytes())?;
    Ok(Report {
        written: vec![csv_path, svg_path],
        up_to_date: false,
        summary: vec![format!(
            "{} {name} samples over {} steps",
            cfg.n_samples,
            sampler.step_set.len()
        )],
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Report> {
    let dir = prepare(cfg, "eval")?;
    let spec = cfg.spec()?;
    let reference = eval_data(cfg, &spec)?;
    let (teacher, _) = load_teacher(cfg)?;
    let sched = teacher.schedule().clone();
    let student_path = dir.join("student.ckpt");
    let student = if student_path.exists() {
        let ckpt = Checkpoint::load(&student_path)?;
        Some((ckpt.eps_model()?, student_sampling(&ckpt)?))
    } else {
        None
    };
    let mut csv = Csv::new(&["run_id", "metric", "value", "seed"]);
    let mut summary = Vec::new();
    let mut push = |name: &str, q: SampleQuality, seed: u64| {
        for (metric, v) in [
            ("sw", q.sw),
            ("condition_fidelity", q.fidelity),
            ("mode_recall", q.recall),
        ] {
            csv.row(&[
                cfg.run_id.clone(),
                format!("{name}.{metric}"),
                fmt_f64(v),
                seed.to_string(),
            ]);
        }
        summary.push(format!(
            "{name} seed {seed}: sw {:.4} fidelity {:.3} recall {:.3}",
            q.sw, q.fidelity, q.recall
        ));
    };
    for &seed in &cfg.eval_seeds {
        for n in [25, 3] {
            let sampler = SamplerConfig {
                step_set: cfg.teacher_steps_for(n),
                cfg_weight: cfg.cfg_weight,
                noise_correction: false,
                seed,
            };
            push(
                &format!("teacher_{n}step"),
                evaluate(
                    &teacher,
                    &sched,
                    &sampler,
                    &spec,
                    &reference,
                    cfg.sw_projections,
                )?,
                seed,
            );
        }
        if let Some((model, s)) = &student {
            let sampler = SamplerConfig {
                step_set: s.step_set.clone(),
                cfg_weight: 1.0,
                noise_correction: s.noise_correction,
                seed,
            };
            let name = format!("student_{}step", s.step_set.len());
            push(
                &name,
                evaluate(
                    model,
                    &sched,
                    &sampler,
                    &spec,
                    &reference,
                    cfg.sw_projections,
                )?,
                seed,
            );
        }
    }
    let path = dir.join("eval.csv");
    csv.write(&path)?;
    Ok(Report {
        written: vec![path],
        up_to_date: false,
        summary,
    })
}

/// Rows of the ablation table, in output order.
pub const ABLATION_VARIANTS: [&str; 5] = [
    "full",
    "no_noise_correction",
    "no_discriminator",
    "no_backward",
    "no_srl",
];

fn variant_config(base: &DistillConfig, variant: &str) -> DistillConfig {
    let mut c = base.clone();
    match variant {
        "no_noise_correction" => c.noise_correction = false,
        "no_discriminator" => c.disc = false,
        "no_backward" => c.mode = DistillMode::Forward,
        "no_srl" => c.srl = false,
        _ => {}
    }
    c
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One evaluated cell of the ablation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub row: String,
    pub seed: u64,
    pub steps: usize,
    pub quality: SampleQuality,
    pub var_ratio_corrected: f64,
    pub var_ratio_plain: f64,
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<Report> {
    let dir = prepare(cfg, "ablate")?;
    let (teacher, tckpt) = load_teacher(cfg)?;
    let sched = teacher.schedule().clone();
    let spec = cfg.spec()?;
    let data = train_data(cfg, &spec)?;
    let reference = eval_data(cfg, &spec)?;
    let mut cells = Vec::new();
    let mut resumed = 0;
    for &seed in &cfg.ablate_seeds {
        for n in [25, 3] {
            let sampler = SamplerConfig {
                step_set: cfg.teacher_steps_for(n),
                cfg_weight: cfg.cfg_weight,
                noise_correction: false,
                seed,
            };
            let quality = evaluate(
                &teacher,
                &sched,
                &sampler,
                &spec,
                &reference,
                cfg.sw_projections,
            )?;
            cells.push(AblationCell {
                row: format!("teacher_{n}step"),
                seed,
                steps: n,
                quality,
                var_ratio_corrected: f64::NAN,
                var_ratio_plain: f64::NAN,
            });
        }
        let base = cfg.distill_config(seed);
        for variant in ABLATION_VARIANTS {
            let dcfg = variant_config(&base, variant);
            let sub = dir.join("ablate").join(variant).join(format!("seed{seed}"));
            let (student, done) = distill_into(&sub, cfg, &teacher, &tckpt, &data, &dcfg)?;
            resumed += usize::from(done);
            let sampler = SamplerConfig {
                step_set: dcfg.step_set.clone(),
                cfg_weight: 1.0,
                noise_correction: dcfg.noise_correction,
                seed,
            };
            let quality = evaluate(
                &student,
                &sched,
                &sampler,
                &spec,
                &reference,
                cfg.sw_projections,
            )?;
            let bias = first_step_bias(
                &student,
                &sched,
                &dcfg.step_set,
                1.0,
                &spec,
                &reference.samples,
                cfg.n_eval,
                seed,
            )?;
            cells.push(AblationCell {
                row: variant.to_string(),
                seed,
                steps: dcfg.step_set.len(),
                quality,
                var_ratio_corrected: bias.var_ratio_corrected,
                var_ratio_plain: bias.var_ratio_plain,
            });
        }
    }

    let mut runs = Csv::new(&[
        "row",
        "seed",
        "steps",
        "sw",
        "condition_fidelity",
        "mode_recall",
        "var_ratio_corrected",
        "var_ratio_plain",
    ]);
    for c in &cells {
        runs.row(&[
            c.row.clone(),
            c.seed.to_string(),
            c.steps.to_string(),
            fmt_f64(c.quality.sw),
            fmt_f64(c.quality.fidelity),
            fmt_f64(c.quality.recall),
            fmt_f64(c.var_ratio_corrected),
            fmt_f64(c.var_ratio_plain),
        ]);
    }
    let mut table = Csv::new(&[
        "row",
        "steps",
        "sw",
        "condition_fidelity",
        "mode_recall",
        "seeds",
    ]);
    let mut summary = Vec::new();
    let rows = ["teacher_25step", "teacher_3step"]
        .into_iter()
        .chain(ABLATION_VARIANTS);
    for row in rows {
        let mine: Vec<&AblationCell> = cells.iter().filter(|c| c.row == row).collect();
        let med =
            |f: fn(&AblationCell) -> f64| median(&mine.iter().map(|c| f(c)).collect::<Vec<_>>());
        let (sw, fid, rec) = (
            med(|c| c.quality.sw),
            med(|c| c.quality.fidelity),
            med(|c| c.quality.recall),
        );
        table.row(&[
            row.to_string(),
            mine[0].steps.to_string(),
            fmt_f64(sw),
            fmt_f64(fid),
            fmt_f64(rec),
            mine.len().to_string(),
        ]);
        summary.push(format!(
            "{row:<20} sw {sw:.4} fidelity {fid:.3} recall {rec:.3}"
        ));
    }
    let table_path = dir.join("ablation.csv");
    let runs_path = dir.join("ablation_runs.csv");
    table.write(&table_path)?;
    runs.write(&runs_path)?;
    let total = cfg.ablate_seeds.len() * ABLATION_VARIANTS.len();
    Ok(Report {
        written: vec![table_path, runs_path],
        up_to_date: resumed == total,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn variants_flip_one_switch_each() {
        let base = DistillConfig::default();
        let diffs: Vec<usize> = ABLATION_VARIANTS
            .iter()
            .map(|v| {
                let c = variant_config(&base, v);
                [
                    c.noise_correction != base.noise_correction,
                    c.disc != base.disc,
                    c.mode != base.mode,
                    c.srl != base.srl,
                ]
                .iter()
                .filter(|&&d| d)
                .count()
            })
            .collect();
        assert_eq!(diffs, vec![0, 1, 1, 1, 1]);
    }
}
