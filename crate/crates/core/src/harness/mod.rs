//! Command-line experiment harness: configs, checkpoints, artifacts and commands.

mod artifacts;
mod checkpoint;
mod commands;
mod config;

pub use artifacts::{fmt_f64, parse_csv, points_csv, scatter_svg, write_atomic, Csv, PALETTE};
pub use checkpoint::{Architecture, Checkpoint, Layer, ModelKind, StudentSampling, FORMAT_VERSION};
pub use commands::{
    cmd_ablate, cmd_distill, cmd_eval, cmd_sample, cmd_train_teacher, distill_into, eval_data,
    evaluate, load_teacher, median, prepare, train_data, AblationCell, Report, SampleQuality,
    ABLATION_VARIANTS,
};
pub use config::{RunConfig, SampleModel};
