use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flashdistill::harness::{
    cmd_ablate, cmd_distill, cmd_eval, cmd_sample, cmd_train_teacher, Report, RunConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "flashdistill",
    version,
    about = "Few-step diffusion distillation on synthetic 2-D data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Flat JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides as `--key value` pairs.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY VALUE"
    )]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the conditional teacher.
    TrainTeacher(Common),
    /// Distill a few-step student from the teacher.
    Distill(Common),
    /// Draw samples (CSV and SVG) from the teacher or student.
    Sample(Common),
    /// Score teacher and student samples against held-out data.
    Eval(Common),
    /// Run the ablation matrix and write the summary table.
    Ablate(Common),
}

fn pairs(raw: &[String]) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(k) = it.next() {
        let key = k
            .strip_prefix("--")
            .ok_or_else(|| format!("expected --key, found '{k}'"))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.replace('-', "_"), v.to_string()));
            continue;
        }
        let v = it
            .next()
            .ok_or_else(|| format!("missing value for --{key}"))?;
        out.push((key.replace('-', "_"), v.clone()));
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (common, run): (&Common, fn(&RunConfig) -> flashdistill::Result<Report>) =
        match &cli.command {
            Command::TrainTeacher(c) => (c, cmd_train_teacher),
            Command::Distill(c) => (c, cmd_distill),
            Command::Sample(c) => (c, cmd_sample),
            Command::Eval(c) => (c, cmd_eval),
            Command::Ablate(c) => (c, cmd_ablate),
        };
    let overrides = match pairs(&common.overrides) {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let result = RunConfig::load(common.config.as_deref(), &overrides).and_then(|cfg| run(&cfg));
    match result {
        Ok(report) => {
            for line in &report.summary {
                println!("{line}");
            }
            for path in &report.written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
