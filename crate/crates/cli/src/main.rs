//! `trafficnet`: corpus generation, training, transfer, the count baseline,
//! cross-validated evaluation, PCA of transfer values and model inspection.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trafficnet::{Arch, ArchParams, TrainPolicy};

use crate::commands::{InspectTarget, Run};
use crate::config::{RunConfig, Schema};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "TRAFFICNET_OUT";

#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub msg: String,
}

impl CliError {
    pub fn new(kind: &str, msg: String) -> Self {
        Self { kind: kind.into(), msg }
    }

    pub fn config(msg: String) -> Self {
        Self::new("config", msg)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self.kind.as_str() {
            "config" | "usage" => 2,
            _ => 1,
        }
    }
}

impl From<trafficnet::Error> for CliError {
    fn from(e: trafficnet::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "trafficnet", version, about = "Traffic congestion classification toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// key=value config file; `#` starts a comment line.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $TRAFFICNET_OUT/<command>, else runs/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    num_dense_nodes: Option<usize>,
    /// Weight file to load into the model.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Trainable policy to show: all, last_<k> or layer names.
    #[arg(long)]
    trainable: Option<TrainPolicy>,
    /// Run directory; architecture and weights come from its config.txt.
    #[arg(long, conflicts_with = "arch")]
    run: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled corpus.
    Synth(Common),
    /// Train a model from scratch on a holdout split.
    Train(Common),
    /// Import weights by layer name, freeze, and fine-tune.
    Transfer(Common),
    /// Blob-count baseline with fitted thresholds and k-fold CV.
    Baseline(Common),
    /// k-fold cross-validation of trained weights with report tables.
    Eval(Common),
    /// Transfer values, 2-D PCA and scatter export.
    Pca(Common),
    /// Per-layer shapes and parameter counts.
    Inspect(InspectArgs),
}

fn out_dir(given: Option<PathBuf>, command: &str) -> PathBuf {
    given.unwrap_or_else(|| match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
        _ => PathBuf::from("runs").join(command),
    })
}

fn prepare(command: &'static str, schema: Schema, c: Common) -> Result<Run, CliError> {
    let config = RunConfig::resolve(command, schema, c.config.as_deref(), &c.set, c.seed)?;
    Ok(Run {
        out: out_dir(c.out, command),
        config,
    })
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Synth(c) => commands::synth(prepare("synth", commands::synth_schema(), c)?),
        Cmd::Train(c) => commands::train(prepare("train", commands::train_schema(), c)?),
        Cmd::Transfer(c) => commands::transfer(prepare("transfer", commands::transfer_schema(), c)?),
        Cmd::Baseline(c) => commands::baseline(prepare("baseline", commands::baseline_schema(), c)?),
        Cmd::Eval(c) => commands::eval(prepare("eval", commands::eval_schema(), c)?),
        Cmd::Pca(c) => commands::pca(prepare("pca", commands::pca_schema(), c)?),
        Cmd::Inspect(a) => {
            let mut target = match (&a.run, a.arch) {
                (Some(dir), _) => commands::inspect_target_from_run(dir)?,
                (None, Some(arch)) => InspectTarget {
                    arch,
                    params: ArchParams::default(),
                    weights: None,
                    trainable: None,
                },
                (None, None) => return Err(CliError::new("usage", "inspect needs --arch or --run".into())),
            };
            if a.num_dense_nodes.is_some() {
                target.params.num_dense_nodes = a.num_dense_nodes;
            }
            if a.weights.is_some() {
                target.weights = a.weights;
            }
            if a.trainable.is_some() {
                target.trainable = a.trainable;
            }
            print!("{}", commands::inspect(&target)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error: usage: {line}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind, e.msg.replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
