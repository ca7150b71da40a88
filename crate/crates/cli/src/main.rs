// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use radar_enhance_cli::{
    cmd_eval, cmd_pipeline, cmd_sim, cmd_train, EvalArgs, PipelineArgs, SimArgs, TrainArgs, WorldSource,
};

#[derive(Parser)]
#[command(name = "radar-enhance", version, about = "Radar point-cloud enhancement and localization")]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a route through a world and write a dataset.
    Sim(SimCmd),
    /// Train the node classifier.
    Train(TrainCmd),
    /// Score clouds and trajectories against ground truth.
    Eval(EvalCmd),
    /// Replay a dataset through the enhancement pipeline.
    Pipeline(PipelineCmd),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
struct SimCmd {
    /// Built-in scenario (env-small, ghost60, ghost60-unseen).
    #[arg(long, group = "source")]
    preset: Option<String>,
    /// Scenario file (TOML with `world` and optional `sim` tables).
    #[arg(long, group = "source")]
    world: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    route: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCmd {
    /// Dataset directories to train on.
    #[arg(long = "dataset", required = true, num_args = 1..)]
    datasets: Vec<PathBuf>,
    /// Validation dataset directories.
    #[arg(long = "val", num_args = 1..)]
    validation: Vec<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long = "dataset", required = true, num_args = 1..)]
    datasets: Vec<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Skip localization.
    #[arg(long)]
    no_localization: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineCmd {
    #[arg(long)]
    dataset: PathBuf,
    /// Without a checkpoint every node is kept.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overlap stages on worker threads.
    #[arg(long)]
    pipelined: bool,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = cli.config;
    match cli.command {
        Command::Sim(c) => {
            let world = match (c.preset, c.world) {
                (Some(p), _) => WorldSource::Preset(p),
                (None, Some(w)) => WorldSource::File(w),
                (None, None) => unreachable!("clap requires a source"),
            };
            let s = cmd_sim(&SimArgs {
                world,
                route: c.route,
                seed: c.seed,
                out: c.out,
                config,
            })?;
            println!("{}: {} frames", s.world, s.frames);
        }
        Command::Train(c) => {
            let s = cmd_train(&TrainArgs {
                datasets: c.datasets,
                validation: c.validation,
                resume: c.resume,
                epochs: c.epochs,
                seed: c.seed,
                out: c.out,
                config,
            })?;
            if let Some(m) = s.history.last() {
                println!(
                    "{} samples, epoch {}: loss {:.4} accuracy {:.4}",
                    s.samples, m.epoch, m.train_loss, m.train_accuracy
                );
            }
        }
        Command::Eval(c) => {
            let rows = cmd_eval(&EvalArgs {
                datasets: c.datasets,
                checkpoint: c.checkpoint,
                out: c.out,
                config,
                skip_localization: c.no_localization,
            })?;
            print!("{}", radar_enhance_cli::report_csv(&rows));
        }
        Command::Pipeline(c) => {
            let s = cmd_pipeline(&PipelineArgs {
                dataset: c.dataset,
                checkpoint: c.checkpoint,
                pipelined: c.pipelined,
                out: c.out,
                config,
            })?;
            println!("{} frames, {} skipped", s.frames, s.skipped);
            for l in &s.latency {
                println!("{:<10} mean {:.3} ms  p99 {:.3} ms", l.stage, l.mean_ms, l.p99_ms);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
