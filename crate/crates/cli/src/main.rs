//! `lgl`: LiDAR global localization from the command line.
//!
//! Every sub-command reads the same TOML run configuration (`--config`),
//! optionally adjusted with dotted-key `--set` overrides, then processes its
//! inputs deterministically: identical invocations produce identical bytes.
//! Per-item failures are reported inline and summarized in the exit status;
//! the process exits 0 only when every item succeeded, 1 when any item or
//! the command itself failed, and 2 when the configuration is invalid.

mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{encode, evaluate, extract, graph_optimize, index, label, localize, query, synth};

#[derive(Debug, Parser)]
#[command(name = "lgl", version, about = "LiDAR global localization toolkit")]
struct Cli {
    /// TOML run configuration; built-in defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-key override applied after the file, e.g. --set bev.patch=4.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker thread cap, overriding the config; 0 means one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render bird's-eye-view images for clouds as PGM files.
    Encode(encode::EncodeArgs),
    /// Label frame pairs by co-visibility.
    Label(label::LabelArgs),
    /// Extract global and local features into an embedding file.
    Extract(extract::ExtractArgs),
    /// Build a descriptor index from a database manifest.
    Index(index::IndexArgs),
    /// Search an index with query clouds.
    Query(query::QueryArgs),
    /// Full localization: retrieval plus metric registration.
    Localize(localize::LocalizeArgs),
    /// Score retrieval quality against co-visibility labels.
    Evaluate(evaluate::EvaluateArgs),
    /// Optimize a g2o pose graph.
    GraphOptimize(graph_optimize::GraphOptimizeArgs),
    /// Generate a synthetic benchmark with ground truth.
    Synth(synth::SynthArgs),
}

fn dispatch(config: &config::RunConfig, command: &Command) -> anyhow::Result<usize> {
    match command {
        Command::Encode(a) => encode::run(config, a),
        Command::Label(a) => label::run(config, a),
        Command::Extract(a) => extract::run(config, a),
        Command::Index(a) => index::run(config, a),
        Command::Query(a) => query::run(config, a),
        Command::Localize(a) => localize::run(config, a),
        Command::Evaluate(a) => evaluate::run(config, a),
        Command::GraphOptimize(a) => graph_optimize::run(config, a),
        Command::Synth(a) => synth::run(config, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match config::load(cli.config.as_deref(), &cli.sets) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    let outcome =
        pipeline::with_pool(config.workers, || dispatch(&config, &cli.command)).and_then(|r| r);
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{failures} item(s) failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
