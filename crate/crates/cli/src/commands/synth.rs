//! `lgl synth`: deterministic synthetic benchmark generation.

use std::path::PathBuf;

use clap::Args;

use lgl_core::synth::generate_benchmark;

use crate::config::RunConfig;

/// Generate a synthetic scene, database scans, and query scans with ground
/// truth, all driven by the `[synth]` config section.
#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the clouds and the two manifests.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(config: &RunConfig, args: &SynthArgs) -> anyhow::Result<usize> {
    let paths = generate_benchmark(&config.synth, &args.output)?;
    println!(
        "wrote {} database scans and as many query scans",
        config.synth.database_count
    );
    println!("database manifest: {}", paths.database_manifest.display());
    println!("query manifest: {}", paths.query_manifest.display());
    Ok(0)
}
