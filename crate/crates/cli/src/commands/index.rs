//! `lgl index`: build a searchable descriptor index from a manifest.

use std::path::PathBuf;

use clap::Args;

use lgl_core::cloud::load_manifest;
use lgl_core::retrieval::write_index;

use crate::config::RunConfig;
use crate::pipeline::{self, FeatureSource};

/// Describe every database cloud and snapshot the index to a file.
#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Database manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output index file.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(config: &RunConfig, args: &IndexArgs) -> anyhow::Result<usize> {
    let source = FeatureSource::from_config(config)?;
    let manifest = load_manifest(&args.manifest)?;
    let frames = pipeline::prepare_database(&manifest, config, &source, "database")?;
    let index = pipeline::build_index(&frames)?;
    write_index(&args.output, &index)?;
    let dim = if index.is_empty() { 0 } else { index.descriptor(0).dim() };
    println!("indexed {} clouds at dimension {dim}", index.len());
    Ok(0)
}
