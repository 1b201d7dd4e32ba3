//! `lgl query`: nearest database descriptors for each query cloud.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use lgl_core::cloud::load_manifest_lenient;
use lgl_core::retrieval::{self, read_index};

use crate::config::RunConfig;
use crate::pipeline::{self, csv_error, FeatureSource};

/// Search a saved index with every query cloud and write ranked matches.
#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Index file written by `lgl index`.
    #[arg(long)]
    pub index: PathBuf,
    /// Manifest listing the query clouds.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Neighbours per query; overrides the `[retrieval] k` config key.
    #[arg(long)]
    pub k: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(config: &RunConfig, args: &QueryArgs) -> anyhow::Result<usize> {
    let source = FeatureSource::from_config(config)?;
    let index = read_index(&args.index)?;
    let k = args.k.unwrap_or(config.retrieval.k);
    let (manifest, _) = load_manifest_lenient(&args.manifest)?;
    let frames = pipeline::prepare_all(&manifest, config, &source);

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.output)?);
    writeln!(out, "query,rank,database,distance,error")?;
    let mut errors = 0usize;
    for (i, frame) in frames.iter().enumerate() {
        let id = pipeline::entry_id(&manifest, i);
        let outcome = frame
            .as_ref()
            .map_err(|e| anyhow::anyhow!("{e:#}"))
            .and_then(|f| Ok(retrieval::query(&index, &f.global, k)?));
        match outcome {
            Ok(hits) => {
                for (rank, (db, dist)) in hits.iter().enumerate() {
                    writeln!(out, "{id},{},{db},{dist},", rank + 1)?;
                }
                println!("query {id}: top {}", hits.len());
            }
            Err(e) => {
                errors += 1;
                writeln!(out, "{id},,,,{}", csv_error(&e))?;
                println!("error {id}: {e:#}");
            }
        }
    }
    out.flush()?;
    println!("queried {} of {} clouds", manifest.entries.len() - errors, manifest.entries.len());
    Ok(errors)
}
