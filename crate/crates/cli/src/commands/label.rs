//! `lgl label`: co-visibility labels for frame pairs.

use std::path::PathBuf;

use clap::Args;

use lgl_core::cloud::load_manifest;
use lgl_core::covis::{self, Label};

use crate::config::RunConfig;

/// Label frame pairs by co-visibility, writing `i,j,score,label` CSV.
#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Database manifest; labeled against itself when --queries is absent.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Query manifest for cross labeling; keys become (query, database).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(config: &RunConfig, args: &LabelArgs) -> anyhow::Result<usize> {
    let supervision = config.covis.to_supervision();
    let database = load_manifest(&args.manifest)?;
    let labels = match &args.queries {
        Some(q) => covis::label_pairs_cross(
            &load_manifest(q)?,
            &database,
            supervision,
            config.covis.max_pair_distance,
        )?,
        None => covis::label_pairs(&database, supervision, config.covis.max_pair_distance)?,
    };
    covis::write_labels_csv(&args.output, &labels)?;

    let count = |want: Label| labels.labels.values().filter(|l| l.label == want).count();
    println!("pairs: {}", labels.labels.len());
    println!(
        "positive: {} negative: {} ignore: {}",
        count(Label::Positive),
        count(Label::Negative),
        count(Label::Ignore)
    );
    for (i, why) in &labels.excluded {
        println!("excluded entry {i}: {why}");
    }
    Ok(labels.excluded.len())
}
