//! `lgl evaluate`: precision/recall scoring of retrieval against labels.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use lgl_core::cloud::load_manifest;
use lgl_core::covis;
use lgl_core::retrieval::{self, write_pr_csv, write_pr_svg};

use crate::config::RunConfig;
use crate::pipeline::{self, FeatureSource};

/// Retrieve for every query, label every pair, and report recall@1, the
/// precision/recall sweep, and average precision.
#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Database manifest with world poses.
    #[arg(long)]
    pub database: PathBuf,
    /// Query manifest with world poses.
    #[arg(long)]
    pub queries: PathBuf,
    /// Output directory for outcomes.csv, pr.csv, and summary.txt.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(config: &RunConfig, args: &EvaluateArgs) -> anyhow::Result<usize> {
    let source = FeatureSource::from_config(config)?;
    let database = load_manifest(&args.database)?;
    let queries = load_manifest(&args.queries)?;
    if queries.entries.is_empty() {
        anyhow::bail!("query manifest {} lists no clouds", args.queries.display());
    }

    // Both sides must prepare completely: labels and outcomes are keyed by
    // manifest position, so a dropped entry would shift every later key.
    let db_frames = pipeline::prepare_database(&database, config, &source, "database")?;
    let q_frames = pipeline::prepare_database(&queries, config, &source, "query")?;
    let index = pipeline::build_index(&db_frames)?;
    let labeled = covis::label_pairs_cross(
        &queries,
        &database,
        config.covis.to_supervision(),
        config.covis.max_pair_distance,
    )
    .context("labeling query/database pairs")?;

    let query_descs: Vec<(String, _)> =
        q_frames.iter().map(|f| (f.id.clone(), f.global.clone())).collect();
    let report = retrieval::evaluate(
        &index,
        &query_descs,
        &labeled.labels,
        config.retrieval.thresholds.as_deref(),
    )?;

    std::fs::create_dir_all(&args.output)?;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(args.output.join("outcomes.csv"))?,
    );
    writeln!(out, "query,retrieved,distance,label,has_positive")?;
    for o in &report.outcomes {
        let label = o.label.map_or(String::new(), |l| l.to_string());
        writeln!(
            out,
            "{},{},{},{label},{}",
            o.query_id, o.retrieved_id, o.distance, o.has_positive
        )?;
    }
    out.flush()?;
    write_pr_csv(args.output.join("pr.csv"), &report)?;
    if config.retrieval.svg {
        write_pr_svg(args.output.join("pr.svg"), &report)?;
    }

    let summary = retrieval::summary(&report);
    std::fs::write(args.output.join("summary.txt"), &summary)?;
    print!("{summary}");
    for (i, why) in &labeled.excluded {
        println!("excluded entry {i}: {why}");
    }
    Ok(labeled.excluded.len())
}
