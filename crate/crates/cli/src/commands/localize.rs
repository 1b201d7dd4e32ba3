//! `lgl localize`: retrieval plus metric registration for every query.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use lgl_core::cloud::{load_manifest, load_manifest_lenient};
use lgl_core::registration::{
    self, PoseMetrics, SUCCESS_MAX_ROTATION_DEG, SUCCESS_MAX_TRANSLATION_M,
};
use lgl_core::retrieval;

use crate::config::RunConfig;
use crate::pipeline::{self, csv_error, FeatureSource};

/// Localize each query against the database and score against ground truth.
#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Database manifest with world poses.
    #[arg(long)]
    pub database: PathBuf,
    /// Query manifest; its poses are used only to score the estimates.
    #[arg(long)]
    pub queries: PathBuf,
    /// Output directory for localization.csv and summary.txt.
    #[arg(long)]
    pub output: PathBuf,
}

struct Row {
    retrieved: String,
    distance: f64,
    metrics: PoseMetrics,
    inliers: usize,
    iterations: usize,
    converged: bool,
    spatial_matches: usize,
    intensity_matches: usize,
}

pub fn run(config: &RunConfig, args: &LocalizeArgs) -> anyhow::Result<usize> {
    let source = FeatureSource::from_config(config)?;
    let database = load_manifest(&args.database)?;
    let db_frames = pipeline::prepare_database(&database, config, &source, "database")?;
    let index = pipeline::build_index(&db_frames)?;
    let position: std::collections::BTreeMap<&str, usize> =
        db_frames.iter().enumerate().map(|(i, f)| (f.id.as_str(), i)).collect();

    let (queries, _) = load_manifest_lenient(&args.queries)?;
    let q_frames = pipeline::prepare_all(&queries, config, &source);

    std::fs::create_dir_all(&args.output)?;
    let csv_path = args.output.join("localization.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(
        csv,
        "query,retrieved,distance,e_t,e_r_deg,success,inliers,iterations,\
         converged,spatial_matches,intensity_matches,error"
    )?;

    let mut errors = 0usize;
    let mut scored: Vec<PoseMetrics> = Vec::new();
    for (i, frame) in q_frames.iter().enumerate() {
        let id = pipeline::entry_id(&queries, i);
        let outcome: anyhow::Result<Row> = (|| {
            let f = match frame {
                Ok(f) => f,
                Err(e) => anyhow::bail!("{e:#}"),
            };
            let hits = retrieval::query(&index, &f.global, 1)?;
            let (db_id, distance) = hits[0].clone();
            let pos = position[db_id.as_str()];
            let db = &db_frames[pos];
            let loc =
                registration::localize(&f.pack()?, &db.pack()?, &config.matching, &config.gnc)?;
            // The registration pose maps query-frame points into the matched
            // database frame, so the world estimate is the database pose
            // composed with it.
            let estimate = database.entries[pos].pose.compose(&loc.registration.pose);
            let metrics = registration::pose_metrics(&estimate, &queries.entries[i].pose);
            Ok(Row {
                retrieved: db_id,
                distance,
                metrics,
                inliers: loc.registration.inliers,
                iterations: loc.registration.iterations,
                converged: loc.registration.converged,
                spatial_matches: loc.spatial_matches,
                intensity_matches: loc.intensity_matches,
            })
        })();
        match outcome {
            Ok(row) => {
                writeln!(
                    csv,
                    "{id},{},{},{},{},{},{},{},{},{},{},",
                    row.retrieved,
                    row.distance,
                    row.metrics.translation_error,
                    row.metrics.rotation_error_deg,
                    row.metrics.success,
                    row.inliers,
                    row.iterations,
                    row.converged,
                    row.spatial_matches,
                    row.intensity_matches
                )?;
                println!(
                    "localized {id}: e_t={:.4} m e_R={:.4} deg success={}",
                    row.metrics.translation_error,
                    row.metrics.rotation_error_deg,
                    row.metrics.success
                );
                scored.push(row.metrics);
            }
            Err(e) => {
                errors += 1;
                writeln!(csv, "{id},,,,,,,,,,,{}", csv_error(&e))?;
                println!("error {id}: {e:#}");
            }
        }
    }
    csv.flush()?;

    let summary = summarize(queries.entries.len(), errors, &scored);
    std::fs::write(args.output.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(errors)
}

fn summarize(total: usize, errors: usize, scored: &[PoseMetrics]) -> String {
    let successes = scored.iter().filter(|m| m.success).count();
    let rate = if scored.is_empty() { 0.0 } else { successes as f64 / scored.len() as f64 };
    let mut out = String::new();
    out.push_str(&format!("queries:      {total}\n"));
    out.push_str(&format!("errors:       {errors}\n"));
    out.push_str(&format!("scored:       {}\n", scored.len()));
    out.push_str(&format!(
        "success rate: {rate} (e_t < {SUCCESS_MAX_TRANSLATION_M} m and \
         e_R < {SUCCESS_MAX_ROTATION_DEG} deg)\n"
    ));
    out.push_str(&format!(
        "median e_t:   {} m\n",
        median(scored.iter().map(|m| m.translation_error))
    ));
    out.push_str(&format!(
        "median e_R:   {} deg\n",
        median(scored.iter().map(|m| m.rotation_error_deg))
    ));
    out
}

/// Median with the usual midpoint average for even counts; NaN when empty.
fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) }
}
