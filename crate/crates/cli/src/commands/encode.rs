//! `lgl encode`: rasterize point clouds into BEV image pairs.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::bail;
use clap::Args;
use rayon::prelude::*;

use lgl_core::bev::{self, Channel};
use lgl_core::cloud::{load_cloud, load_manifest_lenient};

use crate::config::RunConfig;
use crate::pipeline::csv_error;

/// Rasterize clouds into spatial and intensity BEV images (PGM).
#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Manifest whose clouds are all encoded.
    #[arg(long, conflicts_with = "clouds")]
    pub manifest: Option<PathBuf>,
    /// Individual cloud file; repeatable.
    #[arg(long = "cloud")]
    pub clouds: Vec<PathBuf>,
    /// Directory receiving the PGM images.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(config: &RunConfig, args: &EncodeArgs) -> anyhow::Result<usize> {
    let inputs: Vec<(String, PathBuf)> = if let Some(manifest) = &args.manifest {
        let (m, _missing) = load_manifest_lenient(manifest)?;
        (0..m.len())
            .map(|i| (m.entries[i].cloud_path.display().to_string(), m.cloud_path(i)))
            .collect()
    } else if !args.clouds.is_empty() {
        args.clouds.iter().map(|p| (p.display().to_string(), p.clone())).collect()
    } else {
        bail!("encode needs --manifest or at least one --cloud");
    };
    let mut stems = BTreeSet::new();
    for (id, _) in &inputs {
        if !stems.insert(file_stem(id)) {
            bail!("inputs {id:?} and an earlier one map to the same output name");
        }
    }
    std::fs::create_dir_all(&args.output)?;

    let results: Vec<Result<(String, String), String>> = inputs
        .par_iter()
        .map(|(id, path)| {
            let work = || -> anyhow::Result<(String, String)> {
                let cloud = load_cloud(path)?;
                let pair = bev::encode(&cloud, &config.bev)?;
                let stem = file_stem(id);
                let spatial = format!("{stem}_spatial.pgm");
                let intensity = format!("{stem}_intensity.pgm");
                bev::write_pgm(pair.image(Channel::Spatial), args.output.join(&spatial))?;
                bev::write_pgm(pair.image(Channel::Intensity), args.output.join(&intensity))?;
                Ok((spatial, intensity))
            };
            work().map_err(|e| csv_error(&e))
        })
        .collect();

    let mut errors = 0;
    for ((id, _), result) in inputs.iter().zip(&results) {
        match result {
            Ok((s, i)) => println!("encoded {id} -> {s} {i}"),
            Err(msg) => {
                errors += 1;
                println!("error {id}: {msg}");
            }
        }
    }
    println!("encoded {} of {} clouds", inputs.len() - errors, inputs.len());
    Ok(errors)
}

/// Output name stem: the id without its extension, path separators and
/// other punctuation flattened to underscores.
fn file_stem(id: &str) -> String {
    let no_ext = id.rsplit_once('.').map_or(id, |(a, _)| a);
    no_ext
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}
