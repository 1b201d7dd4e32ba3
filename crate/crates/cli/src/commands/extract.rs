//! `lgl extract`: global and local features for every manifest entry.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;

use lgl_core::cloud::load_manifest_lenient;
use lgl_core::features::embedding::export_embeddings;

use crate::config::RunConfig;
use crate::pipeline::{self, FeatureSource};

/// Extract descriptors for each cloud and export them as an embedding file.
#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Manifest listing the clouds to describe.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output embedding file.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(config: &RunConfig, args: &ExtractArgs) -> anyhow::Result<usize> {
    let source = FeatureSource::from_config(config)?;
    let (manifest, _) = load_manifest_lenient(&args.manifest)?;
    let frames = pipeline::prepare_all(&manifest, config, &source);

    let mut entries = BTreeMap::new();
    let mut errors = 0usize;
    for (i, frame) in frames.iter().enumerate() {
        let id = pipeline::entry_id(&manifest, i);
        match frame {
            Ok(f) => {
                entries.insert(id.clone(), (f.global.clone(), f.map.clone()));
                println!("extracted {id}");
            }
            Err(e) => {
                errors += 1;
                println!("error {id}: {e:#}");
            }
        }
    }
    export_embeddings(&args.output, &entries)?;
    println!(
        "extracted {} of {} clouds with the {} backend",
        entries.len(),
        manifest.entries.len(),
        source.name()
    );
    Ok(errors)
}
