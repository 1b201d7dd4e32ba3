//! Shared plumbing for the sub-commands: feature-source construction, frame
//! preparation, and order-preserving parallel work.

use anyhow::Context;
use rayon::prelude::*;

use lgl_core::bev::{self, BevPair};
use lgl_core::cloud::{DatasetManifest, PointCloud};
use lgl_core::features::embedding::{import_embeddings, EmbeddingSet};
use lgl_core::features::reference::ReferenceBackend;
use lgl_core::features::{FeatureBackend, FeatureError, GlobalDescriptor, LocalFeatureMap};
use lgl_core::registration::{FramePack, RegistrationError};
use lgl_core::retrieval::DescriptorIndex;

use crate::config::{BackendChoice, RunConfig};

/// Descriptor and local-feature provider for a whole run. The reference
/// backend computes features from the BEV pair; imported embeddings are
/// looked up by frame id (the manifest cloud path).
pub enum FeatureSource {
    Reference(ReferenceBackend),
    Imported(EmbeddingSet),
}

impl FeatureSource {
    pub fn from_config(config: &RunConfig) -> anyhow::Result<Self> {
        match config.backend {
            BackendChoice::Reference => Ok(Self::Reference(ReferenceBackend::new())),
            BackendChoice::Embedding => {
                let path = config.embedding_path.as_ref().expect("checked by validate");
                let set = import_embeddings(path)
                    .with_context(|| format!("importing embeddings from {}", path.display()))?;
                for w in &set.warnings {
                    eprintln!("embedding import: {w}");
                }
                Ok(Self::Imported(set))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Reference(_) => "reference",
            Self::Imported(_) => "embedding",
        }
    }

    /// Features for the frame identified by `id`.
    pub fn describe(
        &self,
        id: &str,
        bev: &BevPair,
    ) -> Result<(GlobalDescriptor, LocalFeatureMap), FeatureError> {
        match self {
            Self::Reference(backend) => backend.extract(bev),
            Self::Imported(set) => set
                .entries
                .get(id)
                .cloned()
                .ok_or_else(|| FeatureError::MissingEmbedding(id.to_string())),
        }
    }
}

/// A fully prepared frame: cloud, BEV pair, and features.
pub struct Frame {
    pub id: String,
    pub cloud: PointCloud,
    pub bev: BevPair,
    pub global: GlobalDescriptor,
    pub map: LocalFeatureMap,
}

impl Frame {
    pub fn pack(&self) -> Result<FramePack<'_>, RegistrationError> {
        FramePack::new(&self.cloud, &self.bev, &self.map)
    }
}

/// The id a manifest entry is known by everywhere: its stored cloud path.
pub fn entry_id(manifest: &DatasetManifest, i: usize) -> String {
    manifest.entries[i].cloud_path.display().to_string()
}

/// Loads and describes manifest entry `i`.
pub fn prepare_entry(
    manifest: &DatasetManifest,
    i: usize,
    config: &RunConfig,
    source: &FeatureSource,
) -> anyhow::Result<Frame> {
    let id = entry_id(manifest, i);
    let cloud = manifest.load_entry_cloud(i)?;
    let bev = bev::encode(&cloud, &config.bev)?;
    let (global, map) = source.describe(&id, &bev)?;
    Ok(Frame { id, cloud, bev, global, map })
}

/// Prepares every entry of a manifest in parallel, results in manifest
/// order.
pub fn prepare_all(
    manifest: &DatasetManifest,
    config: &RunConfig,
    source: &FeatureSource,
) -> Vec<anyhow::Result<Frame>> {
    (0..manifest.len())
        .into_par_iter()
        .map(|i| prepare_entry(manifest, i, config, source))
        .collect()
}

/// Prepares a manifest where any failure is fatal, for the sides of a task
/// whose labels are positional: dropping an entry would silently shift every
/// later (index, index) label key. `what` names the side in errors.
pub fn prepare_database(
    manifest: &DatasetManifest,
    config: &RunConfig,
    source: &FeatureSource,
    what: &str,
) -> anyhow::Result<Vec<Frame>> {
    let mut frames = Vec::with_capacity(manifest.len());
    for (i, r) in prepare_all(manifest, config, source).into_iter().enumerate() {
        frames.push(r.with_context(|| format!("{what} entry {} ({})", i, entry_id(manifest, i)))?);
    }
    Ok(frames)
}

/// Builds the descriptor index over prepared frames, keyed by frame id, in
/// frame order.
pub fn build_index(frames: &[Frame]) -> anyhow::Result<DescriptorIndex> {
    Ok(DescriptorIndex::from_entries(
        frames.iter().map(|f| (f.id.clone(), f.global.clone())),
    )?)
}

/// Runs `f` under a thread pool capped at `workers` threads; 0 keeps the
/// default pool (one thread per core).
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(f))
}

/// Flattens an error chain into one CSV-safe cell (no commas or newlines).
pub fn csv_error(err: &anyhow::Error) -> String {
    let mut text = format!("{err:#}");
    text.retain(|c| c != '\n' && c != '\r');
    text.replace(',', ";")
}
