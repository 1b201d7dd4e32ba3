//! On-disk embedding exchange with external feature extractors.
//!
//! A network trained elsewhere can drop its descriptors and token maps into
//! this binary format and every downstream stage (retrieval, matching,
//! registration) runs unchanged. Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "LGLE"
//! version u32      1
//! dim     u32      descriptor/token length D
//! patch   u32      patch edge length in pixels
//! rows    u32      patch grid rows
//! cols    u32      patch grid cols
//! count   u64      number of records
//! record:
//!   id_len  u32, id bytes (UTF-8)
//!   global  dim x f64
//!   spatial rows*cols*dim x f32
//!   intens  rows*cols*dim x f32
//! ```
//!
//! A zero-length file is read as an empty set. Vectors are accepted when
//! their norm is within 1e-3 of unit and renormalized if needed; zero or
//! non-finite vectors are rejected naming the offending cloud id. A
//! dimension other than 384 is accepted with a warning so smaller external
//! models can still be evaluated.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;

use super::{
    FeatureError, GlobalDescriptor, LocalFeatureMap, DESCRIPTOR_DIM, IMPORT_NORM_TOL,
};

const MAGIC: &[u8; 4] = b"LGLE";
const VERSION: u32 = 1;

/// An imported embedding collection.
#[derive(Debug, Default)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub patch: u32,
    pub rows: u32,
    pub cols: u32,
    pub entries: BTreeMap<String, (GlobalDescriptor, LocalFeatureMap)>,
    /// Non-fatal findings, e.g. a non-standard descriptor dimension.
    pub warnings: Vec<String>,
}

/// Writes embeddings for a set of clouds. All entries must share one
/// geometry (dimension, patch size, grid shape).
pub fn export_embeddings(
    path: impl AsRef<Path>,
    entries: &BTreeMap<String, (GlobalDescriptor, LocalFeatureMap)>,
) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let (dim, patch, rows, cols) = match entries.values().next() {
        Some((g, m)) => (g.dim(), m.patch, m.rows, m.cols),
        None => (0, 0, 0, 0),
    };
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&patch.to_le_bytes());
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (id, (global, map)) in entries {
        if global.dim() != dim || map.rows != rows || map.cols != cols || map.dim != dim {
            return Err(FeatureError::GridMismatch(format!(
                "entry {id} does not match the set geometry {dim}/{rows}x{cols}"
            )));
        }
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for v in global.values().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for channel in [crate::bev::Channel::Spatial, crate::bev::Channel::Intensity] {
            for v in map.raw(channel) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, buf).map_err(|source| FeatureError::Io { path: path.into(), source })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FeatureError> {
        if self.pos + n > self.bytes.len() {
            return Err(FeatureError::Format {
                path: self.path.into(),
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FeatureError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reads an embedding file, validating and renormalizing every vector.
pub fn import_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet, FeatureError> {
    let path = path.as_ref();
    let bytes =
        std::fs::read(path).map_err(|source| FeatureError::Io { path: path.into(), source })?;
    if bytes.is_empty() {
        return Ok(EmbeddingSet::default());
    }
    let err = |msg: String| FeatureError::Format { path: path.into(), msg };
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(err("bad magic, not an embedding file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let dim = r.u32("dim")? as usize;
    let patch = r.u32("patch")?;
    let rows = r.u32("rows")?;
    let cols = r.u32("cols")?;
    let count = r.u64("count")?;
    let mut set = EmbeddingSet {
        dim,
        patch,
        rows,
        cols,
        entries: BTreeMap::new(),
        warnings: Vec::new(),
    };
    if count > 0 && dim != DESCRIPTOR_DIM {
        set.warnings
            .push(format!("descriptor dimension {dim} differs from the standard {DESCRIPTOR_DIM}"));
    }
    let tokens_per_map = rows as usize * cols as usize * dim;
    for rec in 0..count {
        let id_len = r.u32("id length")? as usize;
        let id = std::str::from_utf8(r.take(id_len, "id")?)
            .map_err(|e| err(format!("record {rec}: id is not UTF-8: {e}")))?
            .to_string();
        if set.entries.contains_key(&id) {
            return Err(err(format!("duplicate cloud id {id:?}")));
        }

        let gbytes = r.take(dim * 8, "global descriptor")?;
        let mut global = DVector::zeros(dim);
        for (i, chunk) in gbytes.chunks_exact(8).enumerate() {
            global[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if global.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("cloud {id:?}: non-finite descriptor")));
        }
        let norm = global.norm();
        if (norm - 1.0).abs() > IMPORT_NORM_TOL {
            return Err(err(format!(
                "cloud {id:?}: descriptor norm {norm} too far from unit to renormalize"
            )));
        }
        // Preserve bits when already unit norm; fix up tiny drift otherwise.
        if (norm - 1.0).abs() > 1e-9 {
            global /= norm;
        }
        let descriptor = GlobalDescriptor::from_values(global, &id)?;

        let mut channels: [Vec<f32>; 2] = [Vec::new(), Vec::new()];
        for (c, channel) in channels.iter_mut().enumerate() {
            let tbytes = r.take(tokens_per_map * 4, "token map")?;
            let mut vals = Vec::with_capacity(tokens_per_map);
            for chunk in tbytes.chunks_exact(4) {
                vals.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            for (p, token) in vals.chunks_exact_mut(dim.max(1)).enumerate() {
                let norm: f64 =
                    token.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
                if !norm.is_finite() || (norm - 1.0).abs() > IMPORT_NORM_TOL {
                    return Err(err(format!(
                        "cloud {id:?}: channel {c} token {p} norm {norm} is not unit"
                    )));
                }
                if (norm - 1.0).abs() > 1e-6 {
                    for t in token.iter_mut() {
                        *t = (*t as f64 / norm) as f32;
                    }
                }
            }
            *channel = vals;
        }
        let [spatial, intensity] = channels;
        let map = LocalFeatureMap::new(rows, cols, dim, patch, spatial, intensity)?;
        set.entries.insert(id, (descriptor, map));
    }
    if r.pos != bytes.len() {
        return Err(err(format!("{} trailing bytes after last record", bytes.len() - r.pos)));
    }
    Ok(set)
}
