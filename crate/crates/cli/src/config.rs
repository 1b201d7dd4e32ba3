//! Run configuration: one TOML file with every knob named, plus dotted-key
//! flag overrides. A run is fully reproducible from the config file and the
//! command line alone.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use lgl_core::bev::BevConfig;
use lgl_core::covis::Supervision;
use lgl_core::features::loss::LossConfig;
use lgl_core::pose_graph::OptimizeConfig;
use lgl_core::registration::{GncConfig, MatchConfig};
use lgl_core::synth::BenchmarkSpec;

/// Which feature extractor produces descriptors and local features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    /// The deterministic handcrafted backend; needs no extra files.
    #[default]
    Reference,
    /// Features imported from an `extract` output file; requires
    /// `embedding_path`.
    Embedding,
}

/// How frame pairs are labeled for supervision and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionChoice {
    /// Convex-hull overlap with the positive/negative IoU thresholds.
    #[default]
    HullIou,
    /// Positive when sensor positions are within `positive_within` meters.
    Distance,
}

/// Co-visibility labeling knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovisSection {
    pub supervision: SupervisionChoice,
    /// Positive radius in meters for distance supervision.
    pub positive_within: f64,
    /// Treat pairs farther apart than this as non-overlapping without
    /// computing hulls. Unset checks every pair.
    pub max_pair_distance: Option<f64>,
}

impl Default for CovisSection {
    fn default() -> Self {
        Self {
            supervision: SupervisionChoice::HullIou,
            positive_within: lgl_core::covis::DISTANCE_POSITIVE_WITHIN,
            max_pair_distance: None,
        }
    }
}

impl CovisSection {
    pub fn to_supervision(&self) -> Supervision {
        match self.supervision {
            SupervisionChoice::HullIou => Supervision::HullIou,
            SupervisionChoice::Distance => {
                Supervision::Distance { positive_within: self.positive_within }
            }
        }
    }
}

/// Retrieval and evaluation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    /// Neighbors returned by the query command.
    pub k: usize,
    /// Distance thresholds for the precision/recall sweep; unset sweeps the
    /// observed top-1 distances.
    pub thresholds: Option<Vec<f64>>,
    /// Also emit the PR curve as an SVG plot.
    pub svg: bool,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self { k: 1, thresholds: None, svg: false }
    }
}

/// Everything a run needs beyond its input and output paths.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for commands that sample; reserved for stochastic backends (the
    /// shipped backend and all current commands are deterministic without
    /// it; the synthetic benchmark carries its own seeds).
    pub seed: u64,
    /// Worker thread cap for per-item parallelism; 0 means one worker per
    /// core. Output order never depends on this.
    pub workers: usize,
    pub backend: BackendChoice,
    /// Embedding file for `backend = "embedding"`.
    pub embedding_path: Option<PathBuf>,
    pub bev: BevConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub gnc: GncConfig,
    /// Loss evaluator knobs, surfaced for training tooling built on the
    /// library; no sub-command consumes them directly.
    pub loss: LossConfig,
    pub covis: CovisSection,
    pub retrieval: RetrievalSection,
    pub optimize: OptimizeConfig,
    pub synth: BenchmarkSpec,
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        match (self.backend, &self.embedding_path) {
            (BackendChoice::Embedding, None) => {
                bail!("backend \"embedding\" requires embedding_path")
            }
            (BackendChoice::Reference, Some(_)) => {
                bail!("embedding_path is set but backend is \"reference\"; it would be ignored")
            }
            _ => {}
        }
        self.bev.validate().context("[bev]")?;
        self.matching.validate().context("[match]")?;
        self.gnc.validate().context("[gnc]")?;
        self.loss.validate().context("[loss]")?;
        if self.retrieval.k == 0 {
            bail!("[retrieval] k must be at least 1");
        }
        if let Some(ts) = &self.retrieval.thresholds {
            if ts.iter().any(|t| !t.is_finite() || *t < 0.0) {
                bail!("[retrieval] thresholds must be finite and non-negative");
            }
        }
        if !(self.covis.positive_within > 0.0) {
            bail!("[covis] positive_within must be positive");
        }
        if let Some(d) = self.covis.max_pair_distance {
            if !(d > 0.0) {
                bail!("[covis] max_pair_distance must be positive when set");
            }
        }
        if self.optimize.max_iterations == 0 {
            bail!("[optimize] max_iterations must be at least 1");
        }
        Ok(())
    }
}

/// Loads the configuration: the optional TOML file, then `--set key=value`
/// overrides in order, then validation.
pub fn load(path: Option<&Path>, sets: &[String]) -> anyhow::Result<RunConfig> {
    let mut table = match path {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading config {}", p.display()))?
            .parse::<toml::Table>()
            .with_context(|| format!("parsing config {}", p.display()))?,
        None => toml::Table::new(),
    };
    for s in sets {
        apply_set(&mut table, s)?;
    }
    let config: RunConfig =
        toml::Value::Table(table).try_into().context("interpreting configuration")?;
    config.validate()?;
    Ok(config)
}

/// Applies one `dotted.key=value` override to the raw TOML tree. The value
/// text is parsed as TOML; bare words fall back to strings, so
/// `--set backend=reference` needs no quoting.
fn apply_set(table: &mut toml::Table, spec: &str) -> anyhow::Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("--set {spec:?} is not of the form key=value");
    };
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("--set key {key:?} has an empty path segment");
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow::anyhow!("--set {key:?}: {part} is not a table"))?;
    }
    node.insert(parts.last().unwrap().to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_yields_the_defaults() {
        let config = load(None, &[]).unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.backend, BackendChoice::Reference);
        assert_eq!(config.retrieval.k, 1);
        assert_eq!(config.bev, BevConfig::default());
    }

    #[test]
    fn file_and_overrides_compose_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "workers = 3\n[gnc]\ntruncation = 0.4\n").unwrap();
        let config = load(
            Some(&path),
            &[
                "gnc.truncation=0.6".into(),
                "bev.width=64".into(),
                "bev.height=64".into(),
                "retrieval.thresholds=[0.1, 0.2]".into(),
            ],
        )
        .unwrap();
        assert_eq!(config.workers, 3);
        assert_eq!(config.gnc.truncation, 0.6);
        assert_eq!(config.bev.width, 64);
        assert_eq!(config.retrieval.thresholds, Some(vec![0.1, 0.2]));
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        assert!(load(None, &["gnc.truncadion=0.5".into()]).is_err());
        assert!(load(None, &["notasection.x=1".into()]).is_err());
        assert!(load(None, &["bev.width".into()]).is_err());
        assert!(load(None, &["gnc.truncation=-1".into()]).is_err());
    }

    #[test]
    fn backend_consistency_is_enforced() {
        assert!(load(None, &["backend=embedding".into()]).is_err());
        let ok = load(
            None,
            &["backend=embedding".into(), "embedding_path=\"emb.lgle\"".into()],
        )
        .unwrap();
        assert_eq!(ok.backend, BackendChoice::Embedding);
        assert!(load(None, &["embedding_path=\"emb.lgle\"".into()]).is_err());
    }

    #[test]
    fn synth_section_reaches_the_benchmark_spec() {
        let config = load(
            None,
            &[
                "synth.database_count=9".into(),
                "synth.scene.seed=5".into(),
                "synth.scan.range_max=30.0".into(),
                "synth.query_sensor=fov-limited".into(),
            ],
        )
        .unwrap();
        assert_eq!(config.synth.database_count, 9);
        assert_eq!(config.synth.scene.seed, 5);
        assert_eq!(config.synth.scan.range_max, 30.0);
        assert_eq!(config.synth.query_sensor, lgl_core::SensorKind::FovLimited);
    }
}
