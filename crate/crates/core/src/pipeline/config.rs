use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::TrainConfig;
use crate::canonicalize::{CanonicalizeConfig, Pivot};
use crate::error::{Error, Result};
use crate::features::FusionWeights;
use crate::pose::RefineConfig;

/// Where per-view yaw estimates come from during canonicalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Leave meshes in their input orientation.
    #[default]
    Skip,
    /// Treat the input orientation as canonical and report the rendered yaws
    /// (with optional noise); useful for synthetic data.
    Oracle,
    /// Read yaws from each image's answer file listed in the manifest.
    Answers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanonicalizeStage {
    pub estimator: EstimatorKind,
    /// Oracle noise in degrees.
    pub oracle_sigma_deg: f64,
    pub pivot: Pivot,
    pub azimuth_offset_deg: f64,
}

impl CanonicalizeStage {
    pub fn config(&self) -> CanonicalizeConfig {
        CanonicalizeConfig { pivot: self.pivot, azimuth_offset_deg: self.azimuth_offset_deg }
    }
}

impl Default for CanonicalizeStage {
    fn default() -> Self {
        let base = CanonicalizeConfig::default();
        Self { estimator: EstimatorKind::Skip, oracle_sigma_deg: 0.0, pivot: base.pivot, azimuth_offset_deg: base.azimuth_offset_deg }
    }
}

/// Every tunable of the label pipeline in one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of all randomness.
    pub seed: u64,
    /// Feature grid side, in cells.
    pub grid: usize,
    pub tau_cc: f64,
    pub tau_geo: f64,
    /// Base directory for relative manifest paths; defaults to the manifest's directory.
    pub input_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub fusion: FusionWeights,
    pub refine: RefineConfig,
    pub canonicalize: CanonicalizeStage,
    pub adapter: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: 60,
            tau_cc: 0.05,
            tau_geo: 0.05,
            input_root: None,
            output_root: None,
            fusion: FusionWeights::default(),
            refine: RefineConfig::default(),
            canonicalize: CanonicalizeStage::default(),
            adapter: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_cc", self.tau_cc), ("tau_geo", self.tau_geo)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.grid == 0 {
            return Err(Error::Config("grid must be positive".into()));
        }
        self.refine.validate()?;
        self.adapter.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Seed of the named random stream, e.g. `("canonicalize", "img_003")`.
    pub fn stream_seed(&self, stage: &str, key: &str) -> u64 {
        stream_seed(self.seed, stage, key)
    }
}

/// Independent seed derived from a root seed and a stream name.
pub fn stream_seed(root: u64, stage: &str, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.grid, cfg.tau_cc, cfg.tau_geo), (60, 0.05, 0.05));
        assert_eq!(cfg.refine.lambda, 4.0);
        assert_eq!(cfg.adapter.labels_per_pair, 50);
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 7\ngrid = 24\n[refine]\nsteps_dt = 10\n[canonicalize]\nestimator = \"oracle\"\n").unwrap();
        assert_eq!((cfg.seed, cfg.grid, cfg.refine.steps_dt, cfg.refine.steps_iou), (7, 24, 10, 50));
        assert_eq!(cfg.canonicalize.estimator, EstimatorKind::Oracle);
        assert!(PipelineConfig::from_toml("tau_geo = 1.5").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml("[fusion]\nalpha = 0.5\nbeta = 0.5\ngamma = 0.5").is_err());
    }

    #[test]
    fn streams_are_distinct_and_stable() {
        assert_eq!(stream_seed(1, "refine", "a"), stream_seed(1, "refine", "a"));
        assert_ne!(stream_seed(1, "refine", "a"), stream_seed(2, "refine", "a"));
        assert_ne!(stream_seed(1, "refine", "a"), stream_seed(1, "refine", "b"));
        assert_ne!(stream_seed(1, "ab", "c"), stream_seed(1, "a", "bc"));
    }
}
