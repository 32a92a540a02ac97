use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input files of one image. Relative paths resolve against the manifest root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub mesh: PathBuf,
    /// Per-vertex descriptor sidecar (GCDF).
    pub descriptors: PathBuf,
    /// Camera as JSON.
    pub camera: PathBuf,
    pub mask: PathBuf,
    /// The two dense image feature maps (GCFM), weighted by `alpha` and `beta`.
    pub features: [PathBuf; 2],
    /// Initial pose as JSON; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PathBuf>,
    /// Yaw answer file for the `answers` estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub images: BTreeMap<String, ImageEntry>,
    /// `(source, target)` image ids, processed and written in this order.
    pub pairs: Vec<(String, String)>,
    /// Keypoint annotations used for filter validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("manifest: {e}")))
    }

    /// Reads a manifest and returns it with the directory its paths are relative to.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Self::from_json(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, root))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Image ids double as file names of per-image outputs, so they are restricted to
    /// ASCII letters, digits, `-`, `_` and `.` (not leading).
    pub fn validate(&self) -> Result<()> {
        for id in self.images.keys() {
            let ok = !id.is_empty()
                && !id.starts_with('.')
                && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
            if !ok {
                return Err(Error::Parse(format!("invalid image id {id:?}")));
            }
        }
        Ok(())
    }

    /// Image ids referenced by pairs, in first-use order.
    pub fn used_images(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for (s, t) in &self.pairs {
            for id in [s.as_str(), t.as_str()] {
                if !seen.contains(&id) {
                    seen.push(id);
                }
            }
        }
        seen
    }
}

pub(crate) fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}
