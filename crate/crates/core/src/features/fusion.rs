use serde::{Deserialize, Serialize};

use super::map::DenseFeatureMap;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Non-negative source weights summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights")]
pub struct FusionWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

#[derive(Deserialize)]
struct RawWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl TryFrom<RawWeights> for FusionWeights {
    type Error = Error;

    fn try_from(w: RawWeights) -> Result<Self> {
        Self::new(w.alpha, w.beta, w.gamma)
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self { alpha: 1.0 / 2.0, beta: 1.0 / 3.0, gamma: 1.0 / 6.0 }
    }
}

impl FusionWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let all = [alpha, beta, gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("fusion weights must be finite and non-negative, got {all:?}")));
        }
        if (alpha + beta + gamma - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("fusion weights must sum to 1, got {}", alpha + beta + gamma)));
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Weights for the first two sources; the third receives the remainder.
    pub fn from_two(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha, beta, 1.0 - alpha - beta)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// Concatenates the L2-normalized sources scaled by the square roots of their weights,
/// so the dot product of two fused cells is the weighted mean of per-source cosines.
///
/// Sources are normalized here; passing already-normalized maps is harmless.
pub fn fuse<T: Real>(sources: [&DenseFeatureMap<T>; 3], weights: &FusionWeights) -> Result<DenseFeatureMap<T>> {
    let first = sources[0];
    for s in &sources[1..] {
        if (s.grid_h(), s.grid_w()) != (first.grid_h(), first.grid_w()) {
            return Err(Error::ShapeMismatch(format!(
                "fusion needs equal grids, got {}x{} and {}x{}",
                first.grid_h(),
                first.grid_w(),
                s.grid_h(),
                s.grid_w()
            )));
        }
    }
    let normalized: Vec<DenseFeatureMap<T>> = sources.iter().map(|s| s.l2_normalize().0).collect();
    let scales: Vec<T> = weights.as_array().iter().map(|w| T::lit(w.sqrt())).collect();
    let channels: usize = sources.iter().map(|s| s.channels()).sum();
    let mut values = Vec::with_capacity(first.cells() * channels);
    for i in 0..first.cells() {
        for (map, &s) in normalized.iter().zip(&scales) {
            values.extend(map.cell(i).iter().map(|&v| v * s));
        }
    }
    Ok(DenseFeatureMap::new(first.grid_h(), first.grid_w(), channels, first.patch_size(), values)?.with_origin(first.origin()))
}
