//! Discrete yaw canonicalization by voting over eight rendered views.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::pose::PoseParams;
use crate::raster::{render_coverage, CameraModel, MaskImage};
use crate::scalar::{mat_mul, mat_vec, transpose, Real, Vec3};

/// Known yaws of the rendered views, in degrees.
pub const VIEW_YAWS: [f64; 8] = [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0];

/// Canonicalization aborts when the estimator fails on this many views.
pub const MAX_FAILED_VIEWS: usize = 5;

/// One of the four discrete yaw corrections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct YawCorrection(u16);

impl YawCorrection {
    pub const ALL: [YawCorrection; 4] = [YawCorrection(0), YawCorrection(90), YawCorrection(180), YawCorrection(270)];

    pub fn new(degrees: u16) -> Option<Self> {
        matches!(degrees, 0 | 90 | 180 | 270).then_some(Self(degrees))
    }

    pub fn degrees(self) -> u16 {
        self.0
    }

    /// The correction that undoes this one.
    pub fn inverse(self) -> Self {
        Self((360 - self.0) % 360)
    }
}

impl TryFrom<u16> for YawCorrection {
    type Error = String;

    fn try_from(v: u16) -> std::result::Result<Self, String> {
        Self::new(v).ok_or_else(|| format!("yaw correction must be 0, 90, 180 or 270, got {v}"))
    }
}

impl From<YawCorrection> for u16 {
    fn from(c: YawCorrection) -> u16 {
        c.0
    }
}

impl fmt::Display for YawCorrection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}°", self.0)
    }
}

/// Angular distance on the circle, in `[0, 180]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

/// The correction bringing the estimated yaw closest to the known one; ties go to the
/// smaller correction.
pub fn best_correction(estimated: f64, known: f64) -> YawCorrection {
    let mut best = YawCorrection::ALL[0];
    let mut best_dist = f64::INFINITY;
    for c in YawCorrection::ALL {
        let d = circular_distance(estimated + c.degrees() as f64, known);
        if d < best_dist {
            best = c;
            best_dist = d;
        }
    }
    best
}

/// Most frequent correction; ties go to the smaller angle. `None` when empty.
pub fn vote(corrections: &[YawCorrection]) -> Option<YawCorrection> {
    let mut counts: BTreeMap<YawCorrection, usize> = BTreeMap::new();
    for &c in corrections {
        *counts.entry(c).or_default() += 1;
    }
    // BTreeMap iterates in ascending angle, so `>` keeps the smallest among equals.
    let mut best: Option<(YawCorrection, usize)> = None;
    for (c, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c)
}

/// Point about which yaw rotations are applied.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pivot {
    #[default]
    AabbCenter,
    Origin,
}

impl Pivot {
    pub fn point<T: Real>(self, mesh: &TriangleMesh<T>) -> Vec3<T> {
        match self {
            Pivot::AabbCenter => mesh.aabb_center(),
            Pivot::Origin => [T::zero(); 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanonicalizeConfig {
    pub pivot: Pivot,
    /// Added to each view's known yaw before comparing with the estimate, to
    /// match the estimator's azimuth zero.
    pub azimuth_offset_deg: f64,
}

impl Default for CanonicalizeConfig {
    fn default() -> Self {
        Self { pivot: Pivot::AabbCenter, azimuth_offset_deg: 0.0 }
    }
}

/// Rotation about the vertical axis: `x' = cos x + sin z`, `z' = -sin x + cos z`.
/// Multiples of 90° use exact entries.
pub fn yaw_matrix<T: Real>(degrees: f64) -> [[T; 3]; 3] {
    let r = degrees.rem_euclid(360.0);
    let (s, c) = match r {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        _ => r.to_radians().sin_cos(),
    };
    let (s, c) = (T::lit(s), T::lit(c));
    [[c, T::zero(), s], [T::zero(), T::one(), T::zero()], [-s, T::zero(), c]]
}

/// Rotates every vertex by `degrees` of yaw about `pivot`.
pub fn rotate_yaw<T: Real>(mesh: &TriangleMesh<T>, degrees: f64, pivot: Pivot) -> Result<TriangleMesh<T>> {
    let r = yaw_matrix::<T>(degrees);
    let c = pivot.point(mesh);
    mesh.map_vertices(|p| {
        let q = mat_vec(&r, [p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
        [q[0] + c[0], q[1] + c[1], q[2] + c[2]]
    })
}

/// Camera and pose under which the mesh rotated by `degrees` about `pivot` projects
/// exactly like the unrotated mesh under `camera` and `pose`.
pub fn compensate_camera<T: Real>(
    camera: &CameraModel<T>,
    pose: &PoseParams<T>,
    degrees: f64,
    pivot: Vec3<T>,
) -> (CameraModel<T>, PoseParams<T>) {
    let ry = yaw_matrix::<T>(degrees);
    let s = pose.scale();
    let mut cam = camera.clone();
    cam.rotation = mat_mul(&camera.rotation, &transpose(&ry));
    let sc = [s * pivot[0], s * pivot[1], s * pivot[2]];
    let moved = mat_vec(&ry, [sc[0] + pose.translation[0], sc[1] + pose.translation[1], sc[2] + pose.translation[2]]);
    let translation = [moved[0] - sc[0], moved[1] - sc[1], moved[2] - sc[2]];
    (cam, PoseParams { log_scale: pose.log_scale, translation })
}

/// A view handed to an orientation estimator.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub index: usize,
    /// Yaw (degrees) applied to the object for this view.
    pub known_yaw: f64,
    pub mask: MaskImage,
}

/// Estimates the yaw of the object shown in a view, in degrees.
pub trait OrientationEstimator {
    fn estimate(&self, view: &RenderedView) -> Result<f64>;
}

/// Test estimator that knows the object's true yaw offset.
#[derive(Debug, Clone, Default)]
pub struct OracleEstimator {
    /// Yaw of the mesh relative to the canonical frame, in degrees.
    pub offset_deg: f64,
    /// Standard deviation of the Gaussian noise added to each answer.
    pub sigma_deg: f64,
    pub seed: u64,
    /// Per-view answers that replace the oracle's.
    pub overrides: BTreeMap<usize, f64>,
    /// Views on which the estimator reports failure.
    pub failing: Vec<usize>,
}

impl OracleEstimator {
    pub fn perfect(offset_deg: f64) -> Self {
        Self { offset_deg, ..Self::default() }
    }

    /// Corrupts `count` distinct views, each answering with a seeded wrong correction.
    pub fn with_random_corruption(mut self, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut views: Vec<usize> = (0..VIEW_YAWS.len()).collect();
        for i in 0..count.min(views.len()) {
            let j = rng.random_range(i..views.len());
            views.swap(i, j);
            let wrong = 90.0 * rng.random_range(1..4) as f64;
            let v = views[i];
            self.overrides.insert(v, (VIEW_YAWS[v] + self.offset_deg + wrong).rem_euclid(360.0));
        }
        self
    }
}

impl OrientationEstimator for OracleEstimator {
    fn estimate(&self, view: &RenderedView) -> Result<f64> {
        if self.failing.contains(&view.index) {
            return Err(Error::Estimator(format!("oracle told to fail on view {}", view.index)));
        }
        if let Some(&y) = self.overrides.get(&view.index) {
            return Ok(y);
        }
        let noise = if self.sigma_deg > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (view.index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            Normal::new(0.0, self.sigma_deg).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng)
        } else {
            0.0
        };
        Ok((view.known_yaw + self.offset_deg + noise).rem_euclid(360.0))
    }
}

/// Bridges an external estimator: views are written as PGM files into a directory and
/// answers are read from a JSON file `{"yaws": [y0, ..., y7]}` (null marks a failure).
#[derive(Debug, Clone)]
pub struct FileAnswers {
    yaws: Vec<Option<f64>>,
    view_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
struct AnswerFile {
    yaws: Vec<Option<f64>>,
}

impl FileAnswers {
    pub fn load(answers: impl AsRef<Path>) -> Result<Self> {
        let path = answers.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: AnswerFile = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if parsed.yaws.len() != VIEW_YAWS.len() {
            return Err(Error::Parse(format!("expected {} yaws, got {}", VIEW_YAWS.len(), parsed.yaws.len())));
        }
        Ok(Self { yaws: parsed.yaws, view_dir: None })
    }

    /// Also write every queried view to `dir` as `view_<index>.pgm`.
    pub fn with_view_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.view_dir = Some(dir.into());
        self
    }
}

impl OrientationEstimator for FileAnswers {
    fn estimate(&self, view: &RenderedView) -> Result<f64> {
        if let Some(dir) = &self.view_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            view.mask.write(dir.join(format!("view_{}.pgm", view.index)))?;
        }
        match self.yaws.get(view.index).copied().flatten() {
            Some(y) if y.is_finite() => Ok(y.rem_euclid(360.0)),
            _ => Err(Error::Estimator(format!("no answer for view {}", view.index))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewVote {
    pub index: usize,
    pub known_yaw: f64,
    pub estimate: Option<f64>,
    pub correction: Option<YawCorrection>,
}

#[derive(Debug, Clone)]
pub struct Canonicalized<T: Real> {
    pub mesh: TriangleMesh<T>,
    pub correction: YawCorrection,
    pub votes: Vec<ViewVote>,
}

/// Renders the mesh at the eight view yaws, asks the estimator for each, and rotates
/// the mesh by the majority correction.
pub fn canonicalize_yaw<T: Real>(
    mesh: &TriangleMesh<T>,
    camera: &CameraModel<T>,
    pose: &PoseParams<T>,
    estimator: &dyn OrientationEstimator,
    cfg: &CanonicalizeConfig,
) -> Result<Canonicalized<T>> {
    let mut votes = Vec::with_capacity(VIEW_YAWS.len());
    for (index, &known_yaw) in VIEW_YAWS.iter().enumerate() {
        let rotated = rotate_yaw(mesh, known_yaw, cfg.pivot)?;
        let view = RenderedView { index, known_yaw, mask: render_coverage(&rotated, camera, pose)? };
        let estimate = match estimator.estimate(&view) {
            Ok(y) if y.is_finite() => Some(y.rem_euclid(360.0)),
            Ok(y) => {
                log::warn!("view {index}: estimator returned {y}");
                None
            }
            Err(e) => {
                log::warn!("view {index}: {e}");
                None
            }
        };
        let correction = estimate.map(|y| best_correction(y, known_yaw + cfg.azimuth_offset_deg));
        votes.push(ViewVote { index, known_yaw, estimate, correction });
    }
    let failed = votes.iter().filter(|v| v.correction.is_none()).count();
    if failed >= MAX_FAILED_VIEWS {
        return Err(Error::EstimatorFailure { failed, total: votes.len() });
    }
    let corrections: Vec<YawCorrection> = votes.iter().filter_map(|v| v.correction).collect();
    let correction = vote(&corrections).expect("at least one successful view");
    let mesh = if correction.degrees() == 0 {
        mesh.clone()
    } else {
        rotate_yaw(mesh, correction.degrees() as f64, cfg.pivot)?
    };
    Ok(Canonicalized { mesh, correction, votes })
}
