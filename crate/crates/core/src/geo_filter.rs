//! Geometric verification of candidate matches: lifting onto meshes, cross-mesh
//! descriptor matching, bicyclic geodesic error, and threshold filtering.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dominant_vertex, raycast, GeodesicCache, SurfacePoint, TriangleMesh};
use crate::pose::PoseParams;
use crate::raster::CameraModel;
use crate::scalar::{Real, Vec2};

/// A proposed pixel correspondence and what verification learned about it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateMatch<T> {
    pub p_src: Vec2<T>,
    pub p_tgt: Vec2<T>,
    pub lifted_src: Option<SurfacePoint<T>>,
    pub lifted_tgt: Option<SurfacePoint<T>>,
    pub snapped_src: Option<usize>,
    pub snapped_tgt: Option<usize>,
    pub geo_error: Option<T>,
}

impl<T: Real> CandidateMatch<T> {
    pub fn new(p_src: Vec2<T>, p_tgt: Vec2<T>) -> Self {
        Self { p_src, p_tgt, lifted_src: None, lifted_tgt: None, snapped_src: None, snapped_tgt: None, geo_error: None }
    }
}

/// Why a candidate was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rejection {
    #[serde(rename = "cyclic")]
    Cyclic,
    #[serde(rename = "ray miss")]
    RayMiss,
    #[serde(rename = "geodesic")]
    Geodesic,
}

impl Rejection {
    pub const ALL: [Rejection; 3] = [Rejection::Cyclic, Rejection::RayMiss, Rejection::Geodesic];

    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::Cyclic => "cyclic",
            Rejection::RayMiss => "ray miss",
            Rejection::Geodesic => "geodesic",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A mesh placed in an image by its camera and refined pose.
#[derive(Debug, Clone, Copy)]
pub struct MeshView<'a, T: Real> {
    pub mesh: &'a TriangleMesh<T>,
    pub camera: &'a CameraModel<T>,
    pub pose: &'a PoseParams<T>,
}

impl<'a, T: Real> MeshView<'a, T> {
    pub fn new(mesh: &'a TriangleMesh<T>, camera: &'a CameraModel<T>, pose: &'a PoseParams<T>) -> Self {
        Self { mesh, camera, pose }
    }

    /// Nearest surface point seen through a pixel.
    pub fn lift(&self, pixel: Vec2<T>) -> Option<SurfacePoint<T>> {
        let ray = self.camera.pixel_ray(self.pose, pixel)?;
        raycast(self.mesh, ray.origin, ray.direction)
    }
}

/// Casts both pixels onto their meshes and snaps each hit to its dominant vertex.
pub fn lift_match<T: Real>(
    cand: &CandidateMatch<T>,
    src: &MeshView<'_, T>,
    tgt: &MeshView<'_, T>,
) -> std::result::Result<CandidateMatch<T>, Rejection> {
    let hit_src = src.lift(cand.p_src).ok_or(Rejection::RayMiss)?;
    let hit_tgt = tgt.lift(cand.p_tgt).ok_or(Rejection::RayMiss)?;
    Ok(CandidateMatch {
        lifted_src: Some(hit_src),
        lifted_tgt: Some(hit_tgt),
        snapped_src: Some(dominant_vertex(&hit_src, src.mesh)),
        snapped_tgt: Some(dominant_vertex(&hit_tgt, tgt.mesh)),
        ..*cand
    })
}

fn cosine_argmax<T: Real>(query: &[T], mesh: &TriangleMesh<T>) -> Result<usize> {
    let d = mesh.descriptors().ok_or(Error::MissingDescriptors)?;
    if d.dim() != query.len() {
        return Err(Error::DimensionMismatch { expected: query.len(), got: d.dim() });
    }
    let qn = query.iter().map(|&v| v * v).sum::<T>().sqrt();
    let mut best = 0;
    let mut best_sim = T::neg_infinity();
    for v in 0..d.len() {
        let row = d.row(v);
        let rn = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        let dot: T = row.iter().zip(query).map(|(&a, &b)| a * b).sum();
        let sim = if rn > T::zero() && qn > T::zero() { dot / (rn * qn) } else { T::zero() };
        if sim > best_sim {
            best = v;
            best_sim = sim;
        }
    }
    Ok(best)
}

/// Target vertex whose descriptor has the highest cosine similarity with the source
/// descriptor interpolated at `point`. Ties go to the smaller index.
pub fn cross_mesh_nn<T: Real>(point: &SurfacePoint<T>, src: &TriangleMesh<T>, tgt: &TriangleMesh<T>) -> Result<usize> {
    let d = src.descriptors().ok_or(Error::MissingDescriptors)?;
    let query = d.interpolate(src.faces()[point.face], point.bary);
    cosine_argmax(&query, tgt)
}

/// Scores lifted candidates of one image pair, sharing geodesic solves between them.
#[derive(Debug)]
pub struct BicyclicScorer<'m, T: Real> {
    src: GeodesicCache<'m, T>,
    tgt: GeodesicCache<'m, T>,
}

impl<'m, T: Real> BicyclicScorer<'m, T> {
    pub fn new(src: &'m TriangleMesh<T>, tgt: &'m TriangleMesh<T>) -> Self {
        Self { src: GeodesicCache::new(src), tgt: GeodesicCache::new(tgt) }
    }

    /// `(d_fwd / diag_tgt + d_bwd / diag_src) / 2`, where `d_fwd` is the target geodesic
    /// between the descriptor match of the source hit and the snapped target vertex, and
    /// `d_bwd` the same in the other direction. `+inf` when either is unreachable.
    pub fn score(&mut self, cand: &CandidateMatch<T>) -> Result<T> {
        let missing = || Error::Undefined("bicyclic error needs both sides lifted".into());
        let (ls, lt) = (cand.lifted_src.ok_or_else(missing)?, cand.lifted_tgt.ok_or_else(missing)?);
        let (ss, st) = (cand.snapped_src.ok_or_else(missing)?, cand.snapped_tgt.ok_or_else(missing)?);
        let (src, tgt) = (self.src.mesh(), self.tgt.mesh());
        let fwd_pred = cross_mesh_nn(&ls, src, tgt)?;
        let bwd_pred = cross_mesh_nn(&lt, tgt, src)?;
        let d_fwd = self.tgt.distance(fwd_pred, st)?;
        let d_bwd = self.src.distance(bwd_pred, ss)?;
        if !d_fwd.is_finite() || !d_bwd.is_finite() {
            return Ok(T::infinity());
        }
        Ok((d_fwd / tgt.diag() + d_bwd / src.diag()) / T::lit(2.0))
    }

    /// Distinct geodesic sources solved on (source, target) meshes so far.
    pub fn solves(&self) -> (usize, usize) {
        (self.src.sources(), self.tgt.sources())
    }
}

/// One-off bicyclic error; prefer [`BicyclicScorer`] for many candidates.
pub fn bicyclic_error<T: Real>(cand: &CandidateMatch<T>, src: &TriangleMesh<T>, tgt: &TriangleMesh<T>) -> Result<T> {
    BicyclicScorer::new(src, tgt).score(cand)
}

/// Candidates split by the error threshold (`error <= tau` is kept).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome<T> {
    pub kept: Vec<CandidateMatch<T>>,
    pub rejected: Vec<CandidateMatch<T>>,
}

pub fn geodesic_filter<T: Real>(cands: &[CandidateMatch<T>], tau: T) -> Result<FilterOutcome<T>> {
    let mut out = FilterOutcome { kept: Vec::new(), rejected: Vec::new() };
    for c in cands {
        let e = c.geo_error.ok_or_else(|| Error::Undefined("candidate has no geodesic error".into()))?;
        if e <= tau {
            out.kept.push(*c);
        } else {
            log::debug!("rejected {:?} -> {:?}: geodesic error {}", c.p_src, c.p_tgt, e);
            out.rejected.push(*c);
        }
    }
    Ok(out)
}

/// Result of full verification for one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict<T> {
    pub cand: CandidateMatch<T>,
    pub rejection: Option<Rejection>,
}

impl<T> Verdict<T> {
    pub fn kept(&self) -> bool {
        self.rejection.is_none()
    }
}

/// Lifts, scores and thresholds every candidate, preserving input order.
pub fn verify_candidates<T: Real>(
    cands: &[CandidateMatch<T>],
    src: &MeshView<'_, T>,
    tgt: &MeshView<'_, T>,
    tau: T,
) -> Result<Vec<Verdict<T>>> {
    let mut scorer = BicyclicScorer::new(src.mesh, tgt.mesh);
    cands
        .iter()
        .map(|c| match lift_match(c, src, tgt) {
            Err(r) => Ok(Verdict { cand: *c, rejection: Some(r) }),
            Ok(mut lifted) => {
                let e = scorer.score(&lifted)?;
                lifted.geo_error = Some(e);
                let rejection = (!(e <= tau)).then_some(Rejection::Geodesic);
                Ok(Verdict { cand: lifted, rejection })
            }
        })
        .collect()
}

/// A verified correspondence used as training supervision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub p_src: [f64; 2],
    pub p_tgt: [f64; 2],
    pub geo_error: f64,
}

/// Kept correspondences of one image pair with the thresholds that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub src_img: String,
    pub tgt_img: String,
    pub tau_geo: f64,
    pub tau_cc: f64,
    pub pairs: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn from_verdicts<T: Real>(src_img: &str, tgt_img: &str, tau_geo: f64, tau_cc: f64, verdicts: &[Verdict<T>]) -> Self {
        let pairs = verdicts
            .iter()
            .filter(|v| v.kept())
            .map(|v| PseudoLabel {
                p_src: v.cand.p_src.map(|x| x.as_f64()),
                p_tgt: v.cand.p_tgt.map(|x| x.as_f64()),
                geo_error: v.cand.geo_error.map_or(f64::NAN, |e| e.as_f64()),
            })
            .collect();
        Self { src_img: src_img.into(), tgt_img: tgt_img.into(), tau_geo, tau_cc, pairs }
    }
}

/// One line of the label JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub src_img: String,
    pub tgt_img: String,
    pub p_src: [f64; 2],
    pub p_tgt: [f64; 2],
    /// `None` when unavailable or infinite.
    pub geo_error: Option<f64>,
    pub kept: bool,
    pub reason: Option<Rejection>,
}

impl LabelRecord {
    pub fn from_verdict<T: Real>(src_img: &str, tgt_img: &str, v: &Verdict<T>) -> Self {
        Self {
            src_img: src_img.into(),
            tgt_img: tgt_img.into(),
            p_src: v.cand.p_src.map(|x| x.as_f64()),
            p_tgt: v.cand.p_tgt.map(|x| x.as_f64()),
            geo_error: v.cand.geo_error.map(|e| e.as_f64()).filter(|e| e.is_finite()),
            kept: v.kept(),
            reason: v.rejection,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Descriptors;

    fn strip2(desc: Option<Vec<Vec<f64>>>) -> TriangleMesh<f64> {
        let m = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]],
            vec![[0, 1, 2], [2, 1, 3]],
            None,
        )
        .unwrap();
        m.with_descriptors(desc.map(|d| Descriptors::from_rows(&d).unwrap())).unwrap()
    }

    fn at_vertex(mesh: &TriangleMesh<f64>, v: usize) -> (SurfacePoint<f64>, usize) {
        let face = mesh.faces().iter().position(|f| f.contains(&v)).unwrap();
        let k = mesh.faces()[face].iter().position(|&x| x == v).unwrap();
        let mut bary = [0.0; 3];
        bary[k] = 1.0;
        (SurfacePoint::on_face(mesh, face, bary), v)
    }

    fn lifted(src: &TriangleMesh<f64>, vs: usize, tgt: &TriangleMesh<f64>, vt: usize) -> CandidateMatch<f64> {
        let (ps, _) = at_vertex(src, vs);
        let (pt, _) = at_vertex(tgt, vt);
        CandidateMatch {
            lifted_src: Some(ps),
            lifted_tgt: Some(pt),
            snapped_src: Some(vs),
            snapped_tgt: Some(vt),
            ..CandidateMatch::new([0.0, 0.0], [0.0, 0.0])
        }
    }

    #[test]
    fn one_hot_targets() {
        let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
        let m = strip2(Some(eye));
        for v in 0..4 {
            let (p, _) = at_vertex(&m, v);
            assert_eq!(cross_mesh_nn(&p, &m, &m).unwrap(), v);
        }
        let other = strip2(Some(vec![vec![1.0, 0.0]; 4]));
        let (p, _) = at_vertex(&m, 0);
        assert!(matches!(cross_mesh_nn(&p, &m, &other), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(cross_mesh_nn(&p, &m, &strip2(None)), Err(Error::MissingDescriptors)));
    }

    #[test]
    fn self_match_scores_zero() {
        let m = strip2(Some(vec![vec![1.0, 0.1], vec![0.2, 1.0], vec![-1.0, 0.3], vec![0.1, -1.0]]));
        for v in 0..4 {
            assert_eq!(bicyclic_error(&lifted(&m, v, &m, v), &m, &m).unwrap(), 0.0);
        }
    }

    #[test]
    fn one_edge_off_on_the_strip() {
        // Descriptors send every vertex to itself; the target hit is snapped one unit
        // edge away (0 -> 2) while the source side agrees.
        let m = strip2(Some(vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]));
        let mut c = lifted(&m, 0, &m, 0);
        c.snapped_tgt = Some(2);
        let diag = 2f64.sqrt();
        // Forward: NN(v_s = 0) = 0, geodesic to snapped 2 is 1. Backward: NN(hit at 0) = 0,
        // snapped source 0, distance 0.
        let e = bicyclic_error(&c, &m, &m).unwrap();
        assert!((e - 0.5 * (1.0 / diag + 0.0 / diag)).abs() < 1e-12, "{e}");
    }

    #[test]
    fn unlifted_candidate_is_an_error() {
        let m = strip2(Some(vec![vec![1.0]; 4]));
        assert!(bicyclic_error(&CandidateMatch::new([0.0, 0.0], [1.0, 1.0]), &m, &m).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let mk = |e: f64| CandidateMatch { geo_error: Some(e), ..CandidateMatch::new([0.0, 0.0], [0.0, 0.0]) };
        let out = geodesic_filter(&[mk(0.0), mk(0.05), mk(0.0500001), mk(f64::INFINITY)], 0.05).unwrap();
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.rejected.len(), 2);
        assert!(geodesic_filter(&[CandidateMatch::new([0.0, 0.0], [0.0, 0.0])], 0.05).is_err());
    }

    #[test]
    fn label_record_json_shape() {
        let v = Verdict {
            cand: CandidateMatch { geo_error: Some(f64::INFINITY), ..CandidateMatch::new([1.0, 2.0], [3.0, 4.0]) },
            rejection: Some(Rejection::Geodesic),
        };
        let r = LabelRecord::from_verdict("a", "b", &v);
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"src_img":"a","tgt_img":"b","p_src":[1.0,2.0],"p_tgt":[3.0,4.0],"geo_error":null,"kept":false,"reason":"geodesic"}"#
        );
        let miss = Verdict { cand: CandidateMatch::<f64>::new([0.0, 0.0], [0.0, 0.0]), rejection: Some(Rejection::RayMiss) };
        assert!(serde_json::to_string(&LabelRecord::from_verdict("a", "b", &miss)).unwrap().contains(r#""reason":"ray miss""#));
    }
}
