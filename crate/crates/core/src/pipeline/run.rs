use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EstimatorKind, PipelineConfig};
use super::manifest::{resolve, ImageEntry, Manifest};
use crate::canonicalize::{canonicalize_yaw, compensate_camera, FileAnswers, OracleEstimator, OrientationEstimator, YawCorrection};
use crate::error::{Error, Result};
use crate::eval::{AnnotationSet, ValidationCase};
use crate::features::{cyclic_filter, fuse, nn_match, predict_points, rasterize_vertex_descriptors, DenseFeatureMap};
use crate::geo_filter::{verify_candidates, CandidateMatch, LabelRecord, MeshView, Rejection, Verdict};
use crate::geometry::io::load_mesh_with_descriptors;
use crate::geometry::TriangleMesh;
use crate::pose::{refine_pose, PoseParams};
use crate::raster::{CameraModel, MaskImage};

/// Worker count from `GEOCORR_THREADS`, else the number of available cores.
pub fn worker_count() -> usize {
    std::env::var("GEOCORR_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Feature grid `(rows, cols, patch size)` with at most `cells` cells along the longer side.
pub fn grid_shape(height: usize, width: usize, cells: usize) -> (usize, usize, usize) {
    let ps = height.max(width).div_ceil(cells.max(1)).max(1);
    (height.div_ceil(ps), width.div_ceil(ps), ps)
}

/// One image after pose refinement, canonicalization and feature fusion.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub id: String,
    pub mesh: TriangleMesh<f64>,
    pub camera: CameraModel<f64>,
    pub pose: PoseParams<f64>,
    pub fused: DenseFeatureMap<f64>,
    /// Foreground cells of the feature grid.
    pub fg: MaskImage,
    pub bbox_hw: (f64, f64),
    pub correction: YawCorrection,
    pub final_dt_loss: f64,
    pub final_iou_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub id: String,
    pub error: Option<String>,
    pub correction: Option<YawCorrection>,
    pub pose: Option<PoseParams<f64>>,
    pub final_dt_loss: Option<f64>,
    pub final_iou_loss: Option<f64>,
}

/// Candidate flow through one filter stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub input: usize,
    pub kept: usize,
    pub rejected: BTreeMap<String, usize>,
}

impl StageStats {
    fn new(stage: &str, input: usize) -> Self {
        Self { stage: stage.into(), input, kept: 0, rejected: BTreeMap::new() }
    }

    fn reject(&mut self, reason: Rejection) {
        *self.rejected.entry(reason.as_str().into()).or_default() += 1;
    }

    /// `input == kept + sum(rejected)`.
    pub fn conserved(&self) -> bool {
        self.input == self.kept + self.rejected.values().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub src_img: String,
    pub tgt_img: String,
    /// Why the pair was skipped, if it was.
    pub error: Option<String>,
    pub stages: Vec<StageStats>,
}

/// Keypoint predictions of one annotated pair with the verdict of each filter stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairValidation {
    pub src_img: String,
    pub tgt_img: String,
    pub correct: Vec<bool>,
    pub kept_cyclic: Vec<bool>,
    pub kept: Vec<bool>,
}

/// Filters compared during validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationFilter {
    None,
    Cyclic,
    CyclicGeodesic,
}

impl ValidationFilter {
    pub const ALL: [ValidationFilter; 3] = [ValidationFilter::None, ValidationFilter::Cyclic, ValidationFilter::CyclicGeodesic];

    pub fn name(self) -> &'static str {
        match self {
            ValidationFilter::None => "none",
            ValidationFilter::Cyclic => "cyclic",
            ValidationFilter::CyclicGeodesic => "cyclic+geodesic",
        }
    }
}

impl PairValidation {
    pub fn case(&self, filter: ValidationFilter) -> ValidationCase {
        let kept = match filter {
            ValidationFilter::None => vec![true; self.correct.len()],
            ValidationFilter::Cyclic => self.kept_cyclic.clone(),
            ValidationFilter::CyclicGeodesic => self.kept.clone(),
        };
        ValidationCase { correct: self.correct.clone(), kept }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pairs_total: usize,
    pub pairs_ok: usize,
    pub labels_total: usize,
    pub labels_kept: usize,
    pub images: Vec<ImageReport>,
    pub pairs: Vec<PairReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub labels: Vec<LabelRecord>,
    pub validation: Vec<PairValidation>,
    pub images: Vec<PreparedImage>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn estimator(cfg: &PipelineConfig, id: &str, entry: &ImageEntry, root: &Path) -> Result<Option<Box<dyn OrientationEstimator>>> {
    Ok(match cfg.canonicalize.estimator {
        EstimatorKind::Skip => None,
        EstimatorKind::Oracle => Some(Box::new(OracleEstimator {
            sigma_deg: cfg.canonicalize.oracle_sigma_deg,
            seed: cfg.stream_seed("canonicalize", id),
            ..OracleEstimator::default()
        })),
        EstimatorKind::Answers => {
            let path = entry.answers.as_ref().ok_or_else(|| Error::Config(format!("image {id} has no answer file")))?;
            Some(Box::new(FileAnswers::load(resolve(root, path))?))
        }
    })
}

/// Refines the pose, canonicalizes yaw and fuses features of one image.
pub fn prepare_image(cfg: &PipelineConfig, id: &str, entry: &ImageEntry, root: &Path) -> Result<PreparedImage> {
    let mesh: TriangleMesh<f64> = load_mesh_with_descriptors(resolve(root, &entry.mesh), resolve(root, &entry.descriptors))?;
    let camera: CameraModel<f64> = read_json(&resolve(root, &entry.camera))?;
    camera.validate()?;
    let mask = MaskImage::read(resolve(root, &entry.mask))?;
    let init = match &entry.pose {
        Some(p) => read_json(&resolve(root, p))?,
        None => PoseParams::identity(),
    };
    let sources = [DenseFeatureMap::<f64>::read(resolve(root, &entry.features[0]))?, DenseFeatureMap::read(resolve(root, &entry.features[1]))?];

    let refined = refine_pose(&mesh, &camera, &mask, init, &cfg.refine)?;
    let (mut mesh, mut camera, mut pose) = (mesh, camera, refined.pose);
    let mut correction = YawCorrection::default();
    if let Some(est) = estimator(cfg, id, entry, root)? {
        let canon = canonicalize_yaw(&mesh, &camera, &pose, est.as_ref(), &cfg.canonicalize.config())?;
        if canon.correction.degrees() != 0 {
            let pivot = cfg.canonicalize.pivot.point(&mesh);
            (camera, pose) = compensate_camera(&camera, &pose, canon.correction.degrees() as f64, pivot);
        }
        correction = canon.correction;
        mesh = canon.mesh;
    }

    let (gh, gw, ps) = grid_shape(mask.height(), mask.width(), cfg.grid);
    let pf = rasterize_vertex_descriptors(&mesh, &camera, &pose, &mask, gh, gw, ps)?;
    let a = sources[0].resample(gh, gw, ps)?;
    let b = sources[1].resample(gh, gw, ps)?;
    let fused = fuse([&a, &b, &pf.map], &cfg.fusion)?;
    let (bh, bw) = mask.bbox_dims().ok_or_else(|| Error::Empty(format!("image {id} has an empty mask")))?;
    Ok(PreparedImage {
        id: id.into(),
        mesh,
        camera,
        pose,
        fused,
        fg: pf.foreground,
        bbox_hw: (bh as f64, bw as f64),
        correction,
        final_dt_loss: refined.final_dt_loss,
        final_iou_loss: refined.final_iou_loss,
    })
}

/// Kept flags of `all` given the kept subsequence returned by a filter.
fn kept_flags(all: &[CandidateMatch<f64>], kept: &[CandidateMatch<f64>]) -> Vec<bool> {
    let mut next = kept.iter().peekable();
    all.iter()
        .map(|c| {
            let hit = next.peek().is_some_and(|k| *k == c);
            if hit {
                next.next();
            }
            hit
        })
        .collect()
}

struct PairOutcome {
    stages: Vec<StageStats>,
    labels: Vec<LabelRecord>,
    validation: Option<PairValidation>,
}

fn process_pair(cfg: &PipelineConfig, src: &PreparedImage, tgt: &PreparedImage, annotations: Option<&AnnotationSet>) -> Result<PairOutcome> {
    let ps = src.fused.patch_size() as f64;
    let cands = nn_match(&src.fused, &tgt.fused, &src.fg, &tgt.fg)?;
    let cyc = cyclic_filter(&cands, &src.fused, &tgt.fused, &src.fg, src.bbox_hw, cfg.tau_cc, ps)?;
    let src_view = MeshView::new(&src.mesh, &src.camera, &src.pose);
    let tgt_view = MeshView::new(&tgt.mesh, &tgt.camera, &tgt.pose);
    let verdicts = verify_candidates(&cyc.kept, &src_view, &tgt_view, cfg.tau_geo)?;

    let mut cyclic = StageStats::new("cyclic", cands.len());
    let mut geodesic = StageStats::new("geodesic", cyc.kept.len());
    let mut labels = Vec::with_capacity(cands.len());
    let mut verdicts_iter = verdicts.iter();
    for (c, keep) in cands.iter().zip(kept_flags(&cands, &cyc.kept)) {
        if !keep {
            cyclic.reject(Rejection::Cyclic);
            let v = Verdict { cand: *c, rejection: Some(Rejection::Cyclic) };
            labels.push(LabelRecord::from_verdict(&src.id, &tgt.id, &v));
            continue;
        }
        cyclic.kept += 1;
        let v = verdicts_iter.next().expect("one verdict per cyclic survivor");
        match v.rejection {
            Some(r) => geodesic.reject(r),
            None => geodesic.kept += 1,
        }
        labels.push(LabelRecord::from_verdict(&src.id, &tgt.id, v));
    }

    let validation = match annotations {
        Some(a) if a.images.contains_key(&src.id) && a.images.contains_key(&tgt.id) => Some(validate_pair(cfg, src, tgt, a)?),
        _ => None,
    };
    Ok(PairOutcome { stages: vec![cyclic, geodesic], labels, validation })
}

/// Nearest-neighbor keypoint transfer checked by each filter stage.
fn validate_pair(cfg: &PipelineConfig, src: &PreparedImage, tgt: &PreparedImage, ann: &AnnotationSet) -> Result<PairValidation> {
    let (points, gt) = ann.pair_keypoints(&src.id, &tgt.id)?;
    let preds = predict_points(&src.fused, &tgt.fused, &tgt.fg, &points)?;
    let gt_points = gt.visible();
    let mut correct = Vec::with_capacity(points.len());
    let mut cands = Vec::new();
    let mut slots = Vec::new();
    for (i, pred) in preds.iter().enumerate() {
        correct.push(pred.is_some_and(|p| gt.is_correct(p, gt_points[i], 0.1)));
        if let Some(p) = pred {
            cands.push(CandidateMatch::new(points[i], *p));
            slots.push(i);
        }
    }
    let mut kept_cyclic = vec![false; points.len()];
    let mut kept = vec![false; points.len()];
    if !cands.is_empty() {
        let cyc = cyclic_filter(&cands, &src.fused, &tgt.fused, &src.fg, src.bbox_hw, cfg.tau_cc, src.fused.patch_size() as f64)?;
        let src_view = MeshView::new(&src.mesh, &src.camera, &src.pose);
        let tgt_view = MeshView::new(&tgt.mesh, &tgt.camera, &tgt.pose);
        let verdicts = verify_candidates(&cands, &src_view, &tgt_view, cfg.tau_geo)?;
        for ((&slot, c), v) in slots.iter().zip(kept_flags(&cands, &cyc.kept)).zip(&verdicts) {
            kept_cyclic[slot] = c;
            kept[slot] = c && v.kept();
        }
    }
    Ok(PairValidation { src_img: src.id.clone(), tgt_img: tgt.id.clone(), correct, kept_cyclic, kept })
}

/// Runs every stage for every pair of `manifest` on `workers` threads.
///
/// A pair whose inputs fail to load or process is skipped with its reason recorded.
/// Outputs follow manifest order regardless of the worker count.
pub fn run_pipeline(cfg: &PipelineConfig, manifest: &Manifest, root: &Path, workers: usize) -> Result<RunOutput> {
    cfg.validate()?;
    manifest.validate()?;
    let root = cfg.input_root.clone().unwrap_or_else(|| root.to_path_buf());
    let annotations = manifest.annotations.as_ref().map(|p| AnnotationSet::read(resolve(&root, p))).transpose()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let ids = manifest.used_images();
    let prepared: Vec<std::result::Result<PreparedImage, String>> = pool.install(|| {
        ids.par_iter()
            .map(|&id| {
                let entry = manifest.images.get(id).ok_or_else(|| format!("image {id} is not listed"))?;
                prepare_image(cfg, id, entry, &root).map_err(|e| e.to_string())
            })
            .collect()
    });
    for (id, p) in ids.iter().zip(&prepared) {
        if let Err(e) = p {
            log::warn!("image {id} skipped: {e}");
        }
    }
    let lookup: BTreeMap<&str, &std::result::Result<PreparedImage, String>> = ids.iter().copied().zip(&prepared).collect();

    let outcomes: Vec<std::result::Result<PairOutcome, String>> = pool.install(|| {
        manifest
            .pairs
            .par_iter()
            .map(|(s, t)| {
                let get = |id: &str| match lookup[id] {
                    Ok(img) => Ok(img),
                    Err(e) => Err(format!("image {id}: {e}")),
                };
                let (src, tgt) = (get(s)?, get(t)?);
                process_pair(cfg, src, tgt, annotations.as_ref()).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut labels = Vec::new();
    let mut validation = Vec::new();
    let mut pairs = Vec::with_capacity(outcomes.len());
    for ((s, t), outcome) in manifest.pairs.iter().zip(outcomes) {
        let mut report = PairReport { src_img: s.clone(), tgt_img: t.clone(), error: None, stages: Vec::new() };
        match outcome {
            Ok(o) => {
                report.stages = o.stages;
                labels.extend(o.labels);
                validation.extend(o.validation);
            }
            Err(e) => {
                log::warn!("pair {s} -> {t} skipped: {e}");
                report.error = Some(e);
            }
        }
        pairs.push(report);
    }
    let images: Vec<ImageReport> = ids
        .iter()
        .zip(&prepared)
        .map(|(id, p)| match p {
            Ok(img) => ImageReport {
                id: id.to_string(),
                error: None,
                correction: Some(img.correction),
                pose: Some(img.pose),
                final_dt_loss: Some(img.final_dt_loss),
                final_iou_loss: Some(img.final_iou_loss),
            },
            Err(e) => ImageReport { id: id.to_string(), error: Some(e.clone()), correction: None, pose: None, final_dt_loss: None, final_iou_loss: None },
        })
        .collect();
    let report = RunReport {
        pairs_total: pairs.len(),
        pairs_ok: pairs.iter().filter(|p| p.error.is_none()).count(),
        labels_total: labels.len(),
        labels_kept: labels.iter().filter(|l| l.kept).count(),
        images,
        pairs,
    };
    Ok(RunOutput { report, labels, validation, images: prepared.into_iter().flatten().collect() })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Parse(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub const LABELS_FILE: &str = "labels.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const VALIDATION_FILE: &str = "validation.jsonl";

pub fn fused_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("fused").join(format!("{id}.gcfm"))
}

pub fn cells_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("cells").join(format!("{id}.pgm"))
}

/// Writes labels, the run report, validation records and per-image fused maps.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<()> {
    for sub in [dir.to_path_buf(), dir.join("fused"), dir.join("cells")] {
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    write_jsonl(&dir.join(LABELS_FILE), &out.labels)?;
    write_jsonl(&dir.join(VALIDATION_FILE), &out.validation)?;
    let report_path = dir.join(REPORT_FILE);
    let mut text = serde_json::to_string_pretty(&out.report).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::File::create(&report_path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(&report_path, e))?;
    for img in &out.images {
        img.fused.write(fused_path(dir, &img.id))?;
        img.fg.write(cells_path(dir, &img.id))?;
    }
    Ok(())
}
