//! Keypoint transfer accuracy and filter validation metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keypoints of one image with its object bounding box.
///
/// Keypoint `k` denotes the same semantic part in every image of a category;
/// `None` marks a keypoint that is not visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointAnnotation {
    /// Object bounding box `[height, width]` in pixels.
    pub bbox_hw: [f64; 2],
    pub keypoints: Vec<Option<[f64; 2]>>,
}

impl KeypointAnnotation {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.bbox_hw;
        if !(h > 0.0 && w > 0.0 && h.is_finite() && w.is_finite()) {
            return Err(Error::Parse(format!("bounding box must be positive, got {h}x{w}")));
        }
        if self.keypoints.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite keypoint".into()));
        }
        Ok(())
    }

    pub fn visible(&self) -> Vec<[f64; 2]> {
        self.keypoints.iter().flatten().copied().collect()
    }

    /// Distance within which a prediction counts as correct.
    pub fn threshold(&self, alpha: f64) -> f64 {
        alpha * self.bbox_hw[0].max(self.bbox_hw[1])
    }

    pub fn is_correct(&self, pred: [f64; 2], gt: [f64; 2], alpha: f64) -> bool {
        (pred[0] - gt[0]).hypot(pred[1] - gt[1]) <= self.threshold(alpha)
    }
}

/// Share of predictions within `alpha * max(h, w)` of the visible keypoints, in order.
pub fn pck(predictions: &[[f64; 2]], gt: &KeypointAnnotation, alpha: f64) -> Result<f64> {
    let visible = gt.visible();
    if predictions.len() != visible.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} visible keypoints",
            predictions.len(),
            visible.len()
        )));
    }
    if visible.is_empty() {
        return Err(Error::Empty("no visible keypoints".into()));
    }
    let hits = predictions.iter().zip(&visible).filter(|(p, g)| gt.is_correct(**p, **g, alpha)).count();
    Ok(hits as f64 / visible.len() as f64)
}

/// Corpus PCK: per-image values averaged, or pooled over all keypoints when
/// `per_keypoint` is set.
pub fn corpus_pck(items: &[(Vec<[f64; 2]>, KeypointAnnotation)], alpha: f64, per_keypoint: bool) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("no images to evaluate".into()));
    }
    if per_keypoint {
        let (mut hits, mut total) = (0.0, 0usize);
        for (preds, gt) in items {
            let n = gt.visible().len();
            hits += pck(preds, gt, alpha)? * n as f64;
            total += n;
        }
        return Ok(hits / total as f64);
    }
    let mut sum = 0.0;
    for (preds, gt) in items {
        sum += pck(preds, gt, alpha)?;
    }
    Ok(sum / items.len() as f64)
}

/// Annotation file: keypoints per image id and the evaluated `(source, target)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: BTreeMap<String, KeypointAnnotation>,
    #[serde(default)]
    pub pairs: Vec<(String, String)>,
}

impl AnnotationSet {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: Self = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for (id, a) in &self.images {
            a.validate().map_err(|e| Error::Parse(format!("image {id}: {e}")))?;
        }
        for (s, t) in &self.pairs {
            for id in [s, t] {
                if !self.images.contains_key(id) {
                    return Err(Error::Parse(format!("pair references unknown image {id}")));
                }
            }
            let (a, b) = (&self.images[s], &self.images[t]);
            if a.keypoints.len() != b.keypoints.len() {
                return Err(Error::Parse(format!("images {s} and {t} have different keypoint counts")));
            }
        }
        Ok(())
    }

    /// Source and target positions of keypoints visible in both images, plus the target
    /// annotation restricted to them.
    pub fn pair_keypoints(&self, src: &str, tgt: &str) -> Result<(Vec<[f64; 2]>, KeypointAnnotation)> {
        let a = self.images.get(src).ok_or_else(|| Error::Parse(format!("unknown image {src}")))?;
        let b = self.images.get(tgt).ok_or_else(|| Error::Parse(format!("unknown image {tgt}")))?;
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        for (p, q) in a.keypoints.iter().zip(&b.keypoints) {
            if let (Some(p), Some(q)) = (p, q) {
                sources.push(*p);
                targets.push(Some(*q));
            }
        }
        Ok((sources, KeypointAnnotation { bbox_hw: b.bbox_hw, keypoints: targets }))
    }
}

/// Per-pair outcome of one filter on nearest-neighbour keypoint predictions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationCase {
    /// Whether each prediction is correct under the validation PCK threshold.
    pub correct: Vec<bool>,
    /// Whether the filter kept each prediction.
    pub kept: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterValidation {
    pub pairs: usize,
    pub predictions: usize,
    pub wrong: usize,
    pub kept: usize,
    pub wrong_kept: usize,
    /// Share of kept predictions that are wrong (0 when nothing is kept).
    pub fpr: f64,
    /// Wrong kept predictions over all predictions.
    pub wrong_kept_overall: f64,
    pub mean_kept_per_pair: f64,
}

pub fn filter_validation(cases: &[ValidationCase]) -> Result<FilterValidation> {
    if cases.is_empty() {
        return Err(Error::Empty("validation set has no pairs".into()));
    }
    let mut v = FilterValidation {
        pairs: cases.len(),
        predictions: 0,
        wrong: 0,
        kept: 0,
        wrong_kept: 0,
        fpr: 0.0,
        wrong_kept_overall: 0.0,
        mean_kept_per_pair: 0.0,
    };
    for c in cases {
        if c.correct.len() != c.kept.len() {
            return Err(Error::ShapeMismatch("correct and kept flags differ in length".into()));
        }
        v.predictions += c.correct.len();
        for (&ok, &keep) in c.correct.iter().zip(&c.kept) {
            v.wrong += !ok as usize;
            v.kept += keep as usize;
            v.wrong_kept += (keep && !ok) as usize;
        }
    }
    if v.kept > 0 {
        v.fpr = v.wrong_kept as f64 / v.kept as f64;
    }
    if v.predictions > 0 {
        v.wrong_kept_overall = v.wrong_kept as f64 / v.predictions as f64;
    }
    v.mean_kept_per_pair = v.kept as f64 / cases.len() as f64;
    Ok(v)
}
