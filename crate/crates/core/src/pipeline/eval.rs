use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{cells_path, fused_path, read_jsonl, PairValidation, ValidationFilter, LABELS_FILE, VALIDATION_FILE};
use crate::adapter::{refine_map, AdapterNet, TrainPair};
use crate::error::{Error, Result};
use crate::eval::{corpus_pck, filter_validation, AnnotationSet, FilterValidation};
use crate::features::{predict_points, DenseFeatureMap};
use crate::geo_filter::LabelRecord;
use crate::raster::MaskImage;

pub const PCK_ALPHAS: [f64; 3] = [0.01, 0.05, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckRow {
    pub alpha: f64,
    pub pck: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub filter: String,
    #[serde(flatten)]
    pub stats: FilterValidation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub pck: Vec<PckRow>,
    pub validation: Vec<ValidationRow>,
}

struct Loaded {
    map: DenseFeatureMap<f64>,
    fg: MaskImage,
}

fn load_image(run_dir: &Path, id: &str, net: Option<&AdapterNet<f64>>) -> Result<Loaded> {
    let map = DenseFeatureMap::read(fused_path(run_dir, id))?;
    let map = match net {
        Some(net) => refine_map(net, &map)?,
        None => map,
    };
    Ok(Loaded { map, fg: MaskImage::read(cells_path(run_dir, id))? })
}

/// PCK of nearest-neighbor keypoint transfer on the fused maps of a finished run,
/// optionally refined by an adapter, plus the run's filter validation.
pub fn run_eval(run_dir: &Path, annotations: &AnnotationSet, net: Option<&AdapterNet<f64>>, per_keypoint: bool) -> Result<EvalReport> {
    annotations.validate()?;
    if annotations.pairs.is_empty() {
        return Err(Error::Empty("annotations list no evaluation pairs".into()));
    }
    let mut cache: BTreeMap<&str, Loaded> = BTreeMap::new();
    let mut items = Vec::with_capacity(annotations.pairs.len());
    for (s, t) in &annotations.pairs {
        for id in [s.as_str(), t.as_str()] {
            if !cache.contains_key(id) {
                cache.insert(id, load_image(run_dir, id, net)?);
            }
        }
        let (points, gt) = annotations.pair_keypoints(s, t)?;
        if points.is_empty() {
            continue;
        }
        let preds = predict_points(&cache[s.as_str()].map, &cache[t.as_str()].map, &cache[t.as_str()].fg, &points)?;
        items.push((preds.into_iter().map(|p| p.unwrap_or([f64::INFINITY; 2])).collect(), gt));
    }
    let pck = PCK_ALPHAS
        .iter()
        .map(|&alpha| Ok(PckRow { alpha, pck: corpus_pck(&items, alpha, per_keypoint)?, pairs: items.len() }))
        .collect::<Result<Vec<_>>>()?;

    let vpath = run_dir.join(VALIDATION_FILE);
    let mut validation = Vec::new();
    if vpath.exists() {
        let records: Vec<PairValidation> = read_jsonl(&vpath)?;
        if !records.is_empty() {
            for f in ValidationFilter::ALL {
                let cases: Vec<_> = records.iter().map(|r| r.case(f)).collect();
                validation.push(ValidationRow { filter: f.name().into(), stats: filter_validation(&cases)? });
            }
        }
    }
    Ok(EvalReport { pck, validation })
}

/// CSV cannot hold nested records, so the row is spelled out.
#[derive(Serialize)]
struct FlatValidationRow<'a> {
    filter: &'a str,
    pairs: usize,
    predictions: usize,
    wrong: usize,
    kept: usize,
    wrong_kept: usize,
    fpr: f64,
    wrong_kept_overall: f64,
    mean_kept_per_pair: f64,
}

impl<'a> From<&'a ValidationRow> for FlatValidationRow<'a> {
    fn from(r: &'a ValidationRow) -> Self {
        let s = &r.stats;
        Self {
            filter: &r.filter,
            pairs: s.pairs,
            predictions: s.predictions,
            wrong: s.wrong,
            kept: s.kept,
            wrong_kept: s.wrong_kept,
            fpr: s.fpr,
            wrong_kept_overall: s.wrong_kept_overall,
            mean_kept_per_pair: s.mean_kept_per_pair,
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `pck.csv`, `filter_validation.csv` (when available) and `summary.txt`.
pub fn write_eval(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join("pck.csv"), &report.pck)?;
    if !report.validation.is_empty() {
        let rows: Vec<FlatValidationRow> = report.validation.iter().map(FlatValidationRow::from).collect();
        write_csv(&dir.join("filter_validation.csv"), &rows)?;
    }
    let mut s = String::new();
    for r in &report.pck {
        let _ = writeln!(s, "PCK@{:<5} {:6.2}%  ({} pairs)", r.alpha, 100.0 * r.pck, r.pairs);
    }
    for v in &report.validation {
        let _ = writeln!(
            s,
            "filter {:<16} FPR {:6.2}%  kept {:>5} / {:<5} mean kept per pair {:.2}",
            v.filter,
            100.0 * v.stats.fpr,
            v.stats.kept,
            v.stats.predictions,
            v.stats.mean_kept_per_pair
        );
    }
    let path = dir.join("summary.txt");
    fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

/// Training pairs from the kept labels and fused maps of a finished run, in label order.
pub fn load_training_pairs(run_dir: &Path) -> Result<Vec<TrainPair<f64>>> {
    let labels: Vec<LabelRecord> = read_jsonl(&run_dir.join(LABELS_FILE))?;
    let mut order: Vec<(String, String)> = Vec::new();
    let mut grouped: BTreeMap<(String, String), Vec<([f64; 2], [f64; 2])>> = BTreeMap::new();
    for l in labels.into_iter().filter(|l| l.kept) {
        let key = (l.src_img.clone(), l.tgt_img.clone());
        if !grouped.contains_key(&key) {
            order.push(key.clone());
        }
        grouped.entry(key).or_default().push((l.p_src, l.p_tgt));
    }
    if order.is_empty() {
        return Err(Error::Empty("run has no kept labels".into()));
    }
    order
        .into_iter()
        .map(|key| {
            let src = DenseFeatureMap::read(fused_path(run_dir, &key.0))?;
            let tgt = DenseFeatureMap::read(fused_path(run_dir, &key.1))?;
            TrainPair::from_pixels(src, tgt, &grouped[&key])
        })
        .collect()
}
