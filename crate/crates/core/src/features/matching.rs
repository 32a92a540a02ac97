use super::map::DenseFeatureMap;
use crate::error::{Error, Result};
use crate::geo_filter::CandidateMatch;
use crate::raster::MaskImage;
use crate::scalar::Real;

fn check_grid<T: Real>(map: &DenseFeatureMap<T>, mask: &MaskImage, side: &str) -> Result<()> {
    if (mask.height(), mask.width()) != (map.grid_h(), map.grid_w()) {
        return Err(Error::ShapeMismatch(format!(
            "{side} cell mask {}x{} vs grid {}x{}",
            mask.height(),
            mask.width(),
            map.grid_h(),
            map.grid_w()
        )));
    }
    Ok(())
}

/// Flat indices of foreground cells with a non-zero feature vector.
fn candidates<T: Real>(map: &DenseFeatureMap<T>, fg: &MaskImage) -> Vec<usize> {
    (0..map.cells())
        .filter(|&i| fg.values()[i] != 0 && map.cell(i).iter().any(|v| *v != T::zero()))
        .collect()
}

fn best_by_dot<T: Real>(query: &[T], map: &DenseFeatureMap<T>, pool: &[usize]) -> usize {
    let mut best = pool[0];
    let mut best_score = T::neg_infinity();
    // `pool` is ascending, so strict improvement keeps the smaller index on ties.
    for &j in pool {
        let s: T = map.cell(j).iter().zip(query).map(|(&a, &b)| a * b).sum();
        if s > best_score {
            best = j;
            best_score = s;
        }
    }
    best
}

/// For every non-zero foreground source cell, the target foreground cell with the
/// largest dot product; ties go to the smaller flat index. Pixels are cell centers.
pub fn nn_match<T: Real>(
    src: &DenseFeatureMap<T>,
    tgt: &DenseFeatureMap<T>,
    src_fg: &MaskImage,
    tgt_fg: &MaskImage,
) -> Result<Vec<CandidateMatch<T>>> {
    if src.channels() != tgt.channels() {
        return Err(Error::DimensionMismatch { expected: src.channels(), got: tgt.channels() });
    }
    check_grid(src, src_fg, "source")?;
    check_grid(tgt, tgt_fg, "target")?;
    let queries = candidates(src, src_fg);
    let pool = candidates(tgt, tgt_fg);
    if queries.is_empty() || pool.is_empty() {
        return Err(Error::Empty("no usable foreground cells to match".into()));
    }
    Ok(queries
        .into_iter()
        .map(|i| {
            let j = best_by_dot(src.cell(i), tgt, &pool);
            let (ps, pt) = (src.cell_center(i), tgt.cell_center(j));
            CandidateMatch::new([T::lit(ps[0]), T::lit(ps[1])], [T::lit(pt[0]), T::lit(pt[1])])
        })
        .collect())
}

/// Transfers source pixels to the target by nearest-neighbor matching of the cells
/// they fall in. Points outside the source grid or on zero cells give `None`.
pub fn predict_points<T: Real>(
    src: &DenseFeatureMap<T>,
    tgt: &DenseFeatureMap<T>,
    tgt_fg: &MaskImage,
    points: &[[f64; 2]],
) -> Result<Vec<Option<[f64; 2]>>> {
    if src.channels() != tgt.channels() {
        return Err(Error::DimensionMismatch { expected: src.channels(), got: tgt.channels() });
    }
    check_grid(tgt, tgt_fg, "target")?;
    let pool = candidates(tgt, tgt_fg);
    if pool.is_empty() {
        return Err(Error::Empty("no usable target foreground cells".into()));
    }
    Ok(points
        .iter()
        .map(|&p| {
            let i = src.cell_of(p)?;
            let q = src.cell(i);
            q.iter().any(|v| *v != T::zero()).then(|| tgt.cell_center(best_by_dot(q, tgt, &pool)))
        })
        .collect())
}

/// Candidates split by a round-trip check.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicOutcome<T> {
    pub kept: Vec<CandidateMatch<T>>,
    pub rejected: Vec<CandidateMatch<T>>,
}

fn backward<T: Real>(
    cand: &CandidateMatch<T>,
    src: &DenseFeatureMap<T>,
    tgt: &DenseFeatureMap<T>,
    pool: &[usize],
) -> Option<usize> {
    let cell = tgt.cell_of([cand.p_tgt[0].as_f64(), cand.p_tgt[1].as_f64()])?;
    Some(best_by_dot(tgt.cell(cell), src, pool))
}

/// Keeps a candidate when matching its target cell back into the source lands within
/// `max(tau_cc * max(bbox_h, bbox_w), patch_size)` pixels of the source pixel.
pub fn cyclic_filter<T: Real>(
    cands: &[CandidateMatch<T>],
    src: &DenseFeatureMap<T>,
    tgt: &DenseFeatureMap<T>,
    src_fg: &MaskImage,
    bbox_hw: (f64, f64),
    tau_cc: f64,
    patch_size: f64,
) -> Result<CyclicOutcome<T>> {
    check_grid(src, src_fg, "source")?;
    let pool = candidates(src, src_fg);
    if pool.is_empty() {
        return Err(Error::Empty("no usable source foreground cells".into()));
    }
    let radius = (tau_cc * bbox_hw.0.max(bbox_hw.1)).max(patch_size);
    let mut out = CyclicOutcome { kept: Vec::new(), rejected: Vec::new() };
    for c in cands {
        let keep = backward(c, src, tgt, &pool).is_some_and(|back| {
            let p = src.cell_center(back);
            (p[0] - c.p_src[0].as_f64()).hypot(p[1] - c.p_src[1].as_f64()) < radius
        });
        if keep {
            out.kept.push(*c);
        } else {
            out.rejected.push(*c);
        }
    }
    Ok(out)
}

/// Strict variant: the backward match must return to the source pixel's own cell.
pub fn mutual_nn_filter<T: Real>(
    cands: &[CandidateMatch<T>],
    src: &DenseFeatureMap<T>,
    tgt: &DenseFeatureMap<T>,
    src_fg: &MaskImage,
) -> Result<CyclicOutcome<T>> {
    check_grid(src, src_fg, "source")?;
    let pool = candidates(src, src_fg);
    if pool.is_empty() {
        return Err(Error::Empty("no usable source foreground cells".into()));
    }
    let mut out = CyclicOutcome { kept: Vec::new(), rejected: Vec::new() };
    for c in cands {
        let own = src.cell_of([c.p_src[0].as_f64(), c.p_src[1].as_f64()]);
        if own.is_some() && backward(c, src, tgt, &pool) == own {
            out.kept.push(*c);
        } else {
            out.rejected.push(*c);
        }
    }
    Ok(out)
}
