use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Value and gradients of a feature-space loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    /// Gradient w.r.t. the first (source / query) feature block.
    pub grad_a: Vec<T>,
    /// Gradient w.r.t. the second (target) feature block.
    pub grad_b: Vec<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Numerically stable log-softmax of `logits` at every entry.
fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Symmetric InfoNCE over a square similarity matrix whose diagonal holds the
/// positives: the mean over rows and over columns of `-log softmax(s / tau)` at the
/// diagonal, averaged across both directions. Returns the loss and `d loss / d sim`.
pub fn info_nce<T: Real>(sim: &[T], n: usize, tau: T) -> Result<(T, Vec<T>)> {
    if n == 0 {
        return Err(Error::Empty("contrastive loss needs a positive pair".into()));
    }
    if sim.len() != n * n {
        return Err(Error::ShapeMismatch(format!("{} similarities for {n} pairs", sim.len())));
    }
    let scale = T::one() / (T::lit(2.0) * T::of(n) * tau);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); n * n];
    for i in 0..n {
        let row: Vec<T> = (0..n).map(|j| sim[i * n + j] / tau).collect();
        let lp = log_softmax(&row);
        loss = loss - lp[i];
        for j in 0..n {
            let delta = if i == j { T::one() } else { T::zero() };
            grad[i * n + j] = grad[i * n + j] + scale * (lp[j].exp() - delta);
        }
    }
    for j in 0..n {
        let col: Vec<T> = (0..n).map(|i| sim[i * n + j] / tau).collect();
        let lp = log_softmax(&col);
        loss = loss - lp[j];
        for i in 0..n {
            let delta = if i == j { T::one() } else { T::zero() };
            grad[i * n + j] = grad[i * n + j] + scale * (lp[i].exp() - delta);
        }
    }
    Ok((loss / (T::lit(2.0) * T::of(n)), grad))
}

/// Symmetric InfoNCE between matched rows of `src` and `tgt` (both `n x dim`,
/// row-major). Each label's negatives are the other labels of the same batch.
pub fn sparse_contrastive_loss<T: Real>(src: &[T], tgt: &[T], dim: usize, tau: T) -> Result<LossGrad<T>> {
    if dim == 0 || src.len() != tgt.len() || src.len() % dim != 0 {
        return Err(Error::ShapeMismatch("source and target batches differ in shape".into()));
    }
    let n = src.len() / dim;
    if n < 2 {
        return Err(Error::Empty("contrastive loss needs at least one negative".into()));
    }
    let mut sim = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = dot(&src[i * dim..(i + 1) * dim], &tgt[j * dim..(j + 1) * dim]);
        }
    }
    let (loss, g) = info_nce(&sim, n, tau)?;
    let mut grad_a = vec![T::zero(); src.len()];
    let mut grad_b = vec![T::zero(); tgt.len()];
    for i in 0..n {
        for j in 0..n {
            let (gij, gji) = (g[i * n + j], g[j * n + i]);
            for k in 0..dim {
                grad_a[i * dim + k] = grad_a[i * dim + k] + gij * tgt[j * dim + k];
                grad_b[i * dim + k] = grad_b[i * dim + k] + gji * src[j * dim + k];
            }
        }
    }
    Ok(LossGrad { loss, grad_a, grad_b })
}

/// Window soft-argmax settings. Positions are in cell units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseLossConfig {
    /// Side of the square window, in cells.
    pub window: usize,
    pub temperature: f64,
}

impl Default for DenseLossConfig {
    fn default() -> Self {
        Self { window: 15, temperature: 0.04 }
    }
}

/// First row/column of a `window`-wide span centered on `center`, shifted to fit
/// inside `0..len`.
fn window_start(center: usize, window: usize, len: usize) -> (usize, usize) {
    let w = window.min(len);
    let start = center.saturating_sub(w / 2).min(len - w);
    (start, w)
}

/// Soft-argmax of `scores` over a window, returning the expected `(col, row)` and the
/// softmax weights with their cell indices.
pub fn window_soft_argmax<T: Real>(
    scores: &[T],
    grid: (usize, usize),
    cfg: &DenseLossConfig,
) -> Result<([T; 2], Vec<(usize, T)>)> {
    let (h, w) = grid;
    if h * w == 0 || scores.len() != h * w {
        return Err(Error::ShapeMismatch(format!("{} scores for a {h}x{w} grid", scores.len())));
    }
    if cfg.window == 0 || !(cfg.temperature > 0.0) {
        return Err(Error::Config("window and temperature must be positive".into()));
    }
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    let (r0, wh) = window_start(best / w, cfg.window, h);
    let (c0, ww) = window_start(best % w, cfg.window, w);
    let temp = T::lit(cfg.temperature);
    let cells: Vec<usize> = (r0..r0 + wh).flat_map(|r| (c0..c0 + ww).map(move |c| r * w + c)).collect();
    let logits: Vec<T> = cells.iter().map(|&k| scores[k] / temp).collect();
    let weights: Vec<(usize, T)> = cells.iter().copied().zip(log_softmax(&logits).into_iter().map(T::exp)).collect();
    let mut p = [T::zero(); 2];
    for &(k, wk) in &weights {
        p[0] = p[0] + wk * T::of(k % w);
        p[1] = p[1] + wk * T::of(k / w);
    }
    Ok((p, weights))
}

/// Mean distance between the window soft-argmax of each query's similarity map and
/// its (noisy) target position.
///
/// `queries` is `n x dim`, `tgt` holds every target cell (`h*w x dim`), `targets` are
/// `(col, row)` cell positions and `noise` the per-label offsets added to them.
pub fn dense_loss<T: Real>(
    queries: &[T],
    tgt: &[T],
    dim: usize,
    grid: (usize, usize),
    targets: &[[f64; 2]],
    noise: &[[f64; 2]],
    cfg: &DenseLossConfig,
) -> Result<LossGrad<T>> {
    let cells = grid.0 * grid.1;
    if dim == 0 || queries.len() % dim != 0 || tgt.len() != cells * dim {
        return Err(Error::ShapeMismatch("dense loss feature blocks have the wrong shape".into()));
    }
    let n = queries.len() / dim;
    if n == 0 || targets.len() != n || noise.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} queries, {} targets, {} noise draws", targets.len(), noise.len())));
    }
    for t in targets {
        if !(t[0] >= 0.0 && t[1] >= 0.0 && t[0] <= (grid.1 - 1) as f64 && t[1] <= (grid.0 - 1) as f64) {
            return Err(Error::Config(format!("label {t:?} lies outside the {}x{} grid", grid.0, grid.1)));
        }
    }
    let temp = T::lit(cfg.temperature);
    let inv_n = T::one() / T::of(n);
    let mut loss = T::zero();
    let mut grad_a = vec![T::zero(); queries.len()];
    let mut grad_b = vec![T::zero(); tgt.len()];
    for i in 0..n {
        let q = &queries[i * dim..(i + 1) * dim];
        let scores: Vec<T> = (0..cells).map(|k| dot(q, &tgt[k * dim..(k + 1) * dim])).collect();
        let (p, weights) = window_soft_argmax(&scores, grid, cfg)?;
        let y = [T::lit(targets[i][0] + noise[i][0]), T::lit(targets[i][1] + noise[i][1])];
        let diff = [p[0] - y[0], p[1] - y[1]];
        let dist = diff[0].hypot(diff[1]);
        loss = loss + dist * inv_n;
        if dist == T::zero() {
            continue;
        }
        let u = [diff[0] / dist * inv_n, diff[1] / dist * inv_n];
        for &(k, wk) in &weights {
            let pos = [T::of(k % grid.1), T::of(k / grid.1)];
            let ds = wk * (u[0] * (pos[0] - p[0]) + u[1] * (pos[1] - p[1])) / temp;
            let tk = &tgt[k * dim..(k + 1) * dim];
            for c in 0..dim {
                grad_a[i * dim + c] = grad_a[i * dim + c] + ds * tk[c];
                grad_b[k * dim + c] = grad_b[k * dim + c] + ds * q[c];
            }
        }
    }
    Ok(LossGrad { loss, grad_a, grad_b })
}

/// Per-coordinate Gaussian label noise in cell units.
pub fn sample_noise(rng: &mut impl Rng, n: usize, sigma: f64) -> Result<Vec<[f64; 2]>> {
    if sigma == 0.0 {
        return Ok(vec![[0.0; 2]; n]);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
    Ok((0..n).map(|_| [normal.sample(rng), normal.sample(rng)]).collect())
}
