use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{dense_loss, sample_noise, sparse_contrastive_loss, DenseLossConfig};
use super::net::AdapterNet;
use crate::error::{Error, Result};
use crate::features::DenseFeatureMap;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Peak learning rate of the one-cycle schedule.
    pub lr: f64,
    pub weight_decay: f64,
    pub labels_per_pair: usize,
    /// Contrastive temperature.
    pub tau_c: f64,
    /// Soft-argmax window side, in cells.
    pub window: usize,
    pub temperature: f64,
    /// Label noise standard deviation, in cells.
    pub noise_sigma: f64,
    pub hidden: usize,
    pub residual: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 5e-3,
            weight_decay: 1e-3,
            labels_per_pair: 50,
            tau_c: 0.07,
            window: 15,
            temperature: 0.04,
            noise_sigma: 0.5,
            hidden: 256,
            residual: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("tau_c", self.tau_c), ("temperature", self.temperature)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [("lr", self.lr), ("weight_decay", self.weight_decay), ("noise_sigma", self.noise_sigma)];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.iterations == 0 || self.labels_per_pair == 0 || self.window == 0 || self.hidden == 0 {
            return Err(Error::Config("iterations, labels_per_pair, window and hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn dense(&self) -> DenseLossConfig {
        DenseLossConfig { window: self.window, temperature: self.temperature }
    }

    /// Fresh network for `dim`-channel features.
    pub fn network<T: Real>(&self, dim: usize) -> Result<AdapterNet<T>> {
        AdapterNet::new([dim, self.hidden, self.hidden, self.hidden, dim], self.residual, self.seed)
    }
}

/// One-cycle learning rate: linear warmup from `peak / 25` over the first 10% of
/// iterations, then cosine decay back to `peak / 25`.
pub fn one_cycle_lr(iter: usize, iterations: usize, peak: f64) -> f64 {
    let floor = peak / 25.0;
    let warm = ((iterations as f64 * 0.1).round() as usize).max(1);
    if iter < warm {
        return floor + (peak - floor) * iter as f64 / warm as f64;
    }
    let span = iterations.saturating_sub(warm + 1).max(1);
    let progress = ((iter - warm) as f64 / span as f64).min(1.0);
    floor + (peak - floor) * 0.5 * (1.0 + (PI * progress).cos())
}

/// A training label: a source cell and its target position in `(col, row)` cell units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLabel {
    pub src_cell: usize,
    pub tgt_pos: [f64; 2],
}

/// Frozen feature maps of one image pair with its pseudo-labels.
#[derive(Debug, Clone)]
pub struct TrainPair<T> {
    pub src: DenseFeatureMap<T>,
    pub tgt: DenseFeatureMap<T>,
    pub labels: Vec<TrainLabel>,
}

impl<T: Real> TrainPair<T> {
    /// Converts pixel correspondences to cell labels. Source pixels outside the grid
    /// are dropped; target pixels are clamped onto it.
    pub fn from_pixels(src: DenseFeatureMap<T>, tgt: DenseFeatureMap<T>, pairs: &[([f64; 2], [f64; 2])]) -> Result<Self> {
        if src.channels() != tgt.channels() {
            return Err(Error::DimensionMismatch { expected: src.channels(), got: tgt.channels() });
        }
        let ps = tgt.patch_size() as f64;
        let o = tgt.origin();
        let half = (ps - 1.0) / 2.0;
        let (max_c, max_r) = ((tgt.grid_w() - 1) as f64, (tgt.grid_h() - 1) as f64);
        let labels = pairs
            .iter()
            .filter_map(|&(ps_px, pt_px)| {
                let src_cell = src.cell_of(ps_px)?;
                let col = ((pt_px[0] - o[0] - half) / ps).clamp(0.0, max_c);
                let row = ((pt_px[1] - o[1] - half) / ps).clamp(0.0, max_r);
                Some(TrainLabel { src_cell, tgt_pos: [col, row] })
            })
            .collect();
        Ok(Self { src, tgt, labels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss_sparse: f64,
    pub loss_dense: f64,
    pub lr: f64,
}

impl TraceRow {
    pub fn total(&self) -> f64 {
        self.loss_sparse + self.loss_dense
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub net: AdapterNet<T>,
    pub trace: Vec<TraceRow>,
}

fn gather<T: Real>(values: &[T], dim: usize, rows: impl Iterator<Item = usize>) -> Vec<T> {
    rows.flat_map(|r| values[r * dim..(r + 1) * dim].iter().copied()).collect()
}

/// Trains `net` with the sparse contrastive plus dense soft-argmax loss under AdamW.
///
/// Each iteration draws one pair and at most `labels_per_pair` of its labels without
/// replacement. Pairs with fewer than two labels contribute no contrastive term.
pub fn train<T: Real>(mut net: AdapterNet<T>, pairs: &[TrainPair<T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if pairs.iter().all(|p| p.labels.is_empty()) {
        return Err(Error::Empty("training corpus has no labels".into()));
    }
    let dim = net.in_dim();
    if net.out_dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: net.out_dim() });
    }
    for p in pairs {
        if p.src.channels() != dim || p.tgt.channels() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p.src.channels() });
        }
    }
    let usable: Vec<usize> = (0..pairs.len()).filter(|&i| !pairs[i].labels.is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let adam = AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    let mut state = AdamState::new(net.param_count());
    let dense_cfg = cfg.dense();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let pair = &pairs[usable[rng.random_range(0..usable.len())]];
        let take = cfg.labels_per_pair.min(pair.labels.len());
        let picked: Vec<TrainLabel> = index::sample(&mut rng, pair.labels.len(), take).into_iter().map(|i| pair.labels[i]).collect();
        let noise = sample_noise(&mut rng, take, cfg.noise_sigma)?;

        let src_in = gather(pair.src.values(), dim, picked.iter().map(|l| l.src_cell));
        let src_fw = net.forward(&src_in)?;
        let tgt_fw = net.forward(pair.tgt.values())?;
        let grid = (pair.tgt.grid_h(), pair.tgt.grid_w());
        let tgt_cells: Vec<usize> = picked
            .iter()
            .map(|l| l.tgt_pos[1].round() as usize * grid.1 + l.tgt_pos[0].round() as usize)
            .collect();

        let mut g_src = vec![T::zero(); src_in.len()];
        let mut g_tgt = vec![T::zero(); tgt_fw.output.len()];
        let mut loss_sparse = 0.0;
        if take >= 2 {
            let tgt_rows = gather(&tgt_fw.output, dim, tgt_cells.iter().copied());
            let sp = sparse_contrastive_loss(&src_fw.output, &tgt_rows, dim, T::lit(cfg.tau_c))?;
            loss_sparse = sp.loss.as_f64();
            for (g, v) in g_src.iter_mut().zip(&sp.grad_a) {
                *g = *g + *v;
            }
            for (i, &c) in tgt_cells.iter().enumerate() {
                for k in 0..dim {
                    g_tgt[c * dim + k] = g_tgt[c * dim + k] + sp.grad_b[i * dim + k];
                }
            }
        }
        let targets: Vec<[f64; 2]> = picked.iter().map(|l| l.tgt_pos).collect();
        let de = dense_loss(&src_fw.output, &tgt_fw.output, dim, grid, &targets, &noise, &dense_cfg)?;
        for (g, v) in g_src.iter_mut().zip(&de.grad_a) {
            *g = *g + *v;
        }
        for (g, v) in g_tgt.iter_mut().zip(&de.grad_b) {
            *g = *g + *v;
        }

        let mut grad = vec![T::zero(); net.param_count()];
        net.backward(&src_fw, &g_src, &mut grad)?;
        net.backward(&tgt_fw, &g_tgt, &mut grad)?;
        let lr = one_cycle_lr(iter, cfg.iterations, cfg.lr);
        let rate = T::lit(lr);
        adam_step(net.params_mut(), &grad, &mut state, |_| rate, &adam)?;
        trace.push(TraceRow { iter: iter + 1, loss_sparse, loss_dense: de.loss.as_f64(), lr });
    }
    Ok(TrainOutcome { net, trace })
}

/// Passes every cell of `map` through `net`. All-zero cells stay zero so foreground
/// bookkeeping carries over.
pub fn refine_map<T: Real>(net: &AdapterNet<T>, map: &DenseFeatureMap<T>) -> Result<DenseFeatureMap<T>> {
    if net.out_dim() != map.channels() {
        return Err(Error::DimensionMismatch { expected: map.channels(), got: net.out_dim() });
    }
    let out = net.forward(map.values())?.output;
    let mut refined = DenseFeatureMap::new(map.grid_h(), map.grid_w(), map.channels(), map.patch_size(), out)?.with_origin(map.origin());
    for (i, zero) in map.zero_cells().into_iter().enumerate() {
        if zero {
            refined.cell_mut(i).iter_mut().for_each(|v| *v = T::zero());
        }
    }
    Ok(refined)
}

/// Writes the trace as CSV with columns `iter,loss_sparse,loss_dense,lr`.
pub fn write_trace(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    for row in trace {
        w.serialize(row).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
