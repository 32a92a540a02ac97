use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::MaskImage;
use crate::scalar::{Real, Vec2};

const GCFM_MAGIC: &[u8; 4] = b"GCFM";
const GCFM_VERSION: u32 = 1;

/// Per-patch feature vectors on a regular grid laid over an image.
///
/// Cell `(row, col)` covers pixels `origin + [col, row] * patch_size` up to one patch
/// further; its center pixel is `origin + [col, row] * patch_size + (patch_size - 1) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureMap<T> {
    grid_h: usize,
    grid_w: usize,
    channels: usize,
    patch_size: usize,
    /// Pixel offset `[x, y]` of the grid's top-left corner.
    origin: Vec2<f64>,
    values: Vec<T>,
}

impl<T: Real> DenseFeatureMap<T> {
    pub fn new(grid_h: usize, grid_w: usize, channels: usize, patch_size: usize, values: Vec<T>) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::Config("patch size must be at least 1".into()));
        }
        if grid_h == 0 || grid_w == 0 || channels == 0 {
            return Err(Error::Empty(format!("feature grid {grid_h}x{grid_w}x{channels}")));
        }
        if values.len() != grid_h * grid_w * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {grid_h}x{grid_w}x{channels} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value at flat index {i}")));
        }
        Ok(Self { grid_h, grid_w, channels, patch_size, origin: [0.0, 0.0], values })
    }

    pub fn zeros(grid_h: usize, grid_w: usize, channels: usize, patch_size: usize) -> Result<Self> {
        Self::new(grid_h, grid_w, channels, patch_size, vec![T::zero(); grid_h * grid_w * channels])
    }

    /// Builds a map by evaluating `f(row, col)` for every cell.
    pub fn from_fn(
        grid_h: usize,
        grid_w: usize,
        channels: usize,
        patch_size: usize,
        mut f: impl FnMut(usize, usize) -> Vec<T>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(grid_h * grid_w * channels);
        for r in 0..grid_h {
            for c in 0..grid_w {
                let cell = f(r, c);
                if cell.len() != channels {
                    return Err(Error::DimensionMismatch { expected: channels, got: cell.len() });
                }
                values.extend(cell);
            }
        }
        Self::new(grid_h, grid_w, channels, patch_size, values)
    }

    pub fn with_origin(mut self, origin: Vec2<f64>) -> Self {
        self.origin = origin;
        self
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn origin(&self) -> Vec2<f64> {
        self.origin
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Feature vector of the cell at flat index `row * grid_w + col`.
    pub fn cell(&self, index: usize) -> &[T] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn cell_mut(&mut self, index: usize) -> &mut [T] {
        &mut self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn at(&self, row: usize, col: usize) -> &[T] {
        self.cell(row * self.grid_w + col)
    }

    /// Center pixel `[x, y]` of a cell.
    pub fn cell_center(&self, index: usize) -> Vec2<f64> {
        let (r, c) = (index / self.grid_w, index % self.grid_w);
        let ps = self.patch_size as f64;
        let half = (ps - 1.0) / 2.0;
        [self.origin[0] + c as f64 * ps + half, self.origin[1] + r as f64 * ps + half]
    }

    /// Flat index of the cell containing a pixel, if inside the grid.
    pub fn cell_of(&self, pixel: Vec2<f64>) -> Option<usize> {
        let ps = self.patch_size as f64;
        // Pixel centers sit at integers, so a patch spans [start - 0.5, start + ps - 0.5).
        let c = ((pixel[0] - self.origin[0] + 0.5) / ps).floor();
        let r = ((pixel[1] - self.origin[1] + 0.5) / ps).floor();
        if !(c >= 0.0 && r >= 0.0) || c >= self.grid_w as f64 || r >= self.grid_h as f64 {
            return None;
        }
        Some(r as usize * self.grid_w + c as usize)
    }

    /// Grid-level mask: a cell is foreground when the pixel nearest its center is.
    pub fn cell_mask(&self, mask: &MaskImage) -> MaskImage {
        MaskImage::from_fn(self.grid_h, self.grid_w, |r, c| {
            let [x, y] = self.cell_center(r * self.grid_w + c);
            let (x, y) = (x.round(), y.round());
            x >= 0.0 && y >= 0.0 && (y as usize) < mask.height() && (x as usize) < mask.width() && mask.get(y as usize, x as usize)
        })
    }

    /// Divides every cell by its L2 norm. Zero cells stay zero and are flagged `true`.
    pub fn l2_normalize(&self) -> (Self, Vec<bool>) {
        let mut out = self.clone();
        let mut zero = vec![false; self.cells()];
        for (i, flag) in zero.iter_mut().enumerate() {
            let cell = out.cell_mut(i);
            let norm = cell.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm > T::zero() {
                for v in cell.iter_mut() {
                    *v = *v / norm;
                }
            } else {
                *flag = true;
            }
        }
        (out, zero)
    }

    /// Flags of cells whose vector is exactly zero.
    pub fn zero_cells(&self) -> Vec<bool> {
        (0..self.cells()).map(|i| self.cell(i).iter().all(|v| *v == T::zero())).collect()
    }

    /// Bilinear per-channel resampling onto a `grid_h x grid_w` grid covering the same
    /// image region with the given patch size.
    pub fn resample(&self, grid_h: usize, grid_w: usize, patch_size: usize) -> Result<Self> {
        let sample = |dst: usize, n_dst: usize, n_src: usize| -> (usize, usize, T) {
            let x = ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(n_src - 1);
            (lo, hi, T::lit(x - lo as f64))
        };
        let mut values = Vec::with_capacity(grid_h * grid_w * self.channels);
        for r in 0..grid_h {
            let (r0, r1, fr) = sample(r, grid_h, self.grid_h);
            for c in 0..grid_w {
                let (c0, c1, fc) = sample(c, grid_w, self.grid_w);
                let (a, b, d, e) = (self.at(r0, c0), self.at(r0, c1), self.at(r1, c0), self.at(r1, c1));
                for k in 0..self.channels {
                    let top = a[k] + (b[k] - a[k]) * fc;
                    let bottom = d[k] + (e[k] - d[k]) * fc;
                    values.push(top + (bottom - top) * fr);
                }
            }
        }
        Ok(Self::new(grid_h, grid_w, self.channels, patch_size, values)?.with_origin(self.origin))
    }

    pub fn cast<U: Real>(&self) -> DenseFeatureMap<U> {
        DenseFeatureMap {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            channels: self.channels,
            patch_size: self.patch_size,
            origin: self.origin,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// `GCFM`, u32 version, u32 grid_h, u32 grid_w, u32 channels, u32 patch_size, then
    /// row-major, cell-major little-endian f32 values.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.values.len());
        out.extend_from_slice(GCFM_MAGIC);
        for w in [GCFM_VERSION, self.grid_h as u32, self.grid_w as u32, self.channels as u32, self.patch_size as u32] {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..4] != GCFM_MAGIC {
            return Err(Error::Parse("feature map lacks GCFM header".into()));
        }
        let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize;
        if word(4) != GCFM_VERSION as usize {
            return Err(Error::Parse(format!("unsupported GCFM version {}", word(4))));
        }
        let (h, w, c, ps) = (word(8), word(12), word(16), word(20));
        let expected = h.checked_mul(w).and_then(|n| n.checked_mul(c)).and_then(|n| n.checked_mul(4)).map(|n| n + 24);
        if expected != Some(bytes.len()) {
            return Err(Error::Parse(format!("GCFM payload of {} bytes does not match {h}x{w}x{c}", bytes.len())));
        }
        let values = bytes[24..]
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        Self::new(h, w, c, ps, values)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}
