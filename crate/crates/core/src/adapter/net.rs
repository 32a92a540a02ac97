use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};

const GCAD_MAGIC: &[u8; 4] = b"GCAD";
const GCAD_VERSION: u32 = 1;
const FLAG_RESIDUAL: u32 = 1;

/// Number of fully connected layers.
pub const LAYERS: usize = 4;

/// Four-layer perceptron with SiLU activations and unit-norm outputs.
///
/// With `residual` set (requires `in == out`) the input is added to the last layer's
/// output before normalization, and the last layer starts at zero so a fresh network
/// reproduces its normalized input.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterNet<T> {
    dims: [usize; LAYERS + 1],
    residual: bool,
    params: Vec<T>,
}

/// Intermediate values of a forward pass, needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    rows: usize,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<T>>,
    /// Inputs of each layer (the network input, then hidden activations).
    acts: Vec<Vec<T>>,
    /// Norm of each unnormalized output row.
    norms: Vec<T>,
    pub output: Vec<T>,
}

fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

impl<T: Real> AdapterNet<T> {
    pub fn new(dims: [usize; LAYERS + 1], residual: bool, seed: u64) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Config(format!("layer widths must be positive, got {dims:?}")));
        }
        if residual && dims[0] != dims[LAYERS] {
            return Err(Error::Config("residual adapter needs equal input and output widths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::count(&dims));
        for l in 0..LAYERS {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let zero = residual && l == LAYERS - 1;
            for _ in 0..n_in * n_out {
                params.push(if zero { T::zero() } else { T::lit(rng.random_range(-bound..bound)) });
            }
            params.extend(std::iter::repeat_n(T::zero(), n_out));
        }
        Ok(Self { dims, residual, params })
    }

    pub fn from_params(dims: [usize; LAYERS + 1], residual: bool, params: Vec<T>) -> Result<Self> {
        if params.len() != Self::count(&dims) {
            return Err(Error::ShapeMismatch(format!("{} parameters for dims {dims:?}", params.len())));
        }
        if residual && dims[0] != dims[LAYERS] {
            return Err(Error::Config("residual adapter needs equal input and output widths".into()));
        }
        Ok(Self { dims, residual, params })
    }

    fn count(dims: &[usize; LAYERS + 1]) -> usize {
        (0..LAYERS).map(|l| dims[l] * dims[l + 1] + dims[l + 1]).sum()
    }

    pub fn dims(&self) -> [usize; LAYERS + 1] {
        self.dims
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        self.dims[LAYERS]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Offsets of layer `l`'s weight matrix (out x in, row-major) and bias.
    fn layer(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.dims[k] * self.dims[k + 1] + self.dims[k + 1];
        }
        (off, off + self.dims[l] * self.dims[l + 1])
    }

    /// Refined unit-norm vectors for `rows` inputs stored row-major. Rows that come out
    /// exactly zero stay zero.
    pub fn forward(&self, input: &[T]) -> Result<ForwardCache<T>> {
        let d_in = self.in_dim();
        if input.len() % d_in != 0 {
            return Err(Error::DimensionMismatch { expected: d_in, got: input.len() % d_in });
        }
        let rows = input.len() / d_in;
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(LAYERS - 1);
        for l in 0..LAYERS {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w0, b0) = self.layer(l);
            let w = &self.params[w0..b0];
            let b = &self.params[b0..b0 + n_out];
            // Transposed copy so the inner loop runs over contiguous outputs.
            let mut wt = vec![T::zero(); n_in * n_out];
            for o in 0..n_out {
                for k in 0..n_in {
                    wt[k * n_out + o] = w[o * n_in + k];
                }
            }
            let a = acts.last().expect("input layer");
            let mut z = vec![T::zero(); rows * n_out];
            z.par_chunks_mut(n_out).zip(a.par_chunks(n_in)).for_each(|(zr, ar)| {
                zr.copy_from_slice(b);
                for (k, &ak) in ar.iter().enumerate() {
                    for (zo, &wo) in zr.iter_mut().zip(&wt[k * n_out..(k + 1) * n_out]) {
                        *zo = *zo + ak * wo;
                    }
                }
            });
            if l + 1 < LAYERS {
                let next: Vec<T> = z.iter().map(|&v| silu(v)).collect();
                pre.push(z);
                acts.push(next);
            } else {
                if self.residual {
                    for (zv, &xv) in z.iter_mut().zip(input) {
                        *zv = *zv + xv;
                    }
                }
                let d_out = n_out;
                let mut norms = Vec::with_capacity(rows);
                let mut output = z;
                for row in output.chunks_mut(d_out) {
                    let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                    if n > T::zero() {
                        for v in row.iter_mut() {
                            *v = *v / n;
                        }
                    }
                    norms.push(n);
                }
                return Ok(ForwardCache { rows, pre, acts, norms, output });
            }
        }
        unreachable!("loop returns at the last layer")
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &[T], grad: &mut [T]) -> Result<()> {
        let d_out = self.out_dim();
        if grad_output.len() != cache.rows * d_out || grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch("gradient buffers do not match the forward pass".into()));
        }
        // Through the normalization: d raw = (g - o (o . g)) / |raw|.
        let mut delta = vec![T::zero(); cache.rows * d_out];
        for r in 0..cache.rows {
            let n = cache.norms[r];
            if n == T::zero() {
                continue;
            }
            let o = &cache.output[r * d_out..(r + 1) * d_out];
            let g = &grad_output[r * d_out..(r + 1) * d_out];
            let og: T = o.iter().zip(g).map(|(&a, &b)| a * b).sum();
            for k in 0..d_out {
                delta[r * d_out + k] = (g[k] - o[k] * og) / n;
            }
        }
        for l in (0..LAYERS).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w0, b0) = self.layer(l);
            let a = &cache.acts[l];
            {
                let (gw, gb) = grad[w0..b0 + n_out].split_at_mut(b0 - w0);
                gw.par_chunks_mut(n_in).enumerate().for_each(|(o, gwo)| {
                    for r in 0..cache.rows {
                        let d = delta[r * n_out + o];
                        if d == T::zero() {
                            continue;
                        }
                        for (g, &av) in gwo.iter_mut().zip(&a[r * n_in..(r + 1) * n_in]) {
                            *g = *g + d * av;
                        }
                    }
                });
                for r in 0..cache.rows {
                    for o in 0..n_out {
                        gb[o] = gb[o] + delta[r * n_out + o];
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[w0..b0];
            let mut prev = vec![T::zero(); cache.rows * n_in];
            prev.par_chunks_mut(n_in).enumerate().for_each(|(r, pr)| {
                for o in 0..n_out {
                    let d = delta[r * n_out + o];
                    for (p, &wv) in pr.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p = *p + d * wv;
                    }
                }
            });
            let z = &cache.pre[l - 1];
            for (p, &zv) in prev.iter_mut().zip(z) {
                *p = *p * silu_grad(zv);
            }
            delta = prev;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> AdapterNet<U> {
        AdapterNet { dims: self.dims, residual: self.residual, params: self.params.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    /// `GCAD`, u32 version, u32 layer count, u32 widths (layers + 1), u32 flags
    /// (bit 0: residual), then little-endian f32 parameters layer by layer
    /// (weights row-major, then biases).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * (LAYERS + 1) + 4 * self.params.len());
        out.extend_from_slice(GCAD_MAGIC);
        out.extend_from_slice(&GCAD_VERSION.to_le_bytes());
        out.extend_from_slice(&(LAYERS as u32).to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let flags = if self.residual { FLAG_RESIDUAL } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.as_f64() as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(i..i + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| Error::Parse("truncated GCAD header".into()))
        };
        if bytes.len() < 4 || &bytes[..4] != GCAD_MAGIC {
            return Err(Error::Parse("checkpoint lacks GCAD header".into()));
        }
        if word(4)? != GCAD_VERSION {
            return Err(Error::Parse(format!("unsupported GCAD version {}", word(4)?)));
        }
        if word(8)? as usize != LAYERS {
            return Err(Error::Parse(format!("checkpoint has {} layers, expected {LAYERS}", word(8)?)));
        }
        let mut dims = [0usize; LAYERS + 1];
        for (k, d) in dims.iter_mut().enumerate() {
            *d = word(12 + 4 * k)? as usize;
        }
        let flags = word(12 + 4 * (LAYERS + 1))?;
        let start = 16 + 4 * (LAYERS + 1);
        let expected = start + 4 * Self::count(&dims);
        if bytes.len() != expected {
            return Err(Error::Parse(format!("checkpoint is {} bytes, expected {expected}", bytes.len())));
        }
        let params = bytes[start..]
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Self::from_params(dims, flags & FLAG_RESIDUAL != 0, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
