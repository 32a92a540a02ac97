use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};
use crate::scalar::{norm3, sub3, Real};

/// Edge lengths are stored as integer multiples of `diag / 2^40`, so path sums are
/// exact and independent of summation order.
const QUANTA_PER_DIAG: f64 = (1u64 << 40) as f64;

/// Undirected vertex adjacency with quantized Euclidean edge lengths (CSR layout).
#[derive(Debug, Clone)]
pub struct EdgeGraph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<u64>,
    unit: f64,
}

impl EdgeGraph {
    pub(crate) fn build<T: Real>(mesh: &TriangleMesh<T>) -> Self {
        let n = mesh.vertex_count();
        let unit = mesh.diag().as_f64() / QUANTA_PER_DIAG;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for f in mesh.faces() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        let verts = mesh.vertices();
        for (v, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            for &u in list.iter() {
                let len = norm3(sub3(verts[v], verts[u])).as_f64();
                targets.push(u);
                weights.push((len / unit).round() as u64);
            }
            offsets.push(targets.len());
        }
        Self { offsets, targets, weights, unit }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Neighbors of `v` with their quantized edge lengths.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let r = self.offsets[v]..self.offsets[v + 1];
        self.targets[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    /// World-unit length of one quantum.
    pub fn unit(&self) -> f64 {
        self.unit
    }

    /// Dijkstra over quantized lengths; `None` marks unreachable vertices.
    pub fn shortest_paths(&self, source: usize) -> Result<Vec<Option<u64>>> {
        let n = self.vertex_count();
        if source >= n {
            return Err(Error::InvalidVertex(source));
        }
        let mut dist: Vec<Option<u64>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[source] = Some(0);
        heap.push(Reverse((0u64, source)));
        while let Some(Reverse((d, v))) = heap.pop() {
            if dist[v].is_some_and(|best| d > best) {
                continue;
            }
            for (u, w) in self.neighbors(v) {
                let nd = d + w;
                if dist[u].map_or(true, |cur| nd < cur) {
                    dist[u] = Some(nd);
                    heap.push(Reverse((nd, u)));
                }
            }
        }
        Ok(dist)
    }

    pub(crate) fn to_length<T: Real>(&self, q: Option<u64>) -> T {
        match q {
            Some(q) => T::lit(q as f64 * self.unit),
            None => T::infinity(),
        }
    }
}

/// Shortest-path distances along mesh edges from `source` to every vertex.
///
/// Unreachable vertices get `+inf`.
pub fn geodesic_from<T: Real>(mesh: &TriangleMesh<T>, source: usize) -> Result<Vec<T>> {
    let graph = mesh.edge_graph();
    Ok(graph.shortest_paths(source)?.into_iter().map(|q| graph.to_length(q)).collect())
}

/// Memoizes single-source geodesics for one mesh.
#[derive(Debug)]
pub struct GeodesicCache<'m, T: Real> {
    mesh: &'m TriangleMesh<T>,
    rows: HashMap<usize, Vec<Option<u64>>>,
}

impl<'m, T: Real> GeodesicCache<'m, T> {
    pub fn new(mesh: &'m TriangleMesh<T>) -> Self {
        Self { mesh, rows: HashMap::new() }
    }

    pub fn mesh(&self) -> &'m TriangleMesh<T> {
        self.mesh
    }

    pub fn distance(&mut self, a: usize, b: usize) -> Result<T> {
        let graph = self.mesh.edge_graph();
        if b >= graph.vertex_count() {
            return Err(Error::InvalidVertex(b));
        }
        if !self.rows.contains_key(&a) {
            let row = graph.shortest_paths(a)?;
            self.rows.insert(a, row);
        }
        Ok(graph.to_length(self.rows[&a][b]))
    }

    /// Number of distinct sources solved so far.
    pub fn sources(&self) -> usize {
        self.rows.len()
    }
}
