use super::mesh::{SurfacePoint, TriangleMesh};
use super::ray::{hit_point, intersect_triangle, self_hit_epsilon, Ray};
use crate::scalar::{Real, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb<T> {
    lo: Vec3<T>,
    hi: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    fn empty() -> Self {
        Self { lo: [T::infinity(); 3], hi: [T::neg_infinity(); 3] }
    }

    fn grow(&mut self, p: Vec3<T>) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    fn pad(&mut self, eps: T) {
        for k in 0..3 {
            self.lo[k] = self.lo[k] - eps;
            self.hi[k] = self.hi[k] + eps;
        }
    }

    /// Slab test; returns the entry parameter if the ray overlaps the box at `t <= t_max`.
    fn entry(&self, ray: &Ray<T>, t_max: T) -> Option<T> {
        let mut t0 = T::neg_infinity();
        let mut t1 = t_max;
        for k in 0..3 {
            let d = ray.direction[k];
            let o = ray.origin[k];
            if d == T::zero() {
                if o < self.lo[k] || o > self.hi[k] {
                    return None;
                }
                continue;
            }
            let inv = T::one() / d;
            let (mut a, mut b) = ((self.lo[k] - o) * inv, (self.hi[k] - o) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        if t1 < T::zero() {
            return None;
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { bounds: Aabb<T>, start: usize, end: usize },
    Inner { bounds: Aabb<T>, left: usize, right: usize },
}

impl<T: Real> Node<T> {
    fn bounds(&self) -> &Aabb<T> {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Median-split bounding volume hierarchy over mesh faces.
#[derive(Debug, Clone)]
pub(crate) struct Bvh<T> {
    nodes: Vec<Node<T>>,
    order: Vec<usize>,
}

impl<T: Real> Bvh<T> {
    pub(crate) fn build(mesh: &TriangleMesh<T>) -> Self {
        let n = mesh.face_count();
        let centroids: Vec<Vec3<T>> = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.face_vertices(f);
                [0, 1, 2].map(|k| (a[k] + b[k] + c[k]) / T::lit(3.0))
            })
            .collect();
        let mut bvh = Self { nodes: Vec::new(), order: (0..n).collect() };
        let pad = T::lit(1e-9) * mesh.diag();
        bvh.build_node(mesh, &centroids, 0, n, pad);
        bvh
    }

    fn build_node(&mut self, mesh: &TriangleMesh<T>, centroids: &[Vec3<T>], start: usize, end: usize, pad: T) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &self.order[start..end] {
            for v in mesh.face_vertices(f) {
                bounds.grow(v);
            }
            cbounds.grow(centroids[f]);
        }
        bounds.pad(pad);
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let axis = (0..3)
            .max_by(|&a, &b| {
                (cbounds.hi[a] - cbounds.lo[a])
                    .partial_cmp(&(cbounds.hi[b] - cbounds.lo[b]))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        self.order[start..end].sort_by(|&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mid = (start + end) / 2;
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.build_node(mesh, centroids, start, mid, pad);
        let right = self.build_node(mesh, centroids, mid, end, pad);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    pub(crate) fn nearest_hit(&self, mesh: &TriangleMesh<T>, ray: &Ray<T>) -> Option<SurfacePoint<T>> {
        let t_min = self_hit_epsilon(mesh);
        let mut best: Option<(T, usize, [T; 3])> = None;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let t_max = best.map_or(T::infinity(), |b| b.0);
            if node.bounds().entry(ray, t_max).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &face in &self.order[start..end] {
                        if let Some((t, bary)) = intersect_triangle(ray, mesh.face_vertices(face), t_min) {
                            let better = match best {
                                None => true,
                                Some((bt, bf, _)) => t < bt || (t == bt && face < bf),
                            };
                            if better {
                                best = Some((t, face, bary));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best.map(|(t, face, bary)| hit_point(mesh, face, bary, t))
    }
}
