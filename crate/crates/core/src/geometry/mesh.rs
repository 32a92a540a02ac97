use std::sync::OnceLock;

use log::warn;

use super::bvh::Bvh;
use super::geodesic::EdgeGraph;
use crate::error::{Error, Result};
use crate::scalar::{add3, cross3, norm3, scale3, sub3, Real, Vec3};

/// Per-vertex descriptor field, vertex-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptors<T> {
    dim: usize,
    values: Vec<T>,
}

impl<T: Real> Descriptors<T> {
    pub fn new(dim: usize, values: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ShapeMismatch("descriptor dimension is zero".into()));
        }
        if values.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} descriptor values is not a multiple of dimension {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor entry".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("descriptor rows differ in length".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, v: usize) -> &[T] {
        &self.values[v * self.dim..(v + 1) * self.dim]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Barycentric blend of the three rows of a face.
    pub fn interpolate(&self, face: [usize; 3], bary: [T; 3]) -> Vec<T> {
        let (a, b, c) = (self.row(face[0]), self.row(face[1]), self.row(face[2]));
        (0..self.dim)
            .map(|k| bary[0] * a[k] + bary[1] * b[k] + bary[2] * c[k])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Descriptors<U> {
        Descriptors {
            dim: self.dim,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Immutable triangle mesh with optional per-vertex descriptors.
///
/// Construction validates indices and finiteness, strips zero-area faces and
/// caches the bounding-box diagonal. The edge graph and ray-casting hierarchy
/// are built on first use.
#[derive(Debug)]
pub struct TriangleMesh<T> {
    vertices: Vec<Vec3<T>>,
    faces: Vec<[usize; 3]>,
    descriptors: Option<Descriptors<T>>,
    diag: T,
    dropped_faces: usize,
    graph: OnceLock<EdgeGraph>,
    bvh: OnceLock<Bvh<T>>,
}

impl<T: Real> Clone for TriangleMesh<T> {
    fn clone(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
            descriptors: self.descriptors.clone(),
            diag: self.diag,
            dropped_faces: self.dropped_faces,
            graph: OnceLock::new(),
            bvh: OnceLock::new(),
        }
    }
}

/// Euclidean length of the axis-aligned bounding-box diagonal.
pub fn bounding_diag<T: Real>(vertices: &[Vec3<T>]) -> Result<T> {
    if vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut lo = vertices[0];
    let mut hi = vertices[0];
    for v in vertices {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let d = norm3(sub3(hi, lo));
    if !(d > T::zero()) {
        return Err(Error::Degenerate("bounding box has zero extent".into()));
    }
    Ok(d)
}

impl<T: Real> TriangleMesh<T> {
    pub fn new(
        vertices: Vec<Vec3<T>>,
        faces: Vec<[usize; 3]>,
        descriptors: Option<Descriptors<T>>,
    ) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("vertex coordinate".into()));
        }
        for (fi, f) in faces.iter().enumerate() {
            for &index in f {
                if index >= vertices.len() {
                    return Err(Error::IndexOutOfRange { face: fi, index, count: vertices.len() });
                }
            }
        }
        if let Some(d) = &descriptors {
            if d.len() != vertices.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} descriptors for {} vertices",
                    d.len(),
                    vertices.len()
                )));
            }
        }
        let diag = bounding_diag(&vertices)?;
        let area_eps = T::lit(1e-12) * diag * diag;
        let before = faces.len();
        let faces: Vec<[usize; 3]> = faces
            .into_iter()
            .filter(|f| {
                let [a, b, c] = f.map(|i| vertices[i]);
                norm3(cross3(sub3(b, a), sub3(c, a))) > area_eps
            })
            .collect();
        let dropped_faces = before - faces.len();
        if dropped_faces > 0 {
            warn!("dropped {dropped_faces} zero-area faces");
        }
        if faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(Self {
            vertices,
            faces,
            descriptors,
            diag,
            dropped_faces,
            graph: OnceLock::new(),
            bvh: OnceLock::new(),
        })
    }

    pub fn vertices(&self) -> &[Vec3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn descriptors(&self) -> Option<&Descriptors<T>> {
        self.descriptors.as_ref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Cached bounding-box diagonal, always positive.
    pub fn diag(&self) -> T {
        self.diag
    }

    /// Number of zero-area faces removed during construction.
    pub fn dropped_faces(&self) -> usize {
        self.dropped_faces
    }

    pub fn face_vertices(&self, face: usize) -> [Vec3<T>; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }

    pub fn aabb(&self) -> (Vec3<T>, Vec3<T>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn aabb_center(&self) -> Vec3<T> {
        let (lo, hi) = self.aabb();
        scale3(add3(lo, hi), T::lit(0.5))
    }

    pub fn with_descriptors(self, descriptors: Option<Descriptors<T>>) -> Result<Self> {
        Self::new(self.vertices, self.faces, descriptors)
    }

    /// Applies `f` to every vertex, keeping topology and descriptors.
    pub fn map_vertices(&self, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Result<Self> {
        let vertices = self.vertices.iter().map(|&v| f(v)).collect();
        Self::new(vertices, self.faces.clone(), self.descriptors.clone())
    }

    pub fn scaled(&self, s: T) -> Result<Self> {
        self.map_vertices(|v| scale3(v, s))
    }

    pub fn cast<U: Real>(&self) -> TriangleMesh<U> {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| v.map(|c| U::lit(c.as_f64()))).collect(),
            faces: self.faces.clone(),
            descriptors: self.descriptors.as_ref().map(Descriptors::cast),
            diag: U::lit(self.diag.as_f64()),
            dropped_faces: self.dropped_faces,
            graph: OnceLock::new(),
            bvh: OnceLock::new(),
        }
    }

    pub fn edge_graph(&self) -> &EdgeGraph {
        self.graph.get_or_init(|| EdgeGraph::build(self))
    }

    pub(crate) fn bvh(&self) -> &Bvh<T> {
        self.bvh.get_or_init(|| Bvh::build(self))
    }
}

/// A point on a mesh face in barycentric form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint<T> {
    pub face: usize,
    pub bary: [T; 3],
    pub position: Vec3<T>,
    /// Ray parameter of the hit, in world units along the unit direction.
    pub distance: T,
}

impl<T: Real> SurfacePoint<T> {
    pub fn on_face(mesh: &TriangleMesh<T>, face: usize, bary: [T; 3]) -> Self {
        let [a, b, c] = mesh.face_vertices(face);
        let position = add3(add3(scale3(a, bary[0]), scale3(b, bary[1])), scale3(c, bary[2]));
        Self { face, bary, position, distance: T::zero() }
    }
}

/// Face vertex with the largest barycentric weight.
///
/// Weights within `1e-12` of the maximum count as tied; ties go to the lowest vertex index.
pub fn dominant_vertex<T: Real>(p: &SurfacePoint<T>, mesh: &TriangleMesh<T>) -> usize {
    let face = mesh.faces()[p.face];
    let max = p.bary.iter().copied().fold(T::neg_infinity(), T::max);
    let tol = T::lit(1e-12);
    (0..3)
        .filter(|&k| p.bary[k] >= max - tol)
        .map(|k| face[k])
        .min()
        .expect("at least one weight attains the maximum")
}
