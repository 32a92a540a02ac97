use super::mesh::{SurfacePoint, TriangleMesh};
use crate::scalar::{add3, cross3, dot3, norm3, scale3, sub3, Real, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    /// Unit length.
    pub direction: Vec3<T>,
}

impl<T: Real> Ray<T> {
    /// Normalizes `direction`; returns `None` for a zero or non-finite direction.
    pub fn new(origin: Vec3<T>, direction: Vec3<T>) -> Option<Self> {
        let n = norm3(direction);
        if !(n > T::zero()) || !n.is_finite() {
            return None;
        }
        Some(Self { origin, direction: scale3(direction, T::one() / n) })
    }

    pub fn at(&self, t: T) -> Vec3<T> {
        add3(self.origin, scale3(self.direction, t))
    }
}

/// Tolerance on barycentric coordinates so rays through shared edges hit at least one face.
const BARY_TOL: f64 = 1e-12;

/// Möller–Trumbore intersection. Returns the ray parameter and the barycentric
/// weights `(w0, w1, w2)` of the hit, for hits with `t > t_min`.
pub fn intersect_triangle<T: Real>(ray: &Ray<T>, tri: [Vec3<T>; 3], t_min: T) -> Option<(T, [T; 3])> {
    let [v0, v1, v2] = tri;
    let e1 = sub3(v1, v0);
    let e2 = sub3(v2, v0);
    let pvec = cross3(ray.direction, e2);
    let det = dot3(e1, pvec);
    let scale = norm3(e1) * norm3(e2);
    if !(det.abs() > T::lit(1e-12) * scale) {
        return None;
    }
    let inv = T::one() / det;
    let tvec = sub3(ray.origin, v0);
    let u = dot3(tvec, pvec) * inv;
    let tol = T::lit(BARY_TOL);
    if u < -tol || u > T::one() + tol {
        return None;
    }
    let qvec = cross3(tvec, e1);
    let v = dot3(ray.direction, qvec) * inv;
    if v < -tol || u + v > T::one() + tol {
        return None;
    }
    let t = dot3(e2, qvec) * inv;
    if !(t > t_min) {
        return None;
    }
    let u = u.max(T::zero());
    let v = v.max(T::zero());
    let w = (T::one() - u - v).max(T::zero());
    let s = u + v + w;
    Some((t, [w / s, u / s, v / s]))
}

pub(crate) fn self_hit_epsilon<T: Real>(mesh: &TriangleMesh<T>) -> T {
    T::lit(1e-9) * mesh.diag()
}

/// Nearest hit along the positive ray, by exhaustive scan over all faces.
/// Ties in `t` go to the lower face index.
pub fn raycast_brute_force<T: Real>(mesh: &TriangleMesh<T>, ray: &Ray<T>) -> Option<SurfacePoint<T>> {
    let t_min = self_hit_epsilon(mesh);
    let mut best: Option<(T, usize, [T; 3])> = None;
    for face in 0..mesh.face_count() {
        if let Some((t, bary)) = intersect_triangle(ray, mesh.face_vertices(face), t_min) {
            if best.map_or(true, |(bt, _, _)| t < bt) {
                best = Some((t, face, bary));
            }
        }
    }
    best.map(|(t, face, bary)| hit_point(mesh, face, bary, t))
}

pub(crate) fn hit_point<T: Real>(mesh: &TriangleMesh<T>, face: usize, bary: [T; 3], t: T) -> SurfacePoint<T> {
    let mut p = SurfacePoint::on_face(mesh, face, bary);
    p.distance = t;
    p
}

/// Nearest intersection of a ray with the mesh, or `None` on a miss.
///
/// `direction` need not be normalized. Uses the mesh's bounding-volume hierarchy;
/// results are identical to [`raycast_brute_force`].
pub fn raycast<T: Real>(mesh: &TriangleMesh<T>, origin: Vec3<T>, direction: Vec3<T>) -> Option<SurfacePoint<T>> {
    let ray = Ray::new(origin, direction)?;
    mesh.bvh().nearest_hit(mesh, &ray)
}
