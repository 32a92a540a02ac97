use std::collections::BTreeMap;

use super::camera::CameraModel;
use super::image::{MaskImage, SoftMask};
use super::loss::out_of_frame_fraction;
use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::pose::PoseParams;
use crate::scalar::{mat_vec, scale3, sigmoid, Real, Vec2};

/// Pixels beyond this many sharpness units outside the projected shape contribute
/// less than `sigmoid(-20)` each and are not visited for the off-frame mass.
const MASS_MARGIN_KAPPAS: f64 = 20.0;

/// Soft silhouette with analytic derivatives with respect to `(log_scale, tx, ty, tz)`.
#[derive(Debug, Clone)]
pub struct SilhouetteRender<T> {
    pub soft: SoftMask<T>,
    /// Per in-frame pixel, d value / d (log_scale, tx, ty, tz).
    pub grad: Vec<[T; 4]>,
    /// Binary coverage of the projected triangles, equal to `soft >= 0.5`.
    pub coverage: MaskImage,
    pub total_mass: T,
    pub in_frame_mass: T,
    pub total_mass_grad: [T; 4],
    pub in_frame_mass_grad: [T; 4],
}

impl<T: Real> SilhouetteRender<T> {
    pub fn out_of_frame_fraction(&self) -> Result<T> {
        out_of_frame_fraction(self.total_mass, self.in_frame_mass)
    }

    /// Gradient of `1 - in_frame / total`.
    pub fn out_of_frame_fraction_grad(&self) -> [T; 4] {
        let t = self.total_mass;
        let i = self.in_frame_mass;
        let mut g = [T::zero(); 4];
        for k in 0..4 {
            g[k] = -(self.in_frame_mass_grad[k] * t - i * self.total_mass_grad[k]) / (t * t);
        }
        g
    }

    /// Chains a per-pixel gradient `dL/dm` to `dL/d(log_scale, t)`.
    pub fn chain(&self, pixel_grad: &[T]) -> [T; 4] {
        let mut g = [T::zero(); 4];
        for (pg, dm) in pixel_grad.iter().zip(&self.grad) {
            for k in 0..4 {
                g[k] = g[k] + *pg * dm[k];
            }
        }
        g
    }
}

/// Mesh-bound renderer; precomputes the edge/face incidence used for contour extraction.
#[derive(Debug, Clone)]
pub struct SilhouetteRenderer<'m, T: Real> {
    mesh: &'m TriangleMesh<T>,
    edges: Vec<([usize; 2], Vec<usize>)>,
}

struct Projected<T> {
    pixel: Vec<Vec2<T>>,
    jac: Vec<[[T; 4]; 2]>,
    front: Vec<bool>,
}

#[derive(Clone, Copy)]
struct Rect {
    x0: i64,
    x1: i64,
    y0: i64,
    y1: i64,
}

impl<'m, T: Real> SilhouetteRenderer<'m, T> {
    pub fn new(mesh: &'m TriangleMesh<T>) -> Self {
        let mut map: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (fi, f) in mesh.faces().iter().enumerate() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                map.entry([a.min(b), a.max(b)]).or_default().push(fi);
            }
        }
        Self { mesh, edges: map.into_iter().collect() }
    }

    fn project(&self, camera: &CameraModel<T>, pose: &PoseParams<T>) -> Projected<T> {
        let s = pose.scale();
        let n = self.mesh.vertex_count();
        let mut out = Projected { pixel: Vec::with_capacity(n), jac: Vec::with_capacity(n), front: Vec::with_capacity(n) };
        let r = &camera.rotation;
        for &p in self.mesh.vertices() {
            let c = camera.to_camera(pose, p);
            let z = c[2];
            out.front.push(z > T::zero());
            out.pixel.push([camera.fx * c[0] / z + camera.cx, camera.fy * c[1] / z + camera.cy]);
            // dc/dθ columns: log-scale, then the three translation axes
            let dl = mat_vec(r, scale3(p, s));
            let cols = [dl, [r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]];
            let mut j = [[T::zero(); 4]; 2];
            for k in 0..4 {
                let dc = cols[k];
                j[0][k] = camera.fx * (dc[0] / z - c[0] * dc[2] / (z * z));
                j[1][k] = camera.fy * (dc[1] / z - c[1] * dc[2] / (z * z));
            }
            out.jac.push(j);
        }
        out
    }

    /// Renders `sigmoid(signed_distance / kappa)` over the camera frame.
    ///
    /// The signed distance is measured from each pixel center to the nearest contour
    /// edge of the projected mesh, positive on covered pixels. Faces with a vertex at
    /// or behind the camera plane are skipped.
    pub fn render(&self, camera: &CameraModel<T>, pose: &PoseParams<T>, kappa: T) -> Result<SilhouetteRender<T>> {
        if !(kappa > T::zero()) {
            return Err(Error::Config("silhouette sharpness must be positive".into()));
        }
        let proj = self.project(camera, pose);
        let faces = self.mesh.faces();
        let valid: Vec<bool> = faces.iter().map(|f| f.iter().all(|&v| proj.front[v])).collect();
        if !valid.iter().any(|&v| v) {
            return Err(Error::BehindCamera);
        }
        let signed_area = |f: &[usize; 3]| {
            let [a, b, c] = f.map(|v| proj.pixel[v]);
            (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        };
        let orient: Vec<i8> = faces
            .iter()
            .map(|f| {
                let s = signed_area(f);
                if s > T::zero() {
                    1
                } else if s < T::zero() {
                    -1
                } else {
                    0
                }
            })
            .collect();

        let contour: Vec<[usize; 2]> = self
            .edges
            .iter()
            .filter_map(|(e, fs)| {
                let signs: Vec<i8> = fs.iter().filter(|&&f| valid[f]).map(|&f| orient[f]).collect();
                let is_contour = match signs.as_slice() {
                    [] => false,
                    [_] => true,
                    [first, rest @ ..] => *first == 0 || rest.iter().any(|s| s != first),
                };
                is_contour.then_some(*e)
            })
            .collect();

        let (w, h) = (camera.width as i64, camera.height as i64);
        let margin = kappa * T::lit(MASS_MARGIN_KAPPAS);
        let (mut lo, mut hi) = ([T::infinity(); 2], [T::neg_infinity(); 2]);
        for (fi, f) in faces.iter().enumerate() {
            if valid[fi] {
                for &v in f {
                    for k in 0..2 {
                        lo[k] = lo[k].min(proj.pixel[v][k]);
                        hi[k] = hi[k].max(proj.pixel[v][k]);
                    }
                }
            }
        }
        let clamp = |x: T, min: i64, max: i64| -> i64 {
            let x = x.as_f64();
            if x.is_nan() {
                min
            } else {
                (x as i64).clamp(min, max)
            }
        };
        let shape = Rect {
            x0: clamp((lo[0] - margin).floor(), -w, 2 * w - 1),
            x1: clamp((hi[0] + margin).ceil(), -w, 2 * w - 1),
            y0: clamp((lo[1] - margin).floor(), -h, 2 * h - 1),
            y1: clamp((hi[1] + margin).ceil(), -h, 2 * h - 1),
        };
        let domain = Rect { x0: shape.x0.min(0), x1: shape.x1.max(w - 1), y0: shape.y0.min(0), y1: shape.y1.max(h - 1) };
        let dw = (domain.x1 - domain.x0 + 1) as usize;
        let dh = (domain.y1 - domain.y0 + 1) as usize;

        // coverage of pixel centers by projected triangles
        let mut covered = vec![false; dw * dh];
        for (fi, f) in faces.iter().enumerate() {
            if !valid[fi] || orient[fi] == 0 {
                continue;
            }
            let [a, b, c] = f.map(|v| proj.pixel[v]);
            let fx0 = clamp(a[0].min(b[0]).min(c[0]).floor(), domain.x0, domain.x1);
            let fx1 = clamp(a[0].max(b[0]).max(c[0]).ceil(), domain.x0, domain.x1);
            let fy0 = clamp(a[1].min(b[1]).min(c[1]).floor(), domain.y0, domain.y1);
            let fy1 = clamp(a[1].max(b[1]).max(c[1]).ceil(), domain.y0, domain.y1);
            let sgn = if orient[fi] > 0 { T::one() } else { -T::one() };
            for y in fy0..=fy1 {
                for x in fx0..=fx1 {
                    let p = [T::lit(x as f64), T::lit(y as f64)];
                    let e = |u: Vec2<T>, v: Vec2<T>| sgn * ((v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0]));
                    if e(a, b) >= T::zero() && e(b, c) >= T::zero() && e(c, a) >= T::zero() {
                        covered[(y - domain.y0) as usize * dw + (x - domain.x0) as usize] = true;
                    }
                }
            }
        }

        let segs: Vec<(Vec2<T>, Vec2<T>, usize, usize)> =
            contour.iter().map(|&[i, j]| (proj.pixel[i], proj.pixel[j], i, j)).collect();
        let inv_kappa = T::one() / kappa;
        let zero4 = [T::zero(); 4];

        let frame_len = camera.width * camera.height;
        let mut soft = vec![T::zero(); frame_len];
        let mut grad = vec![zero4; frame_len];
        let mut cov = vec![0u8; frame_len];
        let (mut total, mut in_frame) = (T::zero(), T::zero());
        let (mut total_g, mut in_frame_g) = (zero4, zero4);

        for y in domain.y0..=domain.y1 {
            let in_rows = (0..h).contains(&y);
            let in_shape_rows = (shape.y0..=shape.y1).contains(&y);
            if !in_rows && !in_shape_rows {
                continue;
            }
            for x in domain.x0..=domain.x1 {
                let in_frame_px = in_rows && (0..w).contains(&x);
                if !in_frame_px && !(in_shape_rows && (shape.x0..=shape.x1).contains(&x)) {
                    continue;
                }
                let inside = covered[(y - domain.y0) as usize * dw + (x - domain.x0) as usize];
                let p = [T::lit(x as f64), T::lit(y as f64)];
                let (value, g) = pixel_value(p, inside, &segs, &proj.jac, inv_kappa);
                total = total + value;
                for k in 0..4 {
                    total_g[k] = total_g[k] + g[k];
                }
                if in_frame_px {
                    let idx = y as usize * camera.width + x as usize;
                    soft[idx] = value;
                    grad[idx] = g;
                    cov[idx] = (value >= T::lit(0.5)) as u8;
                    in_frame = in_frame + value;
                    for k in 0..4 {
                        in_frame_g[k] = in_frame_g[k] + g[k];
                    }
                }
            }
        }

        Ok(SilhouetteRender {
            soft: SoftMask::from_raw(camera.height, camera.width, soft),
            grad,
            coverage: MaskImage::new(camera.height, camera.width, cov).expect("binary coverage"),
            total_mass: total,
            in_frame_mass: in_frame,
            total_mass_grad: total_g,
            in_frame_mass_grad: in_frame_g,
        })
    }
}

/// Soft value at one pixel and its derivative with respect to the pose.
fn pixel_value<T: Real>(
    p: Vec2<T>,
    inside: bool,
    segs: &[(Vec2<T>, Vec2<T>, usize, usize)],
    jac: &[[[T; 4]; 2]],
    inv_kappa: T,
) -> (T, [T; 4]) {
    let mut best: Option<(T, T, usize)> = None;
    for (si, &(a, b, _, _)) in segs.iter().enumerate() {
        let ab = [b[0] - a[0], b[1] - a[1]];
        let ap = [p[0] - a[0], p[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let u = if len2 > T::zero() { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).max(T::zero()).min(T::one()) } else { T::zero() };
        let dx = ap[0] - u * ab[0];
        let dy = ap[1] - u * ab[1];
        let d2 = dx * dx + dy * dy;
        if best.map_or(true, |(bd, _, _)| d2 < bd) {
            best = Some((d2, u, si));
        }
    }
    let Some((d2, u, si)) = best else {
        return (if inside { T::one() } else { T::zero() }, [T::zero(); 4]);
    };
    let dist = d2.sqrt();
    let sign = if inside { T::one() } else { -T::one() };
    let value = sigmoid(sign * dist * inv_kappa);
    let mut g = [T::zero(); 4];
    if dist > T::zero() {
        let (a, b, ia, ib) = segs[si];
        let q = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
        let n = [(p[0] - q[0]) / dist, (p[1] - q[1]) / dist];
        // d dist / d a = -(1 - u) n, d dist / d b = -u n
        let scale = value * (T::one() - value) * inv_kappa * sign;
        let (ja, jb) = (&jac[ia], &jac[ib]);
        for k in 0..4 {
            let dda = n[0] * ja[0][k] + n[1] * ja[1][k];
            let ddb = n[0] * jb[0][k] + n[1] * jb[1][k];
            g[k] = -scale * ((T::one() - u) * dda + u * ddb);
        }
    }
    (value, g)
}

/// One-shot soft silhouette render.
pub fn render_soft_silhouette<T: Real>(
    mesh: &TriangleMesh<T>,
    camera: &CameraModel<T>,
    pose: &PoseParams<T>,
    kappa: T,
) -> Result<SilhouetteRender<T>> {
    SilhouetteRenderer::new(mesh).render(camera, pose, kappa)
}

/// Binary coverage of the projected mesh (the soft render thresholded at one half).
pub fn render_coverage<T: Real>(mesh: &TriangleMesh<T>, camera: &CameraModel<T>, pose: &PoseParams<T>) -> Result<MaskImage> {
    Ok(render_soft_silhouette(mesh, camera, pose, T::one())?.coverage)
}
