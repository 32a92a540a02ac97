use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Ray;
use crate::pose::PoseParams;
use crate::scalar::{add3, cross3, dot3, mat_t_vec, mat_vec, norm3, scale3, sub3, Real, Vec2, Vec3};

/// Pinhole camera. Camera coordinates are x right, y down, z forward; pixel
/// centers sit at integer coordinates `(col, row)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    /// World-to-camera rotation.
    pub rotation: [[T; 3]; 3],
    pub translation: Vec3<T>,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    pub pixel: Vec2<T>,
    pub depth: T,
}

impl<T: Real> Projection<T> {
    pub fn in_front(&self) -> bool {
        self.depth > T::zero()
    }
}

impl<T: Real> CameraModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d = dot3(r[i], r[j]);
                let want = if i == j { T::one() } else { T::zero() };
                if (d - want).abs() > T::lit(1e-6) {
                    return Err(Error::Config("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, focal: T, width: usize, height: usize) -> Result<Self> {
        let f = sub3(target, eye);
        let fnorm = norm3(f);
        if !(fnorm > T::zero()) {
            return Err(Error::Config("eye and target coincide".into()));
        }
        let f = scale3(f, T::one() / fnorm);
        let down = sub3(scale3(f, dot3(up, f)), up);
        let dn = norm3(down);
        if !(dn > T::lit(1e-12)) {
            return Err(Error::Config("up vector parallel to view direction".into()));
        }
        let down = scale3(down, T::one() / dn);
        let right = cross3(down, f);
        let rotation = [right, down, f];
        let translation = scale3(mat_vec(&rotation, eye), -T::one());
        let half = |n: usize| (T::of(n) - T::one()) / T::lit(2.0);
        let cam = Self { fx: focal, fy: focal, cx: half(width), cy: half(height), rotation, translation, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera-frame coordinates of a mesh point under `pose`.
    pub fn to_camera(&self, pose: &PoseParams<T>, point: Vec3<T>) -> Vec3<T> {
        let posed = add3(scale3(point, pose.scale()), pose.translation);
        add3(mat_vec(&self.rotation, posed), self.translation)
    }

    /// Projects a mesh point. The pixel is meaningful only if [`Projection::in_front`].
    pub fn project(&self, pose: &PoseParams<T>, point: Vec3<T>) -> Projection<T> {
        let c = self.to_camera(pose, point);
        Projection {
            pixel: [self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy],
            depth: c[2],
        }
    }

    /// Ray through `pixel`, expressed in the mesh's own frame (pose undone).
    pub fn pixel_ray(&self, pose: &PoseParams<T>, pixel: Vec2<T>) -> Option<Ray<T>> {
        let d_cam = [(pixel[0] - self.cx) / self.fx, (pixel[1] - self.cy) / self.fy, T::one()];
        let center = scale3(mat_t_vec(&self.rotation, self.translation), -T::one());
        let dir = mat_t_vec(&self.rotation, d_cam);
        let inv_s = T::one() / pose.scale();
        Ray::new(scale3(sub3(center, pose.translation), inv_s), scale3(dir, inv_s))
    }

    pub fn diagonal(&self) -> T {
        T::of(self.width).hypot(T::of(self.height))
    }

    pub fn cast<U: Real>(&self) -> CameraModel<U> {
        let c = |x: T| U::lit(x.as_f64());
        CameraModel {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            rotation: self.rotation.map(|r| r.map(c)),
            translation: self.translation.map(c),
            width: self.width,
            height: self.height,
        }
    }
}
