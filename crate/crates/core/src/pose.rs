//! Log-scale / translation pose and its two-phase render-and-compare refinement.

use serde::{Deserialize, Serialize};

use crate::scalar::{Real, Vec3};

/// Similarity applied to a mesh before the camera: `p -> exp(log_scale) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseParams<T> {
    pub log_scale: T,
    pub translation: Vec3<T>,
}

impl<T: Real> PoseParams<T> {
    pub fn identity() -> Self {
        Self { log_scale: T::zero(), translation: [T::zero(); 3] }
    }

    pub fn scale(&self) -> T {
        self.log_scale.exp()
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.log_scale, self.translation[0], self.translation[1], self.translation[2]]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self { log_scale: a[0], translation: [a[1], a[2], a[3]] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::raster::{dilate, distance_fields, dt_loss, soft_iou_loss, CameraModel, MaskImage, SilhouetteRenderer};

/// Hyperparameters of the two-phase refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub lr_scale: f64,
    pub lr_trans: f64,
    pub steps_dt: usize,
    pub steps_iou: usize,
    /// Interior-coverage reward of the distance-transform loss.
    pub lambda: f64,
    /// Mask dilation radius in pixels before computing distance fields.
    pub dilation: f64,
    /// Silhouette sharpness in pixels.
    pub kappa: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub out_of_frame_limit: f64,
    pub out_of_frame_weight: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            lr_scale: 0.05,
            lr_trans: 0.02,
            steps_dt: 100,
            steps_iou: 50,
            lambda: 4.0,
            dilation: 4.0,
            kappa: 2.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            out_of_frame_limit: 0.25,
            out_of_frame_weight: 10.0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_scale", self.lr_scale),
            ("lr_trans", self.lr_trans),
            ("kappa", self.kappa),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("out_of_frame_limit", self.out_of_frame_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 1.0) {
            return Err(Error::Config(format!("lambda must be at least 1, got {}", self.lambda)));
        }
        if !(self.dilation >= 0.0) || !(self.out_of_frame_weight >= 0.0) {
            return Err(Error::Config("dilation and penalty weight must be non-negative".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    DistanceTransform,
    SoftIou,
}

/// Loss recorded before the update at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep<T> {
    pub step: usize,
    pub phase: Phase,
    /// Active loss including any out-of-frame penalty.
    pub loss: T,
    pub out_of_frame: T,
}

#[derive(Debug, Clone)]
pub struct RefineResult<T> {
    pub pose: PoseParams<T>,
    pub trace: Vec<TraceStep<T>>,
    /// Soft-IoU loss against the raw mask at the returned pose.
    pub final_iou_loss: T,
    /// Distance-transform loss at the returned pose.
    pub final_dt_loss: T,
}

/// Two-phase render-and-compare refinement of log-scale and translation.
///
/// Runs `steps_dt` Adam steps on the distance-transform loss over the dilated mask,
/// then `steps_iou` steps on the soft-IoU loss over the raw mask. Whenever more than
/// `out_of_frame_limit` of the rendered mass leaves the frame, `out_of_frame_weight`
/// times that fraction is added to the loss in either phase.
pub fn refine_pose<T: Real>(
    mesh: &TriangleMesh<T>,
    camera: &CameraModel<T>,
    mask: &MaskImage,
    init: PoseParams<T>,
    cfg: &RefineConfig,
) -> Result<RefineResult<T>> {
    cfg.validate()?;
    camera.validate()?;
    if mask.count() == 0 {
        return Err(Error::Empty("observed mask has no foreground".into()));
    }
    if (mask.height(), mask.width()) != (camera.height, camera.width) {
        return Err(Error::ShapeMismatch("mask size differs from camera image size".into()));
    }
    let renderer = SilhouetteRenderer::new(mesh);
    let fields = distance_fields::<T>(&dilate(mask, cfg.dilation));
    let kappa = T::lit(cfg.kappa);
    let lambda = T::lit(cfg.lambda);
    let limit = T::lit(cfg.out_of_frame_limit);
    let weight = T::lit(cfg.out_of_frame_weight);
    let lrs = [T::lit(cfg.lr_scale), T::lit(cfg.lr_trans), T::lit(cfg.lr_trans), T::lit(cfg.lr_trans)];
    let adam = cfg.adam();

    let mut params = init.to_array();
    let mut state = AdamState::new(4);
    let mut trace = Vec::with_capacity(cfg.steps_dt + cfg.steps_iou);

    let evaluate = |params: [T; 4], phase: Phase| -> Result<(T, [T; 4], T)> {
        let pose = PoseParams::from_array(params);
        let render = renderer.render(camera, &pose, kappa)?;
        let (mut loss, pixel_grad) = match phase {
            Phase::DistanceTransform => dt_loss(&render.soft, &fields, lambda)?,
            Phase::SoftIou => soft_iou_loss(&render.soft, mask)?,
        };
        let mut grad = render.chain(&pixel_grad);
        let frac = render.out_of_frame_fraction()?;
        if frac > limit {
            loss = loss + weight * frac;
            let fg = render.out_of_frame_fraction_grad();
            for k in 0..4 {
                grad[k] = grad[k] + weight * fg[k];
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("{phase:?} loss at pose {params:?}")));
        }
        Ok((loss, grad, frac))
    };

    let schedule = std::iter::repeat(Phase::DistanceTransform)
        .take(cfg.steps_dt)
        .chain(std::iter::repeat(Phase::SoftIou).take(cfg.steps_iou));
    for (step, phase) in schedule.enumerate() {
        if step == cfg.steps_dt {
            state = AdamState::new(4);
        }
        let (loss, grad, frac) = evaluate(params, phase)?;
        trace.push(TraceStep { step, phase, loss, out_of_frame: frac });
        adam_step(&mut params, &grad, &mut state, |i| lrs[i], &adam)?;
    }

    let pose = PoseParams::from_array(params);
    let render = renderer.render(camera, &pose, kappa)?;
    let final_iou_loss = soft_iou_loss(&render.soft, mask)?.0;
    let final_dt_loss = dt_loss(&render.soft, &fields, lambda)?.0;
    Ok(RefineResult { pose, trace, final_iou_loss, final_dt_loss })
}
