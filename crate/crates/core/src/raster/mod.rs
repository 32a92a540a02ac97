//! Camera projection, soft silhouettes, distance fields and the mask-alignment losses.

mod camera;
mod distance;
mod image;
mod loss;
mod silhouette;

pub use camera::{CameraModel, Projection};
pub use distance::{dilate, distance_fields, squared_distance_transform, DistanceFields};
pub use image::{MaskImage, SoftMask};
pub use loss::{dt_loss, out_of_frame_fraction, soft_iou_loss};
pub use silhouette::{render_coverage, render_soft_silhouette, SilhouetteRender, SilhouetteRenderer};
