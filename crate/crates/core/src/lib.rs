//! Geometry-verified semantic correspondence pseudo-labels from single-view
//! reconstructions.
//!
//! Every numeric type is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the common double-precision instantiations.

pub mod adapter;
pub mod canonicalize;
pub mod error;
pub mod eval;
pub mod features;
pub mod geo_filter;
pub mod geometry;
pub mod optim;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mesh = geometry::TriangleMesh<f64>;
pub type Camera = raster::CameraModel<f64>;
pub type Pose = pose::PoseParams<f64>;
pub type FeatureMap = features::DenseFeatureMap<f64>;
pub type Adapter = adapter::AdapterNet<f64>;
pub type Candidate = geo_filter::CandidateMatch<f64>;

pub type MeshF32 = geometry::TriangleMesh<f32>;
pub type CameraF32 = raster::CameraModel<f32>;
pub type PoseF32 = pose::PoseParams<f32>;
pub type FeatureMapF32 = features::DenseFeatureMap<f32>;
pub type AdapterF32 = adapter::AdapterNet<f32>;
