//! Dense feature maps: storage, fusion, descriptor rasterization and matching.

mod fusion;
mod map;
mod matching;
mod rasterize;

pub use fusion::{fuse, FusionWeights};
pub use map::DenseFeatureMap;
pub use matching::{cyclic_filter, mutual_nn_filter, nn_match, predict_points, CyclicOutcome};
pub use rasterize::{rasterize_vertex_descriptors, RasterizedDescriptors};
