//! Triangle meshes, ray casting and edge-graph geodesics.

mod bvh;
mod geodesic;
pub mod io;
mod mesh;
mod ray;

pub use geodesic::{geodesic_from, EdgeGraph, GeodesicCache};
pub use mesh::{bounding_diag, dominant_vertex, Descriptors, SurfacePoint, TriangleMesh};
pub use ray::{intersect_triangle, raycast, raycast_brute_force, Ray};
