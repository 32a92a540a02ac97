use super::map::DenseFeatureMap;
use crate::error::{Error, Result};
use crate::geometry::{raycast, TriangleMesh};
use crate::pose::PoseParams;
use crate::raster::{CameraModel, MaskImage};
use crate::scalar::Real;

/// Per-vertex descriptors projected onto a feature grid.
#[derive(Debug, Clone)]
pub struct RasterizedDescriptors<T> {
    pub map: DenseFeatureMap<T>,
    /// Grid cells whose center ray hit the mesh and lie in the foreground.
    pub covered: MaskImage,
    /// Grid cells whose center pixel lies in the foreground mask.
    pub foreground: MaskImage,
}

/// Casts a ray through each cell center and interpolates the hit face's descriptors.
///
/// Background cells are zero. Foreground cells without a hit copy the nearest covered
/// cell (Euclidean grid distance, ties to the smaller row, then column); they stay zero
/// only when no cell is covered.
pub fn rasterize_vertex_descriptors<T: Real>(
    mesh: &TriangleMesh<T>,
    camera: &CameraModel<T>,
    pose: &PoseParams<T>,
    fg_mask: &MaskImage,
    grid_h: usize,
    grid_w: usize,
    patch_size: usize,
) -> Result<RasterizedDescriptors<T>> {
    let descriptors = mesh.descriptors().ok_or(Error::MissingDescriptors)?;
    let dim = descriptors.dim();
    let mut map = DenseFeatureMap::zeros(grid_h, grid_w, dim, patch_size)?;
    let foreground = map.cell_mask(fg_mask);
    let mut covered = MaskImage::zeros(grid_h, grid_w);
    for i in 0..map.cells() {
        let (r, c) = (i / grid_w, i % grid_w);
        if !foreground.get(r, c) {
            continue;
        }
        let [x, y] = map.cell_center(i);
        let hit = camera.pixel_ray(pose, [T::lit(x), T::lit(y)]).and_then(|ray| raycast(mesh, ray.origin, ray.direction));
        if let Some(hit) = hit {
            let value = descriptors.interpolate(mesh.faces()[hit.face], hit.bary);
            map.cell_mut(i).copy_from_slice(&value);
            covered.set(r, c, true);
        }
    }

    let sources: Vec<(usize, usize)> = (0..grid_h).flat_map(|r| (0..grid_w).map(move |c| (r, c))).filter(|&(r, c)| covered.get(r, c)).collect();
    if !sources.is_empty() {
        for r in 0..grid_h {
            for c in 0..grid_w {
                if !foreground.get(r, c) || covered.get(r, c) {
                    continue;
                }
                // Row-major scan with strict improvement keeps the smallest (row, col) on ties.
                let mut best = sources[0];
                let mut best_d = usize::MAX;
                for &(sr, sc) in &sources {
                    let d = sr.abs_diff(r).pow(2) + sc.abs_diff(c).pow(2);
                    if d < best_d {
                        best = (sr, sc);
                        best_d = d;
                    }
                }
                let value = map.at(best.0, best.1).to_vec();
                map.cell_mut(r * grid_w + c).copy_from_slice(&value);
            }
        }
    }
    Ok(RasterizedDescriptors { map, covered, foreground })
}
