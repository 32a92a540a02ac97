use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::stream_seed;
use super::manifest::{ImageEntry, Manifest};
use crate::error::{Error, Result};
use crate::eval::{AnnotationSet, KeypointAnnotation};
use crate::features::DenseFeatureMap;
use crate::geometry::{io::write_descriptors, io::write_mesh, raycast, TriangleMesh};
use crate::pose::PoseParams;
use crate::synth::{make_mesh, mirror_vertex, random_unit, scene_from_mesh, visible_vertices, MeshKind, SceneParams, SynthScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDataset {
    pub pairs: usize,
    pub image_size: usize,
    /// Cells per side of the written image feature maps.
    pub feature_grid: usize,
    /// Keypoints per side of the symmetry plane.
    pub keypoint_pairs: usize,
}

impl Default for SyntheticDataset {
    fn default() -> Self {
        Self { pairs: 10, image_size: 96, feature_grid: 24, keypoint_pairs: 5 }
    }
}

/// Keypoint vertices: the first `n` vertices clearly right of the symmetry plane,
/// each followed by its mirror.
fn keypoint_vertices(mesh: &TriangleMesh<f64>, n: usize) -> Vec<usize> {
    let c = mesh.aabb_center();
    let (lo, hi) = mesh.aabb();
    let half = (hi[0] - lo[0]) / 2.0;
    mesh.vertices()
        .iter()
        .enumerate()
        .filter(|(_, p)| p[0] - c[0] > 0.4 * half)
        .take(n)
        .flat_map(|(v, _)| [v, mirror_vertex(mesh, v)])
        .collect()
}

/// Symmetric stand-ins for learned image features: both ignore which side of the
/// object a surface point lies on.
fn image_features(scene: &SynthScene, grid: usize, rng: &mut ChaCha8Rng) -> Result<[DenseFeatureMap<f64>; 2]> {
    let size = scene.camera.width.max(scene.camera.height);
    let ps = size.div_ceil(grid);
    let (lo, hi) = scene.mesh.aabb();
    let c = scene.mesh.aabb_center();
    let mut a = DenseFeatureMap::zeros(grid, grid, 12, ps)?;
    let mut b = DenseFeatureMap::zeros(grid, grid, 4, ps)?;
    for i in 0..grid * grid {
        let [x, y] = a.cell_center(i);
        let (r, col) = (y.round() as usize, x.round() as usize);
        if r >= scene.mask.height() || col >= scene.mask.width() || !scene.mask.get(r, col) {
            continue;
        }
        let Some(ray) = scene.camera.pixel_ray(&scene.gt_pose, [x, y]) else { continue };
        let Some(hit) = raycast(&scene.mesh, ray.origin, ray.direction) else { continue };
        let q = [0, 1, 2].map(|k| (hit.position[k] - c[k]) / ((hi[k] - lo[k]) / 2.0).max(1e-12));
        let coords = [q[0].abs(), q[1], q[2]];
        let cell = a.cell_mut(i);
        for (k, &v) in coords.iter().enumerate() {
            for f in 0..2 {
                let w = (f + 1) as f64 * PI * v / 2.0;
                cell[4 * k + 2 * f] = w.sin() + 0.05 * (2.0 * rng.random::<f64>() - 1.0);
                cell[4 * k + 2 * f + 1] = w.cos() + 0.05 * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        let radial = 1.0 - (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt().min(1.0);
        let cell = b.cell_mut(i);
        for (k, v) in [coords[0], coords[1], coords[2], radial].into_iter().enumerate() {
            cell[k] = v + 0.1 * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    Ok([a, b])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes a chain of `pairs + 1` synthetic images, each image paired with the next,
/// together with keypoint annotations, and returns the manifest path.
///
/// Every image holds a distinct blob seen from a random yaw, with a perturbed
/// starting pose for refinement.
pub fn write_synthetic_dataset(dir: &Path, params: &SyntheticDataset, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::default();
    let mut annotations = AnnotationSet { images: BTreeMap::new(), pairs: Vec::new() };
    let count = if params.pairs == 0 { 0 } else { params.pairs + 1 };
    for i in 0..count {
        let id = format!("img_{i:03}");
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "synthetic", &id));
        let gt_pose = PoseParams {
            log_scale: rng.random_range(-0.1..0.1),
            translation: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
        };
        let scene_params = SceneParams {
            kind: MeshKind::Blob { n: 2 },
            image_size: params.image_size,
            focal: 1.25 * params.image_size as f64,
            yaw_deg: rng.random_range(-35.0..35.0),
            elevation_deg: rng.random_range(10.0..20.0),
            gt_pose,
            ..SceneParams::default()
        };
        let mesh = make_mesh(scene_params.kind, rng.random())?;
        let scene = scene_from_mesh(mesh, &scene_params, seed)?;
        let dir_t = random_unit(&mut rng);
        let len = 0.03 * scene.mesh.diag();
        let init = PoseParams {
            log_scale: gt_pose.log_scale + rng.random_range(-0.1..0.1),
            translation: [0, 1, 2].map(|k| gt_pose.translation[k] + len * dir_t[k]),
        };
        let features = image_features(&scene, params.feature_grid, &mut rng)?;

        let name = |suffix: &str| PathBuf::from(format!("{id}{suffix}"));
        write_mesh(&scene.mesh, dir.join(name(".ply")))?;
        write_descriptors(scene.mesh.descriptors().expect("synthetic meshes carry descriptors"), dir.join(name(".gcdf")))?;
        write_json(&dir.join(name("_camera.json")), &scene.camera)?;
        write_json(&dir.join(name("_pose.json")), &init)?;
        write_json(&dir.join(name("_gt_pose.json")), &gt_pose)?;
        scene.mask.write(dir.join(name("_mask.pgm")))?;
        features[0].write(dir.join(name("_feat_a.gcfm")))?;
        features[1].write(dir.join(name("_feat_b.gcfm")))?;
        manifest.images.insert(
            id.clone(),
            ImageEntry {
                mesh: name(".ply"),
                descriptors: name(".gcdf"),
                camera: name("_camera.json"),
                mask: name("_mask.pgm"),
                features: [name("_feat_a.gcfm"), name("_feat_b.gcfm")],
                pose: Some(name("_pose.json")),
                answers: None,
            },
        );

        let visible = visible_vertices(&scene);
        let (bh, bw) = scene.mask.bbox_dims().ok_or_else(|| Error::Empty(format!("{id} renders empty")))?;
        let keypoints = keypoint_vertices(&scene.mesh, params.keypoint_pairs).into_iter().map(|v| visible[v]).collect();
        annotations.images.insert(id, KeypointAnnotation { bbox_hw: [bh as f64, bw as f64], keypoints });
    }
    for i in 0..params.pairs {
        let pair = (format!("img_{i:03}"), format!("img_{:03}", i + 1));
        manifest.pairs.push(pair.clone());
        annotations.pairs.push(pair);
    }
    write_json(&dir.join("annotations.json"), &annotations)?;
    manifest.annotations = Some(PathBuf::from("annotations.json"));
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}
