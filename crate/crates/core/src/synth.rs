//! Seeded synthetic meshes, scenes and planted-mismatch candidate corpora.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::adapter::{refine_map, AdapterNet, TrainPair};
use crate::eval::{corpus_pck, KeypointAnnotation};
use crate::features::{predict_points, DenseFeatureMap};
use crate::geometry::{dominant_vertex, raycast, Descriptors, TriangleMesh};
use crate::pose::PoseParams;
use crate::raster::{render_coverage, CameraModel, MaskImage};
use crate::scalar::{norm3, Vec2, Vec3};

/// Identifier of the descriptor coding written by [`make_mesh`].
pub const SIDE_CODED: &str = "side-coded-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MeshKind {
    /// Corner tetrahedron of the unit cube.
    Tetra,
    /// Unit cube `[0, 1]^3`.
    Cube,
    /// Unit sphere from an `n`-times subdivided icosahedron.
    Icosphere { n: u32 },
    /// `k` triangles in a planar zig-zag strip at `z = 0`.
    Strip { k: usize },
    /// Icosphere with seeded low-frequency radial bumps and anisotropic stretch.
    Blob { n: u32 },
}

/// Builds a mesh and attaches side-coded descriptors.
///
/// Descriptors are `[left, right, x, y, z, noise0, noise1]`: a one-hot block
/// telling which side of the `x = aabb center` plane the vertex lies on, the
/// vertex position relative to the box center over half the diagonal, and two
/// small seeded noise channels.
pub fn make_mesh(kind: MeshKind, seed: u64) -> Result<TriangleMesh<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (vertices, faces) = match kind {
        MeshKind::Tetra => (
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        ),
        MeshKind::Cube => cube(),
        MeshKind::Icosphere { n } => icosphere(n),
        MeshKind::Strip { k } => strip(k)?,
        MeshKind::Blob { n } => {
            let (v, f) = icosphere(n);
            let waves: Vec<(Vec3<f64>, f64, f64)> = (0..4)
                .map(|_| {
                    let dir = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    (dir, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.03..0.08))
                })
                .collect();
            let stretch = [rng.random_range(1.1..1.4), rng.random_range(0.8..1.0), rng.random_range(0.9..1.1)];
            let v = v
                .into_iter()
                .map(|p| {
                    let bump: f64 = waves.iter().map(|(d, ph, a)| a * (2.0 * (d[0] * p[0] + d[1] * p[1] + d[2] * p[2]) + ph).sin()).sum();
                    let r = 1.0 + bump;
                    [p[0] * r * stretch[0], p[1] * r * stretch[1], p[2] * r * stretch[2]]
                })
                .collect();
            (v, f)
        }
    };
    let mesh = TriangleMesh::new(vertices, faces, None)?;
    let descriptors = side_coded_descriptors(&mesh, &mut rng)?;
    mesh.with_descriptors(Some(descriptors))
}

fn side_coded_descriptors(mesh: &TriangleMesh<f64>, rng: &mut ChaCha8Rng) -> Result<Descriptors<f64>> {
    let c = mesh.aabb_center();
    let half = mesh.diag() / 2.0;
    let tol = 1e-9 * mesh.diag();
    let rows: Vec<Vec<f64>> = mesh
        .vertices()
        .iter()
        .map(|p| {
            let dx = p[0] - c[0];
            let (l, r) = if dx < -tol {
                (1.0, 0.0)
            } else if dx > tol {
                (0.0, 1.0)
            } else {
                (0.5, 0.5)
            };
            vec![
                l,
                r,
                dx / half,
                (p[1] - c[1]) / half,
                (p[2] - c[2]) / half,
                0.02 * rng.random_range(-1.0..1.0),
                0.02 * rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    Descriptors::from_rows(&rows)
}

fn cube() -> (Vec<Vec3<f64>>, Vec<[usize; 3]>) {
    let v = (0..8).map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]).collect();
    let f = vec![
        [0, 2, 1], [1, 2, 3], // z = 0
        [4, 5, 6], [5, 7, 6], // z = 1
        [0, 1, 4], [1, 5, 4], // y = 0
        [2, 6, 3], [3, 6, 7], // y = 1
        [0, 4, 2], [2, 4, 6], // x = 0
        [1, 3, 5], [3, 7, 5], // x = 1
    ];
    (v, f)
}

fn strip(k: usize) -> Result<(Vec<Vec3<f64>>, Vec<[usize; 3]>)> {
    if k == 0 {
        return Err(Error::Config("strip needs at least one triangle".into()));
    }
    let v = (0..k + 2).map(|i| [(i / 2) as f64, (i % 2) as f64, 0.0]).collect();
    let f = (0..k).map(|i| if i % 2 == 0 { [i, i + 1, i + 2] } else { [i + 1, i, i + 2] }).collect();
    Ok((v, f))
}

fn icosphere(n: u32) -> (Vec<Vec3<f64>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3<f64>> = vec![
        [-1.0, phi, 0.0], [1.0, phi, 0.0], [-1.0, -phi, 0.0], [1.0, -phi, 0.0],
        [0.0, -1.0, phi], [0.0, 1.0, phi], [0.0, -1.0, -phi], [0.0, 1.0, -phi],
        [phi, 0.0, -1.0], [phi, 0.0, 1.0], [-phi, 0.0, -1.0], [-phi, 0.0, 1.0],
    ];
    let normalize = |p: Vec3<f64>| {
        let l = norm3(p);
        [p[0] / l, p[1] / l, p[2] / l]
    };
    for p in &mut v {
        *p = normalize(*p);
    }
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..n {
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                let (p, q) = (v[key.0], v[key.1]);
                v.push(normalize([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]));
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    (v, f)
}

/// Camera on a circle around the origin at the given yaw and elevation (degrees).
pub fn orbit_camera(yaw_deg: f64, elevation_deg: f64, distance: f64, focal: f64, size: usize) -> Result<CameraModel<f64>> {
    let (y, e) = (yaw_deg.to_radians(), elevation_deg.to_radians());
    let eye = [distance * y.sin() * e.cos(), distance * e.sin(), distance * y.cos() * e.cos()];
    CameraModel::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], focal, size, size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub kind: MeshKind,
    pub image_size: usize,
    pub focal: f64,
    pub distance: f64,
    pub yaw_deg: f64,
    pub elevation_deg: f64,
    pub gt_pose: PoseParams<f64>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            kind: MeshKind::Icosphere { n: 2 },
            image_size: 80,
            focal: 100.0,
            distance: 6.0,
            yaw_deg: 30.0,
            elevation_deg: 15.0,
            gt_pose: PoseParams::identity(),
        }
    }
}

/// Mesh, camera and ground-truth pose with the mask rendered from them.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub mesh: TriangleMesh<f64>,
    pub gt_pose: PoseParams<f64>,
    pub camera: CameraModel<f64>,
    pub mask: MaskImage,
    pub scheme: &'static str,
    pub seed: u64,
}

pub fn make_scene(params: &SceneParams, seed: u64) -> Result<SynthScene> {
    let mesh = make_mesh(params.kind, seed)?;
    scene_from_mesh(mesh, params, seed)
}

pub fn scene_from_mesh(mesh: TriangleMesh<f64>, params: &SceneParams, seed: u64) -> Result<SynthScene> {
    let camera = orbit_camera(params.yaw_deg, params.elevation_deg, params.distance, params.focal, params.image_size)?;
    let mask = render_coverage(&mesh, &camera, &params.gt_pose)?;
    Ok(SynthScene { mesh, gt_pose: params.gt_pose, camera, mask, scheme: SIDE_CODED, seed })
}

/// A pose-recovery problem: a blob scene plus a perturbed starting pose.
#[derive(Debug, Clone)]
pub struct PerturbedScene {
    pub scene: SynthScene,
    pub init: PoseParams<f64>,
}

/// Random ground-truth pose, then `log_scale ± scale_offset` and a translation
/// offset of length `trans_frac * diag` in a random direction. The focal length
/// scales with `image_size` so the object fills a fixed share of the frame.
pub fn make_perturbed_scene(seed: u64, scale_offset: f64, trans_frac: f64, image_size: usize) -> Result<PerturbedScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5ce4e);
    let gt_pose = PoseParams {
        log_scale: rng.random_range(-0.15..0.15),
        translation: [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
    };
    let params = SceneParams {
        kind: MeshKind::Blob { n: 2 },
        yaw_deg: rng.random_range(0.0..360.0),
        elevation_deg: rng.random_range(5.0..25.0),
        gt_pose,
        image_size,
        focal: 1.25 * image_size as f64,
        ..SceneParams::default()
    };
    let scene = make_scene(&params, seed)?;
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let dir = random_unit(&mut rng);
    let len = trans_frac * scene.mesh.diag();
    let init = PoseParams {
        log_scale: gt_pose.log_scale + sign * scale_offset,
        translation: [0, 1, 2].map(|k| gt_pose.translation[k] + len * dir[k]),
    };
    Ok(PerturbedScene { scene, init })
}

/// Clears the lowest `fraction` of the rows spanned by the mask's bounding box.
pub fn occlude_lower(mask: &MaskImage, fraction: f64) -> MaskImage {
    let Some((r0, r1, _, _)) = mask.bbox() else {
        return mask.clone();
    };
    let rows = r1 + 1 - r0;
    let cut = r1 + 1 - ((rows as f64 * fraction).round() as usize).min(rows);
    MaskImage::from_fn(mask.height(), mask.width(), |r, c| r < cut && mask.get(r, c))
}

/// Share of `target` pixels that `rendered` also covers.
pub fn coverage(rendered: &MaskImage, target: &MaskImage) -> f64 {
    let total = target.count();
    if total == 0 {
        return 0.0;
    }
    let hit = rendered.values().iter().zip(target.values()).filter(|(a, b)| **a != 0 && **b != 0).count();
    hit as f64 / total as f64
}

pub(crate) fn random_unit(rng: &mut impl Rng) -> Vec3<f64> {
    loop {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = norm3(v);
        if n > 1e-3 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Candidate match with its construction label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedCandidate {
    pub p_src: Vec2<f64>,
    pub p_tgt: Vec2<f64>,
    pub src_vertex: usize,
    pub tgt_vertex: usize,
    pub planted: bool,
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub src: SynthScene,
    pub tgt: SynthScene,
    pub candidates: Vec<PlantedCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairParams {
    pub subdivisions: u32,
    pub candidates: usize,
    pub image_size: usize,
    /// Planted candidates use vertices at least this far from the mirror plane,
    /// as a fraction of the half diagonal.
    pub planted_margin: f64,
}

impl Default for PairParams {
    fn default() -> Self {
        Self { subdivisions: 3, candidates: 500, image_size: 96, planted_margin: 0.3 }
    }
}

/// Vertices whose own projection lifts back onto them (visible, unoccluded).
pub fn visible_vertices(scene: &SynthScene) -> Vec<Option<Vec2<f64>>> {
    let mesh = &scene.mesh;
    mesh.vertices()
        .iter()
        .enumerate()
        .map(|(v, &p)| {
            let proj = scene.camera.project(&scene.gt_pose, p);
            let (w, h) = (scene.camera.width as f64, scene.camera.height as f64);
            if !proj.in_front() || proj.pixel[0] < 0.0 || proj.pixel[1] < 0.0 || proj.pixel[0] > w - 1.0 || proj.pixel[1] > h - 1.0 {
                return None;
            }
            let ray = scene.camera.pixel_ray(&scene.gt_pose, proj.pixel)?;
            let hit = raycast(mesh, ray.origin, ray.direction)?;
            (dominant_vertex(&hit, mesh) == v).then_some(proj.pixel)
        })
        .collect()
}

/// Index of the vertex at the mirror image of `v` across `x = aabb center`.
pub fn mirror_vertex(mesh: &TriangleMesh<f64>, v: usize) -> usize {
    let c = mesh.aabb_center();
    let p = mesh.vertices()[v];
    let m = [2.0 * c[0] - p[0], p[1], p[2]];
    let d2 = |q: &Vec3<f64>| (q[0] - m[0]).powi(2) + (q[1] - m[1]).powi(2) + (q[2] - m[2]).powi(2);
    (0..mesh.vertex_count())
        .min_by(|&a, &b| d2(&mesh.vertices()[a]).total_cmp(&d2(&mesh.vertices()[b])).then(a.cmp(&b)))
        .expect("non-empty mesh")
}

/// Two views of one icosphere: the target is the source mesh uniformly rescaled and
/// seen from a camera rotated in yaw. Correct candidates join the projections of one
/// vertex; planted candidates join a vertex to its mirror across the `x` plane.
pub fn make_pair(params: &PairParams, mismatch_fraction: f64, seed: u64) -> Result<SynthPair> {
    if !(0.0..=1.0).contains(&mismatch_fraction) {
        return Err(Error::Config(format!("mismatch fraction {mismatch_fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = make_mesh(MeshKind::Icosphere { n: params.subdivisions }, seed)?;
    let yaw = rng.random_range(-30.0..30.0);
    let src_params = SceneParams { image_size: params.image_size, yaw_deg: yaw, focal: 120.0, ..SceneParams::default() };
    let src = scene_from_mesh(base.clone(), &src_params, seed)?;

    let scale: f64 = rng.random_range(0.5..2.0);
    let tgt_params = SceneParams {
        image_size: params.image_size,
        yaw_deg: yaw + rng.random_range(-35.0..35.0),
        elevation_deg: rng.random_range(5.0..25.0),
        distance: src_params.distance * scale,
        focal: 120.0,
        ..SceneParams::default()
    };
    let tgt = scene_from_mesh(base.scaled(scale)?, &tgt_params, seed.wrapping_add(1))?;

    let vis_src = visible_vertices(&src);
    let vis_tgt = visible_vertices(&tgt);
    let half = base.diag() / 2.0;
    let cx = base.aabb_center()[0];
    let correct_pool: Vec<usize> = (0..base.vertex_count()).filter(|&v| vis_src[v].is_some() && vis_tgt[v].is_some()).collect();
    let planted_pool: Vec<(usize, usize)> = (0..base.vertex_count())
        .filter(|&v| (base.vertices()[v][0] - cx).abs() >= params.planted_margin * half)
        .map(|v| (v, mirror_vertex(&base, v)))
        .filter(|&(v, m)| vis_src[v].is_some() && vis_tgt[m].is_some())
        .collect();
    if correct_pool.is_empty() || (mismatch_fraction > 0.0 && planted_pool.is_empty()) {
        return Err(Error::Empty("no co-visible vertices for candidate generation".into()));
    }
    let n_planted = (mismatch_fraction * params.candidates as f64).round() as usize;
    let mut candidates = Vec::with_capacity(params.candidates);
    for i in 0..params.candidates {
        let planted = i < n_planted;
        let (v, t) = if planted {
            planted_pool[rng.random_range(0..planted_pool.len())]
        } else {
            let v = correct_pool[rng.random_range(0..correct_pool.len())];
            (v, v)
        };
        candidates.push(PlantedCandidate {
            p_src: vis_src[v].expect("visible"),
            p_tgt: vis_tgt[t].expect("visible"),
            src_vertex: v,
            tgt_vertex: t,
            planted,
        });
    }
    Ok(SynthPair { src, tgt, candidates })
}

/// Settings of the synthetic feature corpus used to exercise the adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorpusParams {
    pub grid: usize,
    pub patch_size: usize,
    /// Object box side range in cells (inclusive).
    pub box_min: usize,
    pub box_max: usize,
    /// Fourier frequencies per object coordinate.
    pub freqs: usize,
    /// Amplitude of the channel that tells the two object halves apart.
    pub side_strength: f64,
    pub noise: f64,
    pub labels_per_pair: usize,
}

impl Default for FeatureCorpusParams {
    fn default() -> Self {
        Self { grid: 16, patch_size: 8, box_min: 8, box_max: 14, freqs: 3, side_strength: 0.15, noise: 0.05, labels_per_pair: 64 }
    }
}

/// Object-frame `(u, v)` keypoints, listed as left/right mirror pairs.
pub const FEATURE_KEYPOINTS: [[f64; 2]; 10] = [
    [0.2, 0.2],
    [0.8, 0.2],
    [0.1, 0.5],
    [0.9, 0.5],
    [0.3, 0.8],
    [0.7, 0.8],
    [0.35, 0.4],
    [0.65, 0.4],
    [0.15, 0.9],
    [0.85, 0.9],
];

/// One image of the feature corpus: an axis-aligned object box on the cell grid.
#[derive(Debug, Clone)]
pub struct FeatureImage {
    pub map: DenseFeatureMap<f64>,
    /// Grid foreground mask (box cells).
    pub fg: MaskImage,
    /// Box origin `(row, col)` and size `(h, w)` in cells.
    pub box_origin: [usize; 2],
    pub box_size: [usize; 2],
}

impl FeatureImage {
    /// Pixel of object coordinates `(u, v)`.
    pub fn pixel(&self, uv: [f64; 2]) -> Vec2<f64> {
        let ps = self.map.patch_size() as f64;
        let col = self.box_origin[1] as f64 + uv[0] * self.box_size[1] as f64 - 0.5;
        let row = self.box_origin[0] as f64 + uv[1] * self.box_size[0] as f64 - 0.5;
        [col * ps + (ps - 1.0) / 2.0, row * ps + (ps - 1.0) / 2.0]
    }

    /// Object coordinates of a cell center.
    pub fn uv(&self, row: usize, col: usize) -> [f64; 2] {
        [
            (col as f64 - self.box_origin[1] as f64 + 0.5) / self.box_size[1] as f64,
            (row as f64 - self.box_origin[0] as f64 + 0.5) / self.box_size[0] as f64,
        ]
    }

    pub fn annotation(&self) -> KeypointAnnotation {
        let ps = self.map.patch_size() as f64;
        KeypointAnnotation {
            bbox_hw: [self.box_size[0] as f64 * ps, self.box_size[1] as f64 * ps],
            keypoints: FEATURE_KEYPOINTS.iter().map(|&uv| Some(self.pixel(uv))).collect(),
        }
    }
}

/// A pair of feature images with ground-truth pixel correspondences.
#[derive(Debug, Clone)]
pub struct FeaturePair {
    pub src: FeatureImage,
    pub tgt: FeatureImage,
    pub correspondences: Vec<(Vec2<f64>, Vec2<f64>)>,
}

fn feature_image(params: &FeatureCorpusParams, rng: &mut ChaCha8Rng) -> Result<FeatureImage> {
    let g = params.grid;
    if params.box_min == 0 || params.box_min > params.box_max || params.box_max > g {
        return Err(Error::Config(format!("box range {}..={} does not fit a {g} grid", params.box_min, params.box_max)));
    }
    let size = [rng.random_range(params.box_min..=params.box_max), rng.random_range(params.box_min..=params.box_max)];
    let origin = [rng.random_range(0..=g - size[0]), rng.random_range(0..=g - size[1])];
    let channels = 4 * params.freqs + 1;
    let mut values = vec![0.0; g * g * channels];
    let mut img = FeatureImage {
        map: DenseFeatureMap::zeros(g, g, channels, params.patch_size)?,
        fg: MaskImage::from_fn(g, g, |r, c| {
            (origin[0]..origin[0] + size[0]).contains(&r) && (origin[1]..origin[1] + size[1]).contains(&c)
        }),
        box_origin: origin,
        box_size: size,
    };
    for r in 0..g {
        for c in 0..g {
            if !img.fg.get(r, c) {
                continue;
            }
            let [u, v] = img.uv(r, c);
            let cell = &mut values[(r * g + c) * channels..(r * g + c + 1) * channels];
            let a = 2.0 * (u - 0.5).abs();
            for k in 0..params.freqs {
                let f = (k + 1) as f64 * std::f64::consts::PI;
                cell[4 * k..4 * k + 4].copy_from_slice(&[(f * a).sin(), (f * a).cos(), (f * v).sin(), (f * v).cos()]);
            }
            cell[channels - 1] = params.side_strength * (2.0 * u - 1.0);
            for x in cell.iter_mut() {
                *x += params.noise * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
    }
    let raw = DenseFeatureMap::new(g, g, channels, params.patch_size, values)?;
    img.map = raw.l2_normalize().0;
    Ok(img)
}

/// Image pairs of one object class seen in differently placed and sized boxes.
///
/// Features encode the distance from the symmetry axis and the height, so the two
/// halves look alike except for a weak side channel and noise. Correspondences are
/// exact and drawn from source foreground cells.
pub fn make_feature_corpus(params: &FeatureCorpusParams, pairs: usize, seed: u64) -> Result<Vec<FeaturePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let src = feature_image(params, &mut rng)?;
            let tgt = feature_image(params, &mut rng)?;
            let fg_cells: Vec<usize> = (0..params.grid * params.grid).filter(|&i| src.fg.values()[i] != 0).collect();
            let take = params.labels_per_pair.min(fg_cells.len());
            let correspondences = rand::seq::index::sample(&mut rng, fg_cells.len(), take)
                .into_iter()
                .map(|k| {
                    let i = fg_cells[k];
                    let (r, c) = (i / params.grid, i % params.grid);
                    (src.map.cell_center(i), tgt.pixel(src.uv(r, c)))
                })
                .collect();
            Ok(FeaturePair { src, tgt, correspondences })
        })
        .collect()
}

impl FeaturePair {
    pub fn train_pair(&self) -> Result<TrainPair<f64>> {
        TrainPair::from_pixels(self.src.map.clone(), self.tgt.map.clone(), &self.correspondences)
    }

    /// Keypoint transfer by nearest-neighbor matching, optionally after refining both
    /// maps with `net`. Points that cannot be matched are placed at infinity.
    pub fn predict_keypoints(&self, net: Option<&AdapterNet<f64>>) -> Result<Vec<Vec2<f64>>> {
        let (src, tgt) = match net {
            Some(net) => (refine_map(net, &self.src.map)?, refine_map(net, &self.tgt.map)?),
            None => (self.src.map.clone(), self.tgt.map.clone()),
        };
        let points: Vec<Vec2<f64>> = FEATURE_KEYPOINTS.iter().map(|&uv| self.src.pixel(uv)).collect();
        let preds = predict_points(&src, &tgt, &self.tgt.fg, &points)?;
        Ok(preds.into_iter().map(|p| p.unwrap_or([f64::INFINITY; 2])).collect())
    }
}

/// Mean per-image PCK of keypoint transfer over `pairs`.
pub fn feature_corpus_pck(pairs: &[FeaturePair], net: Option<&AdapterNet<f64>>, alpha: f64) -> Result<f64> {
    let items = pairs
        .iter()
        .map(|p| Ok((p.predict_keypoints(net)?, p.tgt.annotation())))
        .collect::<Result<Vec<_>>>()?;
    corpus_pck(&items, alpha, false)
}
