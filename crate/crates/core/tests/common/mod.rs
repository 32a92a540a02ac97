//! Finite-difference gradient cases and brute-force oracles shared by the integration test targets.
#![allow(dead_code)]

use geocorr::adapter::{dense_loss, sample_noise, sparse_contrastive_loss, AdapterNet, DenseLossConfig};
use geocorr::pose::PoseParams;
use geocorr::geometry::{geodesic_from, TriangleMesh};
use geocorr::raster::{distance_fields, dt_loss, soft_iou_loss, squared_distance_transform, MaskImage, SilhouetteRenderer, SoftMask};
use geocorr::synth::{make_scene, MeshKind, SceneParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)` over whole vectors, with a floor against 0/0.
pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale(a).max(scale(b)).max(1e-12)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> MaskImage {
    let (r0, c0) = (rng.random_range(0..h / 2), rng.random_range(0..w / 2));
    let (r1, c1) = (rng.random_range(h / 2..h), rng.random_range(w / 2..w));
    MaskImage::from_fn(h, w, |r, c| (r0..=r1).contains(&r) && (c0..=c1).contains(&c) && (r + c) % 7 != 0)
}

fn random_soft(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.01..0.99)).collect()
}

/// Alignment loss gradient w.r.t. soft values.
pub fn dt_loss_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (12, 14);
    let fields = distance_fields::<f64>(&random_mask(&mut rng, h, w));
    let lambda = rng.random_range(1.0..6.0);
    let m = random_soft(&mut rng, h * w);
    let loss = |v: &[f64]| dt_loss(&SoftMask::new(h, w, v.to_vec()).unwrap(), &fields, lambda).unwrap().0;
    let (_, g) = dt_loss(&SoftMask::new(h, w, m.clone()).unwrap(), &fields, lambda).unwrap();
    rel_err_vec(&g, &central_diff(&m, loss, FD_STEP))
}

/// Soft IoU loss gradient w.r.t. soft values.
pub fn soft_iou_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (12, 14);
    let mask = random_mask(&mut rng, h, w);
    let m = random_soft(&mut rng, h * w);
    let loss = |v: &[f64]| soft_iou_loss(&SoftMask::new(h, w, v.to_vec()).unwrap(), &mask).unwrap().0;
    let (_, g) = soft_iou_loss(&SoftMask::new(h, w, m.clone()).unwrap(), &mask).unwrap();
    rel_err_vec(&g, &central_diff(&m, loss, FD_STEP))
}

/// Worst per-parameter error of a random pixel weighting chained through the renderer.
pub fn renderer_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = if seed % 2 == 0 { MeshKind::Blob { n: 1 } } else { MeshKind::Tetra };
    let size = 48;
    let scene = make_scene(&SceneParams { kind, image_size: size, ..SceneParams::default() }, seed).unwrap();
    let renderer = SilhouetteRenderer::new(&scene.mesh);
    let pose = PoseParams {
        log_scale: rng.random_range(-0.2..0.2),
        translation: [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)],
    };
    let wts: Vec<f64> = (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = renderer.render(&scene.camera, &pose, 2.0).unwrap().chain(&wts);
    let objective = |p: &[f64]| {
        let r = renderer.render(&scene.camera, &PoseParams::from_array([p[0], p[1], p[2], p[3]]), 2.0).unwrap();
        r.soft.values().iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>()
    };
    let fd = central_diff(&pose.to_array(), objective, 1e-6);
    (0..4).map(|k| rel_err(g[k], fd[k])).fold(0.0, f64::max)
}

fn small_net(rng: &mut ChaCha8Rng, dim: usize) -> AdapterNet<f64> {
    let mut net = AdapterNet::new([dim, 6, 7, 6, dim], false, rng.random()).unwrap();
    // non-zero biases so every path is exercised
    for p in net.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    net
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Contrastive loss gradient w.r.t. the parameters of a random small network.
pub fn contrastive_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 5;
    let n = rng.random_range(2..7);
    let net = small_net(&mut rng, dim);
    let (src, tgt) = (random_rows(&mut rng, n * dim), random_rows(&mut rng, n * dim));
    let tau = 0.07;
    let eval = |params: &[f64]| {
        let net = AdapterNet::from_params(net.dims(), net.residual(), params.to_vec()).unwrap();
        let (a, b) = (net.forward(&src).unwrap(), net.forward(&tgt).unwrap());
        let lg = sparse_contrastive_loss(&a.output, &b.output, dim, tau).unwrap();
        (lg, a, b, net)
    };
    let (lg, a, b, _) = eval(net.params());
    let mut grad = vec![0.0; net.param_count()];
    net.backward(&a, &lg.grad_a, &mut grad).unwrap();
    net.backward(&b, &lg.grad_b, &mut grad).unwrap();
    let fd = central_diff(net.params(), |p| eval(p).0.loss, FD_STEP);
    rel_err_vec(&grad, &fd)
}

/// Window soft-argmax loss gradient w.r.t. the parameters of a random small network.
pub fn dense_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 5;
    let grid = (5, 6);
    let n = rng.random_range(1..5);
    let net = small_net(&mut rng, dim);
    let queries = random_rows(&mut rng, n * dim);
    let tgt = random_rows(&mut rng, grid.0 * grid.1 * dim);
    let targets: Vec<[f64; 2]> =
        (0..n).map(|_| [rng.random_range(0.0..(grid.1 - 1) as f64), rng.random_range(0.0..(grid.0 - 1) as f64)]).collect();
    let noise = sample_noise(&mut rng, n, 0.5).unwrap();
    // a temperature that keeps several window cells active
    let cfg = DenseLossConfig { window: 3, temperature: 0.2 };
    let eval = |params: &[f64]| {
        let net = AdapterNet::from_params(net.dims(), net.residual(), params.to_vec()).unwrap();
        let (a, b) = (net.forward(&queries).unwrap(), net.forward(&tgt).unwrap());
        let lg = dense_loss(&a.output, &b.output, dim, grid, &targets, &noise, &cfg).unwrap();
        (lg, a, b)
    };
    let (lg, a, b) = eval(net.params());
    let mut grad = vec![0.0; net.param_count()];
    net.backward(&a, &lg.grad_a, &mut grad).unwrap();
    net.backward(&b, &lg.grad_b, &mut grad).unwrap();
    let fd = central_diff(net.params(), |p| eval(p).0.loss, FD_STEP);
    rel_err_vec(&grad, &fd)
}

/// Random triangle soup with `4..=max_vertices` vertices; some vertices may be isolated.
pub fn random_mesh(seed: u64, max_vertices: usize) -> TriangleMesh<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(4..=max_vertices);
        let verts: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
        let faces: Vec<[usize; 3]> = (0..rng.random_range(n / 2..=2 * n))
            .map(|_| {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..n)) % n;
                let mut c = rng.random_range(0..n);
                while c == a || c == b {
                    c = rng.random_range(0..n);
                }
                [a, b, c]
            })
            .collect();
        if let Ok(m) = TriangleMesh::new(verts, faces, None) {
            return m;
        }
    }
}

/// All-pairs shortest paths over edge lengths quantized to `diag / 2^40`.
pub fn floyd_warshall(mesh: &TriangleMesh<f64>) -> Vec<Vec<Option<u64>>> {
    let v = mesh.vertices();
    let n = v.len();
    let (lo, hi) = v.iter().fold(([f64::MAX; 3], [f64::MIN; 3]), |(lo, hi), p| {
        ([0, 1, 2].map(|k| lo[k].min(p[k])), [0, 1, 2].map(|k| hi[k].max(p[k])))
    });
    let diag = (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt();
    let unit = diag / (1u64 << 40) as f64;
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0u64);
    }
    for f in mesh.faces() {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let len = (0..3).map(|k| (v[a][k] - v[b][k]).powi(2)).sum::<f64>().sqrt();
            let w = (len / unit).round() as u64;
            d[a][b] = Some(w);
            d[b][a] = Some(w);
        }
    }
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = d[i][k] else { continue };
            for j in 0..n {
                if let Some(kj) = d[k][j] {
                    if d[i][j].is_none_or(|cur| ik + kj < cur) {
                        d[i][j] = Some(ik + kj);
                    }
                }
            }
        }
    }
    d
}

/// Whether Dijkstra from every source equals Floyd-Warshall, both quantized and in length units.
pub fn geodesics_match_floyd_warshall(mesh: &TriangleMesh<f64>) -> bool {
    let fw = floyd_warshall(mesh);
    let graph = mesh.edge_graph();
    (0..mesh.vertex_count()).all(|s| {
        let lengths = geodesic_from(mesh, s).unwrap();
        let quanta = graph.shortest_paths(s).unwrap();
        quanta == fw[s]
            && lengths.iter().zip(&fw[s]).all(|(&l, q)| match q {
                Some(q) => l == *q as f64 * graph.unit(),
                None => l == f64::INFINITY,
            })
    })
}

pub fn random_mask_with_density(seed: u64, h: usize, w: usize) -> MaskImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: f64 = [0.0, 0.02, 0.2, 0.5, 0.9, 1.0][rng.random_range(0..6)];
    MaskImage::new(h, w, (0..h * w).map(|_| rng.random_bool(p) as u8).collect()).unwrap()
}

/// Squared distance from each pixel to the nearest pixel with `value`, by exhaustive scan.
fn brute_sq_distance(mask: &MaskImage, value: bool) -> Vec<Option<usize>> {
    let (h, w) = (mask.height(), mask.width());
    let sites: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).filter(|&(r, c)| mask.get(r, c) == value).collect();
    (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            sites.iter().map(|&(sr, sc)| r.abs_diff(sr).pow(2) + c.abs_diff(sc).pow(2)).min()
        })
        .collect()
}

/// Whether the raw transform and both normalized fields equal the brute-force scan exactly.
pub fn distance_fields_match_brute_force(mask: &MaskImage) -> bool {
    let (h, w) = (mask.height(), mask.width());
    let diag = ((h * h + w * w) as f64).sqrt();
    let fields = distance_fields::<f64>(mask);
    let raw = squared_distance_transform(h, w, |i| mask.values()[i] != 0);
    let out = brute_sq_distance(mask, true);
    let inside = brute_sq_distance(mask, false);
    let norm = |d: &Option<usize>, all_none: bool| if all_none { 0.0 } else { d.unwrap() as f64 / diag };
    let (out_none, in_none) = (out.iter().all(Option::is_none), inside.iter().all(Option::is_none));
    raw.iter().zip(&out).all(|(&a, b)| b.map_or(a == f64::INFINITY, |b| a == b as f64))
        && fields.d_out.iter().zip(&out).all(|(&a, b)| a == norm(b, out_none))
        && fields.d_in.iter().zip(&inside).all(|(&a, b)| a == norm(b, in_none))
}
