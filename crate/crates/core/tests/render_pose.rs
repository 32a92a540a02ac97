use geocorr::pose::{refine_pose, Phase, PoseParams, RefineConfig};
use geocorr::raster::{render_coverage, render_soft_silhouette, soft_iou_loss, CameraModel, SilhouetteRenderer};
use geocorr::synth::{coverage, make_mesh, make_perturbed_scene, make_scene, occlude_lower, MeshKind, SceneParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn renderer_gradient_matches_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = if seed % 2 == 0 { MeshKind::Blob { n: 1 } } else { MeshKind::Tetra };
        let scene = make_scene(&SceneParams { kind, image_size: 64, ..SceneParams::default() }, seed).unwrap();
        let renderer = SilhouetteRenderer::new(&scene.mesh);
        let pose = PoseParams {
            log_scale: rng.random_range(-0.2..0.2),
            translation: [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)],
        };
        let w: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = renderer.render(&scene.camera, &pose, 2.0).unwrap().chain(&w);
        let objective = |p: [f64; 4]| {
            let r = renderer.render(&scene.camera, &PoseParams::from_array(p), 2.0).unwrap();
            r.soft.values().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for k in 0..4 {
            let (mut a, mut b) = (pose.to_array(), pose.to_array());
            a[k] += h;
            b[k] -= h;
            let fd = (objective(a) - objective(b)) / (2.0 * h);
            assert!(rel_err(g[k], fd) <= 1e-3, "seed {seed} param {k}: analytic {} fd {}", g[k], fd);
        }
    }
}

#[test]
fn out_of_frame_gradient_matches_finite_differences() {
    let scene = make_scene(&SceneParams { image_size: 48, ..SceneParams::default() }, 2).unwrap();
    let renderer = SilhouetteRenderer::new(&scene.mesh);
    // Shifted so part of the silhouette leaves the frame.
    let pose = PoseParams { log_scale: 0.1, translation: [1.4, 0.3, 0.0] };
    let r = renderer.render(&scene.camera, &pose, 2.0).unwrap();
    let frac = r.out_of_frame_fraction().unwrap();
    assert!(frac > 0.05 && frac < 0.95, "{frac}");
    let g = r.out_of_frame_fraction_grad();
    let h = 1e-6;
    for k in 0..4 {
        let (mut a, mut b) = (pose.to_array(), pose.to_array());
        a[k] += h;
        b[k] -= h;
        let f = |p| renderer.render(&scene.camera, &PoseParams::from_array(p), 2.0).unwrap().out_of_frame_fraction().unwrap();
        let fd = (f(a) - f(b)) / (2.0 * h);
        assert!(rel_err(g[k], fd) <= 1e-3, "param {k}: analytic {} fd {fd}", g[k]);
    }
}

#[test]
fn whole_pixel_shift_moves_soft_mask() {
    let mesh = make_mesh(MeshKind::Strip { k: 6 }, 0).unwrap();
    let camera = CameraModel {
        fx: 50.0,
        fy: 50.0,
        cx: 20.0,
        cy: 20.0,
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0, 0.0, 5.0],
        width: 128,
        height: 64,
    };
    let base = PoseParams { log_scale: 3f64.ln() / 2.0, translation: [0.0, 0.0, 0.0] };
    let a = render_soft_silhouette(&mesh, &camera, &base, 2.0).unwrap();
    for k in [1usize, 3, 7] {
        // Depth is 5 and focal 50, so 0.1 world units per pixel.
        let shifted = PoseParams { translation: [0.1 * k as f64, 0.0, 0.0], ..base };
        let b = render_soft_silhouette(&mesh, &camera, &shifted, 2.0).unwrap();
        for r in 0..64 {
            for c in 0..128 - k {
                let (va, vb) = (a.soft.get(r, c), b.soft.get(r, c + k));
                assert!((va - vb).abs() <= 1e-6, "k {k} at ({r}, {c}): {va} vs {vb}");
            }
        }
    }
}

#[test]
fn optimal_init_does_not_diverge() {
    let scene = make_scene(&SceneParams { kind: MeshKind::Blob { n: 2 }, ..SceneParams::default() }, 4).unwrap();
    let initial = {
        let r = render_soft_silhouette(&scene.mesh, &scene.camera, &scene.gt_pose, 2.0).unwrap();
        soft_iou_loss(&r.soft, &scene.mask).unwrap().0
    };
    let res = refine_pose(&scene.mesh, &scene.camera, &scene.mask, scene.gt_pose, &RefineConfig::default()).unwrap();
    assert!(res.final_iou_loss <= initial + 1e-6, "{} > {initial}", res.final_iou_loss);
}

#[test]
fn perturbed_pose_is_recovered() {
    let p = make_perturbed_scene(0, 0.4, 0.1, 80).unwrap();
    let cfg = RefineConfig::default();
    let res = refine_pose(&p.scene.mesh, &p.scene.camera, &p.scene.mask, p.init, &cfg).unwrap();
    let iou = render_coverage(&p.scene.mesh, &p.scene.camera, &res.pose).unwrap().iou(&p.scene.mask).unwrap();
    assert!(iou >= 0.95, "iou {iou}");
    assert_eq!(res.trace.len(), cfg.steps_dt + cfg.steps_iou);
    for (i, s) in res.trace.iter().enumerate() {
        assert_eq!(s.step, i);
        let expected = if i < cfg.steps_dt { Phase::DistanceTransform } else { Phase::SoftIou };
        assert_eq!(s.phase, expected);
    }
}

#[test]
fn refinement_is_deterministic() {
    let p = make_perturbed_scene(3, 0.4, 0.1, 64).unwrap();
    let cfg = RefineConfig { steps_dt: 20, steps_iou: 10, ..RefineConfig::default() };
    let a = refine_pose(&p.scene.mesh, &p.scene.camera, &p.scene.mask, p.init, &cfg).unwrap();
    let b = refine_pose(&p.scene.mesh, &p.scene.camera, &p.scene.mask, p.init, &cfg).unwrap();
    let bits = |r: &geocorr::pose::RefineResult<f64>| r.trace.iter().map(|s| (s.loss.to_bits(), s.out_of_frame.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.pose, b.pose);
}

#[test]
fn occluded_mask_keeps_coverage_with_interior_reward() {
    let p = make_perturbed_scene(0, 0.4, 0.1, 80).unwrap();
    let occluded = occlude_lower(&p.scene.mask, 0.3);
    let cfg = RefineConfig { lambda: 4.0, ..RefineConfig::default() };
    let res = refine_pose(&p.scene.mesh, &p.scene.camera, &occluded, p.init, &cfg).unwrap();
    let rendered = render_coverage(&p.scene.mesh, &p.scene.camera, &res.pose).unwrap();
    let cov = coverage(&rendered, &occluded);
    assert!(cov >= 0.9, "coverage of the visible mask {cov}");
}

#[test]
fn refine_rejects_bad_inputs() {
    let scene = make_scene(&SceneParams::default(), 0).unwrap();
    let empty = geocorr::raster::MaskImage::zeros(80, 80);
    assert!(refine_pose(&scene.mesh, &scene.camera, &empty, scene.gt_pose, &RefineConfig::default()).is_err());
    let small = geocorr::raster::MaskImage::zeros(10, 10);
    assert!(refine_pose(&scene.mesh, &scene.camera, &small, scene.gt_pose, &RefineConfig::default()).is_err());
    let bad = RefineConfig { lambda: 0.5, ..RefineConfig::default() };
    assert!(refine_pose(&scene.mesh, &scene.camera, &scene.mask, scene.gt_pose, &bad).is_err());
}
