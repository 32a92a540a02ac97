use geocorr::canonicalize::{
    canonicalize_yaw, compensate_camera, rotate_yaw, CanonicalizeConfig, FileAnswers, OracleEstimator, Pivot,
    YawCorrection, VIEW_YAWS,
};
use geocorr::geometry::TriangleMesh;
use geocorr::pose::PoseParams;
use geocorr::synth::{make_mesh, orbit_camera, MeshKind};
use geocorr::Error;

fn max_delta(a: &TriangleMesh<f64>, b: &TriangleMesh<f64>) -> f64 {
    a.vertices()
        .iter()
        .zip(b.vertices())
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
        .fold(0.0, f64::max)
}

fn setup() -> (TriangleMesh<f64>, geocorr::raster::CameraModel<f64>) {
    (make_mesh(MeshKind::Blob { n: 1 }, 5).unwrap(), orbit_camera(20.0, 10.0, 6.0, 60.0, 48).unwrap())
}

#[test]
fn canonical_mesh_is_left_alone() {
    let (mesh, cam) = setup();
    let out = canonicalize_yaw(&mesh, &cam, &PoseParams::identity(), &OracleEstimator::perfect(0.0), &CanonicalizeConfig::default()).unwrap();
    assert_eq!(out.correction.degrees(), 0);
    assert!(out.votes.iter().all(|v| v.correction == YawCorrection::new(0)));
    assert!(max_delta(&out.mesh, &mesh) <= 1e-9 * mesh.diag());
}

#[test]
fn planted_rotations_are_undone() {
    let (mesh, cam) = setup();
    for planted in [0u16, 90, 180, 270] {
        let rotated = rotate_yaw(&mesh, planted as f64, Pivot::AabbCenter).unwrap();
        let out = canonicalize_yaw(&rotated, &cam, &PoseParams::identity(), &OracleEstimator::perfect(planted as f64), &CanonicalizeConfig::default()).unwrap();
        assert_eq!(out.correction, YawCorrection::new(planted).unwrap().inverse());
        assert!(max_delta(&out.mesh, &mesh) <= 1e-6 * mesh.diag(), "planted {planted}");
    }
    let rotated = rotate_yaw(&mesh, 90.0, Pivot::AabbCenter).unwrap();
    let out = canonicalize_yaw(&rotated, &cam, &PoseParams::identity(), &OracleEstimator::perfect(90.0), &CanonicalizeConfig::default()).unwrap();
    assert_eq!(out.correction.degrees(), 270);
}

#[test]
fn three_corrupted_views_never_flip_the_vote() {
    let (mesh, cam) = setup();
    let cfg = CanonicalizeConfig::default();
    for planted in [0u16, 90, 180, 270] {
        let rotated = rotate_yaw(&mesh, planted as f64, Pivot::AabbCenter).unwrap();
        let truth = YawCorrection::new(planted).unwrap().inverse();
        for subset in 0u32..256 {
            if subset.count_ones() > 3 {
                continue;
            }
            // Corrupted views all agree on one wrong answer, the adversarial case.
            for wrong in [90.0, 180.0, 270.0] {
                let mut oracle = OracleEstimator::perfect(planted as f64);
                for v in (0..8).filter(|v| subset & (1 << v) != 0) {
                    oracle.overrides.insert(v, VIEW_YAWS[v] + planted as f64 + wrong);
                }
                let out = canonicalize_yaw(&rotated, &cam, &PoseParams::identity(), &oracle, &cfg).unwrap();
                assert_eq!(out.correction, truth, "planted {planted} subset {subset:08b} wrong {wrong}");
            }
        }
    }
}

#[test]
fn random_corruption_of_three_views_is_tolerated() {
    let (mesh, cam) = setup();
    for seed in 0..20 {
        let oracle = OracleEstimator::perfect(180.0).with_random_corruption(3, seed);
        assert_eq!(oracle.overrides.len(), 3);
        let rotated = rotate_yaw(&mesh, 180.0, Pivot::AabbCenter).unwrap();
        let out = canonicalize_yaw(&rotated, &cam, &PoseParams::identity(), &oracle, &CanonicalizeConfig::default()).unwrap();
        assert_eq!(out.correction.degrees(), 180);
    }
}

#[test]
fn too_many_failures_abort() {
    let (mesh, cam) = setup();
    let cfg = CanonicalizeConfig::default();
    let four = OracleEstimator { failing: vec![0, 2, 4, 6], ..OracleEstimator::perfect(0.0) };
    let out = canonicalize_yaw(&mesh, &cam, &PoseParams::identity(), &four, &cfg).unwrap();
    assert_eq!(out.votes.iter().filter(|v| v.estimate.is_none()).count(), 4);
    let five = OracleEstimator { failing: vec![0, 1, 2, 3, 4], ..OracleEstimator::perfect(0.0) };
    let err = canonicalize_yaw(&mesh, &cam, &PoseParams::identity(), &five, &cfg).unwrap_err();
    assert!(matches!(err, Error::EstimatorFailure { failed: 5, total: 8 }));
}

#[test]
fn answers_file_drives_the_vote() {
    let (mesh, cam) = setup();
    let dir = tempfile::tempdir().unwrap();
    let answers = dir.path().join("answers.json");
    // Object yawed by 90°: each view reads known + 90, one view missing.
    let yaws: Vec<serde_json::Value> = VIEW_YAWS
        .iter()
        .enumerate()
        .map(|(i, y)| if i == 3 { serde_json::Value::Null } else { serde_json::json!((y + 90.0) % 360.0) })
        .collect();
    std::fs::write(&answers, serde_json::json!({ "yaws": yaws }).to_string()).unwrap();
    let est = FileAnswers::load(&answers).unwrap().with_view_dir(dir.path().join("views"));
    let out = canonicalize_yaw(&mesh, &cam, &PoseParams::identity(), &est, &CanonicalizeConfig::default()).unwrap();
    assert_eq!(out.correction.degrees(), 270);
    assert!(out.votes[3].estimate.is_none());
    for i in 0..8 {
        assert!(dir.path().join(format!("views/view_{i}.pgm")).exists());
    }
    std::fs::write(&answers, r#"{"yaws": [1, 2]}"#).unwrap();
    assert!(FileAnswers::load(&answers).is_err());
}

#[test]
fn compensated_camera_keeps_projection() {
    let (mesh, cam) = setup();
    let pose = PoseParams { log_scale: 0.2, translation: [0.1, -0.2, 0.3] };
    for deg in [90.0, 180.0, 270.0, 33.0] {
        let rotated = rotate_yaw(&mesh, deg, Pivot::AabbCenter).unwrap();
        let (cam2, pose2) = compensate_camera(&cam, &pose, deg, mesh.aabb_center());
        for (p, q) in mesh.vertices().iter().zip(rotated.vertices()) {
            let a = cam.project(&pose, *p).pixel;
            let b = cam2.project(&pose2, *q).pixel;
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9, "{deg}: {a:?} vs {b:?}");
        }
    }
}
