use geocorr::geo_filter::{lift_match, verify_candidates, BicyclicScorer, CandidateMatch, MeshView, Rejection, Verdict};
use geocorr::pose::PoseParams;
use geocorr::synth::{make_pair, visible_vertices, PairParams, SynthPair};

fn candidates(pair: &SynthPair) -> Vec<CandidateMatch<f64>> {
    pair.candidates.iter().map(|c| CandidateMatch::new(c.p_src, c.p_tgt)).collect()
}

fn verify(pair: &SynthPair, tau: f64) -> Vec<Verdict<f64>> {
    let src = MeshView::new(&pair.src.mesh, &pair.src.camera, &pair.src.gt_pose);
    let tgt = MeshView::new(&pair.tgt.mesh, &pair.tgt.camera, &pair.tgt.gt_pose);
    verify_candidates(&candidates(pair), &src, &tgt, tau).unwrap()
}

#[test]
fn correct_corpus_scores_below_threshold() {
    let pair = make_pair(&PairParams { candidates: 120, ..PairParams::default() }, 0.0, 3).unwrap();
    for v in verify(&pair, 0.05) {
        let e = v.cand.geo_error.unwrap();
        assert!(e < 0.05, "{e}");
    }
}

#[test]
fn planted_corpus_scores_above_threshold() {
    let pair = make_pair(&PairParams { candidates: 120, ..PairParams::default() }, 1.0, 4).unwrap();
    for v in verify(&pair, 0.05) {
        let e = v.cand.geo_error.unwrap();
        assert!(e > 0.05, "{e}");
    }
}

#[test]
fn vertex_projection_lifts_to_that_vertex() {
    let pair = make_pair(&PairParams { candidates: 10, ..PairParams::default() }, 0.0, 5).unwrap();
    let view = MeshView::new(&pair.src.mesh, &pair.src.camera, &pair.src.gt_pose);
    let vis = visible_vertices(&pair.src);
    let mut checked = 0;
    for (v, pix) in vis.iter().enumerate() {
        if let Some(p) = pix {
            let c = lift_match(&CandidateMatch::new(*p, *p), &view, &view).unwrap();
            assert_eq!(c.snapped_src, Some(v));
            checked += 1;
        }
    }
    assert!(checked > 50);
    // The image corner sees only background.
    assert_eq!(lift_match(&CandidateMatch::new([0.0, 0.0], [0.0, 0.0]), &view, &view), Err(Rejection::RayMiss));
}

#[test]
fn swapping_images_preserves_error() {
    let pair = make_pair(&PairParams { candidates: 80, ..PairParams::default() }, 0.5, 6).unwrap();
    let fwd = verify(&pair, 0.05);
    let swapped = SynthPair {
        src: pair.tgt.clone(),
        tgt: pair.src.clone(),
        candidates: pair
            .candidates
            .iter()
            .map(|c| geocorr::synth::PlantedCandidate { p_src: c.p_tgt, p_tgt: c.p_src, ..*c })
            .collect(),
    };
    let bwd = verify(&swapped, 0.05);
    for (a, b) in fwd.iter().zip(&bwd) {
        assert!((a.cand.geo_error.unwrap() - b.cand.geo_error.unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn errors_are_scale_invariant() {
    let pair = make_pair(&PairParams { candidates: 60, ..PairParams::default() }, 0.5, 7).unwrap();
    let base = verify(&pair, 0.05);
    for s in [0.1, 10.0] {
        // Rescale the target mesh and undo it in the pose so every pixel sees the same point.
        let mesh = pair.tgt.mesh.scaled(s).unwrap();
        let pose = PoseParams { log_scale: pair.tgt.gt_pose.log_scale - f64::ln(s), ..pair.tgt.gt_pose };
        let src = MeshView::new(&pair.src.mesh, &pair.src.camera, &pair.src.gt_pose);
        let tgt = MeshView::new(&mesh, &pair.tgt.camera, &pose);
        let scaled = verify_candidates(&candidates(&pair), &src, &tgt, 0.05).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert!((a.cand.geo_error.unwrap() - b.cand.geo_error.unwrap()).abs() <= 1e-9, "scale {s}");
        }
    }
}

#[test]
fn lower_threshold_never_adds_labels() {
    let pair = make_pair(&PairParams { candidates: 100, ..PairParams::default() }, 0.5, 8).unwrap();
    let taus = [0.0, 0.01, 0.05, 0.1, 0.5];
    let kept: Vec<Vec<bool>> = taus.iter().map(|&t| verify(&pair, t).iter().map(|v| v.kept()).collect()).collect();
    for w in kept.windows(2) {
        assert!(w[0].iter().zip(&w[1]).all(|(lo, hi)| !lo || *hi));
    }
}

#[test]
fn geodesic_solves_are_shared() {
    let pair = make_pair(&PairParams { candidates: 200, ..PairParams::default() }, 0.5, 9).unwrap();
    let src = MeshView::new(&pair.src.mesh, &pair.src.camera, &pair.src.gt_pose);
    let tgt = MeshView::new(&pair.tgt.mesh, &pair.tgt.camera, &pair.tgt.gt_pose);
    let mut scorer = BicyclicScorer::new(&pair.src.mesh, &pair.tgt.mesh);
    for c in candidates(&pair) {
        let l = lift_match(&c, &src, &tgt).unwrap();
        scorer.score(&l).unwrap();
    }
    let (s, t) = scorer.solves();
    assert!(s <= pair.src.mesh.vertex_count() && t <= pair.tgt.mesh.vertex_count());
    assert!(s < 200 && t < 200);
}
