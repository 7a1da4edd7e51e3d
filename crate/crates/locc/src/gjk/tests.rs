use rand::Rng;

use super::*;
use crate::hull::ConvexHull;
use crate::mesh::oracle::exact_collide;
use crate::rng;
use crate::shapes;

fn cube_hull(half: f64) -> ConvexHull {
    ConvexHull::from_points(&shapes::make_box("b", half, half, half).vertices).unwrap()
}

fn random_hull(r: &mut rng::Stream, scale: f64) -> ConvexHull {
    loop {
        let n = r.random_range(8..40);
        let pts: Vec<Vec3> = (0..n).map(|_| rng::uniform_in_cube(r, scale)).collect();
        if let Ok(h) = ConvexHull::from_points(&pts) {
            return h;
        }
    }
}

fn random_pose(r: &mut rng::Stream, spread: f64) -> Pose {
    Pose::new(rng::uniform_rotation(r), rng::uniform_in_cube(r, spread))
}

#[test]
fn cubes_far_apart_do_not_collide() {
    let h = cube_hull(0.5);
    let cfg = GjkConfig::max_budget();
    let q1 = Pose::identity();
    let q2 = Pose::from_translation(Vec3::new(3.0, 0.0, 0.0));
    assert!(!gjk_boolean(&h, &q1, &h, &q2, &cfg));
}

#[test]
fn coincident_cubes_collide() {
    let h = cube_hull(0.5);
    let cfg = GjkConfig::max_budget();
    let q = Pose::identity();
    assert!(gjk_boolean(&h, &q, &h, &q, &cfg));
}

#[test]
fn face_to_face_distance_two_meters() {
    let h = cube_hull(0.5);
    let cfg = GjkConfig::max_budget();
    let q1 = Pose::identity();
    let q2 = Pose::from_translation(Vec3::new(3.0, 0.0, 0.0));
    let d = gjk_distance(&h, &q1, &h, &q2, &cfg);
    assert!((d - 2.0).abs() < 1e-6, "d = {d}");
    // Colliding pair reports 0.
    assert_eq!(gjk_distance(&h, &q1, &h, &q1, &cfg), 0.0);
}

#[test]
fn boolean_matches_exact_oracle_on_random_hulls() {
    let mut r = rng::stream(2001);
    let cfg = GjkConfig::max_budget();
    let n = 500;
    let mut mismatches = 0;
    let mut colliding = 0;
    for _ in 0..n {
        let h1 = random_hull(&mut r, 0.06);
        let h2 = random_hull(&mut r, 0.06);
        let q1 = random_pose(&mut r, 0.05);
        let q2 = random_pose(&mut r, 0.05);
        let got = gjk_boolean(&h1, &q1, &h2, &q2, &cfg);
        let m1 = h1.to_trimesh("h1").unwrap();
        let m2 = h2.to_trimesh("h2").unwrap();
        let want = exact_collide(&m1, &q1, &m2, &q2);
        if want {
            colliding += 1;
        }
        if got != want {
            // Disagreements are only allowed within 1e-6 of touching.
            let (_, _, d) = crate::mesh::oracle::closest_points(&m1, &q1, &m2, &q2);
            assert!(
                d.abs() < 1e-6,
                "disagreement at |gap| = {d} (gjk {got}, oracle {want})"
            );
            mismatches += 1;
        }
    }
    assert!(colliding > 50, "suite should mix verdicts, got {colliding} collisions");
    assert!(
        (mismatches as f64) < 0.01 * n as f64,
        "too many mismatches: {mismatches}/{n}"
    );
}

#[test]
fn no_false_negatives_at_full_budget() {
    let mut r = rng::stream(555);
    let cfg = GjkConfig::max_budget();
    for _ in 0..300 {
        let h1 = random_hull(&mut r, 0.06);
        let h2 = random_hull(&mut r, 0.06);
        let q1 = random_pose(&mut r, 0.04);
        let q2 = random_pose(&mut r, 0.04);
        let m1 = h1.to_trimesh("h1").unwrap();
        let m2 = h2.to_trimesh("h2").unwrap();
        if exact_collide(&m1, &q1, &m2, &q2) {
            // Filter touching-grade contacts: the spec allows disagreement
            // only below 1e-6 overlap, which closest_points reports as 0.
            let depth =
                crate::mesh::oracle::penetration_depth_sampled(&m1, &q1, &m2, &q2, 400, 8);
            if depth > 1e-6 {
                assert!(
                    gjk_boolean(&h1, &q1, &h2, &q2, &cfg),
                    "false negative at depth {depth}"
                );
            }
        }
    }
}

#[test]
fn distance_is_monotone_in_iterations_and_below_truth() {
    let mut r = rng::stream(777);
    for _ in 0..60 {
        let h1 = random_hull(&mut r, 0.05);
        let h2 = random_hull(&mut r, 0.05);
        let q1 = random_pose(&mut r, 0.03);
        let q2 = Pose::new(
            rng::uniform_rotation(&mut r),
            rng::uniform_in_cube(&mut r, 0.03) + Vec3::new(0.25, 0.0, 0.0),
        );
        let m1 = h1.to_trimesh("h1").unwrap();
        let m2 = h2.to_trimesh("h2").unwrap();
        let (_, _, truth) = crate::mesh::oracle::closest_points(&m1, &q1, &m2, &q2);
        if truth <= 0.0 {
            continue;
        }
        let mut prev = 0.0;
        for it in 4..=9 {
            let cfg = GjkConfig::new(it, 16, 64).unwrap();
            let d = gjk_distance(&h1, &q1, &h2, &q2, &cfg);
            assert!(d + 1e-12 >= prev, "not monotone: {d} after {prev} at {it}");
            assert!(d <= truth + 1e-9, "lower bound {d} above truth {truth}");
            prev = d;
        }
        // At the full budget the bound is tight.
        assert!(
            (truth - prev).abs() < 1e-5,
            "budget-9 distance {prev} vs truth {truth}"
        );
    }
}

#[test]
fn set_boolean_basics_and_symmetry() {
    let cfg = GjkConfig::max_budget();
    let h = cube_hull(0.05);
    let two = |id: &str| {
        ConvexSet::new(
            vec![h.clone(), h.clone()],
            id,
        )
    };
    let s1 = two("a");
    let s2 = two("b");
    let q1 = Pose::identity();
    // One pair touching (second hull of s2 overlaps s1's first hull).
    let q2 = Pose::from_translation(Vec3::new(0.08, 0.0, 0.0));
    assert!(set_boolean(&s1, &q1, &s2, &q2, &cfg));
    assert_eq!(
        set_boolean(&s1, &q1, &s2, &q2, &cfg),
        set_boolean(&s2, &q2, &s1, &q1, &cfg)
    );
    let far = Pose::from_translation(Vec3::new(5.0, 0.0, 0.0));
    assert!(!set_boolean(&s1, &q1, &s2, &far, &cfg));

    let mut r = rng::stream(99);
    for _ in 0..50 {
        let qa = random_pose(&mut r, 0.1);
        let qb = random_pose(&mut r, 0.1);
        assert_eq!(
            set_boolean(&s1, &qa, &s2, &qb, &cfg),
            set_boolean(&s2, &qb, &s1, &qa, &cfg)
        );
    }
}

#[test]
fn bowl_decomposition_beats_single_hull_inside_cavity() {
    let specs = shapes::desk_object_set();
    let bowl = specs.iter().find(|s| s.mesh.id == "bowl").unwrap();
    let decomposed = ConvexSet::new(
        bowl.decomposition
            .iter()
            .map(|pts| ConvexHull::from_points(pts).unwrap())
            .collect(),
        "bowl",
    );
    let single = ConvexSet::single(
        ConvexHull::from_points(&bowl.mesh.vertices).unwrap(),
        "bowl_hull",
    );
    let cube = ConvexSet::single(cube_hull(0.015), "cube");

    // Cube floating inside the bowl cavity, touching nothing.
    let q_bowl = Pose::identity();
    let q_cube = Pose::from_translation(Vec3::new(0.0, 0.0, 0.045));
    let cfg = GjkConfig::max_budget();

    let exact = exact_collide(
        &bowl.mesh,
        &q_bowl,
        &shapes::make_box("c", 0.015, 0.015, 0.015),
        &q_cube,
    );
    assert!(!exact, "scene setup: cube must not touch the bowl");
    assert!(
        !set_boolean(&decomposed, &q_bowl, &cube, &q_cube, &cfg),
        "sector decomposition must keep the cavity open"
    );
    assert!(
        set_boolean(&single, &q_bowl, &cube, &q_cube, &cfg),
        "single hull fills the cavity and reports a false contact"
    );
}

#[test]
fn batch_of_one_matches_set_boolean() {
    let cfg = GjkConfig::max_budget();
    let s1 = ConvexSet::single(cube_hull(0.5), "a");
    let s2 = ConvexSet::single(cube_hull(0.5), "b");
    let q1 = Pose::identity();
    let q2 = Pose::from_translation(Vec3::new(0.7, 0.0, 0.0));
    let single = set_boolean(&s1, &q1, &s2, &q2, &cfg);
    let (batch, elapsed) = batch_boolean(&[(&s1, q1, &s2, q2)], &cfg);
    assert_eq!(batch, vec![single]);
    assert!(elapsed >= 0.0);

    let pairs: Vec<_> = (0..64).map(|_| (&s1, q1, &s2, q2)).collect();
    let (many, _) = batch_boolean(&pairs, &cfg);
    assert!(many.iter().all(|&v| v == single));
}

#[test]
fn runtime_is_uniform_across_verdicts() {
    // Instruction-uniformity proxy: batch timing for colliding vs
    // non-colliding inputs of equal hull size differs < 20%.
    let mut r = rng::stream(31337);
    let h1 = random_hull(&mut r, 0.05);
    let h2 = random_hull(&mut r, 0.05);
    let s1 = ConvexSet::single(h1, "a");
    let s2 = ConvexSet::single(h2, "b");
    let cfg = GjkConfig::max_budget();
    let q1 = Pose::identity();
    let hit = Pose::from_translation(Vec3::new(0.001, 0.0, 0.0));
    let miss = Pose::from_translation(Vec3::new(0.5, 0.0, 0.0));
    assert!(set_boolean(&s1, &q1, &s2, &hit, &cfg));
    assert!(!set_boolean(&s1, &q1, &s2, &miss, &cfg));

    // Serial, interleaved, median-of-7 timing: scheduler noise on a busy
    // machine would otherwise swamp the effect under test.
    let n = 6_000;
    let time_once = |q2: &Pose| {
        let start = std::time::Instant::now();
        let mut acc = false;
        for _ in 0..n {
            acc ^= set_boolean(&s1, &q1, &s2, q2, &cfg);
        }
        std::hint::black_box(acc);
        start.elapsed().as_secs_f64()
    };
    let reps = 7;
    let mut t_hits: Vec<f64> = Vec::new();
    let mut t_misses: Vec<f64> = Vec::new();
    time_once(&hit); // warmup
    for _ in 0..reps {
        t_hits.push(time_once(&hit));
        t_misses.push(time_once(&miss));
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let t_hit = median(&mut t_hits);
    let t_miss = median(&mut t_misses);
    let ratio = (t_hit - t_miss).abs() / t_hit.max(t_miss);
    assert!(
        ratio < 0.20,
        "colliding {t_hit:.4}s vs separated {t_miss:.4}s (ratio {ratio:.3})"
    );
}

#[test]
fn config_ranges_are_enforced() {
    assert!(GjkConfig::new(4, 2, 16).is_ok());
    assert!(GjkConfig::new(9, 16, 64).is_ok());
    assert!(matches!(
        GjkConfig::new(3, 8, 32),
        Err(GjkError::ConfigRange { name: "max_iterations", .. })
    ));
    assert!(matches!(
        GjkConfig::new(5, 17, 32),
        Err(GjkError::ConfigRange { name: "max_decomposition", .. })
    ));
    assert!(matches!(
        GjkConfig::new(5, 8, 8),
        Err(GjkError::ConfigRange { name: "max_triangles_per_hull", .. })
    ));
}

#[test]
fn sidecar_round_trip_and_errors() {
    let set = shapes::desk_object_set();
    let torus = set.iter().find(|s| s.mesh.id == "torus").unwrap();
    let mut buf = Vec::new();
    shapes::write_hulls_sidecar(&torus.decomposition, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let parsed = parse_hulls_sidecar(&text).unwrap();
    assert_eq!(parsed.len(), torus.decomposition.len());
    let set = convex_set_from_sidecar(&text, "torus").unwrap();
    assert_eq!(set.hulls.len(), torus.decomposition.len());

    assert!(matches!(
        parse_hulls_sidecar(""),
        Err(GjkError::EmptySidecar)
    ));
    assert!(matches!(
        parse_hulls_sidecar("v 0 0 0\n"),
        Err(GjkError::Parse { line: 1, .. })
    ));
    assert!(matches!(
        parse_hulls_sidecar("hull\nv 0 0\n"),
        Err(GjkError::Parse { line: 2, .. })
    ));
    assert!(matches!(
        parse_hulls_sidecar("hull\nv 0 0 nan\n"),
        Err(GjkError::Parse { .. })
    ));
}

#[test]
fn coarsen_reduces_hull_count_conservatively() {
    let set = shapes::desk_object_set();
    let bowl = set.iter().find(|s| s.mesh.id == "bowl").unwrap();
    let full = ConvexSet::new(
        bowl.decomposition
            .iter()
            .map(|p| ConvexHull::from_points(p).unwrap())
            .collect(),
        "bowl",
    );
    let coarse = full.coarsened(2);
    assert_eq!(coarse.hulls.len(), 2);
    // Conservative: every original hull vertex stays inside some coarse hull.
    for h in &full.hulls {
        for v in &h.vertices {
            assert!(coarse.hulls.iter().any(|c| c.contains(v, 1e-7)));
        }
    }
}
