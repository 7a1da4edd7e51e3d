use super::*;
use crate::mesh::sample_surface;
use crate::shapes;

fn two_cubes() -> ObjectSet {
    ObjectSet::new(
        vec![
            Arc::new(shapes::unit_cube("a")),
            Arc::new(shapes::unit_cube("b")),
        ],
        vec![None, None],
    )
}

fn small_set() -> ObjectSet {
    let specs = shapes::desk_object_set();
    let meshes: Vec<MeshHandle> = specs
        .into_iter()
        .take(5)
        .map(|s| Arc::new(s.mesh))
        .collect();
    let n = meshes.len();
    ObjectSet::new(meshes, vec![None; n])
}

#[test]
fn initial_pairs_are_disjoint_and_seeded() {
    let set = two_cubes();
    let cfg = GenConfig {
        pose_bound: 5.0,
        ..Default::default()
    };
    let mut r1 = rng::substream(7, "t", 0);
    let (a1, a2) = sample_initial_pair(&set.meshes[0], &set.meshes[1], &cfg, &mut r1).unwrap();
    let mut r2 = rng::substream(7, "t", 0);
    let (b1, b2) = sample_initial_pair(&set.meshes[0], &set.meshes[1], &cfg, &mut r2).unwrap();
    assert_eq!(a1, b1);
    assert_eq!(a2, b2);
    assert!(!oracle::exact_collide(
        &set.meshes[0],
        &a1,
        &set.meshes[1],
        &a2
    ));
}

#[test]
fn wide_bound_is_disjoint_on_first_try() {
    // Bound 10× the object diameter: expect ≫ 90% first-try disjoint.
    let set = two_cubes();
    let diameter = 3.0_f64.sqrt();
    let bound = 10.0 * diameter;
    let mut r = rng::stream(11);
    let mut first_try = 0;
    let n = 1000;
    for _ in 0..n {
        let q1 = Pose::new(rng::uniform_rotation(&mut r), rng::uniform_in_cube(&mut r, bound));
        let q2 = Pose::new(rng::uniform_rotation(&mut r), rng::uniform_in_cube(&mut r, bound));
        if !oracle::exact_collide(&set.meshes[0], &q1, &set.meshes[1], &q2) {
            first_try += 1;
        }
    }
    assert!(first_try as f64 / n as f64 > 0.9, "{first_try}/{n}");
}

#[test]
fn zero_bound_hits_the_error_path() {
    let set = two_cubes();
    let cfg = GenConfig {
        pose_bound: 0.0,
        ..Default::default()
    };
    let mut r = rng::stream(1);
    let err = sample_initial_pair(&set.meshes[0], &set.meshes[1], &cfg, &mut r);
    assert!(matches!(err, Err(DatagenError::PoseSampling { .. })));
}

#[test]
fn manipulate_reaches_requested_gap() {
    let a = shapes::unit_cube("a");
    let b = shapes::unit_cube("b");
    let q1 = Pose::identity();
    let q2 = Pose::from_translation(Vec3::new(3.0, 0.0, 0.0)); // gap 2.0
    let (q2m, measured) = manipulate_distance(&a, &q1, &b, &q2, 0.5).unwrap();
    assert!((measured - 0.5).abs() < 1e-6, "measured {measured}");
    let (_, _, check) = oracle::closest_points(&a, &q1, &b, &q2m);
    assert!((check - 0.5).abs() < 1e-6);

    // Target equal to the current gap leaves the pose unchanged.
    let (q2same, _) = manipulate_distance(&a, &q1, &b, &q2, 2.0).unwrap();
    assert!((q2same.translation - q2.translation).norm() < 1e-9);

    // Negative target produces a collision.
    let (q2pen, _) = manipulate_distance(&a, &q1, &b, &q2, -0.005).unwrap();
    assert!(oracle::exact_collide(&a, &q1, &b, &q2pen));

    // Colliding input is an error.
    let overlapped = Pose::from_translation(Vec3::new(0.5, 0.0, 0.0));
    assert!(matches!(
        manipulate_distance(&a, &q1, &b, &overlapped, 0.1),
        Err(DatagenError::CollidingInput)
    ));
}

#[test]
fn manipulate_reaches_gap_on_nonconvex_pairs() {
    let torus = shapes::make_torus("t", 0.04, 0.012, 8, 12);
    let cube = shapes::make_box("c", 0.02, 0.02, 0.02);
    let mut r = rng::stream(5);
    for _ in 0..30 {
        let cfg = GenConfig {
            pose_bound: 0.4,
            ..Default::default()
        };
        let (q1, q2) = sample_initial_pair(&torus, &cube, &cfg, &mut r).unwrap();
        let target = 0.003;
        let (q2m, measured) = manipulate_distance(&torus, &q1, &cube, &q2, target).unwrap();
        assert!(
            (measured - target).abs() < 1e-4,
            "measured {measured} vs target {target}"
        );
        assert!(!oracle::exact_collide(&torus, &q1, &cube, &q2m));
    }
}

#[test]
fn dataset_is_reproducible_and_oracle_consistent() {
    let set = small_set();
    let cfg = GenConfig {
        pairs_per_object_pair: 6,
        seed: 42,
        ..Default::default()
    };
    let ds1 = generate_dataset(&set, &cfg).unwrap();
    let ds2 = generate_dataset(&set, &cfg).unwrap();
    assert_eq!(ds1, ds2);
    assert_eq!(file::to_bytes(&ds1), file::to_bytes(&ds2));

    // Label replay under the exact oracle.
    for p in &ds1.pairs {
        let m1 = &set.meshes[p.id1 as usize];
        let m2 = &set.meshes[p.id2 as usize];
        assert_eq!(
            oracle::exact_collide(m1, &p.q1, m2, &p.q2),
            p.label,
            "label replay failed"
        );
    }

    // Class balance.
    let frac = ds1.positive_fraction();
    assert!(
        (0.35..=0.65).contains(&frac),
        "positive fraction {frac} out of range"
    );
}

#[test]
fn near_contact_negatives_concentrate_below_three_sigma() {
    let set = small_set();
    let cfg = GenConfig {
        pairs_per_object_pair: 12,
        seed: 3,
        ..Default::default()
    };
    let ds = generate_dataset(&set, &cfg).unwrap();
    // Measured gaps of every negative-label pair: concentration below 3σ
    // (the 10%-capped far negatives are the only mass allowed above).
    let gaps: Vec<f64> = ds
        .pairs
        .iter()
        .filter(|p| !p.label)
        .map(|p| {
            let m1 = &set.meshes[p.id1 as usize];
            let m2 = &set.meshes[p.id2 as usize];
            oracle::closest_points(m1, &p.q1, m2, &p.q2).2
        })
        .collect();
    assert!(gaps.len() > 20, "need negatives, got {}", gaps.len());
    let below = gaps.iter().filter(|&&g| g < 3.0 * cfg.delta_sigma).count();
    let frac = below as f64 / gaps.len() as f64;
    assert!(frac > 0.7, "only {below}/{} gaps below 3σ", gaps.len());
}

#[test]
fn file_round_trip_is_byte_identical() {
    let set = two_cubes();
    let cfg = GenConfig {
        pairs_per_object_pair: 4,
        seed: 9,
        pose_bound: 3.0,
        ..Default::default()
    };
    let ds = generate_dataset(&set, &cfg).unwrap();
    let bytes = file::to_bytes(&ds);
    let back = file::from_bytes(&bytes).unwrap();
    assert_eq!(ds, back);
    assert_eq!(bytes, file::to_bytes(&back));
}

#[test]
fn file_reader_rejects_corruption() {
    assert!(file::from_bytes(b"").is_err());
    assert!(file::from_bytes(b"LOCC-DATA 1\ncount 5\nDATA\n").is_err());
    let set = two_cubes();
    let cfg = GenConfig {
        pairs_per_object_pair: 2,
        seed: 1,
        pose_bound: 3.0,
        ..Default::default()
    };
    let ds = generate_dataset(&set, &cfg).unwrap();
    let mut bytes = file::to_bytes(&ds);
    bytes.truncate(bytes.len() - 1);
    assert!(file::from_bytes(&bytes).is_err());
}

#[test]
fn augmentation_preserves_world_volume_and_labels() {
    let set = small_set();
    let k = 64;
    let clouds: Vec<_> = set
        .meshes
        .iter()
        .map(|m| sample_surface(m, k, 17))
        .collect();
    let cfg = GenConfig {
        pairs_per_object_pair: 3,
        seed: 21,
        ..Default::default()
    };
    let ds = generate_dataset(&set, &cfg).unwrap();
    let mut r = rng::stream(31);
    for p in ds.pairs.iter().take(40) {
        let m1 = &set.meshes[p.id1 as usize];
        let m2 = &set.meshes[p.id2 as usize];
        let rot = rng::uniform_rotation(&mut r);
        let aug = augment_rotation(
            m1,
            &clouds[p.id1 as usize],
            &p.q1,
            m2,
            &clouds[p.id2 as usize],
            &p.q2,
            &rot,
        );
        // World-space points of the rotated cloud under the adjusted pose
        // coincide with the originals.
        for (orig, rotp) in clouds[p.id1 as usize].points.iter().zip(&aug.cloud1.points) {
            let w0 = p.q1.transform_point(orig);
            let w1 = aug.q1.transform_point(rotp);
            assert!((w0 - w1).norm() < 1e-9);
        }
        // Oracle agreement on the rotated meshes.
        let rm1 = rotated_mesh(m1, &rot);
        let rm2 = rotated_mesh(m2, &rot);
        assert_eq!(
            oracle::exact_collide(&rm1, &aug.q1, &rm2, &aug.q2),
            p.label
        );
        // Rotated-cloud AABB sits inside the rotated-mesh AABB.
        for q in &aug.cloud1.points {
            assert!(aug.aabb1.grown(1e-9).contains_point(q));
        }
    }

    // Identity rotation changes nothing.
    let id = nalgebra::UnitQuaternion::identity();
    let p = &ds.pairs[0];
    let aug = augment_rotation(
        &set.meshes[p.id1 as usize],
        &clouds[p.id1 as usize],
        &p.q1,
        &set.meshes[p.id2 as usize],
        &clouds[p.id2 as usize],
        &p.q2,
        &id,
    );
    assert_eq!(aug.q1, p.q1);
    assert_eq!(aug.cloud1.points, clouds[p.id1 as usize].points);
}

fn rotated_mesh(m: &TriMesh, r: &nalgebra::UnitQuaternion<f64>) -> TriMesh {
    TriMesh::new(
        m.vertices.iter().map(|v| r * v).collect(),
        m.triangles.clone(),
        format!("{}_rot", m.id),
    )
    .unwrap()
}

#[test]
fn successive_rotations_compose() {
    let mut r = rng::stream(3);
    let r1 = rng::uniform_rotation(&mut r);
    let r2 = rng::uniform_rotation(&mut r);
    let cube = shapes::unit_cube("c");
    let cloud = sample_surface(&cube, 32, 1);
    let once = cloud.rotated(&r1).rotated(&r2);
    let composed = cloud.rotated(&(r2 * r1));
    for (a, b) in once.points.iter().zip(&composed.points) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn split_respects_holdout_and_disjointness() {
    let set = small_set();
    let split = split_known_unknown(&set, 2, 5).unwrap();
    assert_eq!(split.unknown_ids.len(), 2);
    assert_eq!(split.train_ids.len(), set.len() - 2);
    for u in &split.unknown_ids {
        assert!(!split.train_ids.contains(u));
    }
    assert!(matches!(
        split_known_unknown(&set, set.len(), 1),
        Err(DatagenError::HoldoutTooLarge { .. })
    ));
    let zero = split_known_unknown(&set, 0, 1).unwrap();
    assert!(zero.unknown_ids.is_empty());
}

#[test]
fn known_test_pairs_are_unseen_pose_combinations() {
    let set = small_set();
    let cfg = GenConfig {
        pairs_per_object_pair: 4,
        seed: 13,
        ..Default::default()
    };
    let ds = generate_dataset(&set, &cfg).unwrap();
    let train_keys: std::collections::HashSet<Vec<u64>> = ds
        .pairs
        .iter()
        .map(|p| pair_key(p))
        .collect();
    let ids: Vec<usize> = (0..set.len()).collect();
    let test = uniform_test_pairs(&set, &ids, 100, 0.35, 14).unwrap();
    for t in &test {
        assert!(!train_keys.contains(&pair_key(t)), "test pair seen in training");
    }
    // Both labels are represented.
    let pos = test.iter().filter(|p| p.label).count();
    assert!(pos > 0 && pos < test.len(), "degenerate test labels: {pos}");
}

fn pair_key(p: &LabeledPair) -> Vec<u64> {
    let mut k = vec![p.id1 as u64, p.id2 as u64];
    for v in p.q1.to_vec7().iter().chain(p.q2.to_vec7().iter()) {
        k.push(v.to_bits());
    }
    k
}
