use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::quat::{normalize, rotation_error_deg, RotationMode, UnitQuaternion};

fn small_config() -> DatasetConfig {
    DatasetConfig {
        seed: 11,
        n_landmarks: 16,
        n_frames: 50,
        train_sequences: 2,
        extractor_hidden: 24,
        ..Default::default()
    }
}

// Independent oracle: rotation matrix from quaternion components.
fn rotation_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

#[test]
fn scene_generation() {
    let a = generate_scene(5, 64, [1.0, 1.0, 1.0]).unwrap();
    let b = generate_scene(5, 64, [1.0, 1.0, 1.0]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.landmarks.len(), 64);
    assert!(a.landmarks.iter().flatten().all(|c| (-1.0..=1.0).contains(c)));
    let c = generate_scene(6, 64, [1.0, 1.0, 1.0]).unwrap();
    assert_ne!(a, c);
    assert!(matches!(
        generate_scene(5, 7, [1.0; 3]),
        Err(SceneError::TooFewLandmarks(7))
    ));
}

#[test]
fn trajectory_edge_cases() {
    let scene = generate_scene(1, 16, [1.0, 2.0, 0.5]).unwrap();
    let one = sample_trajectory(&scene, 1, 3, 2.0);
    assert_eq!(one.len(), 1);
    assert!((one[0].unit_quaternion().norm() - 1.0).abs() < 1e-12);

    let frozen = sample_trajectory(&scene, 40, 3, 0.0);
    let q0 = frozen[0].unit_quaternion();
    assert!(frozen.iter().all(|p| p.unit_quaternion() == q0));
}

#[test]
fn trajectory_respects_bounds() {
    let scene = generate_scene(1, 16, [1.0, 2.0, 0.5]).unwrap();
    for seed in 0..10 {
        let smooth = 0.5 + seed as f64;
        let poses = sample_trajectory(&scene, 200, seed, smooth);
        for w in poses.windows(2) {
            let d = rotation_error_deg(&w[0].unit_quaternion(), &w[1].unit_quaternion());
            assert!(d <= smooth + 1e-9, "step {d} > {smooth}");
        }
        for p in &poses {
            let q = p.unit_quaternion();
            assert!((q.norm() - 1.0).abs() < 1e-12);
            assert!(q.w() >= 0.0);
            for i in 0..3 {
                assert!(p.translation.0[i].abs() <= 1.5 * scene.extent[i]);
            }
        }
    }
}

#[test]
fn observe_conventions() {
    let scene = generate_scene(2, 10, [1.0; 3]).unwrap();
    let flat: Vec<f64> = scene.landmarks.iter().flatten().copied().collect();
    assert_eq!(observe(&scene, &Pose::identity(RotationMode::Quaternion)), flat);

    let t = [0.3, -0.2, 0.7];
    let shifted = Pose::new(Rotation::Quat(UnitQuaternion::IDENTITY), Translation(t));
    let obs = observe(&scene, &shifted);
    for (i, c) in obs.iter().enumerate() {
        assert_abs_diff_eq!(*c, flat[i] - t[i % 3], epsilon = 1e-15);
    }
}

#[test]
fn observe_matches_matrix_oracle_and_inverts() {
    let scene = generate_scene(3, 12, [1.0; 3]).unwrap();
    let poses = sample_trajectory_with(
        &scene,
        20,
        9,
        &TrajectoryParams {
            max_rotation_deg: 170.0,
            smoothness_deg: 30.0,
            ..Default::default()
        },
    );
    for pose in poses {
        let q = pose.unit_quaternion();
        let r = rotation_matrix(q.to_array());
        let t = pose.translation.0;
        let obs = observe(&scene, &pose);
        for (k, p) in scene.landmarks.iter().enumerate() {
            let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
            for i in 0..3 {
                // Rᵀ d
                let e = r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2];
                assert_abs_diff_eq!(obs[3 * k + i], e, epsilon = 1e-10);
            }
            let c = [obs[3 * k], obs[3 * k + 1], obs[3 * k + 2]];
            let back = q.rotate(c);
            for i in 0..3 {
                assert_abs_diff_eq!(back[i] + t[i], p[i], epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn features_are_frozen_and_sized() {
    let ex = ExtractorParams::new(4, 30, 16, 60);
    assert_eq!(extract_features(&[0.0; 30], &ex).unwrap(), vec![0.0; 60]);
    let obs: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
    let first = extract_features(&obs, &ex).unwrap();
    assert_eq!(first.len(), 60);
    for _ in 0..1000 {
        let again = extract_features(&obs, &ex).unwrap();
        assert!(again.iter().zip(&first).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert!(matches!(
        extract_features(&obs[..29], &ex),
        Err(SceneError::ShapeMismatch { expected: 30, got: 29 })
    ));
    let ex70 = ExtractorParams::new(4, 30, 16, 70);
    assert_eq!(extract_features(&obs, &ex70).unwrap().len(), 70);
}

#[test]
fn replication_rule() {
    let p7: Vec<f64> = (1..=7).map(f64::from).collect();
    let r = replicate_pose(&p7, 14);
    assert_eq!(&r[..7], &p7[..]);
    assert_eq!(&r[7..], &p7[..]);
    assert_eq!(replicate_pose(&p7, 7), p7);
    let p6: Vec<f64> = (1..=6).map(f64::from).collect();
    assert_eq!(replicate_pose(&p6, 8), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1.0, 2.0]);
}

proptest! {
    #[test]
    fn replication_detiles(p in prop::collection::vec(-5.0f64..5.0, 6..=7), extra in 0usize..70) {
        let d = p.len() + extra;
        prop_assert_eq!(detile(&replicate_pose(&p, d), p.len()), p);
    }
}

#[test]
fn dataset_splits_and_determinism() {
    let cfg = small_config();
    let a = build_dataset(&cfg, RotationMode::Quaternion).unwrap();
    let b = build_dataset(&cfg, RotationMode::Quaternion).unwrap();
    assert_eq!(a.checksum_hex(), b.checksum_hex());
    assert_eq!(a.train.len(), 40);
    assert_eq!(a.test.len(), 10);
    assert_eq!(a.feature_dim(), 70);
    assert_eq!(a.train_sequences.len(), 2);
    a.validate_disjoint().unwrap();
    let l = build_dataset(&cfg, RotationMode::LogQuaternion).unwrap();
    assert_eq!(l.feature_dim(), 60);

    let mut leaked = a.clone();
    leaked.test.push(leaked.train[3].clone());
    assert!(matches!(
        leaked.validate_disjoint(),
        Err(SceneError::OverlappingSplits(1))
    ));
}

#[test]
fn dataset_roundtrip() {
    let cfg = DatasetConfig {
        obs_noise: 0.01,
        ..small_config()
    };
    let ds = build_dataset(&cfg, RotationMode::Quaternion).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.ds");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn truncated_dataset_is_rejected() {
    let ds = build_dataset(&small_config(), RotationMode::Quaternion).unwrap();
    let bytes = ds.to_bytes();
    for cut in [1, 100, bytes.len() / 2, bytes.len() - 5] {
        let err = Dataset::from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
        assert!(
            matches!(err, SceneError::Container(ContainerError::ChecksumMismatch)),
            "{err}"
        );
    }
    let mut flipped = bytes.clone();
    flipped[200] ^= 1;
    assert!(matches!(
        Dataset::from_bytes(&flipped),
        Err(SceneError::Container(ContainerError::ChecksumMismatch))
    ));
}

#[test]
fn newer_dataset_version_is_rejected() {
    let ds = build_dataset(&small_config(), RotationMode::Quaternion).unwrap();
    let err = Dataset::from_bytes(&ds.encode(DATASET_VERSION + 1)).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(
        err,
        SceneError::Container(ContainerError::FormatVersionMismatch { found: 2, supported: 1 })
    ));
    assert!(msg.contains('2') && msg.contains('1'), "{msg}");
}

#[test]
fn invalid_configs_are_rejected() {
    let cfg = DatasetConfig {
        test_fraction: 1.5,
        ..small_config()
    };
    assert!(matches!(
        build_dataset(&cfg, RotationMode::Quaternion),
        Err(SceneError::InvalidConfig(_))
    ));
    let cfg = DatasetConfig {
        n_landmarks: 3,
        ..small_config()
    };
    assert!(matches!(
        build_dataset(&cfg, RotationMode::Quaternion),
        Err(SceneError::TooFewLandmarks(3))
    ));
}

#[test]
fn ground_truth_is_canonical() {
    let ds = build_dataset(&small_config(), RotationMode::Quaternion).unwrap();
    for s in ds.train.iter().chain(&ds.test) {
        let q = s.pose_gt.unit_quaternion();
        assert!(q.w() >= 0.0);
        assert!(normalize(q.to_array()).unwrap().w() >= 0.0);
    }
}
