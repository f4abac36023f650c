//! Cross-module workflows through the public API: file round trips feeding
//! decomposition, re-posing against forward kinematics, and IK recovering
//! poses produced by FK.

use nalgebra::{Point3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatgen_core::decompose::{decompose, repose_robot};
use splatgen_core::kinematics::arms;
use splatgen_core::raster::{render, CameraModel, Intrinsics};
use splatgen_core::splat::{load_splat, save_splat};
use splatgen_core::synthetic::robot_fixture;
use splatgen_core::{apply_similarity, Gaussian, GaussianSet, SimilarityTransform};

#[test]
fn saved_robot_decomposes_and_follows_forward_kinematics() {
    let chain = arms::seven_joint_arm();
    let (clouds, robot) = robot_fixture(&chain).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("robot.ply");
    save_splat(&robot, &path).unwrap();
    let loaded = load_splat(&path).unwrap();
    assert_eq!(loaded.len(), robot.len());

    let d = decompose(&loaded, &chain, &clouds, &[]).unwrap();
    assert_eq!(d.background.len(), 0, "every robot Gaussian lies near some link");
    let q0 = chain.q_default().to_vec();
    let q: Vec<f64> = q0.iter().enumerate().map(|(i, v)| v + 0.1 * (i as f64 + 1.0).sin()).collect();
    let fk0 = chain.forward_kinematics(&q0).unwrap();
    let fk = chain.forward_kinematics(&q).unwrap();
    let moved = repose_robot(&d, &chain, &q).unwrap();

    let mut offset = 0;
    for (l, set) in d.robot_links.iter().enumerate() {
        let delta = fk[l] * fk0[l].inverse();
        for i in 0..set.len() {
            let want = delta * Point3::from(set.positions()[i]);
            assert!((moved.positions()[offset + i] - want.coords).norm() < 1e-9);
        }
        offset += set.len();
    }
    assert_eq!(offset, moved.len());
}

#[test]
fn similarity_and_inverse_leave_the_render_unchanged() {
    // random depths: coplanar splats would swap order under rounding
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scene = GaussianSet::from_gaussians(
        2,
        (0..60).map(|_| {
            let mut g = Gaussian::isotropic(
                Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
                rng.random_range(0.01..0.05),
                rng.random_range(0.3..0.9),
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                2,
            );
            g.scale.x *= 2.0;
            g
        }),
    )
    .unwrap();
    let t = SimilarityTransform::new(UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1), Vector3::new(0.2, 0.1, -0.3), 1.7).unwrap();
    let back = apply_similarity(&apply_similarity(&scene, &t), &t.inverse());
    let cam = CameraModel::look_at(Intrinsics::from_fov(40, 30, 70.0), &Point3::new(0.6, 0.3, 0.5), &Point3::origin(), &Vector3::z()).unwrap();
    let a = render(&scene, &cam, [0.2; 3]);
    let b = render(&back, &cam, [0.2; 3]);
    let worst = a.pixels.data().iter().zip(b.pixels.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "render drifted by {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ik_recovers_nearby_fk_poses(offsets in prop::collection::vec(-0.3f64..0.3, 7)) {
        let chain = arms::seven_joint_arm();
        let q0 = chain.q_default().to_vec();
        let mut q: Vec<f64> = q0.iter().zip(&offsets).map(|(a, b)| a + b).collect();
        chain.clamp(&mut q);
        let target = chain.end_effector_pose(&q).unwrap();
        let solved = chain.inverse_kinematics(&target, &q0).unwrap();
        let reached = chain.end_effector_pose(&solved).unwrap();
        prop_assert!((reached.translation.vector - target.translation.vector).norm() < 1e-3);
        prop_assert!(reached.rotation.angle_to(&target.rotation) < 0.5f64.to_radians());
        for (v, (lo, hi)) in solved.iter().zip(chain.limits()) {
            prop_assert!(*v >= lo && *v <= hi);
        }
    }
}
