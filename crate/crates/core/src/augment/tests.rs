use super::*;
use crate::decompose::{Label, SceneDecomposition};
use crate::error::Error;
use crate::kinematics::arms::{seven_joint_arm, six_joint_arm};
use crate::kinematics::KinematicChain;
use crate::raster::{render, Image};
use crate::splat::{Gaussian, GaussianSet, SimilarityTransform};
use crate::trajectory::{planar_transform, transform_keyframes, Gripper, Keyframe, KeyframeKind};
use std::f64::consts::{FRAC_PI_8, PI};
use std::path::PathBuf;

fn blob(x: f64, rgb: [f64; 3]) -> GaussianSet {
    GaussianSet::from_gaussians(1, [Gaussian::isotropic(Vector3::new(x, 0.0, 0.0), 0.01, 0.9, rgb, 1)]).unwrap()
}

#[test]
fn zero_width_workspace_gives_the_fixed_pose() {
    let ws = Workspace {
        x: [0.4, 0.4],
        y: [-0.1, -0.1],
        yaw: [0.3, 0.3],
    };
    let center = Point3::new(0.5, 0.0, 0.02);
    let (p, g) = sample_object_pose(&ws, &center, &[], 0.0, 7).unwrap();
    assert_eq!(p, ObjectPlacement { x: 0.4, y: -0.1, yaw: 0.3 });
    let moved = g * center;
    assert!((moved - Point3::new(0.4, -0.1, 0.02)).norm() < 1e-15);
    let (_, _, yaw) = g.rotation.euler_angles();
    assert!((yaw - 0.3).abs() < 1e-15);
    assert_eq!(sample_object_pose(&ws, &center, &[], 0.0, 99).unwrap().0, p);
}

#[test]
fn placements_fill_the_workspace() {
    let ws = Workspace {
        x: [0.3, 0.6],
        y: [-0.2, 0.2],
        yaw: [-FRAC_PI_8, FRAC_PI_8],
    };
    let center = Point3::new(0.45, 0.0, 0.0);
    let draws: Vec<ObjectPlacement> = (0..10_000).map(|s| sample_object_pose(&ws, &center, &[], 0.0, s).unwrap().0).collect();
    for (get, r) in [
        (Box::new(|p: &ObjectPlacement| p.x) as Box<dyn Fn(&ObjectPlacement) -> f64>, ws.x),
        (Box::new(|p: &ObjectPlacement| p.y), ws.y),
        (Box::new(|p: &ObjectPlacement| p.yaw), ws.yaw),
    ] {
        let vals: Vec<f64> = draws.iter().map(&get).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= r[0] && hi <= r[1]);
        assert!(hi - lo >= 0.95 * (r[1] - r[0]));
    }
}

#[test]
fn clearance_rejects_and_can_make_placement_infeasible() {
    let ws = Workspace {
        x: [0.3, 0.6],
        y: [-0.2, 0.2],
        yaw: [0.0, 0.0],
    };
    let center = Point3::new(0.45, 0.0, 0.0);
    let other = [Point3::new(0.45, 0.0, 0.0)];
    for s in 0..200 {
        let (p, _) = sample_object_pose(&ws, &center, &other, 0.1, s).unwrap();
        assert!((Point3::new(p.x, p.y, 0.0) - other[0]).norm() >= 0.1);
    }
    match sample_object_pose(&ws, &center, &other, 0.6, 0) {
        Err(Error::PlacementInfeasible { attempts }) => assert_eq!(attempts, MAX_PLACEMENT_REJECTIONS),
        other => panic!("unexpected {other:?}"),
    }
    let bad = Workspace { x: [0.6, 0.3], ..ws };
    assert!(sample_object_pose(&bad, &center, &[], 0.0, 0).is_err());
}

fn intrinsics() -> Intrinsics {
    Intrinsics::from_fov(128, 128, 60.0)
}

fn principal_ray_miss(cam: &CameraModel, target: [f64; 3]) -> f64 {
    let p = cam.world_to_cam() * Point3::from(target);
    assert!(p.z > 0.0);
    p.x.hypot(p.y)
}

#[test]
fn degenerate_sampler_is_deterministic_and_aims_at_target() {
    let s = CameraSampler {
        target: [0.5, 0.1, 0.05],
        target_half_range: [0.0; 3],
        radius: 1.2,
        polar: 1.0,
        azimuth: 2.5,
        radius_half_range: 0.0,
        polar_half_range: 0.0,
        azimuth_half_range: 0.0,
    };
    let (d, cam) = sample_camera(&s, intrinsics(), 3).unwrap();
    assert_eq!(d.target, s.target);
    assert_eq!((d.radius, d.polar, d.azimuth), (1.2, 1.0, 2.5));
    assert!(principal_ray_miss(&cam, s.target) < 1e-9);
    let eye = cam.world_to_cam().inverse() * Point3::origin();
    assert!(((eye - Point3::from(s.target)).norm() - 1.2).abs() < 1e-12);
    assert_eq!(sample_camera(&s, intrinsics(), 4).unwrap().1, cam);
}

#[test]
fn sampled_cameras_stay_in_range_and_aim_at_their_target() {
    let s = CameraSampler::default();
    for seed in 0..10_000 {
        let (d, cam) = sample_camera(&s, intrinsics(), seed).unwrap();
        assert!(d.radius >= s.radius - 0.2 && d.radius <= s.radius + 0.2);
        assert!((d.polar - s.polar).abs() <= PI / 6.0 + 1e-15);
        assert!((d.azimuth - s.azimuth).abs() <= PI / 6.0 + 1e-15);
        for k in 0..3 {
            assert!((d.target[k] - s.target[k]).abs() <= 0.1 + 1e-15);
        }
        assert!(principal_ray_miss(&cam, d.target) < 1e-9);
        // Image up is world +z projected: the camera's y axis (down in the
        // image) has a non-positive world z component.
        let down = cam.world_to_cam().rotation.inverse() * Vector3::y();
        assert!(down.z <= 1e-12);
    }
    assert_eq!(sample_camera(&s, intrinsics(), 5).unwrap(), sample_camera(&s, intrinsics(), 5).unwrap());
}

#[test]
fn invalid_samplers_are_rejected() {
    let base = CameraSampler::default();
    for bad in [
        CameraSampler { radius_half_range: 1.0, ..base.clone() },
        CameraSampler { radius_half_range: 1.5, ..base.clone() },
        CameraSampler { polar_half_range: -0.1, ..base.clone() },
        CameraSampler { polar: 0.3, polar_half_range: 0.4, ..base.clone() },
        CameraSampler { target: [f64::NAN, 0.0, 0.0], ..base.clone() },
    ] {
        assert!(matches!(sample_camera(&bad, intrinsics(), 0), Err(Error::Config(_))));
    }
}

#[test]
fn lighting_draws_match_their_distributions() {
    let draws: Vec<LightingParams> = (0..100_000).map(sample_lighting).collect();
    let sr: Vec<f64> = draws.iter().map(|p| p.scale[0]).collect();
    let og: Vec<f64> = draws.iter().map(|p| p.offset[1]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(sr.iter().all(|v| (0.3..=1.8).contains(v)));
    assert!(og.iter().all(|v| (-0.3..=0.3).contains(v)));
    assert!((1.04..=1.06).contains(&mean(&sr)), "{}", mean(&sr));
    assert!(mean(&og).abs() <= 0.003, "{}", mean(&og));
    assert!(draws.iter().all(|p| p.noise_std == 0.1));
    assert_eq!(sample_lighting(17), sample_lighting(17));
    assert_ne!(sample_lighting(17), sample_lighting(18));
}

fn small_decomposition() -> SceneDecomposition {
    SceneDecomposition {
        link_names: vec!["a".into(), "b".into()],
        robot_links: vec![blob(0.0, [0.2, 0.2, 0.2]), blob(0.1, [0.3, 0.3, 0.3])],
        object_names: vec!["cube".into()],
        objects: vec![blob(0.5, [0.9, 0.1, 0.1])],
        background: blob(2.0, [0.5, 0.5, 0.5]),
        labels: vec![Label::Link(0), Label::Link(1), Label::Object(0), Label::Background],
        q_capture: vec![0.0],
        threshold: 0.01,
    }
}

#[test]
fn original_background_as_replacement_is_a_noop() {
    let d = small_decomposition();
    let source = AppearanceSource::SplatScene {
        scene: d.background.clone(),
        placement: SimilarityTransform::identity(),
    };
    assert_eq!(apply_appearance(&d, &source).unwrap(), d);
}

fn red_plane(dir: &std::path::Path) -> TexturedPlane {
    let path = dir.join("red.png");
    let mut img = Image::new(4, 4, 3);
    for y in 0..4 {
        for x in 0..4 {
            img.set(x, y, 0, 1.0);
        }
    }
    img.save_png(&path).unwrap();
    TexturedPlane {
        image: path,
        origin: [-0.5, -0.5, 0.0],
        u_edge: [1.0, 0.0, 0.0],
        v_edge: [0.0, 1.0, 0.0],
    }
}

#[test]
fn red_image_plane_renders_red() {
    let dir = tempfile::tempdir().unwrap();
    let d = small_decomposition();
    let source = AppearanceSource::ImagePlanes {
        planes: vec![red_plane(dir.path())],
        density: 1.0,
    };
    let out = apply_appearance(&d, &source).unwrap();
    assert_eq!(out.background.len(), 100 * 100);
    assert_eq!(out.robot_links, d.robot_links);
    assert_eq!(out.objects, d.objects);
    assert_eq!(out.labels, d.labels);
    let cam = CameraModel::look_at(
        Intrinsics::from_fov(48, 48, 60.0),
        &Point3::new(0.05, 0.0, 0.5),
        &Point3::origin(),
        &Vector3::x(),
    )
    .unwrap();
    let img = render(&out.background, &cam, [0.0, 0.0, 0.0]).pixels;
    for y in 0..48 {
        for x in 0..48 {
            let p = img.pixel(x, y);
            assert!((p[0] - 1.0).abs() < 0.05 && p[1] < 0.05 && p[2] < 0.05, "pixel ({x},{y}) = {p:?}");
        }
    }
}

#[test]
fn image_planes_follow_texture_layout() {
    let mut img = Image::new(2, 1, 3);
    img.set(0, 0, 0, 1.0);
    img.set(1, 0, 2, 1.0);
    let plane = TexturedPlane {
        image: PathBuf::from("unused.png"),
        origin: [0.0, 0.0, 0.0],
        u_edge: [0.0, 0.1, 0.0],
        v_edge: [0.0, 0.0, -0.05],
    };
    let set = tessellate_plane(&img, &plane, DEFAULT_PLANE_DENSITY, 0).unwrap();
    assert_eq!(set.len(), 20 * 10);
    for g in set.iter() {
        let rgb: Vec<f64> = (0..3).map(|c| crate::splat::dc_to_rgb(g.sh[c])).collect();
        let left = g.position.y < 0.05;
        let expected = if left { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
        for c in 0..3 {
            assert!((rgb[c] - expected[c]).abs() < 1e-12);
        }
        // Thin axis along the plane normal (here world x).
        let normal = g.rotation * Vector3::z();
        assert!((normal.x.abs() - 1.0).abs() < 1e-12);
        assert_eq!(g.scale.z, PLANE_THICKNESS);
    }
}

#[test]
fn bad_sources_are_rejected() {
    let d = small_decomposition();
    let missing = AppearanceSource::ImagePlanes {
        planes: vec![TexturedPlane {
            image: PathBuf::from("/nonexistent/texture.png"),
            origin: [0.0; 3],
            u_edge: [1.0, 0.0, 0.0],
            v_edge: [0.0, 1.0, 0.0],
        }],
        density: 1.0,
    };
    assert!(matches!(apply_appearance(&d, &missing), Err(Error::Io { .. })));
    let skew = AppearanceSource::ImagePlanes {
        planes: vec![TexturedPlane {
            image: PathBuf::from("x.png"),
            origin: [0.0; 3],
            u_edge: [1.0, 0.0, 0.0],
            v_edge: [1.0, 1.0, 0.0],
        }],
        density: 1.0,
    };
    assert!(matches!(apply_appearance(&d, &skew), Err(Error::Config(_))));
    let empty = AppearanceSource::ImagePlanes { planes: vec![], density: 1.0 };
    assert!(apply_appearance(&d, &empty).is_err());
}

fn home(chain: &KinematicChain) -> Isometry3<f64> {
    chain.end_effector_pose(chain.q_default()).unwrap()
}

fn pick_keyframes(chain: &KinematicChain) -> Vec<Keyframe> {
    let h = home(chain);
    let pre = h * Isometry3::translation(0.0, 0.0, -0.05);
    let lift = Isometry3::translation(0.0, 0.0, 0.08) * h;
    [(pre, Gripper::Open, KeyframeKind::Start), (h, Gripper::Closed, KeyframeKind::Toggle), (lift, Gripper::Closed, KeyframeKind::End)]
        .into_iter()
        .enumerate()
        .map(|(i, (ee_pose, gripper, kind))| Keyframe {
            source_index: i * 10,
            ee_pose,
            gripper,
            kind,
        })
        .collect()
}

fn asset_with(chain: &KinematicChain, far_score: f64) -> ObjectAsset {
    let h = home(chain);
    ObjectAsset::new(
        "mug",
        blob(0.0, [0.1, 0.8, 0.1]),
        vec![
            GraspCandidate { pose: h, score: 0.5 },
            GraspCandidate {
                pose: Isometry3::translation(3.0, 0.0, 0.0) * h,
                score: far_score,
            },
        ],
    )
    .unwrap()
}

fn binding() -> GraspBinding {
    GraspBinding { grasp: 1, affected: 0..3 }
}

#[test]
fn identity_object_pose_puts_grasp_keyframe_on_the_grasp() {
    let chain = seven_joint_arm();
    let kfs = pick_keyframes(&chain);
    let asset = asset_with(&chain, 0.1);
    let out = swap_object(&kfs, &asset, &Isometry3::identity(), &binding(), &chain, chain.q_default()).unwrap();
    assert_eq!(out.grasp_index, 0);
    assert_eq!(out.keyframes[1].ee_pose, crate::trajectory::fold_pose_yaw(&home(&chain)));
    // The other bound keyframes keep their offsets from the grasp.
    for i in [0, 2] {
        let (dp, _) = crate::geometry::pose_error(&out.keyframes[i].ee_pose, &kfs[i].ee_pose);
        assert!(dp < 1e-12);
    }
    assert_eq!(out.keyframes[1].gripper, Gripper::Closed);
}

#[test]
fn translating_the_object_translates_the_grasp() {
    let chain = seven_joint_arm();
    let kfs = pick_keyframes(&chain);
    let asset = asset_with(&chain, 0.1);
    let t = Vector3::new(0.04, -0.03, 0.0);
    let base = swap_object(&kfs, &asset, &Isometry3::identity(), &binding(), &chain, chain.q_default()).unwrap();
    let moved = swap_object(&kfs, &asset, &Isometry3::translation(t.x, t.y, t.z), &binding(), &chain, chain.q_default()).unwrap();
    for i in 0..3 {
        let d = moved.keyframes[i].ee_pose.translation.vector - base.keyframes[i].ee_pose.translation.vector;
        assert!((d - t).norm() < 1e-12);
    }
    assert!((moved.splat.positions()[0] - (asset.splat.positions()[0] + t)).norm() < 1e-15);
}

#[test]
fn unreachable_best_grasp_falls_back_to_the_next() {
    let chain = seven_joint_arm();
    let kfs = pick_keyframes(&chain);
    let asset = asset_with(&chain, 0.9);
    assert_eq!(asset.ranked_grasps(), [1, 0]);
    let out = swap_object(&kfs, &asset, &Isometry3::identity(), &binding(), &chain, chain.q_default()).unwrap();
    assert_eq!(out.grasp_index, 0);
    let far = ObjectAsset::new("far", asset.splat.clone(), vec![asset.grasps[1].clone()]).unwrap();
    match swap_object(&kfs, &far, &Isometry3::identity(), &binding(), &chain, chain.q_default()) {
        Err(Error::NoFeasibleGrasp { candidates: 1 }) => {}
        other => panic!("unexpected {other:?}"),
    }
    let bad = GraspBinding { grasp: 3, affected: 0..3 };
    assert!(swap_object(&kfs, &asset, &Isometry3::identity(), &bad, &chain, chain.q_default()).is_err());
}

#[test]
fn swap_then_transform_matches_composed_placement() {
    let chain = seven_joint_arm();
    let kfs = pick_keyframes(&chain);
    let asset = asset_with(&chain, 0.1);
    // Turns about the vertical through the grasp keep the poses reachable.
    let c = home(&chain).translation.vector;
    let about = |dx: f64, dy: f64, yaw: f64| {
        planar_transform(c.x + dx, c.y + dy, 0.0) * planar_transform(0.0, 0.0, yaw) * planar_transform(-c.x, -c.y, 0.0)
    };
    let p = about(0.02, 0.01, 0.4);
    let g = about(-0.03, 0.02, 1.3);
    // Keyframes are retargeted without the reachability filter mattering:
    // the grasp is checked on each side separately.
    let seq = swap_object(&kfs, &asset, &p, &binding(), &chain, chain.q_default());
    let direct = swap_object(&kfs, &asset, &(g * p), &binding(), &chain, chain.q_default());
    if let (Ok(seq), Ok(direct)) = (seq, direct) {
        let seq = transform_keyframes(&seq.keyframes, &g, 0..3);
        for (a, b) in seq.iter().zip(&direct.keyframes) {
            let (dp, _) = crate::geometry::pose_error(&a.ee_pose, &b.ee_pose);
            assert!(dp < 1e-9);
            for pose in [a.ee_pose, b.ee_pose] {
                let (_, _, yaw) = crate::geometry::euler_xyz(&pose.rotation);
                assert!(yaw.abs() <= std::f64::consts::FRAC_PI_2 + 1e-12);
            }
            let flip = nalgebra::UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI);
            let dr = a.ee_pose.rotation.angle_to(&b.ee_pose.rotation).min((flip * a.ee_pose.rotation).angle_to(&b.ee_pose.rotation));
            assert!(dr < 1e-9);
        }
    } else {
        panic!("fixture grasps should be reachable");
    }
}

#[test]
fn asset_round_trips_through_directory() {
    let chain = seven_joint_arm();
    let asset = asset_with(&chain, 0.9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mug");
    asset.save_dir(&path).unwrap();
    let back = ObjectAsset::load_dir(&path).unwrap();
    assert_eq!(back.name, "mug");
    assert_eq!(back.grasps.len(), 2);
    assert_eq!(back.grasps[1].score, 0.9);
    assert!(crate::geometry::pose_error(&back.grasps[0].pose, &asset.grasps[0].pose).0 < 1e-15);
    assert!(ObjectAsset::new("x", asset.splat.clone(), vec![]).is_err());
    assert!(ObjectAsset::new("x", GaussianSet::empty(1).unwrap(), asset.grasps.clone()).is_err());
}

fn link_sets(chain: &KinematicChain) -> Vec<GaussianSet> {
    (0..chain.link_count()).map(|i| blob(i as f64 * 0.1, [0.4, 0.4, 0.4])).collect()
}

#[test]
fn same_chain_swap_passes_keyframes_through() {
    let chain = seven_joint_arm();
    let kfs = pick_keyframes(&chain);
    let (out, emb) = swap_embodiment(&kfs, chain.clone(), link_sets(&chain), chain.q_default().to_vec()).unwrap();
    assert_eq!(out, kfs);
    assert_eq!(emb.chain, chain);
}

#[test]
fn six_joint_target_reaches_seven_joint_keyframes() {
    let source = seven_joint_arm();
    let target = six_joint_arm();
    let h = home(&target);
    let kfs: Vec<Keyframe> = pick_keyframes(&source)
        .into_iter()
        .enumerate()
        .map(|(i, k)| Keyframe {
            ee_pose: Isometry3::translation(0.0, 0.0, 0.03 * i as f64) * h,
            ..k
        })
        .collect();
    let (out, emb) = swap_embodiment(&kfs, target.clone(), link_sets(&target), target.q_default().to_vec()).unwrap();
    assert_eq!(out, kfs);
    assert_eq!(emb.chain.dof(), 6);
    let d = emb.install(&small_decomposition_for(&source)).unwrap();
    assert_eq!(d.robot_links.len(), target.link_count());
    assert_eq!(d.q_capture.len(), 6);
    assert!(d.labels.is_empty());
    assert_eq!(d.manifest().links.len(), target.link_count());
}

fn small_decomposition_for(chain: &KinematicChain) -> SceneDecomposition {
    SceneDecomposition {
        link_names: chain.links().to_vec(),
        robot_links: link_sets(chain),
        q_capture: chain.q_default().to_vec(),
        labels: vec![],
        ..small_decomposition()
    }
}

#[test]
fn unreachable_keyframes_are_listed() {
    let chain = six_joint_arm();
    let h = home(&chain);
    let mut kfs = pick_keyframes(&seven_joint_arm());
    kfs[0].ee_pose = h;
    kfs[1].ee_pose = Isometry3::translation(4.0, 0.0, 0.0) * h;
    kfs[2].ee_pose = Isometry3::translation(0.0, 0.0, 0.02) * h;
    match swap_embodiment(&kfs, chain.clone(), link_sets(&chain), chain.q_default().to_vec()) {
        Err(Error::Reachability(f)) => {
            assert_eq!(f.len(), 1);
            assert_eq!(f[0].keyframe, 1);
            assert!(f[0].position_residual > 1.0);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(swap_embodiment(&kfs, chain.clone(), vec![], chain.q_default().to_vec()).is_err());
}
