//! Self-contained synthetic workspace: a seven-joint arm in front of a
//! checkered table with one cube, a pick-and-place demonstration rendered
//! from two cameras, an alternate object, a six-joint embodiment and two
//! appearance sources. Everything is written to disk with a `config.toml`
//! that references it by relative path.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};

use splatgen_core::alignment::{DescentSchedule, ViewRig};
use splatgen_core::augment::{CameraSampler, GraspCandidate, ObjectAsset, Workspace};
use splatgen_core::decompose::{NamedRegion, Region};
use splatgen_core::geometry::pose_to_array;
use splatgen_core::kinematics::{
    arms, link_points_world, sample_cylinder, skeleton_clouds, KinematicChain, LinkPointClouds,
};
use splatgen_core::raster::{render, CameraModel, Image, Intrinsics};
use splatgen_core::splat::save_splat;
use splatgen_core::synthetic::{checker_box, checker_plane, robot_splat, splat_from_points, tabletop_scene, LINK_PALETTE};
use splatgen_core::trajectory::{
    camera_dir_name, frame_name, plan_trajectory, write_states, DemoStep, Gripper, Keyframe, KeyframeKind, PlanOptions, StateRecord,
    STATES_FILE,
};
use splatgen_core::{apply_similarity, merge, Error as CoreError, GaussianSet, SimilarityTransform};

use crate::config::*;
use crate::error::{PipelineError, Result};

pub const CONFIG_FILE: &str = "config.toml";

/// Cube sitting on the table; the task's only target.
pub const CUBE_CENTER: [f64; 3] = [0.45, 0.0, 0.03];
const CUBE_HALF: f64 = 0.025;
/// Tool point sits this far above the grasped object's center.
const GRASP_HEIGHT: f64 = 0.005;

const LINK_RADIUS: f64 = 0.03;
const LINK_SPACING: f64 = 0.03;
const LINK_THRESHOLD: f64 = 0.03;
const SPLAT_RADIUS: f64 = 0.008;

/// Rotation (about z), translation and scale taking the stored scene into
/// the robot base frame.
pub const SCENE_YAW: f64 = 0.3;
pub const SCENE_TRANSLATION: [f64; 3] = [0.1, -0.2, 0.05];
pub const SCENE_SCALE: f64 = 1.25;

/// Demonstration replay speed and the number of frames it rests at each
/// non-toggle waypoint.
const DEMO_LINEAR_SPEED: f64 = 0.2;
const DEMO_REST_FRAMES: usize = 2;

/// Eye and target of each fixture camera. Off-grid values keep depth ties
/// between lattice-aligned Gaussians out of the frames.
pub const CAMERAS: [([f64; 3], [f64; 3]); 2] = [
    ([1.2137, 0.1309, 0.7923], [0.4021, 0.0113, 0.1]),
    ([0.5317, -0.9071, 0.6113], [0.4093, 0.0471, 0.1]),
];

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    /// Square demonstration frame size in pixels.
    pub demo_size: usize,
    /// Square generated frame size in pixels.
    pub image_size: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            demo_size: 64,
            image_size: 64,
            episodes: 4,
            seed: 7,
        }
    }
}

pub fn scene_to_base() -> SimilarityTransform {
    SimilarityTransform::new(
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), SCENE_YAW),
        Vector3::from(SCENE_TRANSLATION),
        SCENE_SCALE,
    )
    .expect("valid constant transform")
}

fn tool_down(chain: &KinematicChain) -> UnitQuaternion<f64> {
    chain.end_effector_pose(chain.q_default()).expect("default configuration is valid").rotation
}

fn pose(rotation: UnitQuaternion<f64>, p: [f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::new(p[0], p[1], p[2]), rotation)
}

fn keyframe(pose: Isometry3<f64>, gripper: Gripper) -> Keyframe {
    Keyframe {
        source_index: 0,
        ee_pose: pose,
        gripper,
        kind: KeyframeKind::Settle,
    }
}

/// Pick the cube, lift, carry and release it, then retreat.
pub fn demo_waypoints(chain: &KinematicChain) -> Vec<Keyframe> {
    let down = tool_down(chain);
    let home = chain.end_effector_pose(chain.q_default()).expect("valid default");
    let [cx, cy, cz] = CUBE_CENTER;
    let grasp_z = cz + GRASP_HEIGHT;
    let (px, py) = (0.4, 0.2);
    vec![
        keyframe(home, Gripper::Open),
        keyframe(pose(down, [cx, cy, 0.15]), Gripper::Open),
        keyframe(pose(down, [cx, cy, grasp_z]), Gripper::Closed),
        keyframe(pose(down, [cx, cy, 0.2]), Gripper::Closed),
        keyframe(pose(down, [px, py, 0.15]), Gripper::Closed),
        keyframe(pose(down, [px, py, grasp_z + 0.02]), Gripper::Open),
        keyframe(pose(down, [px, py, 0.25]), Gripper::Open),
    ]
}

/// Planned demo with extra rest frames at waypoints that do not toggle the
/// gripper, so keyframe extraction recovers every waypoint.
pub fn demo_steps(chain: &KinematicChain) -> Result<Vec<DemoStep>> {
    let wps = demo_waypoints(chain);
    let opts = PlanOptions {
        max_linear_speed: DEMO_LINEAR_SPEED,
        ..PlanOptions::default()
    };
    let traj = plan_trajectory(chain, &wps, chain.q_default(), &opts)?;
    let mut steps = Vec::new();
    for (k, s) in traj.steps.iter().enumerate() {
        steps.push(s.clone());
        let resting = traj.keyframe_steps[1..wps.len() - 1]
            .iter()
            .position(|&ks| ks == k)
            .is_some_and(|i| wps[i + 1].gripper == wps[i].gripper);
        if resting {
            steps.extend(std::iter::repeat_n(s.clone(), DEMO_REST_FRAMES));
        }
    }
    Ok(steps
        .into_iter()
        .enumerate()
        .map(|(k, s)| DemoStep {
            timestamp: k as f64 / opts.rate_hz,
            q: s.q,
            gripper: s.gripper,
            ee_pose: s.ee_pose,
        })
        .collect())
}

pub fn table() -> Result<GaussianSet> {
    Ok(checker_plane(
        &Vector3::new(0.45, 0.0, 0.0),
        0.3,
        0.3,
        0.025,
        0.075,
        [[0.9, 0.88, 0.8], [0.2, 0.22, 0.28]],
        0,
    )?)
}

pub fn cube() -> Result<GaussianSet> {
    Ok(checker_box(
        &Vector3::from(CUBE_CENTER),
        &Vector3::repeat(CUBE_HALF),
        0.0125,
        [[0.85, 0.15, 0.1], [0.95, 0.75, 0.1]],
        0,
    )?)
}

pub fn cube_region() -> NamedRegion {
    let [x, y, z] = CUBE_CENTER;
    let h = CUBE_HALF + 0.01;
    NamedRegion {
        name: "cube".into(),
        region: Region::Box {
            min: [x - h, y - h, z - CUBE_HALF - 0.002],
            max: [x + h, y + h, z + h],
        },
    }
}

fn base_camera(size: usize, i: usize) -> CameraModel {
    let (eye, target) = CAMERAS[i];
    CameraModel::look_at(Intrinsics::from_fov(size, size, 60.0), &Point3::from(eye), &Point3::from(target), &Vector3::z())
        .expect("fixture cameras are valid")
}

fn sampler(i: usize) -> CameraSampler {
    let (eye, target) = CAMERAS[i];
    let d = Vector3::from(eye) - Vector3::from(target);
    let radius = d.norm();
    CameraSampler {
        target,
        target_half_range: [0.03; 3],
        radius,
        polar: (d.z / radius).acos(),
        azimuth: d.y.atan2(d.x),
        radius_half_range: 0.1,
        polar_half_range: 0.1,
        azimuth_half_range: 0.2,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| PipelineError::io(path, e))
}

fn robot_config(urdf: &str, chain: &KinematicChain) -> RobotConfig {
    RobotConfig {
        urdf: urdf.into(),
        ee_link: Some(chain.links()[chain.ee_link()].clone()),
        tool_offset: Some(pose_to_array(chain.tool_offset())),
        q_default: Some(chain.q_default().to_vec()),
    }
}

/// Per-link splats of `chain` at its default configuration, in the base frame.
fn link_splats(chain: &KinematicChain, clouds: &LinkPointClouds) -> Result<Vec<GaussianSet>> {
    let per_link = link_points_world(chain, chain.q_default(), clouds)?;
    Ok(per_link
        .iter()
        .enumerate()
        .map(|(l, pts)| splat_from_points(pts, SPLAT_RADIUS, 0.99, LINK_PALETTE[l % LINK_PALETTE.len()], 0))
        .collect::<splatgen_core::Result<Vec<_>>>()?)
}

/// Upright can with two top-down grasps, origin at its center.
pub fn can_asset(chain: &KinematicChain) -> Result<ObjectAsset> {
    let (radius, height) = (0.025, 0.05);
    let mut pts = sample_cylinder(radius, height, 0.01);
    pts.extend(sample_cylinder(0.6 * radius, 0.0, 0.01));
    pts.extend(sample_cylinder(0.6 * radius, 0.0, 0.01).into_iter().map(|p| p + Vector3::new(0.0, 0.0, height)));
    let centered: Vec<Point3<f64>> = pts.into_iter().map(|p| p - Vector3::new(0.0, 0.0, height / 2.0)).collect();
    let splat = splat_from_points(&centered, 0.007, 0.95, [0.2, 0.6, 0.9], 0)?;
    let down = tool_down(chain);
    let turned = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2) * down;
    let grasps = vec![
        GraspCandidate {
            pose: pose(down, [0.0, 0.0, GRASP_HEIGHT]),
            score: 0.9,
        },
        GraspCandidate {
            pose: pose(turned, [0.0, 0.0, GRASP_HEIGHT]),
            score: 0.6,
        },
    ];
    Ok(ObjectAsset::new("can", splat, grasps)?)
}

fn stripes(size: usize) -> Result<Image> {
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let c = if ((x + y) / 4) % 2 == 0 { [0.15, 0.3, 0.75] } else { [0.9, 0.8, 0.3] };
            data.extend_from_slice(&c);
        }
    }
    Ok(Image::from_data(size, size, 3, data)?)
}

/// Writes the whole fixture under `dir` and returns the path of its config.
pub fn write_fixture(dir: &Path, opts: &FixtureOptions) -> Result<PathBuf> {
    mkdir(dir)?;
    let chain = arms::seven_joint_arm();
    write_text(&dir.join("robot.urdf"), arms::SEVEN_JOINT_URDF)?;
    let clouds = skeleton_clouds(&chain, LINK_RADIUS, LINK_SPACING, LINK_THRESHOLD)?;
    clouds.save_dir(dir.join("clouds"))?;

    let statics = merge([&table()?, &cube()?])?;
    let robot_home = robot_splat(&chain, &clouds, chain.q_default(), SPLAT_RADIUS, 0.99, 0)?;
    let scene_base = merge([&robot_home, &statics])?;
    save_splat(&apply_similarity(&scene_base, &scene_to_base().inverse()), dir.join("scene.ply"))?;

    let steps = demo_steps(&chain)?;
    if steps.first().map(|s| s.q.as_slice()) != Some(chain.q_default()) {
        return Err(CoreError::InvalidArgument("demonstration must start at the capture configuration".into()).into());
    }
    let demo_dir = dir.join("demo");
    mkdir(&demo_dir)?;
    let records: Vec<StateRecord> = steps.iter().map(|s| StateRecord::from_step(s, None)).collect();
    write_states(&demo_dir.join(STATES_FILE), &records)?;
    for i in 0..CAMERAS.len() {
        let cam_dir = demo_dir.join(camera_dir_name(i));
        mkdir(&cam_dir)?;
        let cam = base_camera(opts.demo_size, i);
        for (k, s) in steps.iter().enumerate() {
            let robot = robot_splat(&chain, &clouds, &s.q, SPLAT_RADIUS, 0.99, 0)?;
            let scene = merge([&robot, &statics])?;
            render(&scene, &cam, [0.0; 3]).pixels.save_png(cam_dir.join(frame_name(k)))?;
        }
    }

    can_asset(&chain)?.save_dir(dir.join("assets/can"))?;

    let six = arms::six_joint_arm();
    write_text(&dir.join("six_joint.urdf"), arms::SIX_JOINT_URDF)?;
    let six_clouds = skeleton_clouds(&six, LINK_RADIUS, LINK_SPACING, LINK_THRESHOLD)?;
    let links_dir = dir.join("embodiments/six_joint");
    mkdir(&links_dir)?;
    for (name, set) in six.links().iter().zip(link_splats(&six, &six_clouds)?) {
        save_splat(&set, links_dir.join(format!("link_{name}.ply")))?;
    }

    mkdir(&dir.join("backgrounds"))?;
    stripes(16)?.save_png(dir.join("backgrounds/stripes.png"))?;
    save_splat(&tabletop_scene(0)?, dir.join("backgrounds/tabletop.ply"))?;

    let config = fixture_config(&chain, &six, opts);
    let path = dir.join(CONFIG_FILE);
    write_text(&path, &config.to_string())?;
    Ok(path)
}

/// The fixture's config with paths relative to the fixture folder.
pub fn fixture_config(chain: &KinematicChain, six: &KinematicChain, opts: &FixtureOptions) -> GenerationConfig {
    let t = scene_to_base();
    let q = t.rotation.quaternion();
    let [cx, cy, _] = CUBE_CENTER;
    GenerationConfig {
        assets: AssetsConfig {
            scene: "scene.ply".into(),
            robot: robot_config("robot.urdf", chain),
            clouds: "clouds".into(),
            demo: "demo".into(),
            cache_dir: Some("cache".into()),
        },
        alignment: AlignmentConfig {
            method: AlignmentMethod::Fixed,
            transform: TransformConfig {
                rotation_wxyz: [q.w, q.i, q.j, q.k],
                translation: t.translation.into(),
                scale: t.scale,
            },
            robot_region: None,
            skip_icp: false,
            rig: ViewRig::default(),
            schedule: DescentSchedule::default(),
        },
        decomposition: DecompositionConfig {
            link_threshold: LINK_THRESHOLD,
            objects: vec![cube_region()],
        },
        task: TaskConfig {
            targets: vec![TargetConfig {
                object: "cube".into(),
                keyframes: [1, 3],
                grasp_keyframe: 2,
                workspace: Workspace {
                    x: [cx - 0.07, cx + 0.07],
                    y: [cy - 0.08, cy + 0.08],
                    yaw: [-0.5, 0.5],
                },
                clearance: 0.05,
            }],
            ..TaskConfig::default()
        },
        generation: GenerationSection {
            episodes: opts.episodes,
            seed: opts.seed,
            workers: 1,
            image_width: opts.image_size,
            image_height: opts.image_size,
            max_retries: 20,
            background: [0.0; 3],
        },
        planning: PlanOptions {
            max_linear_speed: DEMO_LINEAR_SPEED,
            ..PlanOptions::default()
        },
        cameras: (0..CAMERAS.len())
            .map(|i| CameraConfig {
                fov_deg: 60.0,
                eye: CAMERAS[i].0,
                target: CAMERAS[i].1,
                estimate_from_demo: false,
                sampler: Some(sampler(i)),
            })
            .collect(),
        augment: AugmentConfig {
            object_pose: Switch { enabled: true },
            object_type: ObjectTypeConfig {
                enabled: false,
                assets: vec!["assets/can".into()],
                target: Some("cube".into()),
            },
            camera: Switch { enabled: true },
            embodiment: EmbodimentConfig {
                enabled: false,
                robots: vec![EmbodimentEntry {
                    name: "six_joint".into(),
                    robot: robot_config("six_joint.urdf", six),
                    links: "embodiments/six_joint".into(),
                    q_capture: None,
                }],
            },
            appearance: AppearanceConfig {
                enabled: true,
                sources: vec![
                    AppearanceSourceConfig::ImagePlanes {
                        planes: vec![
                            PlaneConfig {
                                image: "backgrounds/stripes.png".into(),
                                origin: [0.15, -0.3, 0.0],
                                u_edge: [0.6, 0.0, 0.0],
                                v_edge: [0.0, 0.6, 0.0],
                            },
                            PlaneConfig {
                                image: "backgrounds/stripes.png".into(),
                                origin: [-0.3, -0.6, 0.0],
                                u_edge: [0.0, 1.2, 0.0],
                                v_edge: [0.0, 0.0, 0.8],
                            },
                        ],
                        density: 0.1,
                    },
                    AppearanceSourceConfig::SplatScene {
                        scene: "backgrounds/tabletop.ply".into(),
                        placement: TransformConfig {
                            translation: [0.45, 0.0, 0.0],
                            ..TransformConfig::default()
                        },
                    },
                ],
            },
            lighting: Switch { enabled: true },
        },
    }
}

/// Loads, resolves and validates the fixture config at `path`.
pub fn load_fixture_config(path: &Path) -> Result<GenerationConfig> {
    crate::config::validate_config(path)
}
