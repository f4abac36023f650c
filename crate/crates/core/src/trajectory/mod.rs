//! Keyframes from a demonstration, their object-relative transformation,
//! straight-line planning between them, and relative-pose actions.

mod demo;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::Range;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub use demo::{camera_dir_name, frame_name, read_states, write_states, DemoStep, ExpertDemo, StateRecord, STATES_FILE};

use crate::error::{Error, Result};
use crate::geometry::{euler_xyz, from_euler_xyz, so3_exp, so3_log};
use crate::kinematics::KinematicChain;

/// Joint speed (rad/s) below which the arm counts as settled.
pub const DEFAULT_VELOCITY_EPSILON: f64 = 0.02;

/// Slack on the step-count ceiling so exact multiples of the step length do
/// not gain a step from rounding.
const STEP_ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gripper {
    Open,
    Closed,
}

/// Ordered by precedence when two rules pick the same timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyframeKind {
    Settle,
    End,
    Toggle,
    Start,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub source_index: usize,
    pub ee_pose: Isometry3<f64>,
    pub gripper: Gripper,
    pub kind: KeyframeKind,
}

/// Keyframes at the first and last step, at every gripper toggle, and at the
/// midpoint of every maximal run whose max-abs joint speed is below
/// `vel_eps`. A step's speed is the larger of its backward and forward
/// differences, so a run covers exactly the frames that do not move.
///
/// A run that touches the first or last step is represented by that endpoint,
/// and a run within one step of a toggle is represented by the toggle. This
/// keeps dwells around grasps and trailing idle frames from adding keyframes.
pub fn extract_keyframes(demo: &ExpertDemo, vel_eps: f64) -> Vec<Keyframe> {
    let steps = demo.steps();
    let n = steps.len();
    let mut picked: BTreeMap<usize, KeyframeKind> = BTreeMap::new();
    let mut pick = |k: usize, kind: KeyframeKind| {
        let e = picked.entry(k).or_insert(kind);
        *e = (*e).max(kind);
    };
    pick(0, KeyframeKind::Start);
    if n == 1 {
        return build(steps, &picked);
    }
    pick(n - 1, KeyframeKind::End);

    let toggles: Vec<usize> = (1..n).filter(|&k| steps[k].gripper != steps[k - 1].gripper).collect();
    for &k in &toggles {
        pick(k, KeyframeKind::Toggle);
    }

    let rate = demo.rate_hz().unwrap_or(1.0);
    let jump = |a: usize, b: usize| -> f64 {
        steps[b].q.iter().zip(&steps[a].q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) * rate
    };
    let speed = |k: usize| -> f64 {
        let back = if k > 0 { jump(k - 1, k) } else { 0.0 };
        let fwd = if k + 1 < n { jump(k, k + 1) } else { 0.0 };
        back.max(fwd)
    };
    let slow: Vec<bool> = (0..n).map(|k| speed(k) < vel_eps).collect();
    let mut k = 0;
    while k < n {
        if !slow[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k + 1 < n && slow[k + 1] {
            k += 1;
        }
        let end = k;
        k += 1;
        let at_endpoint = start == 0 || end == n - 1;
        let near_toggle = toggles.iter().any(|&t| t + 1 >= start && t <= end + 1);
        if !at_endpoint && !near_toggle {
            pick((start + end) / 2, KeyframeKind::Settle);
        }
    }
    build(steps, &picked)
}

fn build(steps: &[DemoStep], picked: &BTreeMap<usize, KeyframeKind>) -> Vec<Keyframe> {
    picked
        .iter()
        .map(|(&k, &kind)| Keyframe {
            source_index: k,
            ee_pose: steps[k].ee_pose,
            gripper: steps[k].gripper,
            kind,
        })
        .collect()
}

/// Maps a yaw angle into `[-pi/2, pi/2]` using the half-turn symmetry of a
/// parallel gripper. Inputs are first wrapped to `(-pi, pi]`. Idempotent.
pub fn fold_gripper_yaw(yaw: f64) -> f64 {
    let mut r = yaw;
    if !(r > -PI && r <= PI) {
        r = r.rem_euclid(TAU);
        if r > PI {
            r -= TAU;
        }
    }
    if r < -FRAC_PI_2 {
        r + PI
    } else if r > FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

/// Replaces the yaw of the extrinsic XYZ Euler decomposition by its fold.
pub fn fold_pose_yaw(pose: &Isometry3<f64>) -> Isometry3<f64> {
    let (rx, ry, rz) = euler_xyz(&pose.rotation);
    Isometry3::from_parts(pose.translation, from_euler_xyz(rx, ry, fold_gripper_yaw(rz)))
}

/// Applies `g` to the keyframes at positions `affected` (clipped to the
/// list) and folds their yaw. Other keyframes are copied. The identity
/// leaves every keyframe bitwise unchanged.
pub fn transform_keyframes(kfs: &[Keyframe], g: &Isometry3<f64>, affected: Range<usize>) -> Vec<Keyframe> {
    if *g == Isometry3::identity() {
        return kfs.to_vec();
    }
    kfs.iter()
        .enumerate()
        .map(|(i, kf)| {
            if affected.contains(&i) {
                Keyframe {
                    ee_pose: fold_pose_yaw(&(g * kf.ee_pose)),
                    ..kf.clone()
                }
            } else {
                kf.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOptions {
    pub rate_hz: f64,
    /// End-effector speed caps, m/s and rad/s.
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    /// Extra steps held at the pose where the gripper changes state.
    pub toggle_dwell: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            rate_hz: 10.0,
            max_linear_speed: 0.1,
            max_angular_speed: 0.5,
            toggle_dwell: 3,
        }
    }
}

impl PlanOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rate_hz", self.rate_hz),
            ("max_linear_speed", self.max_linear_speed),
            ("max_angular_speed", self.max_angular_speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub q: Vec<f64>,
    /// Commanded pose; forward kinematics of `q` matches it within the IK
    /// tolerance.
    pub ee_pose: Isometry3<f64>,
    pub gripper: Gripper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory {
    pub rate_hz: f64,
    pub steps: Vec<PlanStep>,
    /// Step index at which each keyframe is reached, increasing.
    pub keyframe_steps: Vec<usize>,
}

impl PlannedTrajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps as demonstration records with timestamps `k / rate`.
    pub fn demo_steps(&self) -> Vec<DemoStep> {
        self.steps
            .iter()
            .enumerate()
            .map(|(k, s)| DemoStep {
                timestamp: k as f64 / self.rate_hz,
                q: s.q.clone(),
                gripper: s.gripper,
                ee_pose: s.ee_pose,
            })
            .collect()
    }
}

/// Number of steps from `a` to `b` so that neither speed cap is exceeded;
/// at least one.
pub fn segment_steps(a: &Isometry3<f64>, b: &Isometry3<f64>, opts: &PlanOptions) -> usize {
    let dist = (b.translation.vector - a.translation.vector).norm();
    let angle = so3_log(&(a.rotation.inverse() * b.rotation)).norm();
    let by_dist = (dist / (opts.max_linear_speed / opts.rate_hz) - STEP_ROUNDING_SLACK).ceil();
    let by_angle = (angle / (opts.max_angular_speed / opts.rate_hz) - STEP_ROUNDING_SLACK).ceil();
    by_dist.max(by_angle).max(1.0) as usize
}

/// Pose at fraction `s` of the straight line from `a` to `b`, rotating along
/// the shorter geodesic.
pub fn interpolate_pose(a: &Isometry3<f64>, b: &Isometry3<f64>, s: f64) -> Isometry3<f64> {
    let p = a.translation.vector.lerp(&b.translation.vector, s);
    let w = so3_log(&(a.rotation.inverse() * b.rotation));
    Isometry3::from_parts(Translation3::from(p), a.rotation * so3_exp(&(w * s)))
}

/// Steps after `kf_a` up to and including `kf_b`, each solved by IK seeded
/// with the previous solution (starting from `q_a`). The last step commands
/// `kf_b.ee_pose` exactly and adopts `kf_b`'s gripper state.
pub fn plan_between(
    chain: &KinematicChain,
    kf_a: &Keyframe,
    kf_b: &Keyframe,
    q_a: &[f64],
    opts: &PlanOptions,
) -> Result<Vec<PlanStep>> {
    opts.validate()?;
    let n = segment_steps(&kf_a.ee_pose, &kf_b.ee_pose, opts);
    let mut q = q_a.to_vec();
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let pose = if i == n {
            kf_b.ee_pose
        } else {
            interpolate_pose(&kf_a.ee_pose, &kf_b.ee_pose, i as f64 / n as f64)
        };
        q = chain.inverse_kinematics(&pose, &q).map_err(|e| Error::PlanningFailed {
            step: i,
            reason: e.to_string(),
        })?;
        out.push(PlanStep {
            q: q.clone(),
            ee_pose: pose,
            gripper: if i == n { kf_b.gripper } else { kf_a.gripper },
        });
    }
    Ok(out)
}

/// Full trajectory through `kfs`. The first step solves IK for the first
/// keyframe from `q_start`; after every keyframe whose gripper state differs
/// from the previous one the pose is held for `toggle_dwell` steps. Failure
/// step indices are global.
pub fn plan_trajectory(
    chain: &KinematicChain,
    kfs: &[Keyframe],
    q_start: &[f64],
    opts: &PlanOptions,
) -> Result<PlannedTrajectory> {
    opts.validate()?;
    let Some(first) = kfs.first() else {
        return Err(Error::invalid("cannot plan through zero keyframes"));
    };
    let q0 = chain
        .inverse_kinematics(&first.ee_pose, q_start)
        .map_err(|e| Error::PlanningFailed {
            step: 0,
            reason: e.to_string(),
        })?;
    let mut steps = vec![PlanStep {
        q: q0,
        ee_pose: first.ee_pose,
        gripper: first.gripper,
    }];
    let mut keyframe_steps = vec![0];
    for w in kfs.windows(2) {
        let offset = steps.len() - 1;
        let q_prev = steps[offset].q.clone();
        let segment = plan_between(chain, &w[0], &w[1], &q_prev, opts).map_err(|e| match e {
            Error::PlanningFailed { step, reason } => Error::PlanningFailed {
                step: offset + step,
                reason,
            },
            other => other,
        })?;
        steps.extend(segment);
        keyframe_steps.push(steps.len() - 1);
        if w[1].gripper != w[0].gripper {
            let hold = steps[steps.len() - 1].clone();
            steps.extend(std::iter::repeat_n(hold, opts.toggle_dwell));
        }
    }
    Ok(PlannedTrajectory {
        rate_hz: opts.rate_hz,
        steps,
        keyframe_steps,
    })
}

/// Relative end-effector motion `T_k^-1 T_{k+1}` in the frame of `T_k`, and
/// the gripper command for step `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub translation: [f64; 3],
    /// Axis-angle rotation vector, angle in `[0, pi]`.
    pub rotation: [f64; 3],
    pub gripper: Gripper,
}

impl Action {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.translation)),
            so3_exp(&Vector3::from(self.rotation)),
        )
    }

    /// Zero motion holding `gripper`.
    pub fn hold(gripper: Gripper) -> Self {
        Self {
            translation: [0.0; 3],
            rotation: [0.0; 3],
            gripper,
        }
    }
}

/// One action per consecutive pair of steps; empty below two steps.
pub fn derive_actions(traj: &PlannedTrajectory) -> Vec<Action> {
    traj.steps
        .windows(2)
        .map(|w| {
            let rel = w[0].ee_pose.inverse() * w[1].ee_pose;
            let t = rel.translation.vector;
            let r = so3_log(&rel.rotation);
            Action {
                translation: [t.x, t.y, t.z],
                rotation: [r.x, r.y, r.z],
                gripper: w[1].gripper,
            }
        })
        .collect()
}

/// Left fold of `start` with every action.
pub fn compose_actions(start: &Isometry3<f64>, actions: &[Action]) -> Isometry3<f64> {
    actions.iter().fold(*start, |t, a| t * a.to_isometry())
}

/// Rotation about +z by `yaw` followed by a translation in the xy-plane.
pub fn planar_transform(x: f64, y: f64, yaw: f64) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::new(x, y, 0.0), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw))
}
