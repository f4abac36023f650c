//! Kinematic chains: URDF subset parsing, forward kinematics, damped
//! least-squares inverse kinematics and per-link point clouds.

pub mod arms;
mod clouds;

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector, Isometry3, Matrix6, Translation3, Unit, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{from_euler_xyz, pose_error, so3_log};

pub use clouds::{link_points_world, sample_box, sample_cylinder, sample_sphere, skeleton_clouds, LinkPointClouds};

/// Converged solutions must be at least this close to the target.
pub const IK_POSITION_TOLERANCE: f64 = 1e-3;
/// 0.5 degrees.
pub const IK_ORIENTATION_TOLERANCE: f64 = 0.5 * std::f64::consts::PI / 180.0;
const IK_DAMPING: f64 = 1e-3;
const IK_MAX_ITERATIONS: usize = 200;
const IK_INNER_TOLERANCE: f64 = 1e-9;
const IK_MAX_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    pub kind: JointKind,
    /// Child frame at zero motion, relative to the parent link frame.
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub limits: (f64, f64),
    /// Position in the configuration vector; `None` for fixed joints.
    pub q_index: Option<usize>,
}

impl Joint {
    fn motion(&self, q: f64) -> Isometry3<f64> {
        match self.kind {
            JointKind::Revolute => Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&self.axis, q)),
            JointKind::Prismatic => Isometry3::from_parts(Translation3::from(self.axis.into_inner() * q), UnitQuaternion::identity()),
            JointKind::Fixed => Isometry3::identity(),
        }
    }
}

/// Tree of links and joints plus the end-effector description.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    links: Vec<String>,
    joints: Vec<Joint>,
    parent_joint: Vec<Option<usize>>,
    /// Joints in root-to-leaf order.
    order: Vec<usize>,
    root: usize,
    dof: usize,
    q_default: Vec<f64>,
    ee_link: usize,
    tool_offset: Isometry3<f64>,
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, name: &str, ctx: &str) -> Result<&'a str> {
    node.attribute(name)
        .ok_or_else(|| Error::format("urdf", format!("{ctx}: missing attribute '{name}'")))
}

fn parse_vec3(text: Option<&str>, default: Vector3<f64>, ctx: &str) -> Result<Vector3<f64>> {
    let Some(text) = text else {
        return Ok(default);
    };
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format("urdf", format!("{ctx}: cannot parse '{text}'")))?;
    if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("urdf", format!("{ctx}: expected 3 finite numbers, got '{text}'")));
    }
    Ok(Vector3::new(vals[0], vals[1], vals[2]))
}

/// Parses the URDF subset: links and revolute/continuous/prismatic/fixed
/// joints. Continuous joints become revolute on `[-pi, pi]`.
pub fn parse_chain(document: &str) -> Result<KinematicChain> {
    let doc = roxmltree::Document::parse(document).map_err(|e| Error::format("urdf", e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(Error::format("urdf", "root element is not <robot>"));
    }
    let mut links = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for node in robot.children().filter(|n| n.has_tag_name("link")) {
        let name = attr(node, "name", "link")?.to_string();
        if index.insert(name.clone(), links.len()).is_some() {
            return Err(Error::Structure(format!("duplicate link '{name}'")));
        }
        links.push(name);
    }
    if links.is_empty() {
        return Err(Error::Structure("no links".into()));
    }
    let mut joints = Vec::new();
    let mut dof = 0;
    for node in robot.children().filter(|n| n.has_tag_name("joint")) {
        let name = attr(node, "name", "joint")?.to_string();
        let ty = attr(node, "type", &name)?;
        let kind = match ty {
            "revolute" | "continuous" => JointKind::Revolute,
            "prismatic" => JointKind::Prismatic,
            "fixed" => JointKind::Fixed,
            other => {
                return Err(Error::format("urdf", format!("joint '{name}': unsupported type '{other}'")));
            }
        };
        let link_ref = |tag: &str| -> Result<usize> {
            let child = node
                .children()
                .find(|n| n.has_tag_name(tag))
                .ok_or_else(|| Error::format("urdf", format!("joint '{name}': missing <{tag}>")))?;
            let link = attr(child, "link", &name)?;
            index
                .get(link)
                .copied()
                .ok_or_else(|| Error::Structure(format!("joint '{name}' references unknown link '{link}'")))
        };
        let parent = link_ref("parent")?;
        let child = link_ref("child")?;
        let origin_node = node.children().find(|n| n.has_tag_name("origin"));
        let xyz = parse_vec3(origin_node.and_then(|n| n.attribute("xyz")), Vector3::zeros(), &name)?;
        let rpy = parse_vec3(origin_node.and_then(|n| n.attribute("rpy")), Vector3::zeros(), &name)?;
        let origin = Isometry3::from_parts(Translation3::from(xyz), from_euler_xyz(rpy.x, rpy.y, rpy.z));
        let axis_raw = parse_vec3(
            node.children().find(|n| n.has_tag_name("axis")).and_then(|n| n.attribute("xyz")),
            Vector3::x(),
            &name,
        )?;
        let axis = Unit::try_new(axis_raw, 1e-12)
            .ok_or_else(|| Error::format("urdf", format!("joint '{name}': zero axis")))?;
        let limits = match (ty, kind) {
            ("continuous", _) => (-std::f64::consts::PI, std::f64::consts::PI),
            (_, JointKind::Fixed) => (0.0, 0.0),
            _ => {
                let limit = node
                    .children()
                    .find(|n| n.has_tag_name("limit"))
                    .ok_or_else(|| Error::format("urdf", format!("joint '{name}': missing <limit>")))?;
                let num = |a: &str| -> Result<f64> {
                    attr(limit, a, &name)?
                        .parse::<f64>()
                        .map_err(|_| Error::format("urdf", format!("joint '{name}': bad limit '{a}'")))
                };
                let (lo, hi) = (num("lower")?, num("upper")?);
                if !(lo <= hi) {
                    return Err(Error::format("urdf", format!("joint '{name}': lower limit exceeds upper")));
                }
                (lo, hi)
            }
        };
        let q_index = (kind != JointKind::Fixed).then(|| {
            dof += 1;
            dof - 1
        });
        joints.push(Joint {
            name,
            parent,
            child,
            kind,
            origin,
            axis,
            limits,
            q_index,
        });
    }
    KinematicChain::from_parts(links, joints, dof)
}

impl KinematicChain {
    fn from_parts(links: Vec<String>, joints: Vec<Joint>, dof: usize) -> Result<Self> {
        let mut parent_joint = vec![None; links.len()];
        for (j, joint) in joints.iter().enumerate() {
            if parent_joint[joint.child].replace(j).is_some() {
                return Err(Error::Structure(format!("link '{}' has more than one parent joint", links[joint.child])));
            }
        }
        let roots: Vec<usize> = (0..links.len()).filter(|&l| parent_joint[l].is_none()).collect();
        if roots.len() != 1 {
            let names: Vec<&str> = roots.iter().map(|&r| links[r].as_str()).collect();
            return Err(Error::Structure(format!("expected exactly one root link, found {names:?}")));
        }
        let root = roots[0];
        let mut order = Vec::with_capacity(joints.len());
        let mut queue = VecDeque::from([root]);
        let mut seen = vec![false; links.len()];
        seen[root] = true;
        while let Some(link) = queue.pop_front() {
            for (j, joint) in joints.iter().enumerate().filter(|(_, jt)| jt.parent == link) {
                if seen[joint.child] {
                    return Err(Error::Structure(format!("cycle through joint '{}'", joint.name)));
                }
                seen[joint.child] = true;
                order.push(j);
                queue.push_back(joint.child);
            }
        }
        if let Some(l) = seen.iter().position(|s| !s) {
            return Err(Error::Structure(format!("link '{}' is not connected to the root", links[l])));
        }
        let mut chain = Self {
            ee_link: order.last().map_or(root, |&j| joints[j].child),
            links,
            joints,
            parent_joint,
            order,
            root,
            dof,
            q_default: Vec::new(),
            tool_offset: Isometry3::identity(),
        };
        chain.q_default = chain.joints_in_q_order().map(|j| 0.0f64.clamp(j.limits.0, j.limits.1)).collect();
        Ok(chain)
    }

    /// Sets the end-effector link and the tool frame relative to it.
    pub fn with_end_effector(mut self, ee_link: &str, tool_offset: Isometry3<f64>) -> Result<Self> {
        self.ee_link = self.link_index(ee_link)?;
        self.tool_offset = tool_offset;
        Ok(self)
    }

    pub fn with_default_configuration(mut self, q: &[f64]) -> Result<Self> {
        self.check_dim(q)?;
        for (j, v) in self.joints_in_q_order().zip(q) {
            if !(j.limits.0..=j.limits.1).contains(v) {
                return Err(Error::invalid(format!("default value {v} outside limits of joint '{}'", j.name)));
            }
        }
        self.q_default = q.to_vec();
        Ok(self)
    }

    pub fn links(&self) -> &[String] {
        &self.links
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn q_default(&self) -> &[f64] {
        &self.q_default
    }

    pub fn ee_link(&self) -> usize {
        self.ee_link
    }

    pub fn tool_offset(&self) -> &Isometry3<f64> {
        &self.tool_offset
    }

    pub fn link_index(&self, name: &str) -> Result<usize> {
        self.links
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::invalid(format!("unknown link '{name}'")))
    }

    /// Actuated joints ordered by configuration index.
    pub fn joints_in_q_order(&self) -> impl Iterator<Item = &Joint> {
        let mut v: Vec<&Joint> = self.joints.iter().filter(|j| j.q_index.is_some()).collect();
        v.sort_by_key(|j| j.q_index);
        v.into_iter()
    }

    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.joints_in_q_order().map(|j| j.limits).collect()
    }

    /// Clamps every entry into its joint limits.
    pub fn clamp(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(self.joints_in_q_order()) {
            *v = v.clamp(j.limits.0, j.limits.1);
        }
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof {
            return Err(Error::invalid(format!("configuration has {} entries, chain has {} joints", q.len(), self.dof)));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("configuration contains non-finite values"));
        }
        Ok(())
    }

    /// Base-frame transform of every link, indexed like [`Self::links`].
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Vec<Isometry3<f64>>> {
        self.check_dim(q)?;
        for j in self.joints_in_q_order() {
            let v = q[j.q_index.unwrap()];
            if !(j.limits.0 - 1e-9..=j.limits.1 + 1e-9).contains(&v) {
                log::warn!("joint '{}' value {v} outside limits {:?}", j.name, j.limits);
            }
        }
        Ok(self.fk_unchecked(q).0)
    }

    /// Link poses and, per joint, the joint frame before its motion.
    fn fk_unchecked(&self, q: &[f64]) -> (Vec<Isometry3<f64>>, Vec<Isometry3<f64>>) {
        let mut poses = vec![Isometry3::identity(); self.links.len()];
        let mut frames = vec![Isometry3::identity(); self.joints.len()];
        for &j in &self.order {
            let joint = &self.joints[j];
            let frame = poses[joint.parent] * joint.origin;
            let value = joint.q_index.map_or(0.0, |i| q[i]);
            poses[joint.child] = frame * joint.motion(value);
            frames[j] = frame;
        }
        (poses, frames)
    }

    /// Tool pose in the base frame: `FK(ee_link) * tool_offset`.
    pub fn end_effector_pose(&self, q: &[f64]) -> Result<Isometry3<f64>> {
        self.check_dim(q)?;
        Ok(self.fk_unchecked(q).0[self.ee_link] * self.tool_offset)
    }

    /// Joints between the root and `link`, root first.
    pub fn ancestor_joints(&self, link: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = link;
        while let Some(j) = self.parent_joint[cur] {
            out.push(j);
            cur = self.joints[j].parent;
        }
        out.reverse();
        out
    }

    /// Geometric Jacobian of the tool frame, rows `[linear; angular]`.
    fn jacobian(&self, frames: &[Isometry3<f64>], tool: &Isometry3<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(6, self.dof);
        let p = tool.translation.vector;
        for j in self.ancestor_joints(self.ee_link) {
            let joint = &self.joints[j];
            let Some(col) = joint.q_index else { continue };
            let axis = frames[j].rotation * joint.axis.into_inner();
            let (lin, ang) = match joint.kind {
                JointKind::Revolute => (axis.cross(&(p - frames[j].translation.vector)), axis),
                JointKind::Prismatic => (axis, Vector3::zeros()),
                JointKind::Fixed => continue,
            };
            jac.fixed_view_mut::<3, 1>(0, col).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, col).copy_from(&ang);
        }
        jac
    }

    /// Damped least squares on the 6-D pose error, clamped to the joint
    /// limits after every update.
    pub fn inverse_kinematics(&self, target: &Isometry3<f64>, q_seed: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(q_seed)?;
        if !target.translation.vector.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("IK target must be finite"));
        }
        let mut q = q_seed.to_vec();
        self.clamp(&mut q);
        let mut best = (f64::INFINITY, q.clone(), (f64::INFINITY, f64::INFINITY));
        for _ in 0..=IK_MAX_ITERATIONS {
            let (poses, frames) = self.fk_unchecked(&q);
            let tool = poses[self.ee_link] * self.tool_offset;
            let (dp, dr) = pose_error(&tool, target);
            let score = dp + dr * 0.1;
            if score < best.0 {
                best = (score, q.clone(), (dp, dr));
            }
            if dp < IK_INNER_TOLERANCE && dr < IK_INNER_TOLERANCE {
                break;
            }
            let ep = target.translation.vector - tool.translation.vector;
            let er = so3_log(&(target.rotation * tool.rotation.inverse()));
            let err = Vector6::new(ep.x, ep.y, ep.z, er.x, er.y, er.z);
            let jac = self.jacobian(&frames, &tool);
            let jjt: Matrix6<f64> = (&jac * jac.transpose()).fixed_view::<6, 6>(0, 0).into_owned()
                + Matrix6::identity() * (IK_DAMPING * IK_DAMPING);
            let Some(y) = jjt.cholesky().map(|c| c.solve(&err)) else { break };
            let mut dq: DVector<f64> = jac.transpose() * DVector::from_column_slice(y.as_slice());
            let peak = dq.amax();
            if peak > IK_MAX_STEP {
                dq *= IK_MAX_STEP / peak;
            }
            for (v, d) in q.iter_mut().zip(dq.iter()) {
                *v += d;
            }
            self.clamp(&mut q);
        }
        let (_, q_best, (dp, dr)) = best;
        if dp < IK_POSITION_TOLERANCE && dr < IK_ORIENTATION_TOLERANCE {
            Ok(q_best)
        } else {
            Err(Error::UnreachableTarget {
                position: dp,
                orientation: dr,
            })
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix4, Point3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) const TWO_LINK: &str = r#"<robot name="two">
  <link name="base"/>
  <link name="arm"/>
  <joint name="j1" type="revolute">
    <parent link="base"/><child link="arm"/>
    <origin xyz="0.5 0 0" rpy="0 0 0"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3.14" upper="3.14" effort="1" velocity="1"/>
  </joint>
</robot>"#;

    /// Oracle: explicit homogeneous matrices multiplied along the chain.
    fn matrix_chain(chain: &KinematicChain, q: &[f64], link: usize) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        for j in chain.ancestor_joints(link) {
            let joint = &chain.joints()[j];
            let o = joint.origin.to_homogeneous();
            let motion = match joint.kind {
                JointKind::Revolute => {
                    let (c, s) = (q[joint.q_index.unwrap()].cos(), q[joint.q_index.unwrap()].sin());
                    let a = joint.axis;
                    let k = crate::geometry::skew(&a);
                    let r = nalgebra::Matrix3::identity() + k * s + k * k * (1.0 - c);
                    r.to_homogeneous()
                }
                JointKind::Prismatic => Matrix4::new_translation(&(joint.axis.into_inner() * q[joint.q_index.unwrap()])),
                JointKind::Fixed => Matrix4::identity(),
            };
            m = m * o * motion;
        }
        m
    }

    #[test]
    fn two_link_fixture() {
        let chain = parse_chain(TWO_LINK).unwrap();
        assert_eq!(chain.dof(), 1);
        assert_eq!(chain.link_count(), 2);
        let poses = chain.forward_kinematics(&[0.0]).unwrap();
        assert_eq!(poses[0], Isometry3::identity());
        assert_relative_eq!(poses[1].translation.vector, Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_moves_child_point() {
        let chain = parse_chain(TWO_LINK).unwrap();
        // a point at (L,0,0) in the rotating child frame
        let poses = chain.forward_kinematics(&[FRAC_PI_2]).unwrap();
        let p = poses[1] * Point3::new(0.5, 0.0, 0.0);
        assert_relative_eq!(p, Point3::new(0.5, 0.5, 0.0), epsilon = 1e-12);
        let child_origin_chain = r#"<robot name="r"><link name="a"/><link name="b"/><link name="c"/>
  <joint name="j" type="continuous"><parent link="a"/><child link="b"/><axis xyz="0 0 1"/></joint>
  <joint name="f" type="fixed"><parent link="b"/><child link="c"/><origin xyz="0.3 0 0"/></joint></robot>"#;
        let chain = parse_chain(child_origin_chain).unwrap();
        assert_eq!(chain.limits(), vec![(-std::f64::consts::PI, std::f64::consts::PI)]);
        let poses = chain.forward_kinematics(&[FRAC_PI_2]).unwrap();
        assert_relative_eq!(poses[2].translation.vector, Vector3::new(0.0, 0.3, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn seven_joint_matches_matrix_oracle() {
        let chain = arms::seven_joint_arm();
        assert_eq!(chain.dof(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let q: Vec<f64> = chain.limits().iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect();
            let poses = chain.forward_kinematics(&q).unwrap();
            for (l, pose) in poses.iter().enumerate() {
                let oracle = matrix_chain(&chain, &q, l);
                assert!((pose.to_homogeneous() - oracle).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_unsupported_and_malformed() {
        let floating = TWO_LINK.replace("type=\"revolute\"", "type=\"floating\"");
        let err = parse_chain(&floating).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("j1"));
        let cyc = r#"<robot name="c"><link name="a"/><link name="b"/>
  <joint name="x" type="fixed"><parent link="a"/><child link="b"/></joint>
  <joint name="y" type="fixed"><parent link="b"/><child link="a"/></joint></robot>"#;
        assert!(matches!(parse_chain(cyc), Err(Error::Structure(_))));
        let two_roots = r#"<robot name="c"><link name="a"/><link name="b"/></robot>"#;
        assert!(matches!(parse_chain(two_roots), Err(Error::Structure(_))));
        let chain = parse_chain(TWO_LINK).unwrap();
        assert!(chain.forward_kinematics(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn ik_fixed_point_and_recovery() {
        let chain = arms::seven_joint_arm();
        let q_star = chain.q_default().to_vec();
        let target = chain.end_effector_pose(&q_star).unwrap();
        assert_eq!(chain.inverse_kinematics(&target, &q_star).unwrap(), q_star);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mut q: Vec<f64> = q_star.iter().map(|v| v + rng.random_range(-0.4..0.4)).collect();
            chain.clamp(&mut q);
            let target = chain.end_effector_pose(&q).unwrap();
            let mut seed: Vec<f64> = q.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
            chain.clamp(&mut seed);
            let sol = chain.inverse_kinematics(&target, &seed).unwrap();
            let (dp, dr) = pose_error(&chain.end_effector_pose(&sol).unwrap(), &target);
            assert!(dp < IK_POSITION_TOLERANCE && dr < IK_ORIENTATION_TOLERANCE);
            for (v, (lo, hi)) in sol.iter().zip(chain.limits()) {
                assert!(*v >= lo && *v <= hi);
            }
        }
    }

    #[test]
    fn ik_far_target_is_unreachable() {
        let chain = arms::seven_joint_arm();
        let target = Isometry3::translation(10.0, 0.0, 0.0);
        assert!(matches!(
            chain.inverse_kinematics(&target, chain.q_default()),
            Err(Error::UnreachableTarget { .. })
        ));
    }

    #[test]
    fn fk_is_continuous() {
        let chain = arms::six_joint_arm();
        let q = chain.q_default().to_vec();
        let q2: Vec<f64> = q.iter().map(|v| v + 5e-10).collect();
        let a = chain.forward_kinematics(&q).unwrap();
        let b = chain.forward_kinematics(&q2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let (dp, dr) = pose_error(x, y);
            assert!(dp < 1e-6 && dr < 1e-6);
        }
    }
}
