//! Two reference arms: a 7-joint arm with FR3-like geometry and a 6-joint
//! arm with UR5e-like geometry. Both tool frames point `+z` along the
//! approach direction with fingers closing along `y`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};

use super::{parse_chain, KinematicChain};

pub const SEVEN_JOINT_URDF: &str = r#"<?xml version="1.0"?>
<robot name="seven_joint_arm">
  <link name="link0"/> <link name="link1"/> <link name="link2"/> <link name="link3"/>
  <link name="link4"/> <link name="link5"/> <link name="link6"/> <link name="link7"/>
  <link name="flange"/> <link name="hand"/>
  <joint name="joint1" type="revolute">
    <parent link="link0"/><child link="link1"/>
    <origin xyz="0 0 0.333" rpy="0 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-2.8973" upper="2.8973" effort="87" velocity="2.62"/>
  </joint>
  <joint name="joint2" type="revolute">
    <parent link="link1"/><child link="link2"/>
    <origin xyz="0 0 0" rpy="-1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-1.7628" upper="1.7628" effort="87" velocity="2.62"/>
  </joint>
  <joint name="joint3" type="revolute">
    <parent link="link2"/><child link="link3"/>
    <origin xyz="0 -0.316 0" rpy="1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-2.8973" upper="2.8973" effort="87" velocity="2.62"/>
  </joint>
  <joint name="joint4" type="revolute">
    <parent link="link3"/><child link="link4"/>
    <origin xyz="0.0825 0 0" rpy="1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-3.0718" upper="-0.0698" effort="87" velocity="2.62"/>
  </joint>
  <joint name="joint5" type="revolute">
    <parent link="link4"/><child link="link5"/>
    <origin xyz="-0.0825 0.384 0" rpy="-1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-2.8973" upper="2.8973" effort="12" velocity="5.26"/>
  </joint>
  <joint name="joint6" type="revolute">
    <parent link="link5"/><child link="link6"/>
    <origin xyz="0 0 0" rpy="1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-0.0175" upper="3.7525" effort="12" velocity="4.18"/>
  </joint>
  <joint name="joint7" type="revolute">
    <parent link="link6"/><child link="link7"/>
    <origin xyz="0.088 0 0" rpy="1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-2.8973" upper="2.8973" effort="12" velocity="5.26"/>
  </joint>
  <joint name="joint8" type="fixed">
    <parent link="link7"/><child link="flange"/>
    <origin xyz="0 0 0.107" rpy="0 0 0"/>
  </joint>
  <joint name="hand_joint" type="fixed">
    <parent link="flange"/><child link="hand"/>
    <origin xyz="0 0 0" rpy="0 0 -0.7853981633974483"/>
  </joint>
</robot>
"#;

pub const SIX_JOINT_URDF: &str = r#"<?xml version="1.0"?>
<robot name="six_joint_arm">
  <link name="base_link"/> <link name="shoulder_link"/> <link name="upper_arm_link"/>
  <link name="forearm_link"/> <link name="wrist_1_link"/> <link name="wrist_2_link"/>
  <link name="wrist_3_link"/> <link name="tool0"/>
  <joint name="shoulder_pan_joint" type="revolute">
    <parent link="base_link"/><child link="shoulder_link"/>
    <origin xyz="0 0 0.1625" rpy="0 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-6.2832" upper="6.2832" effort="150" velocity="3.14"/>
  </joint>
  <joint name="shoulder_lift_joint" type="revolute">
    <parent link="shoulder_link"/><child link="upper_arm_link"/>
    <origin xyz="0 0 0" rpy="1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-6.2832" upper="6.2832" effort="150" velocity="3.14"/>
  </joint>
  <joint name="elbow_joint" type="revolute">
    <parent link="upper_arm_link"/><child link="forearm_link"/>
    <origin xyz="-0.425 0 0" rpy="0 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-3.1416" upper="3.1416" effort="150" velocity="3.14"/>
  </joint>
  <joint name="wrist_1_joint" type="revolute">
    <parent link="forearm_link"/><child link="wrist_1_link"/>
    <origin xyz="-0.3922 0 0.1333" rpy="0 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-6.2832" upper="6.2832" effort="28" velocity="6.28"/>
  </joint>
  <joint name="wrist_2_joint" type="revolute">
    <parent link="wrist_1_link"/><child link="wrist_2_link"/>
    <origin xyz="0 -0.0997 0" rpy="1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-6.2832" upper="6.2832" effort="28" velocity="6.28"/>
  </joint>
  <joint name="wrist_3_joint" type="revolute">
    <parent link="wrist_2_link"/><child link="wrist_3_link"/>
    <origin xyz="0 0.0996 0" rpy="-1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-6.2832" upper="6.2832" effort="28" velocity="6.28"/>
  </joint>
  <joint name="flange_joint" type="fixed">
    <parent link="wrist_3_link"/><child link="tool0"/>
  </joint>
</robot>
"#;

/// Ready pose of the 7-joint arm: tool pointing straight down.
pub const SEVEN_JOINT_DEFAULT: [f64; 7] = [0.0, -FRAC_PI_4, 0.0, -3.0 * FRAC_PI_4, 0.0, FRAC_PI_2, FRAC_PI_4];

/// Home pose of the 6-joint arm, turned to face `+x` with the tool down.
pub const SIX_JOINT_DEFAULT: [f64; 6] = [PI, -FRAC_PI_2, FRAC_PI_2, -FRAC_PI_2, -FRAC_PI_2, 0.0];

pub fn seven_joint_arm() -> KinematicChain {
    parse_chain(SEVEN_JOINT_URDF)
        .and_then(|c| c.with_end_effector("hand", Isometry3::translation(0.0, 0.0, 0.1034)))
        .and_then(|c| c.with_default_configuration(&SEVEN_JOINT_DEFAULT))
        .expect("built-in chain is valid")
}

pub fn six_joint_arm() -> KinematicChain {
    let tool = Isometry3::from_parts(
        Translation3::new(0.0, 0.0, 0.15),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -FRAC_PI_2),
    );
    parse_chain(SIX_JOINT_URDF)
        .and_then(|c| c.with_end_effector("tool0", tool))
        .and_then(|c| c.with_default_configuration(&SIX_JOINT_DEFAULT))
        .expect("built-in chain is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tools_point_down() {
        for chain in [seven_joint_arm(), six_joint_arm()] {
            let pose = chain.end_effector_pose(chain.q_default()).unwrap();
            let approach = pose.rotation * Vector3::z();
            assert!(approach.z < -0.999, "approach {approach:?}");
            assert!((pose.rotation * Vector3::x()).x > 0.999);
            assert!(pose.translation.x > 0.25);
        }
    }
}
