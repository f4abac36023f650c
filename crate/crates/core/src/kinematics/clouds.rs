use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};

use super::KinematicChain;
use crate::error::{Error, Result};
use crate::splat::{load_points, save_points};

/// Per-link surface samples in each link's local frame, plus the distance
/// threshold used when assigning Gaussians to links.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPointClouds {
    clouds: BTreeMap<String, Vec<Point3<f64>>>,
    threshold: f64,
}

impl LinkPointClouds {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::invalid(format!("link threshold must be positive, got {threshold}")));
        }
        Ok(Self {
            clouds: BTreeMap::new(),
            threshold,
        })
    }

    pub fn insert(&mut self, link: impl Into<String>, points: Vec<Point3<f64>>) {
        self.clouds.insert(link.into(), points);
    }

    /// Points of a link; empty when the link has no cloud.
    pub fn get(&self, link: &str) -> &[Point3<f64>] {
        self.clouds.get(link).map_or(&[], |v| v.as_slice())
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        self.threshold = Self::new(threshold)?.threshold;
        Ok(self)
    }

    pub fn link_names(&self) -> impl Iterator<Item = &str> {
        self.clouds.keys().map(|s| s.as_str())
    }

    pub fn total_points(&self) -> usize {
        self.clouds.values().map(|v| v.len()).sum()
    }

    /// Reads `<link>.ply` for every chain link; absent files give empty clouds.
    pub fn load_dir(dir: impl AsRef<Path>, chain: &KinematicChain, threshold: f64) -> Result<Self> {
        let dir = dir.as_ref();
        let mut out = Self::new(threshold)?;
        for link in chain.links() {
            let path = dir.join(format!("{link}.ply"));
            let pts = if path.exists() { load_points(&path)? } else { Vec::new() };
            out.insert(link.clone(), pts);
        }
        Ok(out)
    }

    /// Writes one `<link>.ply` per non-empty cloud.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (link, pts) in &self.clouds {
            if !pts.is_empty() {
                save_points(pts, dir.join(format!("{link}.ply")))?;
            }
        }
        Ok(())
    }
}

/// Maps every link's local points into the base frame at configuration `q`.
/// The result is indexed like `chain.links()`.
pub fn link_points_world(chain: &KinematicChain, q: &[f64], clouds: &LinkPointClouds) -> Result<Vec<Vec<Point3<f64>>>> {
    if let Some(unknown) = clouds.link_names().find(|n| chain.link_index(n).is_err()) {
        return Err(Error::invalid(format!("point cloud for unknown link '{unknown}'")));
    }
    let poses = chain.forward_kinematics(q)?;
    Ok(chain
        .links()
        .iter()
        .zip(&poses)
        .map(|(name, pose)| clouds.get(name).iter().map(|p| pose * p).collect())
        .collect())
}

fn steps(extent: f64, spacing: f64) -> usize {
    ((extent / spacing).ceil() as usize).max(1)
}

/// Grid samples on the surface of a box centered at the origin.
pub fn sample_box(half_extents: &Vector3<f64>, spacing: f64) -> Vec<Point3<f64>> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let (nu, nv) = (steps(2.0 * half_extents[u], spacing), steps(2.0 * half_extents[v], spacing));
        for sign in [-1.0, 1.0] {
            for i in 0..=nu {
                for j in 0..=nv {
                    let mut p = Vector3::zeros();
                    p[axis] = sign * half_extents[axis];
                    p[u] = -half_extents[u] + 2.0 * half_extents[u] * i as f64 / nu as f64;
                    p[v] = -half_extents[v] + 2.0 * half_extents[v] * j as f64 / nv as f64;
                    out.push(Point3::from(p));
                }
            }
        }
    }
    out
}

/// Rings on a cylinder of the given radius spanning `z` in `[0, length]`,
/// with capped ends.
pub fn sample_cylinder(radius: f64, length: f64, spacing: f64) -> Vec<Point3<f64>> {
    let mut out = Vec::new();
    let ring = |r: f64, z: f64, out: &mut Vec<Point3<f64>>| {
        let n = steps(2.0 * PI * r, spacing).max(3);
        for k in 0..n {
            let a = 2.0 * PI * k as f64 / n as f64;
            out.push(Point3::new(r * a.cos(), r * a.sin(), z));
        }
    };
    let nz = steps(length, spacing);
    for i in 0..=nz {
        ring(radius, length * i as f64 / nz as f64, &mut out);
    }
    let nr = steps(radius, spacing);
    for z in [0.0, length] {
        out.push(Point3::new(0.0, 0.0, z));
        for i in 1..nr {
            ring(radius * i as f64 / nr as f64, z, &mut out);
        }
    }
    out
}

/// Fibonacci-lattice samples on a sphere centered at the origin.
pub fn sample_sphere(radius: f64, spacing: f64) -> Vec<Point3<f64>> {
    let n = ((4.0 * PI * radius * radius / (spacing * spacing)).ceil() as usize).max(4);
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Point3::new(radius * r * a.cos(), radius * r * a.sin(), radius * z)
        })
        .collect()
}

/// Capsule-style clouds for a chain: a sphere at each link origin, a
/// cylinder toward every child joint, and a box covering the tool offset
/// on the end-effector link.
pub fn skeleton_clouds(chain: &KinematicChain, radius: f64, spacing: f64, threshold: f64) -> Result<LinkPointClouds> {
    let mut out = LinkPointClouds::new(threshold)?;
    for (l, name) in chain.links().iter().enumerate() {
        let mut pts = sample_sphere(radius, spacing);
        let mut segments: Vec<Vector3<f64>> = chain
            .joints()
            .iter()
            .filter(|j| j.parent == l)
            .map(|j| j.origin.translation.vector)
            .collect();
        if l == chain.ee_link() {
            segments.push(chain.tool_offset().translation.vector);
        }
        for seg in segments {
            let len = seg.norm();
            if len < 1e-6 {
                continue;
            }
            let dir = seg / len;
            let rot = UnitQuaternion::rotation_between(&Vector3::z(), &dir)
                .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
            let frame = Isometry3::from_parts(Translation3::identity(), rot);
            pts.extend(sample_cylinder(radius, len, spacing).iter().map(|p| frame * p));
        }
        out.insert(name.clone(), pts);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{arms, parse_chain, tests::TWO_LINK};
    use approx::assert_relative_eq;

    #[test]
    fn base_points_unchanged_at_default() {
        let chain = arms::seven_joint_arm();
        let clouds = skeleton_clouds(&chain, 0.04, 0.02, 0.01).unwrap();
        let world = link_points_world(&chain, chain.q_default(), &clouds).unwrap();
        let base = chain.root();
        assert_eq!(world[base], clouds.get(&chain.links()[base]).to_vec());
    }

    #[test]
    fn joint_rotation_moves_only_descendants() {
        let chain = parse_chain(TWO_LINK).unwrap();
        let mut clouds = LinkPointClouds::new(0.01).unwrap();
        clouds.insert("base", vec![Point3::new(0.1, 0.2, 0.0)]);
        clouds.insert("arm", vec![Point3::new(0.3, 0.0, 0.1)]);
        let theta = 0.7;
        let world = link_points_world(&chain, &[theta], &clouds).unwrap();
        assert_eq!(world[0], vec![Point3::new(0.1, 0.2, 0.0)]);
        // oracle: rotate about z through the joint origin (0.5, 0, 0)
        let expect = Point3::new(0.5 + 0.3 * theta.cos(), 0.3 * theta.sin(), 0.1);
        assert_relative_eq!(world[1][0], expect, epsilon = 1e-12);
    }

    #[test]
    fn empty_and_unknown_clouds() {
        let chain = parse_chain(TWO_LINK).unwrap();
        let mut clouds = LinkPointClouds::new(0.01).unwrap();
        clouds.insert("arm", Vec::new());
        let world = link_points_world(&chain, &[0.0], &clouds).unwrap();
        assert!(world.iter().all(|w| w.is_empty()));
        clouds.insert("ghost", vec![Point3::origin()]);
        assert!(link_points_world(&chain, &[0.0], &clouds).is_err());
        assert!(LinkPointClouds::new(0.0).is_err());
    }

    #[test]
    fn primitive_samples_lie_on_surfaces() {
        for p in sample_sphere(0.2, 0.02) {
            assert!((p.coords.norm() - 0.2).abs() < 1e-12);
        }
        let h = Vector3::new(0.1, 0.2, 0.05);
        for p in sample_box(&h, 0.03) {
            let on_face = (0..3).any(|a| (p[a].abs() - h[a]).abs() < 1e-12);
            assert!(on_face && (0..3).all(|a| p[a].abs() <= h[a] + 1e-12));
        }
        for p in sample_cylinder(0.05, 0.3, 0.01) {
            let r = (p.x * p.x + p.y * p.y).sqrt();
            assert!(p.z >= -1e-12 && p.z <= 0.3 + 1e-12);
            assert!((r - 0.05).abs() < 1e-12 || p.z.abs() < 1e-12 || (p.z - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let chain = parse_chain(TWO_LINK).unwrap();
        let mut clouds = LinkPointClouds::new(0.02).unwrap();
        clouds.insert("arm", vec![Point3::new(0.25, -0.5, 1.0)]);
        clouds.save_dir(dir.path()).unwrap();
        let back = LinkPointClouds::load_dir(dir.path(), &chain, 0.02).unwrap();
        assert_eq!(back.get("arm"), clouds.get("arm"));
        assert!(back.get("base").is_empty());
    }
}
