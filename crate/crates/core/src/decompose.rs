//! Splitting an aligned scene into robot links, named objects and
//! background, and re-posing the robot part.
//!
//! Precedence is fixed: a Gaussian near a link belongs to that link even if
//! it also lies inside an object region.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{link_points_world, KinematicChain, LinkPointClouds};
use crate::spatial::PointIndex;
use crate::splat::{apply_similarity, merge, save_splat, GaussianSet, SimilarityTransform};

/// Distances closer than this count as ties, won by the lower link index.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Default link-assignment threshold in meters.
pub const DEFAULT_LINK_THRESHOLD: f64 = 0.01;

/// Which part a source Gaussian went to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "part", content = "index")]
pub enum Label {
    Link(usize),
    Object(usize),
    Background,
}

/// Closed convex volume in the base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Region {
    /// Axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Upright cylinder (axis along z) from `z_min` to `z_max`.
    Cylinder { center_xy: [f64; 2], radius: f64, z_min: f64, z_max: f64 },
    /// Intersection of half-spaces `normal · x <= offset`.
    Polytope { planes: Vec<([f64; 3], f64)> },
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            Region::Box { min, max } => finite(min) && finite(max) && (0..3).all(|i| min[i] <= max[i]),
            Region::Sphere { center, radius } => finite(center) && radius.is_finite() && *radius >= 0.0,
            Region::Cylinder { center_xy, radius, z_min, z_max } => {
                finite(center_xy) && radius.is_finite() && *radius >= 0.0 && z_min.is_finite() && z_max.is_finite() && z_min <= z_max
            }
            Region::Polytope { planes } => {
                !planes.is_empty()
                    && planes
                        .iter()
                        .all(|(n, d)| finite(n) && d.is_finite() && Vector3::from(*n).norm() > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("malformed region {self:?}")))
        }
    }

    /// Boundary points are inside.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Region::Box { min, max } => (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i]),
            Region::Sphere { center, radius } => (p - Vector3::from(*center)).norm_squared() <= radius * radius,
            Region::Cylinder { center_xy, radius, z_min, z_max } => {
                let (dx, dy) = (p.x - center_xy[0], p.y - center_xy[1]);
                dx * dx + dy * dy <= radius * radius && p.z >= *z_min && p.z <= *z_max
            }
            Region::Polytope { planes } => planes.iter().all(|(n, d)| Vector3::from(*n).dot(p) <= *d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRegion {
    pub name: String,
    pub region: Region,
}

/// Nearest-link label per Gaussian: the link whose cloud (posed at `q`)
/// has the closest point, if that distance is within the clouds'
/// threshold. Ties within [`TIE_TOLERANCE`] go to the lower link index.
pub fn assign_to_links(scene: &GaussianSet, chain: &KinematicChain, q: &[f64], clouds: &LinkPointClouds) -> Result<Vec<Option<usize>>> {
    let per_link = link_points_world(chain, q, clouds)?;
    if per_link.iter().all(Vec::is_empty) {
        return Err(Error::invalid("every link point cloud is empty"));
    }
    let indices: Vec<PointIndex> = per_link.iter().map(|pts| PointIndex::new(pts)).collect();
    let threshold = clouds.threshold();
    Ok(scene
        .positions()
        .par_iter()
        .map(|p| {
            let p = Point3::from(*p);
            let mut best: Option<(f64, usize)> = None;
            for (link, index) in indices.iter().enumerate() {
                if let Some((d2, _)) = index.nearest(&p) {
                    let d = d2.sqrt();
                    if best.is_none_or(|(bd, _)| d < bd - TIE_TOLERANCE) {
                        best = Some((d, link));
                    }
                }
            }
            best.filter(|&(d, _)| d <= threshold).map(|(_, link)| link)
        })
        .collect())
}

/// First region (in order) containing each Gaussian's center.
pub fn assign_objects(scene: &GaussianSet, regions: &[NamedRegion]) -> Result<Vec<Option<usize>>> {
    for r in regions {
        r.region.validate()?;
    }
    Ok(scene
        .positions()
        .par_iter()
        .map(|p| regions.iter().position(|r| r.region.contains(p)))
        .collect())
}

/// A scene split into parts, with the label of every source Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDecomposition {
    pub link_names: Vec<String>,
    /// One set per chain link, in chain order.
    pub robot_links: Vec<GaussianSet>,
    pub object_names: Vec<String>,
    pub objects: Vec<GaussianSet>,
    pub background: GaussianSet,
    /// Per source Gaussian.
    pub labels: Vec<Label>,
    /// Configuration the robot was captured in.
    pub q_capture: Vec<f64>,
    pub threshold: f64,
}

/// Index lists per part, as written next to exported splats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionManifest {
    pub threshold: f64,
    pub link_names: Vec<String>,
    pub object_names: Vec<String>,
    pub links: Vec<Vec<usize>>,
    pub objects: Vec<Vec<usize>>,
    pub background: Vec<usize>,
}

/// Labels `scene` (already in the base frame) with robot links first, then
/// object regions, and gathers each part in source order.
pub fn decompose(
    scene: &GaussianSet,
    chain: &KinematicChain,
    clouds: &LinkPointClouds,
    regions: &[NamedRegion],
) -> Result<SceneDecomposition> {
    let q = chain.q_default().to_vec();
    let links = assign_to_links(scene, chain, &q, clouds)?;
    let objects = assign_objects(scene, regions)?;
    let labels: Vec<Label> = links
        .iter()
        .zip(&objects)
        .map(|(l, o)| match (l, o) {
            (Some(l), _) => Label::Link(*l),
            (None, Some(o)) => Label::Object(*o),
            (None, None) => Label::Background,
        })
        .collect();
    let mut decomp = SceneDecomposition {
        link_names: chain.links().to_vec(),
        robot_links: Vec::new(),
        object_names: regions.iter().map(|r| r.name.clone()).collect(),
        objects: Vec::new(),
        background: GaussianSet::empty(scene.sh_degree())?,
        labels,
        q_capture: q,
        threshold: clouds.threshold(),
    };
    let manifest = decomp.manifest();
    decomp.robot_links = manifest.links.iter().map(|ix| scene.select(ix)).collect();
    decomp.objects = manifest.objects.iter().map(|ix| scene.select(ix)).collect();
    decomp.background = scene.select(&manifest.background);
    Ok(decomp)
}

impl SceneDecomposition {
    pub fn manifest(&self) -> DecompositionManifest {
        let mut links = vec![Vec::new(); self.link_names.len()];
        let mut objects = vec![Vec::new(); self.object_names.len()];
        let mut background = Vec::new();
        for (i, label) in self.labels.iter().enumerate() {
            match *label {
                Label::Link(l) => links[l].push(i),
                Label::Object(o) => objects[o].push(i),
                Label::Background => background.push(i),
            }
        }
        DecompositionManifest {
            threshold: self.threshold,
            link_names: self.link_names.clone(),
            object_names: self.object_names.clone(),
            links,
            objects,
            background,
        }
    }

    pub fn robot(&self) -> Result<GaussianSet> {
        merge(&self.robot_links)
    }

    /// Adds an externally segmented object. It has no source labels.
    pub fn add_object(&mut self, name: impl Into<String>, set: GaussianSet) -> Result<()> {
        if set.sh_degree() != self.background.sh_degree() {
            return Err(Error::invalid(format!(
                "object SH degree {} differs from scene degree {}",
                set.sh_degree(),
                self.background.sh_degree()
            )));
        }
        self.object_names.push(name.into());
        self.objects.push(set);
        Ok(())
    }

    pub fn object(&self, name: &str) -> Result<&GaussianSet> {
        self.object_names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.objects[i])
            .ok_or_else(|| Error::invalid(format!("no object named '{name}'")))
    }

    /// Writes `manifest.json` and one PLY per part into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest()).map_err(|e| Error::invalid(e.to_string()))?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        for (name, set) in self.link_names.iter().zip(&self.robot_links) {
            save_splat(set, dir.join(format!("link_{name}.ply")))?;
        }
        for (name, set) in self.object_names.iter().zip(&self.objects) {
            save_splat(set, dir.join(format!("object_{name}.ply")))?;
        }
        save_splat(&self.background, dir.join("background.ply"))
    }
}

/// Robot splat at configuration `q`: link `i` moves by
/// `T_i(q) · T_i(q_capture)⁻¹`. Links whose pose is unchanged are copied
/// untouched, so `q == q_capture` reproduces the captured robot exactly.
pub fn repose_robot(decomp: &SceneDecomposition, chain: &KinematicChain, q: &[f64]) -> Result<GaussianSet> {
    if chain.link_count() != decomp.robot_links.len() {
        return Err(Error::invalid(format!(
            "chain has {} links, decomposition has {}",
            chain.link_count(),
            decomp.robot_links.len()
        )));
    }
    if q.len() != chain.dof() {
        return Err(Error::invalid(format!("expected {} joint values, got {}", chain.dof(), q.len())));
    }
    let target = chain.forward_kinematics(q)?;
    let captured = chain.forward_kinematics(&decomp.q_capture)?;
    let moved: Vec<GaussianSet> = decomp
        .robot_links
        .iter()
        .zip(target.iter().zip(&captured))
        .map(|(set, (t, c))| {
            if t == c {
                set.clone()
            } else {
                apply_similarity(set, &SimilarityTransform::from_isometry(&(t * c.inverse())))
            }
        })
        .collect();
    merge(&moved)
}
