use std::ops::Range;
use std::path::Path;

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use crate::decompose::SceneDecomposition;
use crate::error::{Error, ReachabilityFailure, Result};
use crate::geometry::{pose_from_array, pose_to_array};
use crate::kinematics::KinematicChain;
use crate::splat::{apply_similarity, load_splat, GaussianSet, SimilarityTransform};
use crate::trajectory::{fold_pose_yaw, Keyframe};

pub const MODEL_FILE: &str = "model.ply";
pub const GRASPS_FILE: &str = "grasps.json";

/// Tool pose in the object frame with a quality score (higher is better).
#[derive(Debug, Clone, PartialEq)]
pub struct GraspCandidate {
    pub pose: Isometry3<f64>,
    pub score: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraspRecord {
    pose: [f64; 7],
    score: f64,
}

/// An object splat in its own frame with candidate grasps. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAsset {
    pub name: String,
    pub splat: GaussianSet,
    pub grasps: Vec<GraspCandidate>,
}

impl ObjectAsset {
    pub fn new(name: impl Into<String>, splat: GaussianSet, grasps: Vec<GraspCandidate>) -> Result<Self> {
        let name = name.into();
        if splat.is_empty() {
            return Err(Error::Config(format!("object asset '{name}' has an empty splat")));
        }
        if grasps.is_empty() {
            return Err(Error::Config(format!("object asset '{name}' has no grasps")));
        }
        if let Some(g) = grasps.iter().find(|g| !g.score.is_finite()) {
            return Err(Error::Config(format!("object asset '{name}' has a non-finite grasp score {}", g.score)));
        }
        Ok(Self { name, splat, grasps })
    }

    /// Reads `model.ply` and `grasps.json` (a list of `{pose, score}` with
    /// poses as `[x, y, z, qw, qx, qy, qz]`); the name is the folder name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "object".into());
        let splat = load_splat(dir.join(MODEL_FILE))?;
        let path = dir.join(GRASPS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let records: Vec<GraspRecord> =
            serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let grasps = records
            .into_iter()
            .map(|r| {
                Ok(GraspCandidate {
                    pose: pose_from_array(&r.pose)?,
                    score: r.score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, splat, grasps)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::splat::save_splat(&self.splat, dir.join(MODEL_FILE))?;
        let records: Vec<GraspRecord> = self
            .grasps
            .iter()
            .map(|g| GraspRecord {
                pose: pose_to_array(&g.pose),
                score: g.score,
            })
            .collect();
        let path = dir.join(GRASPS_FILE);
        let text = serde_json::to_string_pretty(&records).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Grasp indices by descending score; ties keep file order.
    pub fn ranked_grasps(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.grasps.len()).collect();
        order.sort_by(|&a, &b| self.grasps[b].score.total_cmp(&self.grasps[a].score));
        order
    }
}

/// Which keyframes follow the grasped object: `grasp` is the keyframe
/// where the tool holds the object, `affected` the keyframe positions that
/// keep their pose relative to it (must contain `grasp`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspBinding {
    pub grasp: usize,
    pub affected: Range<usize>,
}

impl GraspBinding {
    pub fn validate(&self, keyframes: usize) -> Result<()> {
        if !self.affected.contains(&self.grasp) || self.affected.end > keyframes {
            return Err(Error::Config(format!(
                "grasp binding {:?} invalid for {keyframes} keyframes",
                self
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwappedObject {
    pub keyframes: Vec<Keyframe>,
    /// Index into the asset's grasp list.
    pub grasp_index: usize,
    /// The asset splat placed at the object pose.
    pub splat: GaussianSet,
}

/// Retargets the bound keyframes to `asset` placed at `object_pose`.
///
/// The grasp keyframe becomes `object_pose ∘ grasp`, yaw-folded. Each other
/// affected keyframe keeps its source offset from the grasp keyframe in the
/// tool frame and is folded on its own. Grasps are tried by descending score;
/// the first whose grasp pose passes IK from `q_seed` wins.
pub fn swap_object(
    kfs: &[Keyframe],
    asset: &ObjectAsset,
    object_pose: &Isometry3<f64>,
    binding: &GraspBinding,
    chain: &KinematicChain,
    q_seed: &[f64],
) -> Result<SwappedObject> {
    binding.validate(kfs.len())?;
    let source_grasp = kfs[binding.grasp].ee_pose;
    for idx in asset.ranked_grasps() {
        let held = object_pose * asset.grasps[idx].pose;
        if chain.inverse_kinematics(&fold_pose_yaw(&held), q_seed).is_err() {
            continue;
        }
        let keyframes = kfs
            .iter()
            .enumerate()
            .map(|(i, kf)| {
                if !binding.affected.contains(&i) {
                    return kf.clone();
                }
                let offset = source_grasp.inverse() * kf.ee_pose;
                let pose = if i == binding.grasp { held } else { held * offset };
                Keyframe {
                    ee_pose: fold_pose_yaw(&pose),
                    ..kf.clone()
                }
            })
            .collect();
        return Ok(SwappedObject {
            keyframes,
            grasp_index: idx,
            splat: apply_similarity(&asset.splat, &SimilarityTransform::from_isometry(object_pose)),
        });
    }
    Err(Error::NoFeasibleGrasp {
        candidates: asset.grasps.len(),
    })
}

/// A robot to render and plan with: its chain and per-link splats captured
/// at `q_capture`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embodiment {
    pub chain: KinematicChain,
    pub link_sets: Vec<GaussianSet>,
    pub q_capture: Vec<f64>,
}

impl Embodiment {
    /// The decomposition with its robot replaced. Source labels no longer
    /// describe the robot parts and are dropped.
    pub fn install(&self, decomp: &SceneDecomposition) -> Result<SceneDecomposition> {
        let degree = decomp.background.sh_degree();
        let links = self
            .link_sets
            .iter()
            .map(|s| if s.sh_degree() == degree { Ok(s.clone()) } else { s.with_sh_degree(degree) })
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneDecomposition {
            link_names: self.chain.links().to_vec(),
            robot_links: links,
            labels: Vec::new(),
            q_capture: self.q_capture.clone(),
            ..decomp.clone()
        })
    }
}

/// Keyframes pass through unchanged (they are tool poses); every keyframe
/// is checked for reachability by the new chain, seeding IK with the
/// previous keyframe's solution. All failures are reported together.
pub fn swap_embodiment(
    kfs: &[Keyframe],
    chain: KinematicChain,
    link_sets: Vec<GaussianSet>,
    q_capture: Vec<f64>,
) -> Result<(Vec<Keyframe>, Embodiment)> {
    if link_sets.len() != chain.link_count() {
        return Err(Error::Config(format!(
            "embodiment has {} link splats for {} links",
            link_sets.len(),
            chain.link_count()
        )));
    }
    if q_capture.len() != chain.dof() {
        return Err(Error::Config(format!(
            "capture configuration has {} values, chain has {} joints",
            q_capture.len(),
            chain.dof()
        )));
    }
    let mut seed = q_capture.clone();
    let mut failures = Vec::new();
    for (i, kf) in kfs.iter().enumerate() {
        match chain.inverse_kinematics(&kf.ee_pose, &seed) {
            Ok(q) => seed = q,
            Err(Error::UnreachableTarget { position, orientation }) => failures.push(ReachabilityFailure {
                keyframe: i,
                position_residual: position,
                orientation_residual: orientation,
            }),
            Err(e) => return Err(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Reachability(failures));
    }
    Ok((
        kfs.to_vec(),
        Embodiment {
            chain,
            link_sets,
            q_capture,
        },
    ))
}
