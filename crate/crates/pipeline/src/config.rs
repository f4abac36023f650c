//! TOML generation config: schema, defaults, path resolution and
//! validation that gathers every problem before failing.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use splatgen_core::alignment::{DescentSchedule, ViewRig};
use splatgen_core::augment::{CameraSampler, Workspace, DEFAULT_PLANE_DENSITY};
use splatgen_core::decompose::{NamedRegion, Region, DEFAULT_LINK_THRESHOLD};
use splatgen_core::geometry::pose_from_array;
use splatgen_core::kinematics::{parse_chain, KinematicChain};
use splatgen_core::trajectory::{extract_keyframes, ExpertDemo, PlanOptions, DEFAULT_VELOCITY_EPSILON};
use splatgen_core::SimilarityTransform;

use crate::error::{Issue, PipelineError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub assets: AssetsConfig,
    #[serde(default)]
    pub alignment: AlignmentConfig,
    #[serde(default)]
    pub decomposition: DecompositionConfig,
    #[serde(default)]
    pub task: TaskConfig,
    pub generation: GenerationSection,
    #[serde(default)]
    pub planning: PlanOptions,
    pub cameras: Vec<CameraConfig>,
    #[serde(default)]
    pub augment: AugmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetsConfig {
    /// Scene splat in its reconstruction frame.
    pub scene: PathBuf,
    pub robot: RobotConfig,
    /// Folder of `<link>.ply` point clouds.
    pub clouds: PathBuf,
    /// Expert demonstration folder.
    pub demo: PathBuf,
    /// Where the alignment result is cached by content hash.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

/// A URDF plus what the file does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub urdf: PathBuf,
    #[serde(default)]
    pub ee_link: Option<String>,
    /// `[x, y, z, qw, qx, qy, qz]` of the tool frame in the end-effector link.
    #[serde(default)]
    pub tool_offset: Option<[f64; 7]>,
    #[serde(default)]
    pub q_default: Option<Vec<f64>>,
}

impl RobotConfig {
    pub fn load(&self) -> splatgen_core::Result<KinematicChain> {
        let text = std::fs::read_to_string(&self.urdf).map_err(|e| splatgen_core::Error::io(&self.urdf, e))?;
        let mut chain = parse_chain(&text)?;
        if self.ee_link.is_some() || self.tool_offset.is_some() {
            let link = match &self.ee_link {
                Some(l) => l.clone(),
                None => chain.links()[chain.ee_link()].clone(),
            };
            let tool = match &self.tool_offset {
                Some(a) => pose_from_array(a)?,
                None => Isometry3::identity(),
            };
            chain = chain.with_end_effector(&link, tool)?;
        }
        if let Some(q) = &self.q_default {
            chain = chain.with_default_configuration(q)?;
        }
        Ok(chain)
    }
}

/// Similarity as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
    pub scale: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            rotation_wxyz: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl TransformConfig {
    pub fn to_similarity(&self) -> splatgen_core::Result<SimilarityTransform> {
        let [w, x, y, z] = self.rotation_wxyz;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 1e-12) || self.rotation_wxyz.iter().any(|v| !v.is_finite()) {
            return Err(splatgen_core::Error::Config("rotation quaternion must be finite and non-zero".into()));
        }
        SimilarityTransform::new(UnitQuaternion::from_quaternion(q), Vector3::from(self.translation), self.scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMethod {
    /// Use `transform` as given.
    #[default]
    Fixed,
    /// ICP from `transform`, then mask refinement.
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub method: AlignmentMethod,
    /// Scene-to-base transform, or the initial guess when estimating.
    pub transform: TransformConfig,
    /// Crop of the robot in the scene frame; the whole scene when absent.
    pub robot_region: Option<Region>,
    pub skip_icp: bool,
    pub rig: ViewRig,
    pub schedule: DescentSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionConfig {
    pub link_threshold: f64,
    /// Object regions in the base frame.
    pub objects: Vec<NamedRegion>,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            link_threshold: DEFAULT_LINK_THRESHOLD,
            objects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub velocity_epsilon: f64,
    pub targets: Vec<TargetConfig>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            velocity_epsilon: DEFAULT_VELOCITY_EPSILON,
            targets: Vec::new(),
        }
    }
}

/// An object the task manipulates and the keyframes that move with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub object: String,
    /// Inclusive keyframe positions `[first, last]` tied to this object.
    pub keyframes: [usize; 2],
    /// Keyframe position where the tool holds the object.
    pub grasp_keyframe: usize,
    pub workspace: Workspace,
    #[serde(default = "default_clearance")]
    pub clearance: f64,
}

fn default_clearance() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_image_size")]
    pub image_width: usize,
    #[serde(default = "default_image_size")]
    pub image_height: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub background: [f64; 3],
}

fn default_workers() -> usize {
    1
}
fn default_image_size() -> usize {
    128
}
fn default_retries() -> usize {
    20
}

/// An eye-on-base camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    pub eye: [f64; 3],
    pub target: [f64; 3],
    /// Refine the extrinsics against the first demonstration frame.
    #[serde(default)]
    pub estimate_from_demo: bool,
    /// Viewpoint randomization for this camera.
    #[serde(default)]
    pub sampler: Option<CameraSampler>,
}

fn default_fov() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub object_pose: Switch,
    pub object_type: ObjectTypeConfig,
    pub camera: Switch,
    pub embodiment: EmbodimentConfig,
    pub appearance: AppearanceConfig,
    pub lighting: Switch,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Switch {
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectTypeConfig {
    pub enabled: bool,
    /// Asset folders holding `model.ply` and `grasps.json`.
    pub assets: Vec<PathBuf>,
    /// Target replaced by the drawn asset; the first target when absent.
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbodimentConfig {
    pub enabled: bool,
    pub robots: Vec<EmbodimentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbodimentEntry {
    pub name: String,
    pub robot: RobotConfig,
    /// Folder of `link_<name>.ply` splats captured at `q_capture`.
    pub links: PathBuf,
    #[serde(default)]
    pub q_capture: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceConfig {
    pub enabled: bool,
    pub sources: Vec<AppearanceSourceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AppearanceSourceConfig {
    ImagePlanes {
        planes: Vec<PlaneConfig>,
        #[serde(default = "default_density")]
        density: f64,
    },
    SplatScene {
        scene: PathBuf,
        #[serde(default)]
        placement: TransformConfig,
    },
}

fn default_density() -> f64 {
    DEFAULT_PLANE_DENSITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneConfig {
    pub image: PathBuf,
    pub origin: [f64; 3],
    pub u_edge: [f64; 3],
    pub v_edge: [f64; 3],
}

impl fmt::Display for GenerationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match toml::to_string_pretty(self) {
            Ok(s) => f.write_str(&s),
            Err(_) => Err(fmt::Error),
        }
    }
}

impl GenerationConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Validation(vec![Issue::new("<config>", e.to_string())]))
    }

    /// Paths relative to `base` become absolute.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.assets.scene);
        fix(&mut self.assets.robot.urdf);
        fix(&mut self.assets.clouds);
        fix(&mut self.assets.demo);
        if let Some(c) = self.assets.cache_dir.as_mut() {
            fix(c);
        }
        self.augment.object_type.assets.iter_mut().for_each(fix);
        for r in &mut self.augment.embodiment.robots {
            fix(&mut r.robot.urdf);
            fix(&mut r.links);
        }
        for s in &mut self.augment.appearance.sources {
            match s {
                AppearanceSourceConfig::ImagePlanes { planes, .. } => planes.iter_mut().for_each(|p| fix(&mut p.image)),
                AppearanceSourceConfig::SplatScene { scene, .. } => fix(scene),
            }
        }
    }

    /// SHA-256 over the config as JSON, with the worker count (which never
    /// changes the output) zeroed.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.generation.workers = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    /// Every violation with its key path; loads the robot and the demo to
    /// resolve cross-references.
    pub fn check(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let mut push = |path: &str, msg: String| issues.push(Issue::new(path, msg));

        let g = &self.generation;
        if g.episodes < 1 {
            push("generation.episodes", "must be at least 1".into());
        }
        if g.workers < 1 {
            push("generation.workers", "must be at least 1".into());
        }
        if g.image_width < 1 {
            push("generation.image_width", "must be positive".into());
        }
        if g.image_height < 1 {
            push("generation.image_height", "must be positive".into());
        }
        if g.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            push("generation.background", "components must lie in [0, 1]".into());
        }
        if let Err(e) = self.planning.validate() {
            push("planning", e.to_string());
        }
        if !(self.task.velocity_epsilon > 0.0) {
            push("task.velocity_epsilon", "must be positive".into());
        }
        if !(self.decomposition.link_threshold >= 0.0) {
            push("decomposition.link_threshold", "must be >= 0".into());
        }
        for (i, r) in self.decomposition.objects.iter().enumerate() {
            if let Err(e) = r.region.validate() {
                push(&format!("decomposition.objects[{i}].region"), e.to_string());
            }
        }
        if self.cameras.is_empty() {
            push("cameras", "at least one camera is required".into());
        }
        for (i, c) in self.cameras.iter().enumerate() {
            if !(c.fov_deg > 0.0 && c.fov_deg < 180.0) {
                push(&format!("cameras[{i}].fov_deg"), "must lie in (0, 180)".into());
            }
            if c.eye == c.target {
                push(&format!("cameras[{i}]"), "eye and target coincide".into());
            }
            if let Some(s) = &c.sampler {
                if let Err(e) = s.validate() {
                    push(&format!("cameras[{i}].sampler"), e.to_string());
                }
            }
            if self.augment.camera.enabled && c.sampler.is_none() {
                push(&format!("cameras[{i}].sampler"), "camera augmentation is enabled but this camera has no sampler".into());
            }
        }
        if let Err(e) = self.alignment.transform.to_similarity() {
            push("alignment.transform", e.to_string());
        }
        if let Err(e) = self.alignment.schedule.validate() {
            push("alignment.schedule", e.to_string());
        }
        if let Some(r) = &self.alignment.robot_region {
            if let Err(e) = r.validate() {
                push("alignment.robot_region", e.to_string());
            }
        }

        for (key, p) in [
            ("assets.scene", &self.assets.scene),
            ("assets.robot.urdf", &self.assets.robot.urdf),
            ("assets.clouds", &self.assets.clouds),
            ("assets.demo", &self.assets.demo),
        ] {
            if !p.exists() {
                push(key, format!("{} does not exist", p.display()));
            }
        }
        let chain = match self.assets.robot.load() {
            Ok(c) => Some(c),
            Err(e) => {
                push("assets.robot", e.to_string());
                None
            }
        };
        let keyframes = match ExpertDemo::load_dir(&self.assets.demo) {
            Ok(demo) => {
                if demo.len() < 2 {
                    push("assets.demo", "needs at least two timesteps".into());
                }
                if let Some(c) = &chain {
                    if demo.dof() != c.dof() {
                        push("assets.demo", format!("joint dimension {} differs from the robot's {}", demo.dof(), c.dof()));
                    }
                }
                if demo.cameras().len() < self.cameras.iter().filter(|c| c.estimate_from_demo).count() {
                    push("assets.demo", "not enough camera folders for estimate_from_demo".into());
                }
                Some(extract_keyframes(&demo, self.task.velocity_epsilon).len())
            }
            Err(e) => {
                push("assets.demo", e.to_string());
                None
            }
        };

        let names: Vec<&str> = self.decomposition.objects.iter().map(|o| o.name.as_str()).collect();
        for (i, t) in self.task.targets.iter().enumerate() {
            let at = |f: &str| format!("task.targets[{i}].{f}");
            if !names.contains(&t.object.as_str()) {
                push(&at("object"), format!("no decomposition object named '{}'", t.object));
            }
            let [a, b] = t.keyframes;
            if a > b || !(a..=b).contains(&t.grasp_keyframe) {
                push(&at("keyframes"), format!("range {a}..={b} must be ordered and contain grasp_keyframe {}", t.grasp_keyframe));
            }
            if let Some(n) = keyframes {
                if b >= n {
                    push(&at("keyframes"), format!("last keyframe {b} beyond the {n} extracted keyframes"));
                }
            }
            if let Err(e) = t.workspace.validate() {
                push(&at("workspace"), e.to_string());
            }
            if !(t.clearance >= 0.0) {
                push(&at("clearance"), "must be >= 0".into());
            }
        }
        if self.augment.object_pose.enabled && self.task.targets.is_empty() {
            push("augment.object_pose", "enabled without task targets".into());
        }

        let ot = &self.augment.object_type;
        if ot.enabled {
            if ot.assets.is_empty() {
                push("augment.object_type.assets", "enabled with no assets".into());
            }
            match &ot.target {
                Some(name) if !self.task.targets.iter().any(|t| &t.object == name) => {
                    push("augment.object_type.target", format!("'{name}' is not a task target"));
                }
                None if self.task.targets.is_empty() => push("augment.object_type.target", "no task target to replace".into()),
                _ => {}
            }
        }
        for (i, a) in ot.assets.iter().enumerate() {
            if !a.join(splatgen_core::augment::MODEL_FILE).exists() || !a.join(splatgen_core::augment::GRASPS_FILE).exists() {
                push(&format!("augment.object_type.assets[{i}]"), format!("{} lacks model.ply or grasps.json", a.display()));
            }
        }

        let em = &self.augment.embodiment;
        if em.enabled && em.robots.is_empty() {
            push("augment.embodiment.robots", "enabled with no robots".into());
        }
        for (i, r) in em.robots.iter().enumerate() {
            let at = format!("augment.embodiment.robots[{i}]");
            match r.robot.load() {
                Ok(c) => {
                    if let Some(q) = &r.q_capture {
                        if q.len() != c.dof() {
                            push(&format!("{at}.q_capture"), format!("has {} values, robot has {} joints", q.len(), c.dof()));
                        }
                    }
                    for l in c.links() {
                        if !r.links.join(format!("link_{l}.ply")).exists() {
                            push(&format!("{at}.links"), format!("missing link_{l}.ply"));
                        }
                    }
                }
                Err(e) => push(&format!("{at}.robot"), e.to_string()),
            }
        }

        let ap = &self.augment.appearance;
        if ap.enabled && ap.sources.is_empty() {
            push("augment.appearance.sources", "enabled with no sources".into());
        }
        for (i, s) in ap.sources.iter().enumerate() {
            let at = format!("augment.appearance.sources[{i}]");
            match s {
                AppearanceSourceConfig::ImagePlanes { planes, density } => {
                    if planes.is_empty() {
                        push(&format!("{at}.planes"), "no planes".into());
                    }
                    if !(*density > 0.0) {
                        push(&format!("{at}.density"), "must be positive".into());
                    }
                    for (j, p) in planes.iter().enumerate() {
                        if !p.image.exists() {
                            push(&format!("{at}.planes[{j}].image"), format!("{} does not exist", p.image.display()));
                        }
                        let (u, v) = (Vector3::from(p.u_edge), Vector3::from(p.v_edge));
                        if !(u.norm() > 0.0 && v.norm() > 0.0) || u.dot(&v).abs() > 1e-9 * u.norm() * v.norm() {
                            push(&format!("{at}.planes[{j}]"), "edges must be non-zero and orthogonal".into());
                        }
                    }
                }
                AppearanceSourceConfig::SplatScene { scene, placement } => {
                    if !scene.exists() {
                        push(&format!("{at}.scene"), format!("{} does not exist", scene.display()));
                    }
                    if let Err(e) = placement.to_similarity() {
                        push(&format!("{at}.placement"), e.to_string());
                    }
                }
            }
        }
        issues
    }
}

/// Parses, resolves paths against the file's folder and checks.
pub fn validate_config(path: impl AsRef<Path>) -> Result<GenerationConfig, PipelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Validation(vec![Issue::new("<config>", format!("{}: {e}", path.display()))]))?;
    let mut config = GenerationConfig::from_toml(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    config.resolve_paths(&std::path::absolute(&base).unwrap_or(base));
    let issues = config.check();
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(PipelineError::Validation(issues))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
