//! Asset preparation (alignment, decomposition, shared lookups) and
//! parallel, seed-deterministic episode generation.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use splatgen_core::alignment::{canonical_views, estimate_camera, icp_register, refine_alignment, AlignmentReport};
use splatgen_core::augment::{
    apply_appearance, sample_camera, sample_lighting, sample_object_pose, swap_embodiment, swap_object, AppearanceSource, CameraDraw,
    Embodiment, GraspBinding, ObjectAsset, ObjectPlacement, TexturedPlane,
};
use splatgen_core::decompose::{decompose, repose_robot, SceneDecomposition};
use splatgen_core::kinematics::{link_points_world, KinematicChain, LinkPointClouds};
use splatgen_core::raster::{render, CameraModel, Image, Intrinsics};
use splatgen_core::splat::{load_splat, recolor_diffuse, LightingParams};
use splatgen_core::trajectory::{
    camera_dir_name, derive_actions, extract_keyframes, plan_trajectory, transform_keyframes, Action, ExpertDemo, Keyframe,
    PlannedTrajectory, StateRecord,
};
use splatgen_core::{apply_similarity, merge, Error as CoreError, GaussianSet, SimilarityTransform};

use crate::config::{hex, AlignmentMethod, AppearanceSourceConfig, GenerationConfig};
use crate::episode::{write_episode, EpisodeData};
use crate::error::{PipelineError, Result};
use crate::seeds::{attempt_seed, episode_seed, sub_seed};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EPISODES_DIR: &str = "episodes";

pub fn episode_dir_name(index: usize) -> String {
    format!("episode_{index:06}")
}

/// Robot, demonstration and raw scene as loaded from disk.
pub struct BaseAssets {
    pub chain: KinematicChain,
    pub clouds: LinkPointClouds,
    pub demo: ExpertDemo,
    pub keyframes: Vec<Keyframe>,
    pub scene: GaussianSet,
}

pub fn load_base(config: &GenerationConfig) -> Result<BaseAssets> {
    let chain = config.assets.robot.load()?;
    let clouds = LinkPointClouds::load_dir(&config.assets.clouds, &chain, config.decomposition.link_threshold)?;
    let demo = ExpertDemo::load_dir(&config.assets.demo)?;
    let keyframes = extract_keyframes(&demo, config.task.velocity_epsilon);
    let scene = load_splat(&config.assets.scene)?;
    Ok(BaseAssets {
        chain,
        clouds,
        demo,
        keyframes,
        scene,
    })
}

fn report_transform(r: &AlignmentReport) -> Result<SimilarityTransform> {
    let [w, x, y, z] = r.rotation_wxyz;
    Ok(SimilarityTransform::new(
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z)),
        Vector3::from(r.translation),
        r.scale,
    )?)
}

/// ICP from the configured initial transform (unless skipped), then mask
/// refinement over the canonical views.
pub fn estimate_alignment(config: &GenerationConfig, base: &BaseAssets) -> Result<AlignmentReport> {
    let a = &config.alignment;
    let init = a.transform.to_similarity()?;
    let robot_set = match &a.robot_region {
        Some(region) => {
            let idx: Vec<usize> = (0..base.scene.len()).filter(|&i| region.contains(&base.scene.positions()[i])).collect();
            base.scene.select(&idx)
        }
        None => base.scene.clone(),
    };
    let start = if a.skip_icp {
        init
    } else {
        let source: Vec<Point3<f64>> = robot_set.positions().iter().map(|p| Point3::from(*p)).collect();
        let target: Vec<Point3<f64>> = link_points_world(&base.chain, base.chain.q_default(), &base.clouds)?
            .into_iter()
            .flatten()
            .collect();
        icp_register(&source, &target, &init)?
    };
    let cams = canonical_views(&base.chain, &base.clouds, &a.rig)?;
    let result = refine_alignment(&robot_set, &base.chain, &base.clouds, &cams, &start, a.rig.dilation_px, &a.schedule)?;
    if result.diverged {
        warn!("alignment loss did not decrease during the first steps");
    }
    Ok(result.report())
}

fn hash_file(h: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

/// Content hash of everything the estimated alignment depends on.
fn alignment_key(config: &GenerationConfig) -> Result<String> {
    let mut h = Sha256::new();
    hash_file(&mut h, &config.assets.scene)?;
    hash_file(&mut h, &config.assets.robot.urdf)?;
    let dir = &config.assets.clouds;
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    for p in entries {
        h.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        hash_file(&mut h, &p)?;
    }
    h.update(serde_json::to_vec(&config.alignment).expect("alignment config serializes"));
    h.update(serde_json::to_vec(&config.assets.robot).expect("robot config serializes"));
    h.update(config.decomposition.link_threshold.to_le_bytes());
    Ok(hex(&h.finalize()))
}

/// Scene-to-base transform: as configured, or estimated once and cached.
pub fn resolve_alignment(config: &GenerationConfig, base: &BaseAssets) -> Result<SimilarityTransform> {
    if config.alignment.method == AlignmentMethod::Fixed {
        return Ok(config.alignment.transform.to_similarity()?);
    }
    let cache = match &config.assets.cache_dir {
        Some(dir) => Some(dir.join(format!("alignment-{}.json", alignment_key(config)?))),
        None => None,
    };
    if let Some(path) = cache.as_ref().filter(|p| p.exists()) {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let report: AlignmentReport =
            serde_json::from_str(&text).map_err(|e| CoreError::format(path.display().to_string(), e.to_string()))?;
        info!("using cached alignment {}", path.display());
        return report_transform(&report);
    }
    let report = estimate_alignment(config, base)?;
    if let Some(path) = cache {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
    }
    report_transform(&report)
}

/// Aligned scene split into robot links, configured objects and background.
pub fn build_decomposition(config: &GenerationConfig, base: &BaseAssets, transform: &SimilarityTransform) -> Result<SceneDecomposition> {
    let aligned = if *transform == SimilarityTransform::identity() {
        base.scene.clone()
    } else {
        apply_similarity(&base.scene, transform)
    };
    Ok(decompose(&aligned, &base.chain, &base.clouds, &config.decomposition.objects)?)
}

fn static_parts(d: &SceneDecomposition) -> Result<GaussianSet> {
    Ok(merge(std::iter::once(&d.background).chain(d.objects.iter()))?)
}

/// Whole scene with the robot at `q`.
pub fn scene_at(d: &SceneDecomposition, chain: &KinematicChain, q: &[f64]) -> Result<GaussianSet> {
    let robot = repose_robot(d, chain, q)?;
    Ok(merge([&static_parts(d)?, &robot])?)
}

#[derive(Debug, Clone)]
pub struct PreparedTarget {
    pub object: usize,
    pub name: String,
    pub center: Point3<f64>,
    pub affected: Range<usize>,
    pub grasp: usize,
}

/// Everything episodes share, immutable during generation.
pub struct Prepared {
    pub config: GenerationConfig,
    pub base: BaseAssets,
    pub decomposition: SceneDecomposition,
    pub cameras: Vec<CameraModel>,
    pub backgrounds: Vec<GaussianSet>,
    pub assets: Vec<ObjectAsset>,
    pub embodiments: Vec<(String, Embodiment)>,
    pub targets: Vec<PreparedTarget>,
    pub swap_target: Option<usize>,
}

fn intrinsics(config: &GenerationConfig, fov: f64) -> Intrinsics {
    Intrinsics::from_fov(config.generation.image_width, config.generation.image_height, fov)
}

fn base_camera(intr: Intrinsics, eye: [f64; 3], target: [f64; 3]) -> Result<CameraModel> {
    Ok(CameraModel::look_at(intr, &Point3::from(eye), &Point3::from(target), &Vector3::z())?)
}

pub fn prepare(config: &GenerationConfig) -> Result<Prepared> {
    let base = load_base(config)?;
    let transform = resolve_alignment(config, &base)?;
    let decomposition = build_decomposition(config, &base, &transform)?;
    let degree = decomposition.background.sh_degree();

    let mut cameras = Vec::new();
    for (i, c) in config.cameras.iter().enumerate() {
        let intr = intrinsics(config, c.fov_deg);
        if !c.estimate_from_demo {
            cameras.push(base_camera(intr, c.eye, c.target)?);
            continue;
        }
        let path = base
            .demo
            .image_path(&camera_dir_name(i), 0)
            .ok_or_else(|| CoreError::InvalidArgument("demonstration has no frames on disk".into()))?;
        let frame = Image::load_png(&path, 3)?;
        let init = base_camera(Intrinsics::from_fov(frame.width(), frame.height(), c.fov_deg), c.eye, c.target)?;
        let scene = scene_at(&decomposition, &base.chain, &base.demo.steps()[0].q)?;
        let est = estimate_camera(&scene, &frame, &init)?;
        cameras.push(CameraModel::new(intr, *est.world_to_cam())?);
    }

    let mut backgrounds = Vec::new();
    for s in &config.augment.appearance.sources {
        let source = match s {
            AppearanceSourceConfig::ImagePlanes { planes, density } => AppearanceSource::ImagePlanes {
                planes: planes
                    .iter()
                    .map(|p| TexturedPlane {
                        image: p.image.clone(),
                        origin: p.origin,
                        u_edge: p.u_edge,
                        v_edge: p.v_edge,
                    })
                    .collect(),
                density: *density,
            },
            AppearanceSourceConfig::SplatScene { scene, placement } => AppearanceSource::SplatScene {
                scene: load_splat(scene)?,
                placement: placement.to_similarity()?,
            },
        };
        backgrounds.push(apply_appearance(&decomposition, &source)?.background);
    }

    let assets = config
        .augment
        .object_type
        .assets
        .iter()
        .map(|p| ObjectAsset::load_dir(p).map(|mut a| {
            if a.splat.sh_degree() != degree {
                a.splat = a.splat.with_sh_degree(degree).expect("valid degree");
            }
            a
        }))
        .collect::<splatgen_core::Result<Vec<_>>>()?;

    let mut embodiments = Vec::new();
    for r in &config.augment.embodiment.robots {
        let chain = r.robot.load()?;
        let sets = chain
            .links()
            .iter()
            .map(|l| load_splat(r.links.join(format!("link_{l}.ply"))))
            .collect::<splatgen_core::Result<Vec<_>>>()?;
        let q = r.q_capture.clone().unwrap_or_else(|| chain.q_default().to_vec());
        let (_, emb) = swap_embodiment(&base.keyframes, chain, sets, q)?;
        embodiments.push((r.name.clone(), emb));
    }

    let mut targets = Vec::new();
    for t in &config.task.targets {
        let object = decomposition
            .object_names
            .iter()
            .position(|n| n == &t.object)
            .ok_or_else(|| CoreError::Config(format!("no object named '{}'", t.object)))?;
        let set = &decomposition.objects[object];
        if set.is_empty() {
            return Err(CoreError::Config(format!("object '{}' has no Gaussians in its region", t.object)).into());
        }
        let center = set.positions().iter().fold(Vector3::zeros(), |a, p| a + p) / set.len() as f64;
        if t.keyframes[1] >= base.keyframes.len() {
            return Err(CoreError::Config(format!(
                "target '{}' keyframes reach {} but only {} keyframes were extracted",
                t.object,
                t.keyframes[1],
                base.keyframes.len()
            ))
            .into());
        }
        targets.push(PreparedTarget {
            object,
            name: t.object.clone(),
            center: Point3::from(center),
            affected: t.keyframes[0]..t.keyframes[1] + 1,
            grasp: t.grasp_keyframe,
        });
    }
    let swap_target = if config.augment.object_type.enabled {
        match &config.augment.object_type.target {
            Some(name) => targets.iter().position(|t| &t.name == name),
            None => (!targets.is_empty()).then_some(0),
        }
    } else {
        None
    };

    Ok(Prepared {
        config: config.clone(),
        base,
        decomposition,
        cameras,
        backgrounds,
        assets,
        embodiments,
        targets,
        swap_target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub object: String,
    pub placement: ObjectPlacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSwapRecord {
    pub target: String,
    pub asset: String,
    pub grasp_index: usize,
}

/// What the samplers drew for one episode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeParameters {
    pub placements: Vec<PlacementRecord>,
    pub object_swap: Option<ObjectSwapRecord>,
    pub cameras: Vec<Option<CameraDraw>>,
    pub lighting: Option<LightingParams>,
    pub appearance_source: Option<usize>,
    pub embodiment: Option<String>,
}

/// Everything an attempt decided before rendering.
pub struct EpisodePlan<'a> {
    pub parameters: EpisodeParameters,
    /// Scene after every augmentation, robot at its capture configuration.
    pub scene: SceneDecomposition,
    pub chain: &'a KinematicChain,
    pub cameras: Vec<CameraModel>,
    pub trajectory: PlannedTrajectory,
    pub records: Vec<StateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub seed: u64,
    /// Why the attempt was re-sampled; absent for the attempt that succeeded.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub seed: u64,
    pub directory: String,
    pub frame_count: usize,
    pub keyframe_steps: Vec<usize>,
    pub planning_succeeded: bool,
    pub attempts: Vec<AttemptRecord>,
    pub parameters: EpisodeParameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub episodes: Vec<EpisodeRecord>,
}

fn pick(seed: u64, n: usize) -> usize {
    (seed % n as u64) as usize
}

/// Failures that a fresh draw may avoid.
fn retriable(e: &PipelineError) -> bool {
    matches!(
        e,
        PipelineError::Core(
            CoreError::PlanningFailed { .. }
                | CoreError::PlacementInfeasible { .. }
                | CoreError::NoFeasibleGrasp { .. }
                | CoreError::UnreachableTarget { .. }
                | CoreError::Reachability(_)
        )
    )
}

fn recolor_all(d: &mut SceneDecomposition, p: &LightingParams, seed: u64) -> Result<()> {
    d.background = recolor_diffuse(&d.background, p, sub_seed(seed, "lighting/background"))?;
    for (i, o) in d.objects.iter_mut().enumerate() {
        *o = recolor_diffuse(o, p, sub_seed(seed, &format!("lighting/object/{i}")))?;
    }
    for (i, l) in d.robot_links.iter_mut().enumerate() {
        *l = recolor_diffuse(l, p, sub_seed(seed, &format!("lighting/link/{i}")))?;
    }
    Ok(())
}

impl Prepared {
    /// One draw of every enabled operator followed by planning. Rendering is
    /// left to [`Prepared::render`], so states can be re-derived cheaply.
    pub fn plan(&self, seed: u64) -> Result<EpisodePlan<'_>> {
        let cfg = &self.config;
        let aug = &cfg.augment;
        let mut params = EpisodeParameters::default();
        let mut d = self.decomposition.clone();
        let mut kfs = self.base.keyframes.clone();

        let mut chain = &self.base.chain;
        let mut q_start = self.base.demo.steps()[0].q.clone();
        if aug.embodiment.enabled {
            let (name, emb) = &self.embodiments[pick(sub_seed(seed, "embodiment"), self.embodiments.len())];
            d = emb.install(&d)?;
            if emb.chain != self.base.chain {
                q_start = emb.q_capture.clone();
            }
            chain = &emb.chain;
            params.embodiment = Some(name.clone());
        }

        if aug.appearance.enabled {
            let i = pick(sub_seed(seed, "appearance"), self.backgrounds.len());
            d.background = self.backgrounds[i].clone();
            params.appearance_source = Some(i);
        }

        let target_ids: Vec<usize> = self.targets.iter().map(|t| t.object).collect();
        let mut occupied: Vec<Point3<f64>> = d
            .objects
            .iter()
            .enumerate()
            .filter(|(i, s)| !target_ids.contains(i) && !s.is_empty())
            .map(|(_, s)| Point3::from(s.positions().iter().fold(Vector3::zeros(), |a, p| a + p) / s.len() as f64))
            .collect();
        for (ti, t) in self.targets.iter().enumerate() {
            let tc = &cfg.task.targets[ti];
            let g = if aug.object_pose.enabled {
                let (p, g) = sample_object_pose(&tc.workspace, &t.center, &occupied, tc.clearance, sub_seed(seed, &format!("object_pose/{}", t.name)))?;
                params.placements.push(PlacementRecord {
                    object: t.name.clone(),
                    placement: p,
                });
                g
            } else {
                Isometry3::identity()
            };
            occupied.push(g * t.center);
            if self.swap_target == Some(ti) {
                let asset = &self.assets[pick(sub_seed(seed, "object_type"), self.assets.len())];
                let object_pose = g * Isometry3::from_parts(Translation3::from(t.center.coords), UnitQuaternion::identity());
                let binding = GraspBinding {
                    grasp: t.grasp,
                    affected: t.affected.clone(),
                };
                let swapped = swap_object(&kfs, asset, &object_pose, &binding, chain, &q_start)?;
                kfs = swapped.keyframes;
                d.objects[t.object] = swapped.splat;
                params.object_swap = Some(ObjectSwapRecord {
                    target: t.name.clone(),
                    asset: asset.name.clone(),
                    grasp_index: swapped.grasp_index,
                });
            } else if g != Isometry3::identity() {
                kfs = transform_keyframes(&kfs, &g, t.affected.clone());
                d.objects[t.object] = apply_similarity(&d.objects[t.object], &SimilarityTransform::from_isometry(&g));
            }
        }

        if aug.lighting.enabled {
            let p = sample_lighting(sub_seed(seed, "lighting"));
            recolor_all(&mut d, &p, seed)?;
            params.lighting = Some(p);
        }

        let mut cams = Vec::with_capacity(self.cameras.len());
        for (i, (base_cam, c)) in self.cameras.iter().zip(&cfg.cameras).enumerate() {
            match (&c.sampler, aug.camera.enabled) {
                (Some(s), true) => {
                    let (draw, cam) = sample_camera(s, *base_cam.intrinsics(), sub_seed(seed, &format!("camera/{i}")))?;
                    params.cameras.push(Some(draw));
                    cams.push(cam);
                }
                _ => {
                    params.cameras.push(None);
                    cams.push(base_cam.clone());
                }
            }
        }

        let trajectory = plan_trajectory(chain, &kfs, &q_start, &cfg.planning)?;
        let actions = derive_actions(&trajectory);
        let records = trajectory
            .demo_steps()
            .iter()
            .enumerate()
            .map(|(k, s)| StateRecord::from_step(s, Some(actions.get(k).copied().unwrap_or(Action::hold(s.gripper)))))
            .collect();
        Ok(EpisodePlan {
            parameters: params,
            scene: d,
            chain,
            cameras: cams,
            trajectory,
            records,
        })
    }

    /// Frames of every camera at every planned step.
    pub fn render(&self, plan: EpisodePlan<'_>) -> Result<EpisodeData> {
        let g = &self.config.generation;
        let statics = static_parts(&plan.scene)?;
        let mut frames = vec![Vec::with_capacity(plan.trajectory.len()); plan.cameras.len()];
        for step in &plan.trajectory.steps {
            let robot = repose_robot(&plan.scene, plan.chain, &step.q)?;
            let scene = merge([&statics, &robot])?;
            for (c, cam) in plan.cameras.iter().enumerate() {
                frames[c].push(render(&scene, cam, g.background).pixels.to_bytes());
            }
        }
        Ok(EpisodeData {
            records: plan.records,
            width: g.image_width,
            height: g.image_height,
            frames,
        })
    }

    pub fn attempt(&self, seed: u64) -> Result<(EpisodeParameters, Vec<usize>, EpisodeData)> {
        let plan = self.plan(seed)?;
        let (parameters, keyframe_steps) = (plan.parameters.clone(), plan.trajectory.keyframe_steps.clone());
        Ok((parameters, keyframe_steps, self.render(plan)?))
    }

    /// Draws until an attempt plans successfully or the retry cap is hit.
    pub fn episode(&self, index: usize) -> Result<(EpisodeRecord, EpisodeData)> {
        let seed = episode_seed(self.config.generation.seed, index);
        let mut attempts = Vec::new();
        let mut last = String::new();
        for a in 0..=self.config.generation.max_retries {
            let s = attempt_seed(seed, a);
            match self.attempt(s) {
                Ok((parameters, keyframe_steps, data)) => {
                    attempts.push(AttemptRecord { seed: s, error: None });
                    let record = EpisodeRecord {
                        index,
                        seed,
                        directory: format!("{EPISODES_DIR}/{}", episode_dir_name(index)),
                        frame_count: data.len(),
                        keyframe_steps,
                        planning_succeeded: true,
                        attempts,
                        parameters,
                    };
                    return Ok((record, data));
                }
                Err(e) if retriable(&e) => {
                    last = e.to_string();
                    attempts.push(AttemptRecord {
                        seed: s,
                        error: Some(last.clone()),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Err(PipelineError::RetriesExhausted {
            episode: index,
            attempts: attempts.len(),
            last,
        })
    }
}

/// Generates every episode into `out/episodes/` with `workers` threads and
/// writes `out/manifest.json`. Output bytes do not depend on `workers`.
pub fn generate(config: &GenerationConfig, out: &Path) -> Result<DatasetManifest> {
    let prepared = prepare(config)?;
    generate_prepared(&prepared, out)
}

pub fn generate_prepared(prepared: &Prepared, out: &Path) -> Result<DatasetManifest> {
    let cfg = &prepared.config;
    let episodes_dir = out.join(EPISODES_DIR);
    fs::create_dir_all(&episodes_dir).map_err(|e| PipelineError::io(&episodes_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.generation.workers.max(1))
        .build()
        .map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
    let results: Vec<Result<EpisodeRecord>> = pool.install(|| {
        (0..cfg.generation.episodes)
            .into_par_iter()
            .map(|e| {
                let (record, data) = prepared.episode(e)?;
                write_episode(&data, &episodes_dir.join(episode_dir_name(e)))?;
                info!("episode {e}: {} frames", record.frame_count);
                Ok(record)
            })
            .collect()
    });
    let episodes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.content_hash(),
        episodes,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
    Ok(manifest)
}
