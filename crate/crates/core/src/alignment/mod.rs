//! Registration of a reconstruction's frame to the robot base frame, and
//! deployed-camera pose recovery.
//!
//! Refinement and camera estimation share one descent loop that returns
//! the lowest-loss iterate, so the reported loss never exceeds the loss at
//! the initial guess.

mod camera;
mod descent;
mod icp;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

pub use camera::{estimate_camera, estimate_camera_with, CameraEstimate, CameraEstimateOptions};
pub use descent::DescentSchedule;
pub use icp::{icp_register, umeyama, ICP_MAX_ITERATIONS, ICP_RMS_TOLERANCE};

use crate::error::{Error, Result};
use crate::kinematics::{link_points_world, KinematicChain, LinkPointClouds};
use crate::raster::{grad_mask_loss, perturb_similarity, render_mask, CameraModel, Image, Intrinsics};
use crate::splat::{apply_similarity, GaussianSet, SimilarityTransform};

/// Placement of the canonical views around the robot base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewRig {
    pub count: usize,
    pub elevation_deg: f64,
    /// Camera distance as a multiple of the robot's bounding radius.
    pub radius_factor: f64,
    pub fov_deg: f64,
    pub resolution: usize,
    pub dilation_px: usize,
}

impl Default for ViewRig {
    fn default() -> Self {
        Self {
            count: 4,
            elevation_deg: 30.0,
            radius_factor: 1.5,
            fov_deg: 90.0,
            resolution: 256,
            dilation_px: 2,
        }
    }
}

/// Evenly spaced azimuths starting at 0, fixed elevation, all looking at
/// the base origin with +z up. The bounding radius is taken over the link
/// points at the default configuration.
pub fn canonical_views(chain: &KinematicChain, clouds: &LinkPointClouds, rig: &ViewRig) -> Result<Vec<CameraModel>> {
    if rig.count == 0 || rig.resolution == 0 || !(rig.radius_factor > 0.0) {
        return Err(Error::invalid(format!("invalid view rig {rig:?}")));
    }
    let radius = link_points_world(chain, chain.q_default(), clouds)?
        .iter()
        .flatten()
        .map(|p| p.coords.norm())
        .fold(0.0, f64::max);
    if !(radius > 0.0) {
        return Err(Error::DegenerateGeometry("link clouds are empty or sit at the base origin".into()));
    }
    let intrinsics = Intrinsics::from_fov(rig.resolution, rig.resolution, rig.fov_deg);
    let dist = rig.radius_factor * radius;
    let el = rig.elevation_deg.to_radians();
    (0..rig.count)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / rig.count as f64;
            let eye = Point3::new(dist * el.cos() * az.cos(), dist * el.cos() * az.sin(), dist * el.sin());
            CameraModel::look_at(intrinsics, &eye, &Point3::origin(), &Vector3::z())
        })
        .collect()
}

/// Binary mask of link points posed at `q`: every point in front of the
/// near plane stamps a filled disc of radius `dilation_px` (its nearest
/// pixel is always set).
pub fn render_reference_mask(
    chain: &KinematicChain,
    q: &[f64],
    clouds: &LinkPointClouds,
    cam: &CameraModel,
    dilation_px: usize,
) -> Result<Image> {
    let (w, h) = (cam.width(), cam.height());
    let mut mask = Image::new(w, h, 1);
    let r = dilation_px as f64;
    for p in link_points_world(chain, q, clouds)?.iter().flatten() {
        let Some((u, v, depth)) = cam.project_point(p) else { continue };
        if depth < cam.near() {
            continue;
        }
        let (x0, x1) = ((u - r).ceil().max(0.0), (u + r).floor().min(w as f64 - 1.0));
        let (y0, y1) = ((v - r).ceil().max(0.0), (v + r).floor().min(h as f64 - 1.0));
        if x0 <= x1 && y0 <= y1 {
            for y in y0 as usize..=y1 as usize {
                for x in x0 as usize..=x1 as usize {
                    let (dx, dy) = (x as f64 - u, y as f64 - v);
                    if dx * dx + dy * dy <= r * r {
                        mask.set(x, y, 0, 1.0);
                    }
                }
            }
        }
        let (nx, ny) = (u.round(), v.round());
        if nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64 {
            mask.set(nx as usize, ny as usize, 0, 1.0);
        }
    }
    Ok(mask)
}

/// Outcome of mask-based refinement. `transform` maps the reconstruction
/// frame to the base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub transform: SimilarityTransform,
    /// Mean over views of the per-pixel squared mask difference at `transform`.
    pub final_loss: f64,
    pub initial_loss: f64,
    pub per_view_losses: Vec<f64>,
    pub iterations: usize,
    pub view_count: usize,
    /// The loss never dropped below its initial value early on.
    pub diverged: bool,
    /// Only one view constrained the fit.
    pub single_view: bool,
}

/// Serialized form of an [`AlignmentResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// `[w, x, y, z]`.
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
    pub scale: f64,
    pub final_loss: f64,
    pub initial_loss: f64,
    pub per_view_losses: Vec<f64>,
    pub iterations: usize,
    pub view_count: usize,
    pub diverged: bool,
    pub single_view: bool,
}

impl AlignmentResult {
    pub fn report(&self) -> AlignmentReport {
        let q = self.transform.rotation.quaternion();
        let t = self.transform.translation;
        AlignmentReport {
            rotation_wxyz: [q.w, q.i, q.j, q.k],
            translation: [t.x, t.y, t.z],
            scale: self.transform.scale,
            final_loss: self.final_loss,
            initial_loss: self.initial_loss,
            per_view_losses: self.per_view_losses.clone(),
            iterations: self.iterations,
            view_count: self.view_count,
            diverged: self.diverged,
            single_view: self.single_view,
        }
    }
}

/// Refines `init` so the transformed robot splat's soft masks match
/// reference masks of the link clouds at the default configuration.
pub fn refine_alignment(
    robot_set: &GaussianSet,
    chain: &KinematicChain,
    clouds: &LinkPointClouds,
    cams: &[CameraModel],
    init: &SimilarityTransform,
    dilation_px: usize,
    schedule: &DescentSchedule,
) -> Result<AlignmentResult> {
    let targets = cams
        .iter()
        .map(|c| render_reference_mask(chain, chain.q_default(), clouds, c, dilation_px))
        .collect::<Result<Vec<_>>>()?;
    refine_alignment_to_targets(robot_set, cams, &targets, init, schedule)
}

/// As [`refine_alignment`] with caller-supplied single-channel targets.
pub fn refine_alignment_to_targets(
    robot_set: &GaussianSet,
    cams: &[CameraModel],
    targets: &[Image],
    init: &SimilarityTransform,
    schedule: &DescentSchedule,
) -> Result<AlignmentResult> {
    if robot_set.is_empty() {
        return Err(Error::invalid("robot splat is empty"));
    }
    let outcome = descent::minimize(
        *init,
        schedule,
        |t| grad_mask_loss(robot_set, t, cams, targets),
        |t, d| Ok(perturb_similarity(t, d)),
    )?;
    let moved = apply_similarity(robot_set, &outcome.best);
    let per_view_losses = cams
        .iter()
        .zip(targets)
        .map(|(c, t)| render_mask(&moved, c).mean_squared_diff(t))
        .collect::<Result<Vec<_>>>()?;
    let final_loss = per_view_losses.iter().sum::<f64>() / cams.len() as f64;
    if outcome.stalled {
        log::warn!("alignment loss did not decrease within {} steps of the initial guess", schedule.patience);
    }
    if cams.len() == 1 {
        log::warn!("alignment constrained by a single view");
    }
    Ok(AlignmentResult {
        transform: outcome.best,
        final_loss,
        initial_loss: outcome.initial_loss,
        per_view_losses,
        iterations: outcome.iterations,
        view_count: cams.len(),
        diverged: outcome.stalled,
        single_view: cams.len() == 1,
    })
}
