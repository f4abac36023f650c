use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::descent::{minimize, DescentSchedule};
use crate::error::{Error, Result};
use crate::raster::{grad_camera_loss_with_step, perturb_camera, CameraModel, Image};
use crate::splat::GaussianSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraEstimateOptions {
    pub schedule: DescentSchedule,
    /// Largest acceptable final `(1 - ssim)²`.
    pub max_loss: f64,
    /// Central-difference step for the extrinsic gradient.
    pub fd_step: f64,
}

impl Default for CameraEstimateOptions {
    fn default() -> Self {
        Self {
            schedule: DescentSchedule::default(),
            max_loss: 1e-2,
            fd_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraEstimate {
    pub camera: CameraModel,
    pub loss: f64,
    pub iterations: usize,
}

/// Median depth of splat centers that project into the image, or 1 when
/// none do.
fn pivot_depth(set: &GaussianSet, cam: &CameraModel) -> f64 {
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    let mut depths: Vec<f64> = set
        .positions()
        .iter()
        .filter_map(|p| cam.project_point(&Point3::from(*p)))
        .filter(|&(u, v, z)| u >= 0.0 && v >= 0.0 && u < w && v < h && z >= cam.near())
        .map(|(_, _, z)| z)
        .collect();
    if depths.is_empty() {
        return 1.0;
    }
    depths.sort_by(f64::total_cmp);
    depths[depths.len() / 2]
}

/// Camera whose render of `scene_set` best matches `expert_frame`, starting
/// from `init`. Intrinsics and clip planes are kept.
pub fn estimate_camera(scene_set: &GaussianSet, expert_frame: &Image, init: &CameraModel) -> Result<CameraModel> {
    estimate_camera_with(scene_set, expert_frame, init, &CameraEstimateOptions::default()).map(|e| e.camera)
}

/// Descent runs on `[dt, w]` where `w` rotates the camera about a pivot on
/// its optical axis at the scene's median depth. Compared with rotating
/// about the camera center this removes most of the coupling between
/// sideways motion and pan/tilt.
pub fn estimate_camera_with(
    scene_set: &GaussianSet,
    expert_frame: &Image,
    init: &CameraModel,
    options: &CameraEstimateOptions,
) -> Result<CameraEstimate> {
    if !(options.max_loss >= 0.0) {
        return Err(Error::invalid(format!("max_loss must be >= 0, got {}", options.max_loss)));
    }
    let pivot = Vector3::new(0.0, 0.0, pivot_depth(scene_set, init));
    let outcome = minimize(
        *init,
        &options.schedule,
        |c| {
            let (loss, g) = grad_camera_loss_with_step(scene_set, c, expert_frame, options.fd_step)?;
            let gt = Vector3::new(g[0], g[1], g[2]);
            let gw = Vector3::new(g[3], g[4], g[5]) - pivot.cross(&gt);
            Ok((loss, [gt.x, gt.y, gt.z, gw.x, gw.y, gw.z]))
        },
        |c, d| {
            let w = Vector3::new(d[3], d[4], d[5]);
            let t = Vector3::new(d[0], d[1], d[2]) + pivot.cross(&w);
            perturb_camera(c, &[t.x, t.y, t.z, w.x, w.y, w.z])
        },
    )?;
    let loss = outcome.best_loss;
    if loss > options.max_loss {
        return Err(Error::PoseEstimationFailed { residual: loss });
    }
    Ok(CameraEstimate {
        camera: outcome.best,
        loss,
        iterations: outcome.iterations,
    })
}
