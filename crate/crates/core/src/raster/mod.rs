//! Software splat rasterizer: pinhole cameras, tiled front-to-back
//! compositing, soft masks, and pose gradients of image losses.

mod grad;
mod image;
pub(crate) mod render;
mod ssim;

use nalgebra::{Isometry3, Point3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grad::{grad_mask_loss, mask_loss, perturb_similarity};
pub use image::{Image, RenderedImage};
pub use render::{project_gaussian, render, render_mask, render_serial, Projection, COV_EPSILON, MAX_ALPHA, MIN_TRANSMITTANCE};
pub use ssim::{camera_loss, grad_camera_loss, grad_camera_loss_with_step, perturb_camera, ssim};

/// Pinhole intrinsics; pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels with the given horizontal field of view, principal
    /// point at the image center.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(())
    }

    /// Same field of view at a different resolution.
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let (sx, sy) = (width as f64 / self.width as f64, height as f64 / self.height as f64);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }
}

/// Camera looking down `+z` with `x` right and `y` down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    intrinsics: Intrinsics,
    world_to_cam: Isometry3<f64>,
    near: f64,
    far: f64,
}

impl CameraModel {
    pub const DEFAULT_NEAR: f64 = 0.01;
    pub const DEFAULT_FAR: f64 = 100.0;

    pub fn new(intrinsics: Intrinsics, world_to_cam: Isometry3<f64>) -> Result<Self> {
        Self::with_clip(intrinsics, world_to_cam, Self::DEFAULT_NEAR, Self::DEFAULT_FAR)
    }

    pub fn with_clip(intrinsics: Intrinsics, world_to_cam: Isometry3<f64>, near: f64, far: f64) -> Result<Self> {
        intrinsics.validate()?;
        if !(near > 0.0 && near < far) {
            return Err(Error::invalid(format!("clip range must satisfy 0 < near < far, got {near}..{far}")));
        }
        let v = world_to_cam.translation.vector;
        if !v.iter().all(|x| x.is_finite()) || !world_to_cam.rotation.coords.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("camera pose must be finite"));
        }
        Ok(Self {
            intrinsics,
            world_to_cam,
            near,
            far,
        })
    }

    /// Camera at `eye` facing `target`; image up follows `up` projected
    /// onto the image plane. Falls back to another up axis when `up` is
    /// parallel to the viewing direction.
    pub fn look_at(intrinsics: Intrinsics, eye: &Point3<f64>, target: &Point3<f64>, up: &Vector3<f64>) -> Result<Self> {
        Self::new(intrinsics, look_at_pose(eye, target, up)?)
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn world_to_cam(&self) -> &Isometry3<f64> {
        &self.world_to_cam
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        self.world_to_cam.inverse_transform_point(&Point3::origin())
    }

    /// Unit optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.world_to_cam.rotation.inverse() * Vector3::z()
    }

    pub fn with_pose(&self, world_to_cam: Isometry3<f64>) -> Result<Self> {
        Self::with_clip(self.intrinsics, world_to_cam, self.near, self.far)
    }

    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Result<Self> {
        Self::with_clip(intrinsics, self.world_to_cam, self.near, self.far)
    }

    /// Pixel coordinates and depth of a world point, `None` behind the camera.
    pub fn project_point(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_cam * p;
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy, c.z))
    }
}

/// World-to-camera transform for a camera at `eye` facing `target`.
pub fn look_at_pose(eye: &Point3<f64>, target: &Point3<f64>, up: &Vector3<f64>) -> Result<Isometry3<f64>> {
    let forward = target - eye;
    let dist = forward.norm();
    if !(dist > 1e-12) {
        return Err(Error::invalid("look-at eye and target coincide"));
    }
    let z = forward / dist;
    let mut x = z.cross(up);
    if x.norm() < 1e-9 {
        for alt in [Vector3::y(), Vector3::x()] {
            x = z.cross(&alt);
            if x.norm() >= 1e-9 {
                break;
            }
        }
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let cam_to_world = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[x, y, z]));
    let rotation = UnitQuaternion::from_rotation_matrix(&cam_to_world).inverse();
    let translation = -(rotation * eye.coords);
    Ok(Isometry3::from_parts(translation.into(), rotation))
}
