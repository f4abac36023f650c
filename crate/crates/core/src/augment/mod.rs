//! Augmentation operators: object placement, object and embodiment swaps,
//! camera viewpoints, background appearance and lighting. Every sampler is a
//! pure function of its inputs and a seed.

mod appearance;
mod assets;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{CameraModel, Intrinsics};
use crate::splat::LightingParams;

pub use appearance::{apply_appearance, tessellate_plane, AppearanceSource, TexturedPlane, DEFAULT_PLANE_DENSITY, PLANE_THICKNESS};
pub use assets::{
    swap_embodiment, swap_object, Embodiment, GraspBinding, GraspCandidate, ObjectAsset, SwappedObject, GRASPS_FILE, MODEL_FILE,
};

/// Consecutive rejected draws after which placement gives up.
pub const MAX_PLACEMENT_REJECTIONS: usize = 1000;

fn check_interval(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} range must be finite with min <= max, got {r:?}")));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Tabletop region for an object's center, in base-frame meters, and the
/// yaw applied about the object's vertical axis, radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub yaw: [f64; 2],
}

impl Workspace {
    pub fn validate(&self) -> Result<()> {
        check_interval("x", self.x)?;
        check_interval("y", self.y)?;
        check_interval("yaw", self.yaw)
    }
}

/// A drawn object placement: new center `(x, y)` and yaw about the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl ObjectPlacement {
    /// Rigid motion turning an object centered at `center` by `yaw` about the
    /// vertical through its center and moving that center to `(x, y)`,
    /// height unchanged.
    pub fn transform(&self, center: &Point3<f64>) -> Isometry3<f64> {
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw);
        let moved = Vector3::new(self.x, self.y, center.z);
        Isometry3::from_parts(Translation3::from(moved - rot * center.coords), rot)
    }
}

/// Uniform draw in `workspace`, redrawn while the moved center lies closer
/// than `clearance` to any point of `occupied`.
pub fn sample_object_pose(
    workspace: &Workspace,
    center: &Point3<f64>,
    occupied: &[Point3<f64>],
    clearance: f64,
    seed: u64,
) -> Result<(ObjectPlacement, Isometry3<f64>)> {
    workspace.validate()?;
    if !(clearance >= 0.0) {
        return Err(Error::Config(format!("clearance must be >= 0, got {clearance}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_PLACEMENT_REJECTIONS {
        let p = ObjectPlacement {
            x: draw(&mut rng, workspace.x),
            y: draw(&mut rng, workspace.y),
            yaw: draw(&mut rng, workspace.yaw),
        };
        let moved = Point3::new(p.x, p.y, center.z);
        if occupied.iter().all(|o| (o - moved).norm() >= clearance) {
            return Ok((p, p.transform(center)));
        }
    }
    Err(Error::PlacementInfeasible {
        attempts: MAX_PLACEMENT_REJECTIONS,
    })
}

/// Camera viewpoints around a jittered target. The eye sits at spherical
/// coordinates `(radius, polar, azimuth)` about the target in a frame
/// parallel to the base: polar measured from +z, azimuth from +x toward +y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSampler {
    pub target: [f64; 3],
    pub target_half_range: [f64; 3],
    pub radius: f64,
    pub polar: f64,
    pub azimuth: f64,
    pub radius_half_range: f64,
    pub polar_half_range: f64,
    pub azimuth_half_range: f64,
}

impl Default for CameraSampler {
    fn default() -> Self {
        Self {
            target: [0.5, 0.0, 0.0],
            target_half_range: [0.1; 3],
            radius: 1.0,
            polar: std::f64::consts::FRAC_PI_4,
            azimuth: 0.0,
            radius_half_range: 0.2,
            polar_half_range: std::f64::consts::FRAC_PI_6,
            azimuth_half_range: std::f64::consts::FRAC_PI_6,
        }
    }
}

impl CameraSampler {
    /// Every drawn radius stays positive and every polar angle stays strictly
    /// inside `(0, pi)` so the +z up vector is never parallel to the view.
    pub fn validate(&self) -> Result<()> {
        let halves = [
            self.target_half_range[0],
            self.target_half_range[1],
            self.target_half_range[2],
            self.radius_half_range,
            self.polar_half_range,
            self.azimuth_half_range,
        ];
        if halves.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
            return Err(Error::Config("camera sampler half-ranges must be finite and >= 0".into()));
        }
        if self.target.iter().chain([&self.radius, &self.polar, &self.azimuth]).any(|v| !v.is_finite()) {
            return Err(Error::Config("camera sampler centers must be finite".into()));
        }
        if !(self.radius - self.radius_half_range > 0.0) {
            return Err(Error::Config(format!(
                "camera sampler radius {} must exceed its half-range {}",
                self.radius, self.radius_half_range
            )));
        }
        let (lo, hi) = (self.polar - self.polar_half_range, self.polar + self.polar_half_range);
        if !(lo > 0.0 && hi < std::f64::consts::PI) {
            return Err(Error::Config(format!("camera sampler polar range [{lo}, {hi}] must lie inside (0, pi)")));
        }
        Ok(())
    }
}

/// The drawn spherical parameters of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraDraw {
    pub target: [f64; 3],
    pub radius: f64,
    pub polar: f64,
    pub azimuth: f64,
}

impl CameraDraw {
    pub fn eye(&self) -> Point3<f64> {
        let (st, ct) = self.polar.sin_cos();
        let (sp, cp) = self.azimuth.sin_cos();
        Point3::from(Vector3::from(self.target) + self.radius * Vector3::new(st * cp, st * sp, ct))
    }

    /// Looks at the target with +z up; the principal ray hits the target by
    /// construction.
    pub fn camera(&self, intrinsics: Intrinsics) -> Result<CameraModel> {
        CameraModel::look_at(intrinsics, &self.eye(), &Point3::from(self.target), &Vector3::z())
    }
}

pub fn sample_camera(sampler: &CameraSampler, intrinsics: Intrinsics, seed: u64) -> Result<(CameraDraw, CameraModel)> {
    sampler.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut around = |c: f64, h: f64| draw(&mut rng, [c - h, c + h]);
    let target = [
        around(sampler.target[0], sampler.target_half_range[0]),
        around(sampler.target[1], sampler.target_half_range[1]),
        around(sampler.target[2], sampler.target_half_range[2]),
    ];
    let d = CameraDraw {
        target,
        radius: around(sampler.radius, sampler.radius_half_range),
        polar: around(sampler.polar, sampler.polar_half_range),
        azimuth: around(sampler.azimuth, sampler.azimuth_half_range),
    };
    let cam = d.camera(intrinsics)?;
    Ok((d, cam))
}

/// Bounds of the lighting draw.
pub const LIGHT_SCALE_RANGE: [f64; 2] = [0.3, 1.8];
pub const LIGHT_OFFSET_RANGE: [f64; 2] = [-0.3, 0.3];
pub const LIGHT_NOISE_STD: f64 = 0.1;

/// Per-channel scale and offset drawn uniformly, fixed noise level. The
/// per-Gaussian noise itself is drawn when the parameters are applied.
pub fn sample_lighting(seed: u64) -> LightingParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = [0; 3].map(|_| draw(&mut rng, LIGHT_SCALE_RANGE));
    let offset = [0; 3].map(|_| draw(&mut rng, LIGHT_OFFSET_RANGE));
    LightingParams {
        scale,
        offset,
        noise_std: LIGHT_NOISE_STD,
    }
}

#[cfg(test)]
mod tests;
