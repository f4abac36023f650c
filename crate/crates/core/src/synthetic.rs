//! Procedural splats built from point samples, for fixtures and demos.

use nalgebra::{Point3, Vector3};

use crate::error::Result;
use crate::kinematics::{link_points_world, KinematicChain, LinkPointClouds};
use crate::splat::{Gaussian, GaussianSet};

/// Distinct diffuse colors cycled over links.
pub const LINK_PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.85, 0.85],
    [0.25, 0.25, 0.3],
    [0.9, 0.55, 0.1],
    [0.2, 0.45, 0.85],
    [0.75, 0.2, 0.25],
    [0.3, 0.7, 0.35],
];

/// One isotropic Gaussian per point.
pub fn splat_from_points(points: &[Point3<f64>], radius: f64, opacity: f64, rgb: [f64; 3], sh_degree: usize) -> Result<GaussianSet> {
    GaussianSet::from_gaussians(
        sh_degree,
        points.iter().map(|p| Gaussian::isotropic(p.coords, radius, opacity, rgb, sh_degree)),
    )
}

/// Robot splat posed at `q` in the base frame: one Gaussian per link point,
/// links in chain order, each link tinted from [`LINK_PALETTE`].
pub fn robot_splat(
    chain: &KinematicChain,
    clouds: &LinkPointClouds,
    q: &[f64],
    radius: f64,
    opacity: f64,
    sh_degree: usize,
) -> Result<GaussianSet> {
    let per_link = link_points_world(chain, q, clouds)?;
    let mut out = GaussianSet::with_capacity(sh_degree, per_link.iter().map(Vec::len).sum())?;
    for (l, pts) in per_link.iter().enumerate() {
        let rgb = LINK_PALETTE[l % LINK_PALETTE.len()];
        for p in pts {
            out.push(Gaussian::isotropic(p.coords, radius, opacity, rgb, sh_degree))?;
        }
    }
    Ok(out)
}

/// Capsule radius, sample spacing and Gaussian radius of [`robot_fixture`].
pub const FIXTURE_LINK_RADIUS: f64 = 0.03;
pub const FIXTURE_SPACING: f64 = 0.03;
pub const FIXTURE_SPLAT_RADIUS: f64 = 0.008;
pub const FIXTURE_LINK_THRESHOLD: f64 = 0.03;

/// Capsule link clouds for `chain` and a matching robot splat at the
/// default configuration in the base frame. The sizes are chosen so the
/// splat's soft masks and 2 px dilated point masks at 256² share nearly the
/// same optimum (sub-millimeter apart for a 1 m arm).
pub fn robot_fixture(chain: &KinematicChain) -> Result<(LinkPointClouds, GaussianSet)> {
    let clouds = crate::kinematics::skeleton_clouds(chain, FIXTURE_LINK_RADIUS, FIXTURE_SPACING, FIXTURE_LINK_THRESHOLD)?;
    let set = robot_splat(chain, &clouds, chain.q_default(), FIXTURE_SPLAT_RADIUS, 0.99, 0)?;
    Ok((clouds, set))
}

/// Single-sided horizontal checkerboard of Gaussians at height `z`,
/// spanning `[-half_x, half_x] x [-half_y, half_y]` around `(cx, cy)`.
pub fn checker_plane(
    center: &Vector3<f64>,
    half_x: f64,
    half_y: f64,
    spacing: f64,
    cell: f64,
    colors: [[f64; 3]; 2],
    sh_degree: usize,
) -> Result<GaussianSet> {
    let (nx, ny) = ((2.0 * half_x / spacing).round() as usize, (2.0 * half_y / spacing).round() as usize);
    let mut out = GaussianSet::with_capacity(sh_degree, (nx + 1) * (ny + 1))?;
    for i in 0..=nx {
        for j in 0..=ny {
            let (x, y) = (-half_x + i as f64 * spacing, -half_y + j as f64 * spacing);
            let parity = ((x / cell).floor() as i64 + (y / cell).floor() as i64).rem_euclid(2) as usize;
            let g = Gaussian {
                position: center + Vector3::new(x, y, 0.0),
                rotation: nalgebra::UnitQuaternion::identity(),
                scale: Vector3::new(0.6 * spacing, 0.6 * spacing, 0.1 * spacing),
                opacity: 0.95,
                sh: crate::splat::Gaussian::isotropic(Vector3::zeros(), 1.0, 1.0, colors[parity], sh_degree).sh,
            };
            out.push(g)?;
        }
    }
    Ok(out)
}

/// High-contrast checkered table top (0.8 m square at `z = 0`) with a tall
/// red block and a squat green block on it.
pub fn tabletop_scene(sh_degree: usize) -> Result<GaussianSet> {
    let mut set = checker_plane(&Vector3::zeros(), 0.4, 0.4, 0.04, 0.08, [[0.95, 0.9, 0.8], [0.1, 0.12, 0.15]], sh_degree)?;
    let blocks = [
        (Vector3::new(0.1, 0.05, 0.1), Vector3::new(0.03, 0.03, 0.1), [0.8, 0.1, 0.1]),
        (Vector3::new(-0.12, -0.1, 0.06), Vector3::new(0.04, 0.04, 0.06), [0.1, 0.6, 0.2]),
    ];
    for (center, half, rgb) in blocks {
        for p in crate::kinematics::sample_box(&half, 0.03) {
            set.push(Gaussian::isotropic(center + p.coords, 0.012, 0.95, rgb, sh_degree))?;
        }
    }
    Ok(set)
}

/// Flat box of Gaussians in a checker pattern, centered at `center`.
pub fn checker_box(
    center: &Vector3<f64>,
    half_extents: &Vector3<f64>,
    spacing: f64,
    colors: [[f64; 3]; 2],
    sh_degree: usize,
) -> Result<GaussianSet> {
    let pts = crate::kinematics::sample_box(half_extents, spacing);
    let mut out = GaussianSet::with_capacity(sh_degree, pts.len())?;
    for p in pts {
        let cell = [p.x, p.y, p.z].iter().map(|c| (c / (2.0 * spacing)).floor() as i64).sum::<i64>();
        let rgb = colors[cell.rem_euclid(2) as usize];
        out.push(Gaussian::isotropic(p.coords + center, 0.6 * spacing, 0.95, rgb, sh_degree))?;
    }
    Ok(out)
}
