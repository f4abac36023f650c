use std::path::PathBuf;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::decompose::SceneDecomposition;
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::splat::{apply_similarity, merge, rgb_to_dc, GaussianSet, SimilarityTransform};

/// Gaussians per square centimeter on image planes.
pub const DEFAULT_PLANE_DENSITY: f64 = 4.0;
/// Scale along a plane's normal, meters.
pub const PLANE_THICKNESS: f64 = 1e-3;
const PLANE_OPACITY: f64 = 0.99;

/// A rectangle `origin + s u + t v` for `s, t` in `[0, 1]`. Image columns run
/// along `u` and rows along `v`, pixel `(0, 0)` at `origin`. The edges must
/// be orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturedPlane {
    pub image: PathBuf,
    pub origin: [f64; 3],
    pub u_edge: [f64; 3],
    pub v_edge: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum AppearanceSource {
    /// Textured rectangles tessellated at `density` Gaussians per cm².
    ImagePlanes { planes: Vec<TexturedPlane>, density: f64 },
    /// A replacement background, moved by `placement`.
    SplatScene { scene: GaussianSet, placement: SimilarityTransform },
}

impl AppearanceSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            AppearanceSource::ImagePlanes { planes, density } => {
                if planes.is_empty() {
                    return Err(Error::Config("image-plane source has no planes".into()));
                }
                if !(*density > 0.0 && density.is_finite()) {
                    return Err(Error::Config(format!("plane density must be positive, got {density}")));
                }
                for p in planes {
                    plane_frame(p)?;
                }
                Ok(())
            }
            AppearanceSource::SplatScene { scene, placement } => {
                if scene.is_empty() {
                    return Err(Error::Config("replacement scene is empty".into()));
                }
                SimilarityTransform::new(placement.rotation, placement.translation, placement.scale).map(|_| ())
            }
        }
    }
}

/// Unit edge directions and lengths; errors on degenerate or skew edges.
fn plane_frame(p: &TexturedPlane) -> Result<(Vector3<f64>, Vector3<f64>, f64, f64)> {
    let (u, v) = (Vector3::from(p.u_edge), Vector3::from(p.v_edge));
    let (lu, lv) = (u.norm(), v.norm());
    if !(lu > 0.0 && lv > 0.0 && lu.is_finite() && lv.is_finite()) || Vector3::from(p.origin).iter().any(|c| !c.is_finite()) {
        return Err(Error::Config(format!("plane {} has a degenerate rectangle", p.image.display())));
    }
    if u.dot(&v).abs() > 1e-9 * lu * lv {
        return Err(Error::Config(format!("plane {} edges are not orthogonal", p.image.display())));
    }
    Ok((u / lu, v / lv, lu, lv))
}

/// Flat Gaussians on a grid over the rectangle, one per cell, each colored by
/// the mean of the image block under its cell. In-plane scale equals the
/// grid spacing so neighbors overlap into an opaque sheet.
pub fn tessellate_plane(image: &Image, plane: &TexturedPlane, density: f64, sh_degree: usize) -> Result<GaussianSet> {
    if image.channels() != 3 {
        return Err(Error::invalid("plane textures must be RGB"));
    }
    let (ud, vd, lu, lv) = plane_frame(plane)?;
    let spacing = 0.01 / density.sqrt();
    let nu = (lu / spacing).ceil().max(1.0) as usize;
    let nv = (lv / spacing).ceil().max(1.0) as usize;
    let (du, dv) = (lu / nu as f64, lv / nv as f64);
    let normal = ud.cross(&vd);
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[ud, vd, normal])));
    let (w, h) = (image.width(), image.height());
    let block = |i: usize, n: usize, len: usize| -> (usize, usize) {
        let a = i * len / n;
        let b = ((i + 1) * len / n).max(a + 1).min(len);
        (a.min(len - 1), b)
    };
    let mut set = GaussianSet::with_capacity(sh_degree, nu * nv)?;
    let k = set.coeffs_per_channel();
    let origin = Vector3::from(plane.origin);
    for j in 0..nv {
        let (r0, r1) = block(j, nv, h);
        for i in 0..nu {
            let (c0, c1) = block(i, nu, w);
            let mut rgb = [0.0; 3];
            for y in r0..r1 {
                for x in c0..c1 {
                    for (c, v) in rgb.iter_mut().enumerate() {
                        *v += image.get(x, y, c);
                    }
                }
            }
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            let mut sh = vec![0.0; 3 * k];
            for c in 0..3 {
                sh[c * k] = rgb_to_dc(rgb[c] / count);
            }
            set.push(crate::splat::Gaussian {
                position: origin + ud * ((i as f64 + 0.5) * du) + vd * ((j as f64 + 0.5) * dv),
                rotation,
                scale: Vector3::new(spacing, spacing, PLANE_THICKNESS),
                opacity: PLANE_OPACITY,
                sh,
            })?;
        }
    }
    Ok(set)
}

/// New decomposition whose background comes from `source`. Robot links and
/// objects are cloned untouched. A splat scene is converted to the current
/// SH degree; the identity placement skips the transform.
pub fn apply_appearance(decomp: &SceneDecomposition, source: &AppearanceSource) -> Result<SceneDecomposition> {
    source.validate()?;
    let degree = decomp.background.sh_degree();
    let background = match source {
        AppearanceSource::ImagePlanes { planes, density } => {
            let parts = planes
                .iter()
                .map(|p| tessellate_plane(&Image::load_png(&p.image, 3)?, p, *density, degree))
                .collect::<Result<Vec<_>>>()?;
            merge(&parts)?
        }
        AppearanceSource::SplatScene { scene, placement } => {
            let scene = if scene.sh_degree() == degree {
                scene.clone()
            } else {
                scene.with_sh_degree(degree)?
            };
            if *placement == SimilarityTransform::identity() {
                scene
            } else {
                apply_similarity(&scene, placement)
            }
        }
    };
    Ok(SceneDecomposition {
        background,
        ..decomp.clone()
    })
}
