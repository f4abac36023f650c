//! Forward-mode pose gradient of the soft-mask loss.
//!
//! The 7 parameters perturb a similarity `(q, t, s)` as
//! `(exp(w) q, t + dt, s exp(ds))`, ordered `[dt, w, ds]`.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector3};
use rayon::prelude::*;

use super::render::{perspective, prepare, window, window_slope, TileGrid, MAX_ALPHA, MIN_TRANSMITTANCE};
use super::{render_mask, CameraModel, Image};
use crate::error::{Error, Result};
use crate::geometry::{skew, so3_exp};
use crate::splat::{apply_similarity, transform_geometry, GaussianSet, SimilarityTransform};

/// d(squared Mahalanobis)/d(param) = K * [wx, wy, wx², wx wy, wy²] with
/// `w = conic * (pixel - mean)`.
type Coeffs = [[f64; 5]; 7];

fn check_views(cams: &[CameraModel], targets: &[Image]) -> Result<()> {
    if cams.is_empty() {
        return Err(Error::invalid("at least one view is required"));
    }
    if cams.len() != targets.len() {
        return Err(Error::invalid(format!("{} cameras but {} targets", cams.len(), targets.len())));
    }
    for (i, (c, t)) in cams.iter().zip(targets).enumerate() {
        if t.width() != c.width() || t.height() != c.height() || t.channels() != 1 {
            return Err(Error::invalid(format!(
                "target {i} is {}x{}x{}, camera expects {}x{}x1",
                t.width(),
                t.height(),
                t.channels(),
                c.width(),
                c.height()
            )));
        }
    }
    Ok(())
}

/// Moves a similarity along the gradient's parameterization
/// `[dt, w, ds]`: `(exp(w) q, t + dt, s exp(ds))`.
pub fn perturb_similarity(p: &SimilarityTransform, d: &[f64; 7]) -> SimilarityTransform {
    SimilarityTransform {
        rotation: so3_exp(&Vector3::new(d[3], d[4], d[5])) * p.rotation,
        translation: p.translation + Vector3::new(d[0], d[1], d[2]),
        scale: p.scale * d[6].exp(),
    }
}

/// Mean over views of the pixel MSE between the transformed set's soft
/// mask and each target.
pub fn mask_loss(set: &GaussianSet, params: &SimilarityTransform, cams: &[CameraModel], targets: &[Image]) -> Result<f64> {
    check_views(cams, targets)?;
    let moved = apply_similarity(set, params);
    let per_view: Vec<f64> = cams
        .par_iter()
        .zip(targets)
        .map(|(c, t)| render_mask(&moved, c).mean_squared_diff(t).expect("shapes checked"))
        .collect();
    Ok(per_view.iter().sum::<f64>() / cams.len() as f64)
}

/// Loss as in [`mask_loss`] and its analytic gradient with respect to
/// `[translation, rotation (left tangent), log-scale]`.
pub fn grad_mask_loss(
    set: &GaussianSet,
    params: &SimilarityTransform,
    cams: &[CameraModel],
    targets: &[Image],
) -> Result<(f64, [f64; 7])> {
    check_views(cams, targets)?;
    let moved = transform_geometry(set, params);
    let offsets: Vec<Vector3<f64>> = moved.positions().iter().map(|p| p - params.translation).collect();
    let per_view: Vec<(f64, [f64; 7])> = cams
        .par_iter()
        .zip(targets)
        .map(|(c, t)| view_gradient(&moved, &offsets, c, t))
        .collect();
    let n = cams.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; 7];
    for (l, g) in &per_view {
        loss += l;
        for j in 0..7 {
            grad[j] += g[j];
        }
    }
    for g in grad.iter_mut() {
        *g /= n;
    }
    Ok((loss / n, grad))
}

fn splat_coeffs(moved: &GaussianSet, offset: &Vector3<f64>, index: usize, cam: &CameraModel, rot: &Matrix3<f64>) -> Coeffs {
    let mu = moved.positions()[index];
    let sigma = moved.covariance(index);
    let (pc, j) = perspective(&mu, cam);
    let t = j * rot;
    let tt = t.transpose();
    let mut dmu = SMatrix::<f64, 3, 7>::zeros();
    dmu.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    dmu.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(offset)));
    dmu.set_column(6, offset);
    let dpc = rot * dmu;
    let dmean = j * dpc;
    let k = cam.intrinsics();
    let (fx, fy) = (k.fx, k.fy);
    let z = pc.z;
    let (z2, z3) = (z * z, z * z * z);
    let sigma_tt = rot * sigma * tt;
    let mut out = [[0.0; 5]; 7];
    for (col, row) in out.iter_mut().enumerate() {
        let (dx, dy, dz) = (dpc[(0, col)], dpc[(1, col)], dpc[(2, col)]);
        let dj = Matrix2x3::new(
            -fx * dz / z2,
            0.0,
            -fx * dx / z2 + 2.0 * fx * pc.x * dz / z3,
            0.0,
            -fy * dz / z2,
            -fy * dy / z2 + 2.0 * fy * pc.y * dz / z3,
        );
        let s = dj * sigma_tt;
        let mut dc = s + s.transpose();
        match col {
            3..=5 => {
                let e = skew(&Vector3::ith(col - 3, 1.0));
                dc += t * (e * sigma - sigma * e) * tt;
            }
            6 => dc += t * (sigma * 2.0) * tt,
            _ => {}
        }
        *row = [
            -2.0 * dmean[(0, col)],
            -2.0 * dmean[(1, col)],
            -dc[(0, 0)],
            -2.0 * dc[(0, 1)],
            -dc[(1, 1)],
        ];
    }
    out
}

fn view_gradient(moved: &GaussianSet, offsets: &[Vector3<f64>], cam: &CameraModel, target: &Image) -> (f64, [f64; 7]) {
    let (w, h) = (cam.width(), cam.height());
    let splats = prepare(moved, cam, false);
    let grid = TileGrid::build(&splats, w, h);
    let rot = cam.world_to_cam().rotation.to_rotation_matrix().into_inner();
    let coeffs: Vec<Coeffs> = splats
        .iter()
        .map(|s| splat_coeffs(moved, &offsets[s.index], s.index, cam, &rot))
        .collect();
    let inv_p = 1.0 / (w * h) as f64;
    let mut acc = vec![[0.0; 5]; splats.len()];
    let mut scratch: Vec<(u32, f64, [f64; 5])> = Vec::new();
    let mut sq_sum = 0.0;
    let tdata = target.data();
    for tile in 0..grid.lists.len() {
        let (x0, x1, y0, y1) = grid.extent(tile, w, h);
        let list = &grid.lists[tile];
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64, y as f64);
                let mut t = 1.0;
                scratch.clear();
                for &id in list {
                    let s = &splats[id as usize];
                    let m = s.proj.mahalanobis(px, py);
                    if !(m < 9.0) {
                        continue;
                    }
                    let raw = s.alpha * window(m);
                    let o = raw.clamp(0.0, MAX_ALPHA);
                    if o <= 0.0 {
                        continue;
                    }
                    let next = t * (1.0 - o);
                    if next < MIN_TRANSMITTANCE {
                        break;
                    }
                    if raw < MAX_ALPHA {
                        let [a, b, c] = s.proj.conic;
                        let dxp = px - s.proj.mean.x;
                        let dyp = py - s.proj.mean.y;
                        let wx = a * dxp + b * dyp;
                        let wy = b * dxp + c * dyp;
                        let slope = s.alpha * window_slope(m) / (1.0 - o);
                        scratch.push((id, slope, [wx, wy, wx * wx, wx * wy, wy * wy]));
                    }
                    t = next;
                }
                let r = (1.0 - t) - tdata[y * w + x];
                sq_sum += r * r;
                if r != 0.0 {
                    let scale = 2.0 * r * t * inv_p;
                    for (id, slope, f) in &scratch {
                        let a = &mut acc[*id as usize];
                        let k = scale * slope;
                        for q in 0..5 {
                            a[q] += k * f[q];
                        }
                    }
                }
            }
        }
    }
    let mut grad = [0.0; 7];
    for (k, a) in coeffs.iter().zip(&acc) {
        for j in 0..7 {
            grad[j] += k[j].iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    (sq_sum * inv_p, grad)
}
