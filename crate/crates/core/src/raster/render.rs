use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{CameraModel, Image, RenderedImage};
use crate::splat::sh::evaluate_unchecked;
use crate::splat::{covariance_unchecked, Gaussian, GaussianSet};

/// Diagonal regularizer added to every projected covariance, pixels².
pub const COV_EPSILON: f64 = 0.3;
/// Upper clamp on per-pixel opacity.
pub const MAX_ALPHA: f64 = 0.99;
/// Compositing stops before transmittance would fall below this value.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

pub(crate) const TILE: usize = 8;

/// Squared Mahalanobis radius at which the footprint reaches zero (3 sigma).
const CUTOFF: f64 = 9.0;
/// exp(-CUTOFF / 2)
const TAIL: f64 = 0.011_108_996_538_242_306;
const WINDOW_NORM: f64 = 1.0 - 5.5 * TAIL;

/// Gaussian falloff shifted and tilted so that value and slope both vanish
/// at the cutoff; equals 1 at the center.
#[inline]
pub(crate) fn window(m: f64) -> f64 {
    ((-0.5 * m).exp() - TAIL * (1.0 + 0.5 * (CUTOFF - m))) / WINDOW_NORM
}

/// d window / d m
#[inline]
pub(crate) fn window_slope(m: f64) -> f64 {
    (0.5 * TAIL - 0.5 * (-0.5 * m).exp()) / WINDOW_NORM
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Pixel coordinates of the projected center.
    pub mean: Vector2<f64>,
    /// Regularized 2D covariance, pixels².
    pub cov: Matrix2<f64>,
    /// Camera-space z of the center, meters.
    pub depth: f64,
    /// Inverse covariance entries `[a, b, c]` of `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Inclusive pixel range `[x0, x1, y0, y1]` that can receive weight.
    pub bounds: [usize; 4],
}

impl Projection {
    #[inline]
    pub fn mahalanobis(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean.x;
        let dy = py - self.mean.y;
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }

    /// Compositing weight at a pixel center for base opacity `alpha`.
    #[inline]
    pub fn opacity_at(&self, alpha: f64, px: f64, py: f64) -> f64 {
        let m = self.mahalanobis(px, py);
        if !(m < CUTOFF) {
            return 0.0;
        }
        (alpha * window(m)).clamp(0.0, MAX_ALPHA)
    }
}

/// Perspective EWA projection; `None` when culled by the clip range or
/// when the footprint misses every pixel.
pub fn project_gaussian(g: &Gaussian, cam: &CameraModel) -> Option<Projection> {
    project_parts(&g.position, &covariance_unchecked(&g.rotation, &g.scale), cam)
}

/// Camera-space point and the 2x3 perspective Jacobian at it.
#[inline]
pub(crate) fn perspective(pos: &Vector3<f64>, cam: &CameraModel) -> (Vector3<f64>, Matrix2x3<f64>) {
    let pose = cam.world_to_cam();
    let pc = pose.rotation * pos + pose.translation.vector;
    let k = cam.intrinsics();
    let z = pc.z;
    let z2 = z * z;
    let j = Matrix2x3::new(k.fx / z, 0.0, -k.fx * pc.x / z2, 0.0, k.fy / z, -k.fy * pc.y / z2);
    (pc, j)
}

pub(crate) fn project_parts(pos: &Vector3<f64>, cov3: &Matrix3<f64>, cam: &CameraModel) -> Option<Projection> {
    let (pc, j) = perspective(pos, cam);
    let z = pc.z;
    if !(z > cam.near() && z < cam.far()) {
        return None;
    }
    let k = cam.intrinsics();
    let mean = Vector2::new(k.fx * pc.x / z + k.cx, k.fy * pc.y / z + k.cy);
    let w = cam.world_to_cam().rotation.to_rotation_matrix().into_inner();
    let t = j * w;
    let cov = t * cov3 * t.transpose() + Matrix2::identity() * COV_EPSILON;
    let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !mean.iter().all(|v| v.is_finite()) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    // exact bounding box of the cutoff ellipse plus one pixel of slack
    let ex = 3.0 * a.sqrt() + 1.0;
    let ey = 3.0 * c.sqrt() + 1.0;
    let x0 = (mean.x - ex).ceil().max(0.0);
    let x1 = (mean.x + ex).floor().min(k.width as f64 - 1.0);
    let y0 = (mean.y - ey).ceil().max(0.0);
    let y1 = (mean.y + ey).floor().min(k.height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some(Projection {
        mean,
        cov,
        depth: z,
        conic,
        bounds: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
    })
}

#[derive(Debug, Clone)]
pub(crate) struct Splat2D {
    pub index: usize,
    pub proj: Projection,
    pub alpha: f64,
    pub color: [f64; 3],
}

/// Projects a set and sorts survivors by `(depth, index)`.
pub(crate) fn prepare(set: &GaussianSet, cam: &CameraModel, with_color: bool) -> Vec<Splat2D> {
    let center = cam.center().coords;
    let k = set.coeffs_per_channel();
    let degree = set.sh_degree();
    let projected: Vec<Splat2D> = (0..set.len())
        .filter_map(|i| {
            let pos = &set.positions()[i];
            let proj = project_parts(pos, &set.covariance(i), cam)?;
            let color = if with_color {
                let dir = (pos - center).normalize();
                evaluate_unchecked(set.sh_of(i), k, degree, &dir)
            } else {
                [0.0; 3]
            };
            Some(Splat2D {
                index: i,
                proj,
                alpha: set.opacities()[i],
                color,
            })
        })
        .collect();
    // sort keys, then move each splat once
    let mut order: Vec<(f64, usize, usize)> = projected.iter().enumerate().map(|(k, s)| (s.proj.depth, s.index, k)).collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut slots: Vec<Option<Splat2D>> = projected.into_iter().map(Some).collect();
    order.iter().map(|&(_, _, k)| slots[k].take().expect("each slot taken once")).collect()
}

/// Per-tile lists of sorted-splat ids; each list stays in depth order.
pub(crate) struct TileGrid {
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn build(splats: &[Splat2D], width: usize, height: usize) -> Self {
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (id, s) in splats.iter().enumerate() {
            let [x0, x1, y0, y1] = s.proj.bounds;
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    lists[ty * tiles_x + tx].push(id as u32);
                }
            }
        }
        Self { tiles_x, lists }
    }

    /// Pixel range `[x0, x1) x [y0, y1)` of a tile.
    pub fn extent(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        (tx * TILE, ((tx + 1) * TILE).min(width), ty * TILE, ((ty + 1) * TILE).min(height))
    }
}

/// Front-to-back compositing of one pixel. Returns accumulated color and
/// residual transmittance.
#[inline]
fn composite(splats: &[Splat2D], list: &[u32], x: usize, y: usize, with_color: bool) -> ([f64; 3], f64) {
    let (px, py) = (x as f64, y as f64);
    let mut t = 1.0;
    let mut c = [0.0; 3];
    for &id in list {
        let s = &splats[id as usize];
        let [x0, x1, y0, y1] = s.proj.bounds;
        if x < x0 || x > x1 || y < y0 || y > y1 {
            continue;
        }
        let o = s.proj.opacity_at(s.alpha, px, py);
        if o <= 0.0 {
            continue;
        }
        let next = t * (1.0 - o);
        if next < MIN_TRANSMITTANCE {
            break;
        }
        if with_color {
            for ch in 0..3 {
                c[ch] += s.color[ch] * o * t;
            }
        }
        t = next;
    }
    (c, t)
}

struct TileOutput {
    color: Vec<[f64; 3]>,
    transmittance: Vec<f64>,
}

fn render_tile(splats: &[Splat2D], grid: &TileGrid, tile: usize, w: usize, h: usize, with_color: bool) -> TileOutput {
    let (x0, x1, y0, y1) = grid.extent(tile, w, h);
    let list = &grid.lists[tile];
    let n = (x1 - x0) * (y1 - y0);
    let mut out = TileOutput {
        color: Vec::with_capacity(n),
        transmittance: Vec::with_capacity(n),
    };
    for y in y0..y1 {
        for x in x0..x1 {
            let (c, t) = composite(splats, list, x, y, with_color);
            out.color.push(c);
            out.transmittance.push(t);
        }
    }
    out
}

fn render_impl(set: &GaussianSet, cam: &CameraModel, background: [f64; 3], with_color: bool, parallel: bool) -> RenderedImage {
    let (w, h) = (cam.width(), cam.height());
    let splats = prepare(set, cam, with_color);
    let grid = TileGrid::build(&splats, w, h);
    let n_tiles = grid.lists.len();
    let tiles: Vec<TileOutput> = if parallel {
        (0..n_tiles)
            .into_par_iter()
            .map(|t| render_tile(&splats, &grid, t, w, h, with_color))
            .collect()
    } else {
        (0..n_tiles).map(|t| render_tile(&splats, &grid, t, w, h, with_color)).collect()
    };
    let mut pixels = Image::new(w, h, 3);
    let mut transmittance = Image::new(w, h, 1);
    for (tile, out) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = grid.extent(tile, w, h);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let t = out.transmittance[k];
                transmittance.set(x, y, 0, t);
                for ch in 0..3 {
                    pixels.set(x, y, ch, (out.color[k][ch] + t * background[ch]).clamp(0.0, 1.0));
                }
                k += 1;
            }
        }
    }
    RenderedImage { pixels, transmittance }
}

/// Renders color and transmittance, compositing tiles in parallel.
pub fn render(set: &GaussianSet, cam: &CameraModel, background: [f64; 3]) -> RenderedImage {
    render_impl(set, cam, background, true, true)
}

/// Single-threaded [`render`]; produces bit-identical output.
pub fn render_serial(set: &GaussianSet, cam: &CameraModel, background: [f64; 3]) -> RenderedImage {
    render_impl(set, cam, background, true, false)
}

/// Soft coverage mask `1 - transmittance`, one channel.
pub fn render_mask(set: &GaussianSet, cam: &CameraModel) -> Image {
    let r = render_impl(set, cam, [0.0; 3], false, true);
    let mut mask = r.transmittance;
    for v in mask.data_mut() {
        *v = 1.0 - *v;
    }
    mask
}
