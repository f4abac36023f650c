use nalgebra::{Isometry3, Translation3, Vector3};
use rayon::prelude::*;

use super::{render, CameraModel, Image};
use crate::error::{Error, Result};
use crate::geometry::so3_exp;
use crate::splat::GaussianSet;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const DEFAULT_STEP: f64 = 1e-4;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filtering of one plane.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - WINDOW, h + 1 - WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for (y, row) in out.chunks_exact_mut(ow).enumerate() {
        for (i, kv) in k.iter().enumerate() {
            let src = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, v) in row.iter_mut().zip(src) {
                *o += kv * v;
            }
        }
    }
    out
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "ssim shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(img.channels()).copied().collect()
}

fn product(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().zip(q).map(|(x, y)| x * y).collect()
}

/// Windowed statistics of one image, reused across comparisons.
struct SsimReference {
    image: Image,
    kernel: [f64; WINDOW],
    /// Per channel: raw plane, local mean, local mean of squares.
    channels: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl SsimReference {
    fn new(image: &Image) -> Result<Self> {
        let (w, h) = (image.width(), image.height());
        if w < WINDOW || h < WINDOW {
            return Err(Error::invalid(format!("ssim needs images of at least {WINDOW}x{WINDOW}")));
        }
        let kernel = kernel();
        let channels = (0..image.channels())
            .map(|c| {
                let p = plane(image, c);
                let mu = filter(&p, w, h, &kernel);
                let e2 = filter(&product(&p, &p), w, h, &kernel);
                (p, mu, e2)
            })
            .collect();
        Ok(Self {
            image: image.clone(),
            kernel,
            channels,
        })
    }

    fn compare(&self, other: &Image) -> Result<f64> {
        check_shapes(&self.image, other)?;
        let (w, h) = (other.width(), other.height());
        let k = &self.kernel;
        let mut total = 0.0;
        let mut count = 0usize;
        for (c, (pa, mu_a, ea2)) in self.channels.iter().enumerate() {
            let pb = plane(other, c);
            let mu_b = filter(&pb, w, h, k);
            let eb2 = filter(&product(&pb, &pb), w, h, k);
            let eab = filter(&product(pa, &pb), w, h, k);
            for i in 0..mu_a.len() {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = ea2[i] - ma * ma;
                let vb = eb2[i] - mb * mb;
                let cov = eab[i] - ma * mb;
                total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                count += 1;
            }
        }
        Ok(total / count as f64)
    }
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5) over
/// valid window positions, averaged over channels and positions.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    SsimReference::new(a)?.compare(b)
}

/// Camera with its world-to-camera pose left-multiplied by a small motion
/// `[dt, w]` expressed in the camera frame.
pub fn perturb_camera(cam: &CameraModel, delta: &[f64; 6]) -> Result<CameraModel> {
    let step = Isometry3::from_parts(
        Translation3::new(delta[0], delta[1], delta[2]),
        so3_exp(&Vector3::new(delta[3], delta[4], delta[5])),
    );
    cam.with_pose(step * cam.world_to_cam())
}

fn check_target(cam: &CameraModel, target: &Image) -> Result<()> {
    if target.width() != cam.width() || target.height() != cam.height() || target.channels() != 3 {
        return Err(Error::invalid("target must be an RGB image matching the camera"));
    }
    Ok(())
}

fn loss_against(set: &GaussianSet, cam: &CameraModel, target: &SsimReference) -> Result<f64> {
    let s = target.compare(&render(set, cam, [0.0; 3]).pixels)?;
    Ok((1.0 - s) * (1.0 - s))
}

/// `(1 - ssim(target, render))²` with a black background.
pub fn camera_loss(set: &GaussianSet, cam: &CameraModel, target: &Image) -> Result<f64> {
    check_target(cam, target)?;
    loss_against(set, cam, &SsimReference::new(target)?)
}

/// Camera loss and its central-difference gradient over `[dt, w]`.
pub fn grad_camera_loss(set: &GaussianSet, cam: &CameraModel, target: &Image) -> Result<(f64, [f64; 6])> {
    grad_camera_loss_with_step(set, cam, target, DEFAULT_STEP)
}

pub fn grad_camera_loss_with_step(set: &GaussianSet, cam: &CameraModel, target: &Image, step: f64) -> Result<(f64, [f64; 6])> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    check_target(cam, target)?;
    let reference = SsimReference::new(target)?;
    let loss = loss_against(set, cam, &reference)?;
    let evals = (0..12)
        .into_par_iter()
        .map(|e| {
            let mut d = [0.0; 6];
            d[e / 2] = if e % 2 == 0 { step } else { -step };
            loss_against(set, &perturb_camera(cam, &d)?, &reference)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut grad = [0.0; 6];
    for (j, g) in grad.iter_mut().enumerate() {
        *g = (evals[2 * j] - evals[2 * j + 1]) / (2.0 * step);
    }
    Ok((loss, grad))
}
