//! Real spherical harmonics up to degree 3: evaluation and rotation.
//!
//! The basis follows the sign convention used by splat assets in the wild
//! (`Y_1 = (-C1 y, C1 z, -C1 x)` and so on), which differs from the
//! "positive" real basis by a factor `(-1)^m`. Rotation matrices are built in
//! the positive basis by the Ivanic-Ruedenberg recurrence and conjugated by
//! that sign pattern.
//!
//! Coefficients of one Gaussian are laid out channel-major:
//! `[r_0 .. r_{K-1}, g_0 .. g_{K-1}, b_0 .. b_{K-1}]` with `K = (L+1)^2` and
//! the band-`l`, order-`m` coefficient at index `l*l + l + m`.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: usize = 3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per channel for a given degree.
pub const fn coeffs_per_channel(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluates the real SH basis at a unit direction. Entries past
/// `coeffs_per_channel(degree)` are zero.
pub fn sh_basis(degree: usize, dir: &Vector3<f64>) -> [f64; 16] {
    let mut out = [0.0; 16];
    out[0] = SH_C0;
    if degree == 0 {
        return out;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[1] = -SH_C1 * y;
    out[2] = SH_C1 * z;
    out[3] = -SH_C1 * x;
    if degree == 1 {
        return out;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = SH_C2[0] * xy;
    out[5] = SH_C2[1] * yz;
    out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    out[7] = SH_C2[3] * xz;
    out[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return out;
    }
    out[9] = SH_C3[0] * y * (3.0 * xx - yy);
    out[10] = SH_C3[1] * xy * z;
    out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = SH_C3[5] * z * (xx - yy);
    out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    out
}

fn check_len(sh: &[f64], degree: usize) -> Result<usize> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::invalid(format!(
            "sh degree {degree} exceeds maximum {MAX_SH_DEGREE}"
        )));
    }
    let k = coeffs_per_channel(degree);
    if sh.len() != 3 * k {
        return Err(Error::invalid(format!(
            "expected {} sh coefficients for degree {degree}, got {}",
            3 * k,
            sh.len()
        )));
    }
    Ok(k)
}

/// View-dependent RGB color: `clamp(0.5 + sum c*Y(d), 0, 1)` per channel.
pub fn evaluate_sh(sh: &[f64], degree: usize, dir: &Vector3<f64>) -> Result<[f64; 3]> {
    let k = check_len(sh, degree)?;
    Ok(evaluate_unchecked(sh, k, degree, dir))
}

pub(crate) fn evaluate_unchecked(sh: &[f64], k: usize, degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    let basis = sh_basis(degree, dir);
    let mut rgb = [0.0; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let coeffs = &sh[c * k..(c + 1) * k];
        let sum: f64 = coeffs.iter().zip(basis.iter()).map(|(a, b)| a * b).sum();
        *out = (0.5 + sum).clamp(0.0, 1.0);
    }
    rgb
}

type Band = [[f64; 7]; 7];

/// Per-band Wigner D matrices for one rotation, in the asset sign convention.
#[derive(Debug, Clone)]
pub struct ShRotation {
    degree: usize,
    bands: [Band; MAX_SH_DEGREE + 1],
}

impl ShRotation {
    pub fn new(rotation: &UnitQuaternion<f64>, degree: usize) -> Self {
        let r = rotation.to_rotation_matrix().into_inner();
        let positive = positive_basis_bands(&r, degree);
        let mut bands = [[[0.0; 7]; 7]; MAX_SH_DEGREE + 1];
        for l in 0..=degree {
            let size = 2 * l + 1;
            for i in 0..size {
                for j in 0..size {
                    let mi = i as i64 - l as i64;
                    let mj = j as i64 - l as i64;
                    let sign = if (mi + mj).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    bands[l][i][j] = sign * positive[l][i][j];
                }
            }
        }
        Self { degree, bands }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Band `l` block as a dense `(2l+1)x(2l+1)` row-major vector.
    pub fn band(&self, l: usize) -> Vec<f64> {
        let size = 2 * l + 1;
        let mut out = Vec::with_capacity(size * size);
        for row in self.bands[l].iter().take(size) {
            out.extend_from_slice(&row[..size]);
        }
        out
    }

    /// Rotates one Gaussian's coefficients in place. `sh` must hold
    /// `3 * coeffs_per_channel(degree)` values.
    pub fn apply(&self, sh: &mut [f64]) {
        let k = coeffs_per_channel(self.degree);
        debug_assert_eq!(sh.len(), 3 * k);
        let mut tmp = [0.0; 7];
        for channel in sh.chunks_exact_mut(k) {
            for l in 1..=self.degree {
                let size = 2 * l + 1;
                let start = l * l;
                let src = &channel[start..start + size];
                for (i, t) in tmp.iter_mut().take(size).enumerate() {
                    let row = &self.bands[l][i];
                    *t = src.iter().zip(row.iter()).map(|(c, d)| c * d).sum();
                }
                channel[start..start + size].copy_from_slice(&tmp[..size]);
            }
        }
    }
}

/// Rotates SH coefficients so that the rotated function evaluated at `d`
/// equals the original evaluated at `R^-1 d`.
pub fn rotate_sh(sh: &[f64], degree: usize, rotation: &UnitQuaternion<f64>) -> Result<Vec<f64>> {
    check_len(sh, degree)?;
    let mut out = sh.to_vec();
    if is_identity(rotation) {
        return Ok(out);
    }
    ShRotation::new(rotation, degree).apply(&mut out);
    Ok(out)
}

pub(crate) fn is_identity(q: &UnitQuaternion<f64>) -> bool {
    let c = q.as_ref().coords;
    c.x == 0.0 && c.y == 0.0 && c.z == 0.0 && c.w.abs() == 1.0
}

fn centered(band: &Band, l: usize, i: i64, j: i64) -> f64 {
    band[(i + l as i64) as usize][(j + l as i64) as usize]
}

fn p_term(i: i64, a: i64, b: i64, l: usize, r1: &Band, prev: &Band) -> f64 {
    let li = l as i64;
    let pl = l - 1;
    if b == li {
        centered(r1, 1, i, 1) * centered(prev, pl, a, li - 1)
            - centered(r1, 1, i, -1) * centered(prev, pl, a, -li + 1)
    } else if b == -li {
        centered(r1, 1, i, 1) * centered(prev, pl, a, -li + 1)
            + centered(r1, 1, i, -1) * centered(prev, pl, a, li - 1)
    } else {
        centered(r1, 1, i, 0) * centered(prev, pl, a, b)
    }
}

fn u_term(m: i64, n: i64, l: usize, r1: &Band, prev: &Band) -> f64 {
    p_term(0, m, n, l, r1, prev)
}

fn v_term(m: i64, n: i64, l: usize, r1: &Band, prev: &Band) -> f64 {
    if m == 0 {
        p_term(1, 1, n, l, r1, prev) + p_term(-1, -1, n, l, r1, prev)
    } else if m > 0 {
        let d: f64 = if m == 1 { 1.0 } else { 0.0 };
        p_term(1, m - 1, n, l, r1, prev) * (1.0 + d).sqrt()
            - p_term(-1, -m + 1, n, l, r1, prev) * (1.0 - d)
    } else {
        let d: f64 = if m == -1 { 1.0 } else { 0.0 };
        p_term(1, m + 1, n, l, r1, prev) * (1.0 - d)
            + p_term(-1, -m - 1, n, l, r1, prev) * (1.0 + d).sqrt()
    }
}

fn w_term(m: i64, n: i64, l: usize, r1: &Band, prev: &Band) -> f64 {
    if m > 0 {
        p_term(1, m + 1, n, l, r1, prev) + p_term(-1, -m - 1, n, l, r1, prev)
    } else {
        p_term(1, m - 1, n, l, r1, prev) - p_term(-1, -m + 1, n, l, r1, prev)
    }
}

/// Rotation blocks in the positive real basis (`Y_1 ~ (y, z, x)`), such that
/// `Y(R d) = D(R) Y(d)` band by band.
fn positive_basis_bands(r: &Matrix3<f64>, degree: usize) -> [Band; MAX_SH_DEGREE + 1] {
    let mut bands = [[[0.0; 7]; 7]; MAX_SH_DEGREE + 1];
    bands[0][0][0] = 1.0;
    if degree == 0 {
        return bands;
    }
    // basis order (m = -1, 0, 1) corresponds to axes (y, z, x)
    let axis = [1usize, 2, 0];
    for i in 0..3 {
        for j in 0..3 {
            bands[1][i][j] = r[(axis[i], axis[j])];
        }
    }
    for l in 2..=degree {
        let li = l as i64;
        let r1 = bands[1];
        let prev = bands[l - 1];
        let mut cur = [[0.0; 7]; 7];
        for m in -li..=li {
            for n in -li..=li {
                let d = if m == 0 { 1.0 } else { 0.0 };
                let denom = if n.abs() == li {
                    (2 * li * (2 * li - 1)) as f64
                } else {
                    ((li + n) * (li - n)) as f64
                };
                let am = m.abs();
                let u = (((li + m) * (li - m)) as f64 / denom).sqrt();
                let v = 0.5
                    * ((1.0 + d) * ((li + am - 1) * (li + am)) as f64 / denom).sqrt()
                    * (1.0 - 2.0 * d);
                let w = -0.5 * ((((li - am - 1) * (li - am)) as f64) / denom).sqrt() * (1.0 - d);
                let mut value = 0.0;
                if u != 0.0 {
                    value += u * u_term(m, n, l, &r1, &prev);
                }
                if v != 0.0 {
                    value += v * v_term(m, n, l, &r1, &prev);
                }
                if w != 0.0 {
                    value += w * w_term(m, n, l, &r1, &prev);
                }
                cur[(m + li) as usize][(n + li) as usize] = value;
            }
        }
        bands[l] = cur;
    }
    bands
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
        let axis = random_unit(rng);
        UnitQuaternion::from_scaled_axis(axis * rng.random_range(-3.1..3.1))
    }

    /// Unclamped evaluation so that the oracle also sees saturated channels.
    fn raw_eval(sh: &[f64], degree: usize, d: &Vector3<f64>) -> [f64; 3] {
        let k = coeffs_per_channel(degree);
        let b = sh_basis(degree, d);
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (0..k).map(|i| sh[c * k + i] * b[i]).sum();
        }
        out
    }

    #[test]
    fn zero_coefficients_give_mid_grey() {
        let sh = vec![0.0; 48];
        let rgb = evaluate_sh(&sh, 3, &Vector3::new(0.0, 0.6, 0.8)).unwrap();
        assert_eq!(rgb, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn degree_zero_constant() {
        let a = 0.7;
        let rgb = evaluate_sh(&[a, a, a], 0, &Vector3::z()).unwrap();
        for c in rgb {
            assert!((c - (0.5 + 0.282_094_79 * a)).abs() < 1e-8);
        }
    }

    #[test]
    fn degree_one_is_odd() {
        let sh = vec![0.0, 0.1, -0.2, 0.15, 0.0, 0.05, 0.1, 0.2, 0.0, -0.1, 0.1, 0.05];
        let d = Vector3::new(0.3, -0.5, 0.2).normalize();
        let a = evaluate_sh(&sh, 1, &d).unwrap();
        let b = evaluate_sh(&sh, 1, &(-d)).unwrap();
        for c in 0..3 {
            assert!(((a[c] - 0.5) + (b[c] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_count_mismatch_is_rejected() {
        assert!(matches!(
            evaluate_sh(&[0.0; 10], 1, &Vector3::z()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(rotate_sh(&[0.0; 12], 2, &UnitQuaternion::identity()).is_err());
    }

    #[test]
    fn identity_rotation_is_bitwise_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sh: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = rotate_sh(&sh, 3, &UnitQuaternion::identity()).unwrap();
        assert_eq!(sh, out);
    }

    #[test]
    fn quarter_turn_about_z_maps_x_lobe_to_y_lobe() {
        // coefficient (l=1, m=1) set on every channel
        let sh = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let out = rotate_sh(&sh, 1, &q).unwrap();
        for c in 0..3 {
            let band = &out[c * 4 + 1..c * 4 + 4];
            assert!((band[0] - 1.0).abs() < 1e-12, "{band:?}");
            assert!(band[1].abs() < 1e-12 && band[2].abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_matches_dense_direction_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for degree in 0..=3 {
            let k = coeffs_per_channel(degree);
            for _ in 0..10 {
                let sh: Vec<f64> = (0..3 * k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let q = random_rotation(&mut rng);
                let rotated = rotate_sh(&sh, degree, &q).unwrap();
                let inv = q.inverse();
                for _ in 0..1000 {
                    let d = random_unit(&mut rng);
                    let lhs = raw_eval(&rotated, degree, &d);
                    let rhs = raw_eval(&sh, degree, &(inv * d));
                    for c in 0..3 {
                        assert!((lhs[c] - rhs[c]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn bands_are_orthogonal_and_preserve_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q = random_rotation(&mut rng);
            let rot = ShRotation::new(&q, 3);
            for l in 0..=3 {
                let n = 2 * l + 1;
                let b = rot.band(l);
                for i in 0..n {
                    for j in 0..n {
                        let dot: f64 = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - expect).abs() < 1e-12);
                    }
                }
            }
            let sh: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = rotate_sh(&sh, 3, &q).unwrap();
            for c in 0..3 {
                for l in 0..=3 {
                    let range = c * 16 + l * l..c * 16 + (l + 1) * (l + 1);
                    let before: f64 = sh[range.clone()].iter().map(|x| x * x).sum();
                    let after: f64 = out[range].iter().map(|x| x * x).sum();
                    assert!((before - after).abs() < 1e-9);
                }
            }
            assert_eq!(out[0], sh[0]);
        }
    }
}
