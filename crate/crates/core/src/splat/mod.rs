//! Gaussian primitives, columnar sets and similarity transforms.

pub mod lighting;
pub mod ply;
pub mod sh;

use nalgebra::{Isometry3, Matrix3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use sh::{coeffs_per_channel, ShRotation, MAX_SH_DEGREE};

pub use lighting::{recolor_diffuse, LightingParams};
pub use ply::{load_points, load_splat, save_points, save_splat};
pub use sh::{evaluate_sh, rotate_sh};

const UNIT_TOLERANCE: f64 = 1e-6;

/// One Gaussian primitive. Scale and opacity are stored post-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    /// Channel-major SH coefficients, `3 * (L+1)^2` values.
    pub sh: Vec<f64>,
}

impl Gaussian {
    /// Isotropic Gaussian with a flat (degree-0) color in `[0,1]` RGB.
    pub fn isotropic(position: Vector3<f64>, radius: f64, opacity: f64, rgb: [f64; 3], sh_degree: usize) -> Self {
        let k = coeffs_per_channel(sh_degree);
        let mut sh = vec![0.0; 3 * k];
        for c in 0..3 {
            sh[c * k] = rgb_to_dc(rgb[c]);
        }
        Self {
            position,
            rotation: UnitQuaternion::identity(),
            scale: Vector3::repeat(radius),
            opacity,
            sh,
        }
    }
}

/// Degree-0 coefficient producing the given diffuse channel value.
pub fn rgb_to_dc(value: f64) -> f64 {
    (value - 0.5) / sh::SH_C0
}

/// Diffuse channel value of a degree-0 coefficient (unclamped).
pub fn dc_to_rgb(coeff: f64) -> f64 {
    0.5 + sh::SH_C0 * coeff
}

/// Returns `R S S^T R^T` for a rotation and per-axis scale.
pub fn covariance_of(rotation: &UnitQuaternion<f64>, scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid(format!("scale components must be positive, got {scale:?}")));
    }
    Ok(covariance_unchecked(rotation, scale))
}

pub(crate) fn covariance_unchecked(rotation: &UnitQuaternion<f64>, scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = rotation.to_rotation_matrix().into_inner();
    let m = r * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// Columnar collection of Gaussians sharing one SH degree.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    sh_degree: usize,
    positions: Vec<Vector3<f64>>,
    rotations: Vec<UnitQuaternion<f64>>,
    scales: Vec<Vector3<f64>>,
    opacities: Vec<f64>,
    sh: Vec<f64>,
}

impl GaussianSet {
    pub fn empty(sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::invalid(format!("sh degree {sh_degree} not supported")));
        }
        Ok(Self {
            sh_degree,
            positions: Vec::new(),
            rotations: Vec::new(),
            scales: Vec::new(),
            opacities: Vec::new(),
            sh: Vec::new(),
        })
    }

    pub fn with_capacity(sh_degree: usize, capacity: usize) -> Result<Self> {
        let mut set = Self::empty(sh_degree)?;
        set.positions.reserve(capacity);
        set.rotations.reserve(capacity);
        set.scales.reserve(capacity);
        set.opacities.reserve(capacity);
        set.sh.reserve(capacity * 3 * coeffs_per_channel(sh_degree));
        Ok(set)
    }

    pub fn from_gaussians(sh_degree: usize, gaussians: impl IntoIterator<Item = Gaussian>) -> Result<Self> {
        let mut set = Self::empty(sh_degree)?;
        for g in gaussians {
            set.push(g)?;
        }
        Ok(set)
    }

    /// Appends a Gaussian after checking the primitive invariants.
    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        let index = self.len();
        let data = |message: String| Error::Data { index, message };
        if g.sh.len() != 3 * self.coeffs_per_channel() {
            return Err(Error::invalid(format!(
                "gaussian {index}: expected {} sh coefficients, got {}",
                3 * self.coeffs_per_channel(),
                g.sh.len()
            )));
        }
        if !g.position.iter().all(|v| v.is_finite()) || !g.sh.iter().all(|v| v.is_finite()) {
            return Err(data("non-finite position or color".into()));
        }
        if (g.rotation.as_ref().norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(data("rotation is not unit-norm".into()));
        }
        if !g.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(data(format!("scale must be positive, got {:?}", g.scale)));
        }
        if !(0.0..=1.0).contains(&g.opacity) {
            return Err(data(format!("opacity {} outside [0,1]", g.opacity)));
        }
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.scales.push(g.scale);
        self.opacities.push(g.opacity);
        self.sh.extend_from_slice(&g.sh);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn coeffs_per_channel(&self) -> usize {
        coeffs_per_channel(self.sh_degree)
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn rotations(&self) -> &[UnitQuaternion<f64>] {
        &self.rotations
    }

    pub fn scales(&self) -> &[Vector3<f64>] {
        &self.scales
    }

    pub fn opacities(&self) -> &[f64] {
        &self.opacities
    }

    /// All SH coefficients, `3 * (L+1)^2` per Gaussian.
    pub fn sh_coefficients(&self) -> &[f64] {
        &self.sh
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let stride = 3 * self.coeffs_per_channel();
        &self.sh[i * stride..(i + 1) * stride]
    }

    pub(crate) fn sh_of_mut(&mut self, i: usize) -> &mut [f64] {
        let stride = 3 * self.coeffs_per_channel();
        &mut self.sh[i * stride..(i + 1) * stride]
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            scale: self.scales[i],
            opacity: self.opacities[i],
            sh: self.sh_of(i).to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> GaussianSet {
        let stride = 3 * self.coeffs_per_channel();
        let mut out = Self::with_capacity(self.sh_degree, indices.len()).expect("valid degree");
        for &i in indices {
            out.positions.push(self.positions[i]);
            out.rotations.push(self.rotations[i]);
            out.scales.push(self.scales[i]);
            out.opacities.push(self.opacities[i]);
            out.sh.extend_from_slice(&self.sh[i * stride..(i + 1) * stride]);
        }
        out
    }

    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        covariance_unchecked(&self.rotations[i], &self.scales[i])
    }

    /// Replaces the SH column; used by recoloring.
    pub(crate) fn with_sh(&self, sh: Vec<f64>) -> GaussianSet {
        debug_assert_eq!(sh.len(), self.sh.len());
        GaussianSet {
            sh,
            ..self.clone()
        }
    }

    /// Same Gaussians with SH truncated or zero-padded to another degree.
    pub fn with_sh_degree(&self, degree: usize) -> Result<GaussianSet> {
        let mut out = Self::with_capacity(degree, self.len())?;
        let (src_k, dst_k) = (self.coeffs_per_channel(), coeffs_per_channel(degree));
        for i in 0..self.len() {
            let src = self.sh_of(i);
            for c in 0..3 {
                for k in 0..dst_k {
                    out.sh.push(if k < src_k { src[c * src_k + k] } else { 0.0 });
                }
            }
        }
        out.positions = self.positions.clone();
        out.rotations = self.rotations.clone();
        out.scales = self.scales.clone();
        out.opacities = self.opacities.clone();
        Ok(out)
    }
}

/// Concatenates sets in order. All inputs must share one SH degree.
pub fn merge<'a>(sets: impl IntoIterator<Item = &'a GaussianSet>) -> Result<GaussianSet> {
    let sets: Vec<&GaussianSet> = sets.into_iter().collect();
    let Some(first) = sets.first() else {
        return Err(Error::invalid("merge of an empty list"));
    };
    let degree = first.sh_degree;
    if let Some(bad) = sets.iter().find(|s| s.sh_degree != degree) {
        return Err(Error::invalid(format!(
            "sh degree mismatch in merge: {} vs {}",
            degree, bad.sh_degree
        )));
    }
    let total = sets.iter().map(|s| s.len()).sum();
    let mut out = GaussianSet::with_capacity(degree, total)?;
    for s in sets {
        out.positions.extend_from_slice(&s.positions);
        out.rotations.extend_from_slice(&s.rotations);
        out.scales.extend_from_slice(&s.scales);
        out.opacities.extend_from_slice(&s.opacities);
        out.sh.extend_from_slice(&s.sh);
    }
    Ok(out)
}

/// Rotation, translation and uniform scale acting as `x -> R (s x) + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("similarity scale must be positive, got {scale}")));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            rotation: iso.rotation,
            translation: iso.translation.vector,
            scale: 1.0,
        }
    }

    /// Rigid part; drops the scale.
    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.transform_vector_point(&p.coords))
    }

    pub(crate) fn transform_vector_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p * self.scale) + self.translation
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * (inner.translation * self.scale) + self.translation,
            scale: self.scale * inner.scale,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rot_inv = self.rotation.inverse();
        let s_inv = 1.0 / self.scale;
        SimilarityTransform {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation) * s_inv,
            scale: s_inv,
        }
    }
}

/// Applies a similarity to every Gaussian: position scaled, rotated and
/// offset; orientation composed; scale multiplied; SH bands rotated.
pub fn apply_similarity(set: &GaussianSet, t: &SimilarityTransform) -> GaussianSet {
    let mut out = transform_geometry(set, t);
    if !sh::is_identity(&t.rotation) && set.sh_degree > 0 {
        let rot = ShRotation::new(&t.rotation, set.sh_degree);
        for i in 0..out.len() {
            rot.apply(out.sh_of_mut(i));
        }
    }
    out
}

/// Geometry-only variant of [`apply_similarity`]; SH passes through.
pub(crate) fn transform_geometry(set: &GaussianSet, t: &SimilarityTransform) -> GaussianSet {
    let mut out = set.clone();
    for p in out.positions.iter_mut() {
        *p = t.transform_vector_point(p);
    }
    for q in out.rotations.iter_mut() {
        *q = t.rotation * *q;
    }
    for s in out.scales.iter_mut() {
        *s *= t.scale;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn sample_set() -> GaussianSet {
        let mut set = GaussianSet::empty(3).unwrap();
        for i in 0..5 {
            let f = i as f64;
            let sh: Vec<f64> = (0..48).map(|k| ((k as f64) * 0.37 + f).sin() * 0.3).collect();
            set.push(Gaussian {
                position: Vector3::new(f * 0.1, -0.2 + f * 0.05, 0.3),
                rotation: UnitQuaternion::from_euler_angles(0.1 * f, -0.2, 0.3 * f),
                scale: Vector3::new(0.01 + 0.001 * f, 0.02, 0.005),
                opacity: 0.2 * f,
                sh,
            })
            .unwrap();
        }
        set
    }

    fn max_diff(a: &GaussianSet, b: &GaussianSet) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..a.len() {
            m = m.max((a.positions[i] - b.positions[i]).amax());
            m = m.max((a.covariance(i) - b.covariance(i)).amax());
            m = m.max((a.scales[i] - b.scales[i]).amax());
            m = m.max((a.opacities[i] - b.opacities[i]).abs());
            for (x, y) in a.sh_of(i).iter().zip(b.sh_of(i)) {
                m = m.max((x - y).abs());
            }
        }
        m
    }

    #[test]
    fn covariance_identity_rotation_is_diagonal_of_squares() {
        let c = covariance_of(&UnitQuaternion::identity(), &Vector3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(c, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0)));
    }

    #[test]
    fn covariance_quarter_turn_about_z_swaps_axes() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let c = covariance_of(&q, &Vector3::new(2.0, 1.0, 1.0)).unwrap();
        // oracle: explicit matrix product with the exact rotation matrix
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let s = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let expect = r * s * s.transpose() * r.transpose();
        assert_relative_eq!(c, expect, epsilon = 1e-12);
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn covariance_rejects_non_positive_scale() {
        assert!(covariance_of(&UnitQuaternion::identity(), &Vector3::new(1.0, 0.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn covariance_symmetric_with_squared_scale_spectrum(
            rx in -3.0f64..3.0, ry in -1.5f64..1.5, rz in -3.0f64..3.0,
            sx in 0.01f64..2.0, sy in 0.01f64..2.0, sz in 0.01f64..2.0,
        ) {
            let q = UnitQuaternion::from_euler_angles(rx, ry, rz);
            let s = Vector3::new(sx, sy, sz);
            let c = covariance_of(&q, &s).unwrap();
            prop_assert!((c - c.transpose()).amax() < 1e-12);
            let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
            let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
            eig.sort_by(f64::total_cmp);
            sq.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&sq) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn similarity_composition_is_consistent(
            a1 in -3.0f64..3.0, a2 in -3.0f64..3.0, s1 in 0.5f64..2.0, s2 in 0.5f64..2.0,
            tx in -1.0f64..1.0, ty in -1.0f64..1.0,
        ) {
            let set = sample_set();
            let t1 = SimilarityTransform::new(
                UnitQuaternion::from_euler_angles(a1, 0.3, -a1), Vector3::new(tx, ty, 0.1), s1).unwrap();
            let t2 = SimilarityTransform::new(
                UnitQuaternion::from_euler_angles(-0.2, a2, 0.5), Vector3::new(ty, 0.2, tx), s2).unwrap();
            let twice = apply_similarity(&apply_similarity(&set, &t1), &t2);
            let once = apply_similarity(&set, &t2.compose(&t1));
            prop_assert!(max_diff(&twice, &once) < 1e-9);
        }
    }

    #[test]
    fn identity_transform_leaves_set_unchanged() {
        let set = sample_set();
        let out = apply_similarity(&set, &SimilarityTransform::identity());
        assert!(max_diff(&set, &out) < 1e-12);
    }

    #[test]
    fn pure_translation_shifts_positions_only() {
        let set = sample_set();
        let t = SimilarityTransform::new(UnitQuaternion::identity(), Vector3::new(0.5, -1.0, 2.0), 1.0).unwrap();
        let out = apply_similarity(&set, &t);
        for i in 0..set.len() {
            assert_relative_eq!(out.positions()[i], set.positions()[i] + t.translation, epsilon = 1e-12);
            assert_relative_eq!(out.covariance(i), set.covariance(i), epsilon = 1e-12);
            assert_eq!(out.sh_of(i), set.sh_of(i));
        }
    }

    #[test]
    fn uniform_scale_doubles_positions_and_scales() {
        let set = sample_set();
        let t = SimilarityTransform::new(UnitQuaternion::identity(), Vector3::zeros(), 2.0).unwrap();
        let out = apply_similarity(&set, &t);
        for i in 0..set.len() {
            assert_relative_eq!(out.positions()[i], set.positions()[i] * 2.0, epsilon = 1e-12);
            assert_relative_eq!(out.scales()[i], set.scales()[i] * 2.0, epsilon = 1e-12);
            assert_eq!(out.opacities()[i], set.opacities()[i]);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let t = SimilarityTransform::new(
            UnitQuaternion::from_euler_angles(0.3, -0.4, 1.2),
            Vector3::new(0.1, 0.2, -0.3),
            1.3,
        )
        .unwrap();
        let id = t.compose(&t.inverse());
        assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(id.scale, 1.0, epsilon = 1e-12);
        assert!(id.rotation.angle() < 1e-12);
    }

    #[test]
    fn merge_concatenates_in_order() {
        let a = sample_set();
        let empty = GaussianSet::empty(3).unwrap();
        assert_eq!(merge([&a]).unwrap(), a);
        assert_eq!(merge([&a, &empty]).unwrap(), a);
        let ab = merge([&a, &a]).unwrap();
        assert_eq!(ab.len(), 2 * a.len());
        assert_eq!(ab.get(a.len()), a.get(0));
        let other = GaussianSet::empty(1).unwrap();
        assert!(matches!(merge([&a, &other]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn push_enforces_invariants() {
        let mut set = GaussianSet::empty(0).unwrap();
        let good = Gaussian::isotropic(Vector3::zeros(), 0.1, 0.5, [0.2, 0.3, 0.4], 0);
        set.push(good.clone()).unwrap();
        let mut bad = good.clone();
        bad.opacity = 1.5;
        assert!(set.push(bad).is_err());
        let mut bad = good.clone();
        bad.scale.x = -1.0;
        assert!(set.push(bad).is_err());
        let mut bad = good;
        bad.sh.push(0.0);
        assert!(set.push(bad).is_err());
        assert_eq!(set.len(), 1);
    }
}
