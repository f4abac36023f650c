use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::spatial::PointIndex;
use crate::splat::SimilarityTransform;

pub const ICP_MAX_ITERATIONS: usize = 100;
pub const ICP_RMS_TOLERANCE: f64 = 1e-7;

fn centroid(points: &[Point3<f64>]) -> Vector3<f64> {
    points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / points.len() as f64
}

/// Rejects clouds whose spread spans fewer than two directions.
fn check_spread(points: &[Point3<f64>], which: &str) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("{which} cloud has {} points, need 3", points.len())));
    }
    if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return Err(Error::invalid(format!("{which} cloud has non-finite coordinates")));
    }
    let mu = centroid(points);
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - mu;
        acc + d * d.transpose()
    });
    let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 0.0) || eig[1] <= 1e-12 * eig[0] {
        return Err(Error::DegenerateGeometry(format!("{which} cloud is collinear or coincident")));
    }
    Ok(())
}

/// Least-squares similarity mapping `src[i]` onto `dst[i]` (closed form
/// with reflection guard). Inputs must be the same nonzero length.
pub fn umeyama(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::invalid(format!("umeyama needs equal nonempty sets, got {} and {}", src.len(), dst.len())));
    }
    let n = src.len() as f64;
    let (mu_s, mu_d) = (centroid(src), centroid(dst));
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s.coords - mu_s, d.coords - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if !(var_s > 0.0) {
        return Err(Error::DegenerateGeometry("source points coincide".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        signs.z = -1.0;
    }
    let rot = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = svd.singular_values.component_mul(&signs).sum() / var_s;
    let rotation = UnitQuaternion::from_matrix(&rot);
    let translation = mu_d - rotation * (mu_s * scale);
    SimilarityTransform::new(rotation, translation, scale)
        .map_err(|_| Error::DegenerateGeometry("correspondences give a non-positive scale".into()))
}

/// Point-to-point ICP with per-iteration similarity estimation. Stops when
/// the correspondence RMS changes by less than [`ICP_RMS_TOLERANCE`] or
/// after [`ICP_MAX_ITERATIONS`]. The result maps `source` onto `target`.
pub fn icp_register(source: &[Point3<f64>], target: &[Point3<f64>], init: &SimilarityTransform) -> Result<SimilarityTransform> {
    check_spread(source, "source")?;
    check_spread(target, "target")?;
    let index = PointIndex::new(target);
    let mut current = *init;
    let mut prev_rms = f64::INFINITY;
    let mut matched = vec![Point3::origin(); source.len()];
    for _ in 0..ICP_MAX_ITERATIONS {
        let mut sq = 0.0;
        for (m, p) in matched.iter_mut().zip(source) {
            let (d2, i) = index.nearest(&current.transform_point(p)).expect("target is nonempty");
            sq += d2;
            *m = target[i];
        }
        let rms = (sq / source.len() as f64).sqrt();
        if (prev_rms - rms).abs() < ICP_RMS_TOLERANCE {
            break;
        }
        prev_rms = rms;
        current = umeyama(source, &matched)?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// An asymmetric blob: an L of two slabs plus a knob.
    fn cloud(seed: u64) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for _ in 0..400 {
            pts.push(Point3::new(rng.random_range(0.0..0.4), rng.random_range(0.0..0.08), rng.random_range(0.0..0.05)));
        }
        for _ in 0..250 {
            pts.push(Point3::new(rng.random_range(0.0..0.08), rng.random_range(0.0..0.25), rng.random_range(0.0..0.05)));
        }
        for _ in 0..150 {
            pts.push(Point3::new(rng.random_range(0.3..0.36), rng.random_range(0.0..0.06), rng.random_range(0.05..0.2)));
        }
        pts
    }

    fn apply(t: &SimilarityTransform, pts: &[Point3<f64>]) -> Vec<Point3<f64>> {
        pts.iter().map(|p| t.transform_point(p)).collect()
    }

    fn errors(a: &SimilarityTransform, b: &SimilarityTransform) -> (f64, f64, f64) {
        (
            (a.translation - b.translation).norm(),
            a.rotation.angle_to(&b.rotation),
            (a.scale / b.scale - 1.0).abs(),
        )
    }

    #[test]
    fn umeyama_recovers_exact_similarity() {
        let src = cloud(1);
        let truth = SimilarityTransform::new(UnitQuaternion::from_euler_angles(0.4, -1.0, 2.0), Vector3::new(1.0, -2.0, 0.5), 0.7).unwrap();
        let est = umeyama(&src, &apply(&truth, &src)).unwrap();
        let (t, r, s) = errors(&est, &truth);
        assert!(t < 1e-12 && r < 1e-12 && s < 1e-12);
    }

    #[test]
    fn umeyama_handles_planar_sets_without_reflection() {
        let src: Vec<Point3<f64>> = [(0.0, 0.0), (1.0, 0.0), (0.0, 2.0), (1.5, 0.7)].iter().map(|&(x, y)| Point3::new(x, y, 0.0)).collect();
        let truth = SimilarityTransform::new(UnitQuaternion::from_euler_angles(0.3, 0.2, 0.1), Vector3::new(0.1, 0.0, 0.0), 2.0).unwrap();
        let est = umeyama(&src, &apply(&truth, &src)).unwrap();
        let (t, r, s) = errors(&est, &truth);
        assert!(t < 1e-12 && r < 1e-12 && s < 1e-12);
    }

    #[test]
    fn identical_clouds_give_identity() {
        let src = cloud(2);
        let est = icp_register(&src, &src, &SimilarityTransform::identity()).unwrap();
        let (t, r, s) = errors(&est, &SimilarityTransform::identity());
        assert!(t < 1e-9 && r < 1e-9 && s < 1e-9, "{t} {r} {s}");
    }

    #[test]
    fn recovers_known_similarity_from_identity() {
        let src = cloud(3);
        let truth = SimilarityTransform::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.3, -0.5, 1.0).normalize() * 10f64.to_radians()),
            Vector3::new(0.03, -0.04, 0.0),
            1.05,
        )
        .unwrap();
        let est = icp_register(&src, &apply(&truth, &src), &SimilarityTransform::identity()).unwrap();
        let (t, r, s) = errors(&est, &truth);
        assert!(t < 1e-3, "translation {t}");
        assert!(r < 0.1f64.to_radians(), "rotation {r}");
        assert!(s < 1e-3, "scale {s}");
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let line: Vec<Point3<f64>> = (0..3).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        let good = cloud(4);
        assert!(matches!(icp_register(&line, &good, &SimilarityTransform::identity()), Err(Error::DegenerateGeometry(_))));
        assert!(matches!(icp_register(&good, &line, &SimilarityTransform::identity()), Err(Error::DegenerateGeometry(_))));
        assert!(matches!(icp_register(&good[..2], &good, &SimilarityTransform::identity()), Err(Error::DegenerateGeometry(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn invariant_under_common_rigid_motion(
            ax in -3.0f64..3.0, ay in -1.5f64..1.5, az in -3.0f64..3.0,
            tx in -2.0f64..2.0, ty in -2.0f64..2.0, tz in -2.0f64..2.0,
        ) {
            let src = cloud(5);
            let truth = SimilarityTransform::new(UnitQuaternion::from_euler_angles(0.05, -0.1, 0.08), Vector3::new(0.02, 0.01, -0.03), 0.97).unwrap();
            let dst = apply(&truth, &src);
            let init = SimilarityTransform::identity();
            let base = icp_register(&src, &dst, &init).unwrap();
            let g = SimilarityTransform::new(UnitQuaternion::from_euler_angles(ax, ay, az), Vector3::new(tx, ty, tz), 1.0).unwrap();
            let moved = icp_register(&apply(&g, &src), &apply(&g, &dst), &g.compose(&init).compose(&g.inverse())).unwrap();
            let expected = g.compose(&base).compose(&g.inverse());
            let (t, r, s) = errors(&moved, &expected);
            prop_assert!(t < 1e-6 && r < 1e-6 && s < 1e-6, "{} {} {}", t, r, s);
        }
    }
}
