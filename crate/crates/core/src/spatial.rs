use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Point3;

/// Exact nearest-neighbor queries over a fixed point set.
pub(crate) struct PointIndex {
    tree: Option<ImmutableKdTree<f64, 3>>,
}

impl PointIndex {
    pub fn new(points: &[Point3<f64>]) -> Self {
        if points.is_empty() {
            return Self { tree: None };
        }
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self {
            tree: Some(ImmutableKdTree::new_from_slice(&coords)),
        }
    }

    /// Squared distance to and index of the nearest point.
    pub fn nearest(&self, p: &Point3<f64>) -> Option<(f64, usize)> {
        let tree = self.tree.as_ref()?;
        let nn = tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]);
        Some((nn.distance, nn.item as usize))
    }
}
