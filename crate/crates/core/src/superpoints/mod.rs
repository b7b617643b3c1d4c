//! Superpoint oversegmentation: per-point normal/color features on a kNN
//! graph, partitioned by minimizing a piecewise-constant energy.

mod cut_pursuit;
mod energy;
mod knn;
pub mod mincut;

pub use cut_pursuit::{cut_pursuit, cut_pursuit_traced, CutPursuitResult, EXACT_SPLIT_MAX};
pub use energy::{energy, PartitionEnergy};
pub use knn::{build_knn_graph, knn_lists, AdjacencyGraph};

use crate::model::{Features, PointCloud};

/// Six-dimensional point features: the unit normal followed by the scaled color.
pub fn build_features(cloud: &PointCloud, color_weight: f64) -> Features {
    let values = cloud
        .normals()
        .iter()
        .zip(cloud.colors())
        .flat_map(|(n, c)| {
            [
                n.x,
                n.y,
                n.z,
                color_weight * c[0],
                color_weight * c[1],
                color_weight * c[2],
            ]
        })
        .collect();
    Features::new(6, values)
}
