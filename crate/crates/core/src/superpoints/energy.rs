use crate::model::{Features, Partition};

use super::AdjacencyGraph;

/// Piecewise-constant partition energy: squared feature error against each
/// superpoint's mean plus `rho` times the weight of cut edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionEnergy {
    pub data: f64,
    pub boundary: f64,
}

impl PartitionEnergy {
    pub fn total(&self) -> f64 {
        self.data + self.boundary
    }
}

pub fn energy(
    partition: &Partition,
    features: &Features,
    graph: &AdjacencyGraph,
    rho: f64,
) -> PartitionEnergy {
    let data = (0..partition.num_points())
        .map(|p| squared_distance(features.row(p), partition.mean(partition.superpoint_of(p))))
        .sum();
    let assignment = partition.assignment();
    let cut: f64 = graph
        .edges()
        .filter(|&(i, j, _)| assignment[i] != assignment[j])
        .map(|(_, _, w)| w)
        .sum();
    PartitionEnergy {
        data,
        boundary: rho * cut,
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, seed: u64) -> (Features, AdjacencyGraph, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let vals = (0..n * 3).map(|_| rng.random::<f64>()).collect();
        (Features::new(3, vals), super::super::build_knn_graph(&pts, 4), rng)
    }

    #[test]
    fn singletons_have_no_data_term() {
        let (f, g, _) = setup(30, 1);
        let p = Partition::from_assignment((0..30).collect(), &f).unwrap();
        let e = energy(&p, &f, &g, 0.25);
        assert_eq!(e.data, 0.0);
        let w: f64 = g.edges().map(|e| e.2).sum();
        assert!((e.boundary - 0.25 * w).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_has_no_boundary_term() {
        let (f, g, _) = setup(30, 2);
        let p = Partition::from_assignment(vec![0; 30], &f).unwrap();
        let e = energy(&p, &f, &g, 0.25);
        assert_eq!(e.boundary, 0.0);
        // N times the total (per-point) feature variance.
        let mut var = 0.0;
        for d in 0..3 {
            let col: Vec<f64> = (0..30).map(|i| f.row(i)[d]).collect();
            let mean = col.iter().sum::<f64>() / 30.0;
            var += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0;
        }
        assert!((e.data - 30.0 * var).abs() < 1e-10);
    }

    #[test]
    fn random_partition_matches_two_loop_oracle() {
        let (f, g, mut rng) = setup(50, 3);
        let raw: Vec<usize> = (0..50).map(|_| rng.random_range(0..6)).collect();
        let assignment = Partition::canonicalize(&raw);
        let p = Partition::from_assignment(assignment.clone(), &f).unwrap();
        let e = energy(&p, &f, &g, 0.7);

        let s = assignment.iter().max().unwrap() + 1;
        let mut data = 0.0;
        for c in 0..s {
            let members: Vec<usize> = (0..50).filter(|&i| assignment[i] == c).collect();
            for d in 0..3 {
                let mean = members.iter().map(|&i| f.row(i)[d]).sum::<f64>() / members.len() as f64;
                for &i in &members {
                    data += (f.row(i)[d] - mean).powi(2);
                }
            }
        }
        let mut cut = 0.0;
        for i in 0..50 {
            for j in 0..50 {
                if i < j && g.has_edge(i, j) && assignment[i] != assignment[j] {
                    cut += 1.0;
                }
            }
        }
        assert!((e.data - data).abs() < 1e-10);
        assert!((e.boundary - 0.7 * cut).abs() < 1e-10);
    }
}
