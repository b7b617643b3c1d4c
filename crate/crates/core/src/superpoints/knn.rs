//! Exact k-nearest-neighbour graph over a uniform hash grid.

use std::collections::{BinaryHeap, HashMap};

use nalgebra::Vector3;
use rayon::prelude::*;

/// Undirected weighted graph over point indices. Neighbour lists are sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl AdjacencyGraph {
    /// Build from undirected edges. Duplicates collapse (first weight wins), self-loops are dropped.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut neighbors = vec![Vec::new(); num_nodes];
        for (i, j, w) in edges {
            if i == j {
                continue;
            }
            neighbors[i].push((j, w));
            neighbors[j].push((i, w));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
            list.dedup_by_key(|&mut (j, _)| j);
        }
        Self { neighbors }
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search_by_key(&j, |&(k, _)| k).is_ok()
    }

    /// Every edge once, as `(i, j, w)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.neighbors.iter().enumerate().flat_map(|(i, list)| {
            list.iter()
                .filter(move |&&(j, _)| j > i)
                .map(move |&(j, w)| (i, j, w))
        })
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Connected component id per node, numbered by lowest member index.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.num_nodes()];
        let mut next = 0;
        let mut stack = Vec::new();
        for seed in 0..self.num_nodes() {
            if comp[seed] != usize::MAX {
                continue;
            }
            comp[seed] = next;
            stack.push(seed);
            while let Some(i) = stack.pop() {
                for &(j, _) in &self.neighbors[i] {
                    if comp[j] == usize::MAX {
                        comp[j] = next;
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

#[derive(PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

type Cell = (i64, i64, i64);

/// Exact k nearest neighbours of every point, nearest first. Distance ties go
/// to the lower index.
pub fn knn_lists(positions: &[Vector3<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = positions.len();
    let k = k.min(n.saturating_sub(1));
    if k == 0 {
        return vec![Vec::new(); n];
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let diag = (hi - lo).norm();
    // Sized for points on a surface: about k points per cell.
    let h = if diag > 0.0 {
        diag * (k as f64 / n as f64).sqrt()
    } else {
        1.0
    };
    let cell_of = |p: &Vector3<f64>| -> Cell {
        (
            ((p.x - lo.x) / h).floor() as i64,
            ((p.y - lo.y) / h).floor() as i64,
            ((p.z - lo.z) / h).floor() as i64,
        )
    };
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        grid.entry(cell_of(p)).or_default().push(i);
    }
    let extent = ((diag / h).ceil() as i64).max(1) + 1;

    (0..n)
        .into_par_iter()
        .map(|q| {
            let qp = &positions[q];
            let (cx, cy, cz) = cell_of(qp);
            let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
            let visit = |idx: &[usize], heap: &mut BinaryHeap<Candidate>| {
                for &j in idx {
                    if j == q {
                        continue;
                    }
                    let c = Candidate {
                        d2: (positions[j] - qp).norm_squared(),
                        index: j,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            };
            for r in 0..=extent {
                for dz in -r..=r {
                    for dy in -r..=r {
                        let on_face = dz.abs() == r || dy.abs() == r;
                        let step = if on_face { 1 } else { (2 * r).max(1) as usize };
                        for dx in (-r..=r).step_by(step) {
                            if let Some(idx) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                                visit(idx, &mut heap);
                            }
                        }
                    }
                }
                // Anything in ring r + 1 or beyond is at least r * h away.
                if heap.len() == k {
                    let reach = r as f64 * h;
                    if heap.peek().unwrap().d2 < reach * reach {
                        break;
                    }
                }
            }
            heap.into_sorted_vec().into_iter().map(|c| c.index).collect()
        })
        .collect()
}

/// Symmetrized exact kNN graph with unit edge weights.
pub fn build_knn_graph(positions: &[Vector3<f64>], k: usize) -> AdjacencyGraph {
    let lists = knn_lists(positions, k);
    AdjacencyGraph::from_edges(
        positions.len(),
        lists
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |&j| (i, j, 1.0))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(positions: &[Vector3<f64>], k: usize) -> Vec<Vec<usize>> {
        (0..positions.len())
            .map(|i| {
                let mut all: Vec<(f64, usize)> = (0..positions.len())
                    .filter(|&j| j != i)
                    .map(|j| ((positions[j] - positions[i]).norm_squared(), j))
                    .collect();
                all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                all.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn collinear_points() {
        let pts = [Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0];
        let g = build_knn_graph(&pts, 1);
        let edges: Vec<_> = g.edges().map(|(i, j, _)| (i, j)).collect();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
        // Middle point is equidistant: the lower index wins.
        assert_eq!(knn_lists(&pts, 1)[1], vec![0]);
    }

    #[test]
    fn k_of_n_minus_one_is_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..9)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let g = build_knn_graph(&pts, 8);
        assert_eq!(g.num_edges(), 36);
        assert!((0..9).all(|i| g.degree(i) == 8));
    }

    #[test]
    fn matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..500)
            .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        assert_eq!(knn_lists(&pts, 10), brute_force(&pts, 10));
    }

    #[test]
    fn matches_brute_force_with_duplicates_and_flat_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts: Vec<_> = (0..300)
            .map(|_| {
                Vector3::new(
                    rng.random_range(0..20) as f64 * 0.1,
                    rng.random_range(0..20) as f64 * 0.1,
                    0.0,
                )
            })
            .collect();
        pts.push(pts[3]);
        assert_eq!(knn_lists(&pts, 7), brute_force(&pts, 7));
    }

    #[test]
    fn graph_is_symmetric_without_self_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<_> = (0..200)
            .map(|_| Vector3::new(rng.random(), rng.random(), 0.0))
            .collect();
        let g = build_knn_graph(&pts, 4);
        for i in 0..pts.len() {
            assert!(g.degree(i) >= 1);
            for &(j, _) in g.neighbors(i) {
                assert_ne!(i, j);
                assert!(g.has_edge(j, i));
            }
        }
    }
}
