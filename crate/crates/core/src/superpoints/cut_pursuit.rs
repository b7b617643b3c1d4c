//! Split-and-merge cut pursuit for the piecewise-constant partition energy.
//!
//! Every iteration tries a binary split of each current superpoint and keeps
//! it only when the energy strictly drops, then greedily merges adjacent
//! superpoints while a merge strictly lowers the energy. Binary splits of
//! small superpoints are found by enumeration; larger ones use two-means
//! seeding followed by alternating min-cut labeling and centroid updates.
//! Split pieces are always the connected components of each label class.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rayon::prelude::*;

use crate::model::{Features, Partition};

use super::energy::squared_distance;
use super::mincut::binary_min_cut;
use super::AdjacencyGraph;

/// Superpoints up to this size get an exhaustive binary split search.
pub const EXACT_SPLIT_MAX: usize = 12;
/// Above this size the seed pair comes from a double farthest-point sweep
/// instead of the exact quadratic search.
pub const EXACT_SEED_MAX: usize = 2048;

const LLOYD_ITERS: usize = 10;
const CUT_ROUNDS: usize = 5;
const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CutPursuitResult {
    pub partition: Partition,
    /// Energy at the start and after every accepted split or merge, strictly decreasing.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Oversegment `features` over `graph`. See [`cut_pursuit_traced`].
pub fn cut_pursuit(features: &Features, graph: &AdjacencyGraph, rho: f64, max_iters: usize) -> Partition {
    cut_pursuit_traced(features, graph, rho, max_iters).partition
}

pub fn cut_pursuit_traced(
    features: &Features,
    graph: &AdjacencyGraph,
    rho: f64,
    max_iters: usize,
) -> CutPursuitResult {
    assert_eq!(features.len(), graph.num_nodes(), "one feature row per graph node");
    let n = features.len();
    let components = graph.components();

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (p, &c) in components.iter().enumerate() {
        if c == clusters.len() {
            clusters.push(Vec::new());
        }
        clusters[c].push(p);
    }

    let mut current = clusters.iter().map(|m| data_energy(features, m)).sum::<f64>();
    let mut trace = vec![current];
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;

        let proposals: Vec<Option<Split>> = clusters
            .par_iter()
            .map(|members| best_split(features, graph, members, rho))
            .collect();
        let mut next = Vec::with_capacity(clusters.len());
        for (members, proposal) in clusters.into_iter().zip(proposals) {
            match proposal {
                Some(split) => {
                    current -= split.gain;
                    trace.push(current);
                    changed = true;
                    next.extend(split.parts);
                }
                None => next.push(members),
            }
        }
        clusters = next;

        let (merged, gains) = merge_pass(features, graph, clusters, rho);
        clusters = merged;
        for g in gains {
            current -= g;
            trace.push(current);
            changed = true;
        }

        if !changed {
            break;
        }
    }

    let mut assignment = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &p in members {
            assignment[p] = c;
        }
    }

    // Per component, fall back to all singletons when that is cheaper.
    let mut comp_data = BTreeMap::new();
    for members in &clusters {
        *comp_data.entry(components[members[0]]).or_insert(0.0) += data_energy(features, members);
    }
    let mut comp_cut: BTreeMap<usize, f64> = BTreeMap::new();
    let mut comp_total: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, j, w) in graph.edges() {
        *comp_total.entry(components[i]).or_insert(0.0) += w;
        if assignment[i] != assignment[j] {
            *comp_cut.entry(components[i]).or_insert(0.0) += w;
        }
    }
    let mut singleton_components = Vec::new();
    for (&c, &data) in &comp_data {
        let now = data + rho * comp_cut.get(&c).copied().unwrap_or(0.0);
        let singletons = rho * comp_total.get(&c).copied().unwrap_or(0.0);
        if singletons < now - REL_TOL * now.abs().max(1.0) {
            current -= now - singletons;
            trace.push(current);
            singleton_components.push(c);
        }
    }
    if !singleton_components.is_empty() {
        let mut next_id = clusters.len();
        for p in 0..n {
            if singleton_components.binary_search(&components[p]).is_ok() {
                assignment[p] = next_id;
                next_id += 1;
            }
        }
    }

    let assignment = Partition::canonicalize(&assignment);
    let partition =
        Partition::from_assignment(assignment, features).expect("cut pursuit yields a dense cover");
    CutPursuitResult {
        partition,
        trace,
        iterations,
    }
}

struct Split {
    parts: Vec<Vec<usize>>,
    gain: f64,
}

fn mean_of(features: &Features, members: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; features.dim()];
    for &p in members {
        for (m, f) in mean.iter_mut().zip(features.row(p)) {
            *m += f;
        }
    }
    let inv = 1.0 / members.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

fn data_energy(features: &Features, members: &[usize]) -> f64 {
    let mean = mean_of(features, members);
    members
        .iter()
        .map(|&p| squared_distance(features.row(p), &mean))
        .sum()
}

/// Induced subgraph of a superpoint in local indices.
struct LocalGraph {
    adj: Vec<Vec<(usize, f64)>>,
    edges: Vec<(usize, usize, f64)>,
}

impl LocalGraph {
    fn new(graph: &AdjacencyGraph, members: &[usize]) -> Self {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        let mut adj = vec![Vec::new(); members.len()];
        let mut edges = Vec::new();
        for (li, &p) in members.iter().enumerate() {
            for &(q, w) in graph.neighbors(p) {
                if let Ok(lj) = members.binary_search(&q) {
                    adj[li].push((lj, w));
                    if li < lj {
                        edges.push((li, lj, w));
                    }
                }
            }
        }
        Self { adj, edges }
    }

    /// Connected pieces of each label class, as local index lists ordered by first member.
    fn pieces(&self, labels: &[bool]) -> Vec<Vec<usize>> {
        let n = labels.len();
        let mut piece = vec![usize::MAX; n];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for seed in 0..n {
            if piece[seed] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = Vec::new();
            piece[seed] = id;
            stack.push(seed);
            while let Some(i) = stack.pop() {
                members.push(i);
                for &(j, _) in &self.adj[i] {
                    if piece[j] == usize::MAX && labels[j] == labels[i] {
                        piece[j] = id;
                        stack.push(j);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    fn cut_weight(&self, labels: &[bool]) -> f64 {
        self.edges
            .iter()
            .filter(|&&(i, j, _)| labels[i] != labels[j])
            .map(|e| e.2)
            .sum()
    }
}

/// Energy of splitting into the connected pieces of a binary labeling, local to the superpoint.
fn split_energy(
    features: &Features,
    local: &LocalGraph,
    members: &[usize],
    labels: &[bool],
    rho: f64,
) -> (f64, Vec<Vec<usize>>) {
    let pieces = local.pieces(labels);
    let data: f64 = pieces
        .iter()
        .map(|piece| {
            let global: Vec<usize> = piece.iter().map(|&i| members[i]).collect();
            data_energy(features, &global)
        })
        .sum();
    (data + rho * local.cut_weight(labels), pieces)
}

fn best_split(features: &Features, graph: &AdjacencyGraph, members: &[usize], rho: f64) -> Option<Split> {
    let n = members.len();
    if n < 2 {
        return None;
    }
    let before = data_energy(features, members);
    if before <= 0.0 {
        return None;
    }
    let local = LocalGraph::new(graph, members);

    let candidates: Vec<Vec<bool>> = if n <= EXACT_SPLIT_MAX {
        (1..1u32 << (n - 1))
            .map(|mask| (0..n).map(|i| i > 0 && mask >> (i - 1) & 1 == 1).collect())
            .collect()
    } else {
        heuristic_labelings(features, &local, members, rho)
    };

    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    for labels in &candidates {
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let (e, pieces) = split_energy(features, &local, members, labels, rho);
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, pieces));
        }
    }
    let (after, pieces) = best?;
    let gain = before - after;
    if gain <= REL_TOL * before.max(1.0) || pieces.len() < 2 {
        return None;
    }
    let parts = pieces
        .into_iter()
        .map(|piece| piece.into_iter().map(|i| members[i]).collect())
        .collect();
    Some(Split { parts, gain })
}

/// Pair of members with (approximately, for large sets) maximal feature distance.
fn seed_pair(features: &Features, members: &[usize]) -> (usize, usize, f64) {
    let n = members.len();
    let dist = |a: usize, b: usize| squared_distance(features.row(members[a]), features.row(members[b]));
    let mut best = (0, 0, 0.0);
    if n <= EXACT_SEED_MAX {
        for a in 0..n {
            for b in a + 1..n {
                let d = dist(a, b);
                if d > best.2 {
                    best = (a, b, d);
                }
            }
        }
    } else {
        let farthest = |from: usize| {
            (0..n).fold((from, 0.0), |acc, b| {
                let d = dist(from, b);
                if d > acc.1 {
                    (b, d)
                } else {
                    acc
                }
            })
        };
        let (a, _) = farthest(0);
        let (b, d) = farthest(a);
        best = (a.min(b), a.max(b), d);
    }
    best
}

fn heuristic_labelings(
    features: &Features,
    local: &LocalGraph,
    members: &[usize],
    rho: f64,
) -> Vec<Vec<bool>> {
    let (a, b, d) = seed_pair(features, members);
    if d == 0.0 {
        return Vec::new();
    }
    let dim = features.dim();
    let row = |i: usize| features.row(members[i]);
    let mut c0 = row(a).to_vec();
    let mut c1 = row(b).to_vec();
    let assign = |c0: &[f64], c1: &[f64]| -> Vec<bool> {
        (0..members.len())
            .map(|i| squared_distance(row(i), c1) < squared_distance(row(i), c0))
            .collect()
    };
    let update = |labels: &[bool], c0: &mut Vec<f64>, c1: &mut Vec<f64>| -> bool {
        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (i, &l) in labels.iter().enumerate() {
            let k = l as usize;
            counts[k] += 1;
            for (s, f) in sums[k].iter_mut().zip(row(i)) {
                *s += f;
            }
        }
        if counts[0] == 0 || counts[1] == 0 {
            return false;
        }
        for (k, c) in [c0, c1].into_iter().enumerate() {
            for (cv, s) in c.iter_mut().zip(&sums[k]) {
                *cv = s / counts[k] as f64;
            }
        }
        true
    };

    let mut labels = assign(&c0, &c1);
    for _ in 0..LLOYD_ITERS {
        if !update(&labels, &mut c0, &mut c1) {
            break;
        }
        let next = assign(&c0, &c1);
        if next == labels {
            break;
        }
        labels = next;
    }
    let mut out = vec![labels.clone()];

    for _ in 0..CUT_ROUNDS {
        if !update(&labels, &mut c0, &mut c1) {
            break;
        }
        let unary: Vec<(f64, f64)> = (0..members.len())
            .map(|i| (squared_distance(row(i), &c0), squared_distance(row(i), &c1)))
            .collect();
        let edges: Vec<(usize, usize, f64)> =
            local.edges.iter().map(|&(i, j, w)| (i, j, rho * w)).collect();
        let next = binary_min_cut(&unary, &edges);
        if next == labels {
            break;
        }
        labels = next;
        out.push(labels.clone());
    }
    out
}

#[derive(PartialEq)]
struct MergeCandidate {
    gain: f64,
    a: usize,
    b: usize,
    version_a: u32,
    version_b: u32,
}

impl Eq for MergeCandidate {}

impl PartialOrd for MergeCandidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MergeCandidate {
    // Largest gain first, then the lowest pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

struct MergeState {
    count: f64,
    sum: Vec<f64>,
    version: u32,
    alive: bool,
    adjacent: BTreeMap<usize, f64>,
}

impl MergeState {
    fn gain_with(&self, other: &MergeState, weight: f64, rho: f64) -> f64 {
        let d2: f64 = self
            .sum
            .iter()
            .zip(&other.sum)
            .map(|(x, y)| {
                let diff = x / self.count - y / other.count;
                diff * diff
            })
            .sum();
        rho * weight - self.count * other.count / (self.count + other.count) * d2
    }
}

/// Greedy best-first merging. Returns the merged clusters and the gain of every merge.
fn merge_pass(
    features: &Features,
    graph: &AdjacencyGraph,
    clusters: Vec<Vec<usize>>,
    rho: f64,
) -> (Vec<Vec<usize>>, Vec<f64>) {
    let mut owner = vec![0usize; features.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &p in members {
            owner[p] = c;
        }
    }
    let mut states: Vec<MergeState> = clusters
        .iter()
        .map(|members| {
            let mut sum = vec![0.0; features.dim()];
            for &p in members {
                for (s, f) in sum.iter_mut().zip(features.row(p)) {
                    *s += f;
                }
            }
            MergeState {
                count: members.len() as f64,
                sum,
                version: 0,
                alive: true,
                adjacent: BTreeMap::new(),
            }
        })
        .collect();
    for (i, j, w) in graph.edges() {
        let (a, b) = (owner[i], owner[j]);
        if a != b {
            *states[a].adjacent.entry(b).or_insert(0.0) += w;
            *states[b].adjacent.entry(a).or_insert(0.0) += w;
        }
    }

    let mut heap = BinaryHeap::new();
    let threshold = |s: &MergeState, t: &MergeState| {
        let scale = (s.count + t.count).max(1.0);
        REL_TOL * scale
    };
    for a in 0..states.len() {
        for (&b, &w) in &states[a].adjacent {
            if b > a {
                let gain = states[a].gain_with(&states[b], w, rho);
                if gain > threshold(&states[a], &states[b]) {
                    heap.push(MergeCandidate {
                        gain,
                        a,
                        b,
                        version_a: 0,
                        version_b: 0,
                    });
                }
            }
        }
    }

    let mut parent: Vec<usize> = (0..states.len()).collect();
    let mut gains = Vec::new();
    while let Some(c) = heap.pop() {
        let (a, b) = (c.a, c.b);
        if !states[a].alive
            || !states[b].alive
            || states[a].version != c.version_a
            || states[b].version != c.version_b
        {
            continue;
        }
        gains.push(c.gain);
        // Fold b into a.
        let absorbed = std::mem::replace(
            &mut states[b],
            MergeState {
                count: 0.0,
                sum: Vec::new(),
                version: 0,
                alive: false,
                adjacent: BTreeMap::new(),
            },
        );
        parent[b] = a;
        {
            let sa = &mut states[a];
            sa.count += absorbed.count;
            for (s, t) in sa.sum.iter_mut().zip(&absorbed.sum) {
                *s += t;
            }
            sa.version += 1;
            sa.adjacent.remove(&b);
        }
        for (&nb, &w) in &absorbed.adjacent {
            if nb == a {
                continue;
            }
            *states[a].adjacent.entry(nb).or_insert(0.0) += w;
            let entry = states[nb].adjacent.remove(&b).unwrap_or(0.0);
            *states[nb].adjacent.entry(a).or_insert(0.0) += entry;
        }
        let neighbors: Vec<(usize, f64)> = states[a].adjacent.iter().map(|(&k, &w)| (k, w)).collect();
        for (nb, w) in neighbors {
            let gain = states[a].gain_with(&states[nb], w, rho);
            if gain > threshold(&states[a], &states[nb]) {
                let (x, y) = (a.min(nb), a.max(nb));
                heap.push(MergeCandidate {
                    gain,
                    a: x,
                    b: y,
                    version_a: states[x].version,
                    version_b: states[y].version,
                });
            }
        }
    }

    let find = |mut c: usize| {
        while parent[c] != c {
            c = parent[c];
        }
        c
    };
    let mut grouped: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (c, members) in clusters.into_iter().enumerate() {
        grouped.entry(find(c)).or_default().extend(members);
    }
    let merged = grouped
        .into_values()
        .map(|mut m| {
            m.sort_unstable();
            m
        })
        .collect();
    (merged, gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpoints::{build_knn_graph, energy};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total(p: &Partition, f: &Features, g: &AdjacencyGraph, rho: f64) -> f64 {
        energy(p, f, g, rho).total()
    }

    #[test]
    fn single_point_is_its_own_superpoint() {
        let f = Features::new(2, vec![1.0, 2.0]);
        let g = AdjacencyGraph::from_edges(1, []);
        let p = cut_pursuit(&f, &g, 0.1, 10);
        assert_eq!(p.assignment(), &[0]);
    }

    #[test]
    fn separated_clusters_are_recovered() {
        // Two clusters of six points along a line, joined by one edge.
        let pts: Vec<Vector3<f64>> = (0..12).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let g = build_knn_graph(&pts, 2);
        let vals: Vec<f64> = (0..12).flat_map(|i| if i < 6 { [0.0, 1.0] } else { [1.0, 0.0] }).collect();
        let f = Features::new(2, vals);
        let p = cut_pursuit(&f, &g, 0.05, 50);
        let want: Vec<usize> = (0..12).map(|i| (i >= 6) as usize).collect();
        assert_eq!(p.assignment(), want.as_slice());
    }

    #[test]
    fn constant_features_give_one_superpoint_per_component() {
        let mut pts: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        pts.extend((0..10).map(|i| Vector3::new(100.0 + i as f64 * 0.1, 0.0, 0.0)));
        let g = build_knn_graph(&pts, 3);
        let f = Features::new(3, vec![0.3; 60]);
        for rho in [1e-6, 0.1, 10.0] {
            let p = cut_pursuit(&f, &g, rho, 50);
            assert_eq!(p.len(), 2);
            assert!(p.assignment()[..10].iter().all(|&a| a == 0));
        }
    }

    #[test]
    fn large_rho_keeps_components_whole() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vector3<f64>> = (0..60).map(|_| Vector3::new(rng.random(), rng.random(), 0.0)).collect();
        let g = build_knn_graph(&pts, 5);
        let f = Features::new(2, (0..120).map(|_| rng.random()).collect());
        let variance = total(&Partition::from_assignment(vec![0; 60], &f).unwrap(), &f, &g, 1.0);
        let p = cut_pursuit(&f, &g, variance.max(1.0), 50);
        assert_eq!(p.len(), g.components().iter().max().unwrap() + 1);
    }

    #[test]
    fn trace_strictly_decreases_and_matches_final_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vector3<f64>> = (0..400).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
        let g = build_knn_graph(&pts, 8);
        // Piecewise features with noise.
        let vals: Vec<f64> = pts
            .iter()
            .flat_map(|p| {
                let base = if p.x < 0.5 { 0.0 } else { 1.0 };
                let side = if p.y < 0.3 { 1.0 } else { 0.0 };
                [base + 0.05 * p.z, side, 0.02 * p.y]
            })
            .collect();
        let f = Features::new(3, vals);
        let r = cut_pursuit_traced(&f, &g, 0.05, 50);
        assert!(r.trace.windows(2).all(|w| w[1] < w[0]), "{:?}", r.trace);
        let e = total(&r.partition, &f, &g, 0.05);
        assert!((e - r.trace.last().unwrap()).abs() < 1e-8 * e.max(1.0));
        assert!(r.partition.len() >= 4);
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Vector3<f64>> = (0..300).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
        let g = build_knn_graph(&pts, 6);
        let f = Features::new(2, (0..600).map(|_| rng.random::<f64>().round()).collect());
        let a = cut_pursuit(&f, &g, 0.2, 30);
        let b = cut_pursuit(&f, &g, 0.2, 30);
        assert_eq!(a, b);
    }

    #[test]
    fn converged_small_superpoints_admit_no_improving_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let pts: Vec<Vector3<f64>> = (0..40).map(|_| Vector3::new(rng.random(), rng.random(), 0.0)).collect();
            let g = build_knn_graph(&pts, 4);
            let f = Features::new(2, (0..80).map(|_| rng.random()).collect());
            let rho = rng.random_range(0.01..0.5);
            let p = cut_pursuit(&f, &g, rho, 200);
            let base = total(&p, &f, &g, rho);
            for s in 0..p.len() {
                let m = p.members(s);
                if m.len() > EXACT_SPLIT_MAX || m.len() < 2 {
                    continue;
                }
                for mask in 1..1u32 << (m.len() - 1) {
                    let mut a = p.assignment().to_vec();
                    for (i, &pt) in m.iter().enumerate().skip(1) {
                        if mask >> (i - 1) & 1 == 1 {
                            a[pt] = p.len();
                        }
                    }
                    let q = Partition::from_assignment(Partition::canonicalize(&a), &f).unwrap();
                    assert!(total(&q, &f, &g, rho) >= base - 1e-9);
                }
            }
        }
    }
}
