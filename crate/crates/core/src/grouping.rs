//! Superpoint-to-instance grouping.
//!
//! Two superpoints are merged when they share a semantic label, are joined by
//! at least one kNN edge, and their box-coverage vectors over the boxes of the
//! views that see both are close in relative L1 distance. Instances are the
//! connected components of the merged pairs.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::model::{CategoryId, Detection, Partition, SegmentationResult, VisibilityMap};
use crate::superpoints::AdjacencyGraph;
use crate::voting::ScoreMatrix;

/// Which boxes of the shared views enter the coverage vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxSet {
    /// Only boxes of the pair's own category.
    #[default]
    SameCategory,
    /// Every box in the shared views.
    AllCategories,
}

/// Per-superpoint visibility and per-box containment counts.
#[derive(Debug, Clone)]
pub struct CoverageTable {
    num_views: usize,
    /// `S x K` visible point counts.
    visible: Vec<u32>,
    /// `S x D` visible points inside each detection.
    inside: Vec<u32>,
    detections: Vec<Detection>,
    /// Detection indices sorted by `(view, index)`.
    order: Vec<usize>,
}

impl CoverageTable {
    pub fn new(partition: &Partition, detections: &[Detection], vis: &VisibilityMap) -> Self {
        let s = partition.len();
        let k = vis.num_views();
        let d = detections.len();
        let mut by_view: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, det) in detections.iter().enumerate() {
            by_view[det.view].push(i);
        }
        let per_view: Vec<(Vec<u32>, Vec<(usize, usize)>)> = vis
            .views
            .par_iter()
            .zip(by_view.par_iter())
            .map(|(view, dets)| {
                let mut visible = vec![0u32; s];
                let mut hits = Vec::new();
                for (p, &seen) in view.visible.iter().enumerate() {
                    if !seen {
                        continue;
                    }
                    let sp = partition.superpoint_of(p);
                    visible[sp] += 1;
                    let pr = view.projections[p].expect("visible points are projected");
                    for &di in dets {
                        if detections[di].bbox.contains(pr.x, pr.y) {
                            hits.push((sp, di));
                        }
                    }
                }
                (visible, hits)
            })
            .collect();
        let mut visible = vec![0u32; s * k];
        let mut inside = vec![0u32; s * d];
        for (view, (counts, hits)) in per_view.into_iter().enumerate() {
            for (sp, c) in counts.into_iter().enumerate() {
                visible[sp * k + view] = c;
            }
            for (sp, di) in hits {
                inside[sp * d + di] += 1;
            }
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by_key(|&i| (detections[i].view, i));
        Self {
            num_views: k,
            visible,
            inside,
            detections: detections.to_vec(),
            order,
        }
    }

    pub fn visible_in(&self, superpoint: usize, view: usize) -> u32 {
        self.visible[superpoint * self.num_views + view]
    }

    /// Boxes from views where both superpoints have a visible point, ordered by
    /// view then detection index. `category` restricts to one category.
    pub fn shared_boxes(&self, u: usize, v: usize, category: Option<CategoryId>) -> Vec<usize> {
        self.order
            .iter()
            .copied()
            .filter(|&i| {
                let d = &self.detections[i];
                category.is_none_or(|c| d.category == c)
                    && self.visible_in(u, d.view) > 0
                    && self.visible_in(v, d.view) > 0
            })
            .collect()
    }

    /// Fraction of the superpoint's points visible in each box's view that fall
    /// inside the box; 0 where it has no visible points in that view.
    pub fn coverage(&self, u: usize, boxes: &[usize]) -> Vec<f64> {
        let d = self.detections.len();
        boxes
            .iter()
            .map(|&i| {
                let den = self.visible_in(u, self.detections[i].view);
                if den == 0 {
                    0.0
                } else {
                    self.inside[u * d + i] as f64 / den as f64
                }
            })
            .collect()
    }
}

/// `|I_u - I_v|_1 / max(|I_u|_1, |I_v|_1)`, defined as 0 when both are zero.
pub fn merge_ratio(iu: &[f64], iv: &[f64]) -> f64 {
    assert_eq!(iu.len(), iv.len(), "coverage vectors over different box lists");
    let diff: f64 = iu.iter().zip(iv).map(|(a, b)| (a - b).abs()).sum();
    let nu: f64 = iu.iter().map(|a| a.abs()).sum();
    let nv: f64 = iv.iter().map(|a| a.abs()).sum();
    let denom = nu.max(nv);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

pub fn merge_test(iu: &[f64], iv: &[f64], tau: f64) -> bool {
    merge_ratio(iu, iv) < tau
}

/// Superpoint pairs `(a, b)`, `a < b`, joined by at least one graph edge.
pub fn adjacent_superpoints(partition: &Partition, graph: &AdjacencyGraph) -> Vec<(usize, usize)> {
    let assignment = partition.assignment();
    let pairs: BTreeSet<(usize, usize)> = graph
        .edges()
        .filter_map(|(i, j, _)| {
            let (a, b) = (assignment[i], assignment[j]);
            (a != b).then(|| (a.min(b), a.max(b)))
        })
        .collect();
    pairs.into_iter().collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GroupingParams {
    pub tau: f64,
    pub box_set: BoxSet,
}

impl Default for GroupingParams {
    fn default() -> Self {
        Self {
            tau: 0.3,
            box_set: BoxSet::SameCategory,
        }
    }
}

/// Group labeled superpoints into instances.
///
/// `labels` holds one category per superpoint (the unlabeled sentinel is
/// `scores.num_categories()`). An instance's confidence is the mean vote score
/// of its category over its superpoints, weighted by visible incidences.
pub fn group_instances(
    partition: &Partition,
    labels: &[CategoryId],
    detections: &[Detection],
    vis: &VisibilityMap,
    graph: &AdjacencyGraph,
    scores: &ScoreMatrix,
    params: GroupingParams,
) -> SegmentationResult {
    let unlabeled = scores.num_categories() as CategoryId;
    let table = CoverageTable::new(partition, detections, vis);

    let candidates: Vec<(usize, usize)> = adjacent_superpoints(partition, graph)
        .into_iter()
        .filter(|&(a, b)| labels[a] == labels[b] && labels[a] != unlabeled)
        .collect();
    let passing: Vec<(usize, usize)> = candidates
        .par_iter()
        .copied()
        .filter(|&(a, b)| {
            let category = match params.box_set {
                BoxSet::SameCategory => Some(labels[a]),
                BoxSet::AllCategories => None,
            };
            let boxes = table.shared_boxes(a, b, category);
            merge_test(&table.coverage(a, &boxes), &table.coverage(b, &boxes), params.tau)
        })
        .collect();

    let mut parent: Vec<usize> = (0..partition.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in passing {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let roots: Vec<usize> = (0..partition.len()).map(|s| find(&mut parent, s)).collect();

    let mut num = vec![0u64; partition.len()];
    let mut den = vec![0u64; partition.len()];
    for s in 0..partition.len() {
        if labels[s] != unlabeled {
            num[roots[s]] += scores.numerator(s, labels[s] as usize);
            den[roots[s]] += scores.denominator(s);
        }
    }

    let semantic: Vec<CategoryId> = partition.assignment().iter().map(|&s| labels[s]).collect();
    let keys: Vec<Option<u64>> = partition
        .assignment()
        .iter()
        .map(|&s| (labels[s] != unlabeled).then_some(roots[s] as u64))
        .collect();
    SegmentationResult::from_labels(scores.num_categories(), semantic, &keys, |root| {
        let r = root as usize;
        if den[r] == 0 {
            0.0
        } else {
            num[r] as f64 / den[r] as f64
        }
    })
    .expect("instances are built from single-category superpoint groups")
}
