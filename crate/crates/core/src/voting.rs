//! Superpoint semantic voting.
//!
//! For superpoint `i` and category `j` the score is the fraction of its
//! visible (point, view) incidences whose projection falls in at least one
//! box of category `j` in that view.

use rayon::prelude::*;

use crate::model::{BBox2D, CategoryId, Detection, Partition, VisibilityMap};

/// `S x C` coverage scores with their integer tallies.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    num_categories: usize,
    numerators: Vec<u64>,
    denominators: Vec<u64>,
}

impl ScoreMatrix {
    pub fn num_superpoints(&self) -> usize {
        self.denominators.len()
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    /// Visible (point, view) incidences of a superpoint.
    pub fn denominator(&self, superpoint: usize) -> u64 {
        self.denominators[superpoint]
    }

    pub fn numerator(&self, superpoint: usize, category: usize) -> u64 {
        self.numerators[superpoint * self.num_categories + category]
    }

    /// `None` when the superpoint is never visible.
    pub fn score(&self, superpoint: usize, category: usize) -> Option<f64> {
        let den = self.denominators[superpoint];
        (den > 0).then(|| self.numerator(superpoint, category) as f64 / den as f64)
    }

    pub fn row(&self, superpoint: usize) -> Option<Vec<f64>> {
        (self.denominators[superpoint] > 0)
            .then(|| (0..self.num_categories).map(|j| self.score(superpoint, j).unwrap()).collect())
    }
}

/// Detections with confidence at least `min_score`.
pub fn filter_detections(detections: &[Detection], min_score: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.score >= min_score)
        .copied()
        .collect()
}

/// Boxes of each view grouped by category.
pub(crate) fn boxes_by_view_and_category(
    detections: &[Detection],
    num_views: usize,
    num_categories: usize,
) -> Vec<Vec<Vec<BBox2D>>> {
    let mut out = vec![vec![Vec::new(); num_categories]; num_views];
    for d in detections {
        out[d.view][d.category as usize].push(d.bbox);
    }
    out
}

pub fn vote_scores(
    partition: &Partition,
    detections: &[Detection],
    vis: &VisibilityMap,
    num_categories: usize,
    min_score: f64,
) -> ScoreMatrix {
    let s = partition.len();
    let c = num_categories;
    let kept = filter_detections(detections, min_score);
    let boxes = boxes_by_view_and_category(&kept, vis.num_views(), c);

    let (numerators, denominators) = vis
        .views
        .par_iter()
        .zip(boxes.par_iter())
        .map(|(view, by_category)| {
            let mut num = vec![0u64; s * c];
            let mut den = vec![0u64; s];
            for (p, &seen) in view.visible.iter().enumerate() {
                if !seen {
                    continue;
                }
                let sp = partition.superpoint_of(p);
                den[sp] += 1;
                let pr = view.projections[p].expect("visible points are projected");
                for (j, list) in by_category.iter().enumerate() {
                    if list.iter().any(|b| b.contains(pr.x, pr.y)) {
                        num[sp * c + j] += 1;
                    }
                }
            }
            (num, den)
        })
        .reduce(
            || (vec![0u64; s * c], vec![0u64; s]),
            |(mut an, mut ad), (bn, bd)| {
                an.iter_mut().zip(bn).for_each(|(a, b)| *a += b);
                ad.iter_mut().zip(bd).for_each(|(a, b)| *a += b);
                (an, ad)
            },
        );

    ScoreMatrix {
        num_categories: c,
        numerators,
        denominators,
    }
}

/// Category per superpoint: the best-scoring one (lowest id on ties), or the
/// unlabeled sentinel when never visible, never covered by any box, or when
/// the best score is below `threshold`.
pub fn superpoint_labels(scores: &ScoreMatrix, threshold: f64) -> Vec<CategoryId> {
    let unlabeled = scores.num_categories as CategoryId;
    (0..scores.num_superpoints())
        .map(|i| {
            if scores.denominator(i) == 0 || scores.num_categories == 0 {
                return unlabeled;
            }
            // Equal denominators, so comparing integer numerators is exact.
            let mut best = 0;
            for j in 1..scores.num_categories {
                if scores.numerator(i, j) > scores.numerator(i, best) {
                    best = j;
                }
            }
            // A row with no coverage at all carries no evidence for any category.
            if scores.numerator(i, best) == 0 || scores.score(i, best).unwrap() < threshold {
                unlabeled
            } else {
                best as CategoryId
            }
        })
        .collect()
}

/// Per-point labels from per-superpoint argmax.
pub fn assign_semantics(scores: &ScoreMatrix, partition: &Partition, threshold: f64) -> Vec<CategoryId> {
    let labels = superpoint_labels(scores, threshold);
    partition.assignment().iter().map(|&s| labels[s]).collect()
}

/// Argmax over an arbitrary score row, lowest index on ties.
pub fn argmax_row(row: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if best.is_none_or(|b| v > row[b]) {
            best = Some(j);
        }
    }
    best
}
