//! Part segmentation evaluation: per-category IoU, AP at 0.5 point IoU, and
//! their means per object category.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{CategoryId, LabelSchema, SegmentationResult};

/// How per-shape IoU tallies are combined across an evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IouPooling {
    /// Sum intersections and unions over all shapes, then divide.
    #[default]
    Pooled,
    /// Mean of per-shape IoUs over shapes where the category occurs.
    PerShapeMean,
}

/// IoU of one category over a set of `(pred, gt)` label arrays. `None` when
/// the category occurs in neither prediction nor ground truth anywhere.
pub fn semantic_iou(
    shapes: &[(&[CategoryId], &[CategoryId])],
    category: CategoryId,
    pooling: IouPooling,
) -> Result<Option<f64>> {
    let mut inter_total = 0u64;
    let mut union_total = 0u64;
    let mut per_shape = Vec::new();
    for (s, (pred, gt)) in shapes.iter().enumerate() {
        if pred.len() != gt.len() {
            return Err(Error::Mismatch(format!(
                "shape {s}: {} predicted labels for {} points",
                pred.len(),
                gt.len()
            )));
        }
        let (mut inter, mut union) = (0u64, 0u64);
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            let (a, b) = (p == category, g == category);
            inter += (a && b) as u64;
            union += (a || b) as u64;
        }
        inter_total += inter;
        union_total += union;
        if union > 0 {
            per_shape.push(inter as f64 / union as f64);
        }
    }
    Ok(match pooling {
        IouPooling::Pooled => (union_total > 0).then(|| inter_total as f64 / union_total as f64),
        IouPooling::PerShapeMean => {
            (!per_shape.is_empty()).then(|| per_shape.iter().sum::<f64>() / per_shape.len() as f64)
        }
    })
}

/// One predicted or ground-truth instance as a point set within a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub shape: usize,
    pub id: usize,
    pub category: CategoryId,
    pub confidence: f64,
    /// Sorted point indices.
    pub points: Vec<usize>,
}

/// Instance masks of one shape's segmentation.
pub fn instance_masks(shape: usize, seg: &SegmentationResult) -> Vec<InstanceMask> {
    seg.instance_members()
        .into_iter()
        .zip(&seg.instances)
        .enumerate()
        .map(|(id, (points, info))| InstanceMask {
            shape,
            id,
            category: info.category,
            confidence: info.confidence,
            points,
        })
        .collect()
}

/// IoU of two sorted point sets.
pub fn point_iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// AP of one category at point IoU 0.5. `None` when the category has no
/// ground-truth instance.
///
/// Predictions are visited by descending confidence, ties by `(shape, id)`.
/// Each one takes the unmatched ground truth of its shape with the highest IoU
/// and counts as a hit when that IoU is at least 0.5. AP is the area under the
/// monotone precision envelope.
pub fn instance_ap50(preds: &[InstanceMask], gts: &[InstanceMask], category: CategoryId) -> Option<f64> {
    let gts: Vec<&InstanceMask> = gts.iter().filter(|g| g.category == category).collect();
    if gts.is_empty() {
        return None;
    }
    let mut preds: Vec<&InstanceMask> = preds.iter().filter(|p| p.category == category).collect();
    preds.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.shape.cmp(&b.shape))
            .then(a.id.cmp(&b.id))
    });

    let mut matched = vec![false; gts.len()];
    let mut hits = Vec::with_capacity(preds.len());
    for p in &preds {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if matched[g] || gt.shape != p.shape {
                continue;
            }
            let iou = point_iou(&p.points, &gt.points);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let hit = match best {
            Some((g, iou)) if iou >= 0.5 => {
                matched[g] = true;
                true
            }
            _ => false,
        };
        hits.push(hit);
    }
    Some(average_precision(&hits, gts.len()))
}

/// All-point interpolated AP from hit flags in rank order.
pub fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// One CSV row: a part, an object category, or the overall mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub miou: Option<f64>,
    pub map50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub parts: Vec<ReportRow>,
    pub objects: Vec<ReportRow>,
    pub overall: ReportRow,
}

/// Predictions and ground truth for every shape of one object category.
#[derive(Debug, Clone)]
pub struct ObjectEval {
    pub schema: LabelSchema,
    /// `(prediction, ground truth)` per shape.
    pub shapes: Vec<(SegmentationResult, SegmentationResult)>,
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Evaluate every object category. Part rows are named `object/part`.
/// Object values are unweighted means over their present parts and the overall
/// row is the unweighted mean over present objects.
pub fn report(objects: &[ObjectEval], pooling: IouPooling) -> Result<EvalReport> {
    let mut parts = Vec::new();
    let mut object_rows = Vec::new();
    for obj in objects {
        let c = obj.schema.num_categories();
        for (s, (pred, gt)) in obj.shapes.iter().enumerate() {
            if pred.num_categories != c || gt.num_categories != c {
                return Err(Error::Mismatch(format!(
                    "{} shape {s}: labels use {} and {} categories, schema has {c}",
                    obj.schema.object, pred.num_categories, gt.num_categories
                )));
            }
        }
        let label_pairs: Vec<(&[CategoryId], &[CategoryId])> = obj
            .shapes
            .iter()
            .map(|(p, g)| (p.semantic.as_slice(), g.semantic.as_slice()))
            .collect();
        let mut pred_masks = Vec::new();
        let mut gt_masks = Vec::new();
        for (s, (p, g)) in obj.shapes.iter().enumerate() {
            pred_masks.extend(instance_masks(s, p));
            gt_masks.extend(instance_masks(s, g));
        }
        let start = parts.len();
        for (j, part) in obj.schema.parts.iter().enumerate() {
            parts.push(ReportRow {
                name: format!("{}/{}", obj.schema.object, part),
                miou: semantic_iou(&label_pairs, j as CategoryId, pooling)?,
                map50: instance_ap50(&pred_masks, &gt_masks, j as CategoryId),
            });
        }
        let own = &parts[start..];
        object_rows.push(ReportRow {
            name: obj.schema.object.clone(),
            miou: mean_present(own.iter().map(|r| r.miou)),
            map50: mean_present(own.iter().map(|r| r.map50)),
        });
    }
    let overall = ReportRow {
        name: "overall".into(),
        miou: mean_present(object_rows.iter().map(|r| r.miou)),
        map50: mean_present(object_rows.iter().map(|r| r.map50)),
    };
    Ok(EvalReport {
        parts,
        objects: object_rows,
        overall,
    })
}

impl EvalReport {
    /// CSV with header `name,mIoU,mAP50`; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("name,mIoU,mAP50\n");
        for row in self.parts.iter().chain(&self.objects).chain(std::iter::once(&self.overall)) {
            let _ = writeln!(out, "{},{},{}", row.name, cell(row.miou), cell(row.map50));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(shape: usize, id: usize, confidence: f64, points: std::ops::Range<usize>) -> InstanceMask {
        InstanceMask {
            shape,
            id,
            category: 0,
            confidence,
            points: points.collect(),
        }
    }

    #[test]
    fn iou_examples() {
        let a = [0u32, 0, 1, 1];
        assert_eq!(semantic_iou(&[(&a, &a)], 0, IouPooling::Pooled).unwrap(), Some(1.0));
        let (p, g) = ([0u32, 0, 1, 1], [1u32, 1, 0, 0]);
        assert_eq!(semantic_iou(&[(&p, &g)], 0, IouPooling::Pooled).unwrap(), Some(0.0));
        assert_eq!(semantic_iou(&[(&p, &g)], 5, IouPooling::Pooled).unwrap(), None);
        // Intersection 30, union 60.
        let pred = vec![1u32; 60];
        let gt: Vec<u32> = (0..60).map(|i| if i < 30 { 1 } else { 0 }).collect();
        assert_eq!(semantic_iou(&[(&pred, &gt)], 1, IouPooling::Pooled).unwrap(), Some(0.5));
        assert!(semantic_iou(&[(&pred[..3], &gt)], 1, IouPooling::Pooled).is_err());
    }

    #[test]
    fn pooled_and_per_shape_differ() {
        // Shape 0: 1 of 1; shape 1: 1 of 3.
        let (p0, g0) = ([0u32], [0u32]);
        let (p1, g1) = ([0u32, 0, 1], [0u32, 1, 0]);
        let shapes: [(&[u32], &[u32]); 2] = [(&p0, &g0), (&p1, &g1)];
        assert_eq!(semantic_iou(&shapes, 0, IouPooling::Pooled).unwrap(), Some(0.5));
        let m = semantic_iou(&shapes, 0, IouPooling::PerShapeMean).unwrap().unwrap();
        assert!((m - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn unlabeled_predictions_count_as_misses() {
        let (p, g) = ([2u32, 2, 0], [0u32, 0, 0]);
        assert_eq!(semantic_iou(&[(&p, &g)], 0, IouPooling::Pooled).unwrap(), Some(1.0 / 3.0));
    }

    #[test]
    fn ap_trivial_cases() {
        let gt = [mask(0, 0, 1.0, 0..10)];
        // IoU 6/10.
        assert_eq!(instance_ap50(&[mask(0, 0, 0.3, 0..6)], &gt, 0), Some(1.0));
        // IoU 4/10.
        assert_eq!(instance_ap50(&[mask(0, 0, 0.3, 0..4)], &gt, 0), Some(0.0));
        assert_eq!(instance_ap50(&[], &gt, 0), Some(0.0));
        assert_eq!(instance_ap50(&[mask(0, 0, 0.3, 0..4)], &[], 0), None);
    }

    #[test]
    fn two_correct_detections_give_full_ap() {
        let gts = [mask(0, 0, 1.0, 0..10), mask(0, 1, 1.0, 10..30)];
        // IoU 0.9 with gt 0, 11/20 = 0.55 with gt 1.
        let preds = [mask(0, 0, 0.2, 0..9), mask(0, 1, 0.9, 10..21)];
        assert_eq!(instance_ap50(&preds, &gts, 0), Some(1.0));
    }

    #[test]
    fn envelope_interpolation() {
        // Ranks: hit, miss, hit over 2 gts: precision 1, 1/2, 2/3 -> envelope 1, 2/3, 2/3.
        let ap = average_precision(&[true, false, true], 2);
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(average_precision(&[false, false], 3), 0.0);
    }

    #[test]
    fn matching_stays_within_shapes() {
        let gts = [mask(0, 0, 1.0, 0..10)];
        assert_eq!(instance_ap50(&[mask(1, 0, 0.5, 0..10)], &gts, 0), Some(0.0));
    }

    #[test]
    fn report_means_and_csv() {
        let schema = LabelSchema::new("chair", vec!["seat".into(), "leg".into(), "arm".into()]).unwrap();
        let gt = SegmentationResult::from_labels(3, vec![0, 0, 1, 1], &[Some(0), Some(0), Some(1), Some(1)], |_| 1.0).unwrap();
        let pred = SegmentationResult::from_labels(3, vec![0, 1, 1, 1], &[Some(0), Some(1), Some(1), Some(1)], |_| 0.5).unwrap();
        let r = report(
            &[ObjectEval {
                schema,
                shapes: vec![(pred, gt)],
            }],
            IouPooling::Pooled,
        )
        .unwrap();
        assert_eq!(r.parts[0].miou, Some(0.5));
        assert_eq!(r.parts[1].miou, Some(2.0 / 3.0));
        assert_eq!(r.parts[2].miou, None);
        assert_eq!(r.parts[2].map50, None);
        assert_eq!(r.parts[0].map50, Some(1.0));
        assert_eq!(r.parts[1].map50, Some(1.0));
        assert_eq!(r.objects[0].miou, Some((0.5 + 2.0 / 3.0) / 2.0));
        assert_eq!(r.overall.map50, Some(1.0));
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "name,mIoU,mAP50");
        assert_eq!(lines[1], "chair/seat,0.5,1");
        assert_eq!(lines[3], "chair/arm,,");
        assert!(lines[5].starts_with("overall,"));
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(pairs in prop::collection::vec((0u32..4, 0u32..4), 1..60), c in 0u32..4) {
            let (p, g): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
            prop_assert_eq!(
                semantic_iou(&[(&p, &g)], c, IouPooling::Pooled).unwrap(),
                semantic_iou(&[(&g, &p)], c, IouPooling::Pooled).unwrap()
            );
        }

        #[test]
        fn spurious_top_prediction_never_raises_ap(
            sizes in prop::collection::vec(1usize..8, 1..5),
            offsets in prop::collection::vec(0usize..4, 5),
            confs in prop::collection::vec(0.0f64..1.0, 5),
        ) {
            let mut start = 0;
            let mut gts = Vec::new();
            let mut preds = Vec::new();
            for (i, &s) in sizes.iter().enumerate() {
                gts.push(mask(0, i, 1.0, start..start + s));
                let o = offsets[i];
                preds.push(mask(0, i, confs[i], start + o.min(s)..start + s + o));
                start += s + 8;
            }
            let base = instance_ap50(&preds, &gts, 0).unwrap();
            preds.push(mask(0, 99, 2.0, start + 100..start + 105));
            prop_assert!(instance_ap50(&preds, &gts, 0).unwrap() <= base);
        }
    }
}
