//! End-to-end segmentation: rasterize, oversegment, vote, group, evaluate.

use std::time::Instant;

use log::{debug, info};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::grouping::{group_instances, BoxSet, GroupingParams};
use crate::metrics::{report, EvalReport, IouPooling, ObjectEval};
use crate::model::{validate, Detection, LabelSchema, Partition, PointCloud, SegmentationResult, View};
use crate::projection::{gt_boxes_all, rasterize_views_world, visibility_map, RasterResult};
use crate::superpoints::{build_features, build_knn_graph, cut_pursuit, knn_lists};
use crate::voting::{filter_detections, superpoint_labels, vote_scores, ScoreMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub num_views: usize,
    pub tau: f64,
    pub knn: usize,
    /// Boundary penalty per cut kNN edge in the superpoint energy.
    pub rho: f64,
    pub color_weight: f64,
    /// Minimum splat radius in pixels.
    pub splat_radius: f64,
    /// Splat disk radius on the surface in world units; `None` estimates it
    /// from the sampling density (see [`estimate_point_radius`]).
    pub point_radius: Option<f64>,
    /// Depth tolerance in world units; `None` means 1e-3 of the cloud diagonal.
    pub eps_z: Option<f64>,
    /// Ground-truth box components smaller than this fraction of the mask are dropped.
    pub noise_fraction: f64,
    /// Detections below this confidence are ignored.
    pub min_score: f64,
    /// Superpoints whose best vote score is below this stay unlabeled.
    pub semantic_threshold: f64,
    pub width: u32,
    pub height: u32,
    pub box_set: BoxSet,
    pub pooling: IouPooling,
    pub max_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            num_views: 10,
            tau: 0.3,
            knn: 10,
            rho: 0.1,
            color_weight: 1.0,
            splat_radius: 1.0,
            point_radius: None,
            eps_z: None,
            noise_fraction: 0.05,
            min_score: 0.0,
            semantic_threshold: 0.0,
            width: 800,
            height: 800,
            box_set: BoxSet::SameCategory,
            pooling: IouPooling::Pooled,
            max_iters: 20,
        }
    }
}

impl PipelineConfig {
    pub fn check(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.num_views == 0 {
            bad.push("num_views must be at least 1");
        }
        if !(self.tau > 0.0) {
            bad.push("tau must be positive");
        }
        if self.knn == 0 {
            bad.push("knn must be at least 1");
        }
        if !(self.rho >= 0.0) {
            bad.push("rho must be non-negative");
        }
        if !(self.color_weight >= 0.0) {
            bad.push("color_weight must be non-negative");
        }
        if !(self.splat_radius >= 0.0) {
            bad.push("splat_radius must be non-negative");
        }
        if self.point_radius.is_some_and(|r| !(r >= 0.0)) {
            bad.push("point_radius must be non-negative");
        }
        if self.eps_z.is_some_and(|e| !(e > 0.0)) {
            bad.push("eps_z must be positive");
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            bad.push("noise_fraction must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            bad.push("min_score must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.semantic_threshold) {
            bad.push("semantic_threshold must be in [0, 1]");
        }
        if self.width == 0 || self.height == 0 {
            bad.push("resolution must be at least 1x1");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(
                bad.into_iter()
                    .map(|m| crate::model::Violation::new(0, m))
                    .collect(),
            ))
        }
    }

    pub fn point_radius_for(&self, cloud: &PointCloud) -> f64 {
        self.point_radius
            .unwrap_or_else(|| estimate_point_radius(cloud.positions(), self.knn))
    }

    pub fn eps_z_for(&self, cloud: &PointCloud) -> f64 {
        self.eps_z.unwrap_or_else(|| {
            let d = cloud.diagonal();
            1e-3 * if d > 0.0 { d } else { 1.0 }
        })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub result: SegmentationResult,
    pub partition: Partition,
    pub scores: ScoreMatrix,
    pub report: Option<EvalReport>,
}

/// Run every stage. `gt` adds an evaluation report for this single shape.
pub fn run_pipeline(
    config: &PipelineConfig,
    cloud: &PointCloud,
    views: &[View],
    detections: &[Detection],
    schema: &LabelSchema,
    gt: Option<&SegmentationResult>,
) -> Result<PipelineOutput> {
    config.check()?;
    let validation = validate(cloud, views, detections, schema);
    if !validation.is_ok() {
        return Err(Error::Invalid(validation.violations));
    }
    let c = schema.num_categories();
    let detections = filter_detections(detections, config.min_score);

    let t = Instant::now();
    let rasters = rasterize(config, cloud, views);
    let vis = visibility_map(&rasters);
    drop(rasters);
    info!("rasterized {} views in {:.2?}", views.len(), t.elapsed());

    let t = Instant::now();
    let features = build_features(cloud, config.color_weight);
    let graph = build_knn_graph(cloud.positions(), config.knn);
    let partition = cut_pursuit(&features, &graph, config.rho, config.max_iters);
    info!(
        "{} superpoints over {} points in {:.2?}",
        partition.len(),
        cloud.len(),
        t.elapsed()
    );

    let t = Instant::now();
    let scores = vote_scores(&partition, &detections, &vis, c, 0.0);
    let labels = superpoint_labels(&scores, config.semantic_threshold);
    let result = group_instances(
        &partition,
        &labels,
        &detections,
        &vis,
        &graph,
        &scores,
        GroupingParams {
            tau: config.tau,
            box_set: config.box_set,
        },
    );
    info!("{} instances in {:.2?}", result.instances.len(), t.elapsed());
    debug!("output check: {:?}", result.check());

    let report = match gt {
        Some(gt) => {
            if gt.len() != cloud.len() || gt.num_categories != c {
                return Err(Error::Mismatch(format!(
                    "ground truth has {} points and {} categories, expected {} and {c}",
                    gt.len(),
                    gt.num_categories,
                    cloud.len()
                )));
            }
            Some(report(
                &[ObjectEval {
                    schema: schema.clone(),
                    shapes: vec![(result.clone(), gt.clone())],
                }],
                config.pooling,
            )?)
        }
        None => None,
    };
    Ok(PipelineOutput {
        result,
        partition,
        scores,
        report,
    })
}

/// Ground-truth detections for a labeled cloud: one box per visible instance
/// per view, category from the instance, score 1.
pub fn ground_truth_detections(
    config: &PipelineConfig,
    cloud: &PointCloud,
    labels: &SegmentationResult,
    views: &[View],
) -> Vec<Detection> {
    gt_boxes_all(labels, &rasterize(config, cloud, views), config.noise_fraction)
}

/// Rasterize every view with the configured splat sizes and depth tolerance.
pub fn rasterize(config: &PipelineConfig, cloud: &PointCloud, views: &[View]) -> Vec<RasterResult> {
    let radius = config.point_radius_for(cloud);
    debug!("splat radius {radius} world units, at least {} px", config.splat_radius);
    rasterize_views_world(cloud, views, radius, config.splat_radius, config.eps_z_for(cloud))
}

/// Splat radius that closes the gaps between surface samples: 1.5 times the
/// typical sample spacing, estimated from the median distance to the `k`-th
/// neighbour as `d_k * sqrt(pi / k)`.
pub fn estimate_point_radius(positions: &[Vector3<f64>], k: usize) -> f64 {
    let k = k.max(1).min(positions.len().saturating_sub(1));
    if k == 0 {
        return 0.0;
    }
    let lists = knn_lists(positions, k);
    let mut dk: Vec<f64> = lists
        .iter()
        .enumerate()
        .map(|(i, l)| (positions[l[k - 1]] - positions[i]).norm())
        .collect();
    let mid = dk.len() / 2;
    let (_, median, _) = dk.select_nth_unstable_by(mid, f64::total_cmp);
    1.5 * *median * (std::f64::consts::PI / k as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cameras::make_default_views;
    use crate::synth::{preset, synth_scene};

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            width: 200,
            height: 200,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!((c.num_views, c.tau, c.knn, c.width, c.height), (10, 0.3, 10, 800, 800));
        assert!(c.check().is_ok());
        assert!(PipelineConfig { tau: 0.0, ..c.clone() }.check().is_err());
        assert!(PipelineConfig { num_views: 0, ..c }.check().is_err());
    }

    #[test]
    fn empty_detections_leave_everything_unlabeled() {
        let scene = synth_scene(&preset("cube", 100.0, 1).unwrap()).unwrap();
        let config = small_config();
        let views = make_default_views(&scene.cloud, 4, config.width, config.height);
        let out = run_pipeline(&config, &scene.cloud, &views, &[], &scene.schema, Some(&scene.labels)).unwrap();
        assert!(out.result.semantic.iter().all(|&s| s == 1));
        assert!(out.result.instances.is_empty());
        let r = out.report.unwrap();
        assert_eq!(r.parts[0].miou, Some(0.0));
        assert_eq!(r.parts[0].map50, Some(0.0));
    }

    #[test]
    fn invalid_inputs_are_reported() {
        let scene = synth_scene(&preset("cube", 50.0, 1).unwrap()).unwrap();
        let config = small_config();
        let views = make_default_views(&scene.cloud, 2, config.width, config.height);
        let bad = Detection {
            view: 5,
            category: 0,
            bbox: crate::model::BBox2D::new(0.0, 0.0, 1.0, 1.0),
            score: 1.0,
        };
        assert!(run_pipeline(&config, &scene.cloud, &views, &[bad], &scene.schema, None).is_err());
    }

    #[test]
    fn cube_with_ground_truth_boxes_is_recovered() {
        let scene = synth_scene(&preset("cube", 300.0, 2).unwrap()).unwrap();
        let config = small_config();
        let views = make_default_views(&scene.cloud, config.num_views, config.width, config.height);
        let dets = ground_truth_detections(&config, &scene.cloud, &scene.labels, &views);
        let out = run_pipeline(&config, &scene.cloud, &views, &dets, &scene.schema, Some(&scene.labels)).unwrap();
        let r = out.report.unwrap();
        assert_eq!(r.overall.miou, Some(1.0));
        assert_eq!(r.overall.map50, Some(1.0));
        assert!(out.result.check().is_empty());
    }
}
