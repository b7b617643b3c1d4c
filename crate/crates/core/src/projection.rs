//! Pinhole projection, point-splat z-buffering and ground-truth box generation.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::model::{
    BBox2D, Detection, PointCloud, Projection, SegmentationResult, View, ViewVisibility,
    VisibilityMap,
};

/// Owner value of a pixel no point splats onto.
pub const EMPTY: u32 = u32::MAX;

/// Project a world point. `None` when the camera-frame depth is `<= near`.
#[inline]
pub fn project(view: &View, position: &nalgebra::Vector3<f64>, near: f64) -> Option<Projection> {
    let c = view.to_camera(position);
    if c.z <= near {
        return None;
    }
    Some(Projection {
        x: view.fx * c.x / c.z + view.cx,
        y: view.fy * c.y / c.z + view.cy,
        depth: c.z,
    })
}

/// Closed-box membership of a point's projection. Visibility is not checked.
#[inline]
pub fn point_in_box(vis: &VisibilityMap, view: usize, point: usize, bbox: &BBox2D) -> bool {
    vis.projection(view, point)
        .is_some_and(|pr| bbox.contains(pr.x, pr.y))
}

/// Depth buffer, pixel owners and per-point visibility of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterResult {
    pub width: u32,
    pub height: u32,
    /// Row-major, `+inf` where nothing splats.
    pub depth: Vec<f64>,
    /// Row-major point index of the nearest splat, or [`EMPTY`].
    pub owner: Vec<u32>,
    pub visibility: ViewVisibility,
}

impl RasterResult {
    #[inline]
    pub fn pixel_index(&self, x: i64, y: i64) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

/// Pixels covered by a splat of `radius` around `pr`: every pixel whose center is
/// within `radius` of the projection plus the pixel containing it, clipped to the image.
pub fn splat_pixels(
    pr: &Projection,
    radius: f64,
    width: u32,
    height: u32,
    mut f: impl FnMut(i64, i64),
) {
    let (px, py) = pr.pixel();
    if px < 0 || py < 0 || px >= width as i64 || py >= height as i64 {
        return;
    }
    let r2 = radius * radius;
    let x0 = ((pr.x - radius).ceil() as i64).max(0);
    let x1 = ((pr.x + radius).floor() as i64).min(width as i64 - 1);
    let y0 = ((pr.y - radius).ceil() as i64).max(0);
    let y1 = ((pr.y + radius).floor() as i64).min(height as i64 - 1);
    let mut own_seen = false;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - pr.x;
            let dy = y as f64 - pr.y;
            if dx * dx + dy * dy <= r2 {
                own_seen |= x == px && y == py;
                f(x, y);
            }
        }
    }
    if !own_seen {
        f(px, py);
    }
}

/// Rasterize with one splat radius for every point.
pub fn rasterize(cloud: &PointCloud, view: &View, splat_radius: f64, eps_z: f64) -> RasterResult {
    rasterize_with(cloud, view, |_| splat_radius, eps_z)
}

/// Rasterize with per-point splat radii.
pub fn rasterize_with_radii(
    cloud: &PointCloud,
    view: &View,
    radii: &[f64],
    eps_z: f64,
) -> RasterResult {
    assert_eq!(radii.len(), cloud.len(), "one radius per point");
    rasterize_with(cloud, view, |p| radii[p], eps_z)
}

/// Pixel radii of splats that are disks of `world_radius` on the surface:
/// `fx * world_radius / depth`, never below `min_radius`.
pub fn pixel_radii(cloud: &PointCloud, view: &View, world_radius: f64, min_radius: f64) -> Vec<f64> {
    cloud
        .positions()
        .iter()
        .map(|p| {
            let z = view.to_camera(p).z;
            if z > 0.0 {
                (view.fx * world_radius / z).max(min_radius)
            } else {
                min_radius
            }
        })
        .collect()
}

/// Rasterize every view with world-sized splats, in parallel over views.
pub fn rasterize_views_world(
    cloud: &PointCloud,
    views: &[View],
    world_radius: f64,
    min_radius: f64,
    eps_z: f64,
) -> Vec<RasterResult> {
    views
        .par_iter()
        .map(|v| rasterize_with_radii(cloud, v, &pixel_radii(cloud, v, world_radius, min_radius), eps_z))
        .collect()
}

fn rasterize_with(
    cloud: &PointCloud,
    view: &View,
    radius: impl Fn(usize) -> f64,
    eps_z: f64,
) -> RasterResult {
    debug_assert!(eps_z > 0.0);
    let (w, h) = (view.width, view.height);
    let mut depth = vec![f64::INFINITY; view.pixel_count()];
    let mut owner = vec![EMPTY; view.pixel_count()];
    let projections: Vec<Option<Projection>> = cloud
        .positions()
        .iter()
        .map(|p| project(view, p, eps_z))
        .collect();

    // Points are visited in index order and only strictly nearer splats take a
    // pixel, so equal depths keep the lower index.
    for (p, pr) in projections.iter().enumerate() {
        let Some(pr) = pr else { continue };
        splat_pixels(pr, radius(p), w, h, |x, y| {
            let i = y as usize * w as usize + x as usize;
            if pr.depth < depth[i] {
                depth[i] = pr.depth;
                owner[i] = p as u32;
            }
        });
    }

    let visible = projections
        .iter()
        .enumerate()
        .map(|(p, pr)| {
            let Some(pr) = pr else { return false };
            let mut seen = false;
            splat_pixels(pr, radius(p), w, h, |x, y| {
                seen |= pr.depth <= depth[y as usize * w as usize + x as usize] + eps_z;
            });
            seen
        })
        .collect();

    RasterResult {
        width: w,
        height: h,
        depth,
        owner,
        visibility: ViewVisibility {
            visible,
            projections,
        },
    }
}

/// Rasterize every view, in parallel over views.
pub fn rasterize_views(
    cloud: &PointCloud,
    views: &[View],
    splat_radius: f64,
    eps_z: f64,
) -> Vec<RasterResult> {
    views
        .par_iter()
        .map(|v| rasterize(cloud, v, splat_radius, eps_z))
        .collect()
}

/// Collect the visibility slices of a set of rasters.
pub fn visibility_map(rasters: &[RasterResult]) -> VisibilityMap {
    VisibilityMap {
        views: rasters.iter().map(|r| r.visibility.clone()).collect(),
    }
}

/// 8-connected components of a pixel set. Components and their members are
/// returned in ascending pixel order (row-major).
pub fn connected_components_8(pixels: &[(i64, i64)]) -> Vec<Vec<(i64, i64)>> {
    let mut sorted: Vec<(i64, i64)> = pixels.iter().map(|&(x, y)| (y, x)).collect();
    sorted.sort_unstable();
    sorted.dedup();
    let mut label = vec![usize::MAX; sorted.len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for seed in 0..sorted.len() {
        if label[seed] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = Vec::new();
        label[seed] = id;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            let (y, x) = sorted[i];
            members.push((x, y));
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    if let Ok(j) = sorted.binary_search(&(y + dy, x + dx)) {
                        if label[j] == usize::MAX {
                            label[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        members.sort_unstable_by_key(|&(x, y)| (y, x));
        components.push(members);
    }
    components
}

/// Ground-truth boxes for one view from labeled 3D part instances.
///
/// An instance's pixel mask is every pixel owned by one of its points plus the
/// pixel under each of its visible points. Occluded points never contribute.
/// 8-connected mask components smaller than `noise_fraction` of the mask are
/// dropped; the box spans the centers of the surviving pixels and the
/// projections of the visible points that fall in them. A box that would be
/// flat along an axis is widened to the pixel extent. Instances with nothing
/// left emit no detection. Output is in instance order with score 1.
pub fn gt_boxes(
    gt: &SegmentationResult,
    view_index: usize,
    raster: &RasterResult,
    noise_fraction: f64,
) -> Vec<Detection> {
    gt_instance_boxes(gt, view_index, raster, noise_fraction)
        .into_iter()
        .map(|(_, d)| d)
        .collect()
}

/// [`gt_boxes`] paired with the instance each box was generated from.
pub fn gt_instance_boxes(
    gt: &SegmentationResult,
    view_index: usize,
    raster: &RasterResult,
    noise_fraction: f64,
) -> Vec<(u32, Detection)> {
    let vis = &raster.visibility;
    let mut masks: BTreeMap<u32, Vec<(i64, i64)>> = BTreeMap::new();
    let mut visible_points: BTreeMap<u32, Vec<usize>> = BTreeMap::new();

    for (i, &o) in raster.owner.iter().enumerate() {
        if o == EMPTY {
            continue;
        }
        if let Some(inst) = gt.instance_of(o as usize) {
            let x = (i % raster.width as usize) as i64;
            let y = (i / raster.width as usize) as i64;
            masks.entry(inst).or_default().push((x, y));
        }
    }
    for (p, &seen) in vis.visible.iter().enumerate() {
        if !seen {
            continue;
        }
        if let (Some(inst), Some(pr)) = (gt.instance_of(p), vis.projections[p]) {
            masks.entry(inst).or_default().push(pr.pixel());
            visible_points.entry(inst).or_default().push(p);
        }
    }

    let mut out = Vec::new();
    for (inst, pixels) in masks {
        let Some(points) = visible_points.get(&inst) else {
            continue;
        };
        let components = connected_components_8(&pixels);
        let total: usize = components.iter().map(Vec::len).sum();
        let min_size = noise_fraction * total as f64;
        let mut kept: Vec<(i64, i64)> = components
            .into_iter()
            .filter(|c| c.len() as f64 >= min_size)
            .flatten()
            .collect();
        if kept.is_empty() {
            continue;
        }
        kept.sort_unstable();

        let mut b = BBox2D::new(
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        let mut grow = |x: f64, y: f64| {
            b.xmin = b.xmin.min(x);
            b.ymin = b.ymin.min(y);
            b.xmax = b.xmax.max(x);
            b.ymax = b.ymax.max(y);
        };
        for &(x, y) in &kept {
            grow(x as f64, y as f64);
        }
        for &p in points {
            let pr = vis.projections[p].expect("visible points are projected");
            if kept.binary_search(&pr.pixel()).is_ok() {
                grow(pr.x, pr.y);
            }
        }
        if b.xmin == b.xmax {
            b.xmin -= 0.5;
            b.xmax += 0.5;
        }
        if b.ymin == b.ymax {
            b.ymin -= 0.5;
            b.ymax += 0.5;
        }
        out.push((
            inst,
            Detection {
                view: view_index,
                category: gt.instances[inst as usize].category,
                bbox: b,
                score: 1.0,
            },
        ));
    }
    out
}

/// Ground-truth boxes for every view.
pub fn gt_boxes_all(
    gt: &SegmentationResult,
    rasters: &[RasterResult],
    noise_fraction: f64,
) -> Vec<Detection> {
    rasters
        .par_iter()
        .enumerate()
        .map(|(k, r)| gt_boxes(gt, k, r, noise_fraction))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}
