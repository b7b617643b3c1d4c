//! Shared domain types and input validation.
//!
//! Pixel convention used throughout the crate: pixel `(i, j)` has its center at
//! continuous image coordinates `(i, j)` and covers `[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)`.
//! The image rectangle of a `W x H` view is therefore `[-0.5, W - 0.5) x [-0.5, H - 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Part category identifier. Categories are `0..C`; `C` itself is the unlabeled sentinel.
pub type CategoryId = u32;

/// Tolerance on `|n| - 1` after renormalization.
pub const NORMAL_TOLERANCE: f64 = 1e-4;
/// Tolerance on `R^T R = I` for view rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Dense point cloud with per-point color and unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vector3<f64>>,
    colors: Vec<[f64; 3]>,
    normals: Vec<Vector3<f64>>,
}

impl PointCloud {
    /// Build a cloud, renormalizing normals. Fails with the full list of
    /// violations when any invariant cannot be met.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        colors: Vec<[f64; 3]>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let raw = Self::from_raw(positions, colors, normals);
        let violations = check_cloud(&raw);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        Ok(raw.renormalized())
    }

    /// Wrap arrays without checking anything. Use [`validate`] to inspect the result.
    pub fn from_raw(
        positions: Vec<Vector3<f64>>,
        colors: Vec<[f64; 3]>,
        normals: Vec<Vector3<f64>>,
    ) -> Self {
        Self {
            positions,
            colors,
            normals,
        }
    }

    fn renormalized(mut self) -> Self {
        for n in &mut self.normals {
            let len = n.norm();
            // Leave already-unit normals untouched so reloading a saved cloud is exact.
            if len > 0.0 && (len - 1.0).abs() > 4.0 * f64::EPSILON {
                *n /= len;
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum = self
            .positions
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p);
        sum / self.positions.len().max(1) as f64
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Length of the bounding-box diagonal.
    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }
}

/// Pinhole camera: intrinsics, rigid world-to-camera transform and image size.
///
/// The camera looks down its +Z axis, x to the right, y down.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsic: Matrix4<f64>,
    pub width: u32,
    pub height: u32,
}

impl View {
    pub fn rotation(&self) -> Matrix3<f64> {
        self.extrinsic.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.extrinsic.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera-frame coordinates of a world point.
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// Viewing direction (camera +Z) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation().row(2).transpose()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Whether continuous image coordinates fall inside the image rectangle.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= -0.5 && y >= -0.5 && x < self.width as f64 - 0.5 && y < self.height as f64 - 0.5
    }
}

/// Axis-aligned 2D box in continuous pixel coordinates, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox2D {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.xmin <= x && x <= self.xmax && self.ymin <= y && y <= self.ymax
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)
    }
}

/// One detected (or ground-truth) part box in one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub view: usize,
    pub category: CategoryId,
    pub bbox: BBox2D,
    pub score: f64,
}

/// Ordered part names of one object category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub object: String,
    pub parts: Vec<String>,
}

impl LabelSchema {
    pub fn new(object: impl Into<String>, parts: Vec<String>) -> Result<Self> {
        let schema = Self {
            object: object.into(),
            parts,
        };
        let violations = check_schema(&schema);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        Ok(schema)
    }

    pub fn num_categories(&self) -> usize {
        self.parts.len()
    }

    /// The unlabeled sentinel: one past the last category.
    pub fn unlabeled(&self) -> CategoryId {
        self.parts.len() as CategoryId
    }

    pub fn category(&self, name: &str) -> Option<CategoryId> {
        self.parts
            .iter()
            .position(|p| p == name)
            .map(|i| i as CategoryId)
    }

    /// Detector prompt: part names followed by the object name.
    pub fn prompt(&self) -> String {
        format!("{} of a {}", self.parts.join(", "), self.object)
    }
}

/// Disjoint cover of point indices by superpoints, with per-superpoint mean features.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    dim: usize,
    means: Vec<f64>,
}

impl Partition {
    /// Build from a per-point assignment. Ids must be dense `0..S`.
    pub fn from_assignment(assignment: Vec<usize>, features: &Features) -> Result<Self> {
        if assignment.len() != features.len() {
            return Err(Error::Mismatch(format!(
                "assignment has {} entries but there are {} feature rows",
                assignment.len(),
                features.len()
            )));
        }
        let count = assignment.iter().map(|&a| a + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); count];
        for (p, &s) in assignment.iter().enumerate() {
            members[s].push(p);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::Invalid(vec![Violation::new(
                empty,
                format!("superpoint {empty} has no points"),
            )]));
        }
        let dim = features.dim();
        let mut means = vec![0.0; count * dim];
        for (s, pts) in members.iter().enumerate() {
            let mean = &mut means[s * dim..(s + 1) * dim];
            for &p in pts {
                for (m, f) in mean.iter_mut().zip(features.row(p)) {
                    *m += f;
                }
            }
            let inv = 1.0 / pts.len() as f64;
            mean.iter_mut().for_each(|m| *m *= inv);
        }
        Ok(Self {
            assignment,
            members,
            dim,
            means,
        })
    }

    /// Relabel so superpoints are numbered by their lowest point index.
    pub fn canonicalize(assignment: &[usize]) -> Vec<usize> {
        let mut remap = std::collections::HashMap::new();
        assignment
            .iter()
            .map(|&a| {
                let next = remap.len();
                *remap.entry(a).or_insert(next)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn superpoint_of(&self, point: usize) -> usize {
        self.assignment[point]
    }

    pub fn members(&self, superpoint: usize) -> &[usize] {
        &self.members[superpoint]
    }

    pub fn mean(&self, superpoint: usize) -> &[f64] {
        &self.means[superpoint * self.dim..(superpoint + 1) * self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Row-major per-point feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    dim: usize,
    values: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, values: Vec<f64>) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        assert_eq!(values.len() % dim, 0, "feature data is not a whole number of rows");
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Projection of one point into one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl Projection {
    /// Pixel containing the projection.
    #[inline]
    pub fn pixel(&self) -> (i64, i64) {
        ((self.x + 0.5).floor() as i64, (self.y + 0.5).floor() as i64)
    }
}

/// Visibility and projections of every point in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewVisibility {
    pub visible: Vec<bool>,
    /// `None` when the point is behind the camera.
    pub projections: Vec<Option<Projection>>,
}

impl ViewVisibility {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }
}

/// Per-view visibility of every point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VisibilityMap {
    pub views: Vec<ViewVisibility>,
}

impl VisibilityMap {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    #[inline]
    pub fn is_visible(&self, view: usize, point: usize) -> bool {
        self.views[view].visible[point]
    }

    #[inline]
    pub fn projection(&self, view: usize, point: usize) -> Option<Projection> {
        self.views[view].projections[point]
    }
}

/// One predicted or ground-truth part instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceInfo {
    pub category: CategoryId,
    pub confidence: f64,
    pub points: usize,
}

/// Per-point semantic and instance labels.
///
/// Unlabeled semantic entries hold `num_categories`; unlabeled instance
/// entries hold `instances.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub num_categories: usize,
    pub semantic: Vec<CategoryId>,
    pub instance: Vec<u32>,
    pub instances: Vec<InstanceInfo>,
}

impl SegmentationResult {
    /// Everything unlabeled.
    pub fn unlabeled(num_points: usize, num_categories: usize) -> Self {
        Self {
            num_categories,
            semantic: vec![num_categories as CategoryId; num_points],
            instance: vec![0; num_points],
            instances: Vec::new(),
        }
    }

    /// Build from per-point semantic labels and per-point instance keys.
    ///
    /// Instance keys are arbitrary; points sharing a key form one instance and
    /// `None` marks no instance. Instances are numbered by their lowest point
    /// index. Every instance takes the category of its points, which must agree.
    pub fn from_labels(
        num_categories: usize,
        semantic: Vec<CategoryId>,
        instance_keys: &[Option<u64>],
        confidence: impl Fn(u64) -> f64,
    ) -> Result<Self> {
        if semantic.len() != instance_keys.len() {
            return Err(Error::Mismatch(
                "semantic and instance label counts differ".into(),
            ));
        }
        let mut ids = std::collections::HashMap::new();
        let mut instances: Vec<InstanceInfo> = Vec::new();
        let mut keys_in_order = Vec::new();
        let mut instance = vec![0u32; semantic.len()];
        let mut pending = Vec::new();
        for (p, key) in instance_keys.iter().enumerate() {
            match key {
                Some(k) => {
                    let id = *ids.entry(*k).or_insert_with(|| {
                        instances.push(InstanceInfo {
                            category: semantic[p],
                            confidence: 0.0,
                            points: 0,
                        });
                        keys_in_order.push(*k);
                        instances.len() - 1
                    });
                    if instances[id].category != semantic[p] {
                        return Err(Error::Invalid(vec![Violation::new(
                            p,
                            format!("point {p} disagrees with the category of its instance"),
                        )]));
                    }
                    instances[id].points += 1;
                    instance[p] = id as u32;
                }
                None => pending.push(p),
            }
        }
        for (info, key) in instances.iter_mut().zip(&keys_in_order) {
            info.confidence = confidence(*key);
        }
        let none = instances.len() as u32;
        for p in pending {
            instance[p] = none;
        }
        let result = Self {
            num_categories,
            semantic,
            instance,
            instances,
        };
        let violations = result.check();
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        Ok(result)
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn unlabeled_category(&self) -> CategoryId {
        self.num_categories as CategoryId
    }

    pub fn no_instance(&self) -> u32 {
        self.instances.len() as u32
    }

    /// Instance of a point, if any.
    pub fn instance_of(&self, point: usize) -> Option<u32> {
        let id = self.instance[point];
        (id < self.no_instance()).then_some(id)
    }

    /// Point indices of every instance, in instance order.
    pub fn instance_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.instances.len()];
        for (p, &id) in self.instance.iter().enumerate() {
            if let Some(m) = members.get_mut(id as usize) {
                m.push(p);
            }
        }
        members
    }

    /// Invariant violations, empty when the result is well formed.
    pub fn check(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.instance.len() != self.semantic.len() {
            out.push(Violation::new(0, "semantic and instance arrays differ in length"));
            return out;
        }
        let unlabeled = self.unlabeled_category();
        let none = self.no_instance();
        let mut counts = vec![0usize; self.instances.len()];
        for (p, (&sem, &inst)) in self.semantic.iter().zip(&self.instance).enumerate() {
            if sem > unlabeled {
                out.push(Violation::new(p, format!("semantic id {sem} out of range at point {p}")));
            }
            if inst > none {
                out.push(Violation::new(p, format!("instance id {inst} out of range at point {p}")));
            } else if inst < none {
                counts[inst as usize] += 1;
                if self.instances[inst as usize].category != sem {
                    out.push(Violation::new(
                        p,
                        format!("point {p} has semantic {sem} but instance {inst} is a different category"),
                    ));
                }
            }
        }
        for (i, (info, &count)) in self.instances.iter().zip(&counts).enumerate() {
            if count == 0 {
                out.push(Violation::new(i, format!("instance {i} has no points")));
            }
            if count != info.points {
                out.push(Violation::new(
                    i,
                    format!("instance {i} records {} points but has {count}", info.points),
                ));
            }
            if !(0.0..=1.0).contains(&info.confidence) {
                out.push(Violation::new(i, format!("instance {i} confidence outside [0, 1]")));
            }
            if info.category >= unlabeled {
                out.push(Violation::new(i, format!("instance {i} has no valid category")));
            }
        }
        out
    }
}

/// One invariant violation: the offending element index and a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub message: String,
}

impl Violation {
    pub fn new(index: usize, message: impl Into<String>) -> Self {
        Self {
            index,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Result of [`validate`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Points whose normals are off unit length by more than [`NORMAL_TOLERANCE`]
    /// and get rescaled at load time.
    pub renormalized: Vec<usize>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every input invariant and collect all violations.
pub fn validate(
    cloud: &PointCloud,
    views: &[View],
    detections: &[Detection],
    schema: &LabelSchema,
) -> ValidationReport {
    let mut violations = check_cloud(cloud);
    for (i, view) in views.iter().enumerate() {
        violations.extend(check_view(i, view));
    }
    violations.extend(check_detections(detections, views, schema));
    violations.extend(check_schema(schema));
    let renormalized = cloud
        .normals
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            let len = n.norm();
            len > 0.0 && (len - 1.0).abs() > NORMAL_TOLERANCE
        })
        .map(|(i, _)| i)
        .collect();
    ValidationReport {
        violations,
        renormalized,
    }
}

pub(crate) fn check_cloud(cloud: &PointCloud) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = cloud.positions.len();
    if n == 0 {
        out.push(Violation::new(0, "point cloud is empty"));
    }
    if cloud.colors.len() != n || cloud.normals.len() != n {
        out.push(Violation::new(
            0,
            format!(
                "array lengths differ: {} positions, {} colors, {} normals",
                n,
                cloud.colors.len(),
                cloud.normals.len()
            ),
        ));
        return out;
    }
    for (p, pos) in cloud.positions.iter().enumerate() {
        if !pos.iter().all(|v| v.is_finite()) {
            out.push(Violation::new(p, format!("non-finite position at point {p}")));
        }
    }
    for (p, c) in cloud.colors.iter().enumerate() {
        if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
            out.push(Violation::new(p, format!("color outside [0, 1] at point {p}")));
        }
    }
    for (p, nrm) in cloud.normals.iter().enumerate() {
        let len = nrm.norm();
        if !len.is_finite() {
            out.push(Violation::new(p, format!("non-finite normal at point {p}")));
        } else if len == 0.0 {
            out.push(Violation::new(p, format!("zero normal at point {p}")));
        }
    }
    out
}

pub(crate) fn check_view(index: usize, view: &View) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(view.fx > 0.0 && view.fy > 0.0) {
        out.push(Violation::new(index, format!("view {index}: focal lengths must be positive")));
    }
    if view.width == 0 || view.height == 0 {
        out.push(Violation::new(index, format!("view {index}: image size must be at least 1x1")));
    }
    if !view.extrinsic.iter().all(|v| v.is_finite()) || !view.cx.is_finite() || !view.cy.is_finite() {
        out.push(Violation::new(index, format!("view {index}: non-finite camera parameter")));
        return out;
    }
    let r = view.rotation();
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ROTATION_TOLERANCE {
        out.push(Violation::new(
            index,
            format!("view {index}: rotation is not orthonormal (max |RᵀR - I| = {err:e})"),
        ));
    } else if r.determinant() < 0.0 {
        out.push(Violation::new(index, format!("view {index}: rotation is a reflection")));
    }
    let bottom = view.extrinsic.row(3);
    if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
        out.push(Violation::new(index, format!("view {index}: extrinsic bottom row must be 0 0 0 1")));
    }
    out
}

pub(crate) fn check_detections(
    detections: &[Detection],
    views: &[View],
    schema: &LabelSchema,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        let b = &d.bbox;
        if ![b.xmin, b.ymin, b.xmax, b.ymax].iter().all(|v| v.is_finite()) {
            out.push(Violation::new(i, format!("non-finite box at detection index {i}")));
            continue;
        }
        if !(b.xmin < b.xmax && b.ymin < b.ymax) {
            out.push(Violation::new(i, format!("degenerate box at detection index {i}")));
        }
        match views.get(d.view) {
            None => out.push(Violation::new(
                i,
                format!("detection index {i} refers to view {} of {}", d.view, views.len()),
            )),
            Some(view) => {
                let w = view.width as f64 - 0.5;
                let h = view.height as f64 - 0.5;
                if b.xmax < -0.5 || b.ymax < -0.5 || b.xmin >= w || b.ymin >= h {
                    out.push(Violation::new(
                        i,
                        format!("box at detection index {i} lies outside the image"),
                    ));
                }
            }
        }
        if d.category as usize >= schema.num_categories() {
            out.push(Violation::new(
                i,
                format!("detection index {i} has unknown category {}", d.category),
            ));
        }
        if !(0.0..=1.0).contains(&d.score) {
            out.push(Violation::new(i, format!("score outside [0, 1] at detection index {i}")));
        }
    }
    out
}

pub(crate) fn check_schema(schema: &LabelSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    if schema.object.is_empty() {
        out.push(Violation::new(0, "object name is empty"));
    }
    if schema.parts.is_empty() {
        out.push(Violation::new(0, "schema has no part categories"));
    }
    for (i, name) in schema.parts.iter().enumerate() {
        if name.is_empty() {
            out.push(Violation::new(i, format!("part name {i} is empty")));
        }
        if schema.parts[..i].contains(name) {
            out.push(Violation::new(i, format!("duplicate part name \"{name}\"")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_cloud() -> PointCloud {
        PointCloud::new(
            vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 1.0)],
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![Vector3::z(), Vector3::new(0.0, 0.0, 2.0)],
        )
        .unwrap()
    }

    fn identity_view() -> View {
        View {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            extrinsic: Matrix4::identity(),
            width: 100,
            height: 100,
        }
    }

    fn schema() -> LabelSchema {
        LabelSchema::new("chair", vec!["seat".into(), "leg".into()]).unwrap()
    }

    #[test]
    fn well_formed_inputs_validate() {
        let det = Detection {
            view: 0,
            category: 1,
            bbox: BBox2D::new(1.0, 1.0, 10.0, 10.0),
            score: 0.9,
        };
        let report = validate(&unit_cloud(), &[identity_view()], &[det], &schema());
        assert!(report.is_ok(), "{:?}", report.violations);
        assert!(report.renormalized.is_empty());
    }

    #[test]
    fn degenerate_box_is_reported() {
        let dets = [
            Detection {
                view: 0,
                category: 0,
                bbox: BBox2D::new(1.0, 1.0, 10.0, 10.0),
                score: 1.0,
            },
            Detection {
                view: 0,
                category: 0,
                bbox: BBox2D::new(5.0, 1.0, 5.0, 10.0),
                score: 1.0,
            },
        ];
        let report = validate(&unit_cloud(), &[identity_view()], &dets, &schema());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].message, "degenerate box at detection index 1");
    }

    #[test]
    fn zero_normal_is_a_hard_error() {
        let raw = PointCloud::from_raw(
            vec![Vector3::zeros(), Vector3::x()],
            vec![[0.0; 3]; 2],
            vec![Vector3::z(), Vector3::zeros()],
        );
        let report = validate(&raw, &[], &[], &schema());
        assert_eq!(report.violations, vec![Violation::new(1, "zero normal at point 1")]);
        let err = PointCloud::new(
            raw.positions().to_vec(),
            raw.colors().to_vec(),
            raw.normals().to_vec(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("zero normal at point 1"));
    }

    #[test]
    fn renormalization_is_recorded() {
        let raw = PointCloud::from_raw(
            vec![Vector3::zeros()],
            vec![[0.5; 3]],
            vec![Vector3::new(0.0, 3.0, 4.0)],
        );
        let report = validate(&raw, &[], &[], &schema());
        assert!(report.is_ok());
        assert_eq!(report.renormalized, vec![0]);
    }

    #[test]
    fn reports_every_violation() {
        let raw = PointCloud::from_raw(
            vec![Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros()],
            vec![[2.0, 0.0, 0.0], [0.0; 3]],
            vec![Vector3::zeros(), Vector3::z()],
        );
        let mut bad_view = identity_view();
        bad_view.extrinsic[(0, 0)] = 2.0;
        bad_view.fx = 0.0;
        let det = Detection {
            view: 3,
            category: 7,
            bbox: BBox2D::new(0.0, 0.0, 1.0, 1.0),
            score: 1.5,
        };
        let bad_schema = LabelSchema {
            object: String::new(),
            parts: vec!["a".into(), "a".into()],
        };
        let report = validate(&raw, &[bad_view], &[det], &bad_schema);
        let messages: Vec<_> = report.violations.iter().map(|v| v.message.as_str()).collect();
        assert_eq!(messages.len(), 10, "{messages:#?}");
        assert!(messages.contains(&"non-finite position at point 0"));
        assert!(messages.contains(&"zero normal at point 0"));
        assert!(messages.contains(&"duplicate part name \"a\""));
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let mut v = identity_view();
        v.extrinsic[(0, 1)] = 1e-3;
        assert_eq!(check_view(0, &v).len(), 1);
        v.extrinsic[(0, 1)] = 1e-8;
        assert!(check_view(0, &v).is_empty());
    }

    #[test]
    fn validate_is_idempotent() {
        let cloud = unit_cloud();
        let a = validate(&cloud, &[identity_view()], &[], &schema());
        let b = validate(&cloud, &[identity_view()], &[], &schema());
        assert_eq!(a, b);
    }

    #[test]
    fn segmentation_from_labels_numbers_instances_by_first_point() {
        let seg = SegmentationResult::from_labels(
            2,
            vec![1, 0, 1, 2],
            &[Some(9), Some(4), Some(9), None],
            |k| if k == 9 { 0.5 } else { 1.0 },
        )
        .unwrap();
        assert_eq!(seg.instance, vec![0, 1, 0, 2]);
        assert_eq!(seg.instances[0].category, 1);
        assert_eq!(seg.instances[0].points, 2);
        assert_eq!(seg.instances[0].confidence, 0.5);
        assert_eq!(seg.instance_of(3), None);
        assert!(seg.check().is_empty());
    }

    #[test]
    fn segmentation_rejects_mixed_instance_categories() {
        let err = SegmentationResult::from_labels(2, vec![0, 1], &[Some(0), Some(0)], |_| 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn partition_requires_dense_ids() {
        let f = Features::new(1, vec![0.0, 1.0, 2.0]);
        assert!(Partition::from_assignment(vec![0, 2, 2], &f).is_err());
        let p = Partition::from_assignment(vec![0, 1, 1], &f).unwrap();
        assert_eq!(p.mean(1), &[1.5]);
        assert_eq!(p.members(1), &[1, 2]);
    }

    proptest! {
        #[test]
        fn renormalization_preserves_direction(
            x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3,
        ) {
            let n = Vector3::new(x, y, z);
            prop_assume!(n.norm() > 1e-9);
            let cloud = PointCloud::new(vec![Vector3::zeros()], vec![[0.0; 3]], vec![n]).unwrap();
            let got = cloud.normals()[0];
            let want = n / n.norm();
            for k in 0..3 {
                prop_assert!((got[k] - want[k]).abs() <= 1e-12);
            }
            prop_assert!((got.norm() - 1.0).abs() <= NORMAL_TOLERANCE);
        }
    }
}
