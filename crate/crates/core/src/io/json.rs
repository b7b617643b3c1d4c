//! JSON views, detections, label schemas and scene specs.

use std::path::Path;

use nalgebra::Matrix4;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_detections, check_view, BBox2D, CategoryId, Detection, LabelSchema, View};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ViewRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    /// Row-major 4x4 world-to-camera transform.
    extrinsic: [f64; 16],
}

impl From<&View> for ViewRecord {
    fn from(v: &View) -> Self {
        let mut extrinsic = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                extrinsic[r * 4 + c] = v.extrinsic[(r, c)];
            }
        }
        Self {
            fx: v.fx,
            fy: v.fy,
            cx: v.cx,
            cy: v.cy,
            width: v.width,
            height: v.height,
            extrinsic,
        }
    }
}

impl From<ViewRecord> for View {
    fn from(r: ViewRecord) -> Self {
        View {
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            extrinsic: Matrix4::from_row_slice(&r.extrinsic),
            width: r.width,
            height: r.height,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectionRecord {
    view: usize,
    category: CategoryId,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read and validate a list of views.
pub fn read_views(path: impl AsRef<Path>) -> Result<Vec<View>> {
    let records: Vec<ViewRecord> = read_json(path.as_ref())?;
    let views: Vec<View> = records.into_iter().map(View::from).collect();
    let violations: Vec<_> = views.iter().enumerate().flat_map(|(i, v)| check_view(i, v)).collect();
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    Ok(views)
}

pub fn write_views(path: impl AsRef<Path>, views: &[View]) -> Result<()> {
    let records: Vec<ViewRecord> = views.iter().map(ViewRecord::from).collect();
    write_json(path.as_ref(), &records)
}

/// Read detections without checking them against views or a schema.
pub fn read_detections_unchecked(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let records: Vec<DetectionRecord> = read_json(path.as_ref())?;
    Ok(records
        .into_iter()
        .map(|r| Detection {
            view: r.view,
            category: r.category,
            bbox: BBox2D::new(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]),
            score: r.score,
        })
        .collect())
}

/// Read detections and validate them against the views and schema they refer to.
pub fn read_detections(path: impl AsRef<Path>, views: &[View], schema: &LabelSchema) -> Result<Vec<Detection>> {
    let detections = read_detections_unchecked(path)?;
    let violations = check_detections(&detections, views, schema);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    Ok(detections)
}

pub fn write_detections(path: impl AsRef<Path>, detections: &[Detection]) -> Result<()> {
    let records: Vec<DetectionRecord> = detections
        .iter()
        .map(|d| DetectionRecord {
            view: d.view,
            category: d.category,
            bbox: [d.bbox.xmin, d.bbox.ymin, d.bbox.xmax, d.bbox.ymax],
            score: d.score,
        })
        .collect();
    write_json(path.as_ref(), &records)
}

pub fn read_schema(path: impl AsRef<Path>) -> Result<LabelSchema> {
    let raw: LabelSchema = read_json(path.as_ref())?;
    LabelSchema::new(raw.object, raw.parts)
}

pub fn write_schema(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<()> {
    write_json(path.as_ref(), schema)
}

pub fn read_scene_spec(path: impl AsRef<Path>) -> Result<crate::synth::SceneSpec> {
    read_json(path.as_ref())
}
