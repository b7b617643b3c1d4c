//! File formats: PLY clouds, JSON views/detections/schemas, label files,
//! PLFM feature maps and CSV reports.

mod json;
mod labels;
mod plfm;
mod ply;

use std::path::Path;

pub use json::{
    read_detections, read_detections_unchecked, read_scene_spec, read_schema, read_views, write_detections,
    write_schema, write_views,
};
pub use labels::{encode_labels, parse_labels, read_labels, write_labels};
pub use plfm::{decode_plfm, encode_plfm, read_plfm, write_plfm, PLFM_VERSION};
pub use ply::{encode_ply, parse_ply, read_ply, write_ply, PlyEncoding};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}
