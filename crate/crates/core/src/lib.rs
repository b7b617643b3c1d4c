//! Lift per-view 2D part detections on renderings of a point cloud into 3D
//! semantic and instance part segmentation.
//!
//! Pipeline: rasterize the cloud from `K` views ([`projection`]), oversegment
//! it into superpoints ([`superpoints`]), vote a category per superpoint from
//! the boxes that cover it ([`voting`]), then group same-category adjacent
//! superpoints with matching box coverage into instances ([`grouping`]).
//! [`fusion`] holds the cross-view feature-map averaging and [`metrics`] the
//! evaluation protocol.

pub mod error;
pub mod model;
pub mod projection;
pub mod superpoints;
pub mod voting;
pub mod grouping;
pub mod fusion;
pub mod metrics;
pub mod cameras;
pub mod synth;
pub mod io;
pub mod pipeline;

pub use error::{Error, Result};
pub use model::{
    validate, BBox2D, CategoryId, Detection, Features, InstanceInfo, LabelSchema, Partition,
    PointCloud, Projection, SegmentationResult, ValidationReport, View, ViewVisibility,
    VisibilityMap, Violation,
};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
