//! Detection post-processing and evaluation: head decoding, class-aware
//! greedy NMS, and a precision/recall/mAP evaluator over a plain-text
//! dataset format.
//!
//! All geometry here is `f64`: detections are few after thresholding, so
//! there is no reason to carry reduced precision into the metrics.

mod dataset;
mod decode;
mod eval;
mod nms;

pub use dataset::{load_dataset, Dataset, ImageRecord};
pub use decode::decode_predictions;
pub use eval::{evaluate, standard_report, ClassEval, EvalReport, MaxF1, PrPoint, STANDARD_IOU_THRESHOLDS};
pub use nms::nms;

use crate::loss::BBox;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("map {map}: {got} channels do not split into {na} anchors of (nc + 5)")]
    ChannelMismatch { map: usize, got: usize, na: usize },
    #[error("map {map}: implied class count {got} differs from map 0 ({expected})")]
    InconsistentClassCount {
        map: usize,
        got: usize,
        expected: usize,
    },
    #[error("map {map}: expected batch size 1, got {got}")]
    BatchSize { map: usize, got: usize },
    #[error("got {maps} scale maps, {anchors} anchor sets, {strides} strides; counts must match")]
    ScaleCountMismatch {
        maps: usize,
        anchors: usize,
        strides: usize,
    },
    #[error("anchor set {scale} has {got} values; expected an even count matching the other scales")]
    BadAnchorSet { scale: usize, got: usize },
    #[error("{what} must be a finite number in {range}, got {got}")]
    BadThreshold {
        what: &'static str,
        range: &'static str,
        got: f64,
    },
    #[error("IoU threshold list must not be empty")]
    NoThresholds,
    #[error("class id {class_id} out of range for {nc} classes")]
    ClassOutOfRange { class_id: usize, nc: usize },
    #[error("predictions cover {preds} images but ground truth covers {gts}")]
    MismatchedImages { preds: usize, gts: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {what}")]
    ParseLine {
        path: String,
        line: usize,
        what: String,
    },
    #[error("prediction file for stem `{stem}` has no matching labels file")]
    OrphanPredictions { stem: String },
    #[error("no label files found in `{dir}`")]
    EmptyDataset { dir: String },
}

/// One decoded or loaded detection, in absolute pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub bbox: BBox<f64>,
    pub class_id: usize,
    pub confidence: f64,
}

/// One annotated box, in absolute pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruth {
    pub bbox: BBox<f64>,
    pub class_id: usize,
}
