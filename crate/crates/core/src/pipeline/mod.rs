//! Mask to needle detection, and evaluation metrics.

pub mod components;
pub mod detect;
pub mod metrics;

pub use components::{extract_components, ComponentBox, RotatedRect};
pub use detect::{
    detect, fit_line_and_tip, select_needle, DetectConfig, DetectError, InsertionSide, Line2,
    NeedleDetection2D, Selection,
};
pub use metrics::{
    detection_errors, seg_metrics, ssim, DetectionErrors, MetricsError, Roi, SegMetrics,
    ShaftAnnotation, SsimParams, T_CON,
};
