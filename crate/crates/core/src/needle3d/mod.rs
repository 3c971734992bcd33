//! 3D needle axis from a transverse sweep: per-slice intersection points,
//! stacking into the base frame, density filtering and a robust line fit.

pub mod dbscan;
pub mod ransac;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dbscan::{dbscan_filter, dbscan_labels, dbscan_largest, DbscanParams};
pub use ransac::{principal_axis, ransac_line, refit, Line3Fit, Line3FitRecord, RansacParams};

use crate::geometry::{probe_to_base, CalibrationMap, ImagePoint, RigidTransform, Vec3};
use crate::pipeline::NeedleDetection2D;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Needle3dError {
    #[error("detection is not valid")]
    InvalidDetection,
    #[error("no valid slices in sweep")]
    NoValidSlices,
    #[error("all points classified as noise")]
    EmptyResult,
    #[error("need at least 2 points, got {0}")]
    InsufficientPoints(usize),
    #[error("best consensus has only {0} inliers")]
    NoConsensus(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedSlice {
    pub probe_pose: RigidTransform,
    pub detection: NeedleDetection2D,
    pub frame_index: usize,
}

/// Centre of the detected segment. A thick slice smears the needle
/// cross-section into a short line; its midpoint is the plane crossing.
pub fn intersection_point(det: &NeedleDetection2D) -> Result<ImagePoint, Needle3dError> {
    if !det.valid {
        return Err(Needle3dError::InvalidDetection);
    }
    Ok(det.endpoints[0].midpoint(&det.endpoints[1]))
}

pub fn stack_points(slices: &[TrackedSlice], cal: &CalibrationMap) -> Result<Vec<Vec3>, Needle3dError> {
    let cloud: Vec<Vec3> = slices
        .iter()
        .filter_map(|s| {
            let px = intersection_point(&s.detection).ok()?;
            Some(probe_to_base(&cal.pixel_to_probe_unchecked(&px), &s.probe_pose))
        })
        .collect();
    if cloud.is_empty() {
        return Err(Needle3dError::NoValidSlices);
    }
    Ok(cloud)
}

/// Intermediate products of a reconstruction, for logging.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub cloud: Vec<Vec3>,
    pub filtered: Vec<Vec3>,
    pub fit: Line3Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRecord {
    pub cloud: Vec<[f64; 3]>,
    pub filtered: Vec<[f64; 3]>,
    pub fit: Line3FitRecord,
}

impl From<&Reconstruction> for ReconstructionRecord {
    fn from(r: &Reconstruction) -> Self {
        Self {
            cloud: r.cloud.iter().map(|p| (*p).into()).collect(),
            filtered: r.filtered.iter().map(|p| (*p).into()).collect(),
            fit: (&r.fit).into(),
        }
    }
}

pub fn reconstruct(
    slices: &[TrackedSlice],
    cal: &CalibrationMap,
    dbscan: &DbscanParams,
    ransac: &RansacParams,
) -> Result<Reconstruction, Needle3dError> {
    let cloud = stack_points(slices, cal)?;
    let filtered = dbscan_filter(&cloud, dbscan)?;
    let fit = ransac_line(&filtered, ransac)?;
    Ok(Reconstruction { cloud, filtered, fit })
}
