//! Multi-frame sweeps with per-frame ground truth, and their on-disk layout:
//! `frame_%04d.pgm`, `poses.json`, `gt.json`, `spec.json`.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::degrade::{degrade_mask_stream, DegradationParams};
use super::scene::{downward_probe_pose, in_plane_needle, render_mask, NeedleModel, ProbeModel};
use crate::geometry::{CalibrationMap, ImagePoint, RigidTransform, Vec3};
use crate::image::{BinaryMask, PgmError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep spec: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("pgm: {0}")]
    Pgm(#[from] PgmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Fixed probe, needle advancing by `insertion_step_mm` per frame.
    Insertion,
    /// Static needle, probe moving through `poses`.
    Transverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub mode: SweepMode,
    /// One pose per frame.
    pub poses: Vec<RigidTransform>,
    pub needle: NeedleModel,
    pub probe: ProbeModel,
    pub calibration: CalibrationMap,
    pub insertion_step_mm: f64,
    pub degradation: Option<DegradationParams>,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let pose = downward_probe_pose(Vec3::zeros(), 0.0);
        Self {
            mode: SweepMode::Insertion,
            poses: vec![pose; 50],
            needle: in_plane_needle(&pose, -30.0, 20.0, 15.0),
            probe: ProbeModel::default(),
            calibration: CalibrationMap::default(),
            insertion_step_mm: 0.5,
            degradation: None,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        let min_poses = match self.mode {
            SweepMode::Insertion => 1,
            SweepMode::Transverse => 2,
        };
        if self.poses.len() < min_poses {
            return Err(SweepError::Invalid(format!(
                "{:?} sweep needs at least {min_poses} poses, got {}",
                self.mode,
                self.poses.len()
            )));
        }
        if !self.poses.iter().all(RigidTransform::is_valid) {
            return Err(SweepError::Invalid("pose is not a rigid transform".into()));
        }
        if !self.needle.validate() {
            return Err(SweepError::Invalid("needle model".into()));
        }
        if !self.probe.validate() {
            return Err(SweepError::Invalid("probe model".into()));
        }
        if !self.calibration.validate() {
            return Err(SweepError::Invalid("calibration map".into()));
        }
        if self.insertion_step_mm < 0.0 {
            return Err(SweepError::Invalid("negative insertion step".into()));
        }
        if let Some(d) = &self.degradation {
            if !d.validate() {
                return Err(SweepError::Invalid("degradation parameters".into()));
            }
        }
        Ok(())
    }

    pub fn needle_at(&self, frame: usize) -> NeedleModel {
        match self.mode {
            SweepMode::Insertion => self
                .needle
                .with_length(self.needle.inserted_length + self.insertion_step_mm * frame as f64),
            SweepMode::Transverse => self.needle,
        }
    }
}

/// Ground truth for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGt {
    pub frame: usize,
    /// Tip-side end of the visible shaft, px.
    pub tip_px: Option<ImagePoint>,
    /// Visible shaft endpoints (entry side, tip side), px.
    pub shaft_endpoints_px: Option<[ImagePoint; 2]>,
    /// Needle axis in the base frame: entry point and physical tip.
    pub axis_base: [[f64; 3]; 2],
    pub inserted_length: f64,
    pub mask_empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFrame {
    pub index: usize,
    pub pose: RigidTransform,
    pub mask: BinaryMask,
    pub gt: FrameGt,
}

/// Renders one frame; degradation uses the frame index as its RNG stream.
pub fn render_frame(spec: &SweepSpec, index: usize) -> SweepFrame {
    let pose = spec.poses[index];
    let needle = spec.needle_at(index);
    let rendered = render_mask(&needle, &pose, &spec.probe, &spec.calibration);
    let gt = FrameGt {
        frame: index,
        tip_px: rendered.segment.map(|s| s.end_px),
        shaft_endpoints_px: rendered.segment.map(|s| [s.start_px, s.end_px]),
        axis_base: [needle.entry().into(), needle.tip().into()],
        inserted_length: needle.inserted_length,
        mask_empty: rendered.empty_scene,
    };
    let mask = match &spec.degradation {
        Some(d) => {
            let params = DegradationParams {
                rng_seed: spec.seed ^ d.rng_seed,
                ..*d
            };
            degrade_mask_stream(&rendered.mask, &params, index as u64)
        }
        None => rendered.mask,
    };
    SweepFrame {
        index,
        pose,
        mask,
        gt,
    }
}

pub fn simulate_sweep(spec: &SweepSpec) -> Result<Vec<SweepFrame>, SweepError> {
    spec.validate()?;
    Ok((0..spec.poses.len())
        .into_par_iter()
        .map(|i| render_frame(spec, i))
        .collect())
}

pub fn write_sweep_dir(dir: &Path, spec: &SweepSpec, frames: &[SweepFrame]) -> Result<(), SweepError> {
    fs::create_dir_all(dir)?;
    for f in frames {
        let file = fs::File::create(dir.join(format!("frame_{:04}.pgm", f.index)))?;
        f.mask.write_pgm(BufWriter::new(file))?;
    }
    let poses: Vec<RigidTransform> = frames.iter().map(|f| f.pose).collect();
    let gts: Vec<&FrameGt> = frames.iter().map(|f| &f.gt).collect();
    fs::write(dir.join("poses.json"), serde_json::to_string_pretty(&poses)?)?;
    fs::write(dir.join("gt.json"), serde_json::to_string_pretty(&gts)?)?;
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

/// A sweep read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedSweep {
    pub spec: SweepSpec,
    pub frames: Vec<SweepFrame>,
}

pub fn read_sweep_dir(dir: &Path) -> Result<LoadedSweep, SweepError> {
    let spec: SweepSpec = serde_json::from_str(&fs::read_to_string(dir.join("spec.json"))?)?;
    let poses: Vec<RigidTransform> =
        serde_json::from_str(&fs::read_to_string(dir.join("poses.json"))?)?;
    let gts: Vec<FrameGt> = serde_json::from_str(&fs::read_to_string(dir.join("gt.json"))?)?;
    if poses.len() != gts.len() {
        return Err(SweepError::Invalid(format!(
            "{} poses but {} ground-truth records",
            poses.len(),
            gts.len()
        )));
    }
    if poses.is_empty() {
        return Err(SweepError::Invalid("sweep has no frames".into()));
    }
    let mut frames = Vec::with_capacity(poses.len());
    for (pose, gt) in poses.into_iter().zip(gts) {
        let path = dir.join(format!("frame_{:04}.pgm", gt.frame));
        let mask = BinaryMask::read_pgm(BufReader::new(fs::File::open(path)?))?;
        frames.push(SweepFrame {
            index: gt.frame,
            pose,
            mask,
            gt,
        });
    }
    Ok(LoadedSweep { spec, frames })
}

/// Probe poses translated along the probe short axis in `step` increments
/// over `[-extent/2, extent/2]`.
pub fn short_axis_sweep(center: &RigidTransform, extent: f64, step: f64) -> Vec<RigidTransform> {
    let n = (extent / step).round() as i64;
    let y = center.axis_y();
    (0..=n)
        .map(|i| {
            let off = -extent / 2.0 + i as f64 * step;
            RigidTransform {
                rotation: center.rotation,
                translation: center.translation + y * off,
            }
        })
        .collect()
}
