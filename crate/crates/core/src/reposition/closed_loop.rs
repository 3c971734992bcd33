//! Closed-loop episode: in-plane insertion under monitoring, injected probe
//! perturbation, transverse search, axis reconstruction, repositioning and
//! verification.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply, compute_reposition, RepositionCommand};
use crate::geometry::{CalibrationMap, RigidTransform, Vec3};
use crate::image::BinaryMask;
use crate::monitor::{AlignmentMonitor, MonitorParams, MonitorState};
use crate::needle3d::{reconstruct, DbscanParams, RansacParams, TrackedSlice};
use crate::pipeline::{detect, DetectConfig, NeedleDetection2D};
use crate::rng::stream_rng;
use crate::sim::{
    degrade_mask_stream, downward_probe_pose, in_plane_needle, render_mask, DegradationParams,
    NeedleModel, ProbeModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerState {
    Monitoring,
    MisalignmentDetected,
    TransverseSearch,
    Reconstructing,
    Repositioning,
    Verifying,
    Restored,
    Failed,
}

impl ControllerState {
    pub fn can_move_to(self, next: ControllerState) -> bool {
        use ControllerState::*;
        matches!(
            (self, next),
            (Monitoring, MisalignmentDetected)
                | (MisalignmentDetected, TransverseSearch)
                | (TransverseSearch, Reconstructing)
                | (TransverseSearch, Failed)
                | (Reconstructing, Repositioning)
                | (Reconstructing, Failed)
                | (Repositioning, Verifying)
                | (Repositioning, Failed)
                | (Verifying, Restored)
                | (Verifying, Failed)
                | (Restored, Monitoring)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpec {
    pub extent_mm: f64,
    pub step_mm: f64,
    pub min_valid_slices: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            extent_mm: 30.0,
            step_mm: 0.5,
            min_valid_slices: 10,
        }
    }
}

/// In-plane insertion drawn per episode: entry on the skin left of the
/// footprint, random pitch, and a tip position under the footprint at the
/// moment the perturbation is injected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InsertionScenario {
    pub entry_x_mm: f64,
    pub pitch_deg: [f64; 2],
    /// Probe-frame x of the tip at injection.
    pub tip_x_at_injection_mm: [f64; 2],
    pub step_mm: f64,
    pub inject_frame: usize,
    /// Frames tracked after a restore (or after injection when unperturbed).
    pub resume_frames: usize,
}

impl Default for InsertionScenario {
    fn default() -> Self {
        Self {
            entry_x_mm: -30.0,
            pitch_deg: [15.0, 35.0],
            tip_x_at_injection_mm: [17.0, 23.0],
            step_mm: 0.2,
            inject_frame: 40,
            resume_frames: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClosedLoopConfig {
    pub probe: ProbeModel,
    pub calibration: CalibrationMap,
    pub detect: DetectConfig,
    pub monitor: MonitorParams,
    pub dbscan: DbscanParams,
    pub ransac: RansacParams,
    pub search: SearchSpec,
    pub scenario: InsertionScenario,
    pub degradation: Option<DegradationParams>,
    /// Restored iff the verified shaft is at least this fraction of the
    /// pre-misalignment average.
    pub verify_fraction: f64,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            probe: ProbeModel::default(),
            calibration: CalibrationMap::default(),
            detect: DetectConfig::default(),
            monitor: MonitorParams::default(),
            dbscan: DbscanParams::default(),
            ransac: RansacParams::default(),
            search: SearchSpec::default(),
            scenario: InsertionScenario::default(),
            degradation: Some(DegradationParams::default()),
            verify_fraction: 0.6,
        }
    }
}

/// Rotation about the probe centreline plus a short-axis shift; signs drawn
/// per episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub d_theta_deg: f64,
    pub d_p_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub d_theta_inj: f64,
    pub d_p_inj: f64,
    pub trial: usize,
    pub seed: u64,
    pub trigger_frame: Option<usize>,
    pub search_frames: usize,
    pub valid_slices: usize,
    pub command: Option<RepositionCommand>,
    pub e_p_mm: Option<f64>,
    pub e_theta_deg: Option<f64>,
    pub success: bool,
    pub frames_to_restore: Option<usize>,
    pub final_state: ControllerState,
    pub states: Vec<ControllerState>,
    pub failure: Option<String>,
}

struct Controller {
    state: ControllerState,
    trace: Vec<ControllerState>,
}

impl Controller {
    fn new() -> Self {
        Self {
            state: ControllerState::Monitoring,
            trace: vec![ControllerState::Monitoring],
        }
    }

    fn go(&mut self, next: ControllerState) {
        assert!(self.state.can_move_to(next), "illegal transition {:?} -> {next:?}", self.state);
        self.state = next;
        self.trace.push(next);
    }
}

struct Renderer<'a> {
    cfg: &'a ClosedLoopConfig,
    deg_seed: u64,
    frame: usize,
}

impl Renderer<'_> {
    fn observe(&mut self, needle: &NeedleModel, pose: &RigidTransform, det_cfg: &DetectConfig) -> NeedleDetection2D {
        let clean = render_mask(needle, pose, &self.cfg.probe, &self.cfg.calibration).mask;
        let mask: BinaryMask = match &self.cfg.degradation {
            Some(d) => {
                let p = DegradationParams {
                    rng_seed: self.deg_seed ^ d.rng_seed,
                    ..*d
                };
                degrade_mask_stream(&clean, &p, self.frame as u64)
            }
            None => clean,
        };
        self.frame += 1;
        detect(&mask, det_cfg)
    }
}

/// Mean out-of-plane distance of the needle portion under the footprint, and
/// the angle between the needle axis and the image plane.
pub fn plane_errors(needle: &NeedleModel, pose: &RigidTransform, probe: &ProbeModel) -> Option<(f64, f64)> {
    let inv = pose.inverse();
    let n = (needle.inserted_length / 0.1).ceil() as usize;
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..=n {
        let s = needle.inserted_length * i as f64 / n.max(1) as f64;
        let q = inv.apply(&(needle.entry() + needle.dir() * s));
        if q.x.abs() <= probe.footprint / 2.0 && (0.0..=probe.depth).contains(&q.z) {
            sum += q.y.abs();
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let e_theta = needle.dir().dot(&pose.axis_y()).abs().min(1.0).asin().to_degrees();
    Some((sum / count as f64, e_theta))
}

/// Search frame: probe normal kept, short axis along the needle azimuth,
/// origin on the skin above `centre`.
fn search_poses(current: &RigidTransform, centre: &Vec3, azimuth: &Vec3, spec: &SearchSpec) -> Option<Vec<RigidTransform>> {
    let z = current.axis_z();
    let y = azimuth - z * azimuth.dot(&z);
    if y.norm() < 1e-9 {
        return None;
    }
    let y = y.normalize();
    let x = y.cross(&z);
    let origin = centre - z * (centre - current.translation).dot(&z);
    let base = RigidTransform::from_axes(origin, x, z);
    let n = (spec.extent_mm / spec.step_mm).round() as i64;
    Some(
        (0..=n)
            .map(|i| {
                let off = -spec.extent_mm / 2.0 + i as f64 * spec.step_mm;
                RigidTransform {
                    rotation: base.rotation,
                    translation: origin + y * off,
                }
            })
            .collect(),
    )
}

pub fn run_closed_loop(
    cfg: &ClosedLoopConfig,
    perturbation: Option<Perturbation>,
    trial: usize,
    seed: u64,
) -> EpisodeLog {
    let mut rng = stream_rng(seed, 0);
    let sc = &cfg.scenario;
    let pitch = rng.random_range(sc.pitch_deg[0]..=sc.pitch_deg[1]);
    let tip_x = rng.random_range(sc.tip_x_at_injection_mm[0]..=sc.tip_x_at_injection_mm[1]);
    let theta_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let p_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let deg_seed: u64 = rng.random();

    let aligned = downward_probe_pose(Vec3::zeros(), 0.0);
    let len_at_inject = (tip_x - sc.entry_x_mm) / pitch.to_radians().cos();
    let start_len = (len_at_inject - sc.step_mm * sc.inject_frame as f64).max(0.0);
    let needle0 = in_plane_needle(&aligned, sc.entry_x_mm, pitch, start_len);

    let mut log = EpisodeLog {
        d_theta_inj: perturbation.map_or(0.0, |p| p.d_theta_deg),
        d_p_inj: perturbation.map_or(0.0, |p| p.d_p_mm),
        trial,
        seed,
        trigger_frame: None,
        search_frames: 0,
        valid_slices: 0,
        command: None,
        e_p_mm: None,
        e_theta_deg: None,
        success: false,
        frames_to_restore: None,
        final_state: ControllerState::Monitoring,
        states: Vec::new(),
        failure: None,
    };
    let mut ctl = Controller::new();
    let mut monitor = AlignmentMonitor::new(cfg.monitor);
    let mut render = Renderer { cfg, deg_seed, frame: 0 };
    let mut pose = aligned;
    let mut last_tracked: Option<(NeedleDetection2D, RigidTransform)> = None;
    let mut length = start_len;

    let total_frames = sc.inject_frame + sc.resume_frames + 1;
    let mut trigger = None;
    for k in 0..total_frames {
        if k == sc.inject_frame {
            if let Some(p) = perturbation {
                let rot = RigidTransform::rot_z((theta_sign * p.d_theta_deg).to_radians());
                let shift = RigidTransform::from_translation(Vec3::new(0.0, p_sign * p.d_p_mm, 0.0));
                pose = pose.compose(&rot).compose(&shift);
            }
        }
        length = start_len + sc.step_mm * k as f64;
        let needle = needle0.with_length(length);
        let det = render.observe(&needle, &pose, &cfg.detect);
        if monitor.push_and_check(det.shaft_length, det.valid) == MonitorState::Misaligned {
            trigger = Some(k);
            break;
        }
        if det.valid {
            last_tracked = Some((det, pose));
        }
    }
    let Some(trigger_frame) = trigger else {
        log.states = ctl.trace;
        return log;
    };
    // insertion halts while the probe is repositioned
    let needle = needle0.with_length(length);
    log.trigger_frame = Some(trigger_frame);
    ctl.go(ControllerState::MisalignmentDetected);
    let reference = monitor.average();

    ctl.go(ControllerState::TransverseSearch);
    let fail = |mut log: EpisodeLog, mut ctl: Controller, why: String| {
        ctl.go(ControllerState::Failed);
        log.final_state = ControllerState::Failed;
        log.states = ctl.trace;
        log.failure = Some(why);
        log
    };
    let Some((track_det, track_pose)) = last_tracked else {
        return fail(log, ctl, "no tracked shaft before trigger".into());
    };
    let cal = &cfg.calibration;
    let centre = track_pose.apply(&cal.pixel_to_probe_unchecked(&track_det.midpoint()));
    let dir_img = cal.pixel_to_probe_unchecked(&track_det.tip) - cal.pixel_to_probe_unchecked(&track_det.endpoints[0]);
    let azimuth = track_pose.apply_vector(&dir_img);
    let Some(poses) = search_poses(&pose, &centre, &azimuth, &cfg.search) else {
        return fail(log, ctl, "tracked shaft has no horizontal extent".into());
    };
    let transverse_cfg = DetectConfig {
        min_area: cfg.detect.min_area.min(20),
        ..cfg.detect
    };
    let slices: Vec<TrackedSlice> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| TrackedSlice {
            probe_pose: *p,
            detection: render.observe(&needle, p, &transverse_cfg),
            frame_index: i,
        })
        .collect();
    log.search_frames = slices.len();
    log.valid_slices = slices.iter().filter(|s| s.detection.valid).count();
    if log.valid_slices < cfg.search.min_valid_slices {
        let why = format!("only {} valid slices", log.valid_slices);
        return fail(log, ctl, why);
    }

    ctl.go(ControllerState::Reconstructing);
    let rec = match reconstruct(&slices, cal, &cfg.dbscan, &cfg.ransac) {
        Ok(r) => r,
        Err(e) => return fail(log, ctl, e.to_string()),
    };

    ctl.go(ControllerState::Repositioning);
    let cmd = match compute_reposition(&rec.fit, &pose) {
        Ok(c) => c,
        Err(e) => return fail(log, ctl, e.to_string()),
    };
    log.command = Some(cmd);
    pose = apply(&pose, &cmd);

    ctl.go(ControllerState::Verifying);
    let det = render.observe(&needle, &pose, &cfg.detect);
    if let Some((e_p, e_theta)) = plane_errors(&needle, &pose, &cfg.probe) {
        log.e_p_mm = Some(e_p);
        log.e_theta_deg = Some(e_theta);
    } else {
        log.e_p_mm = Some(f64::NAN);
        log.e_theta_deg = Some(f64::NAN);
    }
    if !(det.valid && det.shaft_length >= cfg.verify_fraction * reference) {
        let why = format!("verification shaft {:.1} px vs reference {:.1} px", det.shaft_length, reference);
        return fail(log, ctl, why);
    }
    ctl.go(ControllerState::Restored);
    log.success = true;
    log.frames_to_restore = Some(log.search_frames + 1);

    ctl.go(ControllerState::Monitoring);
    monitor.reset();
    for k in 0..sc.resume_frames {
        let needle = needle0.with_length(length + sc.step_mm * (k + 1) as f64);
        let det = render.observe(&needle, &pose, &cfg.detect);
        monitor.push_and_check(det.shaft_length, det.valid);
    }
    log.final_state = ctl.state;
    log.states = ctl.trace;
    log
}

/// Every (theta, p) cell times `trials`, run in parallel with per-episode
/// seeds; output ordered by cell then trial.
pub fn run_grid(
    cfg: &ClosedLoopConfig,
    thetas: &[f64],
    shifts: &[f64],
    trials: usize,
    seed: u64,
) -> Vec<EpisodeLog> {
    let jobs: Vec<(f64, f64, usize)> = thetas
        .iter()
        .flat_map(|&t| shifts.iter().flat_map(move |&p| (0..trials).map(move |k| (t, p, k))))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(t, p, k))| {
            let s: u64 = stream_rng(seed, 1 + i as u64).random();
            run_closed_loop(
                cfg,
                Some(Perturbation {
                    d_theta_deg: t,
                    d_p_mm: p,
                }),
                k,
                s,
            )
        })
        .collect()
}
