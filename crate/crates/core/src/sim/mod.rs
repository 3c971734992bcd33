//! Synthetic ultrasound scenes standing in for recorded ex vivo data.

pub mod augment;
pub mod degrade;
pub mod scene;
pub mod sweep;

pub use augment::{augment, AugmentPlan};
pub use degrade::{degrade_mask, degrade_mask_stream, DegradationParams};
pub use scene::{
    downward_probe_pose, in_plane_needle, render_intensity, render_mask, visible_segment,
    ElevationProfile, IntensityParams, NeedleModel, ProbeModel, RenderedMask, VisibleSegment,
};
pub use sweep::{
    read_sweep_dir, render_frame, short_axis_sweep, simulate_sweep, write_sweep_dir, FrameGt,
    LoadedSweep, SweepError, SweepFrame, SweepMode, SweepSpec,
};
