//! Probe adjustment from a reconstructed needle axis, and the closed-loop
//! controller that drives the simulator.

pub mod closed_loop;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use closed_loop::{
    run_closed_loop, run_grid, ClosedLoopConfig, ControllerState, EpisodeLog, InsertionScenario,
    Perturbation, SearchSpec,
};

use crate::geometry::{base_to_probe, RigidTransform, Vec3};
use crate::needle3d::Line3Fit;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RepositionError {
    #[error("needle projects perpendicular to the probe long axis (dx = {0:e})")]
    DegenerateProjection(f64),
}

/// Translation along the probe short axis and yaw about the probe normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepositionCommand {
    pub delta_p: [f64; 3],
    pub delta_theta_deg: f64,
}

impl RepositionCommand {
    pub fn zero() -> Self {
        Self {
            delta_p: [0.0; 3],
            delta_theta_deg: 0.0,
        }
    }
}

/// Command from two axis points already expressed in the probe frame; only
/// their x and y components are used.
pub fn command_from_probe_points(a: &Vec3, b: &Vec3) -> Result<RepositionCommand, RepositionError> {
    let (p1, p2) = if a.x <= b.x { (a, b) } else { (b, a) };
    let dx = p1.x - p2.x;
    if dx.abs() < 1e-6 {
        return Err(RepositionError::DegenerateProjection(dx));
    }
    let y0 = p2.y - p2.x * (p1.y - p2.y) / dx;
    let (vx, vy) = (p2.x - p1.x, p2.y - p1.y);
    // signed angle from probe X to P1->P2: atan2(X x v . z, X . v)
    let theta = vy.atan2(vx);
    Ok(RepositionCommand {
        delta_p: [0.0, y0, 0.0],
        delta_theta_deg: theta.to_degrees(),
    })
}

pub fn compute_reposition(line: &Line3Fit, probe_pose: &RigidTransform) -> Result<RepositionCommand, RepositionError> {
    let a = base_to_probe(&line.p1, probe_pose);
    let b = base_to_probe(&line.p2, probe_pose);
    command_from_probe_points(&a, &b)
}

/// Translate by `delta_p` in the probe frame, then yaw about the translated
/// probe z axis.
pub fn apply(pose: &RigidTransform, cmd: &RepositionCommand) -> RigidTransform {
    let t = RigidTransform::from_translation(Vec3::from(cmd.delta_p));
    let r = RigidTransform::rot_z(cmd.delta_theta_deg.to_radians());
    pose.compose(&t).compose(&r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cmd(a: (f64, f64), b: (f64, f64)) -> RepositionCommand {
        command_from_probe_points(&Vec3::new(a.0, a.1, 0.0), &Vec3::new(b.0, b.1, 0.0)).unwrap()
    }

    #[test]
    fn worked_examples() {
        let c = cmd((-10.0, 2.0), (10.0, 2.0));
        assert!((c.delta_p[1] - 2.0).abs() < 1e-12 && c.delta_theta_deg.abs() < 1e-12);
        let c = cmd((0.0, 0.0), (10.0, 10.0));
        assert!(c.delta_p[1].abs() < 1e-12 && (c.delta_theta_deg - 45.0).abs() < 1e-12);
        let c = cmd((-5.0, 1.0), (5.0, 3.0));
        assert!((c.delta_p[1] - 2.0).abs() < 1e-12);
        assert!((c.delta_theta_deg - 0.2f64.atan().to_degrees()).abs() < 1e-12);
        assert!((c.delta_theta_deg - 11.309932474020215).abs() < 1e-9);
        assert_eq!((c.delta_p[0], c.delta_p[2]), (0.0, 0.0));
    }

    #[test]
    fn vertical_projection_is_degenerate() {
        let r = command_from_probe_points(&Vec3::new(1.0, 0.0, 0.0), &Vec3::new(1.0, 5.0, 3.0));
        assert!(matches!(r, Err(RepositionError::DegenerateProjection(_))));
    }

    #[test]
    fn zero_and_pure_yaw_commands() {
        let pose = RigidTransform::from_axis_angle(&Vec3::new(0.3, -1.0, 0.2), 0.7)
            .compose(&RigidTransform::from_translation(Vec3::new(4.0, 5.0, -6.0)));
        assert!(apply(&pose, &RepositionCommand::zero()).max_abs_diff(&pose) < 1e-12);
        let c = RepositionCommand {
            delta_p: [0.0; 3],
            delta_theta_deg: 10.0,
        };
        let new = apply(&pose, &c);
        let expect = pose.axis_x() * 10f64.to_radians().cos() + pose.axis_y() * 10f64.to_radians().sin();
        assert!((new.axis_x() - expect).norm() < 1e-12);
        assert!((new.axis_z() - pose.axis_z()).norm() < 1e-12);
        assert!((new.translation - pose.translation).norm() < 1e-12);
    }

    fn line_through(a: Vec3, b: Vec3) -> Line3Fit {
        Line3Fit {
            point: a,
            direction: (b - a).normalize(),
            inlier_count: 2,
            rms_residual: 0.0,
            p1: a,
            p2: b,
            inliers: vec![0, 1],
        }
    }

    fn pose_strategy() -> impl Strategy<Value = RigidTransform> {
        (
            (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
            -3.0f64..3.0,
            (-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0),
        )
            .prop_map(|((ax, ay, az), ang, (x, y, z))| {
                RigidTransform::from_axis_angle(&Vec3::new(ax, ay, az), ang)
                    .compose(&RigidTransform::from_translation(Vec3::new(x, y, z)))
            })
    }

    fn probe_line_strategy() -> impl Strategy<Value = (Vec3, Vec3)> {
        // probe-frame points with well separated x
        (
            (-30.0f64..-1.0, -10.0f64..10.0, 0.0f64..40.0),
            (1.0f64..30.0, -10.0f64..10.0, 0.0f64..40.0),
        )
            .prop_map(|(a, b)| (Vec3::new(a.0, a.1, a.2), Vec3::new(b.0, b.1, b.2)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn repositioned_plane_contains_projection((a, b) in probe_line_strategy(), pose in pose_strategy()) {
            let line = line_through(pose.apply(&a), pose.apply(&b));
            let c = compute_reposition(&line, &pose).unwrap();
            prop_assert!(c.delta_theta_deg.abs() <= 90.0);
            let new = apply(&pose, &c);
            for t in [-2.0, -0.5, 0.0, 0.3, 1.0, 3.0] {
                let p = line.p1 + (line.p2 - line.p1) * t;
                let q = base_to_probe(&p, &new);
                prop_assert!(q.y.abs() <= 1e-9, "residual {}", q.y);
            }
            let again = compute_reposition(&line, &new).unwrap();
            prop_assert!(again.delta_p[1].abs() <= 1e-6 && again.delta_theta_deg.abs() <= 1e-6);
        }

        #[test]
        fn mirroring_negates_command((a, b) in probe_line_strategy()) {
            let m = |p: &Vec3| Vec3::new(p.x, -p.y, p.z);
            let c = command_from_probe_points(&a, &b).unwrap();
            let cm = command_from_probe_points(&m(&a), &m(&b)).unwrap();
            prop_assert!((c.delta_p[1] + cm.delta_p[1]).abs() < 1e-9);
            prop_assert!((c.delta_theta_deg + cm.delta_theta_deg).abs() < 1e-9);
            let swapped = command_from_probe_points(&b, &a).unwrap();
            prop_assert_eq!(c, swapped);
        }
    }
}
