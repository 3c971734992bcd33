//! Needle/probe scene model and the slice-thickness renderer.
//!
//! The imaged slice is a slab `|y_p| <= w(z_p) / 2` around the X-Z plane of the
//! probe frame. The part of the needle axis inside the slab is projected along
//! `y_p` onto the image plane and drawn with the needle diameter, so an oblique
//! needle shows up as a short line instead of a single crossing point.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::geometry::{CalibrationMap, ImagePoint, RigidTransform, Vec3, DEPTH_MM, FOOTPRINT_MM};
use crate::image::{BinaryMask, GrayImage};
use crate::rng::stream_rng;

/// Outer diameter of an 18G needle (mm).
pub const NEEDLE_DIAMETER_MM: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleModel {
    /// Skin entry point, base frame (mm).
    pub entry_point: [f64; 3],
    /// Unit insertion direction, base frame.
    pub direction: [f64; 3],
    pub inserted_length: f64,
    #[serde(default = "default_diameter")]
    pub diameter: f64,
}

fn default_diameter() -> f64 {
    NEEDLE_DIAMETER_MM
}

impl NeedleModel {
    pub fn new(entry: Vec3, direction: Vec3, inserted_length: f64) -> Self {
        let d = direction.normalize();
        Self {
            entry_point: entry.into(),
            direction: d.into(),
            inserted_length,
            diameter: NEEDLE_DIAMETER_MM,
        }
    }

    pub fn entry(&self) -> Vec3 {
        Vec3::from(self.entry_point)
    }

    pub fn dir(&self) -> Vec3 {
        Vec3::from(self.direction)
    }

    pub fn tip(&self) -> Vec3 {
        self.entry() + self.dir() * self.inserted_length
    }

    pub fn validate(&self) -> bool {
        self.inserted_length >= 0.0
            && self.diameter > 0.0
            && (self.dir().norm() - 1.0).abs() < 1e-9
            && self.entry().iter().all(|c| c.is_finite())
    }

    pub fn with_length(&self, inserted_length: f64) -> Self {
        Self {
            inserted_length,
            ..*self
        }
    }
}

/// Elevation (slice) thickness as a function of depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElevationProfile {
    Constant {
        width_mm: f64,
    },
    /// Narrows linearly from `surface_mm` to `focus_mm` at `focus_depth_mm`,
    /// then widens again at the same rate.
    LinearFocus {
        surface_mm: f64,
        focus_mm: f64,
        focus_depth_mm: f64,
    },
}

impl ElevationProfile {
    pub fn width_at(&self, z: f64) -> f64 {
        match *self {
            ElevationProfile::Constant { width_mm } => width_mm,
            ElevationProfile::LinearFocus {
                surface_mm,
                focus_mm,
                focus_depth_mm,
            } => {
                let slope = (focus_mm - surface_mm) / focus_depth_mm;
                focus_mm - slope * (z - focus_depth_mm).abs()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeModel {
    pub footprint: f64,
    pub depth: f64,
    pub elevation: ElevationProfile,
}

impl Default for ProbeModel {
    fn default() -> Self {
        Self {
            footprint: FOOTPRINT_MM,
            depth: DEPTH_MM,
            elevation: ElevationProfile::Constant { width_mm: 2.0 },
        }
    }
}

impl ProbeModel {
    pub fn validate(&self) -> bool {
        self.footprint > 0.0
            && self.depth > 0.0
            && (0..=100).all(|i| self.elevation.width_at(self.depth * i as f64 / 100.0) > 0.0)
    }

    fn max_width(&self) -> f64 {
        (0..=100)
            .map(|i| self.elevation.width_at(self.depth * i as f64 / 100.0))
            .fold(0.0, f64::max)
    }
}

/// Portion of the needle axis that lies inside the slab and the image, projected
/// onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibleSegment {
    /// Axis parameter range (mm from the entry point).
    pub s_range: [f64; 2],
    /// Projection of the entry-side end, px.
    pub start_px: ImagePoint,
    /// Projection of the tip-side end, px.
    pub end_px: ImagePoint,
    /// Whether the physical needle tip is inside the slab.
    pub contains_tip: bool,
}

impl VisibleSegment {
    pub fn length_px(&self) -> f64 {
        self.start_px.dist(&self.end_px)
    }

    pub fn midpoint_px(&self) -> ImagePoint {
        self.start_px.midpoint(&self.end_px)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMask {
    pub mask: BinaryMask,
    pub segment: Option<VisibleSegment>,
    /// Set when no needle point falls in the imaged slab.
    pub empty_scene: bool,
}

/// Needle expressed in the probe frame, with the slab test.
struct ProbeSpaceNeedle {
    a: Vec3,
    d: Vec3,
    len: f64,
    r: f64,
}

impl ProbeSpaceNeedle {
    fn new(needle: &NeedleModel, probe_pose: &RigidTransform) -> Self {
        let inv = probe_pose.inverse();
        Self {
            a: inv.apply(&needle.entry()),
            d: inv.apply_vector(&needle.dir()),
            len: needle.inserted_length,
            r: needle.diameter / 2.0,
        }
    }

    fn axis(&self, s: f64) -> Vec3 {
        self.a + self.d * s
    }

    /// Axis parameter range whose points satisfy `inside`, found by dense
    /// sampling and bisection at both ends.
    fn feasible_range(&self, inside: impl Fn(&Vec3) -> bool) -> Option<([f64; 2], bool)> {
        if self.len <= 0.0 {
            return None;
        }
        let feasible = |s: f64| inside(&self.axis(s));
        let steps = ((self.len / 0.01).ceil() as usize).clamp(200, 200_000);
        let ds = self.len / steps as f64;
        let mut first: Option<usize> = None;
        let mut last: Option<usize> = None;
        for i in 0..=steps {
            if feasible(i as f64 * ds) {
                first.get_or_insert(i);
                last = Some(i);
            }
        }
        let (first, last) = (first?, last?);
        let refine = |mut inside: f64, mut outside: f64| {
            for _ in 0..60 {
                let mid = 0.5 * (inside + outside);
                if feasible(mid) {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            inside
        };
        let s0 = if first == 0 {
            0.0
        } else {
            refine(first as f64 * ds, (first - 1) as f64 * ds)
        };
        let s1 = if last == steps {
            self.len
        } else {
            refine(last as f64 * ds, (last + 1) as f64 * ds)
        };
        Some(([s0, s1], last == steps))
    }

    /// Whether the image-plane point `p0` (`y = 0`) lies within the needle
    /// radius of the projected axis piece `[s0, s1]`. Physical needle ends
    /// are flat; slab boundaries are not.
    fn covers(&self, p0: &Vec3, s0: f64, s1: f64) -> bool {
        let (px, pz) = (p0.x, p0.z);
        let d2 = self.d.x * self.d.x + self.d.z * self.d.z;
        if d2 > 1e-12 {
            let along = ((px - self.a.x) * self.d.x + (pz - self.a.z) * self.d.z) / d2;
            if along < 0.0 || along > self.len {
                return false;
            }
        }
        let (ax, az) = (self.a.x + self.d.x * s0, self.a.z + self.d.z * s0);
        let (bx, bz) = (self.a.x + self.d.x * s1, self.a.z + self.d.z * s1);
        let (vx, vz) = (bx - ax, bz - az);
        let l2 = vx * vx + vz * vz;
        let t = if l2 > 0.0 {
            (((px - ax) * vx + (pz - az) * vz) / l2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (cx, cz) = (ax + t * vx, az + t * vz);
        (px - cx).powi(2) + (pz - cz).powi(2) <= self.r * self.r
    }
}

/// Axis segment inside the slab and the image bounds.
pub fn visible_segment(
    needle: &NeedleModel,
    probe_pose: &RigidTransform,
    probe: &ProbeModel,
    cal: &CalibrationMap,
) -> Option<VisibleSegment> {
    let n = ProbeSpaceNeedle::new(needle, probe_pose);
    let ([s0, s1], contains_tip) = n.feasible_range(|q| {
        q.y.abs() <= probe.elevation.width_at(q.z) / 2.0 && cal.contains(&cal.probe_to_pixel(q))
    })?;
    let project = |s: f64| {
        let mut q = n.axis(s);
        q.y = 0.0;
        cal.probe_to_pixel(&q)
    };
    Some(VisibleSegment {
        s_range: [s0, s1],
        start_px: project(s0),
        end_px: project(s1),
        contains_tip,
    })
}

/// Binary rendering of the needle as seen through the thick slice.
pub fn render_mask(
    needle: &NeedleModel,
    probe_pose: &RigidTransform,
    probe: &ProbeModel,
    cal: &CalibrationMap,
) -> RenderedMask {
    let mut mask = BinaryMask::new(cal.width, cal.height);
    let n = ProbeSpaceNeedle::new(needle, probe_pose);
    let segment = visible_segment(needle, probe_pose, probe, cal);
    let slab = n.feasible_range(|q| q.y.abs() <= probe.elevation.width_at(q.z) / 2.0);
    if let (Some(([s0, s1], _)), Some((u0, u1, v0, v1))) = (slab, pixel_bbox(&n, probe, cal)) {
        for v in v0..=v1 {
            for u in u0..=u1 {
                let p0 = cal.pixel_to_probe_unchecked(&ImagePoint::new(u as f64, v as f64));
                if n.covers(&p0, s0, s1) {
                    mask.set(u, v, true);
                }
            }
        }
    }
    let empty_scene = mask.is_empty();
    RenderedMask {
        mask,
        segment,
        empty_scene,
    }
}

/// Conservative pixel window holding every cylinder point inside the slab.
fn pixel_bbox(
    n: &ProbeSpaceNeedle,
    probe: &ProbeModel,
    cal: &CalibrationMap,
) -> Option<(usize, usize, usize, usize)> {
    let reach = probe.max_width() / 2.0 + n.r;
    let (s0, s1) = if n.d.y.abs() > 1e-12 {
        let (a, b) = ((-reach - n.a.y) / n.d.y, (reach - n.a.y) / n.d.y);
        (a.min(b).max(0.0), a.max(b).min(n.len))
    } else if n.a.y.abs() <= reach {
        (0.0, n.len)
    } else {
        return None;
    };
    if s0 > s1 {
        return None;
    }
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for s in [s0, s1] {
        let q = n.axis(s);
        for (dx, dz) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
            let px = cal.probe_to_pixel(&Vec3::new(q.x + dx * n.r, 0.0, q.z + dz * n.r));
            umin = umin.min(px.u);
            umax = umax.max(px.u);
            vmin = vmin.min(px.v);
            vmax = vmax.max(px.v);
        }
    }
    let clamp_lo = |x: f64| (x.floor() - 1.0).max(0.0) as usize;
    let (w, h) = (cal.width as f64 - 1.0, cal.height as f64 - 1.0);
    if umax < 0.0 || vmax < 0.0 || umin > w || vmin > h {
        return None;
    }
    Some((
        clamp_lo(umin),
        (umax.ceil() + 1.0).min(w) as usize,
        clamp_lo(vmin),
        (vmax.ceil() + 1.0).min(h) as usize,
    ))
}

/// Appearance parameters for B-mode-like intensity images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntensityParams {
    pub background: f32,
    pub shaft_level: f32,
    /// Multiplicative speckle strength; 0 disables noise.
    pub speckle: f32,
    /// Number of bright tissue-boundary curves.
    pub distractors: usize,
    pub distractor_level: f32,
    pub distractor_length_mm: [f64; 2],
    pub distractor_thickness_mm: [f64; 2],
    /// Minimum angular separation between a distractor and the needle (deg).
    pub min_angle_from_needle_deg: f64,
}

impl Default for IntensityParams {
    fn default() -> Self {
        Self {
            background: 0.25,
            shaft_level: 0.9,
            speckle: 0.4,
            distractors: 0,
            distractor_level: 0.85,
            distractor_length_mm: [5.0, 15.0],
            distractor_thickness_mm: [0.4, 0.9],
            min_angle_from_needle_deg: 20.0,
        }
    }
}

/// Gray-level rendering: speckled background, bright shaft and optional
/// bright boundary-like curves.
pub fn render_intensity(
    needle: &NeedleModel,
    probe_pose: &RigidTransform,
    probe: &ProbeModel,
    cal: &CalibrationMap,
    params: &IntensityParams,
    noise_seed: u64,
) -> GrayImage {
    let rendered = render_mask(needle, probe_pose, probe, cal);
    let needle_angle = rendered
        .segment
        .map(|s| (s.end_px.v - s.start_px.v).atan2(s.end_px.u - s.start_px.u));
    let mut rng = stream_rng(noise_seed, 0);
    let mut img = GrayImage::new(cal.width, cal.height, params.background);
    for k in 0..params.distractors {
        let curve = Distractor::sample(&mut rng, cal, params, needle_angle, k);
        curve.draw(&mut img, cal, params.distractor_level);
    }
    for (i, on) in rendered.mask.data.iter().enumerate() {
        if *on {
            img.data[i] = params.shaft_level;
        }
    }
    if params.speckle > 0.0 {
        // unit-mean gamma speckle
        let shape = 1.0 / (params.speckle as f64).powi(2);
        let gamma = Gamma::new(shape, 1.0 / shape).expect("positive gamma shape");
        for x in img.data.iter_mut() {
            let g: f64 = gamma.sample(&mut rng);
            *x = (*x * g as f32).clamp(0.0, 1.0);
        }
    }
    img
}

/// Quadratic Bézier curve drawn as a thick stroke.
struct Distractor {
    p: [(f64, f64); 3],
    half_thickness_px: f64,
}

impl Distractor {
    fn sample<R: Rng>(
        rng: &mut R,
        cal: &CalibrationMap,
        params: &IntensityParams,
        needle_angle: Option<f64>,
        _k: usize,
    ) -> Self {
        let base = needle_angle.unwrap_or(0.0);
        let sep = params.min_angle_from_needle_deg.to_radians();
        let offset = rng.random_range(sep..=std::f64::consts::FRAC_PI_2);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let theta = base + sign * offset;
        let len_mm = rng.random_range(params.distractor_length_mm[0]..=params.distractor_length_mm[1]);
        let thick_mm =
            rng.random_range(params.distractor_thickness_mm[0]..=params.distractor_thickness_mm[1]);
        let len_px = len_mm / cal.pixel_spacing_u;
        let cu = rng.random_range(0.1..0.9) * cal.width as f64;
        let cv = rng.random_range(0.1..0.9) * cal.height as f64;
        let (du, dv) = (theta.cos() * len_px / 2.0, theta.sin() * len_px / 2.0);
        // low curvature: control point offset by at most 10% of the length
        let bend = rng.random_range(-0.1..0.1) * len_px;
        let ctrl = (cu - theta.sin() * bend, cv + theta.cos() * bend);
        Self {
            p: [(cu - du, cv - dv), ctrl, (cu + du, cv + dv)],
            half_thickness_px: thick_mm / cal.pixel_spacing_u / 2.0,
        }
    }

    fn point(&self, t: f64) -> (f64, f64) {
        let [a, b, c] = self.p;
        let s = 1.0 - t;
        (
            s * s * a.0 + 2.0 * s * t * b.0 + t * t * c.0,
            s * s * a.1 + 2.0 * s * t * b.1 + t * t * c.1,
        )
    }

    fn draw(&self, img: &mut GrayImage, _cal: &CalibrationMap, level: f32) {
        let r = self.half_thickness_px.max(0.5);
        let n = 400;
        for i in 0..=n {
            let (cu, cv) = self.point(i as f64 / n as f64);
            let (u0, u1) = ((cu - r).floor() as i64, (cu + r).ceil() as i64);
            let (v0, v1) = ((cv - r).floor() as i64, (cv + r).ceil() as i64);
            for v in v0..=v1 {
                for u in u0..=u1 {
                    if u < 0 || v < 0 || u >= img.width as i64 || v >= img.height as i64 {
                        continue;
                    }
                    if ((u as f64 - cu).powi(2) + (v as f64 - cv).powi(2)).sqrt() <= r {
                        img.set(u as usize, v as usize, level);
                    }
                }
            }
        }
    }
}

/// Probe pose looking straight down (`z_p = -z_b`) with the footprint along
/// the horizontal direction `azimuth_rad`, origin at `origin`.
pub fn downward_probe_pose(origin: Vec3, azimuth_rad: f64) -> RigidTransform {
    RigidTransform::from_axes(
        origin,
        Vec3::new(azimuth_rad.cos(), azimuth_rad.sin(), 0.0),
        -Vec3::z(),
    )
}

/// Needle lying in the image plane of `probe_pose`, entering `entry_x_mm` along
/// the probe x axis at the skin and descending at `pitch_deg`.
pub fn in_plane_needle(
    probe_pose: &RigidTransform,
    entry_x_mm: f64,
    pitch_deg: f64,
    inserted_length: f64,
) -> NeedleModel {
    let pitch = pitch_deg.to_radians();
    let entry_p = Vec3::new(entry_x_mm, 0.0, 0.0);
    let dir_p = Vec3::new(pitch.cos(), 0.0, pitch.sin());
    NeedleModel::new(
        probe_pose.apply(&entry_p),
        probe_pose.apply_vector(&dir_p),
        inserted_length,
    )
}
