//! Needle determination from a binary mask: seed selection by rectangle area,
//! orientation-gated merging, total-least-squares line and tip.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::components::{
    extract_components_filtered, min_area_rect, orientation_diff, wrap_180, ComponentBox,
    RotatedRect,
};
use crate::geometry::ImagePoint;
use crate::image::BinaryMask;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("mask has no foreground components")]
    NoComponents,
    #[error("pixel set is degenerate (fewer than two distinct pixels)")]
    DegeneratePixelSet,
}

/// Side of the image the needle enters from; the tip is the endpoint
/// farthest from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InsertionSide {
    #[default]
    Left,
    Right,
    Top,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub theta_threshold_deg: f64,
    /// Minimum merged pixel count for a valid detection.
    pub min_area: usize,
    /// Components smaller than this are discarded before selection.
    pub min_component_area: usize,
    pub insertion_side: InsertionSide,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            theta_threshold_deg: 10.0,
            min_area: 50,
            min_component_area: 4,
            insertion_side: InsertionSide::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2 {
    pub point: ImagePoint,
    /// Unit direction, oriented from the entry-side endpoint towards the tip.
    pub dir: [f64; 2],
}

impl Line2 {
    pub fn angle_deg(&self) -> f64 {
        wrap_180(self.dir[1].atan2(self.dir[0]).to_degrees())
    }

    pub fn distance_to(&self, p: &ImagePoint) -> f64 {
        let (du, dv) = (p.u - self.point.u, p.v - self.point.v);
        (du * self.dir[1] - dv * self.dir[0]).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleDetection2D {
    pub line: Line2,
    /// Entry-side endpoint, tip-side endpoint.
    pub endpoints: [ImagePoint; 2],
    pub tip: ImagePoint,
    pub shaft_length: f64,
    pub valid: bool,
    /// Merged pixel count.
    pub area: usize,
}

impl NeedleDetection2D {
    pub fn invalid() -> Self {
        let o = ImagePoint::new(0.0, 0.0);
        Self {
            line: Line2 {
                point: o,
                dir: [1.0, 0.0],
            },
            endpoints: [o, o],
            tip: o,
            shaft_length: 0.0,
            valid: false,
            area: 0,
        }
    }

    pub fn midpoint(&self) -> ImagePoint {
        self.endpoints[0].midpoint(&self.endpoints[1])
    }
}

/// Merged needle pixel set and the rectangle it was last summarised by.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub pixels: Vec<(usize, usize)>,
    /// Indices into the component list that were merged, seed first.
    pub members: Vec<usize>,
    pub rect: RotatedRect,
}

pub fn select_needle(
    components: &[ComponentBox],
    theta_threshold_deg: f64,
) -> Result<Selection, DetectError> {
    let seed = components.first().ok_or(DetectError::NoComponents)?;
    let mut pixels = seed.pixels.clone();
    let mut hull_pts: Vec<(f64, f64)> = corner_points(&seed.contour);
    let mut rect = seed.rect;
    let mut members = vec![0];
    for (i, c) in components.iter().enumerate().skip(1) {
        let (du, dv) = (c.centroid.u - rect.center.u, c.centroid.v - rect.center.v);
        let slope = wrap_180(dv.atan2(du).to_degrees());
        if orientation_diff(slope, rect.angle_deg) > theta_threshold_deg {
            continue;
        }
        pixels.extend_from_slice(&c.pixels);
        hull_pts.extend(corner_points(&c.contour));
        rect = min_area_rect(&hull_pts);
        members.push(i);
    }
    Ok(Selection {
        pixels,
        members,
        rect,
    })
}

fn corner_points(px: &[(usize, usize)]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(px.len() * 4);
    for &(u, v) in px {
        let (u, v) = (u as f64, v as f64);
        out.extend_from_slice(&[
            (u - 0.5, v - 0.5),
            (u + 0.5, v - 0.5),
            (u - 0.5, v + 0.5),
            (u + 0.5, v + 0.5),
        ]);
    }
    out
}

pub fn fit_line_and_tip(
    pixels: &[(usize, usize)],
    side: InsertionSide,
) -> Result<NeedleDetection2D, DetectError> {
    let n = pixels.len() as f64;
    if pixels.len() < 2 {
        return Err(DetectError::DegeneratePixelSet);
    }
    let (su, sv) = pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), &(u, v)| (a + u as f64, b + v as f64));
    let (mu, mv) = (su / n, sv / n);
    let (mut suu, mut suv, mut svv) = (0.0, 0.0, 0.0);
    for &(u, v) in pixels {
        let (du, dv) = (u as f64 - mu, v as f64 - mv);
        suu += du * du;
        suv += du * dv;
        svv += dv * dv;
    }
    if suu + svv == 0.0 {
        return Err(DetectError::DegeneratePixelSet);
    }
    // principal eigenvector of the 2x2 scatter matrix
    let phi = 0.5 * (2.0 * suv).atan2(suu - svv);
    let mut dir = [phi.cos(), phi.sin()];
    let (mut tmin, mut tmax) = (f64::MAX, f64::MIN);
    for &(u, v) in pixels {
        let t = (u as f64 - mu) * dir[0] + (v as f64 - mv) * dir[1];
        tmin = tmin.min(t);
        tmax = tmax.max(t);
    }
    let at = |t: f64, d: [f64; 2]| ImagePoint::new(mu + t * d[0], mv + t * d[1]);
    let (mut a, mut b) = (at(tmin, dir), at(tmax, dir));
    let b_is_tip = match side {
        InsertionSide::Left => b.u > a.u || (b.u == a.u && b.v > a.v),
        InsertionSide::Right => b.u < a.u || (b.u == a.u && b.v > a.v),
        InsertionSide::Top => b.v > a.v || (b.v == a.v && b.u > a.u),
        InsertionSide::Bottom => b.v < a.v || (b.v == a.v && b.u > a.u),
    };
    if !b_is_tip {
        std::mem::swap(&mut a, &mut b);
        dir = [-dir[0], -dir[1]];
    }
    Ok(NeedleDetection2D {
        line: Line2 {
            point: ImagePoint::new(mu, mv),
            dir,
        },
        endpoints: [a, b],
        tip: b,
        shaft_length: a.dist(&b),
        valid: true,
        area: pixels.len(),
    })
}

/// Full determination; never fails, reporting `valid = false` instead.
pub fn detect(mask: &BinaryMask, config: &DetectConfig) -> NeedleDetection2D {
    let comps = extract_components_filtered(mask, config.min_component_area);
    let sel = match select_needle(&comps, config.theta_threshold_deg) {
        Ok(s) => s,
        Err(_) => return NeedleDetection2D::invalid(),
    };
    if sel.pixels.len() < config.min_area.max(2) {
        return NeedleDetection2D::invalid();
    }
    fit_line_and_tip(&sel.pixels, config.insertion_side).unwrap_or_else(|_| NeedleDetection2D::invalid())
}
