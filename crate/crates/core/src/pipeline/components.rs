//! 8-connected component labelling, per-component closing and minimum-area
//! rotated rectangles.

use serde::{Deserialize, Serialize};

use crate::geometry::ImagePoint;
use crate::image::BinaryMask;

/// Rotated rectangle; `angle_deg` is the long-side orientation in image
/// coordinates (`atan2(dv, du)`, v pointing down), in `[0, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: ImagePoint,
    pub long: f64,
    pub short: f64,
    pub angle_deg: f64,
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        self.long * self.short
    }

    pub fn long_axis(&self) -> (f64, f64) {
        let a = self.angle_deg.to_radians();
        (a.cos(), a.sin())
    }

    pub fn short_axis(&self) -> (f64, f64) {
        let (c, s) = self.long_axis();
        (-s, c)
    }

    pub fn contains(&self, p: &ImagePoint, tol: f64) -> bool {
        let (du, dv) = (p.u - self.center.u, p.v - self.center.v);
        let (lc, ls) = self.long_axis();
        let (sc, ss) = self.short_axis();
        (du * lc + dv * ls).abs() <= self.long / 2.0 + tol
            && (du * sc + dv * ss).abs() <= self.short / 2.0 + tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentBox {
    pub pixels: Vec<(usize, usize)>,
    /// Boundary pixels of the closed component.
    pub contour: Vec<(usize, usize)>,
    pub rect: RotatedRect,
    /// Rectangle centre.
    pub centroid: ImagePoint,
    /// Rectangle area (px²).
    pub area: f64,
}

/// Labels 8-connected components, closes each with a 3x3 structuring element
/// and fits its minimum-area rectangle. Output is sorted by rectangle area
/// (descending), ties broken by shallower centroid, then label order.
pub fn extract_components(mask: &BinaryMask) -> Vec<ComponentBox> {
    extract_components_filtered(mask, 1)
}

/// As [`extract_components`], dropping components with fewer than
/// `min_pixels` pixels.
pub fn extract_components_filtered(mask: &BinaryMask, min_pixels: usize) -> Vec<ComponentBox> {
    let mut boxes: Vec<ComponentBox> = label(mask)
        .into_iter()
        .filter(|px| px.len() >= min_pixels.max(1))
        .map(component_box)
        .collect();
    boxes.sort_by(|a, b| {
        b.area
            .partial_cmp(&a.area)
            .unwrap()
            .then(a.centroid.v.partial_cmp(&b.centroid.v).unwrap())
    });
    boxes
}

/// Flood-fill labelling in raster order.
pub fn label(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut px = Vec::new();
        while let Some(i) = stack.pop() {
            let (u, v) = (i % w, i / w);
            px.push((u, v));
            for dv in -1i64..=1 {
                for du in -1i64..=1 {
                    let (nu, nv) = (u as i64 + du, v as i64 + dv);
                    if nu < 0 || nv < 0 || nu >= w as i64 || nv >= h as i64 {
                        continue;
                    }
                    let j = nv as usize * w + nu as usize;
                    if mask.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        px.sort_by_key(|&(u, v)| (v, u));
        comps.push(px);
    }
    comps
}

fn component_box(pixels: Vec<(usize, usize)>) -> ComponentBox {
    let contour = closed_contour(&pixels);
    let rect = min_area_rect_of_pixels(&contour);
    ComponentBox {
        centroid: rect.center,
        area: rect.area(),
        pixels,
        contour,
        rect,
    }
}

/// Boundary of the 3x3 morphological closing of a pixel set.
fn closed_contour(pixels: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let umin = pixels.iter().map(|p| p.0).min().unwrap();
    let umax = pixels.iter().map(|p| p.0).max().unwrap();
    let vmin = pixels.iter().map(|p| p.1).min().unwrap();
    let vmax = pixels.iter().map(|p| p.1).max().unwrap();
    // local raster with a 2 px border so dilation never clips
    let (ou, ov) = (umin as i64 - 2, vmin as i64 - 2);
    let (w, h) = (umax - umin + 5, vmax - vmin + 5);
    let local = BinaryMask::from_pixels(
        w,
        h,
        &pixels
            .iter()
            .map(|&(u, v)| ((u as i64 - ou) as usize, (v as i64 - ov) as usize))
            .collect::<Vec<_>>(),
    );
    let dilated = local.dilate();
    // erosion = complement of dilated complement
    let closed = BinaryMask::from_fn(w, h, |u, v| {
        let (u, v) = (u as i64, v as i64);
        (-1..=1).all(|dv| (-1..=1).all(|du| dilated.get_i(u + du, v + dv)))
    });
    let mut contour = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if !closed.get(u, v) {
                continue;
            }
            let (ui, vi) = (u as i64, v as i64);
            let edge = !closed.get_i(ui - 1, vi)
                || !closed.get_i(ui + 1, vi)
                || !closed.get_i(ui, vi - 1)
                || !closed.get_i(ui, vi + 1);
            if edge {
                let gu = ui + ou;
                let gv = vi + ov;
                if gu >= 0 && gv >= 0 {
                    contour.push((gu as usize, gv as usize));
                }
            }
        }
    }
    contour
}

/// Minimum-area rectangle enclosing the unit squares of the given pixels.
pub fn min_area_rect_of_pixels(pixels: &[(usize, usize)]) -> RotatedRect {
    let mut pts = Vec::with_capacity(pixels.len() * 4);
    for &(u, v) in pixels {
        let (u, v) = (u as f64, v as f64);
        pts.extend_from_slice(&[
            (u - 0.5, v - 0.5),
            (u + 0.5, v - 0.5),
            (u - 0.5, v + 0.5),
            (u + 0.5, v + 0.5),
        ]);
    }
    min_area_rect(&pts)
}

/// Rotating-calipers minimum-area rectangle of a point set.
pub fn min_area_rect(points: &[(f64, f64)]) -> RotatedRect {
    let hull = convex_hull(points);
    if hull.len() == 1 {
        return RotatedRect {
            center: ImagePoint::new(hull[0].0, hull[0].1),
            long: 0.0,
            short: 0.0,
            angle_deg: 0.0,
        };
    }
    let mut best: Option<(f64, RotatedRect)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let len = (ex * ex + ey * ey).sqrt();
        if len < 1e-12 {
            continue;
        }
        let (cx, cy) = (ex / len, ey / len);
        let (nx, ny) = (-cy, cx);
        let (mut s0, mut s1, mut t0, mut t1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let s = p.0 * cx + p.1 * cy;
            let t = p.0 * nx + p.1 * ny;
            s0 = s0.min(s);
            s1 = s1.max(s);
            t0 = t0.min(t);
            t1 = t1.max(t);
        }
        let area = (s1 - s0) * (t1 - t0);
        if best.as_ref().is_some_and(|(a, _)| area >= *a - 1e-9) {
            continue;
        }
        let (sm, tm) = ((s0 + s1) / 2.0, (t0 + t1) / 2.0);
        let center = ImagePoint::new(sm * cx + tm * nx, sm * cy + tm * ny);
        let (ds, dt) = (s1 - s0, t1 - t0);
        let (long, short, angle) = if ds >= dt {
            (ds, dt, cy.atan2(cx))
        } else {
            (dt, ds, ny.atan2(nx))
        };
        best = Some((
            area,
            RotatedRect {
                center,
                long,
                short,
                angle_deg: wrap_180(angle.to_degrees()),
            },
        ));
    }
    best.map(|(_, r)| r).unwrap_or(RotatedRect {
        center: ImagePoint::new(hull[0].0, hull[0].1),
        long: 0.0,
        short: 0.0,
        angle_deg: 0.0,
    })
}

/// Angle folded into `[0, 180)`.
pub fn wrap_180(deg: f64) -> f64 {
    let w = deg.rem_euclid(180.0);
    if (w - 180.0).abs() < 1e-9 {
        0.0
    } else {
        w
    }
}

/// Smallest angle between two undirected orientations, in `[0, 90]`.
pub fn orientation_diff(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Andrew's monotone chain; counter-clockwise, no repeated end point.
fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}
