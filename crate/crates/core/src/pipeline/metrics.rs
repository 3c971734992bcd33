//! Image-wise (recall, precision, IoU, continuity) and application-wise
//! (tip, angle, centre) metrics, plus windowed SSIM.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::components::{min_area_rect, orientation_diff, wrap_180};
use super::detect::NeedleDetection2D;
use crate::geometry::{CalibrationMap, ImagePoint};
use crate::image::{BinaryMask, GrayImage};

pub const T_CON: f64 = 0.7;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground-truth mask is empty")]
    EmptyGroundTruth,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("detection is not valid")]
    InvalidDetection,
    #[error("bad ssim parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub recall: f64,
    pub precision: f64,
    pub iou: f64,
    pub continuity: f64,
}

pub fn seg_metrics(pred: &BinaryMask, gt: &BinaryMask, t_con: f64) -> Result<SegMetrics, MetricsError> {
    if !pred.same_shape(gt) {
        return Err(MetricsError::DimensionMismatch(pred.width, pred.height, gt.width, gt.height));
    }
    let n_gt = gt.count();
    if n_gt == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let n_pred = pred.count();
    let tp = pred.data.iter().zip(&gt.data).filter(|(a, b)| **a && **b).count();
    let union = n_pred + n_gt - tp;
    Ok(SegMetrics {
        recall: tp as f64 / n_gt as f64,
        precision: if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 },
        iou: tp as f64 / union as f64,
        continuity: continuity(pred, gt, t_con),
    })
}

/// Fraction of ROI scan lines (parallel to the short axis of the gt
/// rectangle) whose predicted coverage reaches `t_con`. The ROI is fitted to
/// pixel centres and sampled at unit spacing. Lines the gt itself does not
/// cover to `t_con` (raster staircase at the ends of oblique shafts) are
/// not counted.
pub fn continuity(pred: &BinaryMask, gt: &BinaryMask, t_con: f64) -> f64 {
    let centres: Vec<(f64, f64)> = gt.pixels().iter().map(|&(u, v)| (u as f64, v as f64)).collect();
    let rect = min_area_rect(&centres);
    let n_long = rect.long.round() as usize + 1;
    let n_short = rect.short.round() as usize + 1;
    let (lu, lv) = rect.long_axis();
    let (su, sv) = rect.short_axis();
    let at = |len: f64, n: usize, k: usize| {
        if n == 1 {
            0.0
        } else {
            -len / 2.0 + k as f64 * len / (n - 1) as f64
        }
    };
    let (mut lines, mut marked) = (0usize, 0usize);
    for i in 0..n_long {
        let a = at(rect.long, n_long, i);
        let (mut hits_pred, mut hits_gt) = (0usize, 0usize);
        for j in 0..n_short {
            let b = at(rect.short, n_short, j);
            let u = (rect.center.u + a * lu + b * su).round() as i64;
            let v = (rect.center.v + a * lv + b * sv).round() as i64;
            hits_pred += pred.get_i(u, v) as usize;
            hits_gt += gt.get_i(u, v) as usize;
        }
        if (hits_gt as f64) < t_con * n_short as f64 {
            continue;
        }
        lines += 1;
        if hits_pred as f64 >= t_con * n_short as f64 {
            marked += 1;
        }
    }
    if lines == 0 {
        return 0.0;
    }
    marked as f64 / lines as f64
}

/// Annotated shaft: visible endpoints, tip last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShaftAnnotation {
    pub entry: ImagePoint,
    pub tip: ImagePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionErrors {
    pub tip_error: f64,
    pub angle_error: f64,
    pub center_error: f64,
}

/// Errors in millimetres and degrees. Directions are scaled by the pixel
/// spacing first so anisotropic pixels do not bias the angle.
pub fn detection_errors(
    det: &NeedleDetection2D,
    gt: &ShaftAnnotation,
    cal: &CalibrationMap,
) -> Result<DetectionErrors, MetricsError> {
    if !det.valid {
        return Err(MetricsError::InvalidDetection);
    }
    let (sx, sy) = (cal.pixel_spacing_u, cal.pixel_spacing_v);
    let mm = |p: &ImagePoint| (p.u * sx, p.v * sy);
    let (tu, tv) = mm(&det.tip);
    let (gu, gv) = mm(&gt.tip);
    let tip_error = ((tu - gu).powi(2) + (tv - gv).powi(2)).sqrt();

    let pred_dir = (det.line.dir[0] * sx, det.line.dir[1] * sy);
    let gt_dir = ((gt.tip.u - gt.entry.u) * sx, (gt.tip.v - gt.entry.v) * sy);
    let ang = |d: (f64, f64)| wrap_180(d.1.atan2(d.0).to_degrees());
    let angle_error = orientation_diff(ang(pred_dir), ang(gt_dir));

    let c = mm(&cal.center());
    let dist = |p: (f64, f64), d: (f64, f64)| {
        let n = (d.0 * d.0 + d.1 * d.1).sqrt();
        if n == 0.0 {
            ((c.0 - p.0).powi(2) + (c.1 - p.1).powi(2)).sqrt()
        } else {
            ((c.0 - p.0) * d.1 - (c.1 - p.1) * d.0).abs() / n
        }
    };
    let center_error = (dist(mm(&det.line.point), pred_dir) - dist(mm(&gt.entry), gt_dir)).abs();
    Ok(DetectionErrors {
        tip_error,
        angle_error,
        center_error,
    })
}

/// Pixel rectangle `[u0, u0 + width) x [v0, v0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub u0: usize,
    pub v0: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
    pub roi: Option<Roi>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            roi: None,
        }
    }
}

/// Mean SSIM over all uniform `window x window` windows inside the ROI.
pub fn ssim(a: &GrayImage, b: &GrayImage, params: &SsimParams) -> Result<f64, MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    let roi = params.roi.unwrap_or(Roi {
        u0: 0,
        v0: 0,
        width: a.width,
        height: a.height,
    });
    let w = params.window;
    if w == 0 || roi.width < w || roi.height < w || roi.u0 + roi.width > a.width || roi.v0 + roi.height > a.height {
        return Err(MetricsError::BadParams(format!("window {w} does not fit roi {roi:?}")));
    }
    let c1 = (params.k1 * params.data_range).powi(2);
    let c2 = (params.k2 * params.data_range).powi(2);
    let (rw, rh) = (roi.width, roi.height);
    let sample = |img: &GrayImage, u: usize, v: usize| img.get(roi.u0 + u, roi.v0 + v) as f64;
    let integral = |f: &dyn Fn(usize, usize) -> f64| {
        let mut s = vec![0.0; (rw + 1) * (rh + 1)];
        for v in 0..rh {
            let mut row = 0.0;
            for u in 0..rw {
                row += f(u, v);
                s[(v + 1) * (rw + 1) + u + 1] = s[v * (rw + 1) + u + 1] + row;
            }
        }
        s
    };
    let ia = integral(&|u, v| sample(a, u, v));
    let ib = integral(&|u, v| sample(b, u, v));
    let iaa = integral(&|u, v| sample(a, u, v).powi(2));
    let ibb = integral(&|u, v| sample(b, u, v).powi(2));
    let iab = integral(&|u, v| sample(a, u, v) * sample(b, u, v));
    let boxsum = |s: &[f64], u: usize, v: usize| {
        let r = rw + 1;
        s[(v + w) * r + u + w] - s[v * r + u + w] - s[(v + w) * r + u] + s[v * r + u]
    };
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for v in 0..=rh - w {
        for u in 0..=rw - w {
            let ma = boxsum(&ia, u, v) / n;
            let mb = boxsum(&ib, u, v) / n;
            let va = (boxsum(&iaa, u, v) / n - ma * ma).max(0.0);
            let vb = (boxsum(&ibb, u, v) / n - mb * mb).max(0.0);
            let cov = boxsum(&iab, u, v) / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
