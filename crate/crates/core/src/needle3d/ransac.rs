//! Two-point RANSAC for a 3D line with a total-least-squares refit.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Needle3dError;
use crate::geometry::{point_line_distance, Vec3};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold: 1.0,
            min_inliers: 5,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> bool {
        self.iterations >= 1 && self.inlier_threshold > 0.0 && self.min_inliers >= 2
    }
}

/// Fitted axis. `p1`/`p2` are the extremal inlier projections onto the
/// line, ordered along `direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct Line3Fit {
    pub point: Vec3,
    pub direction: Vec3,
    pub inlier_count: usize,
    pub rms_residual: f64,
    pub p1: Vec3,
    pub p2: Vec3,
    pub inliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line3FitRecord {
    pub p1: [f64; 3],
    pub p2: [f64; 3],
    pub point: [f64; 3],
    pub direction: [f64; 3],
    pub inlier_count: usize,
    pub rms_residual: f64,
}

impl From<&Line3Fit> for Line3FitRecord {
    fn from(f: &Line3Fit) -> Self {
        Self {
            p1: f.p1.into(),
            p2: f.p2.into(),
            point: f.point.into(),
            direction: f.direction.into(),
            inlier_count: f.inlier_count,
            rms_residual: f.rms_residual,
        }
    }
}

impl Line3Fit {
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        point_line_distance(p, &self.point, &self.direction)
    }
}

#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    iteration: usize,
    count: usize,
    rms: f64,
}

fn better(a: &Hypothesis, b: &Hypothesis) -> bool {
    a.count > b.count
        || (a.count == b.count && (a.rms < b.rms || (a.rms == b.rms && a.iteration < b.iteration)))
}

fn consensus(cloud: &[Vec3], a: &Vec3, d: &Vec3, thr: f64) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut ss = 0.0;
    for (i, p) in cloud.iter().enumerate() {
        let r = point_line_distance(p, a, d);
        if r <= thr {
            idx.push(i);
            ss += r * r;
        }
    }
    let rms = if idx.is_empty() { f64::INFINITY } else { (ss / idx.len() as f64).sqrt() };
    (idx, rms)
}

fn sample_line(cloud: &[Vec3], seed: u64, iteration: usize) -> Option<(Vec3, Vec3)> {
    let mut rng = stream_rng(seed, iteration as u64);
    let i = rng.random_range(0..cloud.len());
    let mut j = rng.random_range(0..cloud.len() - 1);
    if j >= i {
        j += 1;
    }
    let d = cloud[j] - cloud[i];
    let n = d.norm();
    (n > 1e-12).then(|| (cloud[i], d / n))
}

/// Centroid and principal axis of the scatter matrix.
pub fn principal_axis(points: &[Vec3]) -> (Vec3, Vec3) {
    let n = points.len() as f64;
    let c = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut s = Matrix3::zeros();
    for p in points {
        let d = p - c;
        s += d * d.transpose();
    }
    let eig = SymmetricEigen::new(s);
    let k = eig.eigenvalues.imax();
    (c, eig.eigenvectors.column(k).into_owned().normalize())
}

pub fn ransac_line(cloud: &[Vec3], params: &RansacParams) -> Result<Line3Fit, Needle3dError> {
    if cloud.len() < 2 {
        return Err(Needle3dError::InsufficientPoints(cloud.len()));
    }
    let best = (0..params.iterations)
        .into_par_iter()
        .filter_map(|it| {
            let (a, d) = sample_line(cloud, params.seed, it)?;
            let (idx, rms) = consensus(cloud, &a, &d, params.inlier_threshold);
            Some(Hypothesis {
                iteration: it,
                count: idx.len(),
                rms,
            })
        })
        .reduce_with(|a, b| if better(&b, &a) { b } else { a });
    let best = match best {
        Some(h) if h.count >= params.min_inliers => h,
        Some(h) => return Err(Needle3dError::NoConsensus(h.count)),
        None => return Err(Needle3dError::NoConsensus(0)),
    };
    let (a, d) = sample_line(cloud, params.seed, best.iteration).expect("best hypothesis was sampled");
    let (inliers, _) = consensus(cloud, &a, &d, params.inlier_threshold);
    Ok(refit(cloud, inliers))
}

/// Total-least-squares line through the given subset.
pub fn refit(cloud: &[Vec3], inliers: Vec<usize>) -> Line3Fit {
    let pts: Vec<Vec3> = inliers.iter().map(|&i| cloud[i]).collect();
    let (c, mut dir) = principal_axis(&pts);
    // orient along input order so sweeps keep a stable sign
    if dir.dot(&(pts[pts.len() - 1] - pts[0])) < 0.0 {
        dir = -dir;
    }
    let (mut tmin, mut tmax) = (f64::MAX, f64::MIN);
    let mut ss = 0.0;
    for p in &pts {
        let t = (p - c).dot(&dir);
        tmin = tmin.min(t);
        tmax = tmax.max(t);
        ss += point_line_distance(p, &c, &dir).powi(2);
    }
    Line3Fit {
        point: c,
        direction: dir,
        inlier_count: pts.len(),
        rms_residual: (ss / pts.len() as f64).sqrt(),
        p1: c + dir * tmin,
        p2: c + dir * tmax,
        inliers,
    }
}
