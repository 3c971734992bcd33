//! Segmentation-failure model applied to clean masks: shaft gaps, spurious
//! blobs and per-pixel flips.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::image::BinaryMask;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationParams {
    /// Expected number of gaps carved into the shaft.
    pub gap_rate: f64,
    /// Gap length range along the shaft (px).
    pub gap_length: [f64; 2],
    /// Expected number of spurious components per frame.
    pub blob_rate: f64,
    /// Blob diameter range (px).
    pub blob_size: [f64; 2],
    /// Per-pixel flip probability.
    pub flip_noise: f64,
    pub rng_seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            gap_rate: 1.0,
            gap_length: [5.0, 25.0],
            blob_rate: 0.5,
            blob_size: [4.0, 14.0],
            flip_noise: 2e-5,
            rng_seed: 0,
        }
    }
}

impl DegradationParams {
    pub fn none() -> Self {
        Self {
            gap_rate: 0.0,
            blob_rate: 0.0,
            flip_noise: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> bool {
        let range_ok = |r: [f64; 2]| r[0] >= 0.0 && r[0] <= r[1];
        self.gap_rate >= 0.0
            && self.blob_rate >= 0.0
            && (0.0..=1.0).contains(&self.flip_noise)
            && range_ok(self.gap_length)
            && range_ok(self.blob_size)
    }
}

/// `floor(rate)` events plus one more with probability `frac(rate)`.
fn event_count<R: Rng>(rng: &mut R, rate: f64) -> usize {
    let base = rate.floor();
    base as usize + usize::from(rng.random_bool((rate - base).clamp(0.0, 1.0)))
}

fn sample_range<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// Degrades with the stream selected by `params.rng_seed`.
pub fn degrade_mask(mask: &BinaryMask, params: &DegradationParams) -> BinaryMask {
    degrade_mask_stream(mask, params, 0)
}

/// Degrades with an explicit sub-stream (e.g. the frame index).
pub fn degrade_mask_stream(mask: &BinaryMask, params: &DegradationParams, stream: u64) -> BinaryMask {
    let mut rng = stream_rng(params.rng_seed, stream);
    let mut out = mask.clone();
    carve_gaps(&mut out, params, &mut rng);
    add_blobs(&mut out, params, &mut rng);
    flip_pixels(&mut out, params, &mut rng);
    out
}

/// Zeroes bands perpendicular to the principal axis of the foreground.
/// Masks shorter than four gap lengths (e.g. transverse cross-sections) are
/// left intact.
fn carve_gaps<R: Rng>(mask: &mut BinaryMask, params: &DegradationParams, rng: &mut R) {
    let n_gaps = event_count(rng, params.gap_rate);
    if n_gaps == 0 {
        return;
    }
    let px = mask.pixels();
    if px.len() < 2 {
        return;
    }
    let n = px.len() as f64;
    let (mu, mv) = px.iter().fold((0.0, 0.0), |(a, b), &(u, v)| (a + u as f64, b + v as f64));
    let (mu, mv) = (mu / n, mv / n);
    let (mut suu, mut suv, mut svv) = (0.0, 0.0, 0.0);
    for &(u, v) in &px {
        let (du, dv) = (u as f64 - mu, v as f64 - mv);
        suu += du * du;
        suv += du * dv;
        svv += dv * dv;
    }
    let angle = 0.5 * (2.0 * suv).atan2(suu - svv);
    let (cu, cv) = (angle.cos(), angle.sin());
    let proj = |u: usize, v: usize| (u as f64 - mu) * cu + (v as f64 - mv) * cv;
    let (tmin, tmax) = px
        .iter()
        .map(|&(u, v)| proj(u, v))
        .fold((f64::MAX, f64::MIN), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let extent = tmax - tmin;
    for _ in 0..n_gaps {
        let g = sample_range(rng, params.gap_length);
        if extent < 4.0 * g || g <= 0.0 {
            continue;
        }
        let c = rng.random_range((tmin + 0.2 * extent)..=(tmax - 0.2 * extent));
        for &(u, v) in &px {
            let t = proj(u, v);
            if (t - c).abs() <= g / 2.0 {
                mask.set(u, v, false);
            }
        }
    }
}

fn add_blobs<R: Rng>(mask: &mut BinaryMask, params: &DegradationParams, rng: &mut R) {
    let n_blobs = event_count(rng, params.blob_rate);
    for _ in 0..n_blobs {
        let a = sample_range(rng, params.blob_size) / 2.0;
        let b = sample_range(rng, params.blob_size) / 2.0;
        let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let cu = rng.random_range(0.0..mask.width as f64);
        let cv = rng.random_range(0.0..mask.height as f64);
        let r = a.max(b).ceil() as i64 + 1;
        let (c, s) = (phi.cos(), phi.sin());
        for dv in -r..=r {
            for du in -r..=r {
                let (u, v) = (cu.round() as i64 + du, cv.round() as i64 + dv);
                if u < 0 || v < 0 || u >= mask.width as i64 || v >= mask.height as i64 {
                    continue;
                }
                let (x, y) = (u as f64 - cu, v as f64 - cv);
                let (xr, yr) = (x * c + y * s, -x * s + y * c);
                if (xr / a.max(0.5)).powi(2) + (yr / b.max(0.5)).powi(2) <= 1.0 {
                    mask.set(u as usize, v as usize, true);
                }
            }
        }
    }
}

fn flip_pixels<R: Rng>(mask: &mut BinaryMask, params: &DegradationParams, rng: &mut R) {
    if params.flip_noise <= 0.0 {
        return;
    }
    let n = mask.data.len() as u64;
    let count = Binomial::new(n, params.flip_noise)
        .expect("flip probability in [0, 1]")
        .sample(rng);
    for _ in 0..count {
        let i = rng.random_range(0..mask.data.len());
        mask.data[i] = !mask.data[i];
    }
}
