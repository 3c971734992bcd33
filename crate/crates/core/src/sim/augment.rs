//! Training-time augmentation: horizontal flip (30%), contrast ±10% (30%),
//! Gaussian noise (20%) and Gaussian blur (20%), applied in that order.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::{BinaryMask, GrayImage};
use crate::rng::stream_rng;

pub const P_FLIP: f64 = 0.3;
pub const P_CONTRAST: f64 = 0.3;
pub const P_NOISE: f64 = 0.2;
pub const P_BLUR: f64 = 0.2;
pub const CONTRAST_RANGE: f32 = 0.1;
pub const NOISE_SIGMA: f32 = 0.03;
pub const BLUR_SIGMA: f32 = 1.0;

/// Which augmentations fire for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub flip: bool,
    /// Relative contrast change in `[-0.1, 0.1]`.
    pub contrast: Option<f32>,
    /// Seed of the additive noise field.
    pub noise: Option<u64>,
    pub blur: bool,
}

impl AugmentPlan {
    pub fn sample(seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let flip = rng.random_bool(P_FLIP);
        let contrast = rng
            .random_bool(P_CONTRAST)
            .then(|| rng.random_range(-CONTRAST_RANGE..=CONTRAST_RANGE));
        let noise = rng.random_bool(P_NOISE).then(|| rng.random::<u64>());
        let blur = rng.random_bool(P_BLUR);
        Self {
            flip,
            contrast,
            noise,
            blur,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flip && self.contrast.is_none() && self.noise.is_none() && !self.blur
    }
}

pub fn augment(image: &GrayImage, label: &BinaryMask, seed: u64) -> (GrayImage, BinaryMask) {
    apply_plan(image, label, &AugmentPlan::sample(seed))
}

pub fn apply_plan(
    image: &GrayImage,
    label: &BinaryMask,
    plan: &AugmentPlan,
) -> (GrayImage, BinaryMask) {
    let (mut img, mut lab) = (image.clone(), label.clone());
    if plan.flip {
        img = img.flip_horizontal();
        lab = lab.flip_horizontal();
    }
    if let Some(c) = plan.contrast {
        img = adjust_contrast(&img, c);
    }
    if let Some(seed) = plan.noise {
        let mut rng = stream_rng(seed, 1);
        let normal = Normal::new(0.0f32, NOISE_SIGMA).expect("finite sigma");
        for x in img.data.iter_mut() {
            *x = (*x + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    if plan.blur {
        img = gaussian_blur(&img, BLUR_SIGMA);
    }
    (img, lab)
}

/// Scales deviations from the image mean by `1 + c`, clamped to `[0, 1]`.
pub fn adjust_contrast(img: &GrayImage, c: f32) -> GrayImage {
    let mean = img.data.iter().map(|&x| x as f64).sum::<f64>() / img.data.len().max(1) as f64;
    let mean = mean as f32;
    GrayImage {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|&x| (mean + (x - mean) * (1.0 + c)).clamp(0.0, 1.0))
            .collect(),
    }
}

/// Separable Gaussian blur with a ±3σ kernel and edge replication.
pub fn gaussian_blur(img: &GrayImage, sigma: f32) -> GrayImage {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
    let (w, h) = (img.width as i64, img.height as i64);
    let mut tmp = img.clone();
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let uu = (u + k as i64 - radius).clamp(0, w - 1);
                acc += kv * img.get(uu as usize, v as usize);
            }
            tmp.set(u as usize, v as usize, acc);
        }
    }
    let mut out = tmp.clone();
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let vv = (v + k as i64 - radius).clamp(0, h - 1);
                acc += kv * tmp.get(u as usize, vv as usize);
            }
            out.set(u as usize, v as usize, acc);
        }
    }
    out
}
