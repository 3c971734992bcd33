//! Toy generator and discriminator: per-pixel logistic segmenter over a few
//! hand-made features, and a logistic critic over a coarse pooled mask.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ProbMask;
use crate::image::GrayImage;
use crate::rng::stream_rng;

/// Intensity, two oriented line responses, local mean.
pub const N_FEATURES: usize = 4;
pub const LINE_ANGLES_DEG: [f64; 2] = [15.0, 35.0];
const LINE_HALF_LEN: i64 = 4;
const MEAN_RADIUS: i64 = 3;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-pixel feature vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; N_FEATURES]>,
}

impl FeatureMap {
    pub fn compute(img: &GrayImage) -> Self {
        let (w, h) = (img.width as i64, img.height as i64);
        let at = |u: i64, v: i64| img.get(u.clamp(0, w - 1) as usize, v.clamp(0, h - 1) as usize) as f64;
        let mut local = vec![0.0; img.width * img.height];
        for v in 0..h {
            for u in 0..w {
                let mut s = 0.0;
                for dv in -MEAN_RADIUS..=MEAN_RADIUS {
                    for du in -MEAN_RADIUS..=MEAN_RADIUS {
                        s += at(u + du, v + dv);
                    }
                }
                local[(v * w + u) as usize] = s / ((2 * MEAN_RADIUS + 1) as f64).powi(2);
            }
        }
        let dirs = LINE_ANGLES_DEG.map(|a| (a.to_radians().cos(), a.to_radians().sin()));
        let mut data = Vec::with_capacity(img.width * img.height);
        for v in 0..h {
            for u in 0..w {
                let m = local[(v * w + u) as usize];
                let line = |(c, s): (f64, f64)| {
                    let mut acc = 0.0;
                    for k in -LINE_HALF_LEN..=LINE_HALF_LEN {
                        let t = k as f64;
                        acc += at(u + (t * c).round() as i64, v + (t * s).round() as i64);
                    }
                    acc / (2 * LINE_HALF_LEN + 1) as f64 - m
                };
                data.push([at(u, v), line(dirs[0]), line(dirs[1]), m]);
            }
        }
        Self {
            width: img.width,
            height: img.height,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSegmenter {
    /// Feature weights followed by the bias.
    pub weights: Vec<f64>,
    /// Features are standardised as `(f - mean) / scale` before weighting.
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

impl LinearSegmenter {
    pub fn zeros() -> Self {
        Self {
            weights: vec![0.0; N_FEATURES + 1],
            feature_mean: vec![0.0; N_FEATURES],
            feature_scale: vec![1.0; N_FEATURES],
        }
    }

    pub fn random(seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let n = Normal::new(0.0, 0.1).unwrap();
        Self {
            weights: (0..=N_FEATURES).map(|_| n.sample(&mut rng)).collect(),
            ..Self::zeros()
        }
    }

    /// Set the standardisation from the pooled statistics of `maps`.
    pub fn fit_normalization<'a>(&mut self, maps: impl IntoIterator<Item = &'a FeatureMap>) {
        let (mut n, mut s, mut ss) = (0.0, [0.0; N_FEATURES], [0.0; N_FEATURES]);
        for fm in maps {
            for f in &fm.data {
                n += 1.0;
                for k in 0..N_FEATURES {
                    s[k] += f[k];
                    ss[k] += f[k] * f[k];
                }
            }
        }
        if n == 0.0 {
            return;
        }
        for k in 0..N_FEATURES {
            let m = s[k] / n;
            let var = (ss[k] / n - m * m).max(0.0);
            self.feature_mean[k] = m;
            self.feature_scale[k] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
    }

    fn normalized(&self, f: &[f64; N_FEATURES], k: usize) -> f64 {
        (f[k] - self.feature_mean[k]) / self.feature_scale[k]
    }

    fn logit(&self, f: &[f64; N_FEATURES]) -> f64 {
        (0..N_FEATURES).map(|k| self.weights[k] * self.normalized(f, k)).sum::<f64>() + self.weights[N_FEATURES]
    }

    pub fn forward(&self, fm: &FeatureMap) -> ProbMask {
        ProbMask {
            width: fm.width,
            height: fm.height,
            data: fm.data.iter().map(|f| sigmoid(self.logit(f))).collect(),
        }
    }

    /// Weight gradient given the loss gradient with respect to the output.
    pub fn backward(&self, fm: &FeatureMap, out: &ProbMask, dl_dp: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; N_FEATURES + 1];
        for ((f, p), d) in fm.data.iter().zip(&out.data).zip(dl_dp) {
            let dz = d * p * (1.0 - p);
            for k in 0..N_FEATURES {
                g[k] += dz * self.normalized(f, k);
            }
            g[N_FEATURES] += dz;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDiscriminator {
    /// Pooling grid is `grid x grid` cells.
    pub grid: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ToyDiscriminator {
    pub fn random(grid: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 1);
        let n = Normal::new(0.0, 0.1).unwrap();
        Self {
            grid,
            weights: (0..grid * grid).map(|_| n.sample(&mut rng)).collect(),
            bias: 0.0,
        }
    }

    fn cell(&self, i: usize, n: usize) -> usize {
        i * self.grid / n
    }

    fn counts(&self, width: usize, height: usize) -> Vec<usize> {
        let mut c = vec![0; self.grid * self.grid];
        for v in 0..height {
            for u in 0..width {
                c[self.cell(v, height) * self.grid + self.cell(u, width)] += 1;
            }
        }
        c
    }

    pub fn features(&self, x: &ProbMask) -> Vec<f64> {
        let mut f = vec![0.0; self.grid * self.grid];
        for v in 0..x.height {
            for u in 0..x.width {
                f[self.cell(v, x.height) * self.grid + self.cell(u, x.width)] += x.data[v * x.width + u];
            }
        }
        for (a, n) in f.iter_mut().zip(self.counts(x.width, x.height)) {
            *a /= n.max(1) as f64;
        }
        f
    }

    pub fn logit(&self, x: &ProbMask) -> f64 {
        self.features(x).iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    pub fn forward(&self, x: &ProbMask) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Gradient with respect to the input mask given `dL/dlogit`.
    pub fn input_grad(&self, width: usize, height: usize, g_logit: f64) -> Vec<f64> {
        let counts = self.counts(width, height);
        let mut out = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let c = self.cell(v, height) * self.grid + self.cell(u, width);
                out.push(g_logit * self.weights[c] / counts[c] as f64);
            }
        }
        out
    }

    /// Parameter gradient (weights then bias) given `dL/dlogit`.
    pub fn param_grad(&self, x: &ProbMask, g_logit: f64) -> (Vec<f64>, f64) {
        (self.features(x).iter().map(|f| f * g_logit).collect(), g_logit)
    }
}
