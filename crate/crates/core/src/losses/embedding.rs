//! Fixed multi-scale feature map used by the contextual loss.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{check, LossError, LossValue, ProbMask};
use crate::image::BinaryMask;
use crate::rng::stream_rng;

pub const POOL_SCALES: [usize; 3] = [2, 4, 8];

/// Average pooling at [`POOL_SCALES`] (edge blocks average what they
/// contain), concatenated, then a seeded Gaussian projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbedding {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    projection: DMatrix<f64>,
}

impl FeatureEmbedding {
    pub fn new(width: usize, height: usize, dim: usize, seed: u64) -> Self {
        let pooled: usize = POOL_SCALES
            .iter()
            .map(|s| width.div_ceil(*s) * height.div_ceil(*s))
            .sum();
        let mut rng = stream_rng(seed, 0);
        let scale = 1.0 / (pooled as f64).sqrt();
        let projection = DMatrix::from_fn(dim, pooled, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        Self {
            width,
            height,
            seed,
            projection,
        }
    }

    pub fn dim(&self) -> usize {
        self.projection.nrows()
    }

    fn pool(&self, x: &[f64]) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.projection.ncols());
        for s in POOL_SCALES {
            for by in 0..self.height.div_ceil(s) {
                for bx in 0..self.width.div_ceil(s) {
                    let (mut sum, mut n) = (0.0, 0);
                    for v in by * s..((by + 1) * s).min(self.height) {
                        for u in bx * s..((bx + 1) * s).min(self.width) {
                            sum += x[v * self.width + u];
                            n += 1;
                        }
                    }
                    out.push(sum / n as f64);
                }
            }
        }
        DVector::from_vec(out)
    }

    // adjoint of `pool`
    fn unpool(&self, g: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.height];
        let mut k = 0;
        for s in POOL_SCALES {
            for by in 0..self.height.div_ceil(s) {
                for bx in 0..self.width.div_ceil(s) {
                    let vs = by * s..((by + 1) * s).min(self.height);
                    let us = bx * s..((bx + 1) * s).min(self.width);
                    let share = g[k] / (vs.len() * us.len()) as f64;
                    for v in vs {
                        for u in us.clone() {
                            out[v * self.width + u] += share;
                        }
                    }
                    k += 1;
                }
            }
        }
        out
    }

    pub fn embed(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.width * self.height, "embedding size mismatch");
        &self.projection * self.pool(x)
    }

    /// Gradient of `<g, embed(x)>` with respect to `x`.
    pub fn backward(&self, g: &DVector<f64>) -> Vec<f64> {
        self.unpool(&(self.projection.transpose() * g))
    }
}

/// `1 - cos(embed(pred), embed(gt))`. A zero embedding yields loss 1 with
/// zero gradient and `flagged` set.
pub fn contextual_loss(pred: &ProbMask, gt: &BinaryMask, emb: &FeatureEmbedding) -> Result<LossValue, LossError> {
    check(pred, gt)?;
    if emb.width != pred.width || emb.height != pred.height {
        return Err(LossError::DimensionMismatch(pred.width, pred.height, emb.width, emb.height));
    }
    let g: Vec<f64> = gt.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let ep = emb.embed(&pred.data);
    let eg = emb.embed(&g);
    let (np, ng) = (ep.norm(), eg.norm());
    if np == 0.0 || ng == 0.0 {
        return Ok(LossValue {
            value: 1.0,
            grad: vec![0.0; pred.data.len()],
            flagged: true,
        });
    }
    let cos = ep.dot(&eg) / (np * ng);
    let dcos = &eg / (np * ng) - &ep * (cos / (np * np));
    let grad = emb.backward(&(-dcos));
    Ok(LossValue::new(1.0 - cos, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt() -> BinaryMask {
        BinaryMask::from_fn(16, 16, |u, v| v == 3 + u / 3)
    }

    #[test]
    fn pooling_handles_partial_blocks() {
        let e = FeatureEmbedding::new(5, 3, 4, 0);
        let x: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let p = e.pool(&x);
        // 3x2 + 2x1 + 1x1 cells
        assert_eq!(p.len(), 9);
        assert_eq!(p[0], (0.0 + 1.0 + 5.0 + 6.0) / 4.0);
        assert_eq!(p[2], (4.0 + 9.0) / 2.0);
        assert_eq!(p[5], 14.0);
        assert_eq!(p[8], x.iter().sum::<f64>() / 15.0);
        // adjoint: <pool x, y> = <x, unpool y>
        let y = DVector::from_fn(9, |i, _| (i as f64 * 0.7).sin());
        let lhs = p.dot(&y);
        let rhs: f64 = x.iter().zip(e.unpool(&y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_identity() {
        let a = FeatureEmbedding::new(16, 16, 32, 5);
        assert_eq!(a, FeatureEmbedding::new(16, 16, 32, 5));
        assert_ne!(a, FeatureEmbedding::new(16, 16, 32, 6));
        let g = gt();
        let l = contextual_loss(&ProbMask::from_mask(&g), &g, &a).unwrap();
        assert!(l.value.abs() < 1e-12);
    }

    #[test]
    fn orthogonal_construction_gives_one() {
        let e = FeatureEmbedding::new(16, 16, 32, 2);
        let g = gt();
        let eg = e.embed(&ProbMask::from_mask(&g).data);
        // <embed(x), eg> = <x, h>; balance positive and negative parts of h
        let h = e.backward(&eg);
        let pos: f64 = h.iter().filter(|x| **x > 0.0).sum();
        let neg: f64 = -h.iter().filter(|x| **x < 0.0).sum::<f64>();
        let m = pos.max(neg);
        let x: Vec<f64> = h
            .iter()
            .map(|&v| if v > 0.0 { neg / m } else if v < 0.0 { pos / m } else { 0.0 })
            .collect();
        let p = ProbMask::new(16, 16, x).unwrap();
        let l = contextual_loss(&p, &g, &e).unwrap();
        assert!((l.value - 1.0).abs() < 1e-12, "{}", l.value);
    }

    #[test]
    fn zero_embedding_is_flagged() {
        let e = FeatureEmbedding::new(16, 16, 8, 0);
        let l = contextual_loss(&ProbMask::filled(16, 16, 0.0), &gt(), &e).unwrap();
        assert!(l.flagged && l.value == 1.0 && l.grad.iter().all(|g| *g == 0.0));
        let wrong = FeatureEmbedding::new(8, 8, 8, 0);
        assert!(contextual_loss(&ProbMask::filled(16, 16, 0.5), &gt(), &wrong).is_err());
    }
}
