//! Segmentation losses with analytic gradients, plus a toy two-phase
//! trainer on synthetic imbalanced scenes.

pub mod embedding;
pub mod model;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{contextual_loss, FeatureEmbedding};
pub use model::{LinearSegmenter, ToyDiscriminator, N_FEATURES};
pub use train::{
    make_toy_dataset, train_toy, HistoryRow, LossChoice, Phase1Config, Phase2Config, ToyDatasetSpec,
    ToySample, TrainConfig, TrainError, TrainResult,
};

use crate::image::BinaryMask;

/// Probability clip for the log terms.
pub const CLIP: f64 = 1e-7;
pub const DICE_EPS: f64 = 1.0;
pub const FOCAL_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LossError {
    #[error("mask size mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("probability out of [0, 1]")]
    OutOfRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ProbMask {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, LossError> {
        assert_eq!(data.len(), width * height);
        if data.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(LossError::OutOfRange);
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, p: f64) -> Self {
        Self {
            width,
            height,
            data: vec![p; width * height],
        }
    }

    pub fn from_mask(m: &BinaryMask) -> Self {
        Self {
            width: m.width,
            height: m.height,
            data: m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn threshold(&self, t: f64) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| p >= t).collect(),
        }
    }
}

/// Loss value and gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Set when a degenerate input forced a conventional value.
    pub flagged: bool,
}

impl LossValue {
    fn new(value: f64, grad: Vec<f64>) -> Self {
        Self {
            value,
            grad,
            flagged: false,
        }
    }

    fn add_scaled(&mut self, other: &LossValue, s: f64) {
        self.value += s * other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += s * o;
        }
        self.flagged |= other.flagged;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_dice: f64,
    pub lambda_cl: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dice: 1.0,
            lambda_cl: 0.001,
            lambda_adv: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> bool {
        [self.lambda_dice, self.lambda_cl, self.lambda_adv]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

fn check(pred: &ProbMask, gt: &BinaryMask) -> Result<(), LossError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(LossError::DimensionMismatch(pred.width, pred.height, gt.width, gt.height));
    }
    Ok(())
}

fn gt_val(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Soft Dice loss with additive smoothing `DICE_EPS`.
pub fn dice_loss(pred: &ProbMask, gt: &BinaryMask) -> Result<LossValue, LossError> {
    check(pred, gt)?;
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (p, &g) in pred.data.iter().zip(&gt.data) {
        let g = gt_val(g);
        inter += p * g;
        sp += p;
        sg += g;
    }
    let num = 2.0 * inter + DICE_EPS;
    let den = sp + sg + DICE_EPS;
    let grad = gt
        .data
        .iter()
        .map(|&g| -(2.0 * gt_val(g) * den - num) / (den * den))
        .collect();
    Ok(LossValue::new(1.0 - num / den, grad))
}

/// Mean binary cross-entropy. Clipped pixels get zero gradient.
pub fn ce_loss(pred: &ProbMask, gt: &BinaryMask) -> Result<LossValue, LossError> {
    check(pred, gt)?;
    let n = pred.data.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.data.len());
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let pc = p.clamp(CLIP, 1.0 - CLIP);
        let g = gt_val(g);
        sum += -(g * pc.ln() + (1.0 - g) * (1.0 - pc).ln());
        grad.push(if pc != p { 0.0 } else { (-g / pc + (1.0 - g) / (1.0 - pc)) / n });
    }
    Ok(LossValue::new(sum / n, grad))
}

/// Mean focal loss `-(1 - p_t)^gamma ln p_t`. `gamma == 0` is routed to
/// [`ce_loss`] so the two agree bit for bit.
pub fn focal_loss(pred: &ProbMask, gt: &BinaryMask, gamma: f64) -> Result<LossValue, LossError> {
    check(pred, gt)?;
    assert!(gamma >= 0.0, "gamma must be non-negative");
    if gamma == 0.0 {
        return ce_loss(pred, gt);
    }
    let n = pred.data.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.data.len());
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let pc = p.clamp(CLIP, 1.0 - CLIP);
        let (pt, sign) = if g { (pc, 1.0) } else { (1.0 - pc, -1.0) };
        let q = 1.0 - pt;
        sum += -q.powf(gamma) * pt.ln();
        let dpt = gamma * q.powf(gamma - 1.0) * pt.ln() - q.powf(gamma) / pt;
        grad.push(if pc != p { 0.0 } else { sign * dpt / n });
    }
    Ok(LossValue::new(sum / n, grad))
}

/// `lambda_dice * Dice + lambda_cl * contextual`.
pub fn seg_loss(
    pred: &ProbMask,
    gt: &BinaryMask,
    emb: &FeatureEmbedding,
    w: &LossWeights,
) -> Result<LossValue, LossError> {
    check(pred, gt)?;
    let mut out = LossValue::new(0.0, vec![0.0; pred.data.len()]);
    if w.lambda_dice != 0.0 {
        out.add_scaled(&dice_loss(pred, gt)?, w.lambda_dice);
    }
    if w.lambda_cl != 0.0 {
        out.add_scaled(&contextual_loss(pred, gt, emb)?, w.lambda_cl);
    }
    Ok(out)
}

/// Binary cross-entropy of one probability against a 0/1 target, clipped.
pub fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(CLIP, 1.0 - CLIP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Discriminator loss: `BCE(D(fake), 0) + BCE(D(real), 1)`, averaged over
/// the batch.
pub fn adv_disc_loss(d_fake: &[f64], d_real: &[f64]) -> f64 {
    assert_eq!(d_fake.len(), d_real.len());
    assert!(!d_fake.is_empty());
    let s: f64 = d_fake
        .iter()
        .zip(d_real)
        .map(|(&f, &r)| bce(f, 0.0) + bce(r, 1.0))
        .sum();
    s / d_fake.len() as f64
}

/// Generator loss `seg + lambda_adv * BCE(D(pred), 1)` with the gradient
/// carried through the discriminator input.
pub fn gen_loss(
    pred: &ProbMask,
    gt: &BinaryMask,
    disc: &ToyDiscriminator,
    emb: &FeatureEmbedding,
    w: &LossWeights,
) -> Result<LossValue, LossError> {
    let mut out = seg_loss(pred, gt, emb, w)?;
    if w.lambda_adv != 0.0 {
        out.add_scaled(&adversarial_term(pred, disc), w.lambda_adv);
    }
    Ok(out)
}

/// `BCE(D(pred), 1)` and its gradient with respect to `pred`.
pub fn adversarial_term(pred: &ProbMask, disc: &ToyDiscriminator) -> LossValue {
    let d = disc.forward(pred);
    let grad = if d.clamp(CLIP, 1.0 - CLIP) == d {
        // d(-ln D)/dz = D - 1 for the logit z
        disc.input_grad(pred.width, pred.height, d - 1.0)
    } else {
        vec![0.0; pred.data.len()]
    };
    LossValue::new(bce(d, 1.0), grad)
}

/// Relative 2-norm error between `analytic` and a central-difference
/// gradient of `f` at `pred` with step `h`.
pub fn gradient_error(pred: &ProbMask, f: impl Fn(&ProbMask) -> f64, analytic: &[f64], h: f64) -> f64 {
    let mut x = pred.clone();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..pred.data.len() {
        let p = pred.data[i];
        x.data[i] = p + h;
        let a = f(&x);
        x.data[i] = p - h;
        let b = f(&x);
        x.data[i] = p;
        let fd = (a - b) / (2.0 * h);
        num += (fd - analytic[i]).powi(2);
        den += analytic[i] * analytic[i];
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
