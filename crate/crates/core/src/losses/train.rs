//! Two-phase toy training: segmentation loss only, then alternating
//! generator / discriminator updates.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::FeatureMap;
use super::{
    adv_disc_loss, adversarial_term, ce_loss, dice_loss, focal_loss, seg_loss, FeatureEmbedding, LinearSegmenter,
    LossError, LossValue, LossWeights, ProbMask, ToyDiscriminator, CLIP, FOCAL_GAMMA,
};
use crate::geometry::{CalibrationMap, Vec3};
use crate::image::{BinaryMask, GrayImage};
use crate::rng::stream_rng;
use crate::sim::{downward_probe_pose, in_plane_needle, render_intensity, render_mask, IntensityParams, ProbeModel};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TrainError {
    #[error("dataset has no training or validation samples")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    Dice,
    Ce,
    Focal,
    /// Dice plus contextual term.
    Seg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase1Config {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch: 8,
            lr: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase2Config {
    pub epochs: usize,
    pub batch: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub halving_period: usize,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch: 8,
            lr_gen: 5e-5,
            lr_disc: 1e-5,
            halving_period: 8,
        }
    }
}

impl Phase2Config {
    /// Learning rates for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> (f64, f64) {
        let f = 0.5f64.powi((epoch / self.halving_period) as i32);
        (self.lr_gen * f, self.lr_disc * f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    /// Multiplier on every learning rate. Plain gradient descent on the
    /// linear model needs far larger steps than the constants above.
    pub lr_scale: f64,
    pub loss: LossChoice,
    pub weights: LossWeights,
    pub focal_gamma: f64,
    pub embedding_dim: usize,
    pub disc_grid: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1: Phase1Config::default(),
            phase2: Phase2Config::default(),
            lr_scale: 1e4,
            loss: LossChoice::Seg,
            weights: LossWeights::default(),
            focal_gamma: FOCAL_GAMMA,
            embedding_dim: 64,
            disc_grid: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let p1 = &self.phase1;
        let p2 = &self.phase2;
        if p1.batch == 0 || p2.batch == 0 || p2.halving_period == 0 {
            return Err(TrainError::BadConfig("batch sizes and halving period must be positive"));
        }
        if !(p1.lr > 0.0 && p2.lr_gen > 0.0 && p2.lr_disc > 0.0 && self.lr_scale > 0.0) {
            return Err(TrainError::BadConfig("learning rates must be positive"));
        }
        if !self.weights.validate() || self.focal_gamma < 0.0 {
            return Err(TrainError::BadConfig("loss weights and gamma must be non-negative"));
        }
        if self.embedding_dim == 0 || self.disc_grid == 0 {
            return Err(TrainError::BadConfig("embedding_dim and disc_grid must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub features: FeatureMap,
}

impl ToySample {
    pub fn new(image: GrayImage, mask: BinaryMask) -> Self {
        let features = FeatureMap::compute(&image);
        Self { image, mask, features }
    }
}

/// Small in-plane scenes with an imbalanced foreground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub size_px: usize,
    pub spacing_mm: f64,
    pub pitch_deg: [f64; 2],
    pub length_mm: [f64; 2],
    pub intensity: IntensityParams,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 64,
            n_val: 16,
            size_px: 64,
            spacing_mm: 0.65,
            pitch_deg: [15.0, 35.0],
            length_mm: [18.0, 30.0],
            intensity: IntensityParams {
                distractors: 4,
                ..Default::default()
            },
        }
    }
}

impl ToyDatasetSpec {
    /// Noise-free, distractor-free variant where intensity alone separates.
    pub fn separable() -> Self {
        Self {
            intensity: IntensityParams {
                speckle: 0.0,
                distractors: 0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn calibration(&self) -> CalibrationMap {
        let extent = self.size_px as f64 * self.spacing_mm;
        CalibrationMap {
            pixel_spacing_u: self.spacing_mm,
            pixel_spacing_v: self.spacing_mm,
            image_origin_in_p: [-extent / 2.0, 0.0, 0.0],
            width: self.size_px,
            height: self.size_px,
            ..Default::default()
        }
    }

    fn sample(&self, seed: u64) -> ToySample {
        let cal = self.calibration();
        let extent = self.size_px as f64 * self.spacing_mm;
        let probe = ProbeModel {
            footprint: extent,
            depth: extent,
            ..Default::default()
        };
        let pose = downward_probe_pose(Vec3::zeros(), 0.0);
        let mut rng = stream_rng(seed, 0);
        let entry = rng.random_range(-0.45..-0.2) * extent;
        let pitch = rng.random_range(self.pitch_deg[0]..=self.pitch_deg[1]);
        let len = rng.random_range(self.length_mm[0]..=self.length_mm[1]);
        let needle = in_plane_needle(&pose, entry, pitch, len);
        let image = render_intensity(&needle, &pose, &probe, &cal, &self.intensity, rng.random());
        let mask = render_mask(&needle, &pose, &probe, &cal).mask;
        ToySample::new(image, mask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub train: Vec<ToySample>,
    pub val: Vec<ToySample>,
}

impl ToyDataset {
    /// Foreground pixel fraction over the training split.
    pub fn foreground_fraction(&self) -> f64 {
        let (fg, n) = self
            .train
            .iter()
            .fold((0, 0), |(f, n), s| (f + s.mask.count(), n + s.mask.data.len()));
        fg as f64 / n.max(1) as f64
    }
}

pub fn make_toy_dataset(spec: &ToyDatasetSpec, seed: u64) -> ToyDataset {
    let gen = |range: std::ops::Range<usize>| -> Vec<ToySample> {
        range
            .into_par_iter()
            .map(|i| spec.sample(stream_rng(seed, i as u64).random()))
            .collect()
    };
    ToyDataset {
        train: gen(0..spec.n_train),
        val: gen(spec.n_train..spec.n_train + spec.n_val),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub phase: u8,
    pub epoch: usize,
    pub loss: f64,
    /// Mean discriminator loss; NaN during phase 1.
    pub disc_loss: f64,
    pub val_iou: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub model: LinearSegmenter,
    pub discriminator: Option<ToyDiscriminator>,
    pub history: Vec<HistoryRow>,
}

impl TrainResult {
    pub fn final_val_iou(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.val_iou)
    }
}

fn iou(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let (mut i, mut u) = (0usize, 0usize);
    for (&a, &b) in pred.data.iter().zip(&gt.data) {
        i += (a && b) as usize;
        u += (a || b) as usize;
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

/// Mean IoU of the 0.5-thresholded prediction over `samples`.
pub fn mean_iou(model: &LinearSegmenter, samples: &[ToySample]) -> f64 {
    let s: f64 = samples
        .iter()
        .map(|s| iou(&model.forward(&s.features).threshold(0.5), &s.mask))
        .sum();
    s / samples.len() as f64
}

struct Losses<'a> {
    cfg: &'a TrainConfig,
    emb: FeatureEmbedding,
}

impl Losses<'_> {
    fn base(&self, pred: &ProbMask, gt: &BinaryMask) -> Result<LossValue, LossError> {
        match self.cfg.loss {
            LossChoice::Dice => dice_loss(pred, gt),
            LossChoice::Ce => ce_loss(pred, gt),
            LossChoice::Focal => focal_loss(pred, gt, self.cfg.focal_gamma),
            LossChoice::Seg => seg_loss(pred, gt, &self.emb, &self.cfg.weights),
        }
    }
}

// Per-sample (loss, weight gradient), reduced in batch order.
fn batch_step(
    model: &LinearSegmenter,
    batch: &[&ToySample],
    f: impl Fn(&ProbMask, &ToySample) -> Result<LossValue, LossError> + Sync,
) -> Result<(f64, Vec<f64>, Vec<ProbMask>), LossError> {
    let parts: Vec<(f64, Vec<f64>, ProbMask)> = batch
        .par_iter()
        .map(|s| {
            let pred = model.forward(&s.features);
            let l = f(&pred, s)?;
            let g = model.backward(&s.features, &pred, &l.grad);
            Ok((l.value, g, pred))
        })
        .collect::<Result<_, LossError>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.weights.len()];
    let mut preds = Vec::with_capacity(parts.len());
    for (l, g, p) in parts {
        loss += l / n;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b / n;
        }
        preds.push(p);
    }
    Ok((loss, grad, preds))
}

fn descend(w: &mut [f64], g: &[f64], lr: f64) {
    for (a, b) in w.iter_mut().zip(g) {
        *a -= lr * b;
    }
}

fn shuffled<'a>(data: &'a [ToySample], seed: u64, epoch: u64) -> Vec<&'a ToySample> {
    let mut v: Vec<&ToySample> = data.iter().collect();
    v.shuffle(&mut stream_rng(seed, 1000 + epoch));
    v
}

/// Phase 1 minimises the chosen loss; phase 2 alternates generator steps on
/// `loss + lambda_adv * BCE(D(pred), 1)` with discriminator steps.
pub fn train_toy(data: &ToyDataset, cfg: &TrainConfig) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let first = &data.train[0].mask;
    let losses = Losses {
        cfg,
        emb: FeatureEmbedding::new(first.width, first.height, cfg.embedding_dim, cfg.seed),
    };
    let mut model = LinearSegmenter::random(cfg.seed);
    model.fit_normalization(data.train.iter().map(|s| &s.features));
    let mut history = Vec::new();

    let lr1 = cfg.phase1.lr * cfg.lr_scale;
    for epoch in 0..cfg.phase1.epochs {
        let order = shuffled(&data.train, cfg.seed, epoch as u64);
        let mut total = 0.0;
        for batch in order.chunks(cfg.phase1.batch) {
            let (l, g, _) = batch_step(&model, batch, |p, s| losses.base(p, &s.mask))?;
            descend(&mut model.weights, &g, lr1);
            total += l * batch.len() as f64;
        }
        history.push(HistoryRow {
            phase: 1,
            epoch,
            loss: total / data.train.len() as f64,
            disc_loss: f64::NAN,
            val_iou: mean_iou(&model, &data.val),
            lr_gen: cfg.phase1.lr,
            lr_disc: f64::NAN,
        });
    }

    let mut disc = None;
    if cfg.phase2.epochs > 0 {
        let mut d = ToyDiscriminator::random(cfg.disc_grid, cfg.seed);
        let lam = cfg.weights.lambda_adv;
        for epoch in 0..cfg.phase2.epochs {
            let (lr_g, lr_d) = cfg.phase2.lr_at(epoch);
            let order = shuffled(&data.train, cfg.seed, (cfg.phase1.epochs + epoch) as u64);
            let (mut total, mut dtotal) = (0.0, 0.0);
            for batch in order.chunks(cfg.phase2.batch) {
                let (l, g, preds) = batch_step(&model, batch, |p, s| {
                    let mut l = losses.base(p, &s.mask)?;
                    if lam != 0.0 {
                        let a = adversarial_term(p, &d);
                        l.value += lam * a.value;
                        for (x, y) in l.grad.iter_mut().zip(&a.grad) {
                            *x += lam * y;
                        }
                    }
                    Ok(l)
                })?;
                descend(&mut model.weights, &g, lr_g * cfg.lr_scale);
                total += l * batch.len() as f64;

                // discriminator on the generator output of this step
                let n = batch.len() as f64;
                let (mut gw, mut gb) = (vec![0.0; d.weights.len()], 0.0);
                let (mut fakes, mut reals) = (Vec::new(), Vec::new());
                for (pred, s) in preds.iter().zip(batch) {
                    let real = ProbMask::from_mask(&s.mask);
                    let (df, dr) = (d.forward(pred), d.forward(&real));
                    fakes.push(df);
                    reals.push(dr);
                    // dBCE/dz = D - target where D is not clipped
                    for (x, dv, target) in [(pred, df, 0.0), (&real, dr, 1.0)] {
                        if dv.clamp(CLIP, 1.0 - CLIP) != dv {
                            continue;
                        }
                        let gz = dv - target;
                        let (w, b) = d.param_grad(x, gz);
                        for (a, c) in gw.iter_mut().zip(&w) {
                            *a += c / n;
                        }
                        gb += b / n;
                    }
                }
                dtotal += adv_disc_loss(&fakes, &reals) * n;
                descend(&mut d.weights, &gw, lr_d * cfg.lr_scale);
                d.bias -= lr_d * cfg.lr_scale * gb;
            }
            history.push(HistoryRow {
                phase: 2,
                epoch,
                loss: total / data.train.len() as f64,
                disc_loss: dtotal / data.train.len() as f64,
                val_iou: mean_iou(&model, &data.val),
                lr_gen: lr_g,
                lr_disc: lr_d,
            });
        }
        disc = Some(d);
    }
    Ok(TrainResult {
        model,
        discriminator: disc,
        history,
    })
}
