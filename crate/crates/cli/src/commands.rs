use std::fs;
use std::path::Path;

use serde::Serialize;
use usneedle::geometry::ImagePoint;
use usneedle::image::BinaryMask;
use usneedle::losses::{
    adv_disc_loss, ce_loss, contextual_loss, dice_loss, focal_loss, gen_loss, gradient_error, make_toy_dataset,
    seg_loss, train_toy as train, FeatureEmbedding, LossChoice, LossValue, ProbMask, ToyDiscriminator, TrainConfig,
    FOCAL_GAMMA,
};
use usneedle::pipeline::{detect as detect_frame, detection_errors, seg_metrics, ShaftAnnotation};
use usneedle::reposition::{run_grid, EpisodeLog};
use usneedle::rng::stream_rng;
use usneedle::sim::{read_sweep_dir, render_mask, simulate_sweep, write_sweep_dir, SweepSpec};

use crate::config::RunConfig;
use crate::CliError;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn pm(xs: &[f64]) -> String {
    let (m, s) = mean_std(xs);
    format!("{m:.4}±{s:.4}")
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let spec = SweepSpec {
        seed: cfg.seed,
        ..cfg.simulate.clone()
    };
    let frames = simulate_sweep(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    write_sweep_dir(out, &spec, &frames).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct DetectionRecord {
    frame: usize,
    valid: bool,
    tip: ImagePoint,
    endpoints: [ImagePoint; 2],
    angle_deg: f64,
    shaft_length_px: f64,
    area: usize,
}

pub fn detect(cfg: &RunConfig, sweep_dir: &Path, out: &Path) -> Result<(), CliError> {
    let sweep = read_sweep_dir(sweep_dir).map_err(|e| CliError::Config(format!("{}: {e}", sweep_dir.display())))?;
    let spec = &sweep.spec;
    fs::create_dir_all(out)?;
    let mut records = Vec::new();
    let mut w = csv::Writer::from_path(out.join("metrics.csv"))?;
    w.write_record([
        "frame", "valid", "iou", "recall", "precision", "continuity", "tip_error_mm", "angle_error_deg",
        "center_error_mm",
    ])?;
    let mut cols: [Vec<f64>; 7] = Default::default();
    for f in &sweep.frames {
        let gt = render_mask(&spec.needle_at(f.index), &f.pose, &spec.probe, &spec.calibration).mask;
        let det = detect_frame(&f.mask, &cfg.pipeline.detect);
        let seg = seg_metrics(&f.mask, &gt, cfg.pipeline.t_con).ok();
        let errs = f.gt.shaft_endpoints_px.and_then(|[entry, tip]| {
            detection_errors(&det, &ShaftAnnotation { entry, tip }, &spec.calibration).ok()
        });
        let row = [
            seg.map(|s| s.iou),
            seg.map(|s| s.recall),
            seg.map(|s| s.precision),
            seg.map(|s| s.continuity),
            errs.map(|e| e.tip_error),
            errs.map(|e| e.angle_error),
            errs.map(|e| e.center_error),
        ];
        for (c, v) in cols.iter_mut().zip(row) {
            c.extend(v);
        }
        let mut rec = vec![f.index.to_string(), det.valid.to_string()];
        rec.extend(row.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
        records.push(DetectionRecord {
            frame: f.index,
            valid: det.valid,
            tip: det.tip,
            endpoints: det.endpoints,
            angle_deg: det.line.angle_deg(),
            shaft_length_px: det.shaft_length,
            area: det.area,
        });
    }
    let valid = records.iter().filter(|r| r.valid).count();
    let mut summary = vec!["summary".to_string(), format!("{valid}/{}", records.len())];
    summary.extend(cols.iter().map(|c| pm(c)));
    w.write_record(&summary)?;
    w.flush()?;
    fs::write(out.join("detections.json"), serde_json::to_string_pretty(&records)?)?;
    println!(
        "{} frames, {valid} valid, IoU {}, tip error {} mm",
        records.len(),
        pm(&cols[0]),
        pm(&cols[4])
    );
    Ok(())
}

pub fn experiment(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let e = &cfg.experiment;
    let logs = run_grid(&cfg.closed_loop(), &e.thetas_deg, &e.shifts_mm, e.trials, cfg.seed);
    // per-episode logs first, then the merged tables
    for (i, log) in logs.iter().enumerate() {
        let dir = out.join("episodes").join(format!("{i:03}"));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("log.json"), serde_json::to_string_pretty(log)?)?;
    }
    let mut w = csv::Writer::from_path(out.join("results.csv"))?;
    w.write_record([
        "d_theta_inj", "d_p_inj", "trial", "success", "e_p_mm", "e_theta_deg", "frames_to_restore",
    ])?;
    for l in &logs {
        w.write_record([
            l.d_theta_inj.to_string(),
            l.d_p_inj.to_string(),
            l.trial.to_string(),
            l.success.to_string(),
            opt(l.e_p_mm),
            opt(l.e_theta_deg),
            l.frames_to_restore.map(|f| f.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let mut s = csv::Writer::from_path(out.join("summary.csv"))?;
    s.write_record(["d_theta_inj", "d_p_inj", "success", "e_p_mm", "e_theta_deg", "frames_to_restore"])?;
    let write_cell = |s: &mut csv::Writer<fs::File>, t: String, p: String, cell: &[&EpisodeLog]| {
        let ok = cell.iter().filter(|l| l.success).count();
        let ep: Vec<f64> = cell.iter().filter_map(|l| l.e_p_mm).collect();
        let et: Vec<f64> = cell.iter().filter_map(|l| l.e_theta_deg).collect();
        let fr: Vec<f64> = cell.iter().filter_map(|l| l.frames_to_restore.map(|f| f as f64)).collect();
        s.write_record([t, p, format!("{ok}/{}", cell.len()), pm(&ep), pm(&et), pm(&fr)])
    };
    for &t in &e.thetas_deg {
        for &p in &e.shifts_mm {
            let cell: Vec<&EpisodeLog> = logs.iter().filter(|l| l.d_theta_inj == t && l.d_p_inj == p).collect();
            write_cell(&mut s, t.to_string(), p.to_string(), &cell)?;
        }
    }
    let all: Vec<&EpisodeLog> = logs.iter().collect();
    write_cell(&mut s, "all".into(), "all".into(), &all)?;
    s.flush()?;
    let ok = logs.iter().filter(|l| l.success).count();
    println!("{ok}/{} episodes restored", logs.len());
    Ok(())
}

#[derive(Serialize)]
struct ModelFile<'a> {
    model: &'a usneedle::losses::LinearSegmenter,
    discriminator: Option<&'a ToyDiscriminator>,
    final_val_iou: f64,
    foreground_fraction: f64,
    train: &'a TrainConfig,
}

pub fn train_toy(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = make_toy_dataset(&cfg.dataset, cfg.seed);
    let tc = TrainConfig {
        seed: cfg.seed,
        ..cfg.train
    };
    let r = train(&data, &tc).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("history.csv"))?;
    w.write_record(["phase", "epoch", "loss", "disc_loss", "val_iou", "lr_gen", "lr_disc"])?;
    for h in &r.history {
        let f = |x: f64| if x.is_nan() { String::new() } else { x.to_string() };
        w.write_record([
            h.phase.to_string(),
            h.epoch.to_string(),
            f(h.loss),
            f(h.disc_loss),
            f(h.val_iou),
            f(h.lr_gen),
            f(h.lr_disc),
        ])?;
    }
    w.flush()?;
    let file = ModelFile {
        model: &r.model,
        discriminator: r.discriminator.as_ref(),
        final_val_iou: r.final_val_iou(),
        foreground_fraction: data.foreground_fraction(),
        train: &tc,
    };
    fs::write(out.join("model.json"), serde_json::to_string_pretty(&file)?)?;
    println!("{:?}: final validation IoU {:.4}", tc.loss, r.final_val_iou());
    Ok(())
}

/// Dice against CE on the same datasets, segmentation phase only.
pub fn compare_losses(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("comparison.csv"))?;
    w.write_record(["seed", "loss", "val_iou"])?;
    let mut by_loss: Vec<(LossChoice, Vec<f64>)> = vec![(LossChoice::Dice, vec![]), (LossChoice::Ce, vec![])];
    for k in 0..cfg.compare_seeds as u64 {
        let seed = cfg.seed + k;
        let data = make_toy_dataset(&cfg.dataset, seed);
        for (loss, ious) in by_loss.iter_mut() {
            let tc = TrainConfig {
                seed,
                loss: *loss,
                phase2: usneedle::losses::Phase2Config {
                    epochs: 0,
                    ..cfg.train.phase2
                },
                ..cfg.train
            };
            let r = train(&data, &tc).map_err(|e| CliError::Runtime(e.to_string()))?;
            ious.push(r.final_val_iou());
            w.write_record([seed.to_string(), format!("{loss:?}").to_lowercase(), r.final_val_iou().to_string()])?;
        }
    }
    w.flush()?;
    for (loss, ious) in &by_loss {
        println!("{loss:?}: mean validation IoU {}", pm(ious));
    }
    Ok(())
}

pub fn eval_losses(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let n = cfg.eval.size_px;
    let h = cfg.eval.fd_step;
    let emb = FeatureEmbedding::new(n, n, cfg.train.embedding_dim, cfg.seed);
    let disc = ToyDiscriminator::random(cfg.train.disc_grid, cfg.seed);
    let w = cfg.train.weights;
    let run_err = |e: usneedle::losses::LossError| CliError::Runtime(e.to_string());
    type LossFn<'a> = Box<dyn Fn(&ProbMask, &BinaryMask) -> Result<LossValue, usneedle::losses::LossError> + 'a>;
    let losses: Vec<(&str, LossFn)> = vec![
        ("dice", Box::new(dice_loss)),
        ("ce", Box::new(ce_loss)),
        ("focal", Box::new(|p, g| focal_loss(p, g, FOCAL_GAMMA))),
        ("contextual", Box::new(|p, g| contextual_loss(p, g, &emb))),
        ("seg", Box::new(|p, g| seg_loss(p, g, &emb, &w))),
        ("gen", Box::new(|p, g| gen_loss(p, g, &disc, &emb, &w))),
    ];
    let mut stats: Vec<(Vec<f64>, f64)> = vec![(vec![], 0.0); losses.len()];
    for k in 0..cfg.eval.samples as u64 {
        use rand::Rng;
        let mut rng = stream_rng(cfg.seed, k);
        let pred = ProbMask::new(n, n, (0..n * n).map(|_| rng.random_range(0.02..0.98)).collect())
            .map_err(run_err)?;
        let gt = BinaryMask {
            width: n,
            height: n,
            data: (0..n * n).map(|_| rng.random_bool(0.2)).collect(),
        };
        for ((_, f), (vals, worst)) in losses.iter().zip(stats.iter_mut()) {
            let l = f(&pred, &gt).map_err(run_err)?;
            let err = gradient_error(&pred, |q| f(q, &gt).map(|v| v.value).unwrap_or(f64::NAN), &l.grad, h);
            vals.push(l.value);
            *worst = worst.max(err);
        }
    }
    fs::create_dir_all(out)?;
    let mut wr = csv::Writer::from_path(out.join("losses.csv"))?;
    wr.write_record(["loss", "value", "max_rel_grad_error"])?;
    for ((name, _), (vals, worst)) in losses.iter().zip(&stats) {
        wr.write_record([name.to_string(), pm(vals), format!("{worst:e}")])?;
        println!("{name:>10}  {}  grad err {worst:.2e}", pm(vals));
    }
    wr.flush()?;
    // closed-form anchors
    let half = {
        let gt = BinaryMask::from_fn(20, 10, |u, _| u < 10);
        let pred = ProbMask::from_mask(&BinaryMask::from_fn(20, 10, |u, _| (5..15).contains(&u)));
        dice_loss(&pred, &gt).map_err(run_err)?.value
    };
    let mut a = csv::Writer::from_path(out.join("anchors.csv"))?;
    a.write_record(["anchor", "value"])?;
    a.write_record(["dice_half_overlap".to_string(), half.to_string()])?;
    a.write_record(["adv_disc_at_half".to_string(), adv_disc_loss(&[0.5], &[0.5]).to_string()])?;
    a.flush()?;
    Ok(())
}
