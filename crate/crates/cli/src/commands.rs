use std::io::Write;

use anyhow::Context;
use cdsm_core::dataio::{
    clip_pointcloud, dataset_stats, filter_labels, generate_synthetic_scene, letterbox, load_detections,
    save_detections, save_scene, FilterMode, CAR,
};
use cdsm_core::evaluator::{evaluate_2d, evaluate_3d, nuscenes_specs, AssociationKind, AssociationSpec, EvalReport};
use cdsm_core::geometry::cuboid_to_bbox2d;
use cdsm_core::tensornet::{load_checkpoint, save_checkpoint, ParamStore};
use cdsm_core::train::{train_with, EpochMetrics, Model, Pretrained, Regime};
use cdsm_core::{Box2D, Box3D, Error, Scene};
use serde::Serialize;

use crate::config::{Experiment, LoadedConfig, Split};
use crate::plot::{pr_curve_svg, spec_label};
use crate::render::{bev_view, camera_overlay_2d, camera_overlay_3d, save_png, Coloring};
use crate::rundir::RunDir;
use crate::{Common, Target};

fn open(common: &Common, command: &str) -> anyhow::Result<(LoadedConfig, RunDir)> {
    let cfg = LoadedConfig::load(&common.config)?;
    let dir = RunDir::open(&cfg, command)?;
    Ok((cfg, dir))
}

pub fn synth(c: &Common) -> anyhow::Result<()> {
    let (cfg, dir) = open(c, "synth")?;
    let e = &cfg.experiment;
    for split in Split::ALL {
        let out = dir.data_dir(split, false);
        let mut infeasible = 0;
        for i in 0..e.split_len(split) {
            let (scene, report) = generate_synthetic_scene(e.scene_seed(split, i), &e.synth);
            infeasible += usize::from(report.infeasible);
            save_scene(&scene, &out.join(format!("scene_{}.json", scene.id)))?;
        }
        println!(
            "{}: {} scenes in {}{}",
            split.name(),
            e.split_len(split),
            out.display(),
            if infeasible > 0 {
                format!(" ({infeasible} with fewer cars than requested)")
            } else {
                String::new()
            }
        );
    }
    Ok(())
}

pub fn preprocess(c: &Common) -> anyhow::Result<()> {
    let (cfg, dir) = open(c, "preprocess")?;
    let m = &cfg.experiment.model;
    let fov = m.voxels.fov;
    for split in Split::ALL {
        let scenes = dir.load_split(split, false)?;
        let out = dir.data_dir(split, true);
        for s in &scenes {
            let (image, lb) = letterbox(&s.image, m.image_width, m.image_height)?;
            let p = Scene {
                id: s.id.clone(),
                image,
                points: clip_pointcloud(&s.points, &fov),
                lidar: s.lidar.clone(),
                calib: s.calib.resized(lb.scale, lb.pad_x, lb.pad_y),
                labels: filter_labels(&s.labels, FilterMode::Fusion3d, CAR, &fov),
            };
            save_scene(&p, &out.join(format!("scene_{}.json", p.id)))?;
        }
        println!("{}: {} scenes in {}", split.name(), scenes.len(), out.display());
    }
    Ok(())
}

fn checkpoint_for(dir: &RunDir, regime: Regime) -> anyhow::Result<ParamStore> {
    let path = dir.checkpoint(regime);
    if !path.exists() {
        return Err(Error::MissingCheckpoint(format!("{} (train the {regime} regime first)", path.display())).into());
    }
    Ok(load_checkpoint(&path)?)
}

fn pretrained(dir: &RunDir, regime: Regime) -> anyhow::Result<Pretrained> {
    Ok(match regime {
        Regime::FusionFrozen => {
            let camera = if dir.checkpoint(Regime::Cam3d).exists() {
                checkpoint_for(dir, Regime::Cam3d)?
            } else {
                checkpoint_for(dir, Regime::Cam2d).map_err(|_| {
                    Error::MissingCheckpoint(format!("{} or cam2d", dir.checkpoint(Regime::Cam3d).display()))
                })?
            };
            Pretrained {
                camera: Some(camera),
                radar: Some(checkpoint_for(dir, Regime::Radar3d)?),
                fusion: None,
            }
        }
        Regime::FusionFinetune => Pretrained {
            fusion: Some(checkpoint_for(dir, Regime::FusionFrozen)?),
            ..Pretrained::default()
        },
        _ => Pretrained::default(),
    })
}

#[derive(Serialize)]
struct TrainLog<'a> {
    regime: Regime,
    best_epoch: usize,
    stopped_early: bool,
    epochs: &'a [EpochMetrics],
}

pub fn train(c: &Common, regime: Option<Regime>) -> anyhow::Result<()> {
    let (cfg, dir) = open(c, "train")?;
    let e = &cfg.experiment;
    let regime = regime.unwrap_or(e.train.regime);
    let tc = e.train_config(regime);
    let pre = pretrained(&dir, regime)?;
    let train_set = dir.load_split(Split::Train, c.preprocessed)?;
    let val_set = dir.load_split(Split::Val, c.preprocessed)?;
    let out = train_with(&tc, &train_set, &val_set, &pre, |_, m| {
        eprintln!(
            "{regime} epoch {:>3}  lr {:.2e}  train {:.5}  val {:.5}{}",
            m.epoch,
            m.lr,
            m.train_loss.unwrap_or(f64::NAN),
            m.val_loss,
            if m.improved { "  *" } else { "" }
        );
        Ok(false)
    })
    .with_context(|| format!("training {regime}"))?;
    let ckpt = dir.checkpoint(regime);
    if let Some(parent) = ckpt.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.into(),
            source: e,
        })?;
    }
    save_checkpoint(&out.model.store, &ckpt)?;
    dir.write_json(
        &dir.train_log(regime),
        &TrainLog {
            regime,
            best_epoch: out.best_epoch,
            stopped_early: out.stopped_early,
            epochs: &out.log,
        },
    )?;
    println!(
        "{regime}: best epoch {} of {}{}; checkpoint {}",
        out.best_epoch,
        out.log.len() - 1,
        if out.stopped_early { " (early stop)" } else { "" },
        ckpt.display()
    );
    Ok(())
}

fn target(t: &Target, e: &Experiment) -> (Regime, Split) {
    (t.regime.unwrap_or(e.train.regime), t.split.unwrap_or(e.eval.split))
}

pub fn infer(t: &Target) -> anyhow::Result<()> {
    let (cfg, dir) = open(&t.common, "infer")?;
    let e = &cfg.experiment;
    let (regime, split) = target(t, e);
    let model = Model::from_checkpoint(&e.model, regime, &checkpoint_for(&dir, regime)?)?;
    let scenes = dir.load_split(split, t.common.preprocessed)?;
    let out = dir.detections_dir(regime, split);
    for s in &scenes {
        let dets = model.infer(s).with_context(|| format!("inference on {}", s.id))?;
        save_detections(&dets, &out.join(format!("{}.json", s.id)))?;
    }
    println!(
        "{regime}: detections for {} {} scenes in {}",
        scenes.len(),
        split.name(),
        out.display()
    );
    Ok(())
}

/// Ground truth of one scene for `regime`, filtered per the eval section.
fn ground_truth(e: &Experiment, regime: Regime, s: &Scene) -> (Vec<Box3D>, Vec<Box2D>) {
    let filter = e.eval.label_filter.unwrap_or(regime.filter());
    let labels = filter_labels(&s.labels, filter, CAR, &e.model.voxels.fov);
    let b3: Vec<Box3D> = labels.iter().map(|l| l.box3d).collect();
    let size = (s.image.width(), s.image.height());
    let b2 = b3
        .iter()
        .filter_map(|b| cuboid_to_bbox2d(b, &s.calib, size))
        .filter(|b| b.width() >= 1.0 && b.height() >= 1.0)
        .collect();
    (b3, b2)
}

struct Scored {
    scene: Scene,
    preds3d: Vec<Box3D>,
    preds2d: Vec<Box2D>,
    gt3d: Vec<Box3D>,
    gt2d: Vec<Box2D>,
}

fn load_scored(dir: &RunDir, e: &Experiment, regime: Regime, split: Split, pre: bool) -> anyhow::Result<Vec<Scored>> {
    let scenes = dir.load_split(split, pre)?;
    let det_dir = dir.detections_dir(regime, split);
    scenes
        .into_iter()
        .map(|scene| {
            let path = det_dir.join(format!("{}.json", scene.id));
            let d = load_detections(&path).context("detections missing; run `cdsm infer` first")?;
            let (gt3d, gt2d) = ground_truth(e, regime, &scene);
            Ok(Scored {
                scene,
                preds3d: d.boxes3d,
                preds2d: d.boxes2d,
                gt3d,
                gt2d,
            })
        })
        .collect()
}

fn iou_specs(e: &Experiment) -> Vec<AssociationSpec> {
    e.eval.iou_thresholds.iter().map(|&t| AssociationSpec::iou(t)).collect()
}

pub fn eval(t: &Target) -> anyhow::Result<()> {
    let (cfg, dir) = open(&t.common, "eval")?;
    let e = &cfg.experiment;
    let (regime, split) = target(t, e);
    let scored = load_scored(&dir, e, regime, split, t.common.preprocessed)?;
    let report: EvalReport = if regime.is_3d() {
        let pairs: Vec<_> = scored.iter().map(|s| (s.preds3d.clone(), s.gt3d.clone())).collect();
        evaluate_3d(&pairs, &nuscenes_specs(e.eval.use_z))?
    } else {
        let pairs: Vec<_> = scored.iter().map(|s| (s.preds2d.clone(), s.gt2d.clone())).collect();
        evaluate_2d(&pairs, &iou_specs(e))?
    };
    dir.write_json(&dir.eval_report(regime, split), &report)?;
    let title = format!("{} / {regime} / {}", e.name, split.name());
    dir.write_text(&dir.pr_plot(regime, split), &pr_curve_svg(&title, &report))?;
    println!(
        "{regime} on {} ({} labels, {} predictions)",
        split.name(),
        report.num_labels,
        report.num_predictions
    );
    for r in &report.results {
        println!(
            "  {:<8}  AP {:.4}  tp {} fp {} fn {}",
            spec_label(&r.spec),
            r.ap,
            r.tp,
            r.fp,
            r.fn_
        );
    }
    println!("  mAP {:.4}", report.map);
    println!("report {}", dir.eval_report(regime, split).display());
    Ok(())
}

pub fn stats(c: &Common, split: Split) -> anyhow::Result<()> {
    let (_, dir) = open(c, "stats")?;
    let scenes = dir.load_split(split, c.preprocessed)?;
    let stats = dataset_stats(&scenes);
    dir.write_json(&dir.stats(split), &stats)?;
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

pub fn render(t: &Target) -> anyhow::Result<()> {
    let (cfg, dir) = open(&t.common, "render")?;
    let e = &cfg.experiment;
    let (regime, split) = target(t, e);
    let scored = load_scored(&dir, e, regime, split, t.common.preprocessed)?;
    let out = dir.render_dir(regime, split);
    let limit = e.eval.render_limit.unwrap_or(usize::MAX);
    let dist = AssociationSpec {
        kind: AssociationKind::Dist3d { use_z: e.eval.use_z },
        threshold: e.eval.render_distance,
    };
    for s in scored.iter().take(limit) {
        let id = &s.scene.id;
        if regime.is_3d() {
            let colors = Coloring::boxes_3d(&s.preds3d, &s.gt3d, &dist);
            save_png(
                &camera_overlay_3d(&s.scene, &s.preds3d, &s.gt3d, &colors),
                &out.join(format!("{id}_camera.png")),
            )?;
            save_png(
                &bev_view(&s.scene, &e.model.voxels.fov, &s.preds3d, &s.gt3d, &colors),
                &out.join(format!("{id}_bev.png")),
            )?;
        } else {
            let colors = Coloring::boxes_2d(&s.preds2d, &s.gt2d, &AssociationSpec::iou(e.eval.render_iou));
            save_png(
                &camera_overlay_2d(&s.scene, &s.preds2d, &s.gt2d, &colors),
                &out.join(format!("{id}_camera.png")),
            )?;
            let gt_colors = Coloring::boxes_3d(&[], &s.gt3d, &dist);
            save_png(
                &bev_view(&s.scene, &e.model.voxels.fov, &[], &s.gt3d, &gt_colors),
                &out.join(format!("{id}_bev.png")),
            )?;
        }
    }
    println!("{regime}: {} renders in {}", scored.len().min(limit), out.display());
    Ok(())
}
