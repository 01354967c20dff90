//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. `ACCEPTANCE_ONLY=1,3,9` runs a subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use cdsm_core::cdsm::{BevGrid, Cdsm, CdsmConfig, FovMask, Fusion};
use cdsm_core::dataio::{clip_pointcloud, filter_labels, generate_synthetic_scene, FilterMode, SynthConfig, CAR};
use cdsm_core::detector::{
    decode_2d, decode_3d, encode_2d, encode_3d, focal_loss_logits, nms_2d, nms_bev, weighted_mse, Anchor2D, Anchor3D,
    AnchorTarget, FocalParams, Head, DELTAS_3D,
};
use cdsm_core::evaluator::{average_precision, evaluate_3d, nuscenes_specs, EvalReport};
use cdsm_core::geometry::{cdsm_rotate, inverse_chain, AxisLabel, Pose, CAMERA_TO_BEV};
use cdsm_core::tensornet::{
    check_function_gradient, check_param_gradients, BevBackbone, BiFpn, FusionNode, GradCheck, ImageBackbone, LevelSet,
    ParamBuilder, ParamStore, Tape, Var, NO_SOURCE,
};
use cdsm_core::train::{prepare_all, train, train_with, Model, ModelConfig, Pretrained, Regime, TrainConfig};
use cdsm_core::voxelizer::{point_features, stack_z, stack_z_tensor, voxelize, Vfe, VoxelGridSpec};
use cdsm_core::{
    AxisRotation, Box2D, Box3D, CameraCalib, FovBox, Label, OrientedTensor, Quaternion, RadarPoint, Scene, Tensor,
    VcsPoint,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Reports collected from every evaluated run, checked by criterion 8.
#[derive(Default)]
struct Ctx {
    reports: Vec<(String, EvalReport)>,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// 1. CDSM rotation against a per-index matrix oracle

fn oracle_matrix(chain: &[AxisRotation]) -> [[i64; 3]; 3] {
    let mut m = [[1.0f64, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for r in chain {
        let (s, c) = r.angle.to_radians().sin_cos();
        let rot = match r.axis {
            0 => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
            1 => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            _ => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        };
        let mut next = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                next[i][j] = (0..3).map(|k| rot[i][k] * m[k][j]).sum();
            }
        }
        m = next;
    }
    m.map(|row| row.map(|v| v.round() as i64))
}

fn oracle_rotate(t: &Tensor, m: [[i64; 3]; 3]) -> Tensor {
    let s = t.shape();
    let inner: usize = s[3..].iter().product();
    let mut offset = [0i64; 3];
    let mut out_shape: Vec<usize> = vec![0; 3];
    for a in 0..3 {
        for b in 0..3 {
            offset[a] -= (m[a][b] * (s[b] as i64 - 1)).min(0);
            out_shape[a] += m[a][b].unsigned_abs() as usize * s[b];
        }
    }
    out_shape.extend_from_slice(&s[3..]);
    let mut out = Tensor::zeros(&out_shape);
    for i in 0..s[0] {
        for j in 0..s[1] {
            for k in 0..s[2] {
                let p = [i as i64, j as i64, k as i64];
                let q: Vec<usize> = (0..3)
                    .map(|a| ((0..3).map(|b| m[a][b] * p[b]).sum::<i64>() + offset[a]) as usize)
                    .collect();
                let src = ((i * s[1] + j) * s[2] + k) * inner;
                let dst = ((q[0] * out_shape[1] + q[1]) * out_shape[2] + q[2]) * inner;
                out.data_mut()[dst..dst + inner].copy_from_slice(&t.data()[src..src + inner]);
            }
        }
    }
    out
}

fn criterion_1(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let m = oracle_matrix(&CAMERA_TO_BEV);
    let inverse = inverse_chain(&CAMERA_TO_BEV);
    let mut r = rng(1);
    for case in 0..1000 {
        let rank = r.random_range(3..=4);
        let shape: Vec<usize> = (0..rank).map(|_| r.random_range(1..=8)).collect();
        let data = Tensor::from_fn(&shape, |_| r.random_range(-1.0..1.0));
        let mut labels = OrientedTensor::camera_labels();
        labels.extend((3..rank).map(|_| AxisLabel::channel(None)));
        let t = OrientedTensor::new(data, labels).map_err(err)?;
        let rotated = cdsm_rotate(&t, &CAMERA_TO_BEV).map_err(err)?;
        let expect = oracle_rotate(&t.data, m);
        ensure(rotated.data == expect, || {
            format!("case {case} shape {shape:?} differs from oracle")
        })?;
        let back = cdsm_rotate(&rotated, &inverse).map_err(err)?;
        ensure(back == t, || {
            format!("case {case} shape {shape:?}: inverse chain is not the identity")
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s (limit 10 s)"))?;
    Ok(format!("1000 tensors exact, round trip identity, {secs:.2} s"))
}

// ---------------------------------------------------------------------------
// 2. Finite-difference gradient checks

const GRAD_TOL: f64 = 1e-4;
const MAX_FIXTURE: usize = 1000;

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for kinked activations.
fn off_zero_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = r.random_range(0.05..1.5);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Moves every parameter off its structured initialisation (zero biases and
/// betas put activations exactly on a kink for constant inputs).
fn jitter(store: &mut ParamStore, r: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).value.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
}

struct GradSuite {
    results: Vec<(String, GradCheck)>,
    largest: usize,
}

impl GradSuite {
    fn run(
        &mut self,
        name: &str,
        store: &ParamStore,
        forward: impl Fn(&mut Tape) -> cdsm_core::Result<Vec<Var>>,
    ) -> Result<(), String> {
        let g = check_param_gradients(store, 17, forward).map_err(|e| format!("{name}: {e}"))?;
        ensure(g.checked_values > 0, || format!("{name}: nothing checked"))?;
        ensure(g.checked_values <= MAX_FIXTURE, || {
            format!("{name}: fixture has {} values (limit {MAX_FIXTURE})", g.checked_values)
        })?;
        self.largest = self.largest.max(g.checked_values);
        self.results.push((name.to_string(), g));
        Ok(())
    }

    fn function(&mut self, name: &str, rel: f64, n: usize) {
        self.largest = self.largest.max(n);
        self.results.push((
            name.to_string(),
            GradCheck {
                worst_rel_err: rel,
                worst_param: "input".into(),
                checked_values: n,
            },
        ));
    }
}

fn levels_of(tape: &mut Tape, ids: &[cdsm_core::tensornet::ParamId], strides: &[usize]) -> LevelSet {
    LevelSet {
        levels: ids.iter().map(|&i| tape.param(i)).collect(),
        strides: strides.to_vec(),
    }
}

fn criterion_2(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut suite = GradSuite {
        results: Vec::new(),
        largest: 0,
    };

    for (name, shape, k, stride, bias) in [
        ("conv3x3 s1 + bias", [5usize, 5, 3], 3usize, 1usize, true),
        ("conv3x3 s2", [6, 5, 2], 3, 2, false),
        ("conv1x1", [4, 4, 3], 1, 1, true),
    ] {
        let mut s = ParamStore::new();
        let cout = 3;
        let x = s.add("x", random_tensor(&mut r, &shape));
        let w = s.add("w", random_tensor(&mut r, &[k, k, shape[2], cout]));
        let b = bias.then(|| s.add("b", random_tensor(&mut r, &[cout])));
        suite.run(name, &s, |t| {
            let (xv, wv) = (t.param(x), t.param(w));
            let bv = b.map(|b| t.param(b));
            Ok(vec![t.conv2d(xv, wv, bv, stride)?])
        })?;
    }

    let mut s = ParamStore::new();
    let x = s.add("x", off_zero_tensor(&mut r, &[40]));
    suite.run("leaky_relu", &s, |t| {
        let v = t.param(x);
        Ok(vec![t.leaky_relu(v, 0.1)])
    })?;
    suite.run("mish", &s, |t| {
        let v = t.param(x);
        Ok(vec![t.mish(v)])
    })?;

    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&mut r, &[4, 3, 5]));
    let g = s.add("gamma", random_tensor(&mut r, &[5]));
    let b = s.add("beta", random_tensor(&mut r, &[5]));
    suite.run("layer_norm", &s, |t| {
        let (xv, gv, bv) = (t.param(x), t.param(g), t.param(b));
        Ok(vec![t.layer_norm(xv, gv, bv)?])
    })?;

    let mut s = ParamStore::new();
    let a = s.add("a", random_tensor(&mut r, &[4, 6, 2]));
    let c = s.add("c", random_tensor(&mut r, &[4, 6, 1]));
    suite.run("upsample2 / avg_pool2 / add / scale / concat / reshape", &s, |t| {
        let (av, cv) = (t.param(a), t.param(c));
        let pooled = t.avg_pool2(av)?;
        let up = t.upsample2(pooled)?;
        let sum = t.add(up, av)?;
        let scaled = t.scale(sum, -1.7);
        let cat = t.concat(&[scaled, cv])?;
        Ok(vec![t.reshape(cat, &[12, 6])?])
    })?;

    let mut s = ParamStore::new();
    let ins: Vec<_> = (0..3)
        .map(|i| s.add(format!("in{i}"), random_tensor(&mut r, &[3, 3, 2])))
        .collect();
    let w = s.add("w", Tensor::from_vec(&[3], vec![0.5, 1.0, 1.5]).map_err(err)?);
    suite.run("fast normalized fusion", &s, |t| {
        let v: Vec<Var> = ins.iter().map(|&i| t.param(i)).collect();
        let wv = t.param(w);
        Ok(vec![t.fuse(&v, wv)?])
    })?;

    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&mut r, &[12]));
    let index: Vec<usize> = (0..20)
        .map(|_| {
            if r.random_bool(0.25) {
                NO_SOURCE
            } else {
                r.random_range(0..12)
            }
        })
        .collect();
    let index = Arc::new(index);
    suite.run("gather", &s, |t| {
        let v = t.param(x);
        Ok(vec![t.gather(v, index.clone(), &[4, 5])?])
    })?;

    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&mut r, &[3, 4, 5]));
    let y = s.add("y", random_tensor(&mut r, &[7, 3]));
    suite.run("max_axis / segment_max", &s, |t| {
        let (xv, yv) = (t.param(x), t.param(y));
        let m0 = t.max_axis(xv, 1)?;
        let m1 = t.max_axis(xv, 2)?;
        let seg = t.segment_max(yv, &[(0, 3), (3, 1), (4, 3)])?;
        Ok(vec![m0, m1, seg])
    })?;

    let mut s = ParamStore::new();
    let node = FusionNode::new(&mut ParamBuilder::new(&mut s, 5), "node", 2, 3).map_err(err)?;
    let i0 = s.add("p0", random_tensor(&mut r, &[4, 4, 3]));
    let i1 = s.add("p1", random_tensor(&mut r, &[4, 4, 3]));
    jitter(&mut s, &mut r);
    suite.run("BiFPN node", &s, |t| {
        let (a, b) = (t.param(i0), t.param(i1));
        Ok(vec![node.forward(t, &[a, b])?])
    })?;

    let mut s = ParamStore::new();
    let bifpn = BiFpn::new(&mut ParamBuilder::new(&mut s, 6), "bifpn", 3, 2, 1).map_err(err)?;
    let ids: Vec<_> = [[4usize, 4, 2], [2, 2, 2], [1, 1, 2]]
        .iter()
        .enumerate()
        .map(|(i, sh)| s.add(format!("l{i}"), random_tensor(&mut r, sh)))
        .collect();
    jitter(&mut s, &mut r);
    suite.run("BiFPN (3 levels)", &s, |t| {
        let l = levels_of(t, &ids, &[1, 2, 4]);
        Ok(bifpn.forward(t, &l)?.levels)
    })?;

    let mut s = ParamStore::new();
    let vfe = Vfe::new(&mut ParamBuilder::new(&mut s, 7), "vfe", 3).map_err(err)?;
    let spec = VoxelGridSpec {
        voxel_size: [10.0, 10.0, 5.0],
        max_points_per_voxel: 3,
        ..VoxelGridSpec::default()
    };
    let points: Vec<RadarPoint> = (0..9)
        .map(|i| RadarPoint {
            position: VcsPoint::new(
                3.0 + 2.3 * (i % 3) as f64 + 20.0 * (i / 3) as f64,
                -3.0 + 1.7 * i as f64,
                0.5 + 0.4 * (i % 4) as f64,
            ),
            vx: r.random_range(-5.0..5.0),
            vy: r.random_range(-5.0..5.0),
            rcs: r.random_range(-10.0..10.0),
        })
        .collect();
    let sample = voxelize(&points, &spec).map_err(err)?;
    jitter(&mut s, &mut r);
    suite.run("VFE + stack_z", &s, |t| {
        let f = vfe.forward(t, &sample)?;
        Ok(vec![f, stack_z(t, &sample, f)?])
    })?;

    let mut s = ParamStore::new();
    let refine = BevBackbone::new(&mut ParamBuilder::new(&mut s, 8), "refine", 2, 2).map_err(err)?;
    let x = s.add("bev", random_tensor(&mut r, &[8, 8, 2]));
    jitter(&mut s, &mut r);
    suite.run("BEV refinement", &s, |t| {
        let v = t.param(x);
        Ok(refine.forward(t, v)?.levels)
    })?;

    let mut s = ParamStore::new();
    let fusion = Fusion::new(&mut ParamBuilder::new(&mut s, 9), "fusion", 3, 3, 1).map_err(err)?;
    let cam: Vec<_> = [[4usize, 4, 2], [2, 2, 2], [1, 1, 2]]
        .iter()
        .enumerate()
        .map(|(i, sh)| s.add(format!("cam{i}"), random_tensor(&mut r, sh)))
        .collect();
    let rad: Vec<_> = [[4usize, 4, 1], [2, 2, 1], [1, 1, 1]]
        .iter()
        .enumerate()
        .map(|(i, sh)| s.add(format!("radar{i}"), random_tensor(&mut r, sh)))
        .collect();
    jitter(&mut s, &mut r);
    suite.run("fusion (concat + BiFPN)", &s, |t| {
        let c = levels_of(t, &cam, &[1, 2, 4]);
        let d = levels_of(t, &rad, &[1, 2, 4]);
        Ok(fusion.forward(t, &c, &d)?.levels)
    })?;

    let mut s = ParamStore::new();
    let head = Head::new(&mut ParamBuilder::new(&mut s, 10), "head", 2, DELTAS_3D).map_err(err)?;
    let hl: Vec<_> = [[2usize, 2, 2], [1, 1, 2]]
        .iter()
        .enumerate()
        .map(|(i, sh)| s.add(format!("h{i}"), random_tensor(&mut r, sh)))
        .collect();
    jitter(&mut s, &mut r);
    suite.run("detection head", &s, |t| {
        let l = levels_of(t, &hl, &[1, 2]);
        Ok(head
            .forward(t, &l)?
            .into_iter()
            .flat_map(|o| [o.logits, o.deltas])
            .collect())
    })?;

    // align -> aggregate -> refine -> fuse on a tiny camera/BEV setup
    let mut s = ParamStore::new();
    let config = CdsmConfig {
        cam_channels: 2,
        ..CdsmConfig::default()
    };
    let cdsm = Cdsm::new(&mut ParamBuilder::new(&mut s, 11), "cdsm", config, 2, Some(1)).map_err(err)?;
    let image_levels: Vec<_> = [[8usize, 16, 2], [4, 8, 2], [2, 4, 2]]
        .iter()
        .enumerate()
        .map(|(i, sh)| s.add(format!("img{i}"), random_tensor(&mut r, sh)))
        .collect();
    let radar_levels: Vec<_> = [[8usize, 8, 1], [4, 4, 1], [2, 2, 1]]
        .iter()
        .enumerate()
        .map(|(i, sh)| s.add(format!("rad{i}"), random_tensor(&mut r, sh)))
        .collect();
    s.freeze_prefixes(&["rad"]);
    let calib = CameraCalib {
        fx: 60.0,
        fy: 60.0,
        cx: 64.0,
        cy: 32.0,
        pose: Pose {
            rotation: Quaternion::IDENTITY,
            translation: VcsPoint::new(0.0, 0.0, 1.5),
        },
    };
    let grid = BevGrid {
        fov: FovBox::default(),
        nx: 8,
        ny: 8,
    };
    let mask = FovMask::from_calib(&calib, &grid, 128);
    jitter(&mut s, &mut r);
    suite.run("align + aggregate + refine + fuse", &s, |t| {
        let img = levels_of(t, &image_levels, &[8, 16, 32]);
        let rad = levels_of(t, &radar_levels, &[1, 2, 4]);
        Ok(cdsm.forward(t, &img, &rad, &calib, &mask)?.levels)
    })?;

    let logits: Vec<f64> = (0..30).map(|_| r.random_range(-3.0..3.0)).collect();
    let targets: Vec<AnchorTarget> = (0..30)
        .map(|i| match i % 3 {
            0 => AnchorTarget::Positive,
            1 => AnchorTarget::Negative,
            _ => AnchorTarget::Ignore,
        })
        .collect();
    let fp = FocalParams::default();
    let (_, grad) = focal_loss_logits(&logits, &targets, fp);
    let rel = check_function_gradient(|z| focal_loss_logits(z, &targets, fp).0, &logits, &grad);
    suite.function("focal loss", rel, logits.len());

    let pred: Vec<f64> = (0..30 * 2).map(|_| r.random_range(-2.0..2.0)).collect();
    let target: Vec<f64> = (0..30 * 2).map(|_| r.random_range(-2.0..2.0)).collect();
    let weights = [1.0, 0.5];
    let (_, grad) = weighted_mse(&pred, &target, &targets, &weights);
    let rel = check_function_gradient(|p| weighted_mse(p, &target, &targets, &weights).0, &pred, &grad);
    suite.function("weighted MSE", rel, pred.len());

    let worst = suite
        .results
        .iter()
        .max_by(|a, b| a.1.worst_rel_err.total_cmp(&b.1.worst_rel_err))
        .expect("suite is non-empty");
    for (name, g) in &suite.results {
        ensure(g.worst_rel_err < GRAD_TOL && g.worst_rel_err.is_finite(), || {
            format!("{name}: rel err {:.2e} on `{}`", g.worst_rel_err, g.worst_param)
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1} s (limit 120 s)"))?;
    Ok(format!(
        "{} checks, worst rel err {:.2e} ({}), largest fixture {} values, {secs:.1} s",
        suite.results.len(),
        worst.1.worst_rel_err,
        worst.0,
        suite.largest
    ))
}

// ---------------------------------------------------------------------------
// 3. NMS, box coding and AP against reference implementations

/// Reference NMS: repeatedly take the best remaining box (ties by index)
/// and discard everything overlapping it by more than `thr`.
fn brute_nms(scores: &[f64], thr: f64, iou: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut alive = vec![true; scores.len()];
    let mut keep = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if alive[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        keep.push(b);
        alive[b] = false;
        for (j, a) in alive.iter_mut().enumerate() {
            if *a && iou(b, j) > thr {
                *a = false;
            }
        }
    }
    keep
}

fn wrap(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let w = a.rem_euclid(t);
    if w > std::f64::consts::PI {
        w - t
    } else {
        w
    }
}

fn criterion_3(ctx: &mut Ctx) -> Outcome {
    let mut r = rng(3);
    for scene in 0..100 {
        let boxes2: Vec<Box2D> = (0..50)
            .map(|_| {
                let (u, v) = (r.random_range(0.0..120.0), r.random_range(0.0..80.0));
                let (w, h) = (r.random_range(5.0..40.0), r.random_range(5.0..40.0));
                Box2D {
                    u_min: u,
                    v_min: v,
                    u_max: u + w,
                    v_max: v + h,
                    class_id: CAR,
                    score: (r.random_range(0.0..1.0f64) * 20.0).round() / 20.0,
                }
            })
            .collect();
        let scores: Vec<f64> = boxes2.iter().map(|b| b.score).collect();
        let expect: Vec<Box2D> = brute_nms(&scores, 0.5, |a, b| boxes2[a].iou(&boxes2[b]))
            .into_iter()
            .map(|i| boxes2[i])
            .collect();
        ensure(nms_2d(&boxes2, 0.5) == expect, || {
            format!("2D NMS differs on scene {scene}")
        })?;

        let boxes3: Vec<Box3D> = (0..50)
            .map(|_| {
                Box3D::new(
                    VcsPoint::new(r.random_range(0.0..25.0), r.random_range(-10.0..10.0), 0.8),
                    r.random_range(3.0..6.0),
                    r.random_range(1.5..2.5),
                    1.6,
                    r.random_range(-3.2..3.2),
                    CAR,
                )
                .with_score((r.random_range(0.0..1.0f64) * 20.0).round() / 20.0)
            })
            .collect();
        let scores: Vec<f64> = boxes3.iter().map(|b| b.score).collect();
        let expect: Vec<Box3D> = brute_nms(&scores, 0.3, |a, b| boxes3[a].bev_iou(&boxes3[b]))
            .into_iter()
            .map(|i| boxes3[i])
            .collect();
        ensure(nms_bev(&boxes3, 0.3) == expect, || {
            format!("BEV NMS differs on scene {scene}")
        })?;
    }

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = Anchor2D {
            cx: r.random_range(0.0..512.0),
            cy: r.random_range(0.0..384.0),
            w: r.random_range(8.0..200.0),
            h: r.random_range(8.0..200.0),
        };
        let (u, v) = (r.random_range(-50.0..550.0), r.random_range(-50.0..400.0));
        let b = Box2D {
            u_min: u,
            v_min: v,
            u_max: u + r.random_range(1.0..300.0),
            v_max: v + r.random_range(1.0..300.0),
            class_id: CAR,
            score: 1.0,
        };
        let d = encode_2d(&b, &a).map_err(err)?;
        let back = decode_2d(&d, &a, CAR, 1.0);
        for (x, y) in [
            (b.u_min, back.u_min),
            (b.v_min, back.v_min),
            (b.u_max, back.u_max),
            (b.v_max, back.v_max),
        ] {
            worst = worst.max((x - y).abs());
        }

        let a = Anchor3D {
            x: r.random_range(0.0..80.0),
            y: r.random_range(-40.0..40.0),
            z: 0.8,
            length: r.random_range(2.0..6.0),
            width: r.random_range(1.0..3.0),
            height: 1.6,
            yaw: [0.0, std::f64::consts::FRAC_PI_2][r.random_range(0..2)],
        };
        let b = Box3D::new(
            VcsPoint::new(
                r.random_range(0.0..80.0),
                r.random_range(-40.0..40.0),
                r.random_range(0.0..3.0),
            ),
            r.random_range(0.5..8.0),
            r.random_range(0.5..4.0),
            r.random_range(0.5..3.0),
            r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            CAR,
        );
        let d = encode_3d(&b, &a).map_err(err)?;
        let back = decode_3d(&d, &a, CAR, 1.0);
        for (x, y) in [
            (b.center.x, back.center.x),
            (b.center.y, back.center.y),
            (b.center.z, back.center.z),
            (b.length, back.length),
            (b.width, back.width),
            (b.height, back.height),
        ] {
            worst = worst.max((x - y).abs());
        }
        worst = worst.max(wrap(b.yaw - back.yaw).abs());
    }
    ensure(worst <= 1e-6, || format!("box coding round trip error {worst:.2e}"))?;

    // Ranks: TP, FP, TP, TP, TP over 4 labels. Precision envelope is 1 up to
    // recall 0.25 (26 of the 101 recall points) and 0.8 after: 86/101.
    let expect = 86.0 / 101.0;
    let scored = [(0.9, true), (0.8, false), (0.7, true), (0.6, true), (0.5, true)];
    let ap = average_precision(&scored, 4).ap;
    ensure((ap - expect).abs() <= 1e-9, || format!("fixture AP {ap} != {expect}"))?;
    let labels: Vec<Box3D> = (0..4)
        .map(|i| Box3D::new(VcsPoint::new(10.0 + 10.0 * i as f64, 0.0, 0.8), 4.5, 1.9, 1.6, 0.0, CAR))
        .collect();
    let mut preds: Vec<Box3D> = labels.to_vec();
    preds.insert(1, Box3D::new(VcsPoint::new(60.0, 20.0, 0.8), 4.5, 1.9, 1.6, 0.0, CAR));
    for (p, s) in preds.iter_mut().zip([0.9, 0.8, 0.7, 0.6, 0.5]) {
        p.score = s;
    }
    let report = evaluate_3d(&[(preds, labels)], &nuscenes_specs(false)).map_err(err)?;
    let ap2 = report.ap_at(2.0).unwrap_or(f64::NAN);
    ensure((ap2 - expect).abs() <= 1e-9, || {
        format!("fixture AP via association {ap2} != {expect}")
    })?;
    ctx.reports.push(("AP fixture".into(), report));
    Ok(format!(
        "NMS exact on 100×50 boxes (2D and BEV), coding round trip max err {worst:.1e}, fixture AP {ap:.12}"
    ))
}

// ---------------------------------------------------------------------------
// 4. Voxelizer conservation

fn oracle_in_fov(p: &VcsPoint, f: &FovBox) -> bool {
    p.x >= f.x_min && p.x < f.x_max && p.y >= f.y_min && p.y < f.y_max && p.z >= f.z_min && p.z < f.z_max
}

fn criterion_4(_: &mut Ctx) -> Outcome {
    let mut r = rng(4);
    let mut total_points = 0;
    let mut total_dropped = 0;
    for cloud in 0..100 {
        let spec = if cloud % 2 == 0 {
            VoxelGridSpec::default()
        } else {
            VoxelGridSpec {
                voxel_size: [2.0, 2.0, 1.0],
                max_points_per_voxel: 3,
                ..VoxelGridSpec::default()
            }
        };
        let fov = spec.fov;
        let hotspots: Vec<[f64; 3]> = (0..4)
            .map(|_| {
                [
                    r.random_range(0.0..80.0),
                    r.random_range(-40.0..40.0),
                    r.random_range(0.0..5.0),
                ]
            })
            .collect();
        let n = r.random_range(0..300);
        let points: Vec<RadarPoint> = (0..n)
            .map(|_| {
                let position = if r.random_bool(0.4) {
                    let h = hotspots[r.random_range(0..hotspots.len())];
                    VcsPoint::new(
                        h[0] + r.random_range(-0.4..0.4),
                        h[1] + r.random_range(-0.4..0.4),
                        h[2] + r.random_range(-0.4..0.4),
                    )
                } else {
                    VcsPoint::new(
                        r.random_range(-10.0..90.0),
                        r.random_range(-50.0..50.0),
                        r.random_range(-1.0..6.0),
                    )
                };
                RadarPoint {
                    position,
                    vx: r.random_range(-10.0..10.0),
                    vy: r.random_range(-10.0..10.0),
                    rcs: r.random_range(-20.0..20.0),
                }
            })
            .collect();
        let inside: Vec<RadarPoint> = points
            .iter()
            .filter(|p| oracle_in_fov(&p.position, &fov))
            .copied()
            .collect();
        ensure(clip_pointcloud(&points, &fov) == inside, || {
            format!("cloud {cloud}: clipping differs")
        })?;
        let sample = voxelize(&inside, &spec).map_err(err)?;

        let mut cells: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
        for (i, p) in inside.iter().enumerate() {
            let q = [
                p.position.x - fov.x_min,
                p.position.y - fov.y_min,
                p.position.z - fov.z_min,
            ];
            let cell: [usize; 3] = std::array::from_fn(|a| (q[a] / spec.voxel_size[a]).floor() as usize);
            cells.entry(cell).or_default().push(i);
        }
        let keys: Vec<[usize; 3]> = cells.keys().copied().collect();
        ensure(sample.indices == keys, || {
            format!("cloud {cloud}: occupied voxels differ from oracle")
        })?;
        let cap = spec.max_points_per_voxel;
        let mut stored = 0;
        for (v, (cell, members)) in cells.iter().enumerate() {
            let count = sample.counts[v];
            ensure(count == members.len().min(cap) && count <= cap, || {
                format!(
                    "cloud {cloud}: voxel {cell:?} holds {count} of {} (cap {cap})",
                    members.len()
                )
            })?;
            let center = spec.cell_center(*cell);
            for (row, &i) in sample.points(v).zip(members) {
                ensure(row == point_features(&inside[i], center), || {
                    format!("cloud {cloud}: voxel {cell:?} stores the wrong point")
                })?;
            }
            stored += count;
            total_dropped += members.len() - count;
        }
        ensure(cells.values().map(Vec::len).sum::<usize>() == inside.len(), || {
            format!("cloud {cloud}: points lost or duplicated")
        })?;
        let _ = stored;
        total_points += inside.len();

        let width = 3;
        let feats = Tensor::from_fn(&[sample.len(), width], |i| 1.0 + (i[0] * width + i[1]) as f64);
        let grid = stack_z_tensor(&sample, &feats).map_err(err)?;
        let [nx, ny, nz] = sample.dims;
        ensure(grid.shape() == [nx, ny, nz * width], || {
            format!("cloud {cloud}: stacked shape {:?}", grid.shape())
        })?;
        let mut expect = Tensor::zeros(&[nx, ny, nz * width]);
        for (v, &[ix, iy, iz]) in sample.indices.iter().enumerate() {
            for f in 0..width {
                expect.data_mut()[(ix * ny + iy) * nz * width + iz * width + f] = feats.data()[v * width + f];
            }
        }
        ensure(grid.data == expect, || {
            format!("cloud {cloud}: stack_z placement differs from oracle")
        })?;
    }
    Ok(format!(
        "100 clouds, {total_points} in-FOV points, {total_dropped} over cap dropped, stack_z exact"
    ))
}

// ---------------------------------------------------------------------------
// 5. Shape contract

fn criterion_5(_: &mut Ctx) -> Outcome {
    let mut r = rng(5);
    let mut s = ParamStore::new();
    let backbone = ImageBackbone::new(&mut ParamBuilder::new(&mut s, 1), "img", 3, 4).map_err(err)?;
    let bev = BevBackbone::new(&mut ParamBuilder::new(&mut s, 2), "bev", 5, 4).map_err(err)?;
    let mut tape = Tape::new(&s);
    let image = tape.input(random_tensor(&mut r, &[384, 512, 3]));
    let levels = backbone.forward(&mut tape, image).map_err(err)?;
    let got: Vec<(usize, usize)> = levels.shapes(&tape).iter().map(|sh| (sh[1], sh[0])).collect();
    let want = vec![(64, 48), (32, 24), (16, 12), (8, 6), (4, 3)];
    ensure(got == want, || format!("image levels (W×H) {got:?}, expected {want:?}"))?;
    let grid = tape.input(random_tensor(&mut r, &[80, 80, 5]));
    let bl = bev.forward(&mut tape, grid).map_err(err)?;
    let got_bev: Vec<(usize, usize)> = bl.shapes(&tape).iter().map(|sh| (sh[0], sh[1])).collect();
    ensure(got_bev == vec![(80, 80), (40, 40), (20, 20)], || {
        format!("BEV levels {got_bev:?}")
    })?;
    drop(tape);

    let mut s = ParamStore::new();
    let cdsm = Cdsm::new(
        &mut ParamBuilder::new(&mut s, 3),
        "cdsm",
        CdsmConfig {
            cam_channels: 2,
            ..CdsmConfig::default()
        },
        2,
        None,
    )
    .map_err(err)?;
    let grid = BevGrid::default();
    let mut in_mask = 0;
    for c in 0..100 {
        let fx = r.random_range(150.0..600.0);
        let calib = CameraCalib {
            fx,
            fy: fx * r.random_range(0.9..1.1),
            cx: 256.0 + r.random_range(-40.0..40.0),
            cy: 192.0 + r.random_range(-30.0..30.0),
            pose: Pose {
                rotation: Quaternion::from_axis_angle([0.0, 0.0, 1.0], r.random_range(-0.3..0.3)),
                translation: VcsPoint::new(
                    r.random_range(-2.0..2.0),
                    r.random_range(-1.0..1.0),
                    r.random_range(1.0..2.0),
                ),
            },
        };
        let mask = FovMask::from_calib(&calib, &grid, 512);
        let mut tape = Tape::new(&s);
        let img = LevelSet {
            levels: [[48usize, 64, 2], [24, 32, 2], [12, 16, 2]]
                .iter()
                .map(|sh| tape.input(Tensor::from_fn(sh, |_| r.random_range(0.1..1.0))))
                .collect(),
            strides: vec![8, 16, 32],
        };
        let out = cdsm.camera_bev(&mut tape, &img, &calib, &mask).map_err(err)?;
        let v = tape.value(out);
        ensure(v.shape() == [80, 80, 2], || {
            format!("calibration {c}: BEV map {:?}", v.shape())
        })?;
        for ix in 0..80 {
            for iy in 0..80 {
                let cell = &v.data()[(ix * 80 + iy) * 2..(ix * 80 + iy) * 2 + 2];
                if !mask.get(ix, iy) {
                    ensure(cell.iter().all(|&x| x == 0.0), || {
                        format!("calibration {c}: cell ({ix},{iy}) outside the mask is nonzero")
                    })?;
                }
            }
        }
        in_mask += mask.count();
    }
    ensure(in_mask > 0, || "every mask was empty".into())?;
    Ok(format!(
        "image {want:?}, BEV 80/40/20, aggregation zero outside mask on 100 calibrations (mean {} masked-in cells)",
        in_mask / 100
    ))
}

// ---------------------------------------------------------------------------
// Desk-scale training setup shared by criteria 6 and 7

fn desk_synth() -> SynthConfig {
    SynthConfig {
        image_width: 256,
        image_height: 128,
        focal_px: Some(200.0),
        ..SynthConfig::default()
    }
}

fn desk_model(cell: f64) -> ModelConfig {
    let mut m = ModelConfig {
        image_width: 256,
        image_height: 128,
        image_channels: 8,
        image_bifpn_repeats: 1,
        vfe_width: 4,
        radar_channels: 8,
        ..ModelConfig::default()
    };
    m.cdsm.cam_channels = 8;
    m.voxels.voxel_size = [cell, cell, 1.0];
    m
}

fn desk_train(regime: Regime, seed: u64, model: &ModelConfig, max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        regime,
        seed,
        lr: 2e-3,
        max_epochs,
        patience,
        batch_size: 1,
        model: model.clone(),
        ..TrainConfig::default()
    }
}

/// NuScenes-style report of `model` on `scenes` against `filter` labels.
fn evaluate_model(model: &Model, scenes: &[Scene], filter: FilterMode) -> cdsm_core::Result<EvalReport> {
    let prepared = prepare_all(model, scenes, false)?;
    let pairs = prepared
        .iter()
        .zip(scenes)
        .map(|(p, s)| {
            let gt = filter_labels(&s.labels, filter, CAR, &model.config.voxels.fov)
                .iter()
                .map(|l| l.box3d)
                .collect();
            Ok((model.detect(p)?.boxes3d, gt))
        })
        .collect::<cdsm_core::Result<Vec<_>>>()?;
    evaluate_3d(&pairs, &nuscenes_specs(false))
}

// ---------------------------------------------------------------------------
// 6. Overfitting an 8-scene set

const OVERFIT_TARGET: f64 = 0.9;
const OVERFIT_EPOCHS: usize = 500;
const OVERFIT_EVAL_EVERY: usize = 10;

struct OverfitRun {
    log: Vec<cdsm_core::train::EpochMetrics>,
    params: ParamStore,
    report: Option<EvalReport>,
    secs: f64,
}

fn overfit_run(scenes: &[Scene]) -> Result<OverfitRun, String> {
    let start = Instant::now();
    let model = desk_model(1.0);
    // fine-tuning from a fresh initialisation trains the whole fusion model
    let cfg = desk_train(Regime::FusionFinetune, 6, &model, OVERFIT_EPOCHS, OVERFIT_EPOCHS);
    let init = Model::new(&model, Regime::FusionFinetune, 6).map_err(err)?;
    let pre = Pretrained {
        fusion: Some(init.store),
        ..Pretrained::default()
    };
    let mut report = None;
    let out = train_with(&cfg, scenes, scenes, &pre, |m, e| {
        if e.epoch % OVERFIT_EVAL_EVERY != 0 {
            return Ok(false);
        }
        let r = evaluate_model(m, scenes, FilterMode::Fusion3d)?;
        let ap = r.ap_at(2.0).unwrap_or(0.0);
        eprintln!(
            "  [6] epoch {:>3} train loss {:.4} AP(DIST2) {ap:.3}",
            e.epoch,
            e.train_loss.unwrap_or(f64::NAN)
        );
        report = Some(r);
        Ok(ap >= OVERFIT_TARGET)
    })
    .map_err(err)?;
    Ok(OverfitRun {
        log: out.log,
        params: out.last_params,
        report,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn criterion_6(ctx: &mut Ctx) -> Outcome {
    let syn = desk_synth();
    let scenes: Vec<Scene> = (0..8).map(|i| generate_synthetic_scene(600 + i, &syn).0).collect();
    let a = overfit_run(&scenes)?;
    let b = overfit_run(&scenes)?;
    ensure(a.log == b.log, || {
        "two runs with the same seed logged different metrics".into()
    })?;
    let same_params = a.params.len() == b.params.len()
        && a.params
            .iter()
            .zip(b.params.iter())
            .all(|((_, p), (_, q))| p.value == q.value);
    ensure(same_params, || {
        "two runs with the same seed ended with different parameters".into()
    })?;
    let report = a.report.ok_or("no evaluation was run")?;
    let ap = report.ap_at(2.0).unwrap_or(0.0);
    let epochs = a.log.len() - 1;
    let first = a.log[1].train_loss.unwrap_or(f64::NAN);
    let last = a.log[epochs].train_loss.unwrap_or(f64::NAN);
    ctx.reports.push(("overfit".into(), report));
    ensure(ap >= OVERFIT_TARGET, || {
        format!("AP(DIST2) {ap:.3} after {epochs} epochs")
    })?;
    ensure(a.secs < 900.0, || format!("took {:.0} s (limit 900 s)", a.secs))?;
    Ok(format!(
        "AP(DIST2) {ap:.3} at epoch {epochs}, train loss {first:.3} -> {last:.3} ({:.1}%), {:.0} s per run, deterministic",
        100.0 * last / first,
        a.secs
    ))
}

// ---------------------------------------------------------------------------
// 7. Fusion dominance ordering

const ORDER_SEEDS: [u64; 3] = [0, 1, 2];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_7(ctx: &mut Ctx) -> Outcome {
    let syn = SynthConfig {
        depth_cue_noise: 2.0,
        radar_dropout: 0.5,
        ..desk_synth()
    };
    let gen =
        |base: u64, n: u64| -> Vec<Scene> { (0..n).map(|i| generate_synthetic_scene(base + i, &syn).0).collect() };
    let (train_set, val_set, test_set) = (gen(7000, 128), gen(8000, 16), gen(9000, 200));
    let model = desk_model(2.0);
    let (epochs, patience) = (25, 5);
    let names = ["cam3d", "radar3d", "fusion_frozen", "fusion_finetune"];
    let mut maps: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for seed in ORDER_SEEDS {
        let start = Instant::now();
        let cfg = |r| desk_train(r, seed, &model, epochs, patience);
        let cam = train(&cfg(Regime::Cam3d), &train_set, &val_set, &Pretrained::default()).map_err(err)?;
        let radar = train(&cfg(Regime::Radar3d), &train_set, &val_set, &Pretrained::default()).map_err(err)?;
        let pre = Pretrained {
            camera: Some(cam.model.store.clone()),
            radar: Some(radar.model.store.clone()),
            fusion: None,
        };
        let frozen = train(&cfg(Regime::FusionFrozen), &train_set, &val_set, &pre).map_err(err)?;
        let pre = Pretrained {
            fusion: Some(frozen.model.store.clone()),
            ..Pretrained::default()
        };
        let tuned = train(&cfg(Regime::FusionFinetune), &train_set, &val_set, &pre).map_err(err)?;
        let mut line = format!("  [7] seed {seed}:");
        for (i, m) in [&cam.model, &radar.model, &frozen.model, &tuned.model]
            .into_iter()
            .enumerate()
        {
            let report = evaluate_model(m, &test_set, FilterMode::Fusion3d).map_err(err)?;
            let ap = report.ap_at(2.0).unwrap_or(f64::NAN);
            line += &format!(" {} {ap:.3}", names[i]);
            maps[i].push(ap);
            ctx.reports.push((format!("{} seed {seed}", names[i]), report));
        }
        eprintln!(
            "{line} (fine-tune best epoch {}, {:.0} s)",
            tuned.best_epoch,
            start.elapsed().as_secs_f64()
        );
    }
    let med: Vec<f64> = maps.iter().map(|v| median(v.clone())).collect();
    let summary = names
        .iter()
        .zip(&med)
        .map(|(n, m)| format!("{n} {m:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(med[2] >= med[0] && med[2] >= med[1], || {
        format!("frozen fusion below a single sensor: {summary}")
    })?;
    ensure(med[3] >= med[2], || {
        format!("fine-tuned fusion below frozen: {summary}")
    })?;
    Ok(format!("median AP(DIST2) over 3 seeds on 200 scenes: {summary}"))
}

// ---------------------------------------------------------------------------
// 8. Evaluator monotonicity on every evaluated run

fn random_eval(r: &mut ChaCha8Rng) -> Result<EvalReport, String> {
    let scenes: Vec<(Vec<Box3D>, Vec<Box3D>)> = (0..5)
        .map(|_| {
            let labels: Vec<Box3D> = (0..r.random_range(0..6))
                .map(|_| {
                    Box3D::new(
                        VcsPoint::new(r.random_range(0.0..80.0), r.random_range(-40.0..40.0), 0.8),
                        4.5,
                        1.9,
                        1.6,
                        0.0,
                        CAR,
                    )
                })
                .collect();
            let mut preds = Vec::new();
            for l in &labels {
                if r.random_bool(0.8) {
                    let mut p = *l;
                    p.center.x += r.random_range(-3.0..3.0);
                    p.center.y += r.random_range(-3.0..3.0);
                    preds.push(p);
                }
            }
            for _ in 0..r.random_range(0..4) {
                preds.push(Box3D::new(
                    VcsPoint::new(r.random_range(0.0..80.0), r.random_range(-40.0..40.0), 0.8),
                    4.5,
                    1.9,
                    1.6,
                    0.0,
                    CAR,
                ));
            }
            for p in &mut preds {
                p.score = r.random_range(0.0..1.0);
            }
            (preds, labels)
        })
        .collect();
    evaluate_3d(&scenes, &nuscenes_specs(false)).map_err(err)
}

fn check_monotone(name: &str, report: &EvalReport) -> Result<(), String> {
    let aps: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&t| report.ap_at(t).ok_or(format!("{name}: no DIST{t} result")))
        .collect::<Result<_, _>>()?;
    if report.undefined {
        return Ok(());
    }
    for w in aps.windows(2) {
        ensure(w[0] <= w[1], || {
            format!("{name}: AP not monotone in threshold: {aps:?}")
        })?;
    }
    let mean = aps.iter().sum::<f64>() / 4.0;
    ensure((report.map - mean).abs() <= 1e-12, || {
        format!("{name}: mAP {} != mean {mean}", report.map)
    })
}

fn criterion_8(ctx: &mut Ctx) -> Outcome {
    let mut r = rng(8);
    for i in 0..200 {
        let rep = random_eval(&mut r)?;
        ctx.reports.push((format!("random {i}"), rep));
    }
    for (name, rep) in &ctx.reports {
        check_monotone(name, rep)?;
    }
    let runs = ctx.reports.iter().filter(|(n, _)| !n.starts_with("random")).count();
    Ok(format!("{} reports ({runs} from runs, 200 random)", ctx.reports.len()))
}

// ---------------------------------------------------------------------------
// 9. Label filtering truth table

fn criterion_9(_: &mut Ctx) -> Outcome {
    let fov = FovBox::default();
    let visibilities = [0.2, 0.4, 0.8];
    let radar_counts = [0u32, 1, 3];
    let mut labels = Vec::new();
    for &v in &visibilities {
        for &n in &radar_counts {
            labels.push(Label {
                box3d: Box3D::new(
                    VcsPoint::new(10.0 + labels.len() as f64 * 5.0, 0.0, 0.8),
                    4.5,
                    1.9,
                    1.6,
                    0.0,
                    CAR,
                ),
                visibility: v,
                n_lidar_points: 10,
                n_radar_points: n,
            });
        }
    }
    // Rows: visibility 0.2, 0.4, 0.8; columns: 0, 1, 3 radar points.
    let camera = [[false, false, false], [false, false, false], [true, true, true]];
    let radar = [[false, true, true], [false, true, true], [false, true, true]];
    let ids = |mode| -> Vec<usize> {
        let kept = filter_labels(&labels, mode, CAR, &fov);
        labels
            .iter()
            .enumerate()
            .filter(|(_, l)| kept.contains(l))
            .map(|(i, _)| i)
            .collect()
    };
    let table = |t: [[bool; 3]; 3]| -> Vec<usize> { (0..9).filter(|&i| t[i / 3][i % 3]).collect() };
    let union: Vec<usize> = (0..9)
        .filter(|&i| camera[i / 3][i % 3] || radar[i / 3][i % 3])
        .collect();
    ensure(ids(FilterMode::Camera2d) == table(camera), || {
        format!("camera2d kept {:?}", ids(FilterMode::Camera2d))
    })?;
    ensure(ids(FilterMode::Radar3d) == table(radar), || {
        format!("radar3d kept {:?}", ids(FilterMode::Radar3d))
    })?;
    ensure(ids(FilterMode::Fusion3d) == union, || {
        format!("fusion3d kept {:?}", ids(FilterMode::Fusion3d))
    })?;

    let mut outside = labels[8];
    outside.box3d.center.x = 95.0;
    let mut other = labels[8];
    other.box3d.class_id = CAR + 1;
    for mode in [FilterMode::Camera2d, FilterMode::Radar3d, FilterMode::Fusion3d] {
        ensure(filter_labels(&[outside, other], mode, CAR, &fov).is_empty(), || {
            format!("{mode:?} kept an out-of-FOV or other-class label")
        })?;
    }
    Ok(format!(
        "9 cases exact: camera {:?}, radar {:?}, fusion {:?}",
        table(camera),
        table(radar),
        union
    ))
}

// ---------------------------------------------------------------------------
// 10. CLI reproducibility

const CLI_CONFIG: &str = r#"name = "acceptance"
seed = 11

[data]
train = 6
val = 2
test = 3

[synth]
image_width = 256
image_height = 128
focal_px = 200.0

[model]
image_width = 256
image_height = 128
image_channels = 8
image_bifpn_repeats = 1
vfe_width = 4
radar_channels = 8

[model.cdsm]
cam_channels = 8

[model.voxels]
voxel_size = [2.0, 2.0, 1.0]

[train]
regime = "radar3d"
lr = 0.002
max_epochs = 40
batch_size = 1

[eval]
split = "test"
"#;

fn cdsm(root: &Path, args: &[&str]) -> Result<(i32, String), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cdsm"))
        .args(args)
        .env("CDSM_RUN_ROOT", root)
        .output()
        .map_err(|e| format!("cannot run cdsm: {e}"))?;
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    Ok((out.status.code().unwrap_or(-1), text))
}

fn run_pipeline(root: &Path, config: &Path) -> Result<(), String> {
    let c = config.to_str().ok_or("non-UTF-8 path")?;
    for cmd in ["synth", "train", "infer", "eval", "render"] {
        let (code, text) = cdsm(root, &[cmd, "--config", c])?;
        ensure(code == 0, || format!("`cdsm {cmd}` exited {code}: {text}"))?;
    }
    Ok(())
}

fn criterion_10(ctx: &mut Ctx) -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let config = dir.path().join("experiment.toml");
    std::fs::write(&config, CLI_CONFIG).map_err(err)?;
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    run_pipeline(&a, &config)?;
    run_pipeline(&b, &config)?;

    let rel = Path::new("acceptance/eval/radar3d_test.json");
    let ra = std::fs::read(a.join(rel)).map_err(err)?;
    let rb = std::fs::read(b.join(rel)).map_err(err)?;
    ensure(ra == rb, || "eval reports of the two runs differ".into())?;
    let ckpt = Path::new("acceptance/checkpoints/radar3d.ckpt");
    ensure(
        std::fs::read(a.join(ckpt)).map_err(err)? == std::fs::read(b.join(ckpt)).map_err(err)?,
        || "checkpoints of the two runs differ".into(),
    )?;
    let report: EvalReport = serde_json::from_slice(&ra).map_err(err)?;
    ctx.reports.push(("cli run".into(), report));
    ensure(a.join("acceptance/eval/radar3d_test_pr.svg").exists(), || {
        "PR curve plot missing".into()
    })?;

    let palette = [[0u8, 0, 255], [255, 0, 255], [0, 255, 0], [255, 255, 0]];
    let render_dir = a.join("acceptance/render/radar3d/test");
    let mut seen = [false; 4];
    let mut files = 0;
    for entry in std::fs::read_dir(&render_dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
        if !name.ends_with(".png") {
            continue;
        }
        files += 1;
        let img = image::open(&path).map_err(err)?.to_rgb8();
        for px in img.pixels() {
            if let Some(k) = palette.iter().position(|c| *c == px.0) {
                seen[k] = true;
            } else if name.ends_with("_bev.png") {
                ensure(px.0[0] == px.0[1] && px.0[1] == px.0[2], || {
                    format!("{name}: color {:?} outside the render scheme", px.0)
                })?;
            }
        }
    }
    ensure(files == 6, || format!("expected 6 renders, found {files}"))?;
    ensure(seen[2] || seen[3], || "no ground truth drawn in green or yellow".into())?;
    ensure(seen[0] || seen[1], || "no predictions drawn in blue or magenta".into())?;

    let manifest = std::fs::read_to_string(a.join("acceptance/manifest.json")).map_err(err)?;
    ensure(
        manifest.contains("config_sha256") && manifest.contains("\"seed\": 11"),
        || "manifest lacks config hash or seed".into(),
    )?;
    let c = config.to_str().unwrap_or_default();
    let (code, _) = cdsm(&a, &["train", "--config", c, "--regime", "fusion_finetune"])?;
    ensure(code == 5, || format!("missing checkpoint exited {code}, expected 5"))?;
    let other = dir.path().join("changed.toml");
    std::fs::write(&other, CLI_CONFIG.replace("max_epochs = 40", "max_epochs = 41")).map_err(err)?;
    let (code, _) = cdsm(&a, &["eval", "--config", other.to_str().unwrap_or_default()])?;
    ensure(code == 3, || {
        format!("reusing a run directory with a changed config exited {code}, expected 3")
    })?;

    let names = ["blue", "magenta", "green", "yellow"];
    let used: Vec<&str> = names.iter().zip(seen).filter(|(_, s)| *s).map(|(n, _)| *n).collect();
    Ok(format!(
        "pipeline x2 identical report and checkpoint, {files} renders using {used:?}"
    ))
}

// ---------------------------------------------------------------------------

type Criterion = (usize, &'static str, fn(&mut Ctx) -> Outcome);

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [Criterion; 10] = [
        (1, "CDSM rotation correctness", criterion_1),
        (2, "gradient integrity", criterion_2),
        (3, "oracle equivalence", criterion_3),
        (4, "voxelizer conservation", criterion_4),
        (5, "pipeline shape contract", criterion_5),
        (6, "desk-scale learning", criterion_6),
        (7, "fusion dominance ordering", criterion_7),
        (9, "label filtering truth table", criterion_9),
        (10, "CLI reproducibility", criterion_10),
        (8, "evaluator monotonicity", criterion_8),
    ];
    let mut ctx = Ctx::default();
    let mut lines = BTreeMap::new();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        eprintln!("[{id}] {name} ...");
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(&mut ctx)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(detail) => format!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                format!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1} s]")
            }
        };
        eprintln!("{line}");
        lines.insert(id, line);
    }
    println!();
    for line in lines.values() {
        println!("{line}");
    }
    println!("{} criteria run, {failed} failed", lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
