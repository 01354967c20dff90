use std::hint::black_box;

use cdsm_core::dataio::{clip_pointcloud, generate_synthetic_scene, SynthConfig, CAR};
use cdsm_core::detector::nms_bev;
use cdsm_core::geometry::{cdsm_rotate, AxisLabel, CAMERA_TO_BEV};
use cdsm_core::tensornet::{ParamStore, Tape};
use cdsm_core::train::{Model, ModelConfig, Regime, TrainConfig};
use cdsm_core::voxelizer::{voxelize, VoxelGridSpec};
use cdsm_core::{Box3D, OrientedTensor, RadarPoint, Tensor, VcsPoint};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::from_fn(&[80, 80, 16], |_| r.random_range(-1.0..1.0)));
    let w = s.add("w", Tensor::from_fn(&[3, 3, 16, 16], |_| r.random_range(-0.1..0.1)));
    c.bench_function("conv3x3 80x80x16 forward+backward", |b| {
        b.iter(|| {
            let mut t = Tape::new(&s);
            let (xv, wv) = (t.param(x), t.param(w));
            let y = t.conv2d(xv, wv, None, 1).unwrap();
            let seed = Tensor::full(t.value(y).shape(), 1.0);
            black_box(t.backward(&[(y, &seed)]).unwrap());
        })
    });
}

fn rotation(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let data = Tensor::from_fn(&[12, 16, 80, 8], |_| r.random_range(-1.0..1.0));
    let mut labels = OrientedTensor::camera_labels();
    labels.push(AxisLabel::channel(None));
    let t = OrientedTensor::new(data, labels).unwrap();
    c.bench_function("camera-to-BEV rotation 12x16x80x8", |b| {
        b.iter(|| black_box(cdsm_rotate(&t, &CAMERA_TO_BEV).unwrap()))
    });
}

fn voxelization(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let spec = VoxelGridSpec::default();
    let points: Vec<RadarPoint> = (0..2000)
        .map(|_| RadarPoint {
            position: VcsPoint::new(
                r.random_range(-5.0..85.0),
                r.random_range(-45.0..45.0),
                r.random_range(-1.0..6.0),
            ),
            vx: 0.0,
            vy: 0.0,
            rcs: 1.0,
        })
        .collect();
    c.bench_function("clip + voxelize 2000 points", |b| {
        b.iter(|| black_box(voxelize(&clip_pointcloud(&points, &spec.fov), &spec).unwrap()))
    });
}

fn nms(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let boxes: Vec<Box3D> = (0..500)
        .map(|_| {
            Box3D::new(
                VcsPoint::new(r.random_range(0.0..80.0), r.random_range(-40.0..40.0), 0.8),
                4.5,
                1.9,
                1.6,
                r.random_range(-3.1..3.1),
                CAR,
            )
            .with_score(r.random_range(0.0..1.0))
        })
        .collect();
    c.bench_function("BEV NMS 500 boxes", |b| b.iter(|| black_box(nms_bev(&boxes, 0.3))));
}

fn training_step(c: &mut Criterion) {
    let synth = SynthConfig {
        image_width: 256,
        image_height: 128,
        focal_px: Some(200.0),
        ..SynthConfig::default()
    };
    let mut config = ModelConfig {
        image_width: 256,
        image_height: 128,
        image_channels: 8,
        image_bifpn_repeats: 1,
        vfe_width: 4,
        radar_channels: 8,
        ..ModelConfig::default()
    };
    config.cdsm.cam_channels = 8;
    let model = Model::new(&config, Regime::FusionFinetune, 0).unwrap();
    let scene = generate_synthetic_scene(0, &synth).0;
    let prepared = model.prepare(&scene, true).unwrap();
    let tc = TrainConfig {
        regime: Regime::FusionFinetune,
        ..TrainConfig::default()
    };
    let (focal, weights) = (tc.focal, tc.weights());
    let mut g = c.benchmark_group("fusion model");
    g.sample_size(10);
    g.bench_function("forward+backward one scene", |b| {
        b.iter(|| black_box(model.sample_loss(&prepared, focal, &weights, true).unwrap()))
    });
    g.bench_function("inference one scene", |b| {
        b.iter(|| black_box(model.infer(&scene).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, conv, rotation, voxelization, nms, training_step);
criterion_main!(benches);
