//! Procedural driving scenes with exact ground truth.
//!
//! Cars are cuboids standing on a flat ground plane. The camera image is a
//! flat-shaded rendering over a textured ground; radar returns are sampled on
//! the car faces that look toward the sensor, plus uniform clutter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Box3D, Image, Label, RadarPoint, Scene, CAR};
use crate::geometry::{in_fov, project_to_image, CameraCalib, FovBox, Pose, Quaternion, VcsPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub image_width: usize,
    pub image_height: usize,
    /// Focal length in pixels; defaults to 400 px per 512 px of width.
    pub focal_px: Option<f64>,
    pub camera_height: f64,
    pub fov: FovBox,
    pub min_cars: usize,
    pub max_cars: usize,
    /// Forward placement range of car centers, meters.
    pub x_range: (f64, f64),
    /// Probability that a car ignores the camera frustum when placed.
    pub outside_camera_rate: f64,
    pub length_prior: (f64, f64),
    pub width_prior: (f64, f64),
    pub height_prior: (f64, f64),
    /// Minimum clearance between car footprints, meters.
    pub min_gap: f64,
    pub max_placement_retries: usize,
    /// Mean returns per car before dropout; at least one is always drawn.
    pub radar_points_per_car: f64,
    /// Probability of dropping each object return.
    pub radar_dropout: f64,
    /// Gaussian position noise of object returns, meters.
    pub radar_noise: f64,
    /// Mean number of clutter returns per scene.
    pub clutter_rate: f64,
    /// Standard deviation of the per-scene camera pitch jitter, degrees.
    pub depth_cue_noise: f64,
    pub lidar_points_per_car: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_width: 512,
            image_height: 384,
            focal_px: None,
            camera_height: 1.5,
            fov: FovBox::default(),
            min_cars: 1,
            max_cars: 6,
            x_range: (6.0, 72.0),
            outside_camera_rate: 0.1,
            length_prior: (4.5, 0.3),
            width_prior: (1.9, 0.1),
            height_prior: (1.6, 0.1),
            min_gap: 2.0,
            max_placement_retries: 50,
            radar_points_per_car: 3.0,
            radar_dropout: 0.0,
            radar_noise: 0.15,
            clutter_rate: 5.0,
            depth_cue_noise: 0.0,
            lidar_points_per_car: 60,
        }
    }
}

impl SynthConfig {
    /// Small images for fast tests.
    pub fn tiny() -> Self {
        SynthConfig {
            image_width: 128,
            image_height: 96,
            ..SynthConfig::default()
        }
    }

    pub fn focal(&self) -> f64 {
        self.focal_px.unwrap_or(400.0 * self.image_width as f64 / 512.0)
    }

    pub fn nominal_calib(&self) -> CameraCalib {
        let f = self.focal();
        CameraCalib {
            fx: f,
            fy: f,
            cx: self.image_width as f64 / 2.0,
            cy: self.image_height as f64 / 2.0,
            pose: Pose {
                rotation: Quaternion::IDENTITY,
                translation: VcsPoint::new(0.0, 0.0, self.camera_height),
            },
        }
    }
}

/// Outcome of placement for one generated scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub requested_cars: usize,
    pub placed_cars: usize,
    /// Set when placement gave up before reaching `requested_cars`.
    pub infeasible: bool,
}

struct Car {
    b: Box3D,
    color: [f64; 3],
    speed: f64,
}

const PALETTE: [[f64; 3]; 6] = [
    [0.80, 0.10, 0.10],
    [0.10, 0.25, 0.80],
    [0.92, 0.92, 0.90],
    [0.08, 0.08, 0.10],
    [0.85, 0.70, 0.10],
    [0.15, 0.60, 0.25],
];

fn normal(rng: &mut ChaCha8Rng, (mean, sd): (f64, f64)) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite prior").sample(rng)
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as usize
}

/// Deterministic per `seed`.
pub fn generate_synthetic_scene(seed: u64, cfg: &SynthConfig) -> (Scene, SynthReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut calib = cfg.nominal_calib();
    if cfg.depth_cue_noise > 0.0 {
        let pitch = normal(&mut rng, (0.0, cfg.depth_cue_noise)).to_radians();
        calib.pose.rotation = Quaternion::from_axis_angle([0.0, 1.0, 0.0], pitch);
    }
    let half_hfov = (calib.cx / calib.fx).atan();

    let requested = rng.random_range(cfg.min_cars..=cfg.max_cars.max(cfg.min_cars));
    let mut cars: Vec<Car> = Vec::new();
    let mut tries = 0;
    while cars.len() < requested && tries < cfg.max_placement_retries * requested.max(1) {
        tries += 1;
        let x = rng.random_range(cfg.x_range.0..cfg.x_range.1);
        let y = if rng.random::<f64>() < cfg.outside_camera_rate {
            rng.random_range(cfg.fov.y_min..cfg.fov.y_max)
        } else {
            let half = x * (half_hfov * 0.85).tan();
            rng.random_range(-half..half)
        };
        let yaw = if rng.random::<f64>() < 0.8 {
            let base = if rng.random::<bool>() {
                0.0
            } else {
                std::f64::consts::PI
            };
            base + normal(&mut rng, (0.0, 0.1))
        } else {
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
        };
        let l = normal(&mut rng, cfg.length_prior).max(2.5);
        let w = normal(&mut rng, cfg.width_prior).max(1.2);
        let h = normal(&mut rng, cfg.height_prior).max(1.0);
        let b = Box3D::new(VcsPoint::new(x, y, h / 2.0), l, w, h, yaw, CAR);
        let inside = b
            .bev_corners()
            .iter()
            .all(|c| c[0] >= cfg.fov.x_min && c[0] < cfg.fov.x_max && c[1] >= cfg.fov.y_min && c[1] < cfg.fov.y_max);
        let clear = cars.iter().all(|o| {
            let reach = (l.hypot(w) + o.b.length.hypot(o.b.width)) / 2.0 + cfg.min_gap;
            o.b.center.planar_distance(&b.center) >= reach
        });
        if !(inside && clear) {
            continue;
        }
        let color = PALETTE[rng.random_range(0..PALETTE.len())];
        let speed = if rng.random::<bool>() {
            0.0
        } else {
            rng.random_range(2.0..15.0)
        };
        cars.push(Car { b, color, speed });
    }

    let (image, visibility) = render(cfg, &calib, &cars, seed);

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut lidar = Vec::new();
    let boxes: Vec<Box3D> = cars.iter().map(|c| c.b).collect();
    for (ci, car) in cars.iter().enumerate() {
        let n = radar_returns(&mut rng, cfg, car, ci, &boxes, &mut points);
        let nl = lidar_returns(&mut rng, cfg, car, &mut lidar);
        labels.push(Label {
            box3d: car.b,
            visibility: visibility[ci],
            n_lidar_points: nl as u32,
            n_radar_points: n as u32,
        });
    }
    for _ in 0..poisson(&mut rng, cfg.clutter_rate) {
        let p = VcsPoint::new(
            rng.random_range(cfg.fov.x_min..cfg.fov.x_max),
            rng.random_range(cfg.fov.y_min..cfg.fov.y_max),
            rng.random_range(cfg.fov.z_min..cfg.fov.z_min + 2.0),
        );
        points.push(RadarPoint {
            position: p,
            vx: normal(&mut rng, (0.0, 0.5)),
            vy: normal(&mut rng, (0.0, 0.5)),
            rcs: normal(&mut rng, (8.0, 4.0)),
        });
    }

    let report = SynthReport {
        requested_cars: requested,
        placed_cars: cars.len(),
        infeasible: cars.len() < requested,
    };
    let scene = Scene {
        id: format!("synth_{seed:08}"),
        image,
        points,
        lidar,
        calib,
        labels,
    };
    (scene, report)
}

/// Faces of the footprint that look toward the sensor at the origin, as
/// `(corner a, corner b)` pairs of [`Box3D::bev_corners`].
fn visible_sides(b: &Box3D) -> Vec<([f64; 2], [f64; 2])> {
    let c = b.bev_corners();
    let mut out = Vec::new();
    for i in 0..4 {
        let (p, q) = (c[i], c[(i + 1) % 4]);
        // outward normal of a counterclockwise edge
        let n = [q[1] - p[1], -(q[0] - p[0])];
        let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
        if n[0] * -mid[0] + n[1] * -mid[1] > 0.0 {
            out.push((p, q));
        }
    }
    out
}

fn radar_returns(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    car: &Car,
    index: usize,
    boxes: &[Box3D],
    out: &mut Vec<RadarPoint>,
) -> usize {
    let sides = visible_sides(&car.b);
    if sides.is_empty() {
        return 0;
    }
    let lens: Vec<f64> = sides.iter().map(|(p, q)| (q[0] - p[0]).hypot(q[1] - p[1])).collect();
    let total: f64 = lens.iter().sum();
    let draws = 1 + poisson(rng, (cfg.radar_points_per_car - 1.0).max(0.0));
    let (s, c) = car.b.yaw.sin_cos();
    let mut kept = 0;
    for _ in 0..draws {
        if rng.random::<f64>() < cfg.radar_dropout {
            continue;
        }
        for _attempt in 0..8 {
            let mut pick = rng.random::<f64>() * total;
            let mut k = 0;
            while k + 1 < lens.len() && pick > lens[k] {
                pick -= lens[k];
                k += 1;
            }
            let (p, q) = sides[k];
            let t = rng.random::<f64>();
            let nx = normal(rng, (0.0, cfg.radar_noise));
            let ny = normal(rng, (0.0, cfg.radar_noise));
            let z = rng.random_range(0.3..car.b.height * 0.9);
            let pos = VcsPoint::new(p[0] + t * (q[0] - p[0]) + nx, p[1] + t * (q[1] - p[1]) + ny, z);
            if !in_fov(&pos, &cfg.fov) {
                continue;
            }
            let own = car.b.footprint_distance(pos.x, pos.y);
            let stolen = boxes
                .iter()
                .enumerate()
                .any(|(j, o)| j != index && o.footprint_distance(pos.x, pos.y) <= own);
            if stolen {
                continue;
            }
            out.push(RadarPoint {
                position: pos,
                vx: car.speed * c + normal(rng, (0.0, 0.2)),
                vy: car.speed * s + normal(rng, (0.0, 0.2)),
                rcs: normal(rng, (10.0, 4.0)),
            });
            kept += 1;
            break;
        }
    }
    kept
}

fn lidar_returns(rng: &mut ChaCha8Rng, cfg: &SynthConfig, car: &Car, out: &mut Vec<VcsPoint>) -> usize {
    let d = car.b.center.x.hypot(car.b.center.y);
    let n = ((cfg.lidar_points_per_car as f64) * (15.0 / d).min(1.0).powi(2)).round() as usize;
    let sides = visible_sides(&car.b);
    if sides.is_empty() {
        return 0;
    }
    let mut kept = 0;
    for i in 0..n {
        let (p, q) = sides[i % sides.len()];
        let t = rng.random::<f64>();
        let pos = VcsPoint::new(
            p[0] + t * (q[0] - p[0]),
            p[1] + t * (q[1] - p[1]),
            rng.random_range(0.1..car.b.height),
        );
        if in_fov(&pos, &cfg.fov) {
            out.push(pos);
            kept += 1;
        }
    }
    kept
}

fn hash2(a: i64, b: i64, seed: u64) -> f64 {
    let mut h = (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ seed.wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 31;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn polygon_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| p[i][0] * p[(i + 1) % n][1] - p[(i + 1) % n][0] * p[i][1])
        .sum::<f64>()
        .abs()
        / 2.0
}

fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn fill_convex(poly: &[[f64; 2]], w: usize, h: usize, mut paint: impl FnMut(usize, usize)) {
    if poly.len() < 3 {
        return;
    }
    let area2: f64 = (0..poly.len())
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    let sign = area2.signum();
    let u0 = poly.iter().map(|p| p[0]).fold(f64::MAX, f64::min).floor().max(0.0) as usize;
    let u1 = poly.iter().map(|p| p[0]).fold(f64::MIN, f64::max).ceil().min(w as f64) as usize;
    let v0 = poly.iter().map(|p| p[1]).fold(f64::MAX, f64::min).floor().max(0.0) as usize;
    let v1 = poly.iter().map(|p| p[1]).fold(f64::MIN, f64::max).ceil().min(h as f64) as usize;
    for y in v0..v1 {
        for x in u0..u1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = (0..poly.len()).all(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
                sign * ((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])) >= 0.0
            });
            if inside {
                paint(x, y);
            }
        }
    }
}

/// Flat-shaded rendering; returns the image and per-car visible fraction.
fn render(cfg: &SynthConfig, calib: &CameraCalib, cars: &[Car], seed: u64) -> (Image, Vec<f64>) {
    let (w, h) = (cfg.image_width, cfg.image_height);
    let mut data = vec![0.0; w * h * 3];
    let cam = calib.pose.translation;
    for y in 0..h {
        for x in 0..w {
            let far = calib.unproject(x as f64 + 0.5, y as f64 + 0.5, 1.0);
            let dz = far.z - cam.z;
            let rgb = if dz < -1e-6 {
                let t = -cam.z / dz;
                let gx = cam.x + t * (far.x - cam.x);
                let gy = cam.y + t * (far.y - cam.y);
                let cell = ((gx / 2.0).floor() as i64 + (gy / 2.0).floor() as i64).rem_euclid(2);
                let n = hash2((gx * 4.0).floor() as i64, (gy * 4.0).floor() as i64, seed);
                let g = 0.36 + 0.05 * cell as f64 + 0.06 * (n - 0.5);
                [g, g, g * 1.02]
            } else {
                let t = (y as f64 / h as f64).min(1.0);
                [0.55 + 0.2 * t, 0.7 + 0.15 * t, 0.95]
            };
            data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&rgb);
        }
    }

    let mut owner = vec![usize::MAX; w * h];
    let mut order: Vec<usize> = (0..cars.len()).collect();
    let dist = |c: &Car| c.b.center.distance(&cam);
    order.sort_by(|&a, &b| dist(&cars[b]).total_cmp(&dist(&cars[a])));
    let light = [0.4, 0.3, 0.866];
    let mut full_area = vec![0.0; cars.len()];
    for &ci in &order {
        let car = &cars[ci];
        let corners = car.b.corners();
        let proj: Option<Vec<[f64; 2]>> = corners
            .iter()
            .map(|p| project_to_image(p, calib).ok().map(|q| [q.u, q.v]))
            .collect();
        let Some(proj) = proj else { continue };
        full_area[ci] = polygon_area(&convex_hull(proj.clone()));
        let faces: [[usize; 4]; 6] = [
            [0, 1, 2, 3],
            [4, 5, 6, 7],
            [0, 1, 5, 4],
            [1, 2, 6, 5],
            [2, 3, 7, 6],
            [3, 0, 4, 7],
        ];
        let center = car.b.center.to_array();
        let mut drawn: Vec<(f64, [f64; 3], Vec<[f64; 2]>)> = Vec::new();
        for f in faces {
            let pts: Vec<[f64; 3]> = f.iter().map(|&i| corners[i].to_array()).collect();
            let fc = [
                pts.iter().map(|p| p[0]).sum::<f64>() / 4.0,
                pts.iter().map(|p| p[1]).sum::<f64>() / 4.0,
                pts.iter().map(|p| p[2]).sum::<f64>() / 4.0,
            ];
            let mut n = [fc[0] - center[0], fc[1] - center[1], fc[2] - center[2]];
            let nn = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            n.iter_mut().for_each(|v| *v /= nn);
            let to_cam = [cam.x - fc[0], cam.y - fc[1], cam.z - fc[2]];
            if n[0] * to_cam[0] + n[1] * to_cam[1] + n[2] * to_cam[2] <= 0.0 {
                continue;
            }
            let lambert = (n[0] * light[0] + n[1] * light[1] + n[2] * light[2]).max(0.0);
            let shade = 0.45 + 0.55 * lambert;
            let rgb = car.color.map(|c| c * shade);
            let depth = (to_cam[0].powi(2) + to_cam[1].powi(2) + to_cam[2].powi(2)).sqrt();
            drawn.push((depth, rgb, f.iter().map(|&i| proj[i]).collect()));
        }
        drawn.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (_, rgb, poly) in drawn {
            fill_convex(&poly, w, h, |x, y| {
                owner[y * w + x] = ci;
                data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&rgb);
            });
        }
    }
    let mut visible = vec![0usize; cars.len()];
    for &o in &owner {
        if o != usize::MAX {
            visible[o] += 1;
        }
    }
    let visibility = (0..cars.len())
        .map(|i| {
            if full_area[i] <= 0.0 {
                0.0
            } else {
                (visible[i] as f64 / full_area[i]).clamp(0.0, 1.0)
            }
        })
        .collect();
    let image = Image::new(w, h, data).expect("render buffer matches dimensions");
    (image, visibility)
}
