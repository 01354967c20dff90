use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, VcsPoint};

/// Oriented 3D cuboid in the vehicle frame.
///
/// `center` is the geometric center; `length` runs along the heading, which
/// is `yaw` radians counterclockwise from +X about +Z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: VcsPoint,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub class_id: u32,
    pub score: f64,
}

impl Box3D {
    /// Corner pairs forming the 12 cuboid edges, indices into [`Box3D::corners`].
    pub const EDGES: [(usize, usize); 12] = [
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 0),
        (4, 5),
        (5, 6),
        (6, 7),
        (7, 4),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];

    /// A label-style box (score 1) with `yaw` wrapped into `(-π, π]`.
    pub fn new(center: VcsPoint, length: f64, width: f64, height: f64, yaw: f64, class_id: u32) -> Self {
        Box3D {
            center,
            length,
            width,
            height,
            yaw: wrap_angle(yaw),
            class_id,
            score: 1.0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    /// Footprint corners counterclockwise: front-left, rear-left, rear-right, front-right.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[a, b]| [self.center.x + a * c - b * s, self.center.y + a * s + b * c])
    }

    /// Bottom four corners then top four, each in [`Box3D::bev_corners`] order.
    pub fn corners(&self) -> [VcsPoint; 8] {
        let f = self.bev_corners();
        let z0 = self.center.z - self.height / 2.0;
        let z1 = self.center.z + self.height / 2.0;
        let mut out = [VcsPoint::default(); 8];
        for i in 0..4 {
            out[i] = VcsPoint::new(f[i][0], f[i][1], z0);
            out[i + 4] = VcsPoint::new(f[i][0], f[i][1], z1);
        }
        out
    }

    pub fn bev_area(&self) -> f64 {
        self.length * self.width
    }

    /// Distance from `(x, y)` to the footprint rectangle, zero inside.
    pub fn footprint_distance(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.center.x, y - self.center.y);
        let a = (dx * c + dy * s).abs() - self.length / 2.0;
        let b = (-dx * s + dy * c).abs() - self.width / 2.0;
        a.max(0.0).hypot(b.max(0.0))
    }

    /// IoU of the yaw-rotated footprints.
    pub fn bev_iou(&self, other: &Box3D) -> f64 {
        let inter = convex_intersection_area(&self.bev_corners(), &other.bev_corners());
        let union = self.bev_area() + other.bev_area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Axis-aligned image rectangle, pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
    pub class_id: u32,
    pub score: f64,
}

impl Box2D {
    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.u_min + self.u_max) / 2.0, (self.v_min + self.v_max) / 2.0)
    }

    pub fn iou(&self, other: &Box2D) -> f64 {
        let iw = (self.u_max.min(other.u_max) - self.u_min.max(other.u_min)).max(0.0);
        let ih = (self.v_max.min(other.v_max) - self.v_min.max(other.v_min)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    s.abs() / 2.0
}

/// Sutherland–Hodgman clip of one counterclockwise convex polygon by another.
pub(crate) fn convex_intersection_area(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> f64 {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            return 0.0;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    if out.len() < 3 {
        0.0
    } else {
        polygon_area(&out)
    }
}
