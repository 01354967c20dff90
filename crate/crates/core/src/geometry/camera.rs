use serde::{Deserialize, Serialize};

use super::{Quaternion, VcsPoint};
use crate::dataio::{Box2D, Box3D};
use crate::{Error, Result};

/// Rigid transform from a sensor frame into the vehicle frame.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Quaternion,
    pub translation: VcsPoint,
}

impl Pose {
    pub fn to_vcs(&self, p: [f64; 3]) -> VcsPoint {
        let r = self.rotation.rotate(p);
        VcsPoint::new(
            r[0] + self.translation.x,
            r[1] + self.translation.y,
            r[2] + self.translation.z,
        )
    }

    pub fn from_vcs(&self, p: &VcsPoint) -> [f64; 3] {
        let d = [
            p.x - self.translation.x,
            p.y - self.translation.y,
            p.z - self.translation.z,
        ];
        self.rotation.conjugate().rotate(d)
    }
}

/// Pinhole intrinsics plus mounting pose.
///
/// The camera body frame follows the VCS axes: x is the optical axis (depth),
/// y points left and z up. Pixels grow rightward (u) and downward (v) from the
/// top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraCalib {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraCalib {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if (self.pose.rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("camera pose rotation is not unit norm".into()));
        }
        Ok(())
    }

    /// Point in camera body coordinates (depth, left, up).
    pub fn to_camera(&self, p: &VcsPoint) -> [f64; 3] {
        self.pose.from_vcs(p)
    }

    /// Inverse ray: the VCS point seen at pixel `(u, v)` at `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> VcsPoint {
        let c = [
            depth,
            -(u - self.cx) * depth / self.fx,
            -(v - self.cy) * depth / self.fy,
        ];
        self.pose.to_vcs(c)
    }

    /// Intrinsics after scaling the image by `scale` and padding by `(pad_x, pad_y)`.
    pub fn resized(&self, scale: f64, pad_x: f64, pad_y: f64) -> CameraCalib {
        CameraCalib {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: self.cx * scale + pad_x,
            cy: self.cy * scale + pad_y,
            pose: self.pose,
        }
    }
}

pub fn project_to_image(p: &VcsPoint, calib: &CameraCalib) -> Result<Projection> {
    let c = calib.to_camera(p);
    project_camera(c, calib)
}

fn project_camera(c: [f64; 3], calib: &CameraCalib) -> Result<Projection> {
    let depth = c[0];
    if depth <= 0.0 {
        return Err(Error::BehindCamera { depth });
    }
    Ok(Projection {
        u: calib.fx * (-c[1] / depth) + calib.cx,
        v: calib.fy * (-c[2] / depth) + calib.cy,
        depth,
    })
}

const NEAR_PLANE: f64 = 0.1;

/// Smallest image rectangle containing the projected cuboid, clipped to the
/// image. Edges crossing the near plane are cut there; `None` when nothing
/// of the cuboid is in front of the camera or inside the image.
pub fn cuboid_to_bbox2d(b: &Box3D, calib: &CameraCalib, image_size: (usize, usize)) -> Option<Box2D> {
    let corners: Vec<[f64; 3]> = b.corners().iter().map(|p| calib.to_camera(p)).collect();
    let mut pts: Vec<[f64; 3]> = corners.iter().copied().filter(|c| c[0] >= NEAR_PLANE).collect();
    for &(i, j) in Box3D::EDGES.iter() {
        let (a, b) = (corners[i], corners[j]);
        if (a[0] - NEAR_PLANE) * (b[0] - NEAR_PLANE) < 0.0 {
            let t = (NEAR_PLANE - a[0]) / (b[0] - a[0]);
            pts.push([NEAR_PLANE, a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]);
        }
    }
    if pts.is_empty() {
        return None;
    }
    let (mut u0, mut v0, mut u1, mut v1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for c in pts {
        let p = project_camera(c, calib).ok()?;
        u0 = u0.min(p.u);
        v0 = v0.min(p.v);
        u1 = u1.max(p.u);
        v1 = v1.max(p.v);
    }
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let (u0, v0, u1, v1) = (u0.max(0.0), v0.max(0.0), u1.min(w), v1.min(h));
    if u0 >= u1 || v0 >= v1 {
        return None;
    }
    Some(Box2D {
        u_min: u0,
        v_min: v0,
        u_max: u1,
        v_max: v1,
        class_id: b.class_id,
        score: b.score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calib(fx: f64, cx: f64, cy: f64) -> CameraCalib {
        CameraCalib {
            fx,
            fy: fx,
            cx,
            cy,
            pose: Pose::default(),
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let c = calib(400.0, 256.0, 192.0);
        for depth in [1.0, 7.5, 60.0] {
            let p = project_to_image(&VcsPoint::new(depth, 0.0, 0.0), &c).unwrap();
            assert_eq!((p.u, p.v), (256.0, 192.0));
            assert_eq!(p.depth, depth);
        }
    }

    #[test]
    fn golden_left_point_maps_to_negative_u() {
        let c = calib(100.0, 0.0, 0.0);
        let p = project_to_image(&VcsPoint::new(10.0, 1.0, 0.0), &c).unwrap();
        assert_eq!(p.u, -10.0);
        assert_eq!(p.v, 0.0);
        // up is negative v
        let p = project_to_image(&VcsPoint::new(10.0, 0.0, 1.0), &c).unwrap();
        assert_eq!(p.v, -10.0);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let c = calib(100.0, 0.0, 0.0);
        assert!(matches!(
            project_to_image(&VcsPoint::new(0.0, 1.0, 0.0), &c),
            Err(Error::BehindCamera { .. })
        ));
        assert!(project_to_image(&VcsPoint::new(-3.0, 0.0, 0.0), &c).is_err());
    }

    #[test]
    fn unproject_inverts_projection_with_pose() {
        let mut c = calib(380.0, 250.0, 190.0);
        c.pose = Pose {
            rotation: Quaternion::from_axis_angle([0.1, 1.0, 0.2], 0.05),
            translation: VcsPoint::new(1.2, -0.3, 1.5),
        };
        let p = VcsPoint::new(23.0, 4.5, 0.7);
        let pr = project_to_image(&p, &c).unwrap();
        let back = c.unproject(pr.u, pr.v, pr.depth);
        assert!(back.distance(&p) < 1e-9);
    }

    fn cube(x: f64) -> Box3D {
        Box3D::new(VcsPoint::new(x, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0, 0)
    }

    #[test]
    fn centered_cuboid_is_symmetric() {
        let c = calib(400.0, 256.0, 192.0);
        let b = cube(20.0);
        let r = cuboid_to_bbox2d(&b, &c, (512, 384)).unwrap();
        assert!(((r.u_min + r.u_max) / 2.0 - 256.0).abs() < 1e-9);
        assert!(((r.v_min + r.v_max) / 2.0 - 192.0).abs() < 1e-9);
    }

    #[test]
    fn farther_cuboid_is_smaller() {
        let c = calib(400.0, 256.0, 192.0);
        let near = cuboid_to_bbox2d(&cube(10.0), &c, (512, 384)).unwrap();
        let far = cuboid_to_bbox2d(&cube(50.0), &c, (512, 384)).unwrap();
        assert!(far.width() < near.width());
        assert!(far.height() < near.height());
    }

    #[test]
    fn cuboid_behind_camera_is_none() {
        let c = calib(400.0, 256.0, 192.0);
        assert!(cuboid_to_bbox2d(&cube(-10.0), &c, (512, 384)).is_none());
    }

    #[test]
    fn straddling_cuboid_is_clipped_to_image() {
        let c = calib(400.0, 256.0, 192.0);
        let b = Box3D::new(VcsPoint::new(0.0, 0.0, 0.0), 4.0, 2.0, 2.0, 0.0, 0);
        let r = cuboid_to_bbox2d(&b, &c, (512, 384)).unwrap();
        assert!(r.u_min >= 0.0 && r.u_max <= 512.0 && r.v_min >= 0.0 && r.v_max <= 384.0);
    }
}
