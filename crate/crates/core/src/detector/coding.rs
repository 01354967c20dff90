//! Box parameterization relative to anchors.

use super::anchors::{Anchor2D, Anchor3D};
use crate::geometry::wrap_angle;
use crate::{Box2D, Box3D, Error, Result, VcsPoint};

/// Values per 2D delta: `dx/wa, dy/ha, ln(w/wa), ln(h/ha)`.
pub const DELTAS_2D: usize = 4;
/// Values per 3D delta: `dx/d, dy/d, dz/ha, ln(l/la), ln(w/wa), ln(h/ha),
/// sin(yaw - ya), cos(yaw - ya)` with `d` the anchor's footprint diagonal.
pub const DELTAS_3D: usize = 8;

pub fn check_anchor_2d(a: &Anchor2D) -> Result<()> {
    if a.w > 0.0 && a.h > 0.0 {
        Ok(())
    } else {
        Err(Error::Shape(format!("degenerate 2D anchor {a:?}")))
    }
}

pub fn check_anchor_3d(a: &Anchor3D) -> Result<()> {
    if a.length > 0.0 && a.width > 0.0 && a.height > 0.0 {
        Ok(())
    } else {
        Err(Error::Shape(format!("degenerate 3D anchor {a:?}")))
    }
}

pub fn encode_2d(b: &Box2D, a: &Anchor2D) -> Result<[f64; DELTAS_2D]> {
    check_anchor_2d(a)?;
    let (cx, cy) = b.center();
    Ok([
        (cx - a.cx) / a.w,
        (cy - a.cy) / a.h,
        (b.width() / a.w).ln(),
        (b.height() / a.h).ln(),
    ])
}

pub fn decode_2d(d: &[f64], a: &Anchor2D, class_id: u32, score: f64) -> Box2D {
    let cx = a.cx + d[0] * a.w;
    let cy = a.cy + d[1] * a.h;
    let w = a.w * d[2].exp();
    let h = a.h * d[3].exp();
    Box2D {
        u_min: cx - w / 2.0,
        v_min: cy - h / 2.0,
        u_max: cx + w / 2.0,
        v_max: cy + h / 2.0,
        class_id,
        score,
    }
}

pub fn encode_3d(b: &Box3D, a: &Anchor3D) -> Result<[f64; DELTAS_3D]> {
    check_anchor_3d(a)?;
    let d = a.diagonal();
    let dyaw = b.yaw - a.yaw;
    Ok([
        (b.center.x - a.x) / d,
        (b.center.y - a.y) / d,
        (b.center.z - a.z) / a.height,
        (b.length / a.length).ln(),
        (b.width / a.width).ln(),
        (b.height / a.height).ln(),
        dyaw.sin(),
        dyaw.cos(),
    ])
}

pub fn decode_3d(d: &[f64], a: &Anchor3D, class_id: u32, score: f64) -> Box3D {
    let diag = a.diagonal();
    let center = VcsPoint::new(a.x + d[0] * diag, a.y + d[1] * diag, a.z + d[2] * a.height);
    let yaw = wrap_angle(a.yaw + d[6].atan2(d[7]));
    Box3D::new(
        center,
        a.length * d[3].exp(),
        a.width * d[4].exp(),
        a.height * d[5].exp(),
        yaw,
        class_id,
    )
    .with_score(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn anchor() -> Anchor3D {
        Anchor3D {
            x: 10.5,
            y: -2.5,
            z: 0.8,
            length: 4.2,
            width: 2.1,
            height: 1.6,
            yaw: 0.0,
        }
    }

    #[test]
    fn anchor_box_has_zero_deltas() {
        let a = anchor();
        let b = Box3D::new(VcsPoint::new(a.x, a.y, a.z), a.length, a.width, a.height, 0.0, 0);
        assert_eq!(encode_3d(&b, &a).unwrap(), [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let a2 = Anchor2D {
            cx: 10.0,
            cy: 20.0,
            w: 8.0,
            h: 4.0,
        };
        let b2 = decode_2d(&[0.0; 4], &a2, 0, 1.0);
        assert_eq!(encode_2d(&b2, &a2).unwrap(), [0.0; 4]);
    }

    #[test]
    fn yaw_pi() {
        let a = anchor();
        let b = Box3D::new(VcsPoint::new(a.x, a.y, a.z), 4.0, 2.0, 1.5, PI, 0);
        let d = encode_3d(&b, &a).unwrap();
        assert!(d[6].abs() < 1e-15 && d[7] == -1.0);
        let back = decode_3d(&d, &a, 0, 1.0);
        assert!((back.yaw - PI).abs() < 1e-12);
    }

    #[test]
    fn degenerate_anchor_rejected() {
        let mut a = anchor();
        a.width = 0.0;
        let b = Box3D::new(VcsPoint::new(1.0, 1.0, 1.0), 4.0, 2.0, 1.5, 0.0, 0);
        assert!(encode_3d(&b, &a).is_err());
    }
}
