//! Pinhole cameras. Camera frame is right-handed with x right, y down and
//! +z the viewing direction; poses map camera coordinates to world.

use glam::{DMat3, DVec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn from_fov(w: u32, h: u32, fov_x_deg: f64) -> Self {
        let fx = 0.5 * w as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self { fx, fy: fx, cx: 0.5 * w as f64, cy: 0.5 * h as f64, w, h }
    }

    pub fn pixel_count(&self) -> usize {
        self.w as usize * self.h as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// World-from-camera rotation; columns are the camera axes in world.
    pub rotation: DMat3,
    /// Camera center in world.
    pub translation: DVec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: DVec3,
    pub dir: DVec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> DVec3 {
        self.origin + self.dir * t
    }
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, rotation: DMat3, translation: DVec3) -> Result<Self> {
        let cam = Self { intrinsics, rotation, translation };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.intrinsics;
        if !(i.fx > 0.0 && i.fy > 0.0) || i.w == 0 || i.h == 0 {
            return Err(Error::Validation(format!("camera intrinsics invalid: {i:?}")));
        }
        let r = self.rotation;
        let err = (r.transpose() * r - DMat3::IDENTITY).to_cols_array().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(err <= 1e-6) || r.determinant() < 0.0 {
            return Err(Error::Validation(format!("camera rotation is not orthonormal (error {err:e})")));
        }
        if !self.translation.is_finite() {
            return Err(Error::Validation("camera translation is not finite".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with world `up` projecting to -y.
    pub fn look_at(intrinsics: Intrinsics, eye: DVec3, target: DVec3, up: DVec3) -> Result<Self> {
        let z = (target - eye).normalize();
        let x = (-up).cross(z).normalize();
        let y = z.cross(x);
        Self::new(intrinsics, DMat3::from_cols(x, y, z), eye)
    }

    /// 4x4 world-from-camera matrix, row-major.
    pub fn pose_row_major(&self) -> [f64; 16] {
        let r = self.rotation;
        let t = self.translation;
        [
            r.x_axis.x, r.y_axis.x, r.z_axis.x, t.x, //
            r.x_axis.y, r.y_axis.y, r.z_axis.y, t.y, //
            r.x_axis.z, r.y_axis.z, r.z_axis.z, t.z, //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_pose_row_major(intrinsics: Intrinsics, m: &[f64; 16]) -> Result<Self> {
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::Validation("pose last row must be [0, 0, 0, 1]".into()));
        }
        let rotation = DMat3::from_cols(
            DVec3::new(m[0], m[4], m[8]),
            DVec3::new(m[1], m[5], m[9]),
            DVec3::new(m[2], m[6], m[10]),
        );
        Self::new(intrinsics, rotation, DVec3::new(m[3], m[7], m[11]))
    }

    pub fn center(&self) -> DVec3 {
        self.translation
    }

    pub fn forward(&self) -> DVec3 {
        self.rotation.z_axis
    }

    pub fn world_to_camera(&self, p: DVec3) -> DVec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Continuous pixel coordinates and camera-frame z of a world point.
    pub fn project(&self, p: DVec3) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let i = &self.intrinsics;
        Some((i.fx * c.x / c.z + i.cx, i.fy * c.y / c.z + i.cy, c.z))
    }
}

/// Ray through pixel `(u, v)` offset by `jitter` pixels; near 0, far infinite.
pub fn camera_ray(cam: &CameraModel, u: f64, v: f64, jitter: [f64; 2]) -> Ray {
    let i = &cam.intrinsics;
    let local = DVec3::new((u + 0.5 + jitter[0] - i.cx) / i.fx, (v + 0.5 + jitter[1] - i.cy) / i.fy, 1.0);
    Ray { origin: cam.translation, dir: (cam.rotation * local).normalize(), near: 0.0, far: f64::INFINITY }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        let intr = Intrinsics { fx: 100.0, fy: 110.0, cx: 32.0, cy: 24.0, w: 64, h: 48 };
        CameraModel::look_at(intr, DVec3::new(3.0, -2.0, 1.5), DVec3::new(0.0, 0.0, 0.3), DVec3::Z).unwrap()
    }

    #[test]
    fn principal_point_looks_forward() {
        let c = cam();
        let r = camera_ray(&c, 31.5, 23.5, [0.0, 0.0]);
        assert!((r.dir - c.forward()).length() < 1e-12);
        assert_eq!(r.origin, c.center());
    }

    #[test]
    fn jitter_equals_principal_point_shift() {
        let c = cam();
        let mut shifted = c;
        shifted.intrinsics.cx -= 0.5;
        let a = camera_ray(&c, 10.0, 7.0, [0.5, 0.0]);
        let b = camera_ray(&shifted, 10.0, 7.0, [0.0, 0.0]);
        assert_eq!(a.dir, b.dir);
    }

    #[test]
    fn corner_pixel_pinhole() {
        let c = cam();
        let r = camera_ray(&c, 0.0, 0.0, [0.0, 0.0]);
        let local = DVec3::new((0.5 - 32.0) / 100.0, (0.5 - 24.0) / 110.0, 1.0).normalize();
        assert!((c.rotation.transpose() * r.dir - local).length() < 1e-12);
    }

    #[test]
    fn up_projects_upward_in_image() {
        let c = cam();
        let (_, v_hi, _) = c.project(DVec3::new(0.0, 0.0, 1.0)).unwrap();
        let (_, v_lo, _) = c.project(DVec3::new(0.0, 0.0, 0.0)).unwrap();
        assert!(v_hi < v_lo);
    }

    #[test]
    fn pose_round_trip_bit_exact() {
        let c = cam();
        let back = CameraModel::from_pose_row_major(c.intrinsics, &c.pose_row_major()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut m = cam().pose_row_major();
        m[0] *= 1.01;
        assert!(CameraModel::from_pose_row_major(cam().intrinsics, &m).is_err());
    }
}
