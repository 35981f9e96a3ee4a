//! Pinhole camera with an Euler-angle pose.
//!
//! Camera space looks down `+z`; pixel `(u, v) = (f·x/z + cx, f·y/z + cy)`.
//! The camera-to-world rotation is `Rz(φz)·Ry(φy)·Rx(φx)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::WaveConfig;

/// Camera description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    /// `(x_c, y_c, z_c, φ_x, φ_y, φ_z)`: position in meters, angles in radians.
    pub pose: [f64; 6],
    /// Focal length in pixels.
    pub focal: f64,
    /// Defaults to the image center.
    #[serde(default)]
    pub principal_point: Option<[f64; 2]>,
    /// Near clip distance in meters; defaults to `0.2·d`.
    #[serde(default)]
    pub near_clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub position: Vector3<f64>,
    pub euler: [f64; 3],
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub near_clip: f64,
    /// World-to-camera rotation.
    world_to_cam: Matrix3<f64>,
}

fn rotation_from_euler([ax, ay, az]: [f64; 3]) -> Matrix3<f64> {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

impl CameraView {
    pub fn new(pose: [f64; 6], focal: f64, width: usize, height: usize, near_clip: f64) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::InvalidArgument(format!("focal length must be > 0, got {focal}")));
        }
        if pose.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("camera pose must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("camera resolution must be positive".into()));
        }
        let euler = [pose[3], pose[4], pose[5]];
        Ok(Self {
            position: Vector3::new(pose[0], pose[1], pose[2]),
            euler,
            focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
            near_clip,
            world_to_cam: rotation_from_euler(euler).transpose(),
        })
    }

    pub fn from_spec(spec: &CameraSpec, cfg: &WaveConfig) -> Result<Self> {
        let near = spec.near_clip.unwrap_or(0.2 * cfg.propagation_distance);
        let mut cam = Self::new(spec.pose, spec.focal, cfg.width(), cfg.height(), near)?;
        if let Some(pp) = spec.principal_point {
            cam.principal = pp;
        }
        Ok(cam)
    }

    pub fn to_spec(&self) -> CameraSpec {
        CameraSpec {
            pose: self.pose(),
            focal: self.focal,
            principal_point: Some(self.principal),
            near_clip: Some(self.near_clip),
        }
    }

    /// Camera on a sphere of radius `distance` around `target`, looking at it.
    /// `yaw` turns about world `y`, `pitch` about the camera `x` axis.
    pub fn orbit(
        target: [f64; 3],
        distance: f64,
        yaw: f64,
        pitch: f64,
        focal: f64,
        width: usize,
        height: usize,
        near_clip: f64,
    ) -> Result<Self> {
        let rot = rotation_from_euler([pitch, yaw, 0.0]);
        let forward = rot * Vector3::z();
        let pos = Vector3::from(target) - forward * distance;
        Self::new([pos.x, pos.y, pos.z, pitch, yaw, 0.0], focal, width, height, near_clip)
    }

    pub fn pose(&self) -> [f64; 6] {
        [self.position.x, self.position.y, self.position.z, self.euler[0], self.euler[1], self.euler[2]]
    }

    pub fn world_to_cam(&self) -> &Matrix3<f64> {
        &self.world_to_cam
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_cam * (world - self.position)
    }

    /// Pixel coordinates of a camera-space point.
    pub fn project(&self, cam: &Vector3<f64>) -> [f64; 2] {
        [self.focal * cam.x / cam.z + self.principal[0], self.focal * cam.y / cam.z + self.principal[1]]
    }

    pub fn matches(&self, cfg: &WaveConfig) -> bool {
        self.width == cfg.width() && self.height == cfg.height()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_is_orthonormal() {
        let cam = CameraView::new([0.1, -0.2, 0.3, 0.4, -1.1, 2.5], 100.0, 32, 32, 0.01).unwrap();
        let r = cam.world_to_cam();
        let should_be_identity = r * r.transpose();
        assert!((should_be_identity - Matrix3::identity()).norm() < 1e-14);
        assert!((r.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn orbit_looks_at_target() {
        let target = [0.2, -0.1, 3.0];
        let cam = CameraView::orbit(target, 2.5, 0.3, -0.2, 80.0, 64, 48, 0.01).unwrap();
        let t = cam.to_camera(&Vector3::from(target));
        assert!(t.x.abs() < 1e-12 && t.y.abs() < 1e-12);
        assert!((t.z - 2.5).abs() < 1e-12);
        let px = cam.project(&t);
        assert!((px[0] - 32.0).abs() < 1e-9 && (px[1] - 24.0).abs() < 1e-9);
    }

    #[test]
    fn spec_round_trip() {
        let cfg = WaveConfig::new(2, 16, 8);
        let spec: CameraSpec = serde_json::from_str(r#"{"pose": [0,0,0,0,0,0], "focal": 20}"#).unwrap();
        let cam = CameraView::from_spec(&spec, &cfg).unwrap();
        assert_eq!(cam.principal, [8.0, 4.0]);
        assert!((cam.near_clip - 0.4e-3).abs() < 1e-15);
        assert_eq!(CameraView::from_spec(&cam.to_spec(), &cfg).unwrap(), cam);
        assert!(serde_json::from_str::<CameraSpec>(r#"{"pose": [0,0,0,0,0,0], "focal": 20, "fov": 1}"#).is_err());
        let bad = CameraSpec { pose: [0.0; 6], focal: -1.0, principal_point: None, near_clip: None };
        assert!(CameraView::from_spec(&bad, &cfg).is_err());
    }
}
