//! Pinhole cameras with world-from-camera poses.
//!
//! Camera frame follows the usual computer-vision convention: +x right, +y
//! down, +z forward. Pixel `(x, y)` has its center at continuous image
//! coordinate `(x, y)`, so the pixel square spans `[x - 0.5, x + 0.5]`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::grid::{RgbImage, ScalarImage};
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.width > 0 && self.height > 0
    }

    /// Rescales to a new resolution, keeping the field of view.
    pub fn scaled(&self, width: usize, height: usize) -> Intrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

/// Rigid transform taking camera coordinates to world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera looking from `eye` toward `target`; `up_hint` is the world up.
    pub fn look_at(eye: Vec3, target: Vec3, up_hint: Vec3) -> Self {
        let z = (target - eye).normalize();
        // Image rows grow downward, so camera +y points against the world up.
        let x = z.cross(&up_hint).normalize();
        let y = z.cross(&x);
        Pose {
            rotation: Matrix3::from_columns(&[x, y, z]),
            translation: eye,
        }
    }

    /// Max deviation of `R^T R` from identity, and the determinant.
    pub fn orthonormality(&self) -> (f64, f64) {
        let rtr = self.rotation.transpose() * self.rotation;
        let dev = (rtr - Matrix3::identity()).abs().max();
        (dev, self.rotation.determinant())
    }

    #[inline]
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    #[inline]
    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation.transpose() * (world - self.translation)
    }

    #[inline]
    pub fn to_world(&self, cam: &Vec3) -> Vec3 {
        self.rotation * cam + self.translation
    }

    #[inline]
    pub fn direction_to_world(&self, cam_dir: &Vec3) -> Vec3 {
        self.rotation * cam_dir
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// World direction of image-up (camera -y).
    pub fn up(&self) -> Vec3 {
        -self.rotation.column(1).into_owned()
    }
}

#[derive(Clone, Debug)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub image: RgbImage,
    /// Z-depth in meters; non-positive or non-finite entries are treated as missing.
    pub depth: Option<ScalarImage>,
    /// Unit normals in the camera frame.
    pub normals: Option<crate::grid::Grid<Vec3>>,
}

impl CameraView {
    pub fn new(intrinsics: Intrinsics, pose: Pose, image: RgbImage) -> Self {
        CameraView {
            intrinsics,
            pose,
            image,
            depth: None,
            normals: None,
        }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn center(&self) -> Vec3 {
        self.pose.center()
    }

    /// Camera-frame ray through continuous image point `(x, y)`, with z = 1.
    #[inline]
    pub fn camera_ray(&self, x: f64, y: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0)
    }

    /// World-frame ray through `(x, y)`. Not normalized: its camera-z component is 1,
    /// so the ray parameter at a hit equals the z-depth.
    #[inline]
    pub fn world_ray(&self, x: f64, y: f64) -> Vec3 {
        self.pose.direction_to_world(&self.camera_ray(x, y))
    }

    /// Projects a world point to continuous pixel coordinates and camera depth.
    #[inline]
    pub fn project(&self, world: &Vec3) -> (f64, f64, f64) {
        let c = self.pose.to_camera(world);
        let k = &self.intrinsics;
        (k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy, c.z)
    }

    pub fn is_valid(&self) -> bool {
        let (dev, det) = self.pose.orthonormality();
        self.intrinsics.is_valid() && dev < 1e-3 && det > 0.0
    }

    /// Supervision normal at a pixel, rotated to world and oriented toward the camera.
    pub fn world_normal(&self, x: usize, y: usize) -> Option<Vec3> {
        let normals = self.normals.as_ref()?;
        let n = *normals.get(x, y);
        let len = n.norm();
        if !len.is_finite() || len < 1e-6 {
            return None;
        }
        let mut n = n / len;
        if n.dot(&self.camera_ray(x as f64, y as f64)) > 0.0 {
            n = -n;
        }
        Some(self.pose.direction_to_world(&n))
    }

    pub fn depth_at(&self, x: usize, y: usize) -> Option<f64> {
        let d = *self.depth.as_ref()?.get(x, y);
        (d.is_finite() && d > 0.0).then_some(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn look_at_is_right_handed_and_orthonormal() {
        let p = Pose::look_at(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::y(),
        );
        let (dev, det) = p.orthonormality();
        assert!(dev < 1e-12);
        assert_relative_eq!(det, 1.0, epsilon = 1e-12);
        assert!(p.up().dot(&Vector3::y()) > 0.0);
    }

    #[test]
    fn project_inverts_ray() {
        let k = Intrinsics {
            fx: 200.0,
            fy: 210.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
        };
        let pose = Pose::look_at(Vector3::new(0.3, 1.0, -2.0), Vector3::zeros(), Vector3::y());
        let view = CameraView::new(k, pose, RgbImage::filled(64, 48, [0.0; 3]));
        let world = view.center() + view.world_ray(10.0, 40.0) * 2.5;
        let (x, y, z) = view.project(&world);
        assert_relative_eq!(x, 10.0, epsilon = 1e-9);
        assert_relative_eq!(y, 40.0, epsilon = 1e-9);
        assert_relative_eq!(z, 2.5, epsilon = 1e-9);
    }
}
