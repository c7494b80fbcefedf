//! Synthetic scenes with exact ground truth: an open-top box room and a
//! single textured quad. Images, depth and normals are ray cast analytically.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, Intrinsics, Pose};
use crate::grid::{Grid, Rgb};
use crate::metrics::LabeledPointCloud;
use crate::Vec3;

/// A bounded, textured ground-truth rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtPlane {
    pub label: usize,
    pub center: Vec3,
    /// Unit normal facing the scene interior.
    pub normal: Vec3,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
    pub half_u: f64,
    pub half_v: f64,
    pub color: Rgb,
}

impl GtPlane {
    /// Signed offset `d` of the plane `n . x = d`.
    pub fn offset(&self) -> f64 {
        self.normal.dot(&self.center)
    }

    /// Ray hit `(t, point)` inside the rectangle.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        let denom = dir.dot(&self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.center - origin).dot(&self.normal) / denom;
        if t <= 1e-9 {
            return None;
        }
        let p = origin + dir * t;
        let e = p - self.center;
        let tol = 1e-9;
        (e.dot(&self.axis_u).abs() <= self.half_u + tol && e.dot(&self.axis_v).abs() <= self.half_v + tol)
            .then_some((t, p))
    }

    /// Base color with a smooth low-amplitude pattern.
    pub fn shade(&self, p: &Vec3) -> Rgb {
        let e = p - self.center;
        let (a, b) = (e.dot(&self.axis_u), e.dot(&self.axis_v));
        let tau = std::f64::consts::TAU;
        let d = 0.04 * (tau * a / 0.5).sin() * (tau * b / 0.7).cos();
        self.color.map(|c| (c + d).clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub views: Vec<CameraView>,
    pub planes: Vec<GtPlane>,
    /// Per view, the label of the plane seen at each pixel.
    pub label_maps: Vec<Grid<Option<usize>>>,
    pub background: Rgb,
    /// Largest scene dimension, for relative tolerances.
    pub scale: f64,
}

impl SynthScene {
    /// Visible surface points with plane labels, thinned to one point per
    /// `voxel`-sized cell.
    pub fn gt_points(&self, voxel: f64) -> LabeledPointCloud {
        let mut seen = std::collections::BTreeMap::new();
        for (view, labels) in self.views.iter().zip(&self.label_maps) {
            let origin = view.center();
            for y in 0..view.height() {
                for x in 0..view.width() {
                    let Some(l) = *labels.get(x, y) else { continue };
                    let dir = view.world_ray(x as f64, y as f64);
                    let Some((_, p)) = self.planes[l].intersect(&origin, &dir) else { continue };
                    let key = (
                        (p.x / voxel).floor() as i64,
                        (p.y / voxel).floor() as i64,
                        (p.z / voxel).floor() as i64,
                        l,
                    );
                    seen.entry(key).or_insert(p);
                }
            }
        }
        let mut cloud = LabeledPointCloud::default();
        for ((.., l), p) in seen {
            cloud.points.push(p);
            cloud.labels.push(l);
        }
        cloud
    }
}

fn cast(planes: &[GtPlane], origin: &Vec3, dir: &Vec3) -> Option<(usize, f64, Vec3)> {
    planes
        .iter()
        .filter_map(|p| p.intersect(origin, dir).map(|(t, x)| (p.label, t, x)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

/// Renders color, z-depth, camera-frame normals and labels by ray casting.
/// Each pixel averages a 3x3 grid of sub-samples for color.
pub fn render_gt(planes: &[GtPlane], intrinsics: Intrinsics, pose: Pose, background: Rgb) -> (CameraView, Grid<Option<usize>>) {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut view = CameraView::new(intrinsics, pose, Grid::filled(w, h, background));
    let origin = view.center();
    let mut depth = Grid::filled(w, h, 0.0);
    let mut normals = Grid::filled(w, h, Vec3::zeros());
    let mut labels = Grid::filled(w, h, None);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in [-1.0 / 3.0, 0.0, 1.0 / 3.0] {
                for sx in [-1.0 / 3.0, 0.0, 1.0 / 3.0] {
                    let dir = view.world_ray(x as f64 + sx, y as f64 + sy);
                    let c = match cast(planes, &origin, &dir) {
                        Some((l, _, p)) => planes[l].shade(&p),
                        None => background,
                    };
                    for k in 0..3 {
                        acc[k] += c[k] / 9.0;
                    }
                }
            }
            *view.image.get_mut(x, y) = acc;
            let dir = view.world_ray(x as f64, y as f64);
            if let Some((l, t, _)) = cast(planes, &origin, &dir) {
                *depth.get_mut(x, y) = t;
                *labels.get_mut(x, y) = Some(l);
                let n = pose.rotation.transpose() * planes[l].normal;
                *normals.get_mut(x, y) = n;
            }
        }
    }
    view.depth = Some(depth);
    view.normals = Some(normals);
    (view, labels)
}

/// Room extents: x in [-2, 2], y (up) in [0, 2.5], z in [-1.5, 1.5]; floor
/// and four walls, no ceiling.
pub fn box_room_planes() -> Vec<GtPlane> {
    let (hx, hz, top) = (2.0, 1.5, 2.5);
    let mid = top / 2.0;
    let plane = |label, center: Vec3, normal: Vec3, axis_u: Vec3, half_u, half_v, color| GtPlane {
        label,
        center,
        normal,
        axis_u,
        axis_v: normal.cross(&axis_u),
        half_u,
        half_v,
        color,
    };
    vec![
        plane(0, Vec3::zeros(), Vec3::y(), Vec3::z(), hz, hx, [0.55, 0.45, 0.35]),
        plane(1, Vec3::new(-hx, mid, 0.0), Vec3::x(), Vec3::y(), mid, hz, [0.75, 0.30, 0.30]),
        plane(2, Vec3::new(hx, mid, 0.0), -Vec3::x(), Vec3::y(), mid, hz, [0.30, 0.65, 0.35]),
        plane(3, Vec3::new(0.0, mid, -hz), Vec3::z(), Vec3::y(), mid, hx, [0.30, 0.40, 0.75]),
        plane(4, Vec3::new(0.0, mid, hz), -Vec3::z(), Vec3::y(), mid, hx, [0.80, 0.75, 0.35]),
    ]
}

pub fn box_room_intrinsics(width: usize, height: usize) -> Intrinsics {
    let f = 250.0 * width as f64 / 320.0;
    Intrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
    }
}

/// Camera `i` of `n` on a radius-0.5 circle at height 1.5, looking outward
/// with 18 degree yaw steps and 40 degrees of downward pitch, so the
/// visible floor is one connected ring.
pub fn box_room_pose(i: usize) -> Pose {
    let yaw = (18.0 * i as f64).to_radians();
    let eye = Vec3::new(0.5 * yaw.cos(), 1.5, 0.5 * yaw.sin());
    let pitch = 40f64.to_radians();
    let dir = Vec3::new(yaw.cos() * pitch.cos(), -pitch.sin(), yaw.sin() * pitch.cos());
    Pose::look_at(eye, eye + dir, Vec3::y())
}

pub fn box_room(views: usize, width: usize, height: usize) -> SynthScene {
    let planes = box_room_planes();
    let k = box_room_intrinsics(width, height);
    let background = [0.0; 3];
    let (views, label_maps) = (0..views)
        .map(|i| render_gt(&planes, k, box_room_pose(i), background))
        .unzip();
    SynthScene {
        views,
        planes,
        label_maps,
        background,
        scale: 4.0,
    }
}

/// One fronto-parallel 2 x 1.5 quad at z = 2 seen by `views` cameras
/// translated sideways.
pub fn quad_scene(views: usize, width: usize, height: usize) -> SynthScene {
    let planes = vec![GtPlane {
        label: 0,
        center: Vec3::new(0.0, 0.0, 2.0),
        normal: -Vec3::z(),
        axis_u: -Vec3::y(),
        axis_v: Vec3::x(),
        half_u: 0.75,
        half_v: 1.0,
        color: [0.6, 0.45, 0.3],
    }];
    let f = 0.9 * width as f64;
    let k = Intrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
    };
    let background = [0.0; 3];
    let (views, label_maps) = (0..views)
        .map(|i| {
            let x = 0.15 * (i as f64 - (views as f64 - 1.0) / 2.0);
            let eye = Vec3::new(x, 0.0, 0.0);
            let pose = Pose::look_at(eye, eye + Vec3::z(), -Vec3::y());
            render_gt(&planes, k, pose, background)
        })
        .unzip();
    SynthScene {
        views,
        planes,
        label_maps,
        background,
        scale: 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn box_room_views_see_only_room_surfaces() {
        let scene = box_room(20, 64, 48);
        for (view, labels) in scene.views.iter().zip(&scene.label_maps) {
            assert!(view.is_valid());
            let covered = labels.data.iter().filter(|l| l.is_some()).count();
            assert!(covered as f64 > 0.98 * labels.len() as f64);
            let depth = view.depth.as_ref().unwrap();
            for y in 0..view.height() {
                for x in 0..view.width() {
                    let Some(l) = *labels.get(x, y) else { continue };
                    let p = view.center() + view.world_ray(x as f64, y as f64) * *depth.get(x, y);
                    assert_relative_eq!(scene.planes[l].normal.dot(&p), scene.planes[l].offset(), epsilon = 1e-9);
                    let n = view.world_normal(x, y).unwrap();
                    assert_relative_eq!(n, scene.planes[l].normal, epsilon = 1e-12);
                }
            }
        }
        let labels: std::collections::BTreeSet<usize> =
            scene.gt_points(0.05).labels.into_iter().collect();
        assert_eq!(labels.len(), 5);
    }

    #[test]
    fn poses_step_by_eighteen_degrees() {
        let a = box_room_pose(0).forward();
        let b = box_room_pose(1).forward();
        let flat = |v: Vec3| Vec3::new(v.x, 0.0, v.z).normalize();
        assert_relative_eq!(flat(a).dot(&flat(b)).acos().to_degrees(), 18.0, epsilon = 1e-9);
        assert_relative_eq!(a.y.asin().to_degrees(), -40.0, epsilon = 1e-9);
    }
}
