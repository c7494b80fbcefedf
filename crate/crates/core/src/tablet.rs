//! The tablet primitive: a textured, semi-transparent 3D rectangle.
//!
//! A tablet stores its center implicitly as `anchor + distance * ray_dir`,
//! where `anchor` is the center of the camera that created it. The in-plane
//! frame is `(up, right)` with `right = normal x up`. Texture rows run along
//! `-up` (row 0 is the `+up` edge) and columns along `+right`, so a texture of
//! `h x w` texels spans `h / lambda_u` by `w / lambda_v` world units.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::grid::{sample_bilinear_rgb, Rgb};
use crate::Vec3;

/// Per-texel color and alpha of one tablet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub width: usize,
    pub height: usize,
    pub color: Vec<Rgb>,
    pub alpha: Vec<f64>,
}

impl Texture {
    pub fn solid(width: usize, height: usize, color: Rgb, alpha: f64) -> Self {
        Texture {
            width,
            height,
            color: vec![color; width * height],
            alpha: vec![alpha; width * height],
        }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Alpha-weighted mean color; plain mean when fully transparent.
    pub fn mean_color(&self) -> Rgb {
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        for (c, &a) in self.color.iter().zip(&self.alpha) {
            for k in 0..3 {
                acc[k] += a * c[k];
            }
            wsum += a;
        }
        if wsum > 1e-12 {
            acc.map(|v| v / wsum)
        } else {
            let n = self.len().max(1) as f64;
            let mut m = [0.0; 3];
            for c in &self.color {
                for k in 0..3 {
                    m[k] += c[k] / n;
                }
            }
            m
        }
    }
}

/// Orthonormal tablet frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub normal: Vec3,
    pub up: Vec3,
    pub right: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tablet {
    /// Center of the source camera.
    pub anchor: Vec3,
    /// Unit direction from `anchor` through the tablet center.
    pub ray_dir: Vec3,
    /// Learnable distance along `ray_dir`.
    pub distance: f64,
    pub normal: Vec3,
    pub up: Vec3,
    /// Texels per world unit along `up`.
    pub lambda_u: f64,
    /// Texels per world unit along `right`.
    pub lambda_v: f64,
    pub texture: Texture,
    pub source_camera: usize,
}

/// Returns `(n, u, r)` with unit `n`, `u` made orthogonal to `n`, and `r = n x u`.
pub fn orthonormalize_basis(n: Vec3, u: Vec3) -> Result<(Vec3, Vec3, Vec3)> {
    let n_len = n.norm();
    let u_len = u.norm();
    if !(n_len >= 1e-9) || !(u_len >= 1e-9) {
        return Err(Error::DegenerateBasis);
    }
    let n = n / n_len;
    if n.dot(&u).abs() / u_len > 1.0 - 1e-9 {
        return Err(Error::DegenerateBasis);
    }
    let u = (u - n * n.dot(&u)).normalize();
    let r = n.cross(&u);
    Ok((n, u, r))
}

/// Rotates `u_old` by the minimal rotation taking `n_old` to `n_new`.
pub fn update_up_vector(n_old: Vec3, n_new: Vec3, u_old: Vec3) -> Result<Vec3> {
    let cos = n_old.dot(&n_new).clamp(-1.0, 1.0);
    if cos <= -1.0 + 1e-6 {
        return Err(Error::AntiparallelNormals);
    }
    let axis = n_old.cross(&n_new);
    let sin = axis.norm();
    let rotated = if sin < 1e-15 {
        u_old
    } else {
        let k = axis / sin;
        // Rodrigues: R u = u cos + (k x u) sin + k (k . u)(1 - cos)
        u_old * cos + k.cross(&u_old) * sin + k * k.dot(&u_old) * (1.0 - cos)
    };
    let (_, u, _) = orthonormalize_basis(n_new, rotated)?;
    Ok(u)
}

pub fn center_on_ray(view: &CameraView, ray_dir: Vec3, d: f64) -> Result<Vec3> {
    if !(d > 0.0) {
        return Err(Error::InvalidDistance(d));
    }
    Ok(view.center() + ray_dir * d)
}

impl Tablet {
    #[inline]
    pub fn center(&self) -> Vec3 {
        self.anchor + self.ray_dir * self.distance
    }

    pub fn frame(&self) -> Frame {
        let right = self.normal.cross(&self.up);
        Frame {
            normal: self.normal,
            up: self.up,
            right,
        }
    }

    pub fn right(&self) -> Vec3 {
        self.normal.cross(&self.up)
    }

    /// Half-extent of the texture along `up`, in texels.
    pub fn range_u(&self) -> f64 {
        self.texture.height as f64 * 0.5
    }

    /// Half-extent of the texture along `right`, in texels.
    pub fn range_v(&self) -> f64 {
        self.texture.width as f64 * 0.5
    }

    /// World half-extent along `up`.
    pub fn half_u(&self) -> f64 {
        self.range_u() / self.lambda_u
    }

    /// World half-extent along `right`.
    pub fn half_v(&self) -> f64 {
        self.range_v() / self.lambda_v
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_u() * self.half_v()
    }

    /// In-plane coordinates `(a, b)` along `(up, right)` to texture `(row, col)` coordinates.
    #[inline]
    pub fn local_to_texel(&self, a: f64, b: f64) -> (f64, f64) {
        (self.range_u() - a * self.lambda_u, self.range_v() + b * self.lambda_v)
    }

    #[inline]
    pub fn texel_to_local(&self, s: f64, q: f64) -> (f64, f64) {
        ((self.range_u() - s) / self.lambda_u, (q - self.range_v()) / self.lambda_v)
    }

    /// World position of continuous texel coordinate `(s, q)`.
    pub fn texel_to_world(&self, s: f64, q: f64) -> Vec3 {
        let (a, b) = self.texel_to_local(s, q);
        self.center() + self.up * a + self.right() * b
    }

    /// The four rectangle corners in pseudo-mesh order.
    pub fn corners(&self) -> [Vec3; 4] {
        let p = self.center();
        let du = self.up * self.half_u();
        let dv = self.right() * self.half_v();
        [p - du - dv, p - du + dv, p + du + dv, p + du - dv]
    }

    /// Re-anchors the center at `center` as seen from `anchor`.
    pub fn set_center(&mut self, anchor: Vec3, center: Vec3) {
        let offset = center - anchor;
        let d = offset.norm();
        self.anchor = anchor;
        if d > 1e-12 {
            self.ray_dir = offset / d;
            self.distance = d;
        } else {
            // Degenerate: keep the old direction and place the center a hair away.
            self.distance = 1e-9;
            self.anchor = center - self.ray_dir * 1e-9;
        }
    }

    pub fn signed_distance(&self, point: &Vec3) -> f64 {
        (point - self.center()).dot(&self.normal)
    }
}

/// Two triangles per tablet; `uv` maps corners onto the tablet's texture tile,
/// normalized to `[0, 1]` (U along columns, V along rows).
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub uv: Vec<[f64; 2]>,
}

pub const TABLET_FACES: [[usize; 3]; 2] = [[0, 1, 2], [0, 2, 3]];
/// Tile-normalized uv of the corners: `(-u,-r)`, `(-u,+r)`, `(+u,+r)`, `(+u,-r)`.
pub const TABLET_UV: [[f64; 2]; 4] = [[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]];

pub fn pseudo_mesh(tablet: &Tablet) -> PseudoMesh {
    PseudoMesh {
        vertices: tablet.corners().to_vec(),
        faces: TABLET_FACES.to_vec(),
        uv: TABLET_UV.to_vec(),
    }
}

impl PseudoMesh {
    /// Concatenates per-tablet meshes; triangle `2k + j` belongs to tablet `k`.
    pub fn from_tablets(tablets: &[Tablet]) -> Self {
        let mut mesh = PseudoMesh {
            vertices: Vec::with_capacity(tablets.len() * 4),
            faces: Vec::with_capacity(tablets.len() * 2),
            uv: Vec::with_capacity(tablets.len() * 4),
        };
        for (k, t) in tablets.iter().enumerate() {
            let base = 4 * k;
            mesh.vertices.extend_from_slice(&t.corners());
            mesh.uv.extend_from_slice(&TABLET_UV);
            for f in TABLET_FACES {
                mesh.faces.push([base + f[0], base + f[1], base + f[2]]);
            }
        }
        mesh
    }

    pub fn tablet_count(&self) -> usize {
        self.faces.len() / 2
    }
}

/// Builds the initial tablet for one superpixel.
///
/// `mask` holds pixel coordinates `(x, y)`; `depth` is the pooled z-depth and
/// `normal_cam` the pooled camera-frame normal.
pub fn backproject_superpixel(
    mask: &[(usize, usize)],
    depth: f64,
    normal_cam: Vec3,
    view: &CameraView,
    camera_index: usize,
) -> Result<Tablet> {
    if mask.is_empty() {
        return Err(Error::EmptySuperpixel);
    }
    if !(depth > 0.0) {
        return Err(Error::InvalidDistance(depth));
    }
    let count = mask.len() as f64;
    let (sx, sy) = mask
        .iter()
        .fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x as f64, ay + y as f64));
    let centroid_ray = view.camera_ray(sx / count, sy / count);

    let mut n_cam = normal_cam;
    if n_cam.norm() < 1e-9 {
        return Err(Error::DegenerateBasis);
    }
    if n_cam.dot(&centroid_ray) > 0.0 {
        n_cam = -n_cam;
    }
    let normal = view.pose.direction_to_world(&n_cam).normalize();
    let world_up = Vector3::y();
    let up_hint = if normal.dot(&world_up).abs() > 0.99 {
        view.pose.up()
    } else {
        world_up
    };
    let (normal, up, right) = orthonormalize_basis(normal, up_hint)?;

    let origin = view.center();
    let plane_point = view.pose.to_world(&(centroid_ray * depth));

    let intersect = |x: f64, y: f64| -> Option<(f64, f64)> {
        let dir = view.world_ray(x, y);
        let denom = dir.dot(&normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (plane_point - origin).dot(&normal) / denom;
        if !(t > 0.0) || t > 100.0 * depth {
            return None;
        }
        let off = origin + dir * t - plane_point;
        Some((off.dot(&up), off.dot(&right)))
    };

    let (mut amin, mut amax, mut bmin, mut bmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in mask {
        for (dx, dy) in [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)] {
            if let Some((a, b)) = intersect(x as f64 + dx, y as f64 + dy) {
                amin = amin.min(a);
                amax = amax.max(a);
                bmin = bmin.min(b);
                bmax = bmax.max(b);
            }
        }
    }
    if amin > amax || bmin > bmax {
        return Err(Error::DegenerateBasis);
    }

    let lambda = view.intrinsics.focal() / depth;
    let height = ((amax - amin) * lambda - 1e-9).ceil().max(1.0) as usize;
    let width = ((bmax - bmin) * lambda - 1e-9).ceil().max(1.0) as usize;
    let center = plane_point + up * (0.5 * (amin + amax)) + right * (0.5 * (bmin + bmax));
    let offset = center - origin;

    let mut tablet = Tablet {
        anchor: origin,
        ray_dir: offset.normalize(),
        distance: offset.norm(),
        normal,
        up,
        lambda_u: lambda,
        lambda_v: lambda,
        texture: Texture::solid(width, height, [0.0; 3], 0.0),
        source_camera: camera_index,
    };

    // Mask bitmap over its bounding box for the alpha test.
    let (xmin, xmax) = mask.iter().fold((usize::MAX, 0), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (ymin, ymax) = mask.iter().fold((usize::MAX, 0), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let bw = xmax - xmin + 1;
    let mut inside = vec![false; bw * (ymax - ymin + 1)];
    for &(x, y) in mask {
        inside[(y - ymin) * bw + (x - xmin)] = true;
    }

    for row in 0..height {
        for col in 0..width {
            let world = tablet.texel_to_world(row as f64 + 0.5, col as f64 + 0.5);
            let (px, py, pz) = view.project(&world);
            let idx = tablet.texture.index(row, col);
            tablet.texture.color[idx] = sample_bilinear_rgb(&view.image, px, py);
            let (rx, ry) = (px.round(), py.round());
            let hit = pz > 0.0
                && rx >= xmin as f64
                && ry >= ymin as f64
                && rx <= xmax as f64
                && ry <= ymax as f64
                && inside[(ry as usize - ymin) * bw + (rx as usize - xmin)];
            tablet.texture.alpha[idx] = if hit { 1.0 } else { 0.0 };
        }
    }
    Ok(tablet)
}
