//! Depth-peeled software rasterization of tablet pseudo meshes.
//!
//! Every pixel center casts a ray; each tablet contributes at most one hit
//! (its two triangles share a diagonal). Hits are sorted front to back and the
//! nearest `L` become the pixel's layers. Tablets are two-sided.

use crate::atlas::AxisCell;
use crate::camera::CameraView;
use crate::grid::Rgb;
use crate::tablet::{PseudoMesh, Tablet};
use crate::Vec3;

/// Hits closer than this z-depth are clipped.
pub const NEAR: f64 = 1e-6;
/// Coverage below this marks a silhouette-edge fragment.
pub const EDGE_COVERAGE: f64 = 1.0 - 1e-9;

pub const NO_PARTNER: u32 = u32::MAX;

/// One rasterized surface at one pixel.
#[derive(Clone, Copy, Debug)]
pub struct Fragment {
    pub tablet: u32,
    /// Global triangle id: `2 * tablet + local face`.
    pub tri: u32,
    /// Barycentric weights of the triangle's second and third vertex.
    pub bary: [f64; 2],
    /// Camera z-depth of the hit.
    pub depth: f64,
    pub point: Vec3,
    /// Tablet normal, flipped to face the camera.
    pub normal: Vec3,
    /// +1 if the stored tablet normal already faced the camera, else -1.
    pub facing: f64,
    /// Tile-local texel coordinates `(row, col)`.
    pub texel: [f64; 2],
    pub rows: AxisCell,
    pub cols: AxisCell,
    /// Sampled values before anti-aliasing.
    pub color: Rgb,
    pub alpha: f64,
    /// Values after anti-aliasing; these feed composition.
    pub color_aa: Rgb,
    pub alpha_aa: f64,
    /// Fraction of the pixel square covered by this fragment's tablet.
    pub coverage: f64,
    /// Fragment index (in the same layer of a neighbouring pixel) across the
    /// silhouette edge, or `NO_PARTNER`.
    pub partner: u32,
}

impl Fragment {
    pub fn is_edge(&self) -> bool {
        self.coverage < EDGE_COVERAGE
    }
}

/// Per-pixel peeled layers, stored compactly: pixel `i` owns
/// `frags[offsets[i]..offsets[i + 1]]`, nearest first.
#[derive(Clone, Debug)]
pub struct LayerStack {
    pub width: usize,
    pub height: usize,
    pub layers: usize,
    pub offsets: Vec<u32>,
    pub frags: Vec<Fragment>,
}

impl LayerStack {
    pub fn empty(width: usize, height: usize, layers: usize) -> Self {
        LayerStack {
            width,
            height,
            layers,
            offsets: vec![0; width * height + 1],
            frags: Vec::new(),
        }
    }

    #[inline]
    pub fn pixel_range(&self, pixel: usize) -> std::ops::Range<usize> {
        self.offsets[pixel] as usize..self.offsets[pixel + 1] as usize
    }

    #[inline]
    pub fn pixel(&self, pixel: usize) -> &[Fragment] {
        &self.frags[self.pixel_range(pixel)]
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Tablet ids per pixel, front to back.
    pub fn visibility(&self) -> Vec<Vec<u32>> {
        (0..self.pixel_count())
            .map(|p| self.pixel(p).iter().map(|f| f.tablet).collect())
            .collect()
    }

    /// Discrete rasterization state: layer order, triangle ids and edge flags.
    pub fn same_visibility(&self, other: &LayerStack) -> bool {
        self.offsets == other.offsets
            && self
                .frags
                .iter()
                .zip(&other.frags)
                .all(|(a, b)| a.tri == b.tri && a.is_edge() == b.is_edge() && a.partner == b.partner)
    }
}

/// Tablet frame recomputed from its parameters. The normal is normalized and
/// the up vector re-orthogonalized, which is exactly what the gradient pass
/// differentiates through.
#[derive(Clone, Copy, Debug)]
pub struct TabletGeom {
    pub center: Vec3,
    pub normal: Vec3,
    pub up: Vec3,
    pub right: Vec3,
    /// `|raw normal|` and `|up - (up.n)n|`, kept for the backward pass.
    pub normal_len: f64,
    pub up_len: f64,
    pub range_u: f64,
    pub range_v: f64,
    pub lambda_u: f64,
    pub lambda_v: f64,
}

impl TabletGeom {
    pub fn new(t: &Tablet) -> Self {
        let normal_len = t.normal.norm();
        let normal = t.normal / normal_len;
        let w = t.up - normal * t.up.dot(&normal);
        let up_len = w.norm();
        let up = w / up_len;
        TabletGeom {
            center: t.center(),
            normal,
            up,
            right: normal.cross(&up),
            normal_len,
            up_len,
            range_u: t.range_u(),
            range_v: t.range_v(),
            lambda_u: t.lambda_u,
            lambda_v: t.lambda_v,
        }
    }

    pub fn corners(&self) -> [Vec3; 4] {
        let du = self.up * (self.range_u / self.lambda_u);
        let dv = self.right * (self.range_v / self.lambda_v);
        let p = self.center;
        [p - du - dv, p - du + dv, p + du + dv, p + du - dv]
    }

    /// Ray-plane hit: `(t, point, (row, col))`. `dir` has camera-z 1, so `t` is z-depth.
    #[inline]
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3, [f64; 2])> {
        let denom = dir.dot(&self.normal);
        if denom.abs() < 1e-300 {
            return None;
        }
        let t = (self.center - origin).dot(&self.normal) / denom;
        let x = origin + dir * t;
        let e = x - self.center;
        let a = e.dot(&self.up);
        let b = e.dot(&self.right);
        Some((
            t,
            x,
            [self.range_u - a * self.lambda_u, self.range_v + b * self.lambda_v],
        ))
    }
}

/// Möller–Trumbore with inclusive edges. Returns `(t, u, v)`.
#[inline]
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - v0;
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some((e2.dot(&qvec) * inv, u, v))
}

/// Barycentrics of a point on the triangle's plane (no inside test).
#[inline]
pub fn plane_barycentrics(point: &Vec3, v0: &Vec3, v1: &Vec3, v2: &Vec3) -> [f64; 2] {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let ep = point - v0;
    let d11 = e1.dot(&e1);
    let d12 = e1.dot(&e2);
    let d22 = e2.dot(&e2);
    let dp1 = ep.dot(&e1);
    let dp2 = ep.dot(&e2);
    let den = d11 * d22 - d12 * d12;
    [(d22 * dp1 - d12 * dp2) / den, (d11 * dp2 - d12 * dp1) / den]
}

#[derive(Clone, Copy)]
struct Hit {
    pixel: u32,
    tri: u32,
    depth: f64,
    bary: [f64; 2],
}

/// Rasterizes all tablets into `layers` depth-sorted layers per pixel.
/// Colors are left at zero; see [`crate::render::sample_layers`].
pub fn rasterize_peeled(tablets: &[Tablet], view: &CameraView, layers: usize) -> LayerStack {
    let (width, height) = (view.width(), view.height());
    let layers = layers.max(1);
    let mesh = PseudoMesh::from_tablets(tablets);
    let geoms: Vec<TabletGeom> = tablets.iter().map(TabletGeom::new).collect();
    let origin = view.center();

    let mut hits: Vec<Hit> = Vec::new();
    let mut projected: Vec<Option<[[f64; 2]; 4]>> = Vec::with_capacity(tablets.len());
    for k in 0..tablets.len() {
        let corners = &mesh.vertices[4 * k..4 * k + 4];
        let cam: Vec<Vec3> = corners.iter().map(|c| view.pose.to_camera(c)).collect();
        if cam.iter().all(|c| c.z <= NEAR) {
            projected.push(None);
            continue;
        }
        let (x0, x1, y0, y1, quad) = if cam.iter().all(|c| c.z > NEAR) {
            let k_ = &view.intrinsics;
            let pts: Vec<[f64; 2]> = cam
                .iter()
                .map(|c| [k_.fx * c.x / c.z + k_.cx, k_.fy * c.y / c.z + k_.cy])
                .collect();
            let xmin = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let xmax = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let ymin = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let ymax = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            if xmax < -0.5 || ymax < -0.5 || xmin > width as f64 - 0.5 || ymin > height as f64 - 0.5 {
                projected.push(None);
                continue;
            }
            (
                xmin.floor().max(0.0) as usize,
                (xmax.ceil().max(0.0) as usize).min(width - 1),
                ymin.floor().max(0.0) as usize,
                (ymax.ceil().max(0.0) as usize).min(height - 1),
                Some([pts[0], pts[1], pts[2], pts[3]]),
            )
        } else {
            (0, width - 1, 0, height - 1, None)
        };
        projected.push(quad);

        for y in y0..=y1 {
            for x in x0..=x1 {
                let dir = view.world_ray(x as f64, y as f64);
                for local in 0..2u32 {
                    let f = mesh.faces[2 * k + local as usize];
                    if let Some((t, u, v)) =
                        ray_triangle(&origin, &dir, &mesh.vertices[f[0]], &mesh.vertices[f[1]], &mesh.vertices[f[2]])
                    {
                        if t > NEAR {
                            hits.push(Hit {
                                pixel: (y * width + x) as u32,
                                tri: 2 * k as u32 + local,
                                depth: t,
                                bary: [u, v],
                            });
                            break;
                        }
                    }
                }
            }
        }
    }

    hits.sort_unstable_by(|a, b| {
        a.pixel
            .cmp(&b.pixel)
            .then(a.depth.total_cmp(&b.depth))
            .then(a.tri.cmp(&b.tri))
    });

    let mut stack = LayerStack::empty(width, height, layers);
    let mut frags = Vec::with_capacity(hits.len());
    // Per-fragment layer index, for partner lookup.
    let mut cursor = 0usize;
    for pixel in 0..width * height {
        stack.offsets[pixel] = frags.len() as u32;
        let start = cursor;
        while cursor < hits.len() && hits[cursor].pixel as usize == pixel {
            cursor += 1;
        }
        for h in &hits[start..cursor.min(start + layers)] {
            let k = (h.tri / 2) as usize;
            let g = &geoms[k];
            let (x, y) = ((pixel % width) as f64, (pixel / width) as f64);
            let dir = view.world_ray(x, y);
            let (_, point, texel) = g.intersect(&origin, &dir).unwrap_or((h.depth, origin + dir * h.depth, [0.0; 2]));
            let facing = if g.normal.dot(&dir) > 0.0 { -1.0 } else { 1.0 };
            let tex = &tablets[k].texture;
            let coverage = match projected[k] {
                Some(quad) => pixel_coverage(&quad, x, y),
                None => Coverage::full(x, y),
            };
            frags.push((
                Fragment {
                    tablet: k as u32,
                    tri: h.tri,
                    bary: h.bary,
                    depth: h.depth,
                    point,
                    normal: g.normal * facing,
                    facing,
                    texel,
                    rows: AxisCell::locate(texel[0], tex.height),
                    cols: AxisCell::locate(texel[1], tex.width),
                    color: [0.0; 3],
                    alpha: 0.0,
                    color_aa: [0.0; 3],
                    alpha_aa: 0.0,
                    coverage: coverage.area,
                    partner: NO_PARTNER,
                },
                coverage.centroid,
            ));
        }
    }
    stack.offsets[width * height] = frags.len() as u32;

    // Link each edge fragment to the same layer of the neighbour lying away
    // from the covered part of the pixel.
    let mut out: Vec<Fragment> = frags.iter().map(|f| f.0).collect();
    for pixel in 0..width * height {
        let range = stack.offsets[pixel] as usize..stack.offsets[pixel + 1] as usize;
        let (x, y) = ((pixel % width) as i64, (pixel / width) as i64);
        for (layer, idx) in range.enumerate() {
            if !out[idx].is_edge() {
                continue;
            }
            let centroid = frags[idx].1;
            let (dx, dy) = (x as f64 - centroid[0], y as f64 - centroid[1]);
            let (nx, ny) = if dx.abs() >= dy.abs() {
                (x + if dx >= 0.0 { 1 } else { -1 }, y)
            } else {
                (x, y + if dy >= 0.0 { 1 } else { -1 })
            };
            if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                continue;
            }
            let np = ny as usize * width + nx as usize;
            let nrange = stack.offsets[np] as usize..stack.offsets[np + 1] as usize;
            if layer < nrange.len() {
                out[idx].partner = (nrange.start + layer) as u32;
            }
        }
    }
    stack.frags = out;
    stack
}

/// Re-evaluates every fragment's continuous geometry from the current tablet
/// parameters while holding the discrete rasterization decisions fixed.
pub fn reshade_geometry(stack: &mut LayerStack, tablets: &[Tablet], view: &CameraView) {
    let geoms: Vec<TabletGeom> = tablets.iter().map(TabletGeom::new).collect();
    let origin = view.center();
    let width = stack.width;
    for pixel in 0..stack.pixel_count() {
        let (x, y) = ((pixel % width) as f64, (pixel / width) as f64);
        let dir = view.world_ray(x, y);
        for idx in stack.pixel_range(pixel) {
            let f = &mut stack.frags[idx];
            let k = f.tablet as usize;
            let g = &geoms[k];
            if let Some((t, point, texel)) = g.intersect(&origin, &dir) {
                f.depth = t;
                f.point = point;
                f.texel = texel;
            }
            f.normal = g.normal * f.facing;
            let corners = g.corners();
            let face = crate::tablet::TABLET_FACES[(f.tri % 2) as usize];
            f.bary = plane_barycentrics(&f.point, &corners[face[0]], &corners[face[1]], &corners[face[2]]);
        }
    }
}

struct Coverage {
    area: f64,
    centroid: [f64; 2],
}

impl Coverage {
    fn full(x: f64, y: f64) -> Self {
        Coverage {
            area: 1.0,
            centroid: [x, y],
        }
    }
}

/// Area of the unit pixel square centered at `(x, y)` covered by a convex
/// screen-space quad, with the centroid of the covered part.
fn pixel_coverage(quad: &[[f64; 2]; 4], x: f64, y: f64) -> Coverage {
    let signed = polygon_area(quad);
    if signed.abs() < 1e-300 {
        return Coverage {
            area: 0.0,
            centroid: [x, y],
        };
    }
    let orient = signed.signum();
    let inside = |a: &[f64; 2], b: &[f64; 2], p: &[f64; 2]| {
        orient * ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) >= 0.0
    };
    let square = [[x - 0.5, y - 0.5], [x + 0.5, y - 0.5], [x + 0.5, y + 0.5], [x - 0.5, y + 0.5]];
    let all_inside = square
        .iter()
        .all(|p| (0..4).all(|e| inside(&quad[e], &quad[(e + 1) % 4], p)));
    if all_inside {
        return Coverage::full(x, y);
    }

    let mut poly: Vec<[f64; 2]> = square.to_vec();
    for e in 0..4 {
        let (a, b) = (quad[e], quad[(e + 1) % 4]);
        let input = std::mem::take(&mut poly);
        if input.is_empty() {
            break;
        }
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let (cin, pin) = (inside(&a, &b, &cur), inside(&a, &b, &prev));
            if cin {
                if !pin {
                    poly.push(line_intersection(&prev, &cur, &a, &b));
                }
                poly.push(cur);
            } else if pin {
                poly.push(line_intersection(&prev, &cur, &a, &b));
            }
        }
    }
    if poly.len() < 3 {
        return Coverage {
            area: 0.0,
            centroid: [x, y],
        };
    }
    let area = polygon_area(&poly);
    if area.abs() < 1e-300 {
        return Coverage {
            area: 0.0,
            centroid: [x, y],
        };
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        let cross = p[0] * q[1] - q[0] * p[1];
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    Coverage {
        area: area.abs().min(1.0),
        centroid: [cx / (6.0 * area), cy / (6.0 * area)],
    }
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

fn line_intersection(p: &[f64; 2], q: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> [f64; 2] {
    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
    let den = dx * ey - dy * ex;
    if den.abs() < 1e-300 {
        return *q;
    }
    let t = ((a[0] - p[0]) * ey - (a[1] - p[1]) * ex) / den;
    [p[0] + t * dx, p[1] + t * dy]
}
