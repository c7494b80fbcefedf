//! Global texture atlas and the bilinear sampler shared by rendering and export.
//!
//! Texel `(row, col)` has its center at continuous coordinate
//! `(row + 0.5, col + 0.5)`. Sampling clamps to the tile's own border texels,
//! so neighbouring tiles in the atlas never bleed into each other.

use crate::grid::Rgb;
use crate::tablet::{Tablet, TABLET_FACES, TABLET_UV};

/// Bilinear cell along one axis. When `clamped`, the coordinate is outside the
/// span of texel centers and the sample is constant along this axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct AxisCell {
    pub i0: u32,
    pub i1: u32,
    pub clamped: bool,
}

impl AxisCell {
    /// Cell containing texel coordinate `x` on an axis of `n` texels.
    pub fn locate(x: f64, n: usize) -> AxisCell {
        let xc = x - 0.5;
        if n <= 1 || xc <= 0.0 {
            return AxisCell {
                i0: 0,
                i1: 0,
                clamped: true,
            };
        }
        let last = (n - 1) as f64;
        if xc >= last {
            let i = (n - 1) as u32;
            return AxisCell {
                i0: i,
                i1: i,
                clamped: true,
            };
        }
        let i0 = (xc.floor() as usize).min(n - 2);
        AxisCell {
            i0: i0 as u32,
            i1: i0 as u32 + 1,
            clamped: false,
        }
    }

    /// Interpolation fraction and its derivative with respect to `x`.
    /// Outside `[i0, i1]` the fraction extrapolates linearly, which only
    /// happens when a cell is held fixed across a perturbation.
    #[inline]
    pub fn fraction(&self, x: f64) -> (f64, f64) {
        if self.clamped {
            (0.0, 0.0)
        } else {
            (x - 0.5 - self.i0 as f64, 1.0)
        }
    }
}

/// The four texel taps of a bilinear sample, with weights and their
/// derivatives with respect to the row (`s`) and column (`q`) coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub struct BilinearTaps {
    /// `(row, col)` of each tap, tile-local.
    pub texel: [(u32, u32); 4],
    pub weight: [f64; 4],
    pub d_ds: [f64; 4],
    pub d_dq: [f64; 4],
}

impl BilinearTaps {
    pub fn new(s: f64, q: f64, rows: AxisCell, cols: AxisCell) -> Self {
        let (fs, dfs) = rows.fraction(s);
        let (fq, dfq) = cols.fraction(q);
        BilinearTaps {
            texel: [
                (rows.i0, cols.i0),
                (rows.i0, cols.i1),
                (rows.i1, cols.i0),
                (rows.i1, cols.i1),
            ],
            weight: [
                (1.0 - fs) * (1.0 - fq),
                (1.0 - fs) * fq,
                fs * (1.0 - fq),
                fs * fq,
            ],
            d_ds: [-dfs * (1.0 - fq), -dfs * fq, dfs * (1.0 - fq), dfs * fq],
            d_dq: [-dfq * (1.0 - fs), dfq * (1.0 - fs), -dfq * fs, dfq * fs],
        }
    }

    pub fn locate(s: f64, q: f64, height: usize, width: usize) -> Self {
        Self::new(s, q, AxisCell::locate(s, height), AxisCell::locate(q, width))
    }
}

/// Bilinear color and alpha from a tablet's own texture.
pub fn sample_texture(tablet: &Tablet, taps: &BilinearTaps) -> (Rgb, f64) {
    let tex = &tablet.texture;
    let mut c = [0.0; 3];
    let mut a = 0.0;
    for k in 0..4 {
        let (r, q) = taps.texel[k];
        let idx = tex.index(r as usize, q as usize);
        let w = taps.weight[k];
        let t = tex.color[idx];
        c[0] += w * t[0];
        c[1] += w * t[1];
        c[2] += w * t[2];
        a += w * tex.alpha[idx];
    }
    (c, a)
}

/// Placement of one tablet's texture inside the atlas page.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Tile {
    pub fn overlaps(&self, other: &Tile) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }
}

/// Single RGBA page holding every tablet texture; tile `k` belongs to tablet `k`.
#[derive(Clone, Debug)]
pub struct TextureAtlas {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 4]>,
    pub tiles: Vec<Tile>,
}

const GUTTER: usize = 1;

impl TextureAtlas {
    /// Shelf-packs tiles in tablet order, tallest-first within the page width.
    pub fn pack(tablets: &[Tablet]) -> Self {
        let area: usize = tablets
            .iter()
            .map(|t| (t.texture.width + GUTTER) * (t.texture.height + GUTTER))
            .sum();
        let widest = tablets.iter().map(|t| t.texture.width + GUTTER).max().unwrap_or(1);
        let page_width = ((area as f64).sqrt().ceil() as usize).max(widest).max(1);

        let mut order: Vec<usize> = (0..tablets.len()).collect();
        order.sort_by_key(|&k| (std::cmp::Reverse(tablets[k].texture.height), k));

        let mut tiles = vec![
            Tile {
                x: 0,
                y: 0,
                width: 0,
                height: 0
            };
            tablets.len()
        ];
        let (mut cursor_x, mut shelf_y, mut shelf_h) = (0usize, 0usize, 0usize);
        for k in order {
            let (w, h) = (tablets[k].texture.width, tablets[k].texture.height);
            if cursor_x + w > page_width && cursor_x > 0 {
                shelf_y += shelf_h + GUTTER;
                cursor_x = 0;
                shelf_h = 0;
            }
            tiles[k] = Tile {
                x: cursor_x,
                y: shelf_y,
                width: w,
                height: h,
            };
            cursor_x += w + GUTTER;
            shelf_h = shelf_h.max(h);
        }
        let page_height = (shelf_y + shelf_h).max(1);

        let mut data = vec![[0.0; 4]; page_width * page_height];
        for (t, tile) in tablets.iter().zip(&tiles) {
            for row in 0..tile.height {
                for col in 0..tile.width {
                    let src = t.texture.index(row, col);
                    let c = t.texture.color[src];
                    data[(tile.y + row) * page_width + tile.x + col] =
                        [c[0], c[1], c[2], t.texture.alpha[src]];
                }
            }
        }
        TextureAtlas {
            width: page_width,
            height: page_height,
            data,
            tiles,
        }
    }

    /// Tile-local texel coordinates `(s, q)` of a point given by triangle id and
    /// barycentrics `(u, v)` of the triangle's second and third vertices.
    pub fn texel_coords(&self, tri: usize, bary: [f64; 2]) -> (f64, f64) {
        let tile = &self.tiles[tri / 2];
        let face = TABLET_FACES[tri % 2];
        let w = [1.0 - bary[0] - bary[1], bary[0], bary[1]];
        let (mut s, mut q) = (0.0, 0.0);
        for (corner, weight) in face.iter().zip(w) {
            let uv = TABLET_UV[*corner];
            q += weight * uv[0] * tile.width as f64;
            s += weight * uv[1] * tile.height as f64;
        }
        (s, q)
    }

    pub fn texel(&self, tile: &Tile, row: usize, col: usize) -> [f64; 4] {
        self.data[(tile.y + row) * self.width + tile.x + col]
    }

    /// Normalized page coordinates (U right, V down) of a tile-local texel coordinate.
    pub fn page_uv(&self, tablet: usize, s: f64, q: f64) -> [f64; 2] {
        let tile = &self.tiles[tablet];
        [
            (tile.x as f64 + q) / self.width as f64,
            (tile.y as f64 + s) / self.height as f64,
        ]
    }
}

/// Bilinear color and alpha at triangle `tri`, barycentrics `bary`.
pub fn sample_atlas(atlas: &TextureAtlas, tri: usize, bary: [f64; 2]) -> (Rgb, f64) {
    let tile = atlas.tiles[tri / 2];
    let (s, q) = atlas.texel_coords(tri, bary);
    let taps = BilinearTaps::locate(s, q, tile.height, tile.width);
    let mut out = [0.0; 4];
    for k in 0..4 {
        let (r, c) = taps.texel[k];
        let t = atlas.texel(&tile, r as usize, c as usize);
        for ch in 0..4 {
            out[ch] += taps.weight[k] * t[ch];
        }
    }
    ([out[0], out[1], out[2]], out[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tablet::Texture;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn tablet_with(tex: Texture) -> Tablet {
        Tablet {
            anchor: Vector3::zeros(),
            ray_dir: Vector3::z(),
            distance: 1.0,
            normal: -Vector3::z(),
            up: Vector3::y(),
            lambda_u: 10.0,
            lambda_v: 10.0,
            texture: tex,
            source_camera: 0,
        }
    }

    fn bary_for(atlas: &TextureAtlas, tablet: usize, s: f64, q: f64) -> (usize, [f64; 2]) {
        // Solve for barycentrics on whichever triangle contains (s, q).
        let tile = atlas.tiles[tablet];
        let corner = |c: usize| {
            let uv = TABLET_UV[c];
            (uv[1] * tile.height as f64, uv[0] * tile.width as f64)
        };
        for f in 0..2 {
            let [a, b, c] = TABLET_FACES[f].map(corner);
            let det = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
            let u = ((s - a.0) * (c.1 - a.1) - (c.0 - a.0) * (q - a.1)) / det;
            let v = ((b.0 - a.0) * (q - a.1) - (s - a.0) * (b.1 - a.1)) / det;
            if u >= -1e-12 && v >= -1e-12 && u + v <= 1.0 + 1e-12 {
                return (2 * tablet + f, [u, v]);
            }
        }
        panic!("point outside tile");
    }

    #[test]
    fn constant_tile_gives_constant_sample() {
        let atlas = TextureAtlas::pack(&[tablet_with(Texture::solid(5, 3, [0.2, 0.4, 0.6], 0.7))]);
        for (tri, bary) in [(0, [0.1, 0.3]), (1, [0.5, 0.25]), (0, [0.0, 0.0])] {
            let (c, a) = sample_atlas(&atlas, tri, bary);
            assert_relative_eq!(c[0], 0.2, epsilon = 1e-12);
            assert_relative_eq!(c[2], 0.6, epsilon = 1e-12);
            assert_relative_eq!(a, 0.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn texel_center_and_midpoint() {
        let mut tex = Texture::solid(2, 1, [0.0; 3], 0.0);
        tex.color[1] = [1.0; 3];
        tex.alpha[1] = 1.0;
        let atlas = TextureAtlas::pack(&[tablet_with(tex)]);
        let (tri, bary) = bary_for(&atlas, 0, 0.5, 1.5);
        let (c, a) = sample_atlas(&atlas, tri, bary);
        assert_relative_eq!(c[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(a, 1.0, epsilon = 1e-12);
        let (tri, bary) = bary_for(&atlas, 0, 0.5, 1.0);
        let (c, a) = sample_atlas(&atlas, tri, bary);
        assert_relative_eq!(c[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(a, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn tiles_are_disjoint_and_never_bleed() {
        let tablets: Vec<_> = (0..7)
            .map(|k| {
                let v = k as f64 / 7.0;
                tablet_with(Texture::solid(3 + k, 2 + (k * 3) % 5, [v, v, v], 1.0))
            })
            .collect();
        let atlas = TextureAtlas::pack(&tablets);
        for i in 0..tablets.len() {
            assert_eq!(atlas.tiles[i].width, tablets[i].texture.width);
            assert_eq!(atlas.tiles[i].height, tablets[i].texture.height);
            assert!(atlas.tiles[i].x + atlas.tiles[i].width <= atlas.width);
            assert!(atlas.tiles[i].y + atlas.tiles[i].height <= atlas.height);
            for j in 0..i {
                assert!(!atlas.tiles[i].overlaps(&atlas.tiles[j]));
            }
            // Corners sample exactly their own tile's value.
            for (tri, bary) in [(2 * i, [0.0, 0.0]), (2 * i, [1.0, 0.0]), (2 * i + 1, [0.0, 1.0])] {
                let (c, _) = sample_atlas(&atlas, tri, bary);
                assert_relative_eq!(c[0], i as f64 / 7.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn taps_derivatives_match_differences() {
        let taps = BilinearTaps::locate(2.3, 1.7, 5, 4);
        let h = 1e-6;
        let p = BilinearTaps::new(2.3 + h, 1.7, AxisCell::locate(2.3, 5), AxisCell::locate(1.7, 4));
        let m = BilinearTaps::new(2.3 - h, 1.7, AxisCell::locate(2.3, 5), AxisCell::locate(1.7, 4));
        for k in 0..4 {
            assert_relative_eq!(taps.d_ds[k], (p.weight[k] - m.weight[k]) / (2.0 * h), epsilon = 1e-8);
        }
        assert_relative_eq!(taps.weight.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }
}
