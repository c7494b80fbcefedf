//! SLIC superpixels in CIELAB + xy space.

use crate::grid::{Grid, RgbImage};

/// Label map; labels are dense from 0 and every label is one 4-connected region.
pub type Labels = Grid<u32>;

const ITERATIONS: usize = 10;

/// sRGB in `[0, 1]` to CIELAB (D65).
pub fn srgb_to_lab(c: [f64; 3]) -> [f64; 3] {
    let lin = |v: f64| {
        let v = v.clamp(0.0, 1.0);
        if v <= 0.04045 {
            v / 12.92
        } else {
            ((v + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(c[0]), lin(c[1]), lin(c[2]));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy, Debug)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Segments `image` into roughly `target` superpixels with compactness `m`.
pub fn slic_superpixels(image: &RgbImage, target: usize, compactness: f64) -> Labels {
    let (w, h) = (image.width, image.height);
    if w == 0 || h == 0 {
        return Grid::from_vec(w, h, Vec::new());
    }
    let lab: Vec<[f64; 3]> = image.data.iter().map(|&c| srgb_to_lab(c)).collect();
    let target = target.max(1);
    let step = ((w * h) as f64 / target as f64).sqrt().max(1.0);

    // Grid seeds, nudged to the lowest-gradient pixel of their 3x3 neighbourhood.
    let nx = ((w as f64 / step).round() as usize).max(1);
    let ny = ((h as f64 / step).round() as usize).max(1);
    let (sx, sy) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let grad = |x: usize, y: usize| {
        let at = |x: usize, y: usize| lab[y * w + x];
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let d = |a: [f64; 3], b: [f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
        d(at(x1, y), at(x0, y)) + d(at(x, y1), at(x, y0))
    };
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = ((i as f64 + 0.5) * sx) as usize;
            let cy = ((j as f64 + 0.5) * sy) as usize;
            let (mut bx, mut by, mut best) = (cx.min(w - 1), cy.min(h - 1), f64::INFINITY);
            for y in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for x in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let g = grad(x, y);
                    if g < best {
                        best = g;
                        bx = x;
                        by = y;
                    }
                }
            }
            centers.push(Center {
                lab: lab[by * w + bx],
                x: bx as f64,
                y: by as f64,
            });
        }
    }

    let s = sx.max(sy);
    let spatial = (compactness / s).powi(2);
    let mut label = vec![u32::MAX; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    for _ in 0..ITERATIONS {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c.x - s).floor().max(0.0) as usize;
            let x1 = ((c.x + s).ceil() as usize).min(w - 1);
            let y0 = (c.y - s).floor().max(0.0) as usize;
            let y1 = ((c.y + s).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let p = lab[i];
                    let dc = (p[0] - c.lab[0]).powi(2) + (p[1] - c.lab[1]).powi(2) + (p[2] - c.lab[2]).powi(2);
                    let ds = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let d = dc + spatial * ds;
                    if d < dist[i] {
                        dist[i] = d;
                        label[i] = k as u32;
                    }
                }
            }
        }
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for (i, &l) in label.iter().enumerate() {
            if l == u32::MAX {
                continue;
            }
            let a = &mut acc[l as usize];
            for k in 0..3 {
                a[k] += lab[i][k];
            }
            a[3] += (i % w) as f64;
            a[4] += (i / w) as f64;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                c.lab = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
                c.x = a[3] / a[5];
                c.y = a[4] / a[5];
            }
        }
    }
    // Pixels no window reached join the nearest center spatially.
    for i in 0..w * h {
        if label[i] == u32::MAX {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let k = centers
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (a.1.x - x).powi(2) + (a.1.y - y).powi(2);
                    let db = (b.1.x - x).powi(2) + (b.1.y - y).powi(2);
                    da.total_cmp(&db)
                })
                .map_or(0, |c| c.0);
            label[i] = k as u32;
        }
    }
    let min_size = ((s * s) / 4.0).max(1.0) as usize;
    enforce_connectivity(Grid::from_vec(w, h, label), min_size)
}

/// Splits labels into 4-connected components and absorbs components smaller
/// than `min_size` into the previously labeled neighbour. Output labels are
/// dense in raster order of first appearance.
pub fn enforce_connectivity(labels: Grid<u32>, min_size: usize) -> Labels {
    let (w, h) = (labels.width, labels.height);
    let mut out = vec![u32::MAX; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..w * h {
        if out[start] != u32::MAX {
            continue;
        }
        let (sx, sy) = (start % w, start / w);
        // Label of an already-visited neighbour, used if this component is tiny.
        let mut adjacent = None;
        for (dx, dy) in [(-1i64, 0i64), (0, -1), (1, 0), (0, 1)] {
            let (x, y) = (sx as i64 + dx, sy as i64 + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                let n = y as usize * w + x as usize;
                if out[n] != u32::MAX {
                    adjacent = Some(out[n]);
                }
            }
        }
        let orig = labels.data[start];
        component.clear();
        stack.push(start);
        out[start] = next;
        while let Some(p) = stack.pop() {
            component.push(p);
            let (px, py) = (p % w, p / w);
            let mut visit = |n: usize| {
                if out[n] == u32::MAX && labels.data[n] == orig {
                    out[n] = next;
                    stack.push(n);
                }
            };
            if px > 0 {
                visit(p - 1);
            }
            if px + 1 < w {
                visit(p + 1);
            }
            if py > 0 {
                visit(p - w);
            }
            if py + 1 < h {
                visit(p + w);
            }
        }
        match adjacent {
            Some(a) if component.len() < min_size => {
                for &p in &component {
                    out[p] = a;
                }
            }
            _ => next += 1,
        }
    }
    Grid::from_vec(w, h, out)
}

/// Number of distinct labels (labels are dense).
pub fn label_count(labels: &Labels) -> usize {
    labels.data.iter().max().map_or(0, |&m| m as usize + 1)
}

/// Pixel coordinates `(x, y)` of every label.
pub fn label_regions(labels: &Labels) -> Vec<Vec<(usize, usize)>> {
    let mut regions = vec![Vec::new(); label_count(labels)];
    for y in 0..labels.height {
        for x in 0..labels.width {
            regions[*labels.get(x, y) as usize].push((x, y));
        }
    }
    regions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_connected(labels: &Labels, l: u32) -> bool {
        let pixels: Vec<usize> = (0..labels.len()).filter(|&i| labels.data[i] == l).collect();
        let w = labels.width;
        let mut seen = vec![false; labels.len()];
        let mut stack = vec![pixels[0]];
        seen[pixels[0]] = true;
        let mut n = 0;
        while let Some(p) = stack.pop() {
            n += 1;
            let (x, y) = (p % w, p / w);
            let mut nb = Vec::new();
            if x > 0 {
                nb.push(p - 1);
            }
            if x + 1 < w {
                nb.push(p + 1);
            }
            if y > 0 {
                nb.push(p - w);
            }
            if y + 1 < labels.height {
                nb.push(p + w);
            }
            for q in nb {
                if !seen[q] && labels.data[q] == l {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        n == pixels.len()
    }

    #[test]
    fn constant_image_gives_grid_quadrants() {
        let img = RgbImage::filled(40, 40, [0.5, 0.5, 0.5]);
        let labels = slic_superpixels(&img, 4, 10.0);
        assert_eq!(label_count(&labels), 4);
        assert_ne!(labels.get(5, 5), labels.get(35, 35));
        assert_ne!(labels.get(5, 5), labels.get(35, 5));
        assert_eq!(labels.get(5, 5), labels.get(15, 15));
    }

    #[test]
    fn two_half_planes_split_on_the_color_edge() {
        let img = Grid::from_fn(40, 20, |x, _| if x < 23 { [0.9, 0.1, 0.1] } else { [0.1, 0.2, 0.9] });
        let labels = slic_superpixels(&img, 2, 1.0);
        assert_eq!(label_count(&labels), 2);
        for y in 0..20 {
            for x in 0..40 {
                assert_eq!(*labels.get(x, y), if x < 23 { *labels.get(0, 0) } else { *labels.get(39, 0) });
            }
        }
    }

    #[test]
    fn every_label_connected_and_count_near_target() {
        let img = Grid::from_fn(96, 72, |x, y| {
            let v = ((x as f64 * 0.21).sin() * (y as f64 * 0.13).cos() + 1.0) * 0.5;
            [v, 1.0 - v, (x as f64 / 96.0)]
        });
        let labels = slic_superpixels(&img, 48, 10.0);
        let n = label_count(&labels);
        assert!((34..=62).contains(&n), "{n} labels");
        for l in 0..n as u32 {
            assert!(is_connected(&labels, l));
        }
    }

    #[test]
    fn lab_reference_values() {
        let white = srgb_to_lab([1.0; 3]);
        assert!((white[0] - 100.0).abs() < 1e-2 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        assert!(srgb_to_lab([0.0; 3])[0].abs() < 1e-9);
        let red = srgb_to_lab([1.0, 0.0, 0.0]);
        assert!((red[0] - 53.24).abs() < 0.1 && (red[1] - 80.09).abs() < 0.2 && (red[2] - 67.20).abs() < 0.2);
    }
}
