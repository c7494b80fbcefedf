use serde::{Deserialize, Serialize};

/// Row-major 2D buffer. Pixel `(x, y)` lives at `y * width + x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type Rgb = [f64; 3];
pub type RgbImage = Grid<Rgb>;
pub type ScalarImage = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        let w = self.width;
        &mut self.data[y * w + x]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>() / 3.0)
        .sum();
    sum / a.len() as f64
}

/// Peak signal-to-noise ratio in dB for images with values in [0, 1].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let m = mse(a, b);
    if m <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    }
}

/// Bilinear lookup with pixel centers at integer coordinates, clamped at the border.
pub fn sample_bilinear_rgb(img: &RgbImage, x: f64, y: f64) -> Rgb {
    let xc = x.clamp(0.0, (img.width - 1) as f64);
    let yc = y.clamp(0.0, (img.height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = img.get(x0, y0)[c] * (1.0 - fx) + img.get(x1, y0)[c] * fx;
        let bot = img.get(x0, y1)[c] * (1.0 - fx) + img.get(x1, y1)[c] * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    out
}
