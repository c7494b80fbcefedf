//! Training losses. All reductions are per-pixel means so the weights do not
//! depend on image resolution.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::grid::{Grid, RgbImage, ScalarImage};
use crate::raster::LayerStack;
use crate::render::{blend_weights, RenderOutput};
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub photometric: f64,
    pub alpha_inverse: f64,
    pub distortion: f64,
    pub depth: f64,
    pub normal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            photometric: 1.0,
            alpha_inverse: 1.0,
            distortion: 20.0,
            depth: 4.0,
            normal: 4.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            photometric: 0.0,
            alpha_inverse: 0.0,
            distortion: 0.0,
            depth: 0.0,
            normal: 0.0,
        }
    }
}

/// Which per-layer quantity multiplies the inter-layer distance in the
/// distortion loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistortionWeighting {
    /// `T_i * T_{i+1}` with `T` the transmittance in front of each layer.
    #[default]
    Transmittance,
    /// `w_i * w_{i+1}` with `w = T * alpha` the blending weight.
    BlendWeight,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub photometric: f64,
    pub alpha_inverse: f64,
    pub distortion: f64,
    pub depth: f64,
    pub normal: f64,
}

impl LossComponents {
    pub fn total(&self, w: &LossWeights) -> f64 {
        total_loss(self, w)
    }

    pub fn is_finite(&self) -> bool {
        [self.photometric, self.alpha_inverse, self.distortion, self.depth, self.normal]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        LossComponents {
            photometric: self.photometric * s,
            alpha_inverse: self.alpha_inverse * s,
            distortion: self.distortion * s,
            depth: self.depth * s,
            normal: self.normal * s,
        }
    }

    pub fn add(&mut self, o: &LossComponents) {
        self.photometric += o.photometric;
        self.alpha_inverse += o.alpha_inverse;
        self.distortion += o.distortion;
        self.depth += o.depth;
        self.normal += o.normal;
    }
}

/// A masked mean; `empty` is set when no pixel passed the mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskedMean {
    pub value: f64,
    pub empty: bool,
}

fn masked_mean(mask: &Grid<bool>, mut term: impl FnMut(usize) -> f64) -> MaskedMean {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, &m) in mask.data.iter().enumerate() {
        if m {
            sum += term(i);
            n += 1;
        }
    }
    if n == 0 {
        MaskedMean {
            value: 0.0,
            empty: true,
        }
    } else {
        MaskedMean {
            value: sum / n as f64,
            empty: false,
        }
    }
}

pub fn photometric_loss(rendered: &RgbImage, observed: &RgbImage, mask: &Grid<bool>) -> MaskedMean {
    assert_eq!((rendered.width, rendered.height), (observed.width, observed.height));
    masked_mean(mask, |i| {
        let (a, b) = (rendered.data[i], observed.data[i]);
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    })
}

/// Mean residual transmittance over pixels hit by any geometry.
pub fn alpha_inverse_loss(stack: &LayerStack) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in 0..stack.pixel_count() {
        let frags = stack.pixel(p);
        if frags.is_empty() {
            continue;
        }
        sum += frags.iter().map(|f| 1.0 - f.alpha_aa).product::<f64>();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean over geometry-covered pixels of `sum_i T_i T_{i+1} |p_i - p_{i+1}|`.
pub fn distortion_loss(stack: &LayerStack, mode: DistortionWeighting) -> f64 {
    let weights = blend_weights(stack);
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in 0..stack.pixel_count() {
        let range = stack.pixel_range(p);
        if range.is_empty() {
            continue;
        }
        n += 1;
        let frags = &stack.frags[range.clone()];
        let mut trans = Vec::with_capacity(frags.len());
        let mut t = 1.0;
        for f in frags {
            trans.push(t);
            t *= 1.0 - f.alpha_aa;
        }
        for i in 0..frags.len().saturating_sub(1) {
            let dist = (frags[i].point - frags[i + 1].point).norm();
            let factor = match mode {
                DistortionWeighting::Transmittance => trans[i] * trans[i + 1],
                DistortionWeighting::BlendWeight => weights[range.start + i] * weights[range.start + i + 1],
            };
            sum += factor * dist;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn depth_loss(rendered: &ScalarImage, supervision: &ScalarImage, mask: &Grid<bool>) -> MaskedMean {
    masked_mean(mask, |i| (rendered.data[i] - supervision.data[i]).powi(2))
}

pub fn normal_loss(rendered: &Grid<Vec3>, supervision: &Grid<Vec3>, mask: &Grid<bool>) -> MaskedMean {
    masked_mean(mask, |i| (rendered.data[i] - supervision.data[i]).norm_squared())
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.photometric * c.photometric
        + w.alpha_inverse * c.alpha_inverse
        + w.distortion * c.distortion
        + w.depth * c.depth
        + w.normal * c.normal
}

pub fn covered_mask(stack: &LayerStack) -> Grid<bool> {
    Grid::from_vec(
        stack.width,
        stack.height,
        (0..stack.pixel_count()).map(|p| !stack.pixel_range(p).is_empty()).collect(),
    )
}

/// Supervision maps for one view in the rendered buffers' conventions:
/// depth as z-depth, normals in world frame facing the camera.
pub struct Supervision {
    pub depth: ScalarImage,
    pub depth_mask: Grid<bool>,
    pub normal: Grid<Vec3>,
    pub normal_mask: Grid<bool>,
}

impl Supervision {
    pub fn of(view: &CameraView) -> Self {
        let (w, h) = (view.width(), view.height());
        let mut s = Supervision {
            depth: Grid::filled(w, h, 0.0),
            depth_mask: Grid::filled(w, h, false),
            normal: Grid::filled(w, h, Vec3::zeros()),
            normal_mask: Grid::filled(w, h, false),
        };
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if let Some(d) = view.depth_at(x, y) {
                    s.depth.data[i] = d;
                    s.depth_mask.data[i] = true;
                }
                if let Some(n) = view.world_normal(x, y) {
                    s.normal.data[i] = n;
                    s.normal_mask.data[i] = true;
                }
            }
        }
        s
    }
}

/// All five loss components for a rendered view.
pub fn view_losses(out: &RenderOutput, view: &CameraView, mode: DistortionWeighting) -> LossComponents {
    let sup = Supervision::of(view);
    let covered = covered_mask(&out.stack);
    let and = |a: &Grid<bool>, b: &Grid<bool>| {
        Grid::from_vec(a.width, a.height, a.data.iter().zip(&b.data).map(|(x, y)| *x && *y).collect())
    };
    LossComponents {
        photometric: photometric_loss(&out.color, &view.image, &covered).value,
        alpha_inverse: alpha_inverse_loss(&out.stack),
        distortion: distortion_loss(&out.stack, mode),
        depth: depth_loss(&out.depth, &sup.depth, &and(&out.valid, &sup.depth_mask)).value,
        normal: normal_loss(&out.normal, &sup.normal, &and(&out.valid, &sup.normal_mask)).value,
    }
}

/// Per-step loss log: `step,L_pho,L_ainv,L_dist,L_depth,L_normal,total`.
pub struct LossCsv<W: Write> {
    out: W,
}

impl<W: Write> LossCsv<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "step,L_pho,L_ainv,L_dist,L_depth,L_normal,total")?;
        Ok(LossCsv { out })
    }

    pub fn record(&mut self, step: usize, c: &LossComponents, weights: &LossWeights) -> std::io::Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{}",
            step,
            c.photometric,
            c.alpha_inverse,
            c.distortion,
            c.depth,
            c.normal,
            c.total(weights)
        )
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
