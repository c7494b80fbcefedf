//! Sampling, semi-transparent anti-aliasing and front-to-back alpha
//! composition of a [`LayerStack`].

use serde::{Deserialize, Serialize};

use crate::atlas::{sample_texture, BilinearTaps};
use crate::camera::CameraView;
use crate::grid::{Grid, Rgb, RgbImage, ScalarImage};
use crate::raster::{rasterize_peeled, reshade_geometry, Fragment, LayerStack, NO_PARTNER};
use crate::tablet::Tablet;
use crate::Vec3;

/// Guard on the anti-aliasing denominator.
pub const AA_EPS: f64 = 1e-8;
/// Pixels with accumulated opacity below this have no defined depth/normal.
pub const OPACITY_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AaMode {
    /// Alpha-weighted color blend; alpha stays that of the covering primitive.
    #[default]
    AlphaAware,
    /// Blend color and alpha independently by coverage. Leaks through
    /// transparent primitives; kept for comparison.
    Naive,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub layers: usize,
    pub background: Rgb,
    pub aa: AaMode,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            layers: 13,
            background: [0.0; 3],
            aa: AaMode::AlphaAware,
        }
    }
}

/// Fills raw color/alpha of every fragment from its tablet's texture, using
/// the fragment's recorded bilinear cells.
pub fn sample_layers(stack: &mut LayerStack, tablets: &[Tablet]) {
    for f in &mut stack.frags {
        let taps = BilinearTaps::new(f.texel[0], f.texel[1], f.rows, f.cols);
        let (c, a) = sample_texture(&tablets[f.tablet as usize], &taps);
        f.color = c;
        f.alpha = a;
        f.color_aa = c;
        f.alpha_aa = a;
    }
}

/// Alpha-aware blend of two primitives sharing a pixel with coverage `w` and `1 - w`.
#[inline]
pub fn aa_blend(c1: Rgb, a1: f64, c2: Rgb, a2: f64, w: f64) -> Rgb {
    let k1 = a1 * w;
    let k2 = a2 * (1.0 - w);
    if k2 == 0.0 {
        return c1;
    }
    if k1 == 0.0 {
        return c2;
    }
    let den = (k1 + k2).max(AA_EPS);
    [
        (k1 * c1[0] + k2 * c2[0]) / den,
        (k1 * c1[1] + k2 * c2[1]) / den,
        (k1 * c1[2] + k2 * c2[2]) / den,
    ]
}

/// Raw `(color, alpha)` of a fragment's AA partner, or transparent black.
#[inline]
pub fn partner_sample(frags: &[Fragment], f: &Fragment) -> (Rgb, f64) {
    if f.partner == NO_PARTNER {
        ([0.0; 3], 0.0)
    } else {
        let p = &frags[f.partner as usize];
        (p.color, p.alpha)
    }
}

/// Anti-aliases silhouette-edge fragments layer by layer. Non-edge fragments
/// pass through unchanged.
pub fn antialias(stack: &mut LayerStack, mode: AaMode) {
    let mut out: Vec<(Rgb, f64)> = Vec::with_capacity(stack.frags.len());
    for f in &stack.frags {
        if mode == AaMode::Off || !f.is_edge() {
            out.push((f.color, f.alpha));
            continue;
        }
        let (c2, a2) = partner_sample(&stack.frags, f);
        let w = f.coverage;
        out.push(match mode {
            AaMode::AlphaAware => (aa_blend(f.color, f.alpha, c2, a2, w), f.alpha),
            AaMode::Naive => (
                [
                    w * f.color[0] + (1.0 - w) * c2[0],
                    w * f.color[1] + (1.0 - w) * c2[1],
                    w * f.color[2] + (1.0 - w) * c2[2],
                ],
                w * f.alpha + (1.0 - w) * a2,
            ),
            AaMode::Off => unreachable!(),
        });
    }
    for (f, (c, a)) in stack.frags.iter_mut().zip(out) {
        f.color_aa = c;
        f.alpha_aa = a;
    }
}

/// Front-to-back over operator for one pixel; returns color and residual transmittance.
#[inline]
pub fn composite_pixel(frags: &[Fragment], background: Rgb) -> (Rgb, f64) {
    let mut c = [0.0; 3];
    let mut t = 1.0;
    for f in frags {
        let w = t * f.alpha_aa;
        for k in 0..3 {
            c[k] += w * f.color_aa[k];
        }
        t *= 1.0 - f.alpha_aa;
    }
    for k in 0..3 {
        c[k] += t * background[k];
    }
    (c, t)
}

pub fn composite_color(stack: &LayerStack, background: Rgb) -> RgbImage {
    Grid::from_fn(stack.width, stack.height, |x, y| {
        composite_pixel(stack.pixel(y * stack.width + x), background).0
    })
}

/// Blending weights `T_l * alpha_l` of every fragment, parallel to `stack.frags`.
pub fn blend_weights(stack: &LayerStack) -> Vec<f64> {
    let mut weights = vec![0.0; stack.frags.len()];
    for p in 0..stack.pixel_count() {
        let mut t = 1.0;
        for idx in stack.pixel_range(p) {
            let a = stack.frags[idx].alpha_aa;
            weights[idx] = t * a;
            t *= 1.0 - a;
        }
    }
    weights
}

#[derive(Clone, Debug)]
pub struct GeometryBuffers {
    /// Opacity-normalized z-depth; zero where invalid.
    pub depth: ScalarImage,
    /// Unit world normal; zero where invalid.
    pub normal: Grid<Vec3>,
    /// Accumulated opacity `1 - prod(1 - alpha)`.
    pub opacity: ScalarImage,
    pub valid: Grid<bool>,
}

#[derive(Clone, Copy, Debug)]
pub struct PixelGeometry {
    pub depth_sum: f64,
    pub normal_sum: Vec3,
    pub opacity: f64,
}

impl PixelGeometry {
    pub fn of(frags: &[Fragment]) -> Self {
        let mut t = 1.0;
        let mut depth_sum = 0.0;
        let mut normal_sum = Vec3::zeros();
        for f in frags {
            let w = t * f.alpha_aa;
            depth_sum += w * f.depth;
            normal_sum += f.normal * w;
            t *= 1.0 - f.alpha_aa;
        }
        PixelGeometry {
            depth_sum,
            normal_sum,
            opacity: 1.0 - t,
        }
    }

    pub fn valid(&self) -> bool {
        self.opacity >= OPACITY_EPS && self.normal_sum.norm() > 1e-300
    }

    pub fn depth(&self) -> f64 {
        self.depth_sum / self.opacity.max(OPACITY_EPS)
    }

    pub fn normal(&self) -> Vec3 {
        self.normal_sum / self.normal_sum.norm()
    }
}

pub fn composite_geometry(stack: &LayerStack) -> GeometryBuffers {
    let (w, h) = (stack.width, stack.height);
    let mut out = GeometryBuffers {
        depth: Grid::filled(w, h, 0.0),
        normal: Grid::filled(w, h, Vec3::zeros()),
        opacity: Grid::filled(w, h, 0.0),
        valid: Grid::filled(w, h, false),
    };
    for p in 0..stack.pixel_count() {
        let g = PixelGeometry::of(stack.pixel(p));
        out.opacity.data[p] = g.opacity;
        if g.valid() {
            out.valid.data[p] = true;
            out.depth.data[p] = g.depth();
            out.normal.data[p] = g.normal();
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: RgbImage,
    pub depth: ScalarImage,
    pub normal: Grid<Vec3>,
    pub opacity: ScalarImage,
    pub valid: Grid<bool>,
    /// `T_l * alpha_l` per fragment, parallel to `stack.frags`.
    pub weights: Vec<f64>,
    /// The peeled layers; fragment `point`s are the per-layer intersections.
    pub stack: LayerStack,
}

/// Rasterize, sample, anti-alias and composite one view.
pub fn render_view(tablets: &[Tablet], view: &CameraView, cfg: &RenderConfig) -> RenderOutput {
    let stack = rasterize_peeled(tablets, view, cfg.layers);
    shade_stack(stack, tablets, cfg)
}

/// Renders with the discrete rasterization decisions of `stack` held fixed
/// and all continuous quantities recomputed from `tablets`.
pub fn render_frozen(stack: &LayerStack, tablets: &[Tablet], view: &CameraView, cfg: &RenderConfig) -> RenderOutput {
    let mut stack = stack.clone();
    reshade_geometry(&mut stack, tablets, view);
    shade_stack(stack, tablets, cfg)
}

fn shade_stack(mut stack: LayerStack, tablets: &[Tablet], cfg: &RenderConfig) -> RenderOutput {
    sample_layers(&mut stack, tablets);
    antialias(&mut stack, cfg.aa);
    let color = composite_color(&stack, cfg.background);
    let geo = composite_geometry(&stack);
    let weights = blend_weights(&stack);
    RenderOutput {
        color,
        depth: geo.depth,
        normal: geo.normal,
        opacity: geo.opacity,
        valid: geo.valid,
        weights,
        stack,
    }
}
