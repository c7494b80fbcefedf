//! Reverse-mode gradients of the training losses and the Adam optimizer.
//!
//! The backward pass differentiates the frozen-stack model: layer order,
//! triangle ids, facing signs, coverage, anti-aliasing partners and bilinear
//! cells come from the forward rasterization and are held constant. Everything
//! else (hit depths, hit points, texel coordinates, sampled colors, alpha,
//! composition) is differentiated exactly.

use serde::{Deserialize, Serialize};

use crate::atlas::BilinearTaps;
use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::grid::{Grid, Rgb};
use crate::losses::{covered_mask, view_losses, DistortionWeighting, LossComponents, LossWeights, Supervision};
use crate::raster::{rasterize_peeled, LayerStack, TabletGeom, NO_PARTNER};
use crate::render::{render_frozen, AaMode, RenderConfig, RenderOutput, AA_EPS, OPACITY_EPS};
use crate::tablet::{update_up_vector, Tablet};
use crate::Vec3;

/// Smallest distance a tablet may be moved to along its ray.
pub const MIN_DISTANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct TabletGrad {
    pub color: Vec<Rgb>,
    pub alpha: Vec<f64>,
    pub normal: Vec3,
    pub distance: f64,
}

impl TabletGrad {
    pub fn zeros(t: &Tablet) -> Self {
        TabletGrad {
            color: vec![[0.0; 3]; t.texture.len()],
            alpha: vec![0.0; t.texture.len()],
            normal: Vec3::zeros(),
            distance: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.distance.is_finite()
            && self.normal.iter().all(|v| v.is_finite())
            && self.alpha.iter().all(|v| v.is_finite())
            && self.color.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tablets: Vec<TabletGrad>,
}

impl Gradients {
    pub fn zeros(tablets: &[Tablet]) -> Self {
        Gradients {
            tablets: tablets.iter().map(TabletGrad::zeros).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.tablets.iter().position(|g| !g.is_finite()) {
            Some(tablet) => Err(Error::NonFiniteGradient { tablet }),
            None => Ok(()),
        }
    }
}

/// Per-tablet accumulators for the geometry chain, before normalization.
#[derive(Clone, Copy, Default)]
struct GeomAcc {
    nhat: Vec3,
    up: Vec3,
    center: Vec3,
}

/// Upstream gradients for the per-pixel composite outputs.
struct PixelSeeds {
    color: Rgb,
    /// Gradient of the residual transmittance.
    trans: f64,
    depth_sum: f64,
    /// Gradient of the accumulated opacity.
    opacity: f64,
    normal_sum: Vec3,
    /// Distortion factor scale (`1 / N`), zero when unused.
    distortion: f64,
}

/// Computes the losses of one view from its forward render and accumulates
/// `scale * dL/dparam` into `grads`. `out` must come from `render_view` (or
/// `render_frozen`) of the same `tablets` and `cfg`.
#[allow(clippy::too_many_arguments)]
pub fn backward_view(
    tablets: &[Tablet],
    view: &CameraView,
    out: &RenderOutput,
    cfg: &RenderConfig,
    weights: &LossWeights,
    mode: DistortionWeighting,
    scale: f64,
    grads: &mut Gradients,
) -> LossComponents {
    let losses = view_losses(out, view, mode);
    let stack = &out.stack;
    let sup = Supervision::of(view);
    let covered = covered_mask(stack);
    let n_cov = covered.data.iter().filter(|&&c| c).count();
    let count = |m: &Grid<bool>| {
        out.valid
            .data
            .iter()
            .zip(&m.data)
            .filter(|(a, b)| **a && **b)
            .count()
    };
    let n_depth = count(&sup.depth_mask);
    let n_normal = count(&sup.normal_mask);
    let inv = |n: usize| if n == 0 { 0.0 } else { scale / n as f64 };
    let (s_cov, s_depth, s_normal) = (inv(n_cov), inv(n_depth), inv(n_normal));

    let nf = stack.frags.len();
    let mut g_color_aa = vec![[0.0; 3]; nf];
    let mut g_alpha_aa = vec![0.0; nf];
    let mut g_depth = vec![0.0; nf];
    let mut g_point = vec![Vec3::zeros(); nf];
    let mut g_normal = vec![Vec3::zeros(); nf];

    for p in 0..stack.pixel_count() {
        let range = stack.pixel_range(p);
        if range.is_empty() {
            continue;
        }
        let mut seeds = PixelSeeds {
            color: [0.0; 3],
            trans: weights.alpha_inverse * s_cov,
            depth_sum: 0.0,
            opacity: 0.0,
            normal_sum: Vec3::zeros(),
            distortion: weights.distortion * s_cov,
        };
        let c = out.color.data[p];
        let obs = view.image.data[p];
        for k in 0..3 {
            seeds.color[k] = weights.photometric * s_cov * 2.0 * (c[k] - obs[k]);
        }
        if out.valid.data[p] {
            let frags = &stack.frags[range.clone()];
            let (mut t, mut dsum, mut nsum) = (1.0, 0.0, Vec3::zeros());
            for f in frags {
                let w = t * f.alpha_aa;
                dsum += w * f.depth;
                nsum += f.normal * w;
                t *= 1.0 - f.alpha_aa;
            }
            let opacity = 1.0 - t;
            if sup.depth_mask.data[p] {
                let a = opacity.max(OPACITY_EPS);
                let g = weights.depth * s_depth * 2.0 * (out.depth.data[p] - sup.depth.data[p]);
                seeds.depth_sum += g / a;
                if opacity > OPACITY_EPS {
                    seeds.opacity += -g * dsum / (a * a);
                }
            }
            if sup.normal_mask.data[p] {
                let len = nsum.norm();
                let n = nsum / len;
                let g = (n - sup.normal.data[p]) * (weights.normal * s_normal * 2.0);
                seeds.normal_sum += (g - n * n.dot(&g)) / len;
            }
        }
        composite_backward(
            stack,
            range,
            &seeds,
            mode,
            cfg.background,
            &mut g_color_aa,
            &mut g_alpha_aa,
            &mut g_depth,
            &mut g_point,
            &mut g_normal,
        );
    }

    // Anti-aliasing backward into raw samples.
    let mut g_color = vec![[0.0; 3]; nf];
    let mut g_alpha = vec![0.0; nf];
    for (i, f) in stack.frags.iter().enumerate() {
        let (gc, ga) = (g_color_aa[i], g_alpha_aa[i]);
        if cfg.aa == AaMode::Off || !f.is_edge() {
            add3(&mut g_color[i], gc, 1.0);
            g_alpha[i] += ga;
            continue;
        }
        let w = f.coverage;
        let partner = (f.partner != NO_PARTNER).then_some(f.partner as usize);
        let (c2, a2) = match partner {
            Some(j) => (stack.frags[j].color, stack.frags[j].alpha),
            None => ([0.0; 3], 0.0),
        };
        match cfg.aa {
            AaMode::AlphaAware => {
                g_alpha[i] += ga;
                let (c1, a1) = (f.color, f.alpha);
                let k1 = a1 * w;
                let k2 = a2 * (1.0 - w);
                if k2 == 0.0 {
                    add3(&mut g_color[i], gc, 1.0);
                } else if k1 == 0.0 {
                    if let Some(j) = partner {
                        add3(&mut g_color[j], gc, 1.0);
                    }
                } else {
                    let sum = k1 + k2;
                    let den = sum.max(AA_EPS);
                    let cb = f.color_aa;
                    add3(&mut g_color[i], gc, k1 / den);
                    let (mut gk1, mut gk2) = (0.0, 0.0);
                    for k in 0..3 {
                        if sum > AA_EPS {
                            gk1 += gc[k] * (c1[k] - cb[k]) / den;
                            gk2 += gc[k] * (c2[k] - cb[k]) / den;
                        } else {
                            gk1 += gc[k] * c1[k] / den;
                            gk2 += gc[k] * c2[k] / den;
                        }
                    }
                    g_alpha[i] += gk1 * w;
                    if let Some(j) = partner {
                        add3(&mut g_color[j], gc, k2 / den);
                        g_alpha[j] += gk2 * (1.0 - w);
                    }
                }
            }
            AaMode::Naive => {
                add3(&mut g_color[i], gc, w);
                g_alpha[i] += ga * w;
                if let Some(j) = partner {
                    add3(&mut g_color[j], gc, 1.0 - w);
                    g_alpha[j] += ga * (1.0 - w);
                }
            }
            AaMode::Off => unreachable!(),
        }
    }

    // Bilinear sampling and geometry backward.
    let geoms: Vec<TabletGeom> = tablets.iter().map(TabletGeom::new).collect();
    let mut acc = vec![GeomAcc::default(); tablets.len()];
    let origin = view.center();
    for p in 0..stack.pixel_count() {
        let (x, y) = ((p % stack.width) as f64, (p / stack.width) as f64);
        let dir = view.world_ray(x, y);
        for i in stack.pixel_range(p) {
            let f = &stack.frags[i];
            let k = f.tablet as usize;
            let tex = &tablets[k].texture;
            let taps = BilinearTaps::new(f.texel[0], f.texel[1], f.rows, f.cols);
            let tg = &mut grads.tablets[k];
            let (mut gs, mut gq) = (0.0, 0.0);
            for tap in 0..4 {
                let (r, c) = taps.texel[tap];
                let idx = tex.index(r as usize, c as usize);
                let wt = taps.weight[tap];
                add3(&mut tg.color[idx], g_color[i], wt);
                tg.alpha[idx] += wt * g_alpha[i];
                let tc = tex.color[idx];
                let dv = g_color[i][0] * tc[0] + g_color[i][1] * tc[1] + g_color[i][2] * tc[2]
                    + g_alpha[i] * tex.alpha[idx];
                gs += taps.d_ds[tap] * dv;
                gq += taps.d_dq[tap] * dv;
            }
            geometry_backward(
                &geoms[k],
                &origin,
                &dir,
                gs,
                gq,
                g_depth[i],
                g_point[i],
                g_normal[i] * f.facing,
                &mut acc[k],
            );
        }
    }

    for (k, a) in acc.iter().enumerate() {
        let g = &geoms[k];
        let t = &tablets[k];
        // u' = w / |w|, w = up - (up . n) n
        let gw = (a.up - g.up * g.up.dot(&a.up)) / g.up_len;
        let mut gnhat = a.nhat;
        gnhat += -(t.up * gw.dot(&g.normal)) - gw * t.up.dot(&g.normal);
        let gn = (gnhat - g.normal * g.normal.dot(&gnhat)) / g.normal_len;
        grads.tablets[k].normal += gn;
        grads.tablets[k].distance += t.ray_dir.dot(&a.center);
    }
    losses
}

#[inline]
fn add3(dst: &mut Rgb, src: Rgb, s: f64) {
    dst[0] += s * src[0];
    dst[1] += s * src[1];
    dst[2] += s * src[2];
}

#[allow(clippy::too_many_arguments)]
fn composite_backward(
    stack: &LayerStack,
    range: std::ops::Range<usize>,
    seeds: &PixelSeeds,
    mode: DistortionWeighting,
    background: Rgb,
    g_color_aa: &mut [Rgb],
    g_alpha_aa: &mut [f64],
    g_depth: &mut [f64],
    g_point: &mut [Vec3],
    g_normal: &mut [Vec3],
) {
    let frags = &stack.frags[range.clone()];
    let n = frags.len();
    let mut trans = Vec::with_capacity(n + 1);
    let mut t = 1.0;
    for f in frags {
        trans.push(t);
        t *= 1.0 - f.alpha_aa;
    }
    trans.push(t);
    let w: Vec<f64> = (0..n).map(|l| trans[l] * frags[l].alpha_aa).collect();

    let mut gw = vec![0.0; n];
    let mut gt = vec![0.0; n + 1];
    for l in 0..n {
        let f = &frags[l];
        gw[l] += seeds.color[0] * f.color_aa[0] + seeds.color[1] * f.color_aa[1] + seeds.color[2] * f.color_aa[2];
        gw[l] += seeds.depth_sum * f.depth;
        gw[l] += seeds.normal_sum.dot(&f.normal);
        let i = range.start + l;
        add3(&mut g_color_aa[i], seeds.color, w[l]);
        g_depth[i] += seeds.depth_sum * w[l];
        g_normal[i] += seeds.normal_sum * w[l];
    }
    gt[n] += seeds.trans - seeds.opacity;
    gt[n] += seeds.color[0] * background[0] + seeds.color[1] * background[1] + seeds.color[2] * background[2];

    if seeds.distortion != 0.0 {
        for l in 0..n.saturating_sub(1) {
            let d = frags[l].point - frags[l + 1].point;
            let dist = d.norm();
            let factor = match mode {
                DistortionWeighting::Transmittance => {
                    gt[l] += seeds.distortion * dist * trans[l + 1];
                    gt[l + 1] += seeds.distortion * dist * trans[l];
                    trans[l] * trans[l + 1]
                }
                DistortionWeighting::BlendWeight => {
                    gw[l] += seeds.distortion * dist * w[l + 1];
                    gw[l + 1] += seeds.distortion * dist * w[l];
                    w[l] * w[l + 1]
                }
            };
            if dist > 1e-300 {
                let gd = d * (seeds.distortion * factor / dist);
                g_point[range.start + l] += gd;
                g_point[range.start + l + 1] -= gd;
            }
        }
    }

    // w_l = T_l a_l, T_{l+1} = T_l (1 - a_l)
    for l in (0..n).rev() {
        let a = frags[l].alpha_aa;
        let i = range.start + l;
        g_alpha_aa[i] += gw[l] * trans[l] - gt[l + 1] * trans[l];
        gt[l] += gw[l] * a + gt[l + 1] * (1.0 - a);
    }
}

/// Backward of the ray-plane hit and texel coordinate computation.
#[allow(clippy::too_many_arguments)]
fn geometry_backward(
    g: &TabletGeom,
    origin: &Vec3,
    dir: &Vec3,
    gs: f64,
    gq: f64,
    gdepth: f64,
    gpoint: Vec3,
    gnhat_direct: Vec3,
    acc: &mut GeomAcc,
) {
    let denom = dir.dot(&g.normal);
    if denom.abs() < 1e-300 {
        return;
    }
    let num = (g.center - origin).dot(&g.normal);
    let t = num / denom;
    let x = origin + dir * t;
    let e = x - g.center;

    let ga = -g.lambda_u * gs;
    let gb = g.lambda_v * gq;
    let ge = g.up * ga + g.right * gb;
    let gx = gpoint + ge;
    let mut gc = -ge;
    let mut gu = e * ga;
    let gr = e * gb;
    let mut gn = gnhat_direct;

    let gt = gdepth + dir.dot(&gx);
    let gnum = gt / denom;
    let gden = -gt * num / (denom * denom);
    gc += g.normal * gnum;
    gn += (g.center - origin) * gnum;
    gn += dir * gden;
    // r = n x u
    gn += g.up.cross(&gr);
    gu += gr.cross(&g.normal);

    acc.nhat += gn;
    acc.up += gu;
    acc.center += gc;
}

/// Loss and gradients of a batch of views, averaged over the batch.
pub fn batch_gradients(
    tablets: &[Tablet],
    views: &[&CameraView],
    cfg: &RenderConfig,
    weights: &LossWeights,
    mode: DistortionWeighting,
) -> Result<(LossComponents, Gradients)> {
    let mut grads = Gradients::zeros(tablets);
    let mut total = LossComponents::default();
    if views.is_empty() {
        return Ok((total, grads));
    }
    let scale = 1.0 / views.len() as f64;
    for view in views {
        let out = crate::render::render_view(tablets, view, cfg);
        let l = backward_view(tablets, view, &out, cfg, weights, mode, scale, &mut grads);
        total.add(&l.scaled(scale));
    }
    Ok((total, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub texture: f64,
    pub alpha: f64,
    pub normal: f64,
    pub distance: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            texture: 0.01,
            alpha: 0.03,
            normal: 1e-4,
            distance: 5e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Returns the bias-corrected update direction for element `i`.
    #[inline]
    fn step(&mut self, i: usize, g: f64, cfg: &AdamConfig, bc1: f64, bc2: f64) -> f64 {
        self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
        self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
        (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + cfg.eps)
    }
}

#[derive(Clone, Debug)]
struct TabletState {
    color: Moments,
    alpha: Moments,
    normal: Moments,
    distance: Moments,
}

/// Adam over all tablet parameters. The state must be reset whenever the
/// tablet set changes shape (after a merge).
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub rates: LearningRates,
    pub step: u64,
    state: Vec<TabletState>,
}

impl Adam {
    pub fn new(tablets: &[Tablet], config: AdamConfig, rates: LearningRates) -> Self {
        let mut a = Adam {
            config,
            rates,
            step: 0,
            state: Vec::new(),
        };
        a.reset(tablets);
        a
    }

    pub fn reset(&mut self, tablets: &[Tablet]) {
        self.step = 0;
        self.state = tablets
            .iter()
            .map(|t| TabletState {
                color: Moments::new(3 * t.texture.len()),
                alpha: Moments::new(t.texture.len()),
                normal: Moments::new(3),
                distance: Moments::new(1),
            })
            .collect();
    }

    /// One update. Color and alpha are clamped to `[0, 1]`; a changed normal
    /// is renormalized and the up vector rotated along with it.
    pub fn apply(&mut self, tablets: &mut [Tablet], grads: &Gradients) -> Result<()> {
        if tablets.len() != self.state.len() || grads.tablets.len() != tablets.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} tablets, got {} tablets and {} gradients",
                self.state.len(),
                tablets.len(),
                grads.tablets.len()
            )));
        }
        grads.check_finite()?;
        self.step += 1;
        let cfg = self.config;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let rates = self.rates;
        for (k, (t, g)) in tablets.iter_mut().zip(&grads.tablets).enumerate() {
            let st = &mut self.state[k];
            if g.color.len() != t.texture.len() || st.alpha.m.len() != t.texture.len() {
                return Err(Error::ShapeMismatch(format!("texture size of tablet {k} changed")));
            }
            for (i, gc) in g.color.iter().enumerate() {
                for c in 0..3 {
                    let d = st.color.step(3 * i + c, gc[c], &cfg, bc1, bc2);
                    let v = &mut t.texture.color[i][c];
                    *v = (*v - rates.texture * d).clamp(0.0, 1.0);
                }
            }
            for (i, &ga) in g.alpha.iter().enumerate() {
                let d = st.alpha.step(i, ga, &cfg, bc1, bc2);
                let v = &mut t.texture.alpha[i];
                *v = (*v - rates.alpha * d).clamp(0.0, 1.0);
            }
            let mut n = t.normal;
            for c in 0..3 {
                n[c] -= rates.normal * st.normal.step(c, g.normal[c], &cfg, bc1, bc2);
            }
            if n != t.normal {
                let len = n.norm();
                if len > 1e-12 {
                    let n_new = n / len;
                    let up = update_up_vector(t.normal, n_new, t.up)?;
                    t.normal = n_new;
                    t.up = up;
                }
            }
            let d = st.distance.step(0, g.distance, &cfg, bc1, bc2);
            t.distance = (t.distance - rates.distance * d).max(MIN_DISTANCE);
        }
        Ok(())
    }
}

/// Which parameter of a tablet a finite-difference probe perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    Color { texel: usize, channel: usize },
    Alpha { texel: usize },
    Normal { axis: usize },
    Distance,
}

fn param_mut(t: &mut Tablet, p: Param) -> &mut f64 {
    match p {
        Param::Color { texel, channel } => &mut t.texture.color[texel][channel],
        Param::Alpha { texel } => &mut t.texture.alpha[texel],
        Param::Normal { axis } => &mut t.normal[axis],
        Param::Distance => &mut t.distance,
    }
}

fn param_grad(g: &TabletGrad, p: Param) -> f64 {
    match p {
        Param::Color { texel, channel } => g.color[texel][channel],
        Param::Alpha { texel } => g.alpha[texel],
        Param::Normal { axis } => g.normal[axis],
        Param::Distance => g.distance,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientProbe {
    pub tablet: usize,
    pub param: Param,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientProbe {
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-8)
    }
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub probes: Vec<GradientProbe>,
    /// Probes dropped because the perturbation changed the live rasterization.
    pub skipped: usize,
}

impl FdReport {
    pub fn max_relative_error(&self) -> f64 {
        self.probes.iter().map(|p| p.relative_error()).fold(0.0, f64::max)
    }
}

/// Compares analytic gradients against central differences of the
/// frozen-stack loss. Probes whose perturbation alters the live
/// rasterization (layer order, triangle ids, edge status) are skipped.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    tablets: &[Tablet],
    view: &CameraView,
    cfg: &RenderConfig,
    weights: &LossWeights,
    mode: DistortionWeighting,
    probes: &[(usize, Param)],
    h: f64,
) -> Result<FdReport> {
    let base = crate::render::render_view(tablets, view, cfg);
    let mut grads = Gradients::zeros(tablets);
    backward_view(tablets, view, &base, cfg, weights, mode, 1.0, &mut grads);
    let frozen = &base.stack;
    let loss_at = |ts: &[Tablet]| {
        let out = render_frozen(frozen, ts, view, cfg);
        view_losses(&out, view, mode).total(weights)
    };
    let mut report = FdReport::default();
    for &(k, param) in probes {
        if k >= tablets.len() {
            return Err(Error::NotFound(k));
        }
        let mut plus = tablets.to_vec();
        *param_mut(&mut plus[k], param) += h;
        let mut minus = tablets.to_vec();
        *param_mut(&mut minus[k], param) -= h;
        let live_same = [&plus, &minus]
            .iter()
            .all(|ts| rasterize_peeled(ts, view, cfg.layers).same_visibility(frozen));
        if !live_same {
            report.skipped += 1;
            continue;
        }
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        report.probes.push(GradientProbe {
            tablet: k,
            param,
            analytic: param_grad(&grads.tablets[k], param),
            numeric,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tablet::Texture;

    fn toy_tablet(seed: f64) -> Tablet {
        let mut tex = Texture::solid(2, 2, [0.5; 3], 0.5);
        tex.color[1] = [0.1 + seed, 0.2, 0.3];
        Tablet {
            anchor: Vec3::zeros(),
            ray_dir: Vec3::z(),
            distance: 2.0,
            normal: -Vec3::z(),
            up: -Vec3::y(),
            lambda_u: 1.0,
            lambda_v: 1.0,
            texture: tex,
            source_camera: 0,
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut ts = vec![toy_tablet(0.0)];
        let mut g = Gradients::zeros(&ts);
        g.tablets[0].color[0] = [0.3, -2.0, 0.0];
        g.tablets[0].distance = -5.0;
        let before = ts[0].clone();
        let mut adam = Adam::new(&ts, AdamConfig::default(), LearningRates::default());
        adam.apply(&mut ts, &g).unwrap();
        let dc = ts[0].texture.color[0][0] - before.texture.color[0][0];
        assert!((dc + 0.01).abs() < 1e-6);
        let dc = ts[0].texture.color[0][1] - before.texture.color[0][1];
        assert!((dc - 0.01).abs() < 1e-6);
        assert_eq!(ts[0].texture.color[0][2], before.texture.color[0][2]);
        assert!((ts[0].distance - before.distance - 5e-4).abs() < 1e-9);
        // Unchanged normal leaves up untouched.
        assert_eq!(ts[0].up, before.up);
    }

    #[test]
    fn adam_clamps_and_renormalizes() {
        let mut ts = vec![toy_tablet(0.0)];
        ts[0].texture.alpha[0] = 0.999;
        let mut g = Gradients::zeros(&ts);
        g.tablets[0].alpha[0] = -1.0;
        g.tablets[0].normal = Vec3::new(1.0, 0.0, 0.0);
        let mut adam = Adam::new(&ts, AdamConfig::default(), LearningRates { alpha: 0.5, ..Default::default() });
        adam.apply(&mut ts, &g).unwrap();
        assert_eq!(ts[0].texture.alpha[0], 1.0);
        assert!((ts[0].normal.norm() - 1.0).abs() < 1e-12);
        assert!(ts[0].normal.dot(&ts[0].up).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut ts = vec![toy_tablet(0.0)];
        let mut g = Gradients::zeros(&ts);
        g.tablets[0].alpha[3] = f64::NAN;
        let mut adam = Adam::new(&ts, AdamConfig::default(), LearningRates::default());
        assert!(matches!(adam.apply(&mut ts, &g), Err(Error::NonFiniteGradient { tablet: 0 })));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ts = vec![toy_tablet(0.0)];
        let mut adam = Adam::new(&ts, AdamConfig::default(), LearningRates::default());
        ts.push(toy_tablet(0.1));
        let g = Gradients::zeros(&ts);
        assert!(matches!(adam.apply(&mut ts, &g), Err(Error::ShapeMismatch(_))));
    }
}
