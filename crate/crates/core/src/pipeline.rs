//! End-to-end reconstruction: superpixel initialization, keyframe
//! fragments, the optimize / merge schedule, and texture editing.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, Pose};
use crate::error::{Error, Result};
use crate::grid::{sample_bilinear_rgb, Grid, Rgb, RgbImage};
use crate::losses::{DistortionWeighting, LossComponents, LossWeights};
use crate::merge::{merge_scene, weight_check, MergeConfig, MergeEvent, TabletScene};
use crate::optim::{backward_view, Adam, AdamConfig, Gradients, LearningRates};
use crate::render::{render_view, RenderConfig};
use crate::slic::{label_regions, slic_superpixels, Labels};
use crate::tablet::{backproject_superpixel, Tablet};
use crate::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub keyframes_per_fragment: usize,
    pub epochs_separate: usize,
    pub epochs_joint: usize,
    /// Epochs of per-fragment training before which weight check and merge run.
    pub merge_epochs: Vec<usize>,
    /// Same, for the joint stage; a final weight check and merge always follow it.
    pub joint_merge_epochs: Vec<usize>,
    /// The distance learning rate switches to `late_distance_lr` after this many merges.
    pub lr_drop_after_merges: usize,
    pub late_distance_lr: f64,
    pub weight_threshold: f64,
    pub weight_min_points: usize,
    pub keyframe_translation: f64,
    pub keyframe_rotation_deg: f64,
    /// Side of the pixel block that receives one superpixel.
    pub superpixel_block: f64,
    pub compactness: f64,
    /// Superpixels whose supervision normals disagree more than this
    /// (resultant length of the unit normals) are not initialized.
    pub min_normal_coherence: f64,
    /// Longest image side used for optimization.
    pub working_max_side: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            keyframes_per_fragment: 9,
            epochs_separate: 32,
            epochs_joint: 9,
            merge_epochs: vec![8, 16, 24],
            joint_merge_epochs: vec![3, 6],
            lr_drop_after_merges: 2,
            late_distance_lr: 2e-4,
            weight_threshold: 0.3,
            weight_min_points: 8,
            keyframe_translation: 0.1,
            keyframe_rotation_deg: 15.0,
            superpixel_block: 12.0,
            compactness: 10.0,
            min_normal_coherence: 0.8,
            working_max_side: 320,
        }
    }
}

/// Every tunable of a reconstruction run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub schedule: Schedule,
    pub merge: MergeConfig,
    pub losses: LossWeights,
    pub distortion: DistortionWeighting,
    pub render: RenderConfig,
    pub rates: LearningRates,
    pub adam: AdamConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            schedule: Schedule::default(),
            merge: MergeConfig::default(),
            losses: LossWeights::default(),
            distortion: DistortionWeighting::default(),
            render: RenderConfig::default(),
            rates: LearningRates::default(),
            adam: AdamConfig::default(),
        }
    }
}

/// Pooled supervision of one superpixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledRegion {
    pub depth: f64,
    /// Camera-frame unit normal facing the camera.
    pub normal: Vec3,
    /// Pixels `(x, y)` with valid depth.
    pub pixels: Vec<(usize, usize)>,
}

/// Mean depth and renormalized mean normal per superpixel. Regions without
/// valid depth, with cancelling normals (resultant below 1e-3) or with
/// normals less coherent than `min_coherence` yield `None`.
pub fn pool_superpixel_geometry(labels: &Labels, view: &CameraView, min_coherence: f64) -> Vec<Option<PooledRegion>> {
    let normals = view.normals.clone().unwrap_or_else(|| normals_from_depth(view));
    label_regions(labels)
        .into_iter()
        .map(|region| {
            let mut pixels = Vec::new();
            let mut dsum = 0.0;
            let mut nsum = Vec3::zeros();
            let mut ncount = 0usize;
            for (x, y) in region {
                let Some(d) = view.depth_at(x, y) else { continue };
                pixels.push((x, y));
                dsum += d;
                let n = *normals.get(x, y);
                let len = n.norm();
                if len.is_finite() && len > 1e-6 {
                    let mut n = n / len;
                    if n.dot(&view.camera_ray(x as f64, y as f64)) > 0.0 {
                        n = -n;
                    }
                    nsum += n;
                    ncount += 1;
                }
            }
            if pixels.is_empty() || ncount == 0 {
                return None;
            }
            let mean = nsum / ncount as f64;
            let coherence = mean.norm();
            if coherence < 1e-3 || coherence < min_coherence {
                return None;
            }
            Some(PooledRegion {
                depth: dsum / pixels.len() as f64,
                normal: mean / coherence,
                pixels,
            })
        })
        .collect()
}

/// Camera-frame normals from depth by central differences of back-projected
/// points; zero where a neighbour lacks depth.
pub fn normals_from_depth(view: &CameraView) -> Grid<Vec3> {
    let (w, h) = (view.width(), view.height());
    let point = |x: usize, y: usize| view.depth_at(x, y).map(|d| view.camera_ray(x as f64, y as f64) * d);
    Grid::from_fn(w, h, |x, y| {
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        match (point(x0, y), point(x1, y), point(x, y0), point(x, y1)) {
            (Some(l), Some(r), Some(t), Some(b)) if x1 > x0 && y1 > y0 => {
                let n = (b - t).cross(&(r - l));
                let len = n.norm();
                if len > 1e-12 {
                    n / len
                } else {
                    Vec3::zeros()
                }
            }
            _ => Vec3::zeros(),
        }
    })
}

fn rotation_angle_deg(a: &Pose, b: &Pose) -> f64 {
    let rel = a.rotation.transpose() * b.rotation;
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Keyframes by translation / rotation thresholds against the last keyframe,
/// grouped `per_fragment` at a time. Fewer than two keyframes fall back to a
/// single fragment holding every view.
pub fn select_keyframes(poses: &[Pose], translation: f64, rotation_deg: f64, per_fragment: usize) -> Vec<Vec<usize>> {
    if poses.is_empty() {
        return Vec::new();
    }
    let mut keys = vec![0];
    for (i, p) in poses.iter().enumerate().skip(1) {
        let last = &poses[*keys.last().expect("starts non-empty")];
        if (p.center() - last.center()).norm() > translation || rotation_angle_deg(last, p) > rotation_deg {
            keys.push(i);
        }
    }
    if keys.len() < 2 {
        return vec![(0..poses.len()).collect()];
    }
    keys.chunks(per_fragment.max(1)).map(|c| c.to_vec()).collect()
}

/// Box-filters the image and nearest-samples depth and normals so the longer
/// side is at most `max_side`.
pub fn downscale_view(view: &CameraView, max_side: usize) -> CameraView {
    let (w, h) = (view.width(), view.height());
    let long = w.max(h);
    if max_side == 0 || long <= max_side {
        return view.clone();
    }
    let s = max_side as f64 / long as f64;
    let (nw, nh) = (((w as f64 * s).round() as usize).max(1), ((h as f64 * s).round() as usize).max(1));
    let (fx, fy) = (w as f64 / nw as f64, h as f64 / nh as f64);
    let image = Grid::from_fn(nw, nh, |x, y| {
        let (x0, x1) = ((x as f64 * fx) as usize, (((x + 1) as f64 * fx).ceil() as usize).min(w));
        let (y0, y1) = ((y as f64 * fy) as usize, (((y + 1) as f64 * fy).ceil() as usize).min(h));
        let mut acc = [0.0; 3];
        let mut n = 0.0;
        for yy in y0..y1.max(y0 + 1) {
            for xx in x0..x1.max(x0 + 1) {
                let c = view.image.get(xx.min(w - 1), yy.min(h - 1));
                for k in 0..3 {
                    acc[k] += c[k];
                }
                n += 1.0;
            }
        }
        acc.map(|v| v / n)
    });
    let src = |x: usize, y: usize| {
        let sx = (((x as f64 + 0.5) * fx) as usize).min(w - 1);
        let sy = (((y as f64 + 0.5) * fy) as usize).min(h - 1);
        (sx, sy)
    };
    let depth = view.depth.as_ref().map(|d| {
        Grid::from_fn(nw, nh, |x, y| {
            let (sx, sy) = src(x, y);
            *d.get(sx, sy)
        })
    });
    let normals = view.normals.as_ref().map(|n| {
        Grid::from_fn(nw, nh, |x, y| {
            let (sx, sy) = src(x, y);
            *n.get(sx, sy)
        })
    });
    CameraView {
        intrinsics: view.intrinsics.scaled(nw, nh),
        pose: view.pose,
        image,
        depth,
        normals,
    }
}

/// Initial tablets of one view, one per usable superpixel.
pub fn initialize_view(view: &CameraView, camera_index: usize, schedule: &Schedule) -> Vec<Tablet> {
    let target = ((view.width() * view.height()) as f64 / schedule.superpixel_block.powi(2)).round() as usize;
    let labels = slic_superpixels(&view.image, target.max(1), schedule.compactness);
    pool_superpixel_geometry(&labels, view, schedule.min_normal_coherence)
        .into_iter()
        .flatten()
        .filter_map(|r| backproject_superpixel(&r.pixels, r.depth, r.normal, view, camera_index).ok())
        .collect()
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Final planes; the instance id of a plane is its index.
    pub planes: Vec<Tablet>,
    pub events: Vec<MergeEvent>,
    /// `(global step, losses)` of every optimization step.
    pub losses: Vec<(usize, LossComponents)>,
    /// The views at working resolution.
    pub views: Vec<CameraView>,
}

struct Trainer<'a> {
    cfg: &'a PipelineConfig,
    views: &'a [CameraView],
    anchors: Vec<Vec3>,
    rng: ChaCha8Rng,
    step: usize,
    merges: usize,
    losses: Vec<(usize, LossComponents)>,
    events: Vec<MergeEvent>,
}

impl<'a> Trainer<'a> {
    fn rates(&self) -> LearningRates {
        let mut r = self.cfg.rates;
        if self.merges >= self.cfg.schedule.lr_drop_after_merges {
            r.distance = self.cfg.schedule.late_distance_lr;
        }
        r
    }

    fn epoch(&mut self, scene: &mut TabletScene, adam: &mut Adam, keys: &[usize]) -> Result<()> {
        let mut order = keys.to_vec();
        order.shuffle(&mut self.rng);
        for &v in &order {
            let view = &self.views[v];
            let out = render_view(&scene.tablets, view, &self.cfg.render);
            let mut grads = Gradients::zeros(&scene.tablets);
            let l = backward_view(
                &scene.tablets,
                view,
                &out,
                &self.cfg.render,
                &self.cfg.losses,
                self.cfg.distortion,
                1.0,
                &mut grads,
            );
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: self.step,
                    detail: format!("view {v}: {l:?}"),
                });
            }
            adam.apply(&mut scene.tablets, &grads)?;
            self.losses.push((self.step, l));
            self.step += 1;
        }
        Ok(())
    }

    fn merge(&mut self, scene: &mut TabletScene, stage: usize, epoch: usize) {
        let before = scene.len();
        let (merged, outcome) = merge_scene(scene, &self.cfg.merge, &self.anchors);
        debug!("merge: {} sweeps, {} unions", outcome.sweeps, outcome.unions);
        *scene = merged;
        self.events.push(MergeEvent {
            stage,
            epoch,
            kind: "merge",
            before,
            after: scene.len(),
            dropped: 0,
        });
    }

    fn weight_check(&mut self, scene: &mut TabletScene, keys: &[usize], stage: usize, epoch: usize) {
        let views: Vec<&CameraView> = keys.iter().map(|&k| &self.views[k]).collect();
        let s = &self.cfg.schedule;
        let stats = weight_check(scene, &views, &self.cfg.render, s.weight_threshold, s.weight_min_points);
        self.events.push(MergeEvent {
            stage,
            epoch,
            kind: "weight_check",
            before: stats.before,
            after: scene.len(),
            dropped: stats.dropped,
        });
    }

    fn check_and_merge(&mut self, scene: &mut TabletScene, keys: &[usize], stage: usize, epoch: usize) {
        self.weight_check(scene, keys, stage, epoch);
        self.merge(scene, stage, epoch);
        self.merges += 1;
        info!("stage {stage} epoch {epoch}: {} tablets", scene.len());
    }

    fn train(&mut self, scene: &mut TabletScene, keys: &[usize], epochs: usize, merge_at: &[usize], stage: usize) -> Result<()> {
        let mut adam = Adam::new(&scene.tablets, self.cfg.adam, self.rates());
        for epoch in 0..epochs {
            if epoch > 0 && merge_at.contains(&epoch) {
                self.check_and_merge(scene, keys, stage, epoch);
                adam = Adam::new(&scene.tablets, self.cfg.adam, self.rates());
            }
            self.epoch(scene, &mut adam, keys)?;
        }
        Ok(())
    }
}

/// Reconstructs planes from posed views with depth (and optionally normal)
/// supervision.
pub fn reconstruct(views: &[CameraView], cfg: &PipelineConfig) -> Result<Reconstruction> {
    if views.is_empty() {
        return Err(Error::EmptyInput("no views".into()));
    }
    let s = &cfg.schedule;
    let views: Vec<CameraView> = views.iter().map(|v| downscale_view(v, s.working_max_side)).collect();
    let poses: Vec<Pose> = views.iter().map(|v| v.pose).collect();
    let fragments = select_keyframes(&poses, s.keyframe_translation, s.keyframe_rotation_deg, s.keyframes_per_fragment);
    let mut trainer = Trainer {
        cfg,
        views: &views,
        anchors: views.iter().map(|v| v.center()).collect(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        step: 0,
        merges: 0,
        losses: Vec::new(),
        events: Vec::new(),
    };

    let mut parts = Vec::new();
    for (stage, keys) in fragments.iter().enumerate() {
        let initial: Vec<Tablet> = keys.iter().flat_map(|&k| initialize_view(&views[k], k, s)).collect();
        info!("fragment {stage}: {} views, {} initial tablets", keys.len(), initial.len());
        let mut scene = TabletScene::from_initial(initial);
        trainer.merge(&mut scene, stage, 0);
        trainer.train(&mut scene, keys, s.epochs_separate, &s.merge_epochs, stage)?;
        parts.push(scene);
    }

    let stage = fragments.len();
    let all_keys: Vec<usize> = fragments.iter().flatten().copied().collect();
    let mut scene = TabletScene::concat(parts);
    trainer.merge(&mut scene, stage, 0);
    trainer.train(&mut scene, &all_keys, s.epochs_joint, &s.joint_merge_epochs, stage)?;
    trainer.check_and_merge(&mut scene, &all_keys, stage, s.epochs_joint);

    let planes: Vec<Tablet> = scene.tablets.into_iter().filter(|t| t.area() > 0.0).collect();
    if planes.is_empty() {
        return Err(Error::EmptyInput("reconstruction produced no planes".into()));
    }
    Ok(Reconstruction {
        planes,
        events: trainer.events,
        losses: trainer.losses,
        views,
    })
}

/// A change to one plane's texture. Geometry and alpha are never touched.
#[derive(Clone, Debug, PartialEq)]
pub enum TextureEdit {
    /// Every texel set to one color.
    Solid(Rgb),
    /// Per-channel multiplication, clamped to `[0, 1]`.
    Scale(Rgb),
    /// An image stretched over the whole plane.
    Image(RgbImage),
}

pub fn edit_plane_texture(planes: &mut [Tablet], id: usize, edit: &TextureEdit) -> Result<()> {
    let t = planes.get_mut(id).ok_or(Error::NotFound(id))?;
    let (h, w) = (t.texture.height, t.texture.width);
    for row in 0..h {
        for col in 0..w {
            let idx = t.texture.index(row, col);
            let c = &mut t.texture.color[idx];
            match edit {
                TextureEdit::Solid(rgb) => *c = *rgb,
                TextureEdit::Scale(s) => {
                    for k in 0..3 {
                        c[k] = (c[k] * s[k]).clamp(0.0, 1.0);
                    }
                }
                TextureEdit::Image(img) => {
                    let x = (col as f64 + 0.5) / w as f64 * img.width as f64 - 0.5;
                    let y = (row as f64 + 0.5) / h as f64 * img.height as f64 - 0.5;
                    *c = sample_bilinear_rgb(img, x, y);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::tablet::Texture;
    use approx::assert_relative_eq;

    fn view_with(depth: Vec<f64>, normals: Vec<Vec3>) -> CameraView {
        let k = Intrinsics {
            fx: 10.0,
            fy: 10.0,
            cx: 1.5,
            cy: 0.0,
            width: 4,
            height: 1,
        };
        let mut v = CameraView::new(k, Pose::identity(), Grid::filled(4, 1, [0.5; 3]));
        v.depth = Some(Grid::from_vec(4, 1, depth));
        v.normals = Some(Grid::from_vec(4, 1, normals));
        v
    }

    #[test]
    fn pooling_cases() {
        let one = Grid::from_vec(4, 1, vec![0u32; 4]);
        let v = view_with(vec![2.0; 4], vec![-Vec3::z(); 4]);
        let p = pool_superpixel_geometry(&one, &v, 0.8)[0].clone().unwrap();
        assert_relative_eq!(p.depth, 2.0);
        assert_relative_eq!(p.normal, -Vec3::z());
        let v = view_with(vec![1.0, 1.0, 3.0, 3.0], vec![-Vec3::z(); 4]);
        assert_relative_eq!(pool_superpixel_geometry(&one, &v, 0.8)[0].as_ref().unwrap().depth, 2.0);
        // Normals of two opposite-facing walls seen edge-on cancel.
        let v = view_with(vec![2.0; 4], vec![Vec3::x(), Vec3::x(), -Vec3::x(), -Vec3::x()]);
        assert!(pool_superpixel_geometry(&one, &v, 0.0)[0].is_none());
        let v = view_with(vec![0.0; 4], vec![-Vec3::z(); 4]);
        assert!(pool_superpixel_geometry(&one, &v, 0.8)[0].is_none());
    }

    fn pose_at(x: f64, yaw_deg: f64) -> Pose {
        let yaw = yaw_deg.to_radians();
        let eye = Vec3::new(x, 0.0, 0.0);
        Pose::look_at(eye, eye + Vec3::new(yaw.sin(), 0.0, yaw.cos()), -Vec3::y())
    }

    #[test]
    fn keyframe_cases() {
        let static_cam = vec![pose_at(0.0, 0.0); 5];
        assert_eq!(select_keyframes(&static_cam, 0.1, 15.0, 9), vec![vec![0, 1, 2, 3, 4]]);
        let moving: Vec<Pose> = (0..18).map(|i| pose_at(0.2 * i as f64, 0.0)).collect();
        let f = select_keyframes(&moving, 0.1, 15.0, 9);
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![9, 9]);
        let moving: Vec<Pose> = (0..20).map(|i| pose_at(0.0, 20.0 * i as f64)).collect();
        let f = select_keyframes(&moving, 0.1, 15.0, 9);
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![9, 9, 2]);
    }

    #[test]
    fn edits_touch_only_the_target_color() {
        let t = Tablet {
            anchor: Vec3::zeros(),
            ray_dir: Vec3::z(),
            distance: 2.0,
            normal: -Vec3::z(),
            up: -Vec3::y(),
            lambda_u: 2.0,
            lambda_v: 2.0,
            texture: Texture::solid(3, 2, [0.4, 0.6, 0.8], 0.7),
            source_camera: 0,
        };
        let mut planes = vec![t.clone(), t.clone()];
        edit_plane_texture(&mut planes, 1, &TextureEdit::Scale([0.5; 3])).unwrap();
        assert_eq!(planes[0], t);
        assert_eq!(planes[1].texture.color[0], [0.2, 0.3, 0.4]);
        assert_eq!(planes[1].texture.alpha, t.texture.alpha);
        edit_plane_texture(&mut planes, 1, &TextureEdit::Solid([1.0, 0.0, 0.0])).unwrap();
        assert!(planes[1].texture.color.iter().all(|c| *c == [1.0, 0.0, 0.0]));
        assert!(matches!(
            edit_plane_texture(&mut planes, 7, &TextureEdit::Solid([0.0; 3])),
            Err(Error::NotFound(7))
        ));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(reconstruct(&[], &PipelineConfig::default()), Err(Error::EmptyInput(_))));
    }
}
