//! Acceptance criteria. Prints one PASS / FAIL line per criterion and exits
//! nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use alphatablets::camera::{CameraView, Intrinsics, Pose};
use alphatablets::grid::{psnr, Grid, Rgb};
use alphatablets::io::formats::quantize;
use alphatablets::losses::{distortion_loss, DistortionWeighting, LossWeights};
use alphatablets::merge::{merge_pass, MergeConfig, MergeEvent, UnitTablet};
use alphatablets::metrics::{evaluate, geometry_metrics, segmentation_scores};
use alphatablets::optim::{backward_view, finite_difference_check, Adam, AdamConfig, Gradients, LearningRates, Param};
use alphatablets::pipeline::{edit_plane_texture, reconstruct, PipelineConfig, Reconstruction, TextureEdit};
use alphatablets::render::{blend_weights, render_view, AaMode, RenderConfig};
use alphatablets::synth::{box_room, SynthScene};
use alphatablets::tablet::{orthonormalize_basis, update_up_vector, Tablet, Texture};
use alphatablets::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    ensure(start.elapsed() < limit, || format!("took {:.1?}, limit {limit:?}", start.elapsed()))
}

fn camera(w: usize, h: usize, f: f64) -> Intrinsics {
    Intrinsics {
        fx: f,
        fy: f,
        cx: (w as f64 - 1.0) / 2.0,
        cy: (h as f64 - 1.0) / 2.0,
        width: w,
        height: h,
    }
}

/// Camera-facing tablet at `center` seen from the origin.
fn tablet(center: Vec3, normal: Vec3, up: Vec3, texture: Texture, lambda: f64) -> Tablet {
    let (normal, up, _) = orthonormalize_basis(normal, up).expect("valid frame");
    Tablet {
        anchor: Vec3::zeros(),
        ray_dir: center.normalize(),
        distance: center.norm(),
        normal,
        up,
        lambda_u: lambda,
        lambda_v: lambda,
        texture,
        source_camera: 0,
    }
}

fn random_texture(rng: &mut ChaCha8Rng, w: usize, h: usize, alpha: std::ops::Range<f64>) -> Texture {
    let mut t = Texture::solid(w, h, [0.0; 3], 0.0);
    for i in 0..t.len() {
        t.color[i] = [rng.gen(), rng.gen(), rng.gen()];
        t.alpha[i] = rng.gen_range(alpha.clone());
    }
    t
}

fn blank_view(w: usize, h: usize, f: f64) -> CameraView {
    CameraView::new(camera(w, h, f), Pose::identity(), Grid::filled(w, h, [0.0; 3]))
}

fn aa_counterexample() -> Outcome {
    let start = Instant::now();
    let view = blank_view(64, 48, 60.0);
    let opaque = [0.2, 0.6, 0.3];
    let back = tablet(Vec3::new(0.0, 0.0, 3.0), -Vec3::z(), -Vec3::y(), Texture::solid(8, 8, opaque, 1.0), 8.0 / 6.0);
    let tilt = 20f64.to_radians();
    let front = tablet(
        Vec3::new(0.05, -0.03, 2.0),
        -Vec3::z(),
        Vec3::new(tilt.sin(), -tilt.cos(), 0.0),
        Texture::solid(4, 4, [1.0, 0.0, 1.0], 0.0),
        5.0,
    );
    let tablets = [back, front];
    let mut worst = [0.0f64; 2];
    let mut edges = 0;
    for (i, aa) in [AaMode::AlphaAware, AaMode::Naive].into_iter().enumerate() {
        let cfg = RenderConfig {
            aa,
            ..RenderConfig::default()
        };
        let out = render_view(&tablets, &view, &cfg);
        if i == 0 {
            edges = out.stack.frags.iter().filter(|f| f.tablet == 1 && f.is_edge()).count();
        }
        for c in &out.color.data {
            for k in 0..3 {
                worst[i] = worst[i].max((c[k] - opaque[k]).abs());
            }
        }
    }
    ensure(edges > 20, || format!("only {edges} edge fragments on the transparent plane"))?;
    ensure(worst[0] <= 1e-6, || format!("alpha-aware deviation {:.3e}", worst[0]))?;
    ensure(worst[1] > 1e-2, || format!("naive variant deviation only {:.3e}", worst[1]))?;
    within(Duration::from_secs(5), start)?;
    Ok(format!(
        "{edges} edge fragments; alpha-aware max deviation {:.1e}, naive {:.3}",
        worst[0], worst[1]
    ))
}

fn compositing_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut worst_color, mut worst_sum, mut max_layers) = (0, 0.0f64, 0.0f64, 0);
    while checked < 1000 {
        let view = blank_view(24, 24, 24.0);
        let tablets: Vec<Tablet> = (0..rng.gen_range(1..=5))
            .map(|_| {
                let c = Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(1.5..4.0));
                let n = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -1.0);
                let tex = random_texture(&mut rng, 4, 4, 0.0..1.0);
                tablet(c, n, -Vec3::y(), tex, rng.gen_range(2.0..4.0))
            })
            .collect();
        let bg: Rgb = [rng.gen(), rng.gen(), rng.gen()];
        let cfg = RenderConfig {
            background: bg,
            ..RenderConfig::default()
        };
        let out = render_view(&tablets, &view, &cfg);
        let weights = blend_weights(&out.stack);
        for _ in 0..100 {
            let p = rng.gen_range(0..out.stack.pixel_count());
            let range = out.stack.pixel_range(p);
            let frags = &out.stack.frags[range.clone()];
            max_layers = max_layers.max(frags.len());
            // Sequential over operator, accumulating front to back.
            let (mut acc, mut acc_a) = ([0.0; 3], 0.0);
            for f in frags {
                for k in 0..3 {
                    acc[k] += (1.0 - acc_a) * f.alpha_aa * f.color_aa[k];
                }
                acc_a += (1.0 - acc_a) * f.alpha_aa;
            }
            let residual = 1.0 - acc_a;
            let c = out.color.data[p];
            for k in 0..3 {
                worst_color = worst_color.max((acc[k] + residual * bg[k] - c[k]).abs());
            }
            let transmitted: f64 = frags.iter().map(|f| 1.0 - f.alpha_aa).product();
            let sum: f64 = weights[range].iter().sum::<f64>() + transmitted;
            worst_sum = worst_sum.max((sum - 1.0).abs());
            checked += 1;
        }
    }
    ensure(worst_color <= 1e-6, || format!("color deviation {worst_color:.3e}"))?;
    ensure(worst_sum <= 1e-6, || format!("weight sum deviation {worst_sum:.3e}"))?;
    ensure(max_layers >= 3, || format!("fixtures reached only {max_layers} layers"))?;
    within(Duration::from_secs(5), start)?;
    Ok(format!(
        "{checked} pixels up to {max_layers} layers; color error {worst_color:.1e}, weight-sum error {worst_sum:.1e}"
    ))
}

fn gradient_scene(rng: &mut ChaCha8Rng) -> (Vec<Tablet>, CameraView) {
    let n = rng.gen_range(1..=5);
    let tablets = (0..n)
        .map(|_| {
            let c = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(1.5..3.5));
            let normal = Vec3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), -1.0);
            let (w, h) = (rng.gen_range(2..6), rng.gen_range(2..6));
            let tex = random_texture(rng, w, h, 0.2..0.9);
            tablet(c, normal, -Vec3::y(), tex, rng.gen_range(3.0..6.0))
        })
        .collect();
    let mut view = blank_view(32, 32, 32.0);
    view.image = Grid::from_fn(32, 32, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    view.depth = Some(Grid::from_fn(32, 32, |_, _| rng.gen_range(1.5..3.5)));
    view.normals = Some(Grid::from_fn(32, 32, |_, _| {
        Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -1.0).normalize()
    }));
    (tablets, view)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut total, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut kinds = [0usize; 4];
    for scene in 0..10 {
        let (tablets, view) = gradient_scene(&mut rng);
        let mut probes = Vec::new();
        for (k, t) in tablets.iter().enumerate() {
            for texel in 0..t.texture.len() {
                probes.push((k, Param::Color { texel, channel: rng.gen_range(0..3) }));
                probes.push((k, Param::Alpha { texel }));
            }
            for axis in 0..3 {
                probes.push((k, Param::Normal { axis }));
            }
            probes.push((k, Param::Distance));
        }
        let report = finite_difference_check(
            &tablets,
            &view,
            &RenderConfig::default(),
            &LossWeights::default(),
            DistortionWeighting::default(),
            &probes,
            1e-6,
        )
        .map_err(|e| format!("scene {scene}: {e}"))?;
        skipped += report.skipped;
        for p in &report.probes {
            let err = (p.analytic - p.numeric).abs() / (p.analytic.abs().max(p.numeric.abs()) + 1e-5);
            if err > worst {
                worst = err;
            }
            ensure(err <= 1e-3, || {
                format!("scene {scene} {:?}: analytic {:.6e}, numeric {:.6e}", p.param, p.analytic, p.numeric)
            })?;
            kinds[match p.param {
                Param::Color { .. } => 0,
                Param::Alpha { .. } => 1,
                Param::Normal { .. } => 2,
                Param::Distance => 3,
            }] += 1;
            total += 1;
        }
    }
    ensure(kinds.iter().all(|&k| k > 0), || format!("a parameter kind was never probed: {kinds:?}"))?;
    within(Duration::from_secs(120), start)?;
    Ok(format!(
        "{total} probes (color {}, alpha {}, normal {}, distance {}), {skipped} visibility-flip skips, max relative error {worst:.1e}",
        kinds[0], kinds[1], kinds[2], kinds[3]
    ))
}

struct BoxRun {
    scene: SynthScene,
    config: PipelineConfig,
    rec: Reconstruction,
    elapsed: Duration,
}

fn run_box_room() -> Result<BoxRun, String> {
    let scene = box_room(20, 320, 240);
    let config = PipelineConfig::default();
    let start = Instant::now();
    let rec = reconstruct(&scene.views, &config).map_err(|e| e.to_string())?;
    Ok(BoxRun {
        scene,
        config,
        rec,
        elapsed: start.elapsed(),
    })
}

/// Ground-truth label of each predicted plane, by best normal agreement.
fn match_planes(run: &BoxRun) -> Vec<(usize, f64)> {
    run.rec
        .planes
        .iter()
        .map(|t| {
            run.scene
                .planes
                .iter()
                .map(|g| (g.label, t.normal.dot(&g.normal)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("ground truth has planes")
        })
        .collect()
}

fn box_room_end_to_end(run: &BoxRun) -> Outcome {
    let planes = &run.rec.planes;
    ensure(planes.len() == 5, || format!("{} planes after the final merge", planes.len()))?;
    let matched = match_planes(run);
    let mut labels: Vec<usize> = matched.iter().map(|m| m.0).collect();
    labels.sort_unstable();
    ensure(labels == [0, 1, 2, 3, 4], || format!("planes map to ground-truth labels {labels:?}"))?;
    let (mut worst_angle, mut worst_offset) = (0.0f64, 0.0f64);
    for (t, &(label, cos)) in planes.iter().zip(&matched) {
        let g = &run.scene.planes[label];
        worst_angle = worst_angle.max(cos.clamp(-1.0, 1.0).acos().to_degrees());
        worst_offset = worst_offset.max((t.normal.dot(&t.center()) - g.offset()).abs());
    }
    ensure(worst_angle < 2.0, || format!("normal error {worst_angle:.3} deg"))?;
    let offset_limit = 0.01 * run.scene.scale;
    ensure(worst_offset < offset_limit, || format!("offset error {worst_offset:.4} m, limit {offset_limit}"))?;
    let min_psnr = run
        .rec
        .views
        .iter()
        .map(|v| psnr(&render_view(planes, v, &run.config.render).color, &v.image))
        .fold(f64::INFINITY, f64::min);
    ensure(min_psnr > 30.0, || format!("worst view PSNR {min_psnr:.2} dB"))?;
    let gt = run.scene.gt_points(alphatablets::io::scene::GT_VOXEL);
    let eval = evaluate(planes, &gt, 0.05 * run.scene.scale).map_err(|e| e.to_string())?;
    let (g, s) = (eval.geometry, eval.segmentation);
    ensure(g.fscore > 0.95, || format!("F-score {:.4}", g.fscore))?;
    ensure(s.voi < 0.2, || format!("VOI {:.4}", s.voi))?;
    ensure(s.ri > 0.98, || format!("RI {:.4}", s.ri))?;
    ensure(s.sc > 0.95, || format!("SC {:.4}", s.sc))?;
    ensure(run.elapsed < Duration::from_secs(600), || format!("reconstruction took {:.1?}", run.elapsed))?;
    Ok(format!(
        "5 planes; normal error {worst_angle:.3} deg, offset error {worst_offset:.4} m, min PSNR {min_psnr:.1} dB, F {:.3}, VOI {:.3}, RI {:.4}, SC {:.4}, {:.0?}",
        g.fscore, s.voi, s.ri, s.sc, run.elapsed
    ))
}

fn distortion_property() -> Outcome {
    let view_of = |color: Rgb| {
        let mut v = blank_view(32, 32, 40.0);
        v.image = Grid::filled(32, 32, color);
        v
    };
    let color = [0.6, 0.4, 0.2];
    let cfg = RenderConfig::default();
    let mode = DistortionWeighting::Transmittance;
    let single = [tablet(Vec3::new(0.0, 0.0, 2.0), -Vec3::z(), -Vec3::y(), Texture::solid(6, 6, color, 0.5), 1.5)];
    let view = view_of(color);
    let l_single = distortion_loss(&render_view(&single, &view, &cfg).stack, mode);
    ensure(l_single == 0.0, || format!("single surface gives {l_single:e}"))?;

    let mut pair = vec![
        tablet(Vec3::new(0.0, 0.0, 2.0), -Vec3::z(), -Vec3::y(), Texture::solid(6, 6, color, 0.5), 1.5),
        tablet(Vec3::new(0.0, 0.0, 2.1), -Vec3::z(), -Vec3::y(), Texture::solid(6, 6, color, 0.5), 1.5),
    ];
    let before = distortion_loss(&render_view(&pair, &view, &cfg).stack, mode);
    ensure(before > 0.0, || "two semi-transparent surfaces give zero distortion".into())?;
    let weights = LossWeights {
        distortion: 20.0,
        ..LossWeights::default()
    };
    let mut adam = Adam::new(&pair, AdamConfig::default(), LearningRates::default());
    for step in 0..200 {
        let out = render_view(&pair, &view, &cfg);
        let mut grads = Gradients::zeros(&pair);
        backward_view(&pair, &view, &out, &cfg, &weights, mode, 1.0, &mut grads);
        adam.apply(&mut pair, &grads).map_err(|e| format!("step {step}: {e}"))?;
    }
    let after = distortion_loss(&render_view(&pair, &view, &cfg).stack, mode);
    ensure(after <= 0.5 * before, || format!("distortion {before:.4e} -> {after:.4e}"))?;
    Ok(format!(
        "single surface 0; pair {before:.4e} -> {after:.4e} after 200 steps ({:.0}% lower)",
        100.0 * (1.0 - after / before)
    ))
}

fn unit(center: Vec3, normal: Vec3, color: Rgb, owner: usize) -> UnitTablet {
    UnitTablet {
        center,
        normal: normal.normalize(),
        color,
        owner,
        initial: owner,
        camera: 0,
    }
}

fn merge_properties(events: &[MergeEvent]) -> Outcome {
    let cfg = MergeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normals = [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 1.0, 0.0).normalize()];
    let units: Vec<UnitTablet> = (0..600)
        .map(|i| {
            let k = rng.gen_range(0..normals.len());
            let jitter = Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 0.05;
            let center = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let c = 0.2 * k as f64 + 0.1 * rng.gen::<f64>();
            unit(center, normals[k] + jitter, [c, 0.5, 0.5], i)
        })
        .collect();
    let a = merge_pass(&units, &cfg);
    let b = merge_pass(&units, &cfg);
    ensure(a == b, || "two runs produced different forests".into())?;
    ensure(a.sweeps <= units.len(), || format!("{} sweeps for {} units", a.sweeps, units.len()))?;

    let chain = [
        unit(Vec3::zeros(), Vec3::z(), [0.30, 0.5, 0.5], 0),
        unit(Vec3::new(0.1, 0.0, 0.0), Vec3::z(), [0.40, 0.5, 0.5], 1),
        unit(Vec3::new(0.2, 0.0, 0.0), Vec3::z(), [0.44, 0.5, 0.5], 2),
    ];
    let sets = merge_pass(&chain, &cfg).forest.set_count();
    ensure(sets == 1, || format!("transitive example gives {sets} sets"))?;

    for _ in 0..200 {
        let n: Vec3 = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
        let (_, m, _) = orthonormalize_basis(n, Vec3::new(rng.gen(), rng.gen(), rng.gen())).map_err(|e| e.to_string())?;
        let p = [unit(Vec3::zeros(), n, [0.5; 3], 0), unit(Vec3::new(0.01, 0.0, 0.0), m, [0.5; 3], 1)];
        ensure(merge_pass(&p, &cfg).forest.set_count() == 2, || "perpendicular tablets merged".into())?;
    }

    ensure(!events.is_empty(), || "no merge events recorded".into())?;
    for (i, e) in events.iter().enumerate() {
        ensure(e.after <= e.before, || format!("event {i} grew {} -> {}", e.before, e.after))?;
        if let Some(next) = events.get(i + 1).filter(|n| n.stage == e.stage) {
            ensure(next.before <= e.after, || format!("count rose between events {i} and {}", i + 1))?;
        }
    }
    Ok(format!(
        "600 units: {} sets in {} sweeps, identical reruns; chain -> 1 set; 200 perpendicular pairs kept apart; {} events non-increasing",
        a.forest.set_count(),
        a.sweeps,
        events.len()
    ))
}

fn metrics_golden() -> Outcome {
    let s = segmentation_scores(&[0, 0, 1, 1], &[5, 5, 9, 9]).map_err(|e| e.to_string())?;
    ensure((s.voi, s.ri, s.sc) == (0.0, 1.0, 1.0), || format!("identical labelings: {s:?}"))?;
    let s = segmentation_scores(&[0, 1, 0, 1], &[0, 0, 1, 1]).map_err(|e| e.to_string())?;
    ensure(s.ri == 1.0 / 3.0, || format!("RI {} instead of 1/3", s.ri))?;
    let s = segmentation_scores(&[0, 0, 1, 1], &[0, 0, 0, 0]).map_err(|e| e.to_string())?;
    ensure(s.sc == 0.5, || format!("SC {} instead of 0.5", s.sc))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = |rng: &mut ChaCha8Rng| -> Vec<Vec3> {
        (0..rng.gen_range(20..120))
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect()
    };
    for i in 0..100 {
        let (p, g) = (cloud(&mut rng), cloud(&mut rng));
        let ab = geometry_metrics(&p, &g, 0.1).map_err(|e| e.to_string())?;
        let ba = geometry_metrics(&g, &p, 0.1).map_err(|e| e.to_string())?;
        let same = ab.accuracy == ba.completeness
            && ab.completeness == ba.accuracy
            && ab.precision == ba.recall
            && ab.recall == ba.precision
            && (ab.fscore - ba.fscore).abs() <= 1e-15;
        ensure(same, || format!("pair {i}: {ab:?} vs {ba:?}"))?;
    }
    Ok("identity VOI=0 RI=1 SC=1; RI=1/3 and SC=0.5 exact; 100 swapped cloud pairs symmetric".into())
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn up_vector_update() -> Outcome {
    let up = |a: Vec3, b: Vec3, u: Vec3| update_up_vector(a, b, u).map_err(|e| e.to_string());
    let case1 = up(Vec3::z(), Vec3::x(), Vec3::y())?;
    ensure((case1 - Vec3::y()).norm() < 1e-12, || format!("z->x moved +y to {case1:?}"))?;
    let case2 = up(Vec3::z(), Vec3::y(), Vec3::y())?;
    ensure((case2 + Vec3::z()).norm() < 1e-12, || format!("z->y gave {case2:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut drift = 0.0f64;
    let (mut n, mut u) = (Vec3::z(), Vec3::y());
    for i in 0..10_000 {
        // Composition along one great circle: n0 -> n1 -> n2 equals n0 -> n2.
        let n0 = random_unit(&mut rng);
        let (_, u0, r) = orthonormalize_basis(n0, random_unit(&mut rng)).map_err(|e| e.to_string())?;
        let axis = (u0 * rng.gen_range(-1.0..1.0) + r * rng.gen_range(-1.0..1.0)).normalize();
        let (t1, t2) = (rng.gen_range(0.0..1.2), rng.gen_range(0.0..1.2));
        let turn = |t: f64| n0 * t.cos() + axis * t.sin();
        let (n1, n2) = (turn(t1), turn(t1 + t2));
        let stepwise = up(n1, n2, up(n0, n1, u0)?)?;
        let direct = up(n0, n2, u0)?;
        drift = drift.max((stepwise - direct).norm());
        ensure(drift < 1e-5, || format!("pair {i}: composition error {drift:.3e}"))?;

        // Long random walk: orthogonality and unit length must not drift.
        let next = (n + random_unit(&mut rng) * 0.5).normalize();
        u = up(n, next, u)?;
        n = next;
        drift = drift.max(n.dot(&u).abs()).max((u.norm() - 1.0).abs());
        ensure(drift < 1e-5, || format!("step {i}: orthogonality drift {drift:.3e}"))?;
    }
    Ok(format!("both 90 degree cases exact; 10000 composed pairs and walk steps, max drift {drift:.1e}"))
}

fn editing_consistency(run: &BoxRun) -> Outcome {
    let matched = match_planes(run);
    let target = 0;
    let label = matched[target].0;
    let mut edited = run.rec.planes.clone();
    let red = [1.0, 0.0, 0.0];
    edit_plane_texture(&mut edited, target, &TextureEdit::Solid(red)).map_err(|e| e.to_string())?;
    let (mut changed_total, mut iou_min) = (0usize, 1.0f64);
    for (i, view) in run.rec.views.iter().enumerate() {
        let before = render_view(&run.rec.planes, view, &run.config.render);
        let after = render_view(&edited, view, &run.config.render);
        let weights = blend_weights(&before.stack);
        let (mut inter, mut union) = (0usize, 0usize);
        for p in 0..before.stack.pixel_count() {
            let touched = before.stack.pixel_range(p).any(|j| before.stack.frags[j].tablet == target as u32 && weights[j] > 0.0);
            let b = before.color.data[p].map(quantize);
            let a = after.color.data[p].map(quantize);
            let changed = a != b;
            ensure(!changed || touched, || format!("view {i} pixel {p}: changed without the target plane"))?;
            let gt = run.scene.label_maps[i].data[p] == Some(label);
            if changed && gt {
                inter += 1;
            }
            if changed || gt {
                union += 1;
            }
            changed_total += changed as usize;
        }
        if union > 0 {
            iou_min = iou_min.min(inter as f64 / union as f64);
        }
    }
    ensure(changed_total > 0, || "edit changed no pixel".into())?;
    ensure(iou_min > 0.95, || format!("changed pixels vs instance mask IoU {iou_min:.4}"))?;
    Ok(format!(
        "{changed_total} pixels changed over 20 views, all on the target plane; min IoU with its instance mask {iou_min:.4}; other pixels byte-identical"
    ))
}

fn report(index: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("PASS {index} {name}: {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("FAIL {index} {name}: {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let box_start = Instant::now();
    let boxed = catch_unwind(run_box_room).unwrap_or_else(|_| Err("box-room reconstruction panicked".into()));
    let box_secs = box_start.elapsed().as_secs_f64();
    let shared = |f: fn(&BoxRun) -> Outcome| {
        let boxed = &boxed;
        move || match boxed {
            Ok(run) => f(run),
            Err(e) => Err(format!("box-room reconstruction failed: {e}")),
        }
    };
    let events: Vec<MergeEvent> = boxed.as_ref().map(|r| r.rec.events.clone()).unwrap_or_default();
    let results = [
        report(1, "alpha-aware anti-aliasing", aa_counterexample),
        report(2, "compositing oracle", compositing_oracle),
        report(3, "gradient correctness", gradient_correctness),
        report(4, "box-room end-to-end", shared(box_room_end_to_end)),
        report(5, "distortion loss", distortion_property),
        report(6, "merge properties", || merge_properties(&events)),
        report(7, "metrics golden values", metrics_golden),
        report(8, "up-vector update", up_vector_update),
        report(9, "editing consistency", shared(editing_consistency)),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("{passed}/{} criteria passed (shared box-room reconstruction {box_secs:.1}s)", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
