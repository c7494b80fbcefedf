//! Hierarchical merging of tablets.
//!
//! Every first-generation tablet is remembered as an [`InitialTablet`] and
//! affiliated with the current tablet it has been merged into. Before a
//! merge, each initial tablet is projected onto its current tablet's plane to
//! form a fixed-size [`UnitTablet`]; a union-find over the units decides which
//! current tablets become one, and the sets are rebuilt into new tablets.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::atlas::BilinearTaps;
use crate::atlas::sample_texture;
use crate::camera::CameraView;
use crate::grid::Rgb;
use crate::kdtree::KdTree;
use crate::render::{render_view, RenderConfig};
use crate::tablet::{orthonormalize_basis, update_up_vector, Tablet, Texture};
use crate::Vec3;

/// Largest texture side a merged tablet may have; texel density is reduced
/// beyond it.
pub const MAX_TEXTURE_SIDE: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Neighbours examined per unit.
    pub neighbors: usize,
    /// Minimum cosine between two unit normals.
    pub normal_cos: f64,
    /// Minimum cosine between the two sets' average normals.
    pub set_normal_cos: f64,
    /// Maximum center separation along the average normal, world units.
    pub distance: f64,
    /// Maximum per-channel difference of the sets' average colors.
    pub color: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            neighbors: 16,
            normal_cos: 0.93,
            set_normal_cos: 0.93,
            distance: 0.05,
            color: 0.12,
        }
    }
}

/// Geometry and color of a first-generation tablet, kept for the lifetime of
/// the reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialTablet {
    pub center: Vec3,
    pub normal: Vec3,
    pub up: Vec3,
    pub half_u: f64,
    pub half_v: f64,
    pub lambda_u: f64,
    pub lambda_v: f64,
    pub color: Rgb,
    pub camera: usize,
}

impl InitialTablet {
    pub fn of(t: &Tablet) -> Self {
        InitialTablet {
            center: t.center(),
            normal: t.normal,
            up: t.up,
            half_u: t.half_u(),
            half_v: t.half_v(),
            lambda_u: t.lambda_u,
            lambda_v: t.lambda_v,
            color: t.texture.mean_color(),
            camera: t.source_camera,
        }
    }

    fn corners(&self) -> [Vec3; 4] {
        let r = self.normal.cross(&self.up);
        let (du, dv) = (self.up * self.half_u, r * self.half_v);
        let p = self.center;
        [p - du - dv, p - du + dv, p + du + dv, p + du - dv]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitTablet {
    pub center: Vec3,
    pub normal: Vec3,
    pub color: Rgb,
    /// Index of the current tablet this unit belongs to.
    pub owner: usize,
    /// Index of the originating initial tablet.
    pub initial: usize,
    pub camera: usize,
}

/// Current tablets plus the affiliation of every initial tablet.
#[derive(Clone, Debug, PartialEq)]
pub struct TabletScene {
    pub tablets: Vec<Tablet>,
    pub initial: Vec<InitialTablet>,
    /// `owner[i]` is the current tablet of initial tablet `i`.
    pub owner: Vec<usize>,
}

impl TabletScene {
    /// A scene where every tablet is its own initial tablet.
    pub fn from_initial(tablets: Vec<Tablet>) -> Self {
        let initial = tablets.iter().map(InitialTablet::of).collect();
        let owner = (0..tablets.len()).collect();
        TabletScene {
            tablets,
            initial,
            owner,
        }
    }

    /// Concatenates scenes, re-indexing affiliations.
    pub fn concat(parts: Vec<TabletScene>) -> Self {
        let mut out = TabletScene {
            tablets: Vec::new(),
            initial: Vec::new(),
            owner: Vec::new(),
        };
        for p in parts {
            let base = out.tablets.len();
            out.tablets.extend(p.tablets);
            out.initial.extend(p.initial);
            out.owner.extend(p.owner.into_iter().map(|o| o + base));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tablets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tablets.is_empty()
    }
}

/// Projects every initial tablet onto its current tablet's plane. The unit's
/// color is the alpha-weighted mean of the current texture over the initial
/// tablet's footprint.
pub fn project_units(scene: &TabletScene) -> Vec<UnitTablet> {
    scene
        .initial
        .iter()
        .zip(&scene.owner)
        .enumerate()
        .map(|(i, (init, &o))| {
            let cur = &scene.tablets[o];
            let n = cur.normal;
            let center = init.center - n * (init.center - cur.center()).dot(&n);
            UnitTablet {
                center,
                normal: n,
                color: footprint_color(cur, init).unwrap_or(init.color),
                owner: o,
                initial: i,
                camera: init.camera,
            }
        })
        .collect()
}

fn footprint_color(cur: &Tablet, init: &InitialTablet) -> Option<Rgb> {
    let (c, up, right) = (cur.center(), cur.up, cur.right());
    let (mut smin, mut smax, mut qmin, mut qmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for corner in init.corners() {
        let e = corner - c;
        let (s, q) = cur.local_to_texel(e.dot(&up), e.dot(&right));
        smin = smin.min(s);
        smax = smax.max(s);
        qmin = qmin.min(q);
        qmax = qmax.max(q);
    }
    let tex = &cur.texture;
    let r0 = (smin - 0.5).ceil().max(0.0) as usize;
    let r1 = ((smax - 0.5).floor().min(tex.height as f64 - 1.0)).max(-1.0);
    let c0 = (qmin - 0.5).ceil().max(0.0) as usize;
    let c1 = ((qmax - 0.5).floor().min(tex.width as f64 - 1.0)).max(-1.0);
    if r1 < 0.0 || c1 < 0.0 {
        return None;
    }
    let init_right = init.normal.cross(&init.up);
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for row in r0..=r1 as usize {
        for col in c0..=c1 as usize {
            let w = cur.texel_to_world(row as f64 + 0.5, col as f64 + 0.5);
            let d = w - init.center;
            if d.dot(&init.up).abs() > init.half_u || d.dot(&init_right).abs() > init.half_v {
                continue;
            }
            let idx = tex.index(row, col);
            let a = tex.alpha[idx];
            for k in 0..3 {
                acc[k] += a * tex.color[idx][k];
            }
            wsum += a;
        }
    }
    (wsum > 1e-9).then(|| acc.map(|v| v / wsum))
}

/// Union-find over unit tablets with per-set running sums.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeForest {
    parent: Vec<usize>,
    rank: Vec<u8>,
    count: Vec<usize>,
    sum_center: Vec<Vec3>,
    sum_normal: Vec<Vec3>,
    sum_color: Vec<Rgb>,
}

impl MergeForest {
    pub fn new(units: &[UnitTablet]) -> Self {
        MergeForest {
            parent: (0..units.len()).collect(),
            rank: vec![0; units.len()],
            count: vec![1; units.len()],
            sum_center: units.iter().map(|u| u.center).collect(),
            sum_normal: units.iter().map(|u| u.normal).collect(),
            sum_color: units.iter().map(|u| u.color).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = i;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Root lookup without path compression.
    pub fn root(&self, mut i: usize) -> usize {
        while self.parent[i] != i {
            i = self.parent[i];
        }
        i
    }

    /// Joins the sets of `a` and `b`; returns the new root.
    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (root, child) = match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => (rb, ra),
            std::cmp::Ordering::Greater => (ra, rb),
            std::cmp::Ordering::Equal => {
                let (r, c) = if ra < rb { (ra, rb) } else { (rb, ra) };
                self.rank[r] += 1;
                (r, c)
            }
        };
        self.parent[child] = root;
        self.count[root] += self.count[child];
        self.sum_center[root] = self.sum_center[root] + self.sum_center[child];
        self.sum_normal[root] = self.sum_normal[root] + self.sum_normal[child];
        for k in 0..3 {
            self.sum_color[root][k] += self.sum_color[child][k];
        }
        root
    }

    pub fn set_size(&self, i: usize) -> usize {
        self.count[self.root(i)]
    }

    pub fn mean_center(&self, i: usize) -> Vec3 {
        let r = self.root(i);
        self.sum_center[r] / self.count[r] as f64
    }

    /// Normalized mean of member normals (zero if they cancel).
    pub fn mean_normal(&self, i: usize) -> Vec3 {
        let s = self.sum_normal[self.root(i)];
        let n = s.norm();
        if n > 1e-12 {
            s / n
        } else {
            Vec3::zeros()
        }
    }

    pub fn mean_color(&self, i: usize) -> Rgb {
        let r = self.root(i);
        self.sum_color[r].map(|v| v / self.count[r] as f64)
    }

    pub fn set_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.parent[i] == i).count()
    }

    /// Members of every set, sets ordered by their smallest member.
    pub fn sets(&self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..self.len() {
            let r = self.root(i);
            let slot = *by_root.entry(r).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[slot].push(i);
        }
        out
    }

    /// Set label per unit, dense and ordered by smallest member.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.len()];
        for (l, set) in self.sets().iter().enumerate() {
            for &i in set {
                labels[i] = l;
            }
        }
        labels
    }

    fn can_merge(&self, a: &UnitTablet, b: &UnitTablet, ra: usize, rb: usize, cfg: &MergeConfig) -> bool {
        if a.normal.dot(&b.normal) < cfg.normal_cos {
            return false;
        }
        let (na, nb) = (self.mean_normal(ra), self.mean_normal(rb));
        if na.dot(&nb) < cfg.set_normal_cos {
            return false;
        }
        let avg = na + nb;
        let len = avg.norm();
        if len < 1e-12 {
            return false;
        }
        if ((self.mean_center(ra) - self.mean_center(rb)).dot(&avg) / len).abs() > cfg.distance {
            return false;
        }
        let (ca, cb) = (self.mean_color(ra), self.mean_color(rb));
        (0..3).all(|k| (ca[k] - cb[k]).abs() <= cfg.color)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutcome {
    pub forest: MergeForest,
    /// Full sweeps performed, including the final one without unions.
    pub sweeps: usize,
    pub unions: usize,
}

/// Merges units until a full sweep makes no union. Units owned by the same
/// current tablet start in one set.
pub fn merge_pass(units: &[UnitTablet], cfg: &MergeConfig) -> MergeOutcome {
    let mut forest = MergeForest::new(units);
    let mut first_of_owner: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, u) in units.iter().enumerate() {
        let first = *first_of_owner.entry(u.owner).or_insert(i);
        if first != i {
            forest.union(first, i);
        }
    }

    let centers: Vec<Vec3> = units.iter().map(|u| u.center).collect();
    let tree = KdTree::build(&centers);
    let neighbors: Vec<Vec<usize>> = centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            tree.nearest(c, cfg.neighbors + 1)
                .into_iter()
                .map(|(j, _)| j)
                .filter(|&j| j != i)
                .take(cfg.neighbors)
                .collect()
        })
        .collect();

    let mut sweeps = 0;
    let mut unions = 0;
    loop {
        sweeps += 1;
        let mut changed = false;
        for i in 0..units.len() {
            for &j in &neighbors[i] {
                let (ri, rj) = (forest.find(i), forest.find(j));
                if ri == rj {
                    continue;
                }
                if forest.can_merge(&units[i], &units[j], ri, rj, cfg) {
                    forest.union(ri, rj);
                    unions += 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    MergeOutcome {
        forest,
        sweeps,
        unions,
    }
}

/// Most frequent camera index, ties to the lowest index.
pub fn assign_camera(cameras: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in cameras {
        *counts.entry(c).or_default() += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    for (c, n) in counts {
        if best.map_or(true, |(_, bn)| n > bn) {
            best = Some((c, n));
        }
    }
    best.map(|b| b.0)
}

/// Builds one tablet per set. A set that is exactly one existing tablet is
/// carried over unchanged. `anchors[c]` is the center of camera `c`.
pub fn rebuild_tablets(scene: &TabletScene, units: &[UnitTablet], forest: &MergeForest, anchors: &[Vec3]) -> TabletScene {
    let sets = forest.sets();
    let mut tablets = Vec::with_capacity(sets.len());
    let mut owner = vec![0; scene.initial.len()];
    for (new_idx, set) in sets.iter().enumerate() {
        let mut owners: Vec<usize> = set.iter().map(|&i| units[i].owner).collect();
        owners.sort_unstable();
        owners.dedup();
        for &i in set {
            owner[units[i].initial] = new_idx;
        }
        if owners.len() == 1 {
            tablets.push(scene.tablets[owners[0]].clone());
            continue;
        }
        tablets.push(merge_set(scene, units, forest, set, &owners, anchors));
    }
    TabletScene {
        tablets,
        initial: scene.initial.clone(),
        owner,
    }
}

fn merge_set(
    scene: &TabletScene,
    units: &[UnitTablet],
    forest: &MergeForest,
    set: &[usize],
    owners: &[usize],
    anchors: &[Vec3],
) -> Tablet {
    let first = set[0];
    let normal = forest.mean_normal(first);
    let origin = forest.mean_center(first);
    let reference = &scene.tablets[units[first].owner];
    let up = update_up_vector(reference.normal, normal, reference.up)
        .or_else(|_| orthonormalize_basis(normal, Vec3::y()).map(|b| b.1))
        .or_else(|_| orthonormalize_basis(normal, Vec3::x()).map(|b| b.1))
        .expect("a unit normal has an orthogonal axis");
    let right = normal.cross(&up);

    let (mut amin, mut amax, mut bmin, mut bmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &o in owners {
        for c in scene.tablets[o].corners() {
            let e = c - origin;
            let (a, b) = (e.dot(&up), e.dot(&right));
            amin = amin.min(a);
            amax = amax.max(a);
            bmin = bmin.min(b);
            bmax = bmax.max(b);
        }
    }
    let n = set.len() as f64;
    let mut lambda_u = set.iter().map(|&i| scene.initial[units[i].initial].lambda_u).sum::<f64>() / n;
    let mut lambda_v = set.iter().map(|&i| scene.initial[units[i].initial].lambda_v).sum::<f64>() / n;
    let side = |extent: f64, lambda: f64| ((extent * lambda) - 1e-9).ceil().max(1.0);
    if side(amax - amin, lambda_u) > MAX_TEXTURE_SIDE as f64 {
        lambda_u = MAX_TEXTURE_SIDE as f64 / (amax - amin);
    }
    if side(bmax - bmin, lambda_v) > MAX_TEXTURE_SIDE as f64 {
        lambda_v = MAX_TEXTURE_SIDE as f64 / (bmax - bmin);
    }
    let height = side(amax - amin, lambda_u) as usize;
    let width = side(bmax - bmin, lambda_v) as usize;
    let center = origin + up * (0.5 * (amin + amax)) + right * (0.5 * (bmin + bmax));
    let cameras: Vec<usize> = set.iter().map(|&i| units[i].camera).collect();
    let camera = assign_camera(&cameras).unwrap_or(0);
    let anchor = anchors.get(camera).copied().unwrap_or(reference.anchor);

    let mut tablet = Tablet {
        anchor,
        ray_dir: reference.ray_dir,
        distance: reference.distance,
        normal,
        up,
        lambda_u,
        lambda_v,
        texture: Texture::solid(width, height, forest.mean_color(first), 0.0),
        source_camera: camera,
    };
    tablet.set_center(anchor, center);
    resample_texture(&mut tablet, owners.iter().map(|&o| &scene.tablets[o]));
    tablet
}

/// Fills `target`'s texture from `sources`: each texel takes the sample of
/// the source with the highest alpha at that point.
pub fn resample_texture<'a>(target: &mut Tablet, sources: impl Iterator<Item = &'a Tablet>) {
    let (tc, tu, tr) = (target.center(), target.up, target.right());
    let (th, tw) = (target.texture.height, target.texture.width);
    let mut best = vec![f64::NEG_INFINITY; th * tw];
    for src in sources {
        let (mut smin, mut smax, mut qmin, mut qmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for c in src.corners() {
            let e = c - tc;
            let (s, q) = target.local_to_texel(e.dot(&tu), e.dot(&tr));
            smin = smin.min(s);
            smax = smax.max(s);
            qmin = qmin.min(q);
            qmax = qmax.max(q);
        }
        let r0 = (smin - 0.5).ceil().max(0.0);
        let r1 = (smax - 0.5).floor().min(th as f64 - 1.0);
        let c0 = (qmin - 0.5).ceil().max(0.0);
        let c1 = (qmax - 0.5).floor().min(tw as f64 - 1.0);
        if r1 < r0 || c1 < c0 {
            continue;
        }
        let (sc, su, sr) = (src.center(), src.up, src.right());
        let (sh, sw) = (src.texture.height as f64, src.texture.width as f64);
        for row in r0 as usize..=r1 as usize {
            for col in c0 as usize..=c1 as usize {
                let x = target.texel_to_world(row as f64 + 0.5, col as f64 + 0.5);
                let e = x - sc;
                let (s, q) = src.local_to_texel(e.dot(&su), e.dot(&sr));
                if !(0.0..=sh).contains(&s) || !(0.0..=sw).contains(&q) {
                    continue;
                }
                let taps = BilinearTaps::locate(s, q, src.texture.height, src.texture.width);
                let (color, alpha) = sample_texture(src, &taps);
                let idx = row * tw + col;
                if alpha > best[idx] {
                    best[idx] = alpha;
                    target.texture.color[idx] = color;
                    target.texture.alpha[idx] = alpha;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightCheckStats {
    pub before: usize,
    pub dropped: usize,
    pub cropped: usize,
}

/// Renders every view, keeps per tablet the texel coordinates of fragments
/// whose blending weight exceeds `threshold`, drops tablets with fewer than
/// `min_points` such fragments and crops the rest to the texel range of
/// their points. Initial tablets of dropped tablets are forgotten.
pub fn weight_check(
    scene: &mut TabletScene,
    views: &[&CameraView],
    cfg: &RenderConfig,
    threshold: f64,
    min_points: usize,
) -> WeightCheckStats {
    #[derive(Clone, Copy)]
    struct Range {
        n: usize,
        smin: f64,
        smax: f64,
        qmin: f64,
        qmax: f64,
    }
    let mut ranges = vec![
        Range {
            n: 0,
            smin: f64::MAX,
            smax: f64::MIN,
            qmin: f64::MAX,
            qmax: f64::MIN,
        };
        scene.tablets.len()
    ];
    for view in views {
        let out = render_view(&scene.tablets, view, cfg);
        for (f, &w) in out.stack.frags.iter().zip(&out.weights) {
            if w > threshold {
                let r = &mut ranges[f.tablet as usize];
                r.n += 1;
                r.smin = r.smin.min(f.texel[0]);
                r.smax = r.smax.max(f.texel[0]);
                r.qmin = r.qmin.min(f.texel[1]);
                r.qmax = r.qmax.max(f.texel[1]);
            }
        }
    }

    let mut stats = WeightCheckStats {
        before: scene.tablets.len(),
        ..Default::default()
    };
    let mut remap = vec![None; scene.tablets.len()];
    let mut kept = Vec::new();
    for (k, t) in scene.tablets.iter().enumerate() {
        let r = ranges[k];
        if r.n < min_points.max(1) {
            stats.dropped += 1;
            continue;
        }
        let (h, w) = (t.texture.height, t.texture.width);
        let clampi = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        let (r0, r1) = (clampi(r.smin, h), clampi(r.smax, h));
        let (c0, c1) = (clampi(r.qmin, w), clampi(r.qmax, w));
        remap[k] = Some(kept.len());
        if r0 == 0 && c0 == 0 && r1 == h - 1 && c1 == w - 1 {
            kept.push(t.clone());
            continue;
        }
        stats.cropped += 1;
        kept.push(crop_tablet(t, r0, r1, c0, c1));
    }

    let mut initial = Vec::new();
    let mut owner = Vec::new();
    for (init, &o) in scene.initial.iter().zip(&scene.owner) {
        if let Some(n) = remap[o] {
            initial.push(init.clone());
            owner.push(n);
        }
    }
    *scene = TabletScene {
        tablets: kept,
        initial,
        owner,
    };
    stats
}

/// Keeps texel rows `r0..=r1` and columns `c0..=c1`; the world footprint of
/// the kept texels is unchanged.
pub fn crop_tablet(t: &Tablet, r0: usize, r1: usize, c0: usize, c1: usize) -> Tablet {
    let (h, w) = (r1 - r0 + 1, c1 - c0 + 1);
    let mut tex = Texture::solid(w, h, [0.0; 3], 0.0);
    for row in 0..h {
        for col in 0..w {
            let src = t.texture.index(r0 + row, c0 + col);
            let dst = tex.index(row, col);
            tex.color[dst] = t.texture.color[src];
            tex.alpha[dst] = t.texture.alpha[src];
        }
    }
    let center = t.texel_to_world((r0 + r1 + 1) as f64 * 0.5, (c0 + c1 + 1) as f64 * 0.5);
    let mut out = t.clone();
    out.texture = tex;
    out.set_center(t.anchor, center);
    out
}

/// One row of merge telemetry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub stage: usize,
    pub epoch: usize,
    /// `merge` or `weight_check`.
    pub kind: &'static str,
    pub before: usize,
    pub after: usize,
    pub dropped: usize,
}

pub fn write_merge_csv<W: Write>(mut out: W, events: &[MergeEvent]) -> std::io::Result<()> {
    writeln!(out, "stage,epoch,event,tablets_before,tablets_after,dropped")?;
    for e in events {
        writeln!(out, "{},{},{},{},{},{}", e.stage, e.epoch, e.kind, e.before, e.after, e.dropped)?;
    }
    Ok(())
}

/// Projects units, merges and rebuilds in one step.
pub fn merge_scene(scene: &TabletScene, cfg: &MergeConfig, anchors: &[Vec3]) -> (TabletScene, MergeOutcome) {
    let units = project_units(scene);
    let outcome = merge_pass(&units, cfg);
    let rebuilt = rebuild_tablets(scene, &units, &outcome.forest, anchors);
    (rebuilt, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

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

    fn square(center: Vec3, size: usize, color: Rgb) -> Tablet {
        Tablet {
            anchor: Vec3::new(0.0, 0.0, -5.0),
            ray_dir: (center - Vec3::new(0.0, 0.0, -5.0)).normalize(),
            distance: (center - Vec3::new(0.0, 0.0, -5.0)).norm(),
            normal: -Vec3::z(),
            up: -Vec3::y(),
            lambda_u: size as f64,
            lambda_v: size as f64,
            texture: Texture::solid(size, size, color, 1.0),
            source_camera: 0,
        }
    }

    #[test]
    fn coplanar_same_color_merge_and_perpendicular_do_not() {
        let units = [
            unit(Vec3::zeros(), Vec3::z(), [0.5; 3], 0),
            unit(Vec3::new(0.1, 0.0, 0.0), Vec3::z(), [0.5; 3], 1),
        ];
        assert_eq!(merge_pass(&units, &MergeConfig::default()).forest.set_count(), 1);
        let units = [
            unit(Vec3::zeros(), Vec3::z(), [0.5; 3], 0),
            unit(Vec3::new(0.0, 0.0, 0.0), Vec3::x(), [0.5; 3], 1),
        ];
        assert_eq!(merge_pass(&units, &MergeConfig::default()).forest.set_count(), 2);
    }

    #[test]
    fn transitive_chain_becomes_one_set() {
        // A-C differ by 0.14 > 0.12 in red; A-B by 0.10, {A,B} to C by 0.09.
        let units = [
            unit(Vec3::zeros(), Vec3::z(), [0.30, 0.5, 0.5], 0),
            unit(Vec3::new(0.1, 0.0, 0.0), Vec3::z(), [0.40, 0.5, 0.5], 1),
            unit(Vec3::new(0.2, 0.0, 0.0), Vec3::z(), [0.44, 0.5, 0.5], 2),
        ];
        let out = merge_pass(&units, &MergeConfig::default());
        assert_eq!(out.forest.set_count(), 1);
        assert!(out.sweeps <= units.len());
        let forest = MergeForest::new(&units);
        assert!(!forest.can_merge(&units[0], &units[2], 0, 2, &MergeConfig::default()));
    }

    #[test]
    fn set_statistics_are_member_means() {
        let units = [
            unit(Vec3::new(0.0, 0.0, 0.0), Vec3::z(), [0.2, 0.4, 0.6], 0),
            unit(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.1, 0.0, 1.0), [0.4, 0.4, 0.6], 1),
            unit(Vec3::new(2.0, 3.0, 0.0), Vec3::z(), [0.6, 0.4, 0.6], 2),
        ];
        let mut f = MergeForest::new(&units);
        f.union(0, 1);
        f.union(2, 1);
        assert_relative_eq!(f.mean_center(0), Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(f.mean_color(2)[0], 0.4, epsilon = 1e-12);
        let n = (units[0].normal + units[1].normal + units[2].normal).normalize();
        assert_relative_eq!(f.mean_normal(1), n, epsilon = 1e-12);
        assert_eq!(f.set_size(0), 3);
    }

    #[test]
    fn owners_stay_together() {
        // Perpendicular units that share an owner are one set.
        let units = [
            unit(Vec3::zeros(), Vec3::z(), [0.5; 3], 0),
            unit(Vec3::new(5.0, 0.0, 0.0), Vec3::x(), [0.5; 3], 0),
        ];
        assert_eq!(merge_pass(&units, &MergeConfig::default()).forest.set_count(), 1);
    }

    #[test]
    fn camera_mode() {
        assert_eq!(assign_camera(&[0, 0, 1]), Some(0));
        assert_eq!(assign_camera(&[3, 3]), Some(3));
        assert_eq!(assign_camera(&[5, 2]), Some(2));
        assert_eq!(assign_camera(&[]), None);
    }

    #[test]
    fn projection_moves_along_normal() {
        let mut a = square(Vec3::new(0.0, 0.0, 1.0), 4, [0.5; 3]);
        let scene0 = TabletScene::from_initial(vec![a.clone()]);
        let mut scene = scene0.clone();
        a.set_center(a.anchor, Vec3::new(0.0, 0.0, 1.3));
        scene.tablets[0] = a;
        let units = project_units(&scene);
        assert_relative_eq!(units[0].center, Vec3::new(0.0, 0.0, 1.3), epsilon = 1e-12);
        let units0 = project_units(&scene0);
        assert_relative_eq!(units0[0].center, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        assert_relative_eq!(units0[0].color[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn abutting_squares_rebuild_to_two_by_one() {
        let a = square(Vec3::new(-0.5, 0.0, 1.0), 4, [0.5; 3]);
        let b = square(Vec3::new(0.5, 0.0, 1.0), 4, [0.52; 3]);
        let scene = TabletScene::from_initial(vec![a, b]);
        let (merged, out) = merge_scene(&scene, &MergeConfig::default(), &[Vec3::new(0.0, 0.0, -5.0)]);
        assert_eq!(out.forest.set_count(), 1);
        assert_eq!(merged.tablets.len(), 1);
        let t = &merged.tablets[0];
        assert_relative_eq!(t.half_u() * 2.0, 1.0, epsilon = 1e-9);
        assert_relative_eq!(t.half_v() * 2.0, 2.0, epsilon = 1e-9);
        assert_relative_eq!(t.center(), Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-9);
        assert_eq!(merged.owner, vec![0, 0]);
        assert!(t.texture.alpha.iter().all(|&a| a > 0.99));
    }

    #[test]
    fn singleton_sets_are_unchanged() {
        let a = square(Vec3::new(-0.5, 0.0, 1.0), 4, [0.1; 3]);
        let b = square(Vec3::new(0.5, 0.0, 1.0), 4, [0.9; 3]);
        let scene = TabletScene::from_initial(vec![a, b]);
        let (merged, _) = merge_scene(&scene, &MergeConfig::default(), &[Vec3::zeros()]);
        assert_eq!(merged.tablets, scene.tablets);
    }

    #[test]
    fn crop_keeps_footprint() {
        let mut t = square(Vec3::new(0.0, 0.0, 1.0), 4, [0.5; 3]);
        let i = t.texture.index(1, 2);
        t.texture.color[i] = [0.9, 0.1, 0.1];
        let c = crop_tablet(&t, 1, 2, 1, 3);
        assert_eq!((c.texture.height, c.texture.width), (2, 3));
        assert_eq!(c.texture.color[c.texture.index(0, 1)], [0.9, 0.1, 0.1]);
        assert_relative_eq!(c.texel_to_world(0.5, 1.5), t.texel_to_world(1.5, 2.5), epsilon = 1e-12);
    }
}
