//! Reconstruction output directories.
//!
//! `planes.json` and `textures.bin` hold the exact plane parameters; the
//! OBJ mesh, atlas and PLY cloud are derived views for other tools.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::formats::{write_color, write_points_ply, write_rgba};
use super::scene::{create_dir, read_text, write_text};
use crate::atlas::TextureAtlas;
use crate::camera::{CameraView, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::grid::{Grid, RgbImage};
use crate::losses::LossCsv;
use crate::merge::write_merge_csv;
use crate::metrics::sample_tablets;
use crate::pipeline::{PipelineConfig, Reconstruction};
use crate::render::render_view;
use crate::tablet::{Tablet, Texture, TABLET_UV};
use crate::Vec3;

pub const PLANES_JSON: &str = "planes.json";
pub const TEXTURES_BIN: &str = "textures.bin";
pub const MESH_OBJ: &str = "mesh.obj";
pub const MESH_MTL: &str = "mesh.mtl";
pub const ATLAS_PNG: &str = "atlas.png";
pub const POINTS_PLY: &str = "points.ply";
pub const RUN_JSON: &str = "reconstruction.json";
pub const CONFIG_TOML: &str = "config.toml";
pub const LOSSES_CSV: &str = "losses.csv";
pub const MERGES_CSV: &str = "merges.csv";
pub const RENDERS_DIR: &str = "renders";

/// Sidecar entry of one plane. `center`, `right` and `extents` are derived
/// and only informational on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub id: usize,
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub up: [f64; 3],
    pub right: [f64; 3],
    /// Half extents along up and right, meters.
    pub extents: [f64; 2],
    pub source_camera: usize,
    pub anchor: [f64; 3],
    pub ray_dir: [f64; 3],
    pub distance: f64,
    pub lambda_u: f64,
    pub lambda_v: f64,
    pub texture_width: usize,
    pub texture_height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PlanesFile {
    planes: Vec<PlaneRecord>,
}

fn arr(v: Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Json {
        path: path.into(),
        source: e,
    }
}

impl PlaneRecord {
    pub fn of(id: usize, t: &Tablet) -> Self {
        PlaneRecord {
            id,
            center: arr(t.center()),
            normal: arr(t.normal),
            up: arr(t.up),
            right: arr(t.right()),
            extents: [t.half_u(), t.half_v()],
            source_camera: t.source_camera,
            anchor: arr(t.anchor),
            ray_dir: arr(t.ray_dir),
            distance: t.distance,
            lambda_u: t.lambda_u,
            lambda_v: t.lambda_v,
            texture_width: t.texture.width,
            texture_height: t.texture.height,
        }
    }
}

fn finite(t: &Tablet) -> bool {
    let vecs = [t.anchor, t.ray_dir, t.normal, t.up];
    vecs.iter().all(|v| v.iter().all(|x| x.is_finite()))
        && [t.distance, t.lambda_u, t.lambda_v].iter().all(|x| x.is_finite())
        && t.texture.color.iter().flatten().chain(&t.texture.alpha).all(|x| x.is_finite())
}

/// Writes the plane set: sidecar JSON, exact textures, OBJ + MTL + atlas and
/// the labeled point cloud.
pub fn export_planes(dir: &Path, planes: &[Tablet]) -> Result<()> {
    if let Some(i) = planes.iter().position(|t| !finite(t)) {
        return Err(Error::NonFinitePlane(i));
    }
    create_dir(dir)?;
    let records = PlanesFile {
        planes: planes.iter().enumerate().map(|(i, t)| PlaneRecord::of(i, t)).collect(),
    };
    let path = dir.join(PLANES_JSON);
    write_text(&path, &serde_json::to_string_pretty(&records).map_err(|e| json_error(&path, e))?)?;

    // Per texel, row-major per plane: r g b alpha as little-endian f64.
    let mut bin = Vec::with_capacity(planes.iter().map(|t| t.texture.len() * 32).sum());
    for t in planes {
        for (c, a) in t.texture.color.iter().zip(&t.texture.alpha) {
            for v in [c[0], c[1], c[2], *a] {
                bin.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let path = dir.join(TEXTURES_BIN);
    fs::write(&path, bin).map_err(|e| Error::io(&path, e))?;

    let atlas = TextureAtlas::pack(planes);
    write_rgba(&dir.join(ATLAS_PNG), atlas.width, atlas.height, &atlas.data)?;
    write_text(&dir.join(MESH_OBJ), &obj_text(planes, &atlas))?;
    write_text(&dir.join(MESH_MTL), &mtl_text(planes.len()))?;
    write_points_ply(&dir.join(POINTS_PLY), &sample_tablets(planes))
}

/// One object and material per plane. Faces wind counter-clockwise seen from
/// the normal side; `vt` has its origin at the bottom-left of the atlas.
pub fn obj_text(planes: &[Tablet], atlas: &TextureAtlas) -> String {
    let mut s = format!("# {} planes, 4 vertices and 2 triangles each\nmtllib {MESH_MTL}\n", planes.len());
    for (k, t) in planes.iter().enumerate() {
        let tile = &atlas.tiles[k];
        s.push_str(&format!("o plane_{k}\n"));
        for c in t.corners() {
            s.push_str(&format!("v {} {} {}\n", c.x, c.y, c.z));
        }
        for uv in TABLET_UV {
            let page = atlas.page_uv(k, uv[1] * tile.height as f64, uv[0] * tile.width as f64);
            s.push_str(&format!("vt {} {}\n", page[0], 1.0 - page[1]));
        }
        s.push_str(&format!("vn {} {} {}\n", t.normal.x, t.normal.y, t.normal.z));
        s.push_str(&format!("usemtl plane_{k}\n"));
        let (b, n) = (4 * k + 1, k + 1);
        let v = |i: usize| format!("{0}/{0}/{1}", b + i, n);
        s.push_str(&format!("f {} {} {}\n", v(0), v(2), v(1)));
        s.push_str(&format!("f {} {} {}\n", v(0), v(3), v(2)));
    }
    s
}

pub fn mtl_text(count: usize) -> String {
    let mut s = String::new();
    for k in 0..count {
        s.push_str(&format!(
            "newmtl plane_{k}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nd 1\nillum 1\nmap_Kd {ATLAS_PNG}\nmap_d -imfchan m {ATLAS_PNG}\n\n"
        ));
    }
    s
}

/// Restores planes exactly from `planes.json` and `textures.bin`.
pub fn load_planes(dir: &Path) -> Result<Vec<Tablet>> {
    let path = dir.join(PLANES_JSON);
    let file: PlanesFile = serde_json::from_str(&read_text(&path)?).map_err(|e| json_error(&path, e))?;
    let bpath = dir.join(TEXTURES_BIN);
    let bin = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let needed: usize = file.planes.iter().map(|p| p.texture_width * p.texture_height * 32).sum();
    if bin.len() != needed {
        return Err(Error::parse(&bpath, format!("expected {needed} bytes, found {}", bin.len())));
    }
    let mut values = bin.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut planes = Vec::with_capacity(file.planes.len());
    for (i, p) in file.planes.iter().enumerate() {
        if p.id != i {
            return Err(Error::parse(&path, format!("plane ids must be 0..n in order, found {} at {i}", p.id)));
        }
        let n = p.texture_width * p.texture_height;
        let mut texture = Texture::solid(p.texture_width, p.texture_height, [0.0; 3], 0.0);
        for j in 0..n {
            let mut next = || values.next().expect("length checked");
            texture.color[j] = [next(), next(), next()];
            texture.alpha[j] = next();
        }
        planes.push(Tablet {
            anchor: Vec3::from(p.anchor),
            ray_dir: Vec3::from(p.ray_dir),
            distance: p.distance,
            normal: Vec3::from(p.normal),
            up: Vec3::from(p.up),
            lambda_u: p.lambda_u,
            lambda_v: p.lambda_v,
            texture,
            source_camera: p.source_camera,
        });
    }
    Ok(planes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// What is needed to re-render a reconstruction: its configuration and the
/// working-resolution cameras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: PipelineConfig,
    pub cameras: Vec<CameraRecord>,
}

impl RunRecord {
    pub fn camera(&self, index: usize) -> Result<CameraView> {
        let c = self
            .cameras
            .get(index)
            .ok_or_else(|| Error::Config(format!("view {index} out of range (0..{})", self.cameras.len())))?;
        let k = c.intrinsics;
        Ok(CameraView::new(k, c.pose, Grid::filled(k.width, k.height, [0.0; 3])))
    }
}

pub fn write_run(dir: &Path, run: &RunRecord) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(RUN_JSON);
    write_text(&path, &serde_json::to_string_pretty(run).map_err(|e| json_error(&path, e))?)
}

pub fn load_run(dir: &Path) -> Result<RunRecord> {
    let path = dir.join(RUN_JSON);
    serde_json::from_str(&read_text(&path)?).map_err(|e| json_error(&path, e))
}

pub fn render_file_name(view: usize) -> String {
    format!("view_{view:04}.png")
}

/// Renders `planes` from camera `view` of a run.
pub fn render_camera(planes: &[Tablet], run: &RunRecord, view: usize) -> Result<RgbImage> {
    Ok(render_view(planes, &run.camera(view)?, &run.config.render).color)
}

/// Re-exports planes and their renders, keeping the run record.
pub fn export_planes_with_renders(dir: &Path, planes: &[Tablet], run: &RunRecord) -> Result<()> {
    export_planes(dir, planes)?;
    let renders = dir.join(RENDERS_DIR);
    create_dir(&renders)?;
    for k in 0..run.cameras.len() {
        write_color(&renders.join(render_file_name(k)), &render_camera(planes, run, k)?)?;
    }
    Ok(())
}

/// Writes a full reconstruction directory.
pub fn export_reconstruction(dir: &Path, rec: &Reconstruction, config: &PipelineConfig) -> Result<RunRecord> {
    create_dir(dir)?;
    let run = RunRecord {
        config: config.clone(),
        cameras: rec
            .views
            .iter()
            .map(|v| CameraRecord {
                intrinsics: v.intrinsics,
                pose: v.pose,
            })
            .collect(),
    };
    write_run(dir, &run)?;
    let path = dir.join(CONFIG_TOML);
    let toml = toml::to_string(config).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))?;
    write_text(&path, &toml)?;

    let path = dir.join(LOSSES_CSV);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut csv = LossCsv::new(BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
    for (step, l) in &rec.losses {
        csv.record(*step, l, &config.losses).map_err(|e| Error::io(&path, e))?;
    }
    csv.into_inner().flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join(MERGES_CSV);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    write_merge_csv(&mut w, &rec.events)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;

    export_planes_with_renders(dir, &rec.planes, &run)?;
    Ok(run)
}

/// Reads a pipeline configuration from TOML; missing keys take defaults.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e.to_string()))
}
