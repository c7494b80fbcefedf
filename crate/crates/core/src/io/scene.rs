//! Input scene directories and synthetic ground truth.
//!
//! A scene directory holds `intrinsics.txt` (`fx fy cx cy width height`) and
//! `manifest.txt`, one frame per line: image path, 16 row-major floats of the
//! camera-to-world matrix, then optional depth and normal paths (`-` when
//! absent). Paths are relative to the directory; `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::formats::{
    read_color, read_depth, read_normals, read_points_ply, write_color, write_depth_pfm, write_normals_pfm,
    write_points_ply,
};
use crate::camera::{CameraView, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::metrics::LabeledPointCloud;
use crate::synth::{GtPlane, SynthScene};

pub const MANIFEST: &str = "manifest.txt";
pub const INTRINSICS: &str = "intrinsics.txt";
pub const GT_JSON: &str = "gt.json";
pub const GT_POINTS: &str = "gt_points.ply";

/// Tolerance on `R^T R - I` for manifest poses.
pub const POSE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub image: PathBuf,
    pub pose: Pose,
    pub depth: Option<PathBuf>,
    pub normal: Option<PathBuf>,
}

/// Parsed manifest; all lengths are in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneManifest {
    pub intrinsics: Intrinsics,
    pub frames: Vec<FrameRecord>,
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_intrinsics(path: &Path, text: &str) -> Result<Intrinsics> {
    let tokens: Vec<&str> = content_lines(text).flat_map(|(_, l)| l.split_whitespace()).collect();
    if tokens.len() != 6 {
        return Err(Error::parse(path, format!("expected `fx fy cx cy width height`, got {} values", tokens.len())));
    }
    let f = |i: usize| {
        tokens[i]
            .parse::<f64>()
            .map_err(|_| Error::parse(path, format!("bad number {:?}", tokens[i])))
    };
    let n = |i: usize| {
        tokens[i]
            .parse::<usize>()
            .map_err(|_| Error::parse(path, format!("bad image size {:?}", tokens[i])))
    };
    let k = Intrinsics {
        fx: f(0)?,
        fy: f(1)?,
        cx: f(2)?,
        cy: f(3)?,
        width: n(4)?,
        height: n(5)?,
    };
    if !k.is_valid() {
        return Err(Error::parse(path, "focal lengths and image size must be positive"));
    }
    Ok(k)
}

fn parse_pose(path: &Path, line: usize, values: &[f64]) -> Result<Pose> {
    let m = Matrix4::from_row_slice(values);
    let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
    if (0..3).any(|i| bottom[i].abs() > POSE_TOLERANCE) || (bottom[3] - 1.0).abs() > POSE_TOLERANCE {
        return Err(Error::parse(path, format!("line {line}: pose bottom row must be 0 0 0 1")));
    }
    let pose = Pose::from_matrix(&m);
    let (dev, det) = pose.orthonormality();
    if dev > POSE_TOLERANCE {
        return Err(Error::parse(path, format!("line {line}: rotation is not orthonormal (deviation {dev:.3e})")));
    }
    if det < 0.0 {
        return Err(Error::parse(path, format!("line {line}: rotation has determinant {det:.3}, expected +1")));
    }
    Ok(pose)
}

pub fn parse_manifest(path: &Path, text: &str) -> Result<Vec<FrameRecord>> {
    let mut frames = Vec::new();
    for (line, content) in content_lines(text) {
        let t: Vec<&str> = content.split_whitespace().collect();
        if !(17..=19).contains(&t.len()) {
            return Err(Error::parse(
                path,
                format!("line {line}: expected image, 16 pose values, [depth], [normal]; got {} fields", t.len()),
            ));
        }
        let values = t[1..17]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::parse(path, format!("line {line}: malformed pose")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, format!("line {line}: non-finite pose value")));
        }
        let optional = |i: usize| t.get(i).filter(|s| **s != "-").map(PathBuf::from);
        frames.push(FrameRecord {
            image: PathBuf::from(t[0]),
            pose: parse_pose(path, line, &values)?,
            depth: optional(17),
            normal: optional(18),
        });
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no frames", path.display())));
    }
    Ok(frames)
}

fn check_size(path: &Path, what: &str, w: usize, h: usize, k: &Intrinsics) -> Result<()> {
    if (w, h) != (k.width, k.height) {
        return Err(Error::ShapeMismatch(format!(
            "{}: {what} is {w}x{h}, intrinsics say {}x{}",
            path.display(),
            k.width,
            k.height
        )));
    }
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<SceneManifest> {
    let kpath = dir.join(INTRINSICS);
    let mpath = dir.join(MANIFEST);
    Ok(SceneManifest {
        intrinsics: parse_intrinsics(&kpath, &read_text(&kpath)?)?,
        frames: parse_manifest(&mpath, &read_text(&mpath)?)?,
    })
}

/// Loads and validates every frame of a scene directory.
pub fn load_scene(dir: &Path) -> Result<(Vec<CameraView>, SceneManifest)> {
    let manifest = load_manifest(dir)?;
    let k = manifest.intrinsics;
    let mut views = Vec::with_capacity(manifest.frames.len());
    for f in &manifest.frames {
        let ipath = dir.join(&f.image);
        let image = read_color(&ipath)?;
        check_size(&ipath, "image", image.width, image.height, &k)?;
        let mut view = CameraView::new(k, f.pose, image);
        if let Some(d) = &f.depth {
            let p = dir.join(d);
            let depth = read_depth(&p)?;
            check_size(&p, "depth", depth.width, depth.height, &k)?;
            view.depth = Some(depth);
        }
        if let Some(n) = &f.normal {
            let p = dir.join(n);
            let normals = read_normals(&p)?;
            check_size(&p, "normal map", normals.width, normals.height, &k)?;
            view.normals = Some(normals);
        }
        views.push(view);
    }
    Ok((views, manifest))
}

pub fn format_intrinsics(k: &Intrinsics) -> String {
    format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
}

/// Writes views as a scene directory: PNG images, PFM depth and normals.
/// All views must share intrinsics.
pub fn write_scene(dir: &Path, views: &[CameraView]) -> Result<()> {
    let Some(first) = views.first() else {
        return Err(Error::EmptyInput("no views to write".into()));
    };
    if views.iter().any(|v| v.intrinsics != first.intrinsics) {
        return Err(Error::ShapeMismatch("views have different intrinsics".into()));
    }
    for sub in ["images", "depth", "normals"] {
        create_dir(&dir.join(sub))?;
    }
    write_text(&dir.join(INTRINSICS), &format_intrinsics(&first.intrinsics))?;
    let mut manifest = String::from("# image, camera-to-world (row-major 4x4), depth, normal\n");
    for (i, v) in views.iter().enumerate() {
        let image = format!("images/frame_{i:04}.png");
        write_color(&dir.join(&image), &v.image)?;
        manifest.push_str(&image);
        let m = v.pose.to_matrix();
        for r in 0..4 {
            for c in 0..4 {
                manifest.push_str(&format!(" {}", m[(r, c)]));
            }
        }
        match &v.depth {
            Some(d) => {
                let p = format!("depth/frame_{i:04}.pfm");
                write_depth_pfm(&dir.join(&p), d)?;
                manifest.push_str(&format!(" {p}"));
            }
            None => manifest.push_str(" -"),
        }
        if let Some(n) = &v.normals {
            let p = format!("normals/frame_{i:04}.pfm");
            write_normals_pfm(&dir.join(&p), n)?;
            manifest.push_str(&format!(" {p}"));
        }
        manifest.push('\n');
    }
    write_text(&dir.join(MANIFEST), &manifest)
}

/// Ground truth stored next to a synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Largest scene dimension; the evaluation threshold is `0.05 * scale`.
    pub scale: f64,
    pub planes: Vec<GtPlane>,
    #[serde(skip)]
    pub points: LabeledPointCloud,
}

/// Voxel size used to thin synthetic ground-truth points.
pub const GT_VOXEL: f64 = 0.02;

pub fn write_synth(dir: &Path, scene: &SynthScene) -> Result<()> {
    create_dir(dir)?;
    write_scene(dir, &scene.views)?;
    let gt = GroundTruth {
        scale: scene.scale,
        planes: scene.planes.clone(),
        points: scene.gt_points(GT_VOXEL),
    };
    write_ground_truth(dir, &gt)
}

pub fn write_ground_truth(dir: &Path, gt: &GroundTruth) -> Result<()> {
    let path = dir.join(GT_JSON);
    let json = serde_json::to_string_pretty(gt).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    write_text(&path, &json)?;
    write_points_ply(&dir.join(GT_POINTS), &gt.points)
}

pub fn load_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let path = dir.join(GT_JSON);
    let mut gt: GroundTruth = serde_json::from_str(&read_text(&path)?).map_err(|e| Error::Json { path, source: e })?;
    gt.points = read_points_ply(&dir.join(GT_POINTS))?;
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: &str = "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1";

    #[test]
    fn manifest_parsing() {
        let p = Path::new("m.txt");
        let text = format!("# comment\na.png {IDENTITY} d.pfm\n\nb.png {IDENTITY} - n.png\nc.png {IDENTITY}\n");
        let frames = parse_manifest(p, &text).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].depth, Some(PathBuf::from("d.pfm")));
        assert_eq!(frames[1].depth, None);
        assert_eq!(frames[1].normal, Some(PathBuf::from("n.png")));
        assert_eq!(frames[2].normal, None);
    }

    #[test]
    fn manifest_rejects_bad_poses() {
        let p = Path::new("m.txt");
        let mirror = "a.png -1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1";
        assert!(matches!(parse_manifest(p, mirror), Err(Error::Parse { .. })));
        let skew = "a.png 1 0.1 0 0 0 1 0 0 0 0 1 0 0 0 0 1";
        assert!(matches!(parse_manifest(p, skew), Err(Error::Parse { .. })));
        assert!(parse_manifest(p, "a.png 1 0 0").is_err());
        assert!(parse_manifest(p, "a.png 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 x").is_err());
        assert!(matches!(parse_manifest(p, "# nothing\n"), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn intrinsics_parsing() {
        let p = Path::new("k.txt");
        let k = parse_intrinsics(p, "250 250.5 159.5 119.5 320 240\n").unwrap();
        assert_eq!((k.fy, k.width), (250.5, 320));
        assert!(parse_intrinsics(p, "250 250 1 1 320").is_err());
        assert!(parse_intrinsics(p, "0 250 1 1 320 240").is_err());
    }
}
