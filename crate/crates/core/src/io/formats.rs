//! Low-level file formats: PFM, PNG color / depth / normals, and labeled PLY
//! point clouds.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb as PxRgb, Rgba};

use crate::error::{Error, Result};
use crate::grid::{Grid, RgbImage, ScalarImage};
use crate::metrics::LabeledPointCloud;
use crate::Vec3;

/// Float image with 1 or 3 channels, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn header_token<R: BufRead>(r: &mut R, path: &Path) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte).map_err(|e| Error::io(path, e))? == 0 {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
    }
    String::from_utf8(tok).map_err(|_| Error::parse(path, "non-ASCII PFM header"))
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let channels = match header_token(&mut r, path)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::parse(path, format!("bad PFM magic {other:?}"))),
    };
    let num = |s: String| s.parse::<usize>().map_err(|_| Error::parse(path, format!("bad PFM size {s:?}")));
    let width = num(header_token(&mut r, path)?)?;
    let height = num(header_token(&mut r, path)?)?;
    let scale: f64 = header_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::parse(path, "bad PFM scale"))?;
    if scale == 0.0 {
        return Err(Error::parse(path, "PFM scale must be nonzero"));
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::parse(path, format!("PFM payload shorter than {n} floats")))?;
    let mut data = vec![0f32; n];
    let row = width * channels;
    // Rows are stored bottom to top.
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (y, x) = (i / row, i % row);
        data[(height - 1 - y) * row + x] = v;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_pfm(path: &Path, pfm: &Pfm) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let magic = if pfm.channels == 3 { "PF" } else { "Pf" };
    let row = pfm.width * pfm.channels;
    let mut out = format!("{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height).into_bytes();
    out.reserve(pfm.data.len() * 4);
    for y in (0..pfm.height).rev() {
        for v in &pfm.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&out).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

fn save_image(img: DynamicImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

/// Color image in `[0, 1]`; 16-bit inputs keep their precision.
pub fn read_color(path: &Path) -> Result<RgbImage> {
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLuma16(_) => img
            .to_rgb16()
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 65535.0))
            .collect(),
        _ => img.to_rgb8().pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect(),
    };
    Ok(Grid::from_vec(w, h, data))
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit sRGB PNG, values clamped to `[0, 1]` and rounded.
pub fn write_color(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        PxRgb(img.get(x as usize, y as usize).map(quantize))
    });
    save_image(DynamicImage::ImageRgb8(buf), path)
}

pub fn write_rgba(path: &Path, width: usize, height: usize, data: &[[f64; 4]]) -> Result<()> {
    let buf = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        Rgba(data[y as usize * width + x as usize].map(quantize))
    });
    save_image(DynamicImage::ImageRgba8(buf), path)
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Depth in meters from PFM, or from a 16-bit PNG in millimeters. Zero means
/// missing in both.
pub fn read_depth(path: &Path) -> Result<ScalarImage> {
    if has_extension(path, "pfm") {
        let pfm = read_pfm(path)?;
        if pfm.channels != 1 {
            return Err(Error::parse(path, "depth PFM must have one channel"));
        }
        return Ok(Grid::from_vec(pfm.width, pfm.height, pfm.data.iter().map(|&v| v as f64).collect()));
    }
    match open_image(path)? {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Ok(Grid::from_vec(w, h, buf.pixels().map(|p| p.0[0] as f64 / 1000.0).collect()))
        }
        _ => Err(Error::parse(path, "depth PNG must be 16-bit single channel (millimeters)")),
    }
}

pub fn write_depth_pfm(path: &Path, depth: &ScalarImage) -> Result<()> {
    write_pfm(
        path,
        &Pfm {
            width: depth.width,
            height: depth.height,
            channels: 1,
            data: depth.data.iter().map(|&v| v as f32).collect(),
        },
    )
}

/// 16-bit PNG in millimeters; out-of-range and missing depths become 0.
pub fn write_depth_png(path: &Path, depth: &ScalarImage) -> Result<()> {
    let buf = ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |x, y| {
        let d = *depth.get(x as usize, y as usize) * 1000.0;
        Luma([if d.is_finite() && d > 0.0 && d < 65535.5 { d.round() as u16 } else { 0 }])
    });
    save_image(DynamicImage::ImageLuma16(buf), path)
}

/// Camera-frame normals from a 3-channel PFM, or an 8-bit PNG mapping
/// `[0, 255]` to `[-1, 1]`. PNG vectors whose length is far from 1 are
/// treated as missing (zero).
pub fn read_normals(path: &Path) -> Result<Grid<Vec3>> {
    if has_extension(path, "pfm") {
        let pfm = read_pfm(path)?;
        if pfm.channels != 3 {
            return Err(Error::parse(path, "normal PFM must have three channels"));
        }
        let data = pfm
            .data
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
            .collect();
        return Ok(Grid::from_vec(pfm.width, pfm.height, data));
    }
    let img = open_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| {
            let n = Vec3::from(p.0.map(|c| c as f64 / 255.0 * 2.0 - 1.0));
            if (0.5..=1.5).contains(&n.norm()) {
                n
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    Ok(Grid::from_vec(w, h, data))
}

pub fn write_normals_pfm(path: &Path, normals: &Grid<Vec3>) -> Result<()> {
    write_pfm(
        path,
        &Pfm {
            width: normals.width,
            height: normals.height,
            channels: 3,
            data: normals.data.iter().flat_map(|n| [n.x as f32, n.y as f32, n.z as f32]).collect(),
        },
    )
}

/// Binary little-endian PLY with double `x y z` and uint `label` per vertex.
pub fn write_points_ply(path: &Path, cloud: &LabeledPointCloud) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uint label\nend_header\n",
        cloud.len()
    );
    let mut out = header.into_bytes();
    out.reserve(cloud.len() * 28);
    for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    w.write_all(&out).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Reads the PLY layout written by [`write_points_ply`], in binary or ASCII.
pub fn read_points_ply(path: &Path) -> Result<LabeledPointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::parse(path, "PLY header has no end_header"))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::parse(path, "non-UTF-8 PLY header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::parse(path, "missing ply magic"));
    }
    let mut binary = None;
    let mut count = None;
    let mut props = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", "ascii", _] => binary = Some(false),
            ["element", "vertex", n] => count = n.parse::<usize>().ok(),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let expected = [("double", "x"), ("double", "y"), ("double", "z"), ("uint", "label")];
    let layout_ok = props.len() == 4 && props.iter().zip(expected).all(|(p, e)| p.0 == e.0 && p.1 == e.1);
    let (Some(binary), Some(count), true) = (binary, count, layout_ok) else {
        return Err(Error::parse(path, "expected vertex element with double x y z and uint label"));
    };
    let mut cloud = LabeledPointCloud::default();
    let body = &bytes[end..];
    if binary {
        if body.len() < count * 28 {
            return Err(Error::parse(path, "PLY payload truncated"));
        }
        for rec in body.chunks_exact(28).take(count) {
            let f = |i: usize| f64::from_le_bytes(rec[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
            cloud.points.push(Vec3::new(f(0), f(1), f(2)));
            cloud.labels.push(u32::from_le_bytes(rec[24..28].try_into().expect("4 bytes")) as usize);
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| Error::parse(path, "non-UTF-8 PLY body"))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()).take(count) {
            let t: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse(path, format!("bad PLY vertex line {line:?}"));
            if t.len() != 4 {
                return Err(bad());
            }
            let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
            cloud.points.push(Vec3::new(f(t[0])?, f(t[1])?, f(t[2])?));
            cloud.labels.push(t[3].parse().map_err(|_| bad())?);
        }
    }
    if cloud.len() != count {
        return Err(Error::parse(path, format!("expected {count} vertices, found {}", cloud.len())));
    }
    Ok(cloud)
}
