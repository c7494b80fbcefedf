//! C ABI over the alphatablets library.
//!
//! Every function returns an [`AtStatus`]; on failure a message is kept per
//! thread and read with [`at_last_error`]. Objects are opaque handles that
//! the caller releases with the matching `*_free` function. Panics never
//! cross the boundary; they are reported as `AT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use alphatablets::camera::CameraView;
use alphatablets::io::export::{export_planes_with_renders, render_camera, write_run, CameraRecord, RunRecord};
use alphatablets::io::formats::quantize;
use alphatablets::io::{export_reconstruction, load_config, load_planes, load_run, load_scene, write_synth};
use alphatablets::pipeline::{edit_plane_texture, reconstruct, PipelineConfig, TextureEdit};
use alphatablets::synth::{box_room, quad_scene};
use alphatablets::tablet::Tablet;
use alphatablets::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    NotFound = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Input views of a scene.
pub struct AtScene {
    views: Vec<CameraView>,
}

/// Reconstructed planes with the cameras and configuration used to render them.
pub struct AtPlanes {
    planes: Vec<Tablet>,
    run: RunRecord,
}

/// Geometry summary of one plane.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AtPlaneInfo {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub up: [f64; 3],
    /// Half extents along up and right, meters.
    pub extents: [f64; 2],
    pub source_camera: u64,
    pub texture_width: u32,
    pub texture_height: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AtStatus {
    match e {
        Error::Io { .. } | Error::Image { .. } => AtStatus::Io,
        Error::Parse { .. } | Error::Json { .. } => AtStatus::Parse,
        Error::NotFound(_) => AtStatus::NotFound,
        Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } | Error::NonFinitePlane(_) => AtStatus::Numeric,
        _ => AtStatus::InvalidArgument,
    }
}

struct Failure(AtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(AtStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AtStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(&format!("{name} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(&format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn at_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a scene directory (manifest + intrinsics).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_scene_load(dir: *const c_char, out: *mut *mut AtScene) -> AtStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let (views, _) = load_scene(&dir)?;
        put(out, AtScene { views })
    })
}

/// Builds a synthetic scene: `preset` is "box" or "quad". When `dir` is not
/// null the scene and its ground truth are also written there.
///
/// # Safety
/// `preset` must be a NUL-terminated string, `dir` null or NUL-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn at_scene_synth(
    preset: *const c_char,
    views: u32,
    width: u32,
    height: u32,
    dir: *const c_char,
    out: *mut *mut AtScene,
) -> AtStatus {
    guard(|| {
        let preset = path_arg(preset, "preset")?;
        if views == 0 || width < 8 || height < 8 {
            return Err(invalid("need at least one view and an 8x8 image"));
        }
        let (v, w, h) = (views as usize, width as usize, height as usize);
        let scene = match preset.to_str() {
            Some("box") => box_room(v, w, h),
            Some("quad") => quad_scene(v, w, h),
            _ => return Err(invalid("preset must be \"box\" or \"quad\"")),
        };
        if !dir.is_null() {
            write_synth(&path_arg(dir, "dir")?, &scene)?;
        }
        put(out, AtScene { views: scene.views })
    })
}

/// # Safety
/// `scene` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn at_scene_view_count(scene: *const AtScene) -> usize {
    scene.as_ref().map_or(0, |s| s.views.len())
}

/// # Safety
/// `scene` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn at_scene_free(scene: *mut AtScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Runs the reconstruction. `config_path` may be null for defaults; `seed`
/// overrides the configured seed.
///
/// # Safety
/// `scene` must be live, `config_path` null or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn at_reconstruct(
    scene: *const AtScene,
    config_path: *const c_char,
    seed: u64,
    out: *mut *mut AtPlanes,
) -> AtStatus {
    guard(|| {
        let scene = handle(scene, "scene")?;
        let mut config = if config_path.is_null() {
            PipelineConfig::default()
        } else {
            load_config(&path_arg(config_path, "config_path")?)?
        };
        config.seed = seed;
        let rec = reconstruct(&scene.views, &config)?;
        let run = RunRecord {
            config,
            cameras: rec
                .views
                .iter()
                .map(|v| CameraRecord {
                    intrinsics: v.intrinsics,
                    pose: v.pose,
                })
                .collect(),
        };
        put(out, AtPlanes { planes: rec.planes, run })
    })
}

/// Reconstructs and writes a full output directory in one call.
///
/// # Safety
/// As [`at_reconstruct`]; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn at_reconstruct_to_dir(
    scene: *const AtScene,
    config_path: *const c_char,
    seed: u64,
    dir: *const c_char,
) -> AtStatus {
    guard(|| {
        let scene = handle(scene, "scene")?;
        let dir = path_arg(dir, "dir")?;
        let mut config = if config_path.is_null() {
            PipelineConfig::default()
        } else {
            load_config(&path_arg(config_path, "config_path")?)?
        };
        config.seed = seed;
        let rec = reconstruct(&scene.views, &config)?;
        export_reconstruction(&dir, &rec, &config)?;
        Ok(())
    })
}

/// Loads the planes of a reconstruction output directory.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn at_planes_load(dir: *const c_char, out: *mut *mut AtPlanes) -> AtStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let planes = load_planes(&dir)?;
        let run = load_run(&dir)?;
        put(out, AtPlanes { planes, run })
    })
}

/// Writes planes, mesh, atlas, point cloud and renders to `dir`.
///
/// # Safety
/// `planes` must be live; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn at_planes_export(planes: *const AtPlanes, dir: *const c_char) -> AtStatus {
    guard(|| {
        let p = handle(planes, "planes")?;
        let dir = path_arg(dir, "dir")?;
        export_planes_with_renders(&dir, &p.planes, &p.run)?;
        write_run(&dir, &p.run)?;
        Ok(())
    })
}

/// # Safety
/// `planes` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn at_planes_count(planes: *const AtPlanes) -> usize {
    planes.as_ref().map_or(0, |p| p.planes.len())
}

/// # Safety
/// `planes` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn at_planes_camera_count(planes: *const AtPlanes) -> usize {
    planes.as_ref().map_or(0, |p| p.run.cameras.len())
}

/// # Safety
/// `planes` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn at_plane_info(planes: *const AtPlanes, id: usize, out: *mut AtPlaneInfo) -> AtStatus {
    guard(|| {
        let p = handle(planes, "planes")?;
        let t = p.planes.get(id).ok_or(Error::NotFound(id))?;
        let out = handle_mut(out, "out")?;
        let a = |v: alphatablets::Vec3| [v.x, v.y, v.z];
        *out = AtPlaneInfo {
            center: a(t.center()),
            normal: a(t.normal),
            up: a(t.up),
            extents: [t.half_u(), t.half_v()],
            source_camera: t.source_camera as u64,
            texture_width: t.texture.width as u32,
            texture_height: t.texture.height as u32,
        };
        Ok(())
    })
}

/// Renders camera `view` as 8-bit RGB, row-major, top row first. Width and
/// height are always written; with a null `rgb` or a short buffer only the
/// size is reported (`AT_STATUS_BUFFER_TOO_SMALL` for the short buffer).
///
/// # Safety
/// `planes` must be live; `width` and `height` writable; `rgb` null or
/// valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn at_render(
    planes: *const AtPlanes,
    view: usize,
    rgb: *mut u8,
    capacity: usize,
    width: *mut u32,
    height: *mut u32,
) -> AtStatus {
    guard(|| {
        let p = handle(planes, "planes")?;
        let cam = p
            .run
            .cameras
            .get(view)
            .ok_or_else(|| invalid(&format!("view {view} out of range (0..{})", p.run.cameras.len())))?;
        let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
        *handle_mut(width, "width")? = w as u32;
        *handle_mut(height, "height")? = h as u32;
        if rgb.is_null() {
            return Ok(());
        }
        if capacity < w * h * 3 {
            return Err(Failure(AtStatus::BufferTooSmall, format!("need {} bytes, got {capacity}", w * h * 3)));
        }
        let img = render_camera(&p.planes, &p.run, view)?;
        let buf = std::slice::from_raw_parts_mut(rgb, w * h * 3);
        for (dst, c) in buf.chunks_exact_mut(3).zip(&img.data) {
            for k in 0..3 {
                dst[k] = quantize(c[k]);
            }
        }
        Ok(())
    })
}

unsafe fn edit(planes: *mut AtPlanes, id: usize, e: TextureEdit) -> AtStatus {
    guard(|| {
        let p = handle_mut(planes, "planes")?;
        edit_plane_texture(&mut p.planes, id, &e)?;
        Ok(())
    })
}

/// Sets every texel color of plane `id`; alpha and geometry are unchanged.
///
/// # Safety
/// `planes` must be live.
#[no_mangle]
pub unsafe extern "C" fn at_edit_solid(planes: *mut AtPlanes, id: usize, r: f64, g: f64, b: f64) -> AtStatus {
    if ![r, g, b].iter().all(|c| (0.0..=1.0).contains(c)) {
        set_error("color channels must lie in [0, 1]");
        return AtStatus::InvalidArgument;
    }
    edit(planes, id, TextureEdit::Solid([r, g, b]))
}

/// Multiplies plane `id`'s texel colors per channel, clamping to [0, 1].
///
/// # Safety
/// `planes` must be live.
#[no_mangle]
pub unsafe extern "C" fn at_edit_tint(planes: *mut AtPlanes, id: usize, r: f64, g: f64, b: f64) -> AtStatus {
    if ![r, g, b].iter().all(|c| c.is_finite() && *c >= 0.0) {
        set_error("tint channels must be finite and non-negative");
        return AtStatus::InvalidArgument;
    }
    edit(planes, id, TextureEdit::Scale([r, g, b]))
}

/// # Safety
/// `planes` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn at_planes_free(planes: *mut AtPlanes) {
    if !planes.is_null() {
        drop(Box::from_raw(planes));
    }
}
