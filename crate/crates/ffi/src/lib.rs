//! C ABI over the matlift engine.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns an [`MlStatus`]; on failure
//! [`ml_last_error`] describes the most recent error on the calling thread.
//! Panics never cross the boundary: they are reported as
//! [`MlStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use matlift::lift::{select, LiftConfig, Scene, SelectionParams, SelectionSession};
use matlift::oracle::{Click, NoiseModel, Polarity, SyntheticOracle};
use matlift::scene::orbit_camera;
use matlift::service::session::{build_scene, load_asset, CountingOracle};
use matlift::service::EngineConfig;
use matlift::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BackgroundClick = 3,
    UnknownView = 4,
    Unselectable = 5,
    Io = 6,
    Parse = 7,
    BufferTooSmall = 8,
    Internal = 99,
}

/// Lifting views, geometry and a synthetic similarity oracle.
pub struct MlScene {
    scene: Arc<Scene>,
    oracle: CountingOracle<SyntheticOracle>,
    fov_deg: f64,
}

/// A selection: the lifted similarity cloud and its index.
pub struct MlSession {
    session: SelectionSession,
    fov_deg: f64,
}

/// Selection counters.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MlStats {
    pub oracle_calls: u64,
    pub index_builds: u64,
    pub points: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MlStatus {
    match e {
        Error::BackgroundClick { .. } => MlStatus::BackgroundClick,
        Error::UnknownView(_) => MlStatus::UnknownView,
        Error::Unselectable { .. } => MlStatus::Unselectable,
        Error::Io { .. } => MlStatus::Io,
        Error::Parse { .. } | Error::Format(_) => MlStatus::Parse,
        _ => MlStatus::InvalidArgument,
    }
}

/// Runs `f`, recording its error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (MlStatus, String)>) -> MlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MlStatus::Internal
        }
    }
}

fn fail(e: Error) -> (MlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MlStatus, String) {
    (MlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ml_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a scene from `asset` (`"demo"` or an OBJ path) with `views`
/// Fibonacci lifting views of `resolution`² pixels. The synthetic oracle adds
/// per-pixel noise of std-dev `pixel_sigma` seeded by `noise_seed`; 0 gives
/// exact maps.
///
/// # Safety
/// `asset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ml_scene_new(
    asset: *const c_char,
    views: u32,
    resolution: u32,
    pixel_sigma: f64,
    noise_seed: u64,
    out: *mut *mut MlScene,
) -> MlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let asset = str_arg(asset, "asset")?;
        let mut cfg = EngineConfig::default();
        cfg.render.views = views as usize;
        cfg.render.resolution = resolution;
        cfg.noise = NoiseModel {
            pixel_sigma,
            seed: noise_seed,
            ..NoiseModel::default()
        };
        cfg.validate().map_err(fail)?;
        let mesh = load_asset(asset).map_err(fail)?;
        let scene = build_scene(mesh, asset, &cfg).map_err(fail)?;
        let oracle = CountingOracle::new(SyntheticOracle::new(cfg.noise));
        *out = Box::into_raw(Box::new(MlScene {
            scene,
            oracle,
            fov_deg: cfg.render.fov_deg,
        }));
        Ok(())
    })
}

/// Releases a scene; null is ignored. Sessions created from it stay valid.
///
/// # Safety
/// `scene` must come from [`ml_scene_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ml_scene_free(scene: *mut MlScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Number of lifting views; 0 for null.
///
/// # Safety
/// `scene` must be null or a live scene handle.
#[no_mangle]
pub unsafe extern "C" fn ml_scene_view_count(scene: *const MlScene) -> u32 {
    scene.as_ref().map_or(0, |s| s.scene.manifest.len() as u32)
}

/// Oracle queries made through this scene so far; 0 for null.
///
/// # Safety
/// `scene` must be null or a live scene handle.
#[no_mangle]
pub unsafe extern "C" fn ml_scene_oracle_calls(scene: *const MlScene) -> u64 {
    scene.as_ref().map_or(0, |s| s.oracle.calls() as u64)
}

/// Selects from a positive click at pixel (`x`, `y`) of lifting view `view`.
///
/// # Safety
/// `scene` must be a live scene handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ml_select(
    scene: *const MlScene,
    view: u32,
    x: u32,
    y: u32,
    out: *mut *mut MlSession,
) -> MlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        let v = s
            .scene
            .manifest
            .views
            .get(view as usize)
            .ok_or_else(|| fail(Error::UnknownView(format!("#{view}"))))?;
        let click = Click {
            view_id: v.id.clone(),
            x,
            y,
            polarity: Polarity::Positive,
        };
        let session = select(
            &s.scene,
            &s.oracle,
            click,
            None,
            SelectionParams::default(),
            LiftConfig::default(),
        )
        .map_err(fail)?;
        *out = Box::into_raw(Box::new(MlSession {
            session,
            fov_deg: s.fov_deg,
        }));
        Ok(())
    })
}

/// Releases a session; null is ignored.
///
/// # Safety
/// `session` must come from [`ml_select`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ml_session_free(session: *mut MlSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Changes the selection threshold in (0, 1); no oracle call or index rebuild.
///
/// # Safety
/// `session` must be a live session handle.
#[no_mangle]
pub unsafe extern "C" fn ml_session_set_threshold(session: *mut MlSession, threshold: f32) -> MlStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let params = SelectionParams {
            threshold,
            ..*s.session.params()
        };
        s.session.set_params(params).map_err(fail)
    })
}

/// Changes the number of voting neighbors (odd, at least 1).
///
/// # Safety
/// `session` must be a live session handle.
#[no_mangle]
pub unsafe extern "C" fn ml_session_set_k(session: *mut MlSession, k: u32) -> MlStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let params = SelectionParams {
            k: k as usize,
            ..*s.session.params()
        };
        s.session.set_params(params).map_err(fail)
    })
}

/// Counters of the session.
///
/// # Safety
/// `session` must be a live session handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ml_session_stats(session: *const MlSession, out: *mut MlStats) -> MlStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let stats = s.session.stats();
        *out = MlStats {
            oracle_calls: stats.oracle_calls as u64,
            index_builds: stats.index_builds as u64,
            points: s.session.cloud().len() as u64,
        };
        Ok(())
    })
}

/// Renders the selection from an orbit camera about the asset (degrees) at
/// `width` × `height`. Writes one byte per pixel to `mask` (1 selected, 0
/// not) and, when `heat` is not null, the mean neighbor similarity per pixel.
/// Both buffers must hold `len` ≥ `width` · `height` elements.
///
/// # Safety
/// `session` must be a live session handle; `mask` and non-null `heat` must
/// point to at least `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn ml_session_reconstruct(
    session: *const MlSession,
    yaw_deg: f64,
    pitch_deg: f64,
    width: u32,
    height: u32,
    mask: *mut u8,
    heat: *mut f32,
    len: usize,
) -> MlStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        if mask.is_null() {
            return Err(null("mask"));
        }
        let n = width as usize * height as usize;
        if n == 0 {
            return Err((MlStatus::InvalidArgument, "empty frame".into()));
        }
        if len < n {
            return Err((MlStatus::BufferTooSmall, format!("buffer holds {len}, frame needs {n}")));
        }
        let scene = s.session.scene();
        let camera = orbit_camera(
            scene.mesh.center(),
            yaw_deg,
            pitch_deg,
            scene.view_radius(),
            s.fov_deg.to_radians(),
            (width, height),
        )
        .map_err(fail)?;
        let rec = s.session.reconstruct(&camera);
        let out = std::slice::from_raw_parts_mut(mask, n);
        for (o, &b) in out.iter_mut().zip(&rec.mask.data) {
            *o = b as u8;
        }
        if !heat.is_null() {
            std::slice::from_raw_parts_mut(heat, n).copy_from_slice(&rec.heatmap);
        }
        Ok(())
    })
}
