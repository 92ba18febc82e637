//! The C ABI from Rust and from a C program built against the header.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use matlift_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ml_last_error()) }.to_string_lossy().into_owned()
}

fn demo_scene(views: u32, res: u32) -> *mut MlScene {
    let asset = CString::new("demo").unwrap();
    let mut scene = ptr::null_mut();
    let status = unsafe { ml_scene_new(asset.as_ptr(), views, res, 0.0, 0, &mut scene) };
    assert_eq!(status, MlStatus::Ok, "{}", last_error());
    assert!(!scene.is_null());
    scene
}

fn stats(session: *const MlSession) -> MlStats {
    let mut s = MlStats::default();
    assert_eq!(unsafe { ml_session_stats(session, &mut s) }, MlStatus::Ok);
    s
}

fn mask(session: *const MlSession, yaw: f64) -> Vec<u8> {
    let mut out = vec![7u8; 64 * 64];
    let mut heat = vec![-1f32; 64 * 64];
    let status = unsafe { ml_session_reconstruct(session, yaw, 10.0, 64, 64, out.as_mut_ptr(), heat.as_mut_ptr(), out.len()) };
    assert_eq!(status, MlStatus::Ok, "{}", last_error());
    assert!(heat.iter().all(|h| (0.0..=1.0).contains(h)));
    out
}

#[test]
fn select_then_change_threshold() {
    let scene = demo_scene(12, 96);
    assert_eq!(unsafe { ml_scene_view_count(scene) }, 12);
    let mut session = ptr::null_mut();
    assert_eq!(unsafe { ml_select(scene, 0, 48, 48, &mut session) }, MlStatus::Ok, "{}", last_error());
    let before = stats(session);
    assert_eq!((before.oracle_calls, before.index_builds), (1, 1));
    assert!(before.points > 0);
    let m = mask(session, 0.0);
    assert!(m.iter().all(|&b| b <= 1));
    assert!(m.contains(&1) && m.contains(&0));

    assert_eq!(unsafe { ml_session_set_threshold(session, 0.8) }, MlStatus::Ok);
    assert_eq!(stats(session), before);
    assert_eq!(unsafe { ml_scene_oracle_calls(scene) }, 1);
    // exact oracle maps are binary, so any threshold in (0, 1) agrees
    assert_eq!(mask(session, 0.0), m);

    // sessions outlive their scene handle
    unsafe { ml_scene_free(scene) };
    assert_eq!(mask(session, 0.0), m);
    unsafe { ml_session_free(session) };
}

#[test]
fn errors_carry_status_and_message() {
    let scene = demo_scene(8, 64);
    let mut session = ptr::null_mut();
    unsafe {
        assert_eq!(ml_select(scene, 0, 0, 0, &mut session), MlStatus::BackgroundClick);
        assert!(session.is_null());
        assert!(last_error().contains("(0, 0)") && last_error().contains("view_000"), "{}", last_error());
        assert_eq!(ml_select(scene, 99, 5, 5, &mut session), MlStatus::UnknownView);
        assert_eq!(ml_select(scene, 0, 500, 5, &mut session), MlStatus::InvalidArgument);
        assert_eq!(ml_select(ptr::null(), 0, 5, 5, &mut session), MlStatus::NullPointer);
        assert_eq!(ml_select(scene, 0, 5, 5, ptr::null_mut()), MlStatus::NullPointer);

        let missing = CString::new("/nonexistent/mesh.obj").unwrap();
        let mut other = ptr::null_mut();
        assert_ne!(ml_scene_new(missing.as_ptr(), 8, 64, 0.0, 0, &mut other), MlStatus::Ok);
        assert!(other.is_null());
        let demo = CString::new("demo").unwrap();
        assert_eq!(ml_scene_new(demo.as_ptr(), 0, 64, 0.0, 0, &mut other), MlStatus::InvalidArgument);
        assert_eq!(ml_scene_new(ptr::null(), 8, 64, 0.0, 0, &mut other), MlStatus::NullPointer);

        assert_eq!(ml_select(scene, 0, 32, 32, &mut session), MlStatus::Ok, "{}", last_error());
        assert_eq!(ml_session_set_threshold(session, 1.5), MlStatus::InvalidArgument);
        assert_eq!(ml_session_set_k(session, 4), MlStatus::InvalidArgument);
        assert_eq!(ml_session_set_k(session, 5), MlStatus::Ok);
        let mut small = vec![0u8; 10];
        assert_eq!(
            ml_session_reconstruct(session, 0.0, 0.0, 64, 64, small.as_mut_ptr(), ptr::null_mut(), small.len()),
            MlStatus::BufferTooSmall
        );
        assert_eq!(
            ml_session_reconstruct(session, 0.0, 0.0, 64, 64, ptr::null_mut(), ptr::null_mut(), 4096),
            MlStatus::NullPointer
        );
        assert_eq!(ml_session_set_threshold(ptr::null_mut(), 0.5), MlStatus::NullPointer);
        assert_eq!(ml_scene_view_count(ptr::null()), 0);
        ml_session_free(session);
        ml_session_free(ptr::null_mut());
        ml_scene_free(scene);
        ml_scene_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_per_thread() {
    let scene = demo_scene(8, 64);
    let mut session = ptr::null_mut();
    assert_eq!(unsafe { ml_select(scene, 0, 0, 0, &mut session) }, MlStatus::BackgroundClick);
    let other = std::thread::spawn(last_error).join().unwrap();
    assert!(other.is_empty(), "{other}");
    assert!(!last_error().is_empty());
    unsafe { ml_scene_free(scene) };
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/matlift.h")).unwrap();
    for name in [
        "ml_last_error",
        "ml_version",
        "ml_scene_new",
        "ml_scene_free",
        "ml_scene_view_count",
        "ml_scene_oracle_calls",
        "ml_select",
        "ml_session_free",
        "ml_session_set_threshold",
        "ml_session_set_k",
        "ml_session_stats",
        "ml_session_reconstruct",
        "typedef struct MlScene MlScene",
        "ML_STATUS_BACKGROUND_CLICK = 3",
    ] {
        assert!(header.contains(name), "{name} missing from the header");
    }
    let version = unsafe { CStr::from_ptr(ml_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <stdlib.h>
#include "matlift.h"

int main(void) {
    MlScene *scene = NULL;
    if (ml_scene_new("demo", 8, 64, 0.0, 0, &scene) != ML_STATUS_OK) {
        fprintf(stderr, "scene: %s\n", ml_last_error());
        return 1;
    }
    MlSession *session = NULL;
    if (ml_select(scene, 0, 0, 0, &session) != ML_STATUS_BACKGROUND_CLICK || session != NULL) return 2;
    if (ml_select(scene, 0, 32, 32, &session) != ML_STATUS_OK) {
        fprintf(stderr, "select: %s\n", ml_last_error());
        return 3;
    }
    if (ml_session_set_threshold(session, 0.7f) != ML_STATUS_OK) return 4;
    MlStats stats;
    if (ml_session_stats(session, &stats) != ML_STATUS_OK || stats.oracle_calls != 1) return 5;
    unsigned char mask[48 * 48];
    if (ml_session_reconstruct(session, 30.0, 20.0, 48, 48, mask, NULL, sizeof mask) != ML_STATUS_OK) return 6;
    unsigned selected = 0;
    for (unsigned i = 0; i < sizeof mask; i++) selected += mask[i];
    printf("%s %llu %u\n", ml_version(), (unsigned long long)stats.points, selected);
    ml_session_free(session);
    ml_scene_free(scene);
    return selected > 0 ? 0 : 7;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    // integration tests run from <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libmatlift_ffi.a");
    assert!(lib.is_file(), "{} not built", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = tmp.path().join("main");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success(), "C build failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}
