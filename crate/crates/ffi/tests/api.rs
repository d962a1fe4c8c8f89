use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use paxkit::data::{Image, Scene};
use paxkit::model::{save_checkpoint, OrientedDetr};
use paxkit::train::detect;
use paxkit::verify::micro_model_config;
use paxkit_ffi::*;

fn last_error() -> String {
    let p = pax_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn obb(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> PaxObb {
    PaxObb { cx, cy, w, h, theta }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(pax_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn iou_fixtures() {
    let a = obb(0.5, 0.5, 1.0, 1.0, 0.0);
    let b = obb(1.0, 1.0, 1.0, 1.0, 0.0);
    let mut out = f64::NAN;
    assert_eq!(unsafe { pax_rotated_iou(&a, &a, &mut out) }, PaxStatus::Ok);
    assert!((out - 1.0).abs() < 1e-12);
    assert!(pax_last_error().is_null());
    assert_eq!(unsafe { pax_rotated_iou(&a, &b, &mut out) }, PaxStatus::Ok);
    assert!((out - 1.0 / 7.0).abs() < 1e-9);
}

#[test]
fn invalid_box_and_null_pointer_report_errors() {
    let a = obb(0.0, 0.0, 1.0, 1.0, 0.0);
    let bad = obb(0.0, 0.0, -1.0, 1.0, 0.0);
    let mut out = 0.0;
    assert_eq!(unsafe { pax_rotated_iou(&a, &bad, &mut out) }, PaxStatus::InvalidArgument);
    assert!(last_error().contains("positive"));
    assert_eq!(unsafe { pax_rotated_iou(ptr::null(), &a, &mut out) }, PaxStatus::NullPointer);
    assert_eq!(last_error(), "a is null");
}

#[test]
fn min_area_rect_of_rotated_square() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let xy = [0.0, 0.0, s, s, 0.0, 2.0 * s, -s, s, 0.0, s];
    let mut out = PaxObb::default();
    assert_eq!(unsafe { pax_min_area_rect(xy.as_ptr(), 5, &mut out) }, PaxStatus::Ok);
    assert!((out.w * out.h - 1.0).abs() < 1e-9);
    assert!((out.cx).abs() < 1e-9 && (out.cy - s).abs() < 1e-9);
}

#[test]
fn axis_roundtrip_and_bad_bins() {
    let mut enc = vec![0.0; 360];
    let theta = 30f64.to_radians();
    assert_eq!(unsafe { pax_axis_encode(theta, 360, 6.0, enc.as_mut_ptr()) }, PaxStatus::Ok);
    let peaks = [30, 120, 210, 300];
    for p in peaks {
        assert!((enc[p] - 1.0).abs() < 1e-12);
    }
    let mut dir = 0.0;
    assert_eq!(unsafe { pax_axis_decode(enc.as_ptr(), enc.len(), &mut dir) }, PaxStatus::Ok);
    assert!((dir - theta).abs() < 1e-12);
    assert_eq!(unsafe { pax_axis_encode(0.0, 10, 6.0, enc.as_mut_ptr()) }, PaxStatus::InvalidArgument);
    assert!(last_error().contains("divisible by 4"));
}

#[test]
fn hungarian_fixture_and_rectangular() {
    let costs = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
    let mut assign = [0i64; 3];
    assert_eq!(unsafe { pax_hungarian(costs.as_ptr(), 3, 3, assign.as_mut_ptr()) }, PaxStatus::Ok);
    assert_eq!(assign, [1, 0, 2]);

    // three rows, one column: only the cheapest row is assigned
    let costs = [3.0, 1.0, 2.0];
    assert_eq!(unsafe { pax_hungarian(costs.as_ptr(), 3, 1, assign.as_mut_ptr()) }, PaxStatus::Ok);
    assert_eq!(assign, [-1, 0, -1]);

    let costs = [1.0, f64::NAN];
    let mut two = [0i64; 2];
    assert_eq!(unsafe { pax_hungarian(costs.as_ptr(), 2, 1, two.as_mut_ptr()) }, PaxStatus::InvalidArgument);
}

#[test]
fn model_load_detect_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = OrientedDetr::new(micro_model_config(0), 3).unwrap();
    save_checkpoint(&path, &model, 3).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut PaxModel = ptr::null_mut();
    assert_eq!(unsafe { pax_model_load(cpath.as_ptr(), &mut handle) }, PaxStatus::Ok);
    assert_eq!(unsafe { pax_model_num_classes(handle) }, 2);

    let mut image = Image::new(16, 16, 3);
    for (i, v) in image.data.iter_mut().enumerate() {
        *v = ((i * 37) % 101) as f64 / 100.0;
    }
    let mut dets: *mut PaxDetections = ptr::null_mut();
    let status = unsafe { pax_model_detect(handle, image.data.as_ptr(), 16, 16, 0.0, &mut dets) };
    assert_eq!(status, PaxStatus::Ok);

    let scene = Scene { id: String::new(), image, annotations: Vec::new() };
    let codec = paxkit::axis::AxisCodecConfig { n_bins: 16, ..Default::default() };
    let expected = detect(&model, &scene, &codec, 0.0).unwrap();
    let n = unsafe { pax_detections_len(dets) };
    assert_eq!(n, expected.len());
    for (i, e) in expected.iter().enumerate() {
        let mut d = PaxDetection::default();
        assert_eq!(unsafe { pax_detections_get(dets, i, &mut d) }, PaxStatus::Ok);
        assert_eq!(d.class_index, e.class);
        assert_eq!(d.score, e.score);
        assert_eq!((d.obb.cx, d.obb.w, d.obb.theta), (e.rect.cx, e.rect.w, e.rect.theta));
    }
    let mut d = PaxDetection::default();
    assert_eq!(unsafe { pax_detections_get(dets, n, &mut d) }, PaxStatus::InvalidArgument);

    // smaller than one 4-pixel patch
    let small = vec![0.5; 3 * 3 * 3];
    let mut none: *mut PaxDetections = ptr::null_mut();
    assert_eq!(unsafe { pax_model_detect(handle, small.as_ptr(), 3, 3, 0.0, &mut none) }, PaxStatus::Model);
    assert!(none.is_null());

    unsafe {
        pax_detections_free(dets);
        pax_model_free(handle);
        pax_model_free(ptr::null_mut());
    }
}

#[test]
fn model_load_errors() {
    let mut handle: *mut PaxModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { pax_model_load(missing.as_ptr(), &mut handle) }, PaxStatus::Io);
    assert!(handle.is_null());

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, "not a checkpoint\n").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pax_model_load(junk.as_ptr(), &mut handle) }, PaxStatus::Model);
    assert!(last_error().contains("bad header"));
}

const HEADER: &str = include_str!("../include/paxkit.h");
const SOURCE: &str = include_str!("../src/lib.rs");

#[test]
fn header_declares_every_exported_function() {
    let exported: Vec<&str> = SOURCE
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 12, "found {exported:?}");
    for name in exported {
        assert!(HEADER.contains(&format!("{name}(")), "{name} missing from include/paxkit.h");
    }
}

#[test]
fn header_compiles_as_c() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"paxkit.h\"\nint main(void) { PaxObb a = {0, 0, 1, 1, 0}; double iou; \
         return pax_rotated_iou(&a, &a, &iou) == PAX_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = match Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(e) => {
            eprintln!("skipping: no C compiler ({cc}: {e})");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
