use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cotrain_ffi::*;

const DETS: &str = r#"{
  "a": [{"category": "vehicle", "bbox": [0, 0, 100, 50], "confidence": 0.9},
        {"category": "vehicle", "bbox": [300, 0, 340, 20], "confidence": 0.8},
        {"category": "pedestrian", "bbox": [200, 0, 220, 60], "confidence": 0.7}],
  "b": [{"category": "vehicle", "bbox": [500, 0, 540, 40], "confidence": 0.95},
        {"category": "vehicle", "bbox": [10, 10, 60, 40], "confidence": 0.6}]
}"#;

const GT: &str = r#"{
  "a": [{"category": "vehicle", "bbox": [0, 0, 100, 50]},
        {"category": "pedestrian", "bbox": [200, 0, 220, 60]},
        {"category": "vehicle", "bbox": [300, 0, 340, 20]}],
  "b": [{"category": "vehicle", "bbox": [10, 10, 60, 40]}]
}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = cotrain_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn labels(json: &str) -> *mut CotrainLabels {
    let mut out = ptr::null_mut();
    assert_eq!(cotrain_labels_from_json(c(json).as_ptr(), &mut out), CotrainStatus::Ok);
    out
}

#[test]
fn iou_and_argument_errors() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(cotrain_iou(&[0.0, 0.0, 10.0, 10.0], &[5.0, 0.0, 15.0, 10.0], &mut v), CotrainStatus::Ok);
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert!(cotrain_last_error().is_null());
        assert_eq!(cotrain_iou(ptr::null(), &[0.0, 0.0, 1.0, 1.0], &mut v), CotrainStatus::NullArgument);
        assert!(last_error().contains("`a`"));
        assert_eq!(cotrain_iou(&[5.0, 0.0, 1.0, 1.0], &[0.0, 0.0, 1.0, 1.0], &mut v), CotrainStatus::InvalidInput);
    }
}

#[test]
fn evaluate_through_handles() {
    unsafe {
        let dets = labels(DETS);
        let (mut imgs, mut boxes) = (0usize, 0usize);
        assert_eq!(cotrain_labels_counts(dets, &mut imgs, &mut boxes), CotrainStatus::Ok);
        assert_eq!((imgs, boxes), (2, 5));

        let mut report = ptr::null_mut();
        assert_eq!(cotrain_evaluate(dets, c(GT).as_ptr(), 25.0, &mut report), CotrainStatus::Ok);
        let mut m = 0.0;
        assert_eq!(cotrain_report_map(report, &mut m), CotrainStatus::Ok);
        assert!((m - 250.0 / 3.0).abs() < 1e-9);
        let mut ap = 0.0;
        assert_eq!(cotrain_report_ap(report, c("vehicle").as_ptr(), &mut ap), CotrainStatus::Ok);
        assert!((ap - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(cotrain_report_ap(report, c("cyclist").as_ptr(), &mut ap), CotrainStatus::NotFound);
        assert!(last_error().contains("cyclist"));

        let mut json = ptr::null_mut();
        assert_eq!(cotrain_report_to_json(report, &mut json), CotrainStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        assert!(text.contains("\"map\": 83.33333333333334"));
        cotrain_string_free(json);
        cotrain_report_free(report);

        let mut bad = ptr::null_mut();
        assert_eq!(cotrain_evaluate(dets, c("{\"a\": 1}").as_ptr(), 25.0, &mut bad), CotrainStatus::InvalidInput);
        assert!(bad.is_null());
        assert_eq!(cotrain_evaluate(dets, c(GT).as_ptr(), -1.0, &mut bad), CotrainStatus::Config);
        cotrain_labels_free(dets);
    }
}

#[test]
fn fuse_new_labels_win() {
    unsafe {
        let old = labels(r#"{"a": [{"category": "vehicle", "bbox": [0, 0, 1, 1], "confidence": 0.9}],
                             "b": [{"category": "vehicle", "bbox": [0, 0, 1, 1], "confidence": 0.9}]}"#);
        let new = labels(r#"{"b": [], "c": [{"category": "vehicle", "bbox": [0, 0, 2, 2], "confidence": 0.85}]}"#);
        let mut fused = ptr::null_mut();
        assert_eq!(cotrain_fuse(old, new, &mut fused), CotrainStatus::Ok);
        let (mut imgs, mut boxes) = (0usize, 0usize);
        cotrain_labels_counts(fused, &mut imgs, &mut boxes);
        assert_eq!((imgs, boxes), (3, 2));
        let mut json = ptr::null_mut();
        assert_eq!(cotrain_labels_to_json(fused, &mut json), CotrainStatus::Ok);
        let back = labels(CStr::from_ptr(json).to_str().unwrap());
        cotrain_labels_counts(back, &mut imgs, &mut boxes);
        assert_eq!((imgs, boxes), (3, 2));
        cotrain_string_free(json);
        for h in [old, new, fused, back] {
            cotrain_labels_free(h);
        }
        cotrain_labels_free(ptr::null_mut());
    }
}

#[test]
fn simulated_run_is_deterministic_and_checkpoints() {
    let world = c(r#"{"num_images": 80, "num_test_images": 20, "seed": 4}"#);
    let cfg = c(r#"{"T": {"vehicle": 0.8, "pedestrian": 0.8}, "N": 500, "n": 100, "m": "inf",
                    "K_min": 3, "K_max": 5, "delta_K": 2, "T_delta_map": 2.0}"#);
    let dir = tempfile::tempdir().unwrap();
    let run_dir = c(dir.path().to_str().unwrap());
    let mut jsons = Vec::new();
    unsafe {
        for rd in [ptr::null(), run_dir.as_ptr()] {
            let mut out = ptr::null_mut();
            let status = cotrain_run_simulated(world.as_ptr(), ptr::null(), cfg.as_ptr(), 10.0, rd, &mut out);
            assert_eq!(status, CotrainStatus::Ok, "{}", last_error());
            let mut json = ptr::null_mut();
            cotrain_labels_to_json(out, &mut json);
            jsons.push(CStr::from_ptr(json).to_str().unwrap().to_string());
            cotrain_string_free(json);
            cotrain_labels_free(out);
        }
        assert_eq!(jsons[0], jsons[1]);
        assert!(dir.path().join("dpl.json").is_file());

        let mut out = ptr::null_mut();
        let bad = c(r#"{"num_images": "many"}"#);
        assert_eq!(cotrain_run_simulated(bad.as_ptr(), ptr::null(), ptr::null(), 10.0, ptr::null(), &mut out), CotrainStatus::InvalidInput);
        assert!(last_error().contains("world_json"), "{}", last_error());
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cotrain.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["cotrain_evaluate", "cotrain_fuse", "cotrain_run_simulated", "cotrain_last_error", "COTRAIN_STATUS_OK"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, "#include \"cotrain.h\"\nint main(void) { CotrainStatus s = COTRAIN_STATUS_OK; return (int)s; }\n").unwrap();
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(header.parent().unwrap())
            .arg(&src)
            .output()
        else {
            eprintln!("{cc} not available, skipping");
            continue;
        };
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
