use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use captioncheck_ffi::*;

fn last_error() -> String {
    let p = cc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    cc_string_free(p);
    s
}

#[test]
fn cosine_values_and_errors() {
    let a = [1.0f32, 2.0, 3.0];
    let b = [2.0f32, 4.0, 6.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(cc_cosine(a.as_ptr(), b.as_ptr(), 3, &mut out), CcStatus::Ok);
        assert!((out - 1.0).abs() < 1e-12);
        let z = [0.0f32; 3];
        assert_eq!(cc_cosine(a.as_ptr(), z.as_ptr(), 3, &mut out), CcStatus::ZeroVector);
        assert!(!last_error().is_empty());
        assert_eq!(cc_cosine(ptr::null(), b.as_ptr(), 3, &mut out), CcStatus::InvalidArgument);
        assert_eq!(cc_cosine(a.as_ptr(), b.as_ptr(), 3, ptr::null_mut()), CcStatus::InvalidArgument);
    }
}

#[test]
fn ssim_and_mse() {
    let x: Vec<u8> = (0..256u32).map(|i| i as u8).collect();
    let mut out = 0.0;
    unsafe {
        assert_eq!(cc_ssim_gray(x.as_ptr(), x.as_ptr(), 16, 16, &mut out), CcStatus::Ok);
        assert!((out - 1.0).abs() < 1e-9);
        assert_eq!(cc_mse_sim(x.as_ptr(), x.as_ptr(), x.len(), &mut out), CcStatus::Ok);
        assert_eq!(out, 1.0);
        let black = [0u8; 4];
        let white = [255u8; 4];
        assert_eq!(cc_mse_sim(black.as_ptr(), white.as_ptr(), 4, &mut out), CcStatus::Ok);
        assert_eq!(out, 0.0);
    }
}

#[test]
fn decision_rules() {
    let mut label = 9u8;
    unsafe {
        assert_eq!(cc_predict_orig_gen(0.5, 0.5, 0.5, &mut label), CcStatus::Ok);
        assert_eq!(label, 0);
        assert_eq!(cc_predict_orig_gen(0.49, 0.9, 0.5, &mut label), CcStatus::Ok);
        assert_eq!(label, 1);
        assert_eq!(cc_predict_gen_gen(0.5, 0.5, &mut label), CcStatus::Ok);
        assert_eq!(label, 0);
        assert_eq!(cc_predict_gen_gen(0.2, 0.5, &mut label), CcStatus::Ok);
        assert_eq!(label, 1);
        assert_eq!(cc_predict_gen_gen(f64::NAN, 0.5, &mut label), CcStatus::NonFinite);
    }
}

#[test]
fn median_and_metrics() {
    let mut m = 0.0;
    unsafe {
        let s = [0.1, 0.9, 0.5];
        assert_eq!(cc_calibrate_median(s.as_ptr(), 3, &mut m), CcStatus::Ok);
        assert_eq!(m, 0.5);
        let s = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(cc_calibrate_median(s.as_ptr(), 4, &mut m), CcStatus::Ok);
        assert!((m - 0.25).abs() < 1e-15);
        assert_eq!(cc_calibrate_median(s.as_ptr(), 0, &mut m), CcStatus::EmptyInput);

        let pred = [1u8, 1, 0, 0];
        let gold = [1u8, 0, 0, 1];
        let mut r = CcMetrics::default();
        assert_eq!(cc_metrics(pred.as_ptr(), gold.as_ptr(), 4, &mut r), CcStatus::Ok);
        assert_eq!((r.n, r.tp, r.fp, r.tn, r.fn_count), (4, 1, 1, 1, 1));
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.precision, 0.5);

        let none = [0u8, 0];
        assert_eq!(cc_metrics(none.as_ptr(), none.as_ptr(), 2, &mut r), CcStatus::Ok);
        assert!(r.precision.is_nan());
        let bad = [2u8, 0];
        assert_eq!(cc_metrics(bad.as_ptr(), none.as_ptr(), 2, &mut r), CcStatus::InvalidArgument);
    }
}

#[test]
fn sanitizer_handle() {
    unsafe {
        let h = cc_sanitizer_new_default();
        let name = CString::new("Maria Lopez").unwrap();
        let person = CString::new("PERSON").unwrap();
        assert_eq!(cc_sanitizer_add_name(h, name.as_ptr(), person.as_ptr()), CcStatus::Ok);
        let city = CString::new("Lisbon").unwrap();
        let gpe = CString::new("GPE").unwrap();
        assert_eq!(cc_sanitizer_add_name(h, city.as_ptr(), gpe.as_ptr()), CcStatus::Ok);

        let cap = CString::new("Maria Lopez speaks in Lisbon").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(cc_sanitizer_screen(h, cap.as_ptr(), &mut out), CcStatus::Ok);
        assert_eq!(take(out), "Person speaks in Location");

        let cap = CString::new("Doctors discuss covid vaccines").unwrap();
        assert_eq!(cc_sanitizer_screen(h, cap.as_ptr(), &mut out), CcStatus::Rejected);
        assert!(take(out).contains("covid"));

        let word = CString::new("protest").unwrap();
        assert_eq!(cc_sanitizer_block_word(h, word.as_ptr()), CcStatus::Ok);
        let cap = CString::new("a protest downtown").unwrap();
        assert_eq!(cc_sanitizer_screen(h, cap.as_ptr(), &mut out), CcStatus::Rejected);
        assert_eq!(take(out), "word=protest");

        let cap = CString::new("Obama visited Paris").unwrap();
        let starts = [0usize, 14];
        let ends = [5usize, 19];
        let labels = [person.as_ptr(), gpe.as_ptr()];
        assert_eq!(
            cc_sanitizer_substitute(h, cap.as_ptr(), starts.as_ptr(), ends.as_ptr(), labels.as_ptr(), 2, &mut out),
            CcStatus::Ok
        );
        assert_eq!(take(out), "Person visited Location");
        let ends = [5usize, 99];
        assert_eq!(
            cc_sanitizer_substitute(h, cap.as_ptr(), starts.as_ptr(), ends.as_ptr(), labels.as_ptr(), 2, &mut out),
            CcStatus::DimMismatch
        );

        assert_eq!(cc_sanitizer_screen(ptr::null(), cap.as_ptr(), &mut out), CcStatus::InvalidArgument);
        cc_sanitizer_free(h);
        cc_sanitizer_free(ptr::null_mut());
    }
}

#[test]
fn featurizer_handle_with_mock_models() {
    unsafe {
        let enc = CString::new("mock").unwrap();
        let h = cc_featurizer_new(enc.as_ptr(), ptr::null(), ptr::null());
        assert!(!h.is_null(), "{}", last_error());
        let dim = cc_featurizer_dim(h);
        assert!(dim > 0);

        let rgb = vec![128u8; 16 * 16 * 3];
        let mut a = vec![0f32; dim];
        assert_eq!(cc_featurizer_embed_rgb(h, rgb.as_ptr(), 16, 16, a.as_mut_ptr(), dim), CcStatus::Ok);
        let mut small = vec![0f32; dim - 1];
        assert_eq!(
            cc_featurizer_embed_rgb(h, rgb.as_ptr(), 16, 16, small.as_mut_ptr(), dim - 1),
            CcStatus::DimMismatch
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        image::RgbImage::from_raw(16, 16, rgb.clone()).unwrap().save(&path).unwrap();
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let mut b = vec![0f32; dim];
        assert_eq!(cc_featurizer_embed_file(h, cpath.as_ptr(), b.as_mut_ptr(), dim), CcStatus::Ok);
        assert_eq!(a, b);

        let missing = CString::new(dir.path().join("nope.png").to_str().unwrap()).unwrap();
        assert_eq!(cc_featurizer_embed_file(h, missing.as_ptr(), b.as_mut_ptr(), dim), CcStatus::Io);
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(cc_featurizer_embed_file(h, junk.as_ptr(), b.as_mut_ptr(), dim), CcStatus::Decode);
        cc_featurizer_free(h);

        let unknown = CString::new("no-such-encoder").unwrap();
        let dir_c = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert!(cc_featurizer_new(unknown.as_ptr(), ptr::null(), dir_c.as_ptr()).is_null());
        assert!(!last_error().is_empty());
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(cc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/captioncheck.h");
    assert!(header.exists(), "header is generated by build.rs");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["CC_STATUS_OK", "CC_STATUS_PANIC", "cc_featurizer_new", "cc_sanitizer_screen", "cc_metrics"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(status.success());
}
