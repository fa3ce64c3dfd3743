#![cfg(feature = "onnx")]

use std::path::{Path, PathBuf};

use captioncheck::featurizer::{
    read_rgb, Detector, Encoder, FeatureError, Featurizer, FeaturizerConfig, OnnxDetector, OnnxEncoder, Sidecar,
};
use captioncheck::similarity::cosine;
use image::{Rgb, RgbImage};
use serde::Deserialize;

#[derive(Deserialize)]
struct Reference {
    model: String,
    image: String,
    input_shape: Vec<usize>,
    input: Vec<f32>,
    embedding: Vec<f32>,
}

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/models")
}

fn reference() -> Reference {
    let text = std::fs::read_to_string(models_dir().join("tiny-enc.reference.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn preprocessing_matches_exporter_within_1e5() {
    let r = reference();
    let sc = Sidecar::load(&models_dir().join(format!("{}.json", r.model))).unwrap();
    let img = read_rgb(&models_dir().join(&r.image)).unwrap();
    let (ours, _) = sc.to_nchw(&img);
    assert_eq!(r.input_shape, vec![1, 3, sc.input_size as usize, sc.input_size as usize]);
    assert_eq!(ours.len(), r.input.len());
    let worst = ours.iter().zip(&r.input).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst <= 1e-5, "max per-element difference {worst}");
}

#[test]
fn encoder_embedding_matches_reference() {
    let r = reference();
    let enc = OnnxEncoder::load(&r.model, &models_dir()).unwrap();
    assert_eq!(enc.dim(), r.embedding.len());
    assert_eq!(enc.sidecar().dim, Some(enc.dim()));
    let img = read_rgb(&models_dir().join(&r.image)).unwrap();
    let ours = enc.encode(&img).unwrap();
    let c = cosine(&ours, &r.embedding).unwrap();
    assert!(c >= 0.999, "cosine {c}");
}

#[test]
fn featurizer_loads_exported_models_by_id() {
    let dir = models_dir();
    let f = Featurizer::load(FeaturizerConfig::encoder_only("tiny-enc"), &dir).unwrap();
    let img = read_rgb(&dir.join("test_image.png")).unwrap();
    let a = f.embed(&img).unwrap();
    assert_eq!(a.dim(), 16);

    let f = Featurizer::load(FeaturizerConfig::encoder_only("tiny-enc").with_detector(Some("tiny-det")), &dir).unwrap();
    let b = f.embed(&img).unwrap();
    assert_eq!(b.dim(), 16);
    assert!(b.values.iter().all(|v| v.is_finite()));
}

#[test]
fn detector_boxes_map_back_through_letterbox() {
    let det = OnnxDetector::load("tiny-det", &models_dir()).unwrap();
    // 64x32 letterboxes into 32x32 at half scale with 8 px of padding on top
    let img = RgbImage::from_pixel(64, 32, Rgb([120, 120, 120]));
    let boxes = det.detect(&img).unwrap();
    assert_eq!(boxes.len(), 2);
    let b = &boxes[0];
    assert_eq!((b.x, b.y, b.w, b.h, b.class_id), (4, 0, 36, 24, 1));
    let b = &boxes[1];
    assert_eq!((b.x, b.y, b.w, b.h, b.class_id), (16, 0, 44, 32, 3));
    assert!(boxes.iter().all(|b| b.within(64, 32) && b.confidence > 0.0 && b.confidence < 1.0));
}

#[test]
fn sidecar_kind_and_dim_are_enforced() {
    let tmp = tempfile::tempdir().unwrap();
    let src = models_dir();
    std::fs::copy(src.join("tiny-enc.onnx"), tmp.path().join("x.onnx")).unwrap();
    let mut sc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(src.join("tiny-enc.json")).unwrap()).unwrap();

    sc["kind"] = "detector".into();
    std::fs::write(tmp.path().join("x.json"), sc.to_string()).unwrap();
    assert!(matches!(OnnxEncoder::load("x", tmp.path()), Err(FeatureError::ModelLoad { .. })));

    sc["kind"] = "encoder".into();
    sc["dim"] = 99.into();
    std::fs::write(tmp.path().join("x.json"), sc.to_string()).unwrap();
    assert!(matches!(OnnxEncoder::load("x", tmp.path()), Err(FeatureError::DimMismatch { .. })));

    std::fs::remove_file(tmp.path().join("x.onnx")).unwrap();
    assert!(matches!(OnnxEncoder::load("x", tmp.path()), Err(FeatureError::ModelMissing(_))));
}
