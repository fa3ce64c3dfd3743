//! Image embeddings: encoder-only, or detect objects, embed each crop plus the
//! whole image and merge the vectors.

mod combine;
mod mock;
#[cfg(feature = "onnx")]
mod onnx;
pub mod preprocess;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use combine::{combine_normalized, l2_normalize};
pub use mock::{MockDetector, MockEncoder, MOCK_BINS};
#[cfg(feature = "onnx")]
pub use onnx::{OnnxDetector, OnnxEncoder};
pub use preprocess::Sidecar;

use crate::digest::value_digest;

pub const KNOWN_ENCODERS: &[&str] = &[
    "clip-vit-l-14",
    "clip-vit-b-32",
    "resnet18",
    "resnet50",
    "resnext50",
    "densenet121",
    "densenet169",
    "efficientnet-b5",
    "mock",
];

pub const KNOWN_DETECTORS: &[&str] = &["mask-rcnn", "yolo-v5", "yolo-v7", "mock"];

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("unknown {kind} {id:?}; known: {known}")]
    UnknownModel { kind: &'static str, id: String, known: String },
    #[error("model graph {0} not found; run the model export step for this id first")]
    ModelMissing(PathBuf),
    #[error("loading model {id}: {message}")]
    ModelLoad { id: String, message: String },
    #[error("inference with {id} failed: {message}")]
    Inference { id: String, message: String },
    #[error("{id} produced a non-finite embedding")]
    NonFinite { id: String },
    #[error("{id} produced an all-zero embedding")]
    ZeroEmbedding { id: String },
    #[error("{id} produced {actual} values, expected {expected}")]
    DimMismatch { id: String, expected: usize, actual: usize },
    #[error("combined embedding requires a detector")]
    NoDetector,
    #[error("invalid featurizer config: {0}")]
    Config(String),
}

/// Fixed-dimension image representation tagged with the config that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub config_digest: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64, crate::similarity::SimilarityError> {
        crate::similarity::cosine(&self.values, &other.values)
    }
}

/// Detected object in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub confidence: f32,
    pub class_id: i64,
}

impl BoundingBox {
    /// Clip float corner coordinates to an image; `None` if less than one
    /// pixel remains on either axis.
    #[allow(clippy::too_many_arguments)]
    pub fn from_corners(
        x1: f32,
        y1: f32,
        x2: f32,
        y2: f32,
        confidence: f32,
        class_id: i64,
        width: u32,
        height: u32,
    ) -> Option<BoundingBox> {
        if ![x1, y1, x2, y2, confidence].iter().all(|v| v.is_finite()) {
            return None;
        }
        let cx1 = x1.max(0.0).min(width as f32).floor() as u32;
        let cy1 = y1.max(0.0).min(height as f32).floor() as u32;
        let cx2 = x2.max(0.0).min(width as f32).ceil() as u32;
        let cy2 = y2.max(0.0).min(height as f32).ceil() as u32;
        if cx2 <= cx1 || cy2 <= cy1 {
            return None;
        }
        Some(BoundingBox {
            x: cx1,
            y: cy1,
            w: cx2 - cx1,
            h: cy2 - cy1,
            confidence: confidence.clamp(0.0, 1.0),
            class_id,
        })
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }
}

/// Maps an image (or crop) to a feature vector of fixed length.
pub trait Encoder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, image: &RgbImage) -> Result<Vec<f32>, FeatureError>;
}

/// Proposes object boxes. Filtering, ordering and truncation are applied by
/// [`Featurizer::detect`].
pub trait Detector: Send + Sync {
    fn id(&self) -> &str;
    fn detect(&self, image: &RgbImage) -> Result<Vec<BoundingBox>, FeatureError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizerConfig {
    pub encoder_id: String,
    /// `None` selects encoder-only embeddings.
    pub detector_id: Option<String>,
    pub confidence_min: f32,
    pub max_objects: usize,
    pub normalize: bool,
    /// Weight of the whole-image vector relative to one crop.
    pub whole_weight: f32,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            encoder_id: "mock".into(),
            detector_id: None,
            confidence_min: 0.5,
            max_objects: 10,
            normalize: true,
            whole_weight: 1.0,
        }
    }
}

impl FeaturizerConfig {
    pub fn encoder_only(encoder_id: &str) -> Self {
        FeaturizerConfig {
            encoder_id: encoder_id.into(),
            ..Default::default()
        }
    }

    pub fn with_detector(mut self, detector_id: Option<&str>) -> Self {
        self.detector_id = detector_id.filter(|d| *d != "none").map(String::from);
        self
    }

    /// Digest over every field; part of each embedding cache key.
    pub fn digest(&self) -> String {
        value_digest(self)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(0.0..=1.0).contains(&self.confidence_min) {
            return Err(FeatureError::Config(format!(
                "confidence_min {} outside [0, 1]",
                self.confidence_min
            )));
        }
        if self.max_objects == 0 {
            return Err(FeatureError::Config("max_objects must be positive".into()));
        }
        if !(self.whole_weight.is_finite() && self.whole_weight > 0.0) {
            return Err(FeatureError::Config("whole_weight must be positive".into()));
        }
        Ok(())
    }

    /// Short label like `resnet50+yolo-v5`.
    pub fn label(&self) -> String {
        match &self.detector_id {
            Some(d) => format!("{}+{}", self.encoder_id, d),
            None => self.encoder_id.clone(),
        }
    }
}

pub fn load_encoder(id: &str, models_dir: &Path) -> Result<Arc<dyn Encoder>, FeatureError> {
    if id == "mock" {
        return Ok(Arc::new(MockEncoder));
    }
    let graph = models_dir.join(format!("{id}.onnx"));
    if !graph.exists() {
        if KNOWN_ENCODERS.contains(&id) {
            return Err(FeatureError::ModelMissing(graph));
        }
        return Err(FeatureError::UnknownModel {
            kind: "encoder",
            id: id.into(),
            known: KNOWN_ENCODERS.join(", "),
        });
    }
    load_onnx_encoder(id, models_dir)
}

pub fn load_detector(id: &str, models_dir: &Path) -> Result<Arc<dyn Detector>, FeatureError> {
    if id == "mock" {
        return Ok(Arc::new(MockDetector));
    }
    let graph = models_dir.join(format!("{id}.onnx"));
    if !graph.exists() {
        if KNOWN_DETECTORS.contains(&id) {
            return Err(FeatureError::ModelMissing(graph));
        }
        return Err(FeatureError::UnknownModel {
            kind: "detector",
            id: id.into(),
            known: KNOWN_DETECTORS.join(", "),
        });
    }
    load_onnx_detector(id, models_dir)
}

#[cfg(feature = "onnx")]
fn load_onnx_encoder(id: &str, models_dir: &Path) -> Result<Arc<dyn Encoder>, FeatureError> {
    Ok(Arc::new(OnnxEncoder::load(id, models_dir)?))
}

#[cfg(feature = "onnx")]
fn load_onnx_detector(id: &str, models_dir: &Path) -> Result<Arc<dyn Detector>, FeatureError> {
    Ok(Arc::new(OnnxDetector::load(id, models_dir)?))
}

#[cfg(not(feature = "onnx"))]
fn load_onnx_encoder(id: &str, _models_dir: &Path) -> Result<Arc<dyn Encoder>, FeatureError> {
    Err(FeatureError::ModelLoad {
        id: id.into(),
        message: "built without the `onnx` feature".into(),
    })
}

#[cfg(not(feature = "onnx"))]
fn load_onnx_detector(id: &str, _models_dir: &Path) -> Result<Arc<dyn Detector>, FeatureError> {
    Err(FeatureError::ModelLoad {
        id: id.into(),
        message: "built without the `onnx` feature".into(),
    })
}

/// An encoder, optionally a detector, and the settings that combine them.
/// Immutable after construction and shareable across threads.
#[derive(Clone)]
pub struct Featurizer {
    cfg: FeaturizerConfig,
    digest: String,
    encoder: Arc<dyn Encoder>,
    detector: Option<Arc<dyn Detector>>,
}

impl std::fmt::Debug for Featurizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Featurizer").field("cfg", &self.cfg).finish()
    }
}

impl Featurizer {
    pub fn load(cfg: FeaturizerConfig, models_dir: &Path) -> Result<Self, FeatureError> {
        cfg.validate()?;
        let encoder = load_encoder(&cfg.encoder_id, models_dir)?;
        let detector = match &cfg.detector_id {
            Some(d) => Some(load_detector(d, models_dir)?),
            None => None,
        };
        Ok(Self::with_models(cfg, encoder, detector))
    }

    pub fn with_models(
        cfg: FeaturizerConfig,
        encoder: Arc<dyn Encoder>,
        detector: Option<Arc<dyn Detector>>,
    ) -> Self {
        let digest = cfg.digest();
        Featurizer {
            cfg,
            digest,
            encoder,
            detector,
        }
    }

    pub fn config(&self) -> &FeaturizerConfig {
        &self.cfg
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    fn encode_checked(&self, image: &RgbImage) -> Result<Vec<f32>, FeatureError> {
        let id = self.encoder.id();
        let v = self.encoder.encode(image)?;
        if v.len() != self.encoder.dim() {
            return Err(FeatureError::DimMismatch {
                id: id.into(),
                expected: self.encoder.dim(),
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FeatureError::NonFinite { id: id.into() });
        }
        Ok(v)
    }

    fn normalized(&self, v: Vec<f32>) -> Result<Vec<f32>, FeatureError> {
        l2_normalize(&v).ok_or_else(|| FeatureError::ZeroEmbedding {
            id: self.encoder.id().into(),
        })
    }

    pub fn embed_whole(&self, image: &RgbImage) -> Result<EmbeddingVector, FeatureError> {
        let mut v = self.encode_checked(image)?;
        if self.cfg.normalize {
            v = self.normalized(v)?;
        }
        Ok(EmbeddingVector {
            values: v,
            config_digest: self.digest.clone(),
        })
    }

    /// Boxes at or above `confidence_min`, most confident first, at most
    /// `max_objects`.
    pub fn detect(&self, image: &RgbImage) -> Result<Vec<BoundingBox>, FeatureError> {
        let det = self.detector.as_ref().ok_or(FeatureError::NoDetector)?;
        let (w, h) = image.dimensions();
        let mut boxes: Vec<BoundingBox> = det
            .detect(image)?
            .into_iter()
            .filter(|b| b.within(w, h) && b.confidence >= self.cfg.confidence_min)
            .collect();
        boxes.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then((a.y, a.x, a.h, a.w, a.class_id).cmp(&(b.y, b.x, b.h, b.w, b.class_id)))
        });
        boxes.truncate(self.cfg.max_objects);
        Ok(boxes)
    }

    /// Mean of the L2-normalized whole-image and crop vectors, re-normalized.
    /// With no detections this is exactly [`Featurizer::embed_whole`].
    pub fn embed_combined(&self, image: &RgbImage) -> Result<EmbeddingVector, FeatureError> {
        let boxes = self.detect(image)?;
        self.embed_with_boxes(image, &boxes)
    }

    /// Combine over caller-supplied boxes (already filtered).
    pub fn embed_with_boxes(
        &self,
        image: &RgbImage,
        boxes: &[BoundingBox],
    ) -> Result<EmbeddingVector, FeatureError> {
        if boxes.is_empty() {
            return self.embed_whole(image);
        }
        let whole = self.normalized(self.encode_checked(image)?)?;
        // fixed summation order, independent of detection order
        let mut ordered: Vec<&BoundingBox> = boxes.iter().collect();
        ordered.sort_by(|a, b| {
            (a.x, a.y, a.w, a.h, a.class_id)
                .cmp(&(b.x, b.y, b.w, b.h, b.class_id))
                .then(a.confidence.total_cmp(&b.confidence))
        });
        let mut crops = Vec::with_capacity(ordered.len());
        for b in ordered {
            let crop = image::imageops::crop_imm(image, b.x, b.y, b.w, b.h).to_image();
            crops.push(self.normalized(self.encode_checked(&crop)?)?);
        }
        let values = combine_normalized(&whole, &crops, self.cfg.whole_weight).ok_or_else(|| {
            FeatureError::ZeroEmbedding {
                id: self.encoder.id().into(),
            }
        })?;
        Ok(EmbeddingVector {
            values,
            config_digest: self.digest.clone(),
        })
    }

    /// Encoder-only or combined, depending on whether a detector is configured.
    pub fn embed(&self, image: &RgbImage) -> Result<EmbeddingVector, FeatureError> {
        if self.detector.is_some() {
            self.embed_combined(image)
        } else {
            self.embed_whole(image)
        }
    }

    pub fn embed_bytes(&self, bytes: &[u8], origin: &Path) -> Result<EmbeddingVector, FeatureError> {
        self.embed(&decode_rgb(bytes, origin)?)
    }
}

pub fn decode_rgb(bytes: &[u8], origin: &Path) -> Result<RgbImage, FeatureError> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| FeatureError::Decode {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, FeatureError> {
    let bytes = std::fs::read(path).map_err(|e| FeatureError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    decode_rgb(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn mock(detector: bool) -> Featurizer {
        let cfg = FeaturizerConfig::default().with_detector(detector.then_some("mock"));
        Featurizer::load(cfg, Path::new("models")).unwrap()
    }

    fn busy_image(seed: u32) -> RgbImage {
        RgbImage::from_fn(64, 64, |x, y| {
            let v = ((x * 31 + y * 17 + seed * 7) ^ (x * y + seed)) % 256;
            Rgb([v as u8, (v / 2) as u8, (255 - v) as u8])
        })
    }

    #[test]
    fn all_black_is_one_hot_bin_zero() {
        let e = mock(false).embed_whole(&RgbImage::new(32, 32)).unwrap();
        assert_eq!(e.dim(), MOCK_BINS);
        assert_eq!(e.values[0], 1.0);
        assert!(e.values[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_normalized() {
        let f = mock(false);
        let img = busy_image(3);
        let a = f.embed_whole(&img).unwrap();
        let b = f.embed_whole(&img).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }

    #[test]
    fn zero_detections_fall_back_to_whole() {
        let f = mock(true);
        let blank = RgbImage::from_pixel(64, 64, Rgb([40, 40, 40]));
        assert!(f.detect(&blank).unwrap().is_empty());
        assert_eq!(f.embed_combined(&blank).unwrap(), f.embed_whole(&blank).unwrap());
    }

    #[test]
    fn detection_filter_bounds() {
        let mut cfg = FeaturizerConfig::default().with_detector(Some("mock"));
        cfg.confidence_min = 1.0;
        let f = Featurizer::load(cfg, Path::new("models")).unwrap();
        assert!(f.detect(&busy_image(1)).unwrap().is_empty());

        let mut cfg = FeaturizerConfig::default().with_detector(Some("mock"));
        cfg.confidence_min = 0.0;
        cfg.max_objects = 2;
        let f = Featurizer::load(cfg, Path::new("models")).unwrap();
        let boxes = f.detect(&busy_image(1)).unwrap();
        assert_eq!(boxes.len(), 2);
        assert!(boxes[0].confidence >= boxes[1].confidence);
    }

    #[test]
    fn combined_requires_detector() {
        assert!(matches!(mock(false).embed_combined(&busy_image(0)), Err(FeatureError::NoDetector)));
    }

    #[test]
    fn same_dim_both_modes() {
        let img = busy_image(9);
        assert_eq!(mock(false).embed(&img).unwrap().dim(), mock(true).embed(&img).unwrap().dim());
    }

    #[test]
    fn digest_tracks_every_field() {
        let base = FeaturizerConfig::default();
        let variants = [
            FeaturizerConfig { encoder_id: "resnet50".into(), ..base.clone() },
            base.clone().with_detector(Some("mock")),
            FeaturizerConfig { confidence_min: 0.4, ..base.clone() },
            FeaturizerConfig { max_objects: 3, ..base.clone() },
            FeaturizerConfig { normalize: false, ..base.clone() },
            FeaturizerConfig { whole_weight: 2.0, ..base.clone() },
        ];
        for v in &variants {
            assert_ne!(v.digest(), base.digest(), "{v:?}");
        }
        assert_eq!(base.digest(), FeaturizerConfig::default().digest());
    }

    #[test]
    fn unknown_and_missing_models() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_encoder("vgg99", dir.path()), Err(FeatureError::UnknownModel { .. })));
        match load_encoder("resnet50", dir.path()) {
            Err(FeatureError::ModelMissing(p)) => assert!(p.ends_with("resnet50.onnx")),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected error"),
        }
        assert!(matches!(load_detector("yolo-v5", dir.path()), Err(FeatureError::ModelMissing(_))));
    }

    #[test]
    fn box_clipping() {
        let b = BoundingBox::from_corners(-5.0, 2.2, 70.0, 9.9, 0.8, 3, 64, 64).unwrap();
        assert_eq!((b.x, b.y, b.w, b.h), (0, 2, 64, 8));
        assert!(BoundingBox::from_corners(10.0, 10.0, 10.0, 20.0, 0.9, 0, 64, 64).is_none());
        assert!(BoundingBox::from_corners(70.0, 0.0, 80.0, 5.0, 0.9, 0, 64, 64).is_none());
    }

    struct FixedDetector(Vec<BoundingBox>);

    impl Detector for FixedDetector {
        fn id(&self) -> &str {
            "fixed"
        }
        fn detect(&self, _image: &RgbImage) -> Result<Vec<BoundingBox>, FeatureError> {
            Ok(self.0.clone())
        }
    }

    proptest! {
        #[test]
        fn combined_is_box_order_invariant(
            raw in proptest::collection::vec((0u32..48, 0u32..48, 1u32..16, 1u32..16, 0.5f32..1.0), 1..6),
            seed in 0u32..50,
        ) {
            let boxes: Vec<BoundingBox> = raw
                .iter()
                .enumerate()
                .map(|(i, &(x, y, w, h, c))| BoundingBox { x, y, w, h, confidence: c, class_id: i as i64 })
                .collect();
            let mut reversed = boxes.clone();
            reversed.reverse();
            let cfg = FeaturizerConfig::default().with_detector(Some("fixed"));
            let a = Featurizer::with_models(cfg.clone(), Arc::new(MockEncoder), Some(Arc::new(FixedDetector(boxes))));
            let b = Featurizer::with_models(cfg, Arc::new(MockEncoder), Some(Arc::new(FixedDetector(reversed))));
            let img = busy_image(seed);
            prop_assert_eq!(a.embed_combined(&img).unwrap(), b.embed_combined(&img).unwrap());
        }
    }
}
