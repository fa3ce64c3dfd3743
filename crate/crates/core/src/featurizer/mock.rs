use image::RgbImage;

use super::preprocess::to_gray;
use super::{BoundingBox, Detector, Encoder, FeatureError};

pub const MOCK_BINS: usize = 64;

/// Deterministic stand-in encoder: 64-bin grayscale histogram, L1- then
/// L2-normalized.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockEncoder;

impl Encoder for MockEncoder {
    fn id(&self) -> &str {
        "mock"
    }

    fn dim(&self) -> usize {
        MOCK_BINS
    }

    fn encode(&self, image: &RgbImage) -> Result<Vec<f32>, FeatureError> {
        let gray = to_gray(image);
        let mut counts = [0u64; MOCK_BINS];
        for p in gray.pixels() {
            counts[p.0[0] as usize * MOCK_BINS / 256] += 1;
        }
        let total = counts.iter().sum::<u64>().max(1) as f64;
        let l1: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
        let norm = l1.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(FeatureError::ZeroEmbedding { id: "mock".into() });
        }
        Ok(l1.iter().map(|v| (v / norm) as f32).collect())
    }
}

/// Deterministic stand-in detector: proposes the four quadrants of the image,
/// scored by their grayscale standard deviation (`min(std / 64, 0.99)`).
/// Flat quadrants are never proposed, so a blank image yields nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockDetector;

impl Detector for MockDetector {
    fn id(&self) -> &str {
        "mock"
    }

    fn detect(&self, image: &RgbImage) -> Result<Vec<BoundingBox>, FeatureError> {
        let gray = to_gray(image);
        let (w, h) = gray.dimensions();
        let (hw, hh) = (w / 2, h / 2);
        if hw == 0 || hh == 0 {
            return Ok(Vec::new());
        }
        let quads = [(0, 0, hw, hh), (hw, 0, w - hw, hh), (0, hh, hw, h - hh), (hw, hh, w - hw, h - hh)];
        let mut out = Vec::new();
        for (i, &(x, y, qw, qh)) in quads.iter().enumerate() {
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for yy in y..y + qh {
                for xx in x..x + qw {
                    let v = gray.get_pixel(xx, yy).0[0] as f64;
                    sum += v;
                    sq += v * v;
                }
            }
            let n = (qw * qh) as f64;
            let mean = sum / n;
            let std = (sq / n - mean * mean).max(0.0).sqrt();
            if std == 0.0 {
                continue;
            }
            out.push(BoundingBox {
                x,
                y,
                w: qw,
                h: qh,
                confidence: (std / 64.0).min(0.99) as f32,
                class_id: i as i64,
            });
        }
        Ok(out)
    }
}
