//! Pixel preprocessing shared by the mock and exported models.

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::FeatureError;

/// BT.601 luma with integer rounding: `(299 R + 587 G + 114 B + 500) / 1000`.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y).0;
        let v = (299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000;
        Luma([v as u8])
    })
}

/// Placement of a resized image inside a square canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    pub scale: f32,
    pub pad_x: u32,
    pub pad_y: u32,
    pub inner_w: u32,
    pub inner_h: u32,
}

impl Letterbox {
    pub fn for_size(width: u32, height: u32, size: u32) -> Letterbox {
        let scale = size as f32 / width.max(height) as f32;
        let inner_w = ((width as f32 * scale).round() as u32).clamp(1, size);
        let inner_h = ((height as f32 * scale).round() as u32).clamp(1, size);
        Letterbox {
            scale,
            pad_x: (size - inner_w) / 2,
            pad_y: (size - inner_h) / 2,
            inner_w,
            inner_h,
        }
    }

    /// Canvas coordinates back to source-image coordinates.
    pub fn to_source(&self, x: f32, y: f32, src_w: u32, src_h: u32) -> (f32, f32) {
        let sx = src_w as f32 / self.inner_w as f32;
        let sy = src_h as f32 / self.inner_h as f32;
        ((x - self.pad_x as f32) * sx, (y - self.pad_y as f32) * sy)
    }
}

/// Bilinear resize with half-pixel centers and edge clamping (no antialiasing).
pub fn resize_bilinear(img: &RgbImage, out_w: u32, out_h: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    if (w, h) == (out_w, out_h) {
        return img.clone();
    }
    let sx = w as f32 / out_w as f32;
    let sy = h as f32 / out_h as f32;
    RgbImage::from_fn(out_w, out_h, |x, y| {
        let fx = ((x as f32 + 0.5) * sx - 0.5).max(0.0);
        let fy = ((y as f32 + 0.5) * sy - 0.5).max(0.0);
        let x0 = (fx.floor() as u32).min(w - 1);
        let y0 = (fy.floor() as u32).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ax = fx - x0 as f32;
        let ay = fy - y0 as f32;
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let p00 = img.get_pixel(x0, y0).0[c] as f32;
            let p10 = img.get_pixel(x1, y0).0[c] as f32;
            let p01 = img.get_pixel(x0, y1).0[c] as f32;
            let p11 = img.get_pixel(x1, y1).0[c] as f32;
            let top = p00 + (p10 - p00) * ax;
            let bottom = p01 + (p11 - p01) * ax;
            *o = (top + (bottom - top) * ay).round().clamp(0.0, 255.0) as u8;
        }
        image::Rgb(out)
    })
}

/// Resize into a `size` x `size` canvas keeping aspect ratio, centered, with
/// the remainder filled by `pad`.
pub fn letterbox(img: &RgbImage, size: u32, pad: u8) -> (RgbImage, Letterbox) {
    let lb = Letterbox::for_size(img.width(), img.height(), size);
    let resized = resize_bilinear(img, lb.inner_w, lb.inner_h);
    let mut canvas = RgbImage::from_pixel(size, size, image::Rgb([pad, pad, pad]));
    image::imageops::replace(&mut canvas, &resized, lb.pad_x as i64, lb.pad_y as i64);
    (canvas, lb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Encoder,
    Detector,
}

/// Preprocessing constants stored next to each exported graph as
/// `models/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: ModelKind,
    /// Square input edge in pixels.
    pub input_size: u32,
    /// Per-channel mean and std applied to values scaled to [0, 1].
    pub mean: [f32; 3],
    pub std: [f32; 3],
    /// Embedding length (encoders).
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub pad_value: u8,
    /// Name of the output node to read; the first output when absent.
    #[serde(default)]
    pub output: Option<String>,
}

impl Sidecar {
    pub fn load(path: &Path) -> Result<Sidecar, FeatureError> {
        let text = std::fs::read_to_string(path).map_err(|e| FeatureError::ModelLoad {
            id: path.display().to_string(),
            message: format!("sidecar: {e}"),
        })?;
        let sc: Sidecar = serde_json::from_str(&text).map_err(|e| FeatureError::ModelLoad {
            id: path.display().to_string(),
            message: format!("sidecar: {e}"),
        })?;
        if sc.input_size == 0 || sc.std.contains(&0.0) {
            return Err(FeatureError::ModelLoad {
                id: path.display().to_string(),
                message: "sidecar needs a positive input_size and nonzero std".into(),
            });
        }
        Ok(sc)
    }

    /// Letterbox, scale to [0, 1], normalize per channel, lay out as NCHW.
    pub fn to_nchw(&self, img: &RgbImage) -> (Vec<f32>, Letterbox) {
        let (canvas, lb) = letterbox(img, self.input_size, self.pad_value);
        let s = self.input_size as usize;
        let mut out = vec![0.0f32; 3 * s * s];
        for (x, y, p) in canvas.enumerate_pixels() {
            for c in 0..3 {
                let v = p.0[c] as f32 / 255.0;
                out[c * s * s + y as usize * s + x as usize] = (v - self.mean[c]) / self.std[c];
            }
        }
        (out, lb)
    }
}
