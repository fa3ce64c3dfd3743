//! Similarity kernels: cosine over embeddings, and SSIM / MSE over pixels as
//! baselines.

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("image {w}x{h} is smaller than the {window}x{window} SSIM window")]
    TooSmall { w: u32, h: u32, window: usize },
    #[error("image size mismatch: {0:?} vs {1:?}")]
    SizeMismatch((u32, u32), (u32, u32)),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Cosine,
    Ssim,
    MseSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub kind: SimilarityKind,
}

/// Cosine similarity accumulated in f64 and clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimMismatch(a.len(), b.len()));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    // sqrt(na) * sqrt(nb) keeps the product commutative, so cosine(a, b) and
    // cosine(b, a) agree bit for bit
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine_score(a: &[f32], b: &[f32]) -> Result<SimilarityScore, SimilarityError> {
    Ok(SimilarityScore {
        value: cosine(a, b)?,
        kind: SimilarityKind::Cosine,
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_L: f64 = 255.0;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

// Separable 'valid' Gaussian filter: output is (w - 10) x (h - 10).
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean SSIM over all full 11x11 Gaussian windows (sigma 1.5, K1 0.01,
/// K2 0.03, L 255) of two 8-bit grayscale buffers.
pub fn ssim_gray(x: &[u8], y: &[u8], width: u32, height: u32) -> Result<f64, SimilarityError> {
    let (w, h) = (width as usize, height as usize);
    if x.len() != w * h || y.len() != w * h {
        return Err(SimilarityError::DimMismatch(x.len(), y.len()));
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(SimilarityError::TooSmall {
            w: width,
            h: height,
            window: SSIM_WINDOW,
        });
    }
    let k = gaussian_kernel();
    let fx: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let fy: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = fx.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = fy.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(&fx, w, h, &k);
    let mu_y = filter_valid(&fy, w, h, &k);
    let e_xx = filter_valid(&xx, w, h, &k);
    let e_yy = filter_valid(&yy, w, h, &k);
    let e_xy = filter_valid(&xy, w, h, &k);

    let c1 = (SSIM_K1 * SSIM_L).powi(2);
    let c2 = (SSIM_K2 * SSIM_L).powi(2);
    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / n as f64)
}

pub fn ssim(x: &GrayImage, y: &GrayImage) -> Result<SimilarityScore, SimilarityError> {
    if x.dimensions() != y.dimensions() {
        return Err(SimilarityError::SizeMismatch(x.dimensions(), y.dimensions()));
    }
    Ok(SimilarityScore {
        value: ssim_gray(x.as_raw(), y.as_raw(), x.width(), x.height())?,
        kind: SimilarityKind::Ssim,
    })
}

/// Mean squared difference over every 8-bit sample.
pub fn mse(x: &[u8], y: &[u8]) -> Result<f64, SimilarityError> {
    if x.len() != y.len() {
        return Err(SimilarityError::DimMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let sum: u64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a as i64 - b as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / x.len() as f64)
}

/// `1 - mse / 255^2`, in [0, 1].
pub fn mse_sim_bytes(x: &[u8], y: &[u8]) -> Result<f64, SimilarityError> {
    Ok(1.0 - mse(x, y)? / (255.0 * 255.0))
}

pub fn mse_sim(x: &RgbImage, y: &RgbImage) -> Result<SimilarityScore, SimilarityError> {
    if x.dimensions() != y.dimensions() {
        return Err(SimilarityError::SizeMismatch(x.dimensions(), y.dimensions()));
    }
    Ok(SimilarityScore {
        value: mse_sim_bytes(x.as_raw(), y.as_raw())?,
        kind: SimilarityKind::MseSim,
    })
}
