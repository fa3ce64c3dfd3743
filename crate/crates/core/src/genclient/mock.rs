//! Deterministic stand-in generator.
//!
//! The prompt is reduced to its sorted lowercase token multiset, which seeds a
//! ChaCha8 stream. The image is an 8x8 grid of flat gray blocks. Every block
//! draws one prompt token from the stream and takes a shade from that token's
//! own 4-level band of the 0..=255 range, so the gray histogram only ever
//! touches the bands of the prompt's tokens. Prompts with the same multiset
//! render identically; prompts with disjoint vocabularies land in different
//! histogram bins unless two tokens hash to the same band.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use image::{ImageBuffer, Rgb};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{Backend, BackendConfig, GenError, GenRequest};

const GRID: u32 = 8;
const BANDS: u64 = 64;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercase alphanumeric tokens of `prompt`, sorted.
pub fn prompt_tokens(prompt: &str) -> Vec<String> {
    let mut tokens: Vec<String> = prompt
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    tokens.sort();
    tokens
}

/// FNV-1a over the sorted token multiset (0xff-separated), xor `seed`.
pub fn mock_seed(prompt: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for t in prompt_tokens(prompt) {
        h = fnv1a(h, t.as_bytes());
        h = fnv1a(h, &[0xff]);
    }
    h ^ seed
}

fn band(token: &str) -> u8 {
    (fnv1a(FNV_OFFSET, token.as_bytes()) % BANDS) as u8
}

/// Renders the mock image for `prompt` as PNG bytes.
pub fn mock_image(prompt: &str, seed: u64, size: u32) -> Vec<u8> {
    let tokens = prompt_tokens(prompt);
    let bands: Vec<u8> = if tokens.is_empty() {
        vec![band("")]
    } else {
        tokens.iter().map(|t| band(t)).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mock_seed(prompt, seed));
    let mut shades = [0u8; (GRID * GRID) as usize];
    for s in shades.iter_mut() {
        let b = bands[(rng.next_u32() as usize) % bands.len()];
        *s = b * 4 + (rng.next_u32() % 4) as u8;
    }
    let block = size.div_ceil(GRID);
    let img = ImageBuffer::from_fn(size, size, |x, y| {
        let v = shades[((y / block) * GRID + x / block) as usize];
        Rgb([v, v, v])
    });
    let mut out = Vec::new();
    image::DynamicImage::ImageRgb8(img)
        .write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("png encoding into memory");
    out
}

pub struct MockBackend {
    id: String,
    call_log: Option<PathBuf>,
    abort_after: Option<u64>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(cfg: &BackendConfig) -> Self {
        MockBackend {
            id: cfg.backend_id.clone(),
            call_log: cfg.mock.call_log.clone(),
            abort_after: cfg.mock.abort_after_calls,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, req: &GenRequest) -> Result<Vec<u8>, GenError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.abort_after.is_some_and(|limit| n >= limit) {
            log::error!("mock backend {}: injected abort before call {}", self.id, n + 1);
            std::process::abort();
        }
        let png = mock_image(&req.prompt, req.seed.unwrap_or(0), req.width);
        if let Some(path) = &self.call_log {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| GenError::io(path, e))?;
            writeln!(f, "{}\t{:016x}\t{}", self.id, mock_seed(&req.prompt, 0), req.prompt)
                .and_then(|_| f.sync_data())
                .map_err(|e| GenError::io(path, e))?;
        }
        Ok(png)
    }
}
