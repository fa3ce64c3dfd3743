//! C ABI over the captioncheck library.
//!
//! Every fallible function returns a [`CcStatus`] and writes its result
//! through an out-pointer. On failure a message is kept per thread and can be
//! read with [`cc_last_error`]. Strings returned to the caller are owned by
//! the caller and must be released with [`cc_string_free`]. Handles are
//! opaque and released with their `_free` function; passing NULL to a free
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use captioncheck::corpus::Label;
use captioncheck::decision::{calibrate_median, gen_gen_label, orig_gen_label, SimilarityPair};
use captioncheck::evaluation::{ConfusionMatrix, MetricsReport};
use captioncheck::featurizer::{FeatureError, Featurizer, FeaturizerConfig};
use captioncheck::sanitizer::{
    sanitize_caption, substitute_entities, GazetteerTagger, HeuristicTagger, SanitizeError,
    SanitizerConfig, ScreenOutcome, TaggerSpan,
};
use captioncheck::similarity::{cosine, mse_sim_bytes, ssim_gray, SimilarityError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    /// NULL pointer, bad UTF-8, zero length where data is required.
    InvalidArgument = 1,
    /// Lengths or image sizes disagree, or an output buffer is too small.
    DimMismatch = 2,
    /// Cosine of an all-zero vector.
    ZeroVector = 3,
    Io = 4,
    Decode = 5,
    /// Model graph missing, unknown or failing.
    Model = 6,
    NonFinite = 7,
    EmptyInput = 8,
    /// The caption was refused by the screen; the reason is the out string.
    Rejected = 9,
    /// A Rust panic was caught at the boundary.
    Panic = 10,
}

/// Confusion counts and metrics. Undefined ratios are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CcMetrics {
    pub n: u64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_count: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Sanitizer: gazetteer first pass, capitalization heuristic second pass,
/// default label map and safety topics.
pub struct CcSanitizer {
    cfg: SanitizerConfig,
    names: GazetteerTagger,
    heuristic: HeuristicTagger,
}

/// Loaded encoder (and optional detector).
pub struct CcFeaturizer {
    inner: Featurizer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: CcStatus, msg: impl Into<String>) -> CcStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into [`CcStatus::Panic`]. Handles are not
/// reused by the library after a panic, so observing them is left to the caller.
fn guard(f: impl FnOnce() -> CcStatus) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CcStatus::Panic, "panic inside captioncheck"),
    }
}

fn sim_status(e: SimilarityError) -> CcStatus {
    let status = match e {
        SimilarityError::DimMismatch { .. } | SimilarityError::SizeMismatch { .. } => CcStatus::DimMismatch,
        SimilarityError::ZeroVector => CcStatus::ZeroVector,
        SimilarityError::TooSmall { .. } => CcStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

fn feature_status(e: FeatureError) -> CcStatus {
    let status = match &e {
        FeatureError::Decode { .. } => CcStatus::Decode,
        FeatureError::NonFinite { .. } => CcStatus::NonFinite,
        FeatureError::DimMismatch { .. } => CcStatus::DimMismatch,
        FeatureError::ZeroEmbedding { .. } => CcStatus::ZeroVector,
        FeatureError::Config(_) => CcStatus::InvalidArgument,
        _ => CcStatus::Model,
    };
    fail(status, e.to_string())
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

unsafe fn string<'a>(p: *const c_char) -> Result<&'a str, CcStatus> {
    if p.is_null() {
        return Err(fail(CcStatus::InvalidArgument, "NULL string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CcStatus::InvalidArgument, "string is not UTF-8"))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Cosine similarity of two `len`-element vectors, accumulated in double.
///
/// # Safety
/// `a` and `b` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_cosine(a: *const f32, b: *const f32, len: usize, out: *mut f64) -> CcStatus {
    guard(|| {
        let (Some(a), Some(b)) = (slice(a, len), slice(b, len)) else {
            return fail(CcStatus::InvalidArgument, "NULL vector");
        };
        if out.is_null() {
            return fail(CcStatus::InvalidArgument, "NULL out");
        }
        match cosine(a, b) {
            Ok(v) => {
                *out = v;
                CcStatus::Ok
            }
            Err(e) => sim_status(e),
        }
    })
}

/// SSIM of two 8-bit grayscale images, row-major, `width * height` bytes each.
///
/// # Safety
/// `x` and `y` must point to `width * height` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_ssim_gray(
    x: *const u8,
    y: *const u8,
    width: u32,
    height: u32,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let len = width as usize * height as usize;
        let (Some(xs), Some(ys)) = (slice(x, len), slice(y, len)) else {
            return fail(CcStatus::InvalidArgument, "NULL image");
        };
        if out.is_null() {
            return fail(CcStatus::InvalidArgument, "NULL out");
        }
        match ssim_gray(xs, ys, width, height) {
            Ok(v) => {
                *out = v;
                CcStatus::Ok
            }
            Err(e) => sim_status(e),
        }
    })
}

/// `1 - MSE / 255^2` over two equal-length byte buffers.
///
/// # Safety
/// `x` and `y` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_mse_sim(x: *const u8, y: *const u8, len: usize, out: *mut f64) -> CcStatus {
    guard(|| {
        let (Some(xs), Some(ys)) = (slice(x, len), slice(y, len)) else {
            return fail(CcStatus::InvalidArgument, "NULL buffer");
        };
        if out.is_null() {
            return fail(CcStatus::InvalidArgument, "NULL out");
        }
        match mse_sim_bytes(xs, ys) {
            Ok(v) => {
                *out = v;
                CcStatus::Ok
            }
            Err(e) => sim_status(e),
        }
    })
}

/// 0 (NOOC) when both scores are at least `threshold`, otherwise 1 (OOC).
///
/// # Safety
/// `out_label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_predict_orig_gen(sim1: f64, sim2: f64, threshold: f64, out_label: *mut u8) -> CcStatus {
    guard(|| {
        if out_label.is_null() {
            return fail(CcStatus::InvalidArgument, "NULL out_label");
        }
        match orig_gen_label(SimilarityPair { sim1, sim2 }, threshold) {
            Ok(l) => {
                *out_label = l.as_u8();
                CcStatus::Ok
            }
            Err(e) => fail(CcStatus::NonFinite, e.to_string()),
        }
    })
}

/// 1 (OOC) when `sim` is below `threshold`, otherwise 0.
///
/// # Safety
/// `out_label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_predict_gen_gen(sim: f64, threshold: f64, out_label: *mut u8) -> CcStatus {
    guard(|| {
        if out_label.is_null() {
            return fail(CcStatus::InvalidArgument, "NULL out_label");
        }
        match gen_gen_label(sim, threshold) {
            Ok(l) => {
                *out_label = l.as_u8();
                CcStatus::Ok
            }
            Err(e) => fail(CcStatus::NonFinite, e.to_string()),
        }
    })
}

/// Median of `len` scores; the midpoint of the central pair for even `len`.
///
/// # Safety
/// `scores` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_calibrate_median(scores: *const f64, len: usize, out: *mut f64) -> CcStatus {
    guard(|| {
        if len == 0 {
            return fail(CcStatus::EmptyInput, "no scores");
        }
        let Some(s) = slice(scores, len) else {
            return fail(CcStatus::InvalidArgument, "NULL scores");
        };
        if out.is_null() {
            return fail(CcStatus::InvalidArgument, "NULL out");
        }
        match calibrate_median(s) {
            Ok(m) => {
                *out = m;
                CcStatus::Ok
            }
            Err(e) => fail(CcStatus::NonFinite, e.to_string()),
        }
    })
}

/// Metrics of `len` predicted labels against gold labels (0 or 1 each),
/// positive class 1.
///
/// # Safety
/// `pred` and `gold` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_metrics(pred: *const u8, gold: *const u8, len: usize, out: *mut CcMetrics) -> CcStatus {
    guard(|| {
        if len == 0 {
            return fail(CcStatus::EmptyInput, "no labels");
        }
        let (Some(p), Some(g)) = (slice(pred, len), slice(gold, len)) else {
            return fail(CcStatus::InvalidArgument, "NULL labels");
        };
        if out.is_null() {
            return fail(CcStatus::InvalidArgument, "NULL out");
        }
        let mut m = ConfusionMatrix::default();
        for (&a, &b) in p.iter().zip(g) {
            let (Some(a), Some(b)) = (Label::from_u8(a), Label::from_u8(b)) else {
                return fail(CcStatus::InvalidArgument, "labels must be 0 or 1");
            };
            m.add(a, b);
        }
        let r = match MetricsReport::from_confusion("ffi", m) {
            Ok(r) => r,
            Err(e) => return fail(CcStatus::EmptyInput, e.to_string()),
        };
        let v = |x: Option<captioncheck::evaluation::Ratio>| x.map_or(f64::NAN, |r| r.value());
        *out = CcMetrics {
            n: r.n,
            tp: m.tp,
            fp: m.fp,
            tn: m.tn,
            fn_count: m.fn_,
            accuracy: r.accuracy.value(),
            precision: v(r.precision),
            recall: v(r.recall),
            f1: v(r.f1),
        };
        CcStatus::Ok
    })
}

/// New sanitizer with the default rules and an empty name list.
#[no_mangle]
pub extern "C" fn cc_sanitizer_new_default() -> *mut CcSanitizer {
    Box::into_raw(Box::new(CcSanitizer {
        cfg: SanitizerConfig::default(),
        names: GazetteerTagger::default(),
        heuristic: HeuristicTagger::default(),
    }))
}

/// # Safety
/// `h` must be NULL or a handle from [`cc_sanitizer_new_default`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_sanitizer_free(h: *mut CcSanitizer) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Adds a known name with its entity label (for example `PERSON`, `GPE`).
///
/// # Safety
/// `h` must be a live sanitizer handle; `name` and `label` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_sanitizer_add_name(h: *mut CcSanitizer, name: *const c_char, label: *const c_char) -> CcStatus {
    guard(|| {
        let Some(h) = h.as_mut() else {
            return fail(CcStatus::InvalidArgument, "NULL sanitizer");
        };
        let (name, label) = match (string(name), string(label)) {
            (Ok(n), Ok(l)) => (n, l),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        h.names.insert(name, label);
        CcStatus::Ok
    })
}

/// Adds a blocked word or phrase.
///
/// # Safety
/// `h` must be a live sanitizer handle; `word` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_sanitizer_block_word(h: *mut CcSanitizer, word: *const c_char) -> CcStatus {
    guard(|| {
        let Some(h) = h.as_mut() else {
            return fail(CcStatus::InvalidArgument, "NULL sanitizer");
        };
        match string(word) {
            Ok(w) => {
                h.cfg.blocked_words.insert(w.trim().to_lowercase());
                CcStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Full sanitization of one caption. On [`CcStatus::Ok`] `*out` is the
/// prompt; on [`CcStatus::Rejected`] it is the rejection reason. Either way
/// the string must be freed with [`cc_string_free`].
///
/// # Safety
/// `h` must be a live sanitizer handle, `caption` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_sanitizer_screen(h: *const CcSanitizer, caption: *const c_char, out: *mut *mut c_char) -> CcStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(CcStatus::InvalidArgument, "NULL sanitizer");
        };
        if out.is_null() {
            return fail(CcStatus::InvalidArgument, "NULL out");
        }
        let caption = match string(caption) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match sanitize_caption("ffi", caption, &h.names, &h.heuristic, &h.cfg) {
            Ok(ScreenOutcome::Accepted(text)) => {
                *out = into_c_string(text);
                CcStatus::Ok
            }
            Ok(ScreenOutcome::Rejected(reason)) => {
                *out = into_c_string(reason.to_string());
                CcStatus::Rejected
            }
            Err(e) => fail(CcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Replaces `n` caller-tagged spans (char offsets `[starts[i], ends[i])` with
/// entity label `labels[i]`) by their class words. No screening.
///
/// # Safety
/// `h` must be a live sanitizer handle; `caption` NUL-terminated; `starts`,
/// `ends` and `labels` must each hold `n` entries; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_sanitizer_substitute(
    h: *const CcSanitizer,
    caption: *const c_char,
    starts: *const usize,
    ends: *const usize,
    labels: *const *const c_char,
    n: usize,
    out: *mut *mut c_char,
) -> CcStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(CcStatus::InvalidArgument, "NULL sanitizer");
        };
        if out.is_null() {
            return fail(CcStatus::InvalidArgument, "NULL out");
        }
        let caption = match string(caption) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let mut spans = Vec::with_capacity(n);
        if n > 0 {
            let (Some(s), Some(e), Some(l)) = (slice(starts, n), slice(ends, n), slice(labels, n)) else {
                return fail(CcStatus::InvalidArgument, "NULL span arrays");
            };
            for i in 0..n {
                let label = match string(l[i]) {
                    Ok(l) => l,
                    Err(st) => return st,
                };
                spans.push(TaggerSpan {
                    start: s[i],
                    end: e[i],
                    label: label.to_string(),
                });
            }
        }
        match substitute_entities(caption, &spans, &h.cfg) {
            Ok(text) => {
                *out = into_c_string(text);
                CcStatus::Ok
            }
            Err(e @ SanitizeError::SpanOutOfBounds { .. }) => fail(CcStatus::DimMismatch, e.to_string()),
            Err(e) => fail(CcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Loads a featurizer. `detector_id` may be NULL or `"none"` for encoder-only
/// embeddings. Returns NULL on failure (see [`cc_last_error`]).
///
/// # Safety
/// String arguments must be NULL (where allowed) or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_featurizer_new(
    encoder_id: *const c_char,
    detector_id: *const c_char,
    models_dir: *const c_char,
) -> *mut CcFeaturizer {
    let mut handle = ptr::null_mut();
    let slot = &mut handle;
    guard(move || {
        let enc = match string(encoder_id) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let det = if detector_id.is_null() {
            None
        } else {
            match string(detector_id) {
                Ok(s) => Some(s),
                Err(st) => return st,
            }
        };
        let dir = if models_dir.is_null() {
            "models"
        } else {
            match string(models_dir) {
                Ok(s) => s,
                Err(st) => return st,
            }
        };
        let cfg = FeaturizerConfig::encoder_only(enc).with_detector(det);
        match Featurizer::load(cfg, Path::new(dir)) {
            Ok(f) => {
                *slot = Box::into_raw(Box::new(CcFeaturizer { inner: f }));
                CcStatus::Ok
            }
            Err(e) => feature_status(e),
        }
    });
    handle
}

/// # Safety
/// `h` must be NULL or a handle from [`cc_featurizer_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_featurizer_free(h: *mut CcFeaturizer) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Embedding length, or 0 for a NULL handle.
///
/// # Safety
/// `h` must be NULL or a live featurizer handle.
#[no_mangle]
pub unsafe extern "C" fn cc_featurizer_dim(h: *const CcFeaturizer) -> usize {
    h.as_ref().map_or(0, |h| h.inner.dim())
}

unsafe fn write_embedding(v: &[f32], out: *mut f32, cap: usize) -> CcStatus {
    if out.is_null() {
        return fail(CcStatus::InvalidArgument, "NULL out");
    }
    if cap < v.len() {
        return fail(CcStatus::DimMismatch, format!("buffer holds {cap}, need {}", v.len()));
    }
    ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
    CcStatus::Ok
}

/// Embeds the image file at `path` into `out` (capacity `cap` floats).
///
/// # Safety
/// `h` must be a live featurizer handle, `path` NUL-terminated, `out` writable for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn cc_featurizer_embed_file(
    h: *const CcFeaturizer,
    path: *const c_char,
    out: *mut f32,
    cap: usize,
) -> CcStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(CcStatus::InvalidArgument, "NULL featurizer");
        };
        let path = match string(path) {
            Ok(p) => Path::new(p),
            Err(s) => return s,
        };
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) => return fail(CcStatus::Io, format!("{}: {e}", path.display())),
        };
        match h.inner.embed_bytes(&bytes, path) {
            Ok(v) => write_embedding(&v.values, out, cap),
            Err(e) => feature_status(e),
        }
    })
}

/// Embeds a packed RGB8 image (`width * height * 3` bytes, row-major).
///
/// # Safety
/// `h` must be a live featurizer handle, `rgb` readable for `width * height * 3`
/// bytes, `out` writable for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn cc_featurizer_embed_rgb(
    h: *const CcFeaturizer,
    rgb: *const u8,
    width: u32,
    height: u32,
    out: *mut f32,
    cap: usize,
) -> CcStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(CcStatus::InvalidArgument, "NULL featurizer");
        };
        let len = width as usize * height as usize * 3;
        if len == 0 {
            return fail(CcStatus::EmptyInput, "empty image");
        }
        let Some(px) = slice(rgb, len) else {
            return fail(CcStatus::InvalidArgument, "NULL pixels");
        };
        let Some(img) = image::RgbImage::from_raw(width, height, px.to_vec()) else {
            return fail(CcStatus::DimMismatch, "pixel buffer does not match width x height");
        };
        match h.inner.embed(&img) {
            Ok(v) => write_embedding(&v.values, out, cap),
            Err(e) => feature_status(e),
        }
    })
}
