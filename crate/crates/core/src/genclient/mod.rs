//! Text-to-image backends and the resumable generation stage.

mod http;
mod limiter;
mod mock;
mod stage;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{OpenAiImagesBackend, StabilityBackend};
pub use limiter::{Clock, RateLimiter, RealClock, SimClock};
pub use mock::{mock_image, mock_seed, prompt_tokens, MockBackend};
pub use stage::{run_generation_stage, image_file_name, StageEvent, StageReport};

pub const SUPPORTED_SIZES: [u32; 3] = [256, 512, 1024];
pub const DEFAULT_SIZE: u32 = 512;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("backend {backend} refused the prompt: {reason}")]
    PolicyRejected { backend: String, reason: String },
    #[error("backend {backend} failed transiently: {message}")]
    Transient { backend: String, message: String },
    #[error("backend {backend} returned HTTP {status}: {message}")]
    Http {
        backend: String,
        status: u16,
        message: String,
    },
    #[error("backend {backend} returned an unusable image: {message}")]
    BadImage { backend: String, message: String },
    #[error("credential variable {var} for backend {backend} is not set")]
    CredentialMissing { backend: String, var: String },
    #[error("backend config {backend}: {message}")]
    Config { backend: String, message: String },
    #[error("generation stage needs {stage} first: record {record_id} is {status}")]
    Prerequisite {
        stage: &'static str,
        record_id: String,
        status: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

impl GenError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GenError::Transient { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GenError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub width: u32,
    pub height: u32,
    pub seed: Option<u64>,
    pub backend_id: String,
}

impl GenRequest {
    pub fn new(prompt: &str, size: u32, seed: Option<u64>, backend_id: &str) -> Self {
        GenRequest {
            prompt: prompt.to_string(),
            width: size,
            height: size,
            seed,
            backend_id: backend_id.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.prompt.trim().is_empty() {
            return Err(GenError::InvalidRequest("prompt is empty".into()));
        }
        if self.width != self.height {
            return Err(GenError::InvalidRequest(format!(
                "images must be square, got {}x{}",
                self.width, self.height
            )));
        }
        if !SUPPORTED_SIZES.contains(&self.width) {
            return Err(GenError::InvalidRequest(format!(
                "size {} not in {:?}",
                self.width, SUPPORTED_SIZES
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    /// JSON body `{prompt, n, size}`, base64 image in `data[0].b64_json`.
    OpenaiImages,
    /// JSON body `{text_prompts, width, height, seed}`, base64 image in `artifacts[0].base64`.
    Stability,
}

/// Test hooks for the mock backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockOptions {
    /// Every served call appends one line here.
    pub call_log: Option<PathBuf>,
    /// Abort the process when asked for call number `n + 1`.
    pub abort_after_calls: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub credential_env: Option<String>,
    pub model: Option<String>,
    /// Requests per minute, shared by all workers.
    pub rate_limit: f64,
    pub max_retries: u32,
    /// Seconds; attempt `k` waits `backoff_base * 2^k`.
    pub backoff_base: f64,
    /// Seconds per HTTP request.
    pub timeout: f64,
    pub size: u32,
    pub seed: Option<u64>,
    pub mock: MockOptions,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            backend_id: "mock".into(),
            kind: BackendKind::Mock,
            endpoint: None,
            credential_env: None,
            model: None,
            rate_limit: 6000.0,
            max_retries: 3,
            backoff_base: 1.0,
            timeout: 120.0,
            size: DEFAULT_SIZE,
            seed: None,
            mock: MockOptions::default(),
        }
    }
}

impl BackendConfig {
    pub fn mock(backend_id: &str) -> Self {
        BackendConfig {
            backend_id: backend_id.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |message: String| GenError::Config {
            backend: self.backend_id.clone(),
            message,
        };
        if self.backend_id.is_empty()
            || !self
                .backend_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(bad(format!("backend_id {:?} must be [A-Za-z0-9_-]+", self.backend_id)));
        }
        if !(self.rate_limit.is_finite() && self.rate_limit > 0.0) {
            return Err(bad(format!("rate_limit must be > 0, got {}", self.rate_limit)));
        }
        if !(self.backoff_base.is_finite() && self.backoff_base >= 0.0) {
            return Err(bad("backoff_base must be >= 0".into()));
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(bad("timeout must be > 0".into()));
        }
        if !SUPPORTED_SIZES.contains(&self.size) {
            return Err(bad(format!("size {} not in {:?}", self.size, SUPPORTED_SIZES)));
        }
        if self.kind != BackendKind::Mock {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(bad("endpoint is required for HTTP backends".into()));
            }
            if self.credential_env.as_deref().is_none_or(str::is_empty) {
                return Err(bad("credential_env is required for HTTP backends".into()));
            }
        }
        Ok(())
    }

    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base * 2f64.powi(attempt.min(30) as i32))
    }

    pub fn min_interval(&self) -> Duration {
        Duration::from_secs_f64(60.0 / self.rate_limit)
    }

    /// Reads the API key named by `credential_env`.
    pub fn credential(&self) -> Result<String, GenError> {
        let var = self.credential_env.clone().unwrap_or_default();
        match std::env::var(&var) {
            Ok(v) if !v.is_empty() => Ok(v),
            _ => Err(GenError::CredentialMissing {
                backend: self.backend_id.clone(),
                var,
            }),
        }
    }
}

/// One attempt against a service. Retries and pacing live in [`Generator`].
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn call(&self, req: &GenRequest) -> Result<Vec<u8>, GenError>;
}

pub fn build_backend(cfg: &BackendConfig) -> Result<Arc<dyn Backend>, GenError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Mock => Arc::new(MockBackend::new(cfg)),
        BackendKind::OpenaiImages => Arc::new(OpenAiImagesBackend::new(cfg)?),
        BackendKind::Stability => Arc::new(StabilityBackend::new(cfg)?),
    })
}

/// A backend plus its shared limiter and retry policy.
pub struct Generator {
    cfg: BackendConfig,
    backend: Arc<dyn Backend>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
}

impl Generator {
    pub fn new(cfg: BackendConfig) -> Result<Self, GenError> {
        Self::with_clock(cfg, Arc::new(RealClock::new()))
    }

    pub fn with_clock(cfg: BackendConfig, clock: Arc<dyn Clock>) -> Result<Self, GenError> {
        let backend = build_backend(&cfg)?;
        Ok(Self::with_backend(cfg, backend, clock))
    }

    pub fn with_backend(cfg: BackendConfig, backend: Arc<dyn Backend>, clock: Arc<dyn Clock>) -> Self {
        let limiter = RateLimiter::new(cfg.min_interval(), 1, clock.clone());
        Generator {
            cfg,
            backend,
            limiter,
            clock,
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn limiter(&self) -> &RateLimiter {
        &self.limiter
    }

    pub fn request(&self, prompt: &str) -> GenRequest {
        GenRequest::new(prompt, self.cfg.size, self.cfg.seed, &self.cfg.backend_id)
    }

    /// Runs `req` with pacing and retries. The returned PNG decodes to the
    /// requested size.
    pub fn generate(&self, req: &GenRequest) -> Result<Vec<u8>, GenError> {
        req.validate()?;
        let mut attempt = 0;
        loop {
            self.limiter.acquire();
            match self.backend.call(req) {
                Ok(bytes) => {
                    check_png(&bytes, req, self.backend.id())?;
                    return Ok(bytes);
                }
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let wait = self.cfg.backoff(attempt);
                    log::warn!("{e}; retry {} in {:?}", attempt + 1, wait);
                    self.clock.sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// One-shot convenience over [`Generator`].
pub fn generate(req: &GenRequest, cfg: &BackendConfig) -> Result<Vec<u8>, GenError> {
    Generator::new(cfg.clone())?.generate(req)
}

pub(crate) fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).ok()?;
    Some((img.width(), img.height()))
}

fn check_png(bytes: &[u8], req: &GenRequest, backend: &str) -> Result<(), GenError> {
    match png_dimensions(bytes) {
        Some((w, h)) if w == req.width && h == req.height => Ok(()),
        Some((w, h)) => Err(GenError::BadImage {
            backend: backend.into(),
            message: format!("expected {}x{}, got {w}x{h}", req.width, req.height),
        }),
        None => Err(GenError::BadImage {
            backend: backend.into(),
            message: "not a decodable PNG".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn request_validation() {
        assert!(GenRequest::new("a dog", 512, None, "m").validate().is_ok());
        assert!(GenRequest::new("  ", 512, None, "m").validate().is_err());
        assert!(GenRequest::new("a dog", 500, None, "m").validate().is_err());
        let mut r = GenRequest::new("a dog", 512, None, "m");
        r.height = 256;
        assert!(r.validate().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::mock("m");
        assert!(c.validate().is_ok());
        c.rate_limit = 0.0;
        assert!(c.validate().is_err());
        let c = BackendConfig {
            kind: BackendKind::Stability,
            ..BackendConfig::mock("s")
        };
        assert!(matches!(c.validate(), Err(GenError::Config { .. })));
    }

    #[test]
    fn missing_credential_is_a_startup_error() {
        let c = BackendConfig {
            kind: BackendKind::OpenaiImages,
            endpoint: Some("http://127.0.0.1:9".into()),
            credential_env: Some("CAPTIONCHECK_TEST_UNSET_KEY".into()),
            ..BackendConfig::mock("oa")
        };
        assert!(matches!(build_backend(&c), Err(GenError::CredentialMissing { .. })));
    }

    #[test]
    fn backoff_doubles() {
        let c = BackendConfig {
            backoff_base: 0.5,
            ..BackendConfig::mock("m")
        };
        assert_eq!(c.backoff(0), Duration::from_millis(500));
        assert_eq!(c.backoff(3), Duration::from_secs(4));
    }

    struct Flaky {
        fails: u32,
        calls: AtomicU32,
        err: fn() -> GenError,
    }

    impl Backend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn call(&self, req: &GenRequest) -> Result<Vec<u8>, GenError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fails {
                Err((self.err)())
            } else {
                Ok(mock_image(&req.prompt, req.seed.unwrap_or(0), req.width))
            }
        }
    }

    fn flaky(fails: u32, err: fn() -> GenError) -> (Generator, Arc<Flaky>, Arc<SimClock>) {
        let b = Arc::new(Flaky {
            fails,
            calls: AtomicU32::new(0),
            err,
        });
        let clock = Arc::new(SimClock::new());
        let cfg = BackendConfig {
            max_retries: 2,
            backoff_base: 1.0,
            size: 256,
            ..BackendConfig::mock("flaky")
        };
        (Generator::with_backend(cfg, b.clone(), clock.clone()), b, clock)
    }

    fn transient() -> GenError {
        GenError::Transient {
            backend: "flaky".into(),
            message: "503".into(),
        }
    }

    fn policy() -> GenError {
        GenError::PolicyRejected {
            backend: "flaky".into(),
            reason: "unsafe".into(),
        }
    }

    #[test]
    fn transient_failures_retry_with_backoff() {
        let (g, b, clock) = flaky(2, transient);
        let req = g.request("a red barn");
        let png = g.generate(&req).unwrap();
        assert_eq!(png_dimensions(&png), Some((256, 256)));
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
        // 1 s + 2 s of backoff, the limiter interval is negligible
        assert!(clock.elapsed() >= Duration::from_secs(3));
    }

    #[test]
    fn retries_are_bounded() {
        let (g, b, _) = flaky(10, transient);
        assert!(g.generate(&g.request("x")).unwrap_err().is_retryable());
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn policy_rejection_is_not_retried() {
        let (g, b, _) = flaky(10, policy);
        assert!(matches!(
            g.generate(&g.request("x")),
            Err(GenError::PolicyRejected { .. })
        ));
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn wrong_size_output_is_rejected() {
        struct Small;
        impl Backend for Small {
            fn id(&self) -> &str {
                "small"
            }
            fn call(&self, req: &GenRequest) -> Result<Vec<u8>, GenError> {
                Ok(mock_image(&req.prompt, 0, 256))
            }
        }
        let g = Generator::with_backend(
            BackendConfig::mock("small"),
            Arc::new(Small),
            Arc::new(SimClock::new()),
        );
        assert!(matches!(
            g.generate(&g.request("x")),
            Err(GenError::BadImage { .. })
        ));
    }
}
