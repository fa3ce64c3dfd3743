//! The run configuration: one TOML document per experiment.
//!
//! Relative paths are resolved against the directory holding the file.
//! Command-line flags are applied on top before the digest is taken, so the
//! digest written into each run descriptor identifies the effective settings.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decision::DecisionConfig;
use crate::digest::value_digest;
use crate::evaluation::MatrixSpec;
use crate::featurizer::{FeaturizerConfig, KNOWN_DETECTORS, KNOWN_ENCODERS};
use crate::genclient::BackendConfig;
use crate::sanitizer::SanitizerConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggerKind {
    /// Exact-match names from the gazetteer file.
    Gazetteer,
    /// Capitalized mid-sentence tokens.
    Heuristic,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SanitizerSection {
    pub first_tagger: TaggerKind,
    pub second_tagger: TaggerKind,
    /// `name<TAB>LABEL` lines.
    pub gazetteer: Option<PathBuf>,
    /// One blocked word or phrase per line, merged into `rules.blocked_words`.
    pub blocked_words_file: Option<PathBuf>,
    pub rules: SanitizerConfig,
}

impl Default for SanitizerSection {
    fn default() -> Self {
        SanitizerSection {
            first_tagger: TaggerKind::Heuristic,
            second_tagger: TaggerKind::Heuristic,
            gazetteer: None,
            blocked_words_file: None,
            rules: SanitizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub images_dir: PathBuf,
    pub models_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Embedding caches, one file per featurizer digest.
    pub cache_dir: PathBuf,
    /// Gold labels file; when absent the manifest's `gold_label` fields are used.
    pub gold: Option<PathBuf>,
    pub workers: usize,
    pub matrix_workers: usize,
    /// Which entry of `backends` the generate stage uses; defaults to the first.
    pub backend: Option<String>,
    pub backends: Vec<BackendConfig>,
    pub sanitizer: SanitizerSection,
    pub featurizer: FeaturizerConfig,
    pub decision: DecisionConfig,
    pub matrix: MatrixSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: "manifest.jsonl".into(),
            images_dir: "images".into(),
            models_dir: "models".into(),
            output_dir: "out".into(),
            cache_dir: "cache".into(),
            gold: None,
            workers: 4,
            matrix_workers: 2,
            backend: None,
            backends: vec![BackendConfig::mock("mock")],
            sanitizer: SanitizerSection::default(),
            featurizer: FeaturizerConfig::default(),
            decision: DecisionConfig::default(),
            matrix: MatrixSpec::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.images_dir,
            &mut self.models_dir,
            &mut self.output_dir,
            &mut self.cache_dir,
        ] {
            resolve(base, p);
        }
        for p in [
            self.gold.as_mut(),
            self.sanitizer.gazetteer.as_mut(),
            self.sanitizer.blocked_words_file.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        for b in &mut self.backends {
            if let Some(p) = b.mock.call_log.as_mut() {
                resolve(base, p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.workers == 0 || self.matrix_workers == 0 {
            return bad("worker counts must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for b in &self.backends {
            b.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !ids.insert(b.backend_id.as_str()) {
                return bad(format!("backend id {:?} listed twice", b.backend_id));
            }
        }
        if let Some(id) = &self.backend {
            if !ids.contains(id.as_str()) {
                return bad(format!("backend {id:?} is not configured; have {ids:?}"));
            }
        }
        self.featurizer
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.check_encoder(&self.featurizer.encoder_id)?;
        if let Some(d) = &self.featurizer.detector_id {
            self.check_detector(d)?;
        }
        for e in &self.matrix.encoders {
            self.check_encoder(e)?;
        }
        for d in self.matrix.detectors.iter().filter(|d| *d != "none") {
            self.check_detector(d)?;
        }
        if !(0.0..=1.0).contains(&self.decision.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.decision.threshold));
        }
        if self.sanitizer.first_tagger == TaggerKind::Gazetteer
            && self.sanitizer.gazetteer.is_none()
        {
            return bad("first_tagger = \"gazetteer\" needs sanitizer.gazetteer".into());
        }
        self.sanitizer
            .rules
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    // Ids outside the roster are accepted when an exported graph exists.
    fn check_encoder(&self, id: &str) -> Result<(), ConfigError> {
        if KNOWN_ENCODERS.contains(&id) || self.models_dir.join(format!("{id}.onnx")).exists() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(format!(
                "unknown encoder {id:?}; known: {}",
                KNOWN_ENCODERS.join(", ")
            )))
        }
    }

    fn check_detector(&self, id: &str) -> Result<(), ConfigError> {
        if KNOWN_DETECTORS.contains(&id) || self.models_dir.join(format!("{id}.onnx")).exists() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(format!(
                "unknown detector {id:?}; known: {}",
                KNOWN_DETECTORS.join(", ")
            )))
        }
    }

    pub fn active_backend(&self) -> Result<&BackendConfig, ConfigError> {
        match &self.backend {
            Some(id) => self.backends.iter().find(|b| &b.backend_id == id),
            None => self.backends.first(),
        }
        .ok_or_else(|| ConfigError::Invalid("no backend configured".into()))
    }

    /// Digest of the effective configuration.
    pub fn digest(&self) -> String {
        value_digest(self)
    }
}
