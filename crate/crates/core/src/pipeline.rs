//! Stage drivers behind the CLI subcommands.
//!
//! Each stage reads the [`RunConfig`], does its work, and writes its outputs
//! plus a `<stage>.run.json` descriptor into the output directory. Stages that
//! change record status hold the manifest lock for their whole run.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig, TaggerKind};
use crate::corpus::{load_manifest, CorpusError, EmbeddingCache, Label, ManifestStore, Record, Status};
use crate::decision::{
    predict_gen_gen_run, predict_orig_gen, DecisionConfig, DecisionError, DecisionMode, Prediction,
    SimilarityPair, TIE_RULE,
};
use crate::digest::sha256_hex;
use crate::evaluation::{
    agreement_by_id, compute_metrics, ingest_survey_file, read_gold, read_predictions, run_matrix,
    survey_predictions, write_predictions, EvalError, MatrixReport, MetricsReport, SurveySummary,
};
use crate::featurizer::{FeatureError, Featurizer, FeaturizerConfig};
use crate::genclient::{run_generation_stage, GenError, Generator, StageReport};
use crate::sanitizer::{
    sanitize_caption, GazetteerTagger, HeuristicTagger, NullTagger, SanitizeError, ScreenOutcome, Tagger,
};
use crate::similarity::{cosine, SimilarityError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Sanitize(#[from] SanitizeError),
    #[error(transparent)]
    Gen(GenError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("run `{stage}` first: {detail}")]
    Prerequisite { stage: &'static str, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<GenError> for PipelineError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Prerequisite {
                stage,
                record_id,
                status,
            } => PipelineError::Prerequisite {
                stage,
                detail: format!("record {record_id} is {status}"),
            },
            GenError::Corpus(c) => PipelineError::Corpus(c),
            other => PipelineError::Gen(other),
        }
    }
}

/// Process exit categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCategory {
    Config = 2,
    Data = 3,
    Backend = 4,
    Partial = 5,
}

impl PipelineError {
    pub fn category(&self) -> ExitCategory {
        use ExitCategory::*;
        match self {
            PipelineError::Config(_) => Config,
            PipelineError::Sanitize(SanitizeError::Config(_) | SanitizeError::UnmappedLabel(_)) => Config,
            PipelineError::Feature(
                FeatureError::UnknownModel { .. }
                | FeatureError::ModelMissing(_)
                | FeatureError::ModelLoad { .. }
                | FeatureError::Config(_)
                | FeatureError::NoDetector,
            ) => Config,
            PipelineError::Gen(GenError::Config { .. } | GenError::CredentialMissing { .. }) => Config,
            PipelineError::Gen(GenError::Io { .. } | GenError::InvalidRequest(_)) => Data,
            PipelineError::Gen(_) => Backend,
            _ => Data,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub stage: String,
    pub tool_version: String,
    pub config_digest: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub tie_rule: String,
    pub counts: serde_json::Value,
    /// Output file name -> SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl RunDescriptor {
    pub fn path(output_dir: &Path, stage: &str) -> PathBuf {
        output_dir.join(format!("{stage}.run.json"))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| {
            PipelineError::Eval(EvalError::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })
        })
    }
}

/// Stage bookkeeping: start time and output list for the descriptor.
struct StageRun<'a> {
    cfg: &'a RunConfig,
    stage: &'static str,
    started_at: DateTime<Utc>,
    outputs: Vec<PathBuf>,
}

impl<'a> StageRun<'a> {
    fn begin(cfg: &'a RunConfig, stage: &'static str) -> Result<Self, PipelineError> {
        fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
        Ok(StageRun {
            cfg,
            stage,
            started_at: Utc::now(),
            outputs: Vec::new(),
        })
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.cfg.output_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf, PipelineError> {
        let p = self.output(name);
        write_synced(&p, contents)?;
        Ok(p)
    }

    fn finish<T: Serialize>(self, counts: &T) -> Result<PathBuf, PipelineError> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            let bytes = fs::read(p).map_err(io_err(p))?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            outputs.insert(name, sha256_hex(&bytes));
        }
        let d = RunDescriptor {
            stage: self.stage.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_digest: self.cfg.digest(),
            started_at: self.started_at,
            finished_at: Utc::now(),
            tie_rule: TIE_RULE.into(),
            counts: serde_json::to_value(counts).expect("counts serialize"),
            outputs,
        };
        let path = RunDescriptor::path(&self.cfg.output_dir, self.stage);
        let json = serde_json::to_string_pretty(&d).expect("descriptor serializes");
        write_synced(&path, json.as_bytes())?;
        Ok(path)
    }
}

fn write_synced(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents)
        .and_then(|_| f.sync_all())
        .map_err(io_err(path))
}

fn to_json_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Order-preserving parallel map over at most `workers` threads.
fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

/// Paths in the manifest are relative to the manifest's directory.
fn manifest_relative(cfg: &RunConfig, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        cfg.manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn require_status(records: &[Record], at_least: &Status, stage: &'static str) -> Result<(), PipelineError> {
    for r in records {
        if !r.status.is_rejected() && !r.status.reached(at_least) {
            return Err(PipelineError::Prerequisite {
                stage,
                detail: format!("record {} is {}", r.record_id, r.status.name()),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- sanitize

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SanitizeSummary {
    pub sanitized: u64,
    pub rejected: u64,
    pub skipped: u64,
}

fn build_tagger(kind: TaggerKind, cfg: &RunConfig) -> Result<Box<dyn Tagger>, PipelineError> {
    Ok(match kind {
        TaggerKind::Gazetteer => {
            let path = cfg.sanitizer.gazetteer.as_ref().ok_or_else(|| {
                ConfigError::Invalid("gazetteer tagger selected without a gazetteer file".into())
            })?;
            Box::new(GazetteerTagger::from_file(path)?)
        }
        TaggerKind::Heuristic => Box::new(HeuristicTagger::default()),
        TaggerKind::None => Box::new(NullTagger),
    })
}

pub fn sanitize(cfg: &RunConfig) -> Result<SanitizeSummary, PipelineError> {
    let mut run = StageRun::begin(cfg, "sanitize")?;
    let mut rules = cfg.sanitizer.rules.clone();
    if let Some(p) = &cfg.sanitizer.blocked_words_file {
        rules.load_blocked_words(p)?;
    }
    rules.validate()?;
    let first = build_tagger(cfg.sanitizer.first_tagger, cfg)?;
    let second = build_tagger(cfg.sanitizer.second_tagger, cfg)?;

    let mut store = ManifestStore::open(&cfg.manifest)?;
    let mut summary = SanitizeSummary::default();
    let mut log = String::new();
    for rec in store.records().to_vec() {
        if rec.status != Status::Pending {
            summary.skipped += 1;
            continue;
        }
        let mut rec = rec;
        let mut rejection = None;
        for which in [1u8, 2] {
            let raw = if which == 1 { &rec.caption1_raw } else { &rec.caption2_raw };
            match sanitize_caption(&rec.record_id, raw, first.as_ref(), second.as_ref(), &rules)? {
                ScreenOutcome::Accepted(clean) => {
                    if which == 1 {
                        rec.caption1_clean = Some(clean);
                    } else {
                        rec.caption2_clean = Some(clean);
                    }
                }
                ScreenOutcome::Rejected(reason) => {
                    rejection = Some(format!("screen: caption{which} {reason}"));
                    break;
                }
            }
        }
        match rejection {
            Some(reason) => {
                log.push_str(&format!("{}\trejected\t{reason}\n", rec.record_id));
                rec.advance(Status::Rejected { reason })?;
                summary.rejected += 1;
            }
            None => {
                rec.advance(Status::Sanitized)?;
                summary.sanitized += 1;
            }
        }
        store.update(rec)?;
    }
    store.compact()?;
    run.write("sanitize.log", log.as_bytes())?;
    run.finish(&summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- generate

pub fn generate(cfg: &RunConfig) -> Result<StageReport, PipelineError> {
    let generator = Generator::new(cfg.active_backend()?.clone())?;
    generate_with(cfg, &generator)
}

/// Generation with a caller-supplied generator (tests inject clocks and fakes).
pub fn generate_with(cfg: &RunConfig, generator: &Generator) -> Result<StageReport, PipelineError> {
    let mut run = StageRun::begin(cfg, "generate")?;
    let mut store = ManifestStore::open(&cfg.manifest)?;
    let log_path = run.output("generate.log.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let mut log_err = None;
    let report = run_generation_stage(&mut store, generator, &cfg.images_dir, cfg.workers, |ev| {
        let line = serde_json::to_string(ev).expect("event serializes");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(io_err(&log_path)(e));
    }
    run.write("generate.report.json", &to_json_pretty(&report))?;
    run.finish(&report)?;
    Ok(report)
}

// ---------------------------------------------------------------- embed

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub featurizer: String,
    pub config_digest: String,
    pub records: u64,
    pub images: u64,
    pub computed: u64,
    pub cached: u64,
    pub failed: u64,
    pub failures: Vec<String>,
}

/// The three images of a record: original, generated 1, generated 2.
fn record_images(cfg: &RunConfig, rec: &Record) -> Option<[PathBuf; 3]> {
    Some([
        manifest_relative(cfg, &rec.original_image),
        manifest_relative(cfg, &rec.gen1.as_ref()?.path),
        manifest_relative(cfg, &rec.gen2.as_ref()?.path),
    ])
}

pub fn cache_path(cfg: &RunConfig, featurizer_digest: &str) -> PathBuf {
    cfg.cache_dir.join(format!("{featurizer_digest}.emb"))
}

fn open_cache(cfg: &RunConfig, digest: &str) -> Result<EmbeddingCache, PipelineError> {
    fs::create_dir_all(&cfg.cache_dir).map_err(io_err(&cfg.cache_dir))?;
    Ok(EmbeddingCache::open(&cache_path(cfg, digest))?)
}

enum Lookup {
    Hit(Vec<f32>),
    Computed(Vec<f32>),
}

impl Lookup {
    fn values(self) -> Vec<f32> {
        match self {
            Lookup::Hit(v) | Lookup::Computed(v) => v,
        }
    }
}

/// Embedding of the image at `path`, from the cache when present. With
/// `compute` false a miss is a prerequisite error naming the embed stage.
fn lookup_embedding(
    feat: &Featurizer,
    cache: &EmbeddingCache,
    path: &Path,
    compute: bool,
) -> Result<Lookup, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let key = EmbeddingCache::key(&bytes, feat.digest());
    if let Some(v) = cache.get(&key) {
        return Ok(Lookup::Hit(v));
    }
    if !compute {
        return Err(PipelineError::Prerequisite {
            stage: "embed",
            detail: format!(
                "no embedding of {} for featurizer {}",
                path.display(),
                feat.config().label()
            ),
        });
    }
    let v = feat.embed_bytes(&bytes, path)?;
    cache.put(&key, &v.values)?;
    Ok(Lookup::Computed(v.values))
}

type RecordEmbeddings = [Vec<f32>; 3];

fn embed_records(
    cfg: &RunConfig,
    records: &[Record],
    feat: &Featurizer,
    cache: &EmbeddingCache,
    compute: bool,
    workers: usize,
) -> Vec<Result<(RecordEmbeddings, u64), PipelineError>> {
    par_map(records, workers, |rec| {
        let paths = record_images(cfg, rec).ok_or_else(|| PipelineError::Prerequisite {
            stage: "generate",
            detail: format!("record {} has no generated images", rec.record_id),
        })?;
        let mut computed = 0;
        let mut out: Vec<Vec<f32>> = Vec::with_capacity(3);
        for p in &paths {
            match lookup_embedding(feat, cache, p, compute)? {
                Lookup::Computed(v) => {
                    computed += 1;
                    out.push(v);
                }
                hit => out.push(hit.values()),
            }
        }
        let [a, b, c]: [Vec<f32>; 3] = out.try_into().expect("three images");
        Ok(([a, b, c], computed))
    })
}

pub fn embed(cfg: &RunConfig) -> Result<EmbedSummary, PipelineError> {
    let mut run = StageRun::begin(cfg, "embed")?;
    let feat = Featurizer::load(cfg.featurizer.clone(), &cfg.models_dir)?;
    let mut store = ManifestStore::open(&cfg.manifest)?;
    require_status(store.records(), &Status::Generated, "generate")?;
    let cache = open_cache(cfg, feat.digest())?;

    let todo: Vec<Record> = store
        .records()
        .iter()
        .filter(|r| !r.status.is_rejected())
        .cloned()
        .collect();
    let results = embed_records(cfg, &todo, &feat, &cache, true, cfg.workers);
    cache.flush()?;

    let mut summary = EmbedSummary {
        featurizer: feat.config().label(),
        config_digest: feat.digest().to_string(),
        ..Default::default()
    };
    for (mut rec, res) in todo.into_iter().zip(results) {
        summary.records += 1;
        match res {
            Ok((_, computed)) => {
                summary.images += 3;
                summary.computed += computed;
                summary.cached += 3 - computed;
                if !rec.status.reached(&Status::Embedded) {
                    rec.advance(Status::Embedded)?;
                    store.update(rec)?;
                }
            }
            Err(e @ PipelineError::Feature(FeatureError::Decode { .. })) | Err(e @ PipelineError::Io { .. }) => {
                summary.failed += 1;
                summary.failures.push(format!("{}: {e}", rec.record_id));
            }
            Err(e) => return Err(e),
        }
    }
    store.compact()?;
    run.write("embed.report.json", &to_json_pretty(&summary))?;
    run.finish(&summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub mode: DecisionMode,
    pub featurizer: String,
    pub threshold: f64,
    pub tie_rule: String,
    pub n: u64,
    pub ooc: u64,
    pub nooc: u64,
    pub excluded_rejected: u64,
    pub predictions: PathBuf,
}

/// Scores and labels records from their three embeddings.
pub fn decide(
    ids: &[String],
    embeddings: &[RecordEmbeddings],
    decision: &DecisionConfig,
    mode: DecisionMode,
) -> Result<(Vec<Prediction>, f64), PipelineError> {
    match mode {
        DecisionMode::OrigVsGen => {
            let mut preds = Vec::with_capacity(ids.len());
            for (id, [orig, g1, g2]) in ids.iter().zip(embeddings) {
                let pair = SimilarityPair {
                    sim1: cosine(orig, g1)?,
                    sim2: cosine(orig, g2)?,
                };
                preds.push(predict_orig_gen(id, pair, decision.threshold)?);
            }
            Ok((preds, decision.threshold))
        }
        DecisionMode::GenVsGen => {
            let mut scores = Vec::with_capacity(ids.len());
            for (id, [_, g1, g2]) in ids.iter().zip(embeddings) {
                scores.push((id.clone(), cosine(g1, g2)?));
            }
            Ok(predict_gen_gen_run(&scores, decision.gen_threshold_source)?)
        }
        DecisionMode::External => Err(ConfigError::Invalid(
            "external labels are not produced by the predict stage".into(),
        )
        .into()),
    }
}

pub fn predictions_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("predictions.jsonl")
}

pub fn predict(cfg: &RunConfig) -> Result<PredictSummary, PipelineError> {
    let mut run = StageRun::begin(cfg, "predict")?;
    let mut store = ManifestStore::open(&cfg.manifest)?;
    require_status(store.records(), &Status::Embedded, "embed")?;
    let feat = Featurizer::load(cfg.featurizer.clone(), &cfg.models_dir)?;
    let cache = open_cache(cfg, feat.digest())?;

    let live: Vec<Record> = store
        .records()
        .iter()
        .filter(|r| !r.status.is_rejected())
        .cloned()
        .collect();
    let excluded_rejected = (store.len() - live.len()) as u64;
    if live.is_empty() {
        return Err(EvalError::Empty.into());
    }
    let embeddings = embed_records(cfg, &live, &feat, &cache, false, cfg.workers)
        .into_iter()
        .map(|r| r.map(|(e, _)| e))
        .collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<String> = live.iter().map(|r| r.record_id.clone()).collect();
    let mode = cfg.decision.mode;
    let (preds, threshold) = decide(&ids, &embeddings, &cfg.decision, mode)?;

    let path = run.output("predictions.jsonl");
    write_predictions(&path, &preds)?;
    for mut rec in live {
        if !rec.status.reached(&Status::Predicted) {
            rec.advance(Status::Predicted)?;
            store.update(rec)?;
        }
    }
    store.compact()?;

    let ooc = preds.iter().filter(|p| p.label == Label::Ooc).count() as u64;
    let summary = PredictSummary {
        mode,
        featurizer: feat.config().label(),
        threshold,
        tie_rule: TIE_RULE.into(),
        n: preds.len() as u64,
        ooc,
        nooc: preds.len() as u64 - ooc,
        excluded_rejected,
        predictions: path,
    };
    run.finish(&summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub metrics: MetricsReport,
    pub excluded_rejected: u64,
    pub tie_rule: String,
}

/// Gold labels from the configured file, or from the manifest.
fn gold_labels(cfg: &RunConfig, gold: Option<&Path>) -> Result<BTreeMap<String, Label>, PipelineError> {
    if let Some(p) = gold.or(cfg.gold.as_deref()) {
        return Ok(read_gold(p)?);
    }
    let records = load_manifest(&cfg.manifest)?;
    Ok(records
        .iter()
        .filter(|r| !r.status.is_rejected())
        .filter_map(|r| r.gold_label.map(|g| (r.record_id.clone(), g)))
        .collect())
}

fn rejected_count(cfg: &RunConfig) -> u64 {
    load_manifest(&cfg.manifest)
        .map(|rs| rs.iter().filter(|r| r.status.is_rejected()).count() as u64)
        .unwrap_or(0)
}

pub fn metrics_text(m: &MetricsReport) -> String {
    let show = |name: &str, r: Option<crate::evaluation::Ratio>| match r {
        Some(r) => format!("{name:<10} {:.3}  ({r})\n", r.value()),
        None => format!("{name:<10} undefined (zero denominator)\n"),
    };
    let mut s = format!("{}\nn          {}\n", m.descriptor, m.n);
    s.push_str(&show("accuracy", Some(m.accuracy)));
    s.push_str(&show("precision", m.precision));
    s.push_str(&show("recall", m.recall));
    s.push_str(&show("f1", m.f1));
    let c = &m.confusion;
    s.push_str(&format!("confusion  tp={} fp={} tn={} fn={}\n", c.tp, c.fp, c.tn, c.fn_));
    s
}

pub fn evaluate(
    cfg: &RunConfig,
    predictions: Option<&Path>,
    gold: Option<&Path>,
) -> Result<EvaluateSummary, PipelineError> {
    let mut run = StageRun::begin(cfg, "evaluate")?;
    let pred_path = predictions.map(Path::to_path_buf).unwrap_or_else(|| predictions_path(cfg));
    if !pred_path.exists() {
        return Err(PipelineError::Prerequisite {
            stage: "predict",
            detail: format!("{} not found", pred_path.display()),
        });
    }
    let preds = read_predictions(&pred_path)?;
    let gold = gold_labels(cfg, gold)?;
    let descriptor = match preds.first() {
        Some(p) if p.mode != DecisionMode::External => {
            format!("{} {}", cfg.featurizer.label(), p.mode.as_str())
        }
        _ => pred_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let metrics = compute_metrics(&descriptor, &preds, &gold)?;
    let summary = EvaluateSummary {
        metrics,
        excluded_rejected: rejected_count(cfg),
        tie_rule: TIE_RULE.into(),
    };
    run.write("metrics.json", &to_json_pretty(&summary))?;
    run.write("metrics.txt", metrics_text(&summary.metrics).as_bytes())?;
    run.finish(&summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- survey

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyReport {
    pub pairs: Vec<SurveySummary>,
    /// Survey labels scored against gold, over pairs that have gold.
    pub metrics: Option<MetricsReport>,
    /// Fraction of pairs where survey and model predictions agree.
    pub agreement: Option<crate::evaluation::Ratio>,
}

pub fn survey(
    cfg: &RunConfig,
    ratings: &Path,
    predictions: Option<&Path>,
    gold: Option<&Path>,
) -> Result<SurveyReport, PipelineError> {
    let mut run = StageRun::begin(cfg, "survey")?;
    let known: Option<BTreeSet<String>> = load_manifest(&cfg.manifest)
        .ok()
        .filter(|rs| !rs.is_empty())
        .map(|rs| rs.into_iter().map(|r| r.record_id).collect());
    let pairs = ingest_survey_file(ratings, known.as_ref())?;
    let labels = survey_predictions(&pairs);

    let gold = gold_labels(cfg, gold).unwrap_or_default();
    let with_gold: Vec<Prediction> = labels
        .iter()
        .filter(|p| gold.contains_key(&p.record_id))
        .cloned()
        .collect();
    let metrics = if with_gold.is_empty() {
        None
    } else {
        Some(compute_metrics("survey", &with_gold, &gold)?)
    };
    let agreement = match predictions {
        Some(p) => Some(agreement_by_id(&labels, &read_predictions(p)?)?),
        None => None,
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &pairs {
        w.serialize(s).map_err(|e| io_err(ratings)(e.into()))?;
    }
    let csv_bytes = w.into_inner().expect("in-memory csv");
    run.write("survey.csv", &csv_bytes)?;
    let report = SurveyReport {
        pairs,
        metrics,
        agreement,
    };
    run.write("survey.json", &to_json_pretty(&report))?;
    run.finish(&serde_json::json!({
        "pairs": report.pairs.len(),
        "agreement": report.agreement,
    }))?;
    Ok(report)
}

// ---------------------------------------------------------------- matrix

pub fn matrix(cfg: &RunConfig) -> Result<MatrixReport, PipelineError> {
    let mut run = StageRun::begin(cfg, "matrix")?;
    let records: Vec<Record> = load_manifest(&cfg.manifest)?
        .into_iter()
        .filter(|r| !r.status.is_rejected())
        .collect();
    require_status(&records, &Status::Generated, "generate")?;
    let gold: BTreeMap<String, Label> = gold_labels(cfg, None)?;
    let records: Vec<Record> = records
        .into_iter()
        .filter(|r| gold.contains_key(&r.record_id))
        .collect();
    if records.is_empty() {
        return Err(EvalError::Empty.into());
    }
    let ids: Vec<String> = records.iter().map(|r| r.record_id.clone()).collect();

    // Cells that share a featurizer share its embeddings; compute them once.
    type Shared = Arc<Result<Vec<RecordEmbeddings>, String>>;
    let embedded: Mutex<HashMap<String, Arc<Mutex<Option<Shared>>>>> = Mutex::new(HashMap::new());
    let inner_workers = (cfg.workers / cfg.matrix_workers).max(1);

    let report = run_matrix(&cfg.matrix, cfg.matrix_workers, |cell| {
        let fcfg = FeaturizerConfig {
            encoder_id: cell.encoder.clone(),
            ..cfg.featurizer.clone()
        }
        .with_detector(cell.detector.as_deref());
        let slot = embedded
            .lock()
            .unwrap()
            .entry(fcfg.digest())
            .or_default()
            .clone();
        let shared = {
            let mut guard = slot.lock().unwrap();
            guard
                .get_or_insert_with(|| {
                    let r = (|| {
                        let feat = Featurizer::load(fcfg.clone(), &cfg.models_dir)?;
                        let cache = open_cache(cfg, feat.digest())?;
                        let embs = embed_records(cfg, &records, &feat, &cache, true, inner_workers)
                            .into_iter()
                            .map(|r| r.map(|(e, _)| e))
                            .collect::<Result<Vec<_>, _>>()?;
                        cache.flush()?;
                        Ok::<_, PipelineError>(embs)
                    })();
                    Arc::new(r.map_err(|e| e.to_string()))
                })
                .clone()
        };
        let embs = shared.as_ref().as_ref().map_err(Clone::clone)?;
        let (preds, _) = decide(&ids, embs, &cfg.decision, cell.mode).map_err(|e| e.to_string())?;
        compute_metrics(&cell.name(), &preds, &gold).map_err(|e| e.to_string())
    });
    run.write("matrix.csv", report.to_csv().as_bytes())?;
    run.write("matrix.txt", report.to_text().as_bytes())?;
    let failed = report
        .cells
        .iter()
        .filter(|c| matches!(c.outcome, crate::evaluation::CellOutcome::Failed(_)))
        .count();
    run.finish(&serde_json::json!({"cells": report.cells.len(), "failed": failed}))?;
    Ok(report)
}
