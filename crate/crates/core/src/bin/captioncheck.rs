use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use captioncheck::config::RunConfig;
use captioncheck::decision::{DecisionMode, ThresholdSource};
use captioncheck::pipeline::{self, ExitCategory, PipelineError};

#[derive(Parser)]
#[command(name = "captioncheck", version, about = "Out-of-context image/caption detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults to ./captioncheck.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory for reports and run descriptors.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<DecisionMode>,
    /// Fixed threshold (also fixes the gen-vs-gen threshold).
    #[arg(long, global = true, conflicts_with = "median")]
    threshold: Option<f64>,
    /// Calibrate the gen-vs-gen threshold as the median of the run.
    #[arg(long, global = true)]
    median: bool,
    #[arg(long, global = true)]
    encoder: Option<String>,
    /// Detector id, or `none` for encoder-only embeddings.
    #[arg(long, global = true)]
    detector: Option<String>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    backend: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Replace entities in captions and screen them.
    Sanitize,
    /// Generate one image per sanitized caption.
    Generate,
    /// Embed original and generated images.
    Embed,
    /// Label records from embedding similarities.
    Predict,
    /// Score predictions against gold labels.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Summarize survey ratings and compare with gold and predictions.
    Survey {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Evaluate every encoder x detector x mode combination.
    Matrix,
    /// Write the synthetic mock corpus and its config into a directory.
    Synth {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<DecisionMode, String> {
    s.parse()
}

fn load_config(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None if Path::new("captioncheck.toml").exists() => RunConfig::load(Path::new("captioncheck.toml"))?,
        None => RunConfig::default(),
    };
    if let Some(m) = &c.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(m) = c.mode {
        cfg.decision.mode = m;
    }
    if let Some(t) = c.threshold {
        cfg.decision.threshold = t;
        cfg.decision.gen_threshold_source = ThresholdSource::Fixed(t);
    }
    if c.median {
        cfg.decision.gen_threshold_source = ThresholdSource::MedianOfRun;
    }
    if let Some(e) = &c.encoder {
        cfg.featurizer.encoder_id = e.clone();
    }
    if let Some(d) = &c.detector {
        cfg.featurizer = cfg.featurizer.clone().with_detector(Some(d));
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(b) = &c.backend {
        cfg.backend = Some(b.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summary serializes")
}

fn run(cli: Cli) -> Result<ExitCode, PipelineError> {
    if let Command::Synth { dir } = &cli.command {
        let c = captioncheck::synth::build(dir)?;
        println!("wrote {} records; config {}", c.records, c.config_path.display());
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = load_config(&cli.common)?;
    let partial = ExitCode::from(ExitCategory::Partial as u8);
    match cli.command {
        Command::Sanitize => {
            let s = pipeline::sanitize(&cfg)?;
            println!("{}", json(&s));
        }
        Command::Generate => {
            let r = pipeline::generate(&cfg)?;
            println!("{}", json(&r));
            if r.failed > 0 {
                return Ok(partial);
            }
        }
        Command::Embed => {
            let s = pipeline::embed(&cfg)?;
            println!("{}", json(&s));
            if s.failed > 0 {
                return Ok(partial);
            }
        }
        Command::Predict => {
            let s = pipeline::predict(&cfg)?;
            println!("{}", json(&s));
        }
        Command::Evaluate { predictions, gold } => {
            let s = pipeline::evaluate(&cfg, predictions.as_deref(), gold.as_deref())?;
            print!("{}", pipeline::metrics_text(&s.metrics));
            if s.excluded_rejected > 0 {
                println!("excluded   {} rejected records", s.excluded_rejected);
            }
        }
        Command::Survey {
            ratings,
            predictions,
            gold,
        } => {
            let r = pipeline::survey(&cfg, &ratings, predictions.as_deref(), gold.as_deref())?;
            println!("{} pairs", r.pairs.len());
            if let Some(m) = &r.metrics {
                print!("{}", pipeline::metrics_text(m));
            }
            if let Some(a) = r.agreement {
                println!("agreement  {:.3}  ({a})", a.value());
            }
        }
        Command::Matrix => {
            let r = pipeline::matrix(&cfg)?;
            print!("{}", r.to_text());
            if r
                .cells
                .iter()
                .any(|c| matches!(c.outcome, captioncheck::evaluation::CellOutcome::Failed(_)))
            {
                return Ok(partial);
            }
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category() as u8)
        }
    }
}
