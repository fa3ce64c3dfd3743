use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Instant;

use chrono::Utc;
use serde::Serialize;

use super::{png_dimensions, GenError, Generator};
use crate::corpus::{GeneratedImageRef, ManifestStore, Record, Status};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageReport {
    pub backend_id: String,
    /// Images produced by backend calls in this run.
    pub generated: u64,
    /// Records already at `generated` or later.
    pub skipped: u64,
    /// Images found on disk from an interrupted run and adopted without a call.
    pub recovered: u64,
    pub policy_rejected: u64,
    pub failed: u64,
    pub requests: u64,
    pub wall_time_secs: f64,
    pub failures: Vec<StageEvent>,
}

/// One line of the stage log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageEvent {
    pub record_id: String,
    pub caption: u8,
    pub event: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// `<record_id>_c<1|2>_<backend_id>.png`, with path-hostile characters in the
/// id replaced by `_`.
pub fn image_file_name(record_id: &str, which: u8, backend_id: &str) -> String {
    let id: String = record_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_') { c } else { '_' })
        .collect();
    format!("{id}_c{which}_{backend_id}.png")
}

struct Job {
    record_id: String,
    which: u8,
    prompt: String,
    path: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("image");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn image_ref(path: &Path, gen: &Generator) -> GeneratedImageRef {
    let cfg = gen.config();
    GeneratedImageRef {
        path: path.to_path_buf(),
        backend: cfg.backend_id.clone(),
        seed: cfg.seed,
        width: cfg.size,
        height: cfg.size,
        created_at: Utc::now(),
    }
}

fn complete_if_ready(rec: &mut Record) -> Result<(), GenError> {
    if rec.gen1.is_some() && rec.gen2.is_some() && !rec.status.reached(&Status::Generated) {
        rec.advance(Status::Generated)?;
    }
    Ok(())
}

/// Generates the missing images of every sanitized record.
///
/// Workers call the backend and write each PNG to its final name before
/// handing the result to the calling thread, which is the only writer of the
/// manifest. An interrupted run therefore leaves either no file, or a complete
/// file the next run adopts without calling the backend again.
pub fn run_generation_stage(
    store: &mut ManifestStore,
    gen: &Generator,
    images_dir: &Path,
    workers: usize,
    mut on_event: impl FnMut(&StageEvent),
) -> Result<StageReport, GenError> {
    let started = Instant::now();
    let granted_before = gen.limiter().granted();
    let cfg = gen.config().clone();
    let mut report = StageReport {
        backend_id: cfg.backend_id.clone(),
        ..Default::default()
    };

    for rec in store.records() {
        if !rec.status.is_rejected() && !rec.status.reached(&Status::Sanitized) {
            return Err(GenError::Prerequisite {
                stage: "sanitize",
                record_id: rec.record_id.clone(),
                status: rec.status.name().into(),
            });
        }
    }
    fs::create_dir_all(images_dir).map_err(|e| GenError::io(images_dir, e))?;

    let mut jobs = Vec::new();
    let snapshot: Vec<Record> = store.records().to_vec();
    for mut rec in snapshot {
        if rec.status.is_rejected() {
            continue;
        }
        if rec.status.reached(&Status::Generated) {
            report.skipped += 1;
            continue;
        }
        let mut adopted = false;
        for which in [1u8, 2] {
            if rec.gen_ref(which).is_some_and(|g| g.path.exists()) {
                continue;
            }
            let path = images_dir.join(image_file_name(&rec.record_id, which, &cfg.backend_id));
            let on_disk = fs::read(&path).ok().and_then(|b| png_dimensions(&b));
            if on_disk == Some((cfg.size, cfg.size)) {
                rec.set_gen_ref(which, image_ref(&path, gen));
                report.recovered += 1;
                adopted = true;
                on_event(&StageEvent {
                    record_id: rec.record_id.clone(),
                    caption: which,
                    event: "recovered",
                    path: Some(path),
                    message: None,
                });
                continue;
            }
            let prompt = rec.clean_caption(which).unwrap_or_default().to_string();
            jobs.push(Job {
                record_id: rec.record_id.clone(),
                which,
                prompt,
                path,
            });
        }
        if adopted {
            complete_if_ready(&mut rec)?;
            store.update(rec)?;
        }
    }

    let (job_tx, job_rx) = mpsc::channel::<Job>();
    for j in jobs {
        job_tx.send(j).expect("receiver alive");
    }
    drop(job_tx);
    let job_rx = Mutex::new(job_rx);
    let (res_tx, res_rx) = mpsc::channel::<(Job, Result<(), GenError>)>();

    let mut first_error = None;
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            let res_tx = res_tx.clone();
            let job_rx = &job_rx;
            s.spawn(move || loop {
                let job = match job_rx.lock().unwrap().recv() {
                    Ok(j) => j,
                    Err(_) => break,
                };
                let req = gen.request(&job.prompt);
                let outcome = gen
                    .generate(&req)
                    .and_then(|png| write_atomic(&job.path, &png).map_err(|e| GenError::io(&job.path, e)));
                if res_tx.send((job, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(res_tx);

        for (job, outcome) in res_rx {
            if first_error.is_some() {
                continue;
            }
            let Some(mut rec) = store.get(&job.record_id).cloned() else {
                continue;
            };
            let mut event = StageEvent {
                record_id: job.record_id.clone(),
                caption: job.which,
                event: "generated",
                path: None,
                message: None,
            };
            let applied = match outcome {
                Ok(()) => {
                    report.generated += 1;
                    event.path = Some(job.path.clone());
                    if rec.status.is_rejected() {
                        Ok(())
                    } else {
                        rec.set_gen_ref(job.which, image_ref(&job.path, gen));
                        complete_if_ready(&mut rec).and_then(|_| Ok(store.update(rec)?))
                    }
                }
                Err(GenError::PolicyRejected { reason, .. }) => {
                    report.policy_rejected += 1;
                    event.event = "policy_rejected";
                    event.message = Some(reason.clone());
                    if rec.status.is_rejected() {
                        Ok(())
                    } else {
                        rec.advance(Status::Rejected {
                            reason: format!("policy: {reason}"),
                        })
                        .map_err(GenError::from)
                        .and_then(|_| Ok(store.update(rec)?))
                    }
                }
                Err(e) => {
                    report.failed += 1;
                    event.event = "failed";
                    event.message = Some(e.to_string());
                    report.failures.push(event.clone());
                    Ok(())
                }
            };
            on_event(&event);
            if let Err(e) = applied {
                first_error = Some(e);
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    store.compact()?;
    report.requests = gen.limiter().granted() - granted_before;
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genclient::{BackendConfig, Backend, GenRequest, SimClock};
    use std::sync::atomic::{AtomicU64, Ordering};
    use std::sync::Arc;

    fn corpus(dir: &Path, n: usize) -> ManifestStore {
        let mut store = ManifestStore::open(&dir.join("manifest.jsonl")).unwrap();
        for i in 0..n {
            let mut r = Record::new(format!("r{i}"), "orig.png", "a", "b");
            r.caption1_clean = Some(format!("a red barn number {i}"));
            r.caption2_clean = Some(format!("the blue sea {i}"));
            r.advance(Status::Sanitized).unwrap();
            store.append(r).unwrap();
        }
        store
    }

    struct Counting {
        calls: AtomicU64,
        refuse: &'static str,
    }

    impl Backend for Counting {
        fn id(&self) -> &str {
            "count"
        }
        fn call(&self, req: &GenRequest) -> Result<Vec<u8>, GenError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if !self.refuse.is_empty() && req.prompt.contains(self.refuse) {
                return Err(GenError::PolicyRejected {
                    backend: "count".into(),
                    reason: "nope".into(),
                });
            }
            Ok(super::super::mock_image(&req.prompt, 0, req.width))
        }
    }

    fn generator(refuse: &'static str) -> (Generator, Arc<Counting>) {
        let b = Arc::new(Counting {
            calls: AtomicU64::new(0),
            refuse,
        });
        let cfg = BackendConfig {
            size: 256,
            ..BackendConfig::mock("count")
        };
        (Generator::with_backend(cfg, b.clone(), Arc::new(SimClock::new())), b)
    }

    #[test]
    fn ten_records_then_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = corpus(dir.path(), 10);
        let (g, b) = generator("");
        let images = dir.path().join("images");
        let r = run_generation_stage(&mut store, &g, &images, 3, |_| {}).unwrap();
        assert_eq!((r.generated, r.skipped, r.failed), (20, 0, 0));
        assert_eq!(fs::read_dir(&images).unwrap().count(), 20);
        assert!(store.records().iter().all(|r| r.status == Status::Generated));
        let r = run_generation_stage(&mut store, &g, &images, 3, |_| {}).unwrap();
        assert_eq!((r.generated, r.skipped), (0, 10));
        assert_eq!(b.calls.load(Ordering::SeqCst), 20);
        for rec in store.records() {
            assert!(rec.gen1.as_ref().unwrap().path.exists());
        }
    }

    #[test]
    fn existing_images_are_adopted() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = corpus(dir.path(), 2);
        let images = dir.path().join("images");
        fs::create_dir_all(&images).unwrap();
        let p = images.join(image_file_name("r0", 1, "count"));
        fs::write(&p, super::super::mock_image("a red barn number 0", 0, 256)).unwrap();
        // a torn file is regenerated
        fs::write(images.join(image_file_name("r1", 1, "count")), b"\x89PNG").unwrap();
        let (g, b) = generator("");
        let r = run_generation_stage(&mut store, &g, &images, 1, |_| {}).unwrap();
        assert_eq!((r.recovered, r.generated), (1, 3));
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn policy_rejection_marks_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = corpus(dir.path(), 3);
        let (g, _) = generator("sea 1");
        let mut events = Vec::new();
        let r = run_generation_stage(&mut store, &g, &dir.path().join("img"), 2, |e| {
            events.push(e.event)
        })
        .unwrap();
        assert_eq!(r.policy_rejected, 1);
        match &store.get("r1").unwrap().status {
            Status::Rejected { reason } => assert!(reason.starts_with("policy: ")),
            s => panic!("{s:?}"),
        }
        assert_eq!(store.get("r0").unwrap().status, Status::Generated);
        assert!(events.contains(&"policy_rejected"));
    }

    #[test]
    fn unsanitized_records_need_sanitize_first() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ManifestStore::open(&dir.path().join("m.jsonl")).unwrap();
        store.append(Record::new("x", "o.png", "a", "b")).unwrap();
        let (g, _) = generator("");
        match run_generation_stage(&mut store, &g, dir.path(), 1, |_| {}) {
            Err(GenError::Prerequisite { stage, .. }) => assert_eq!(stage, "sanitize"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_names() {
        assert_eq!(image_file_name("1699", 2, "sd"), "1699_c2_sd.png");
        assert_eq!(image_file_name("a/b", 1, "m"), "a_b_c1_m.png");
    }
}
