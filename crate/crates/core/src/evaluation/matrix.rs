use std::cmp::Ordering;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{MetricsReport, Ratio};
use crate::decision::DecisionMode;

/// Axes of the benchmark grid. A detector named `none` means encoder-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixSpec {
    pub encoders: Vec<String>,
    pub detectors: Vec<String>,
    pub modes: Vec<DecisionMode>,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec {
            encoders: vec!["mock".into()],
            detectors: vec!["none".into(), "mock".into()],
            modes: vec![DecisionMode::OrigVsGen, DecisionMode::GenVsGen],
        }
    }
}

impl MatrixSpec {
    pub fn cells(&self) -> Vec<MatrixCell> {
        let mut out = Vec::new();
        for e in &self.encoders {
            for d in &self.detectors {
                for m in &self.modes {
                    out.push(MatrixCell {
                        encoder: e.clone(),
                        detector: (d != "none").then(|| d.clone()),
                        mode: *m,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub encoder: String,
    pub detector: Option<String>,
    pub mode: DecisionMode,
}

impl MatrixCell {
    pub fn detector_name(&self) -> &str {
        self.detector.as_deref().unwrap_or("none")
    }

    pub fn name(&self) -> String {
        format!("{}+{}/{}", self.encoder, self.detector_name(), self.mode.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOutcome {
    Ok(MetricsReport),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: MatrixCell,
    pub outcome: CellOutcome,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixReport {
    /// Sorted by accuracy, best first; failed cells last.
    pub cells: Vec<CellResult>,
}

fn cmp_ratio(a: Ratio, b: Ratio) -> Ordering {
    (u128::from(a.num) * u128::from(b.den)).cmp(&(u128::from(b.num) * u128::from(a.den)))
}

fn order(a: &CellResult, b: &CellResult) -> Ordering {
    match (&a.outcome, &b.outcome) {
        (CellOutcome::Ok(x), CellOutcome::Ok(y)) => cmp_ratio(y.accuracy, x.accuracy),
        (CellOutcome::Ok(_), CellOutcome::Failed(_)) => Ordering::Less,
        (CellOutcome::Failed(_), CellOutcome::Ok(_)) => Ordering::Greater,
        _ => Ordering::Equal,
    }
    .then_with(|| a.cell.name().cmp(&b.cell.name()))
}

/// Evaluates every cell of `spec` with at most `workers` cells in flight.
/// A cell whose evaluation errors or panics is reported as failed and the
/// others still run.
pub fn run_matrix<F>(spec: &MatrixSpec, workers: usize, eval: F) -> MatrixReport
where
    F: Fn(&MatrixCell) -> Result<MetricsReport, String> + Sync,
{
    let cells = spec.cells();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(cells.len()));
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, cells.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, AtomicOrdering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                let started = Instant::now();
                let outcome = match catch_unwind(AssertUnwindSafe(|| eval(cell))) {
                    Ok(Ok(m)) => CellOutcome::Ok(m),
                    Ok(Err(e)) => CellOutcome::Failed(e),
                    Err(_) => CellOutcome::Failed("cell panicked".into()),
                };
                if let CellOutcome::Failed(e) = &outcome {
                    log::warn!("matrix cell {} failed: {e}", cell.name());
                }
                results.lock().unwrap().push(CellResult {
                    cell: cell.clone(),
                    outcome,
                    wall_time_secs: started.elapsed().as_secs_f64(),
                });
            });
        }
    });
    let mut cells = results.into_inner().unwrap();
    cells.sort_by(order);
    MatrixReport { cells }
}

fn frac(r: Option<Ratio>) -> (String, String) {
    match r {
        Some(r) => (format!("{:.6}", r.value()), r.to_string()),
        None => (String::new(), String::new()),
    }
}

impl MatrixReport {
    /// Machine-readable table. Carries exact fractions and no timings, so
    /// identical inputs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "encoder", "detector", "mode", "status", "n", "tp", "fp", "tn", "fn", "accuracy",
            "accuracy_frac", "precision", "precision_frac", "recall", "recall_frac", "f1", "f1_frac",
            "error",
        ])
        .expect("in-memory csv");
        for c in &self.cells {
            let mut row = vec![
                c.cell.encoder.clone(),
                c.cell.detector_name().to_string(),
                c.cell.mode.as_str().to_string(),
            ];
            match &c.outcome {
                CellOutcome::Ok(m) => {
                    row.push("ok".into());
                    for v in [m.n, m.confusion.tp, m.confusion.fp, m.confusion.tn, m.confusion.fn_] {
                        row.push(v.to_string());
                    }
                    for r in [Some(m.accuracy), m.precision, m.recall, m.f1] {
                        let (v, f) = frac(r);
                        row.push(v);
                        row.push(f);
                    }
                    row.push(String::new());
                }
                CellOutcome::Failed(e) => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat_n(String::new(), 13));
                    row.push(e.clone());
                }
            }
            w.write_record(&row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    /// Human-readable table rounded to three decimals, with per-cell wall time.
    pub fn to_text(&self) -> String {
        let three = |r: Option<Ratio>| r.map_or("-".to_string(), |r| format!("{:.3}", r.value()));
        let mut out = format!(
            "{:<16} {:<12} {:<12} {:>5} {:>6} {:>6} {:>6} {:>6} {:>8}\n",
            "encoder", "detector", "mode", "n", "acc", "prec", "rec", "f1", "time_s"
        );
        for c in &self.cells {
            let head = format!(
                "{:<16} {:<12} {:<12}",
                c.cell.encoder,
                c.cell.detector_name(),
                c.cell.mode.as_str()
            );
            match &c.outcome {
                CellOutcome::Ok(m) => out.push_str(&format!(
                    "{head} {:>5} {:>6} {:>6} {:>6} {:>6} {:>8.2}\n",
                    m.n,
                    three(Some(m.accuracy)),
                    three(m.precision),
                    three(m.recall),
                    three(m.f1),
                    c.wall_time_secs
                )),
                CellOutcome::Failed(e) => {
                    out.push_str(&format!("{head} FAILED {e} ({:.2}s)\n", c.wall_time_secs))
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::ConfusionMatrix;

    fn report(tp: u64, tn: u64, wrong: u64) -> MetricsReport {
        let m = ConfusionMatrix {
            tp,
            tn,
            fp: wrong,
            fn_: 0,
        };
        MetricsReport::from_confusion("x", m).unwrap()
    }

    fn spec() -> MatrixSpec {
        MatrixSpec {
            encoders: vec!["a".into(), "b".into()],
            detectors: vec!["none".into(), "d".into()],
            modes: vec![DecisionMode::GenVsGen],
        }
    }

    #[test]
    fn two_encoders_by_none_and_one_detector_is_four_cells() {
        let cells = spec().cells();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells.iter().filter(|c| c.detector.is_none()).count(), 2);
    }

    #[test]
    fn failures_are_isolated_and_sorted_last() {
        let r = run_matrix(&spec(), 3, |c| match (c.encoder.as_str(), c.detector.as_deref()) {
            ("a", None) => Ok(report(5, 3, 2)),
            ("a", Some(_)) => Err("model missing".into()),
            ("b", None) => Ok(report(9, 0, 1)),
            _ => panic!("boom"),
        });
        let names: Vec<String> = r.cells.iter().map(|c| c.cell.name()).collect();
        assert_eq!(
            names,
            ["b+none/gen-vs-gen", "a+none/gen-vs-gen", "a+d/gen-vs-gen", "b+d/gen-vs-gen"]
        );
        assert!(matches!(r.cells[3].outcome, CellOutcome::Failed(_)));
        assert!(r.to_text().contains("FAILED"));
    }

    #[test]
    fn csv_is_deterministic_and_exact() {
        let run = || run_matrix(&spec(), 4, |_| Ok(report(1, 2, 1))).to_csv();
        let a = run();
        assert_eq!(a, run());
        assert!(a.contains("0.750000,3/4"));
        assert_eq!(a.lines().count(), 5);
    }

    #[test]
    fn ties_break_by_name() {
        let r = run_matrix(&spec(), 1, |_| Ok(report(1, 1, 0)));
        let names: Vec<String> = r.cells.iter().map(|c| c.cell.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }
}
