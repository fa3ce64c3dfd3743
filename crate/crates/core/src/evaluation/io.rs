use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Label;
use crate::decision::Prediction;

/// One line of a gold labels file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLine {
    pub record_id: String,
    pub label: Label,
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let f = File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    read_lines(path)
}

/// Gold labels by record id. Also accepts prediction-format lines, since only
/// `record_id` and `label` are read.
pub fn read_gold(path: &Path) -> Result<BTreeMap<String, Label>, EvalError> {
    let mut map = BTreeMap::new();
    for g in read_lines::<GoldLine>(path)? {
        if map.insert(g.record_id.clone(), g.label).is_some() {
            return Err(EvalError::DuplicateId(g.record_id));
        }
    }
    Ok(map)
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), EvalError> {
    let io_err = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut buf, p).expect("predictions serialize");
        buf.push(b'\n');
    }
    let mut f = File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)?;
    f.sync_all().map_err(io_err)
}
