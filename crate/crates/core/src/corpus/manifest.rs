use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{CorpusError, Record};

/// Read a manifest: one JSON record per line, blank lines ignored.
///
/// Updates journaled by a [`ManifestStore`] that has not been compacted yet
/// are applied on top, so readers always see the latest durable state.
pub fn load_manifest(path: &Path) -> Result<Vec<Record>, CorpusError> {
    let (mut records, index) = read_base(path)?;
    apply_journal(path, &mut records, &index)?;
    Ok(records)
}

fn journal_path(path: &Path) -> PathBuf {
    sibling(path, "journal")
}

fn lock_path(path: &Path) -> PathBuf {
    sibling(path, "lock")
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn read_base(path: &Path) -> Result<(Vec<Record>, HashMap<String, usize>), CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut records = Vec::new();
    let mut index = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(path, i + 1, &line)?;
        if index.insert(record.record_id.clone(), records.len()).is_some() {
            return Err(CorpusError::DuplicateId(record.record_id));
        }
        records.push(record);
    }
    Ok((records, index))
}

fn parse_line(path: &Path, line_no: usize, line: &str) -> Result<Record, CorpusError> {
    let record: Record = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })?;
    record.validate().map_err(|e| CorpusError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(record)
}

fn apply_journal(
    path: &Path,
    records: &mut [Record],
    index: &HashMap<String, usize>,
) -> Result<(), CorpusError> {
    let jpath = journal_path(path);
    let text = match fs::read_to_string(&jpath) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(CorpusError::io(&jpath, e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = match parse_line(&jpath, i + 1, line) {
            Ok(r) => r,
            // a write torn by a crash can only be the unterminated last line
            Err(_) if !complete && i + 1 == lines.len() => break,
            Err(e) => return Err(e),
        };
        let slot = *index
            .get(&record.record_id)
            .ok_or_else(|| CorpusError::UnknownId(record.record_id.clone()))?;
        records[slot] = record;
    }
    Ok(())
}

/// Single-writer handle on a manifest.
///
/// New records are appended to the manifest itself. Changes to existing
/// records go to a sidecar journal (`<manifest>.journal`) as full snapshots, so
/// a stage never rewrites the manifest mid-run. [`ManifestStore::compact`]
/// folds the journal back in. Every write is synced before it returns.
pub struct ManifestStore {
    path: PathBuf,
    records: Vec<Record>,
    index: HashMap<String, usize>,
    journal: Option<File>,
    _lock: File,
}

impl ManifestStore {
    /// Open for writing, creating an empty manifest if none exists. Fails with
    /// [`CorpusError::Locked`] while another process holds the writer lock.
    pub fn open(path: &Path) -> Result<Self, CorpusError> {
        let lpath = lock_path(path);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lpath)
            .map_err(|e| CorpusError::io(&lpath, e))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(CorpusError::Locked(path.to_path_buf())),
            Err(fs::TryLockError::Error(e)) => return Err(CorpusError::io(&lpath, e)),
        }
        if !path.exists() {
            File::create(path).map_err(|e| CorpusError::io(path, e))?;
        }
        let (mut records, index) = read_base(path)?;
        apply_journal(path, &mut records, &index)?;
        Ok(ManifestStore {
            path: path.to_path_buf(),
            records,
            index,
            journal: None,
            _lock: lock,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Append a new record. Durable once this returns.
    pub fn append(&mut self, record: Record) -> Result<(), CorpusError> {
        record.validate()?;
        if self.index.contains_key(&record.record_id) {
            return Err(CorpusError::DuplicateId(record.record_id));
        }
        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| CorpusError::io(&self.path, e))?;
        write_line(&mut file, &record).map_err(|e| CorpusError::io(&self.path, e))?;
        self.index.insert(record.record_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    /// Replace an existing record. Durable once this returns.
    pub fn update(&mut self, record: Record) -> Result<(), CorpusError> {
        record.validate()?;
        let slot = *self
            .index
            .get(&record.record_id)
            .ok_or_else(|| CorpusError::UnknownId(record.record_id.clone()))?;
        if self.records[slot] == record {
            return Ok(());
        }
        let jpath = journal_path(&self.path);
        if self.journal.is_none() {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&jpath)
                .map_err(|e| CorpusError::io(&jpath, e))?;
            self.journal = Some(f);
        }
        let file = self.journal.as_mut().expect("journal opened above");
        write_line(file, &record).map_err(|e| CorpusError::io(&jpath, e))?;
        self.records[slot] = record;
        Ok(())
    }

    /// Rewrite the manifest with all journaled updates applied and drop the
    /// journal. The rewrite goes through a temp file and rename.
    pub fn compact(&mut self) -> Result<(), CorpusError> {
        let tmp = sibling(&self.path, "tmp");
        {
            let mut f = File::create(&tmp).map_err(|e| CorpusError::io(&tmp, e))?;
            let mut buf = Vec::new();
            for r in &self.records {
                serde_json::to_writer(&mut buf, r).expect("records serialize");
                buf.push(b'\n');
            }
            f.write_all(&buf).map_err(|e| CorpusError::io(&tmp, e))?;
            f.sync_all().map_err(|e| CorpusError::io(&tmp, e))?;
        }
        fs::rename(&tmp, &self.path).map_err(|e| CorpusError::io(&self.path, e))?;
        self.journal = None;
        let jpath = journal_path(&self.path);
        match fs::remove_file(&jpath) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(CorpusError::io(&jpath, e)),
        }
    }
}

fn write_line(file: &mut File, record: &Record) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(record).expect("records serialize");
    line.push(b'\n');
    file.write_all(&line)?;
    file.sync_data()
}
