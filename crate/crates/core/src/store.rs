//! The hint database: records with provenance, task and id indexes, source
//! task filtering, and versioned on-disk persistence.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::zoom::{HintRecord, NewHint};

pub const DB_FORMAT: &str = "hintdb";
pub const DB_VERSION: u32 = 1;
pub const RECORDS_FILE: &str = "hints.v1.jsonl";
pub const META_FILE: &str = "hints.meta";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid hint record: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Decode {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("hint db version {found} cannot be read by this build (expected {expected})")]
    Migration { found: u32, expected: u32 },
    #[error("{0}")]
    Format(String),
    #[error("invalid filter mode: {0}")]
    Filter(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbMeta {
    pub format: String,
    pub version: u32,
    /// Settings the database was built with (backend tags, window, modes).
    #[serde(default)]
    pub config: BTreeMap<String, String>,
    /// Evidence position a halted build can resume from.
    #[serde(default)]
    pub resume_cursor: Option<usize>,
}

impl Default for DbMeta {
    fn default() -> Self {
        Self {
            format: DB_FORMAT.into(),
            version: DB_VERSION,
            config: BTreeMap::new(),
            resume_cursor: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FilterMode {
    InTask,
    CrossTask,
    Hybrid {
        /// Fraction of k drawn from the in-task pool.
        in_task_weight: f64,
    },
}

impl Default for FilterMode {
    fn default() -> Self {
        FilterMode::InTask
    }
}

impl FilterMode {
    pub fn hybrid(in_task_weight: f64) -> Result<Self, StoreError> {
        if !(0.0..=1.0).contains(&in_task_weight) {
            return Err(StoreError::Filter(format!(
                "hybrid weight {in_task_weight} outside [0, 1]"
            )));
        }
        Ok(FilterMode::Hybrid { in_task_weight })
    }

    pub fn validate(self) -> Result<Self, StoreError> {
        match self {
            FilterMode::Hybrid { in_task_weight } => Self::hybrid(in_task_weight),
            m => Ok(m),
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterMode::InTask => f.write_str("in_task"),
            FilterMode::CrossTask => f.write_str("cross_task"),
            FilterMode::Hybrid { in_task_weight } => write!(f, "hybrid:{in_task_weight}"),
        }
    }
}

/// Accepts `in_task`, `cross_task`, `hybrid` (weight 0.5) or `hybrid:W`.
impl FromStr for FilterMode {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "in_task" => Ok(FilterMode::InTask),
            "cross_task" => Ok(FilterMode::CrossTask),
            "hybrid" => Self::hybrid(0.5),
            other => match other.strip_prefix("hybrid:") {
                Some(w) => Self::hybrid(
                    w.parse()
                        .map_err(|_| StoreError::Filter(format!("bad hybrid weight '{w}'")))?,
                ),
                None => Err(StoreError::Filter(format!("unknown mode '{other}'"))),
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidatePools<'a> {
    pub in_task: Vec<&'a HintRecord>,
    pub cross_task: Vec<&'a HintRecord>,
}

impl CandidatePools<'_> {
    pub fn len(&self) -> usize {
        self.in_task.len() + self.cross_task.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbStats {
    pub total_entries: usize,
    pub unique_tasks: usize,
    pub avg_hints_per_task: f64,
    pub per_task: BTreeMap<String, usize>,
}

impl fmt::Display for DbStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.per_task.keys().map(String::len).max().unwrap_or(4).max(4);
        writeln!(f, "{:<width$}  hints", "task")?;
        for (task, n) in &self.per_task {
            writeln!(f, "{task:<width$}  {n}")?;
        }
        writeln!(f, "total entries: {}", self.total_entries)?;
        writeln!(f, "unique tasks: {}", self.unique_tasks)?;
        write!(f, "avg hints/task: {:.2}", self.avg_hints_per_task)
    }
}

#[derive(Clone, Debug, Default)]
pub struct HintDb {
    records: Vec<HintRecord>,
    by_task: BTreeMap<String, Vec<usize>>,
    by_id: HashMap<String, usize>,
    dedup: HashMap<(String, String, String), usize>,
    meta: DbMeta,
}

impl PartialEq for HintDb {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.meta == other.meta
    }
}

/// Checks the record-level invariants a stored hint must satisfy.
pub fn check_record(key_context: &str, topic: &str, hint: &str, task_id: &str) -> Result<(), StoreError> {
    let bad = |m: &str| Err(StoreError::Invariant(m.to_string()));
    if hint.trim().is_empty() {
        return bad("empty hint");
    }
    if hint.contains(['\n', '\r']) {
        return bad("hint contains a line break");
    }
    if hint.contains('"') {
        return bad("hint contains a double quote");
    }
    if topic.trim().is_empty() {
        return bad("empty topic");
    }
    if key_context.trim().is_empty() {
        return bad("empty semantic key");
    }
    if key_context.contains(['\n', '\r']) {
        return bad("semantic key spans multiple lines");
    }
    if task_id.is_empty() {
        return bad("empty task_id");
    }
    Ok(())
}

impl HintDb {
    pub fn new(meta: DbMeta) -> Self {
        Self {
            meta,
            ..Self::default()
        }
    }

    pub fn meta(&self) -> &DbMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut DbMeta {
        &mut self.meta
    }

    pub fn records(&self) -> &[HintRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, hint_id: &str) -> Option<&HintRecord> {
        self.by_id.get(hint_id).map(|&i| &self.records[i])
    }

    /// Index of a record within [`HintDb::records`].
    pub fn position(&self, hint_id: &str) -> Option<usize> {
        self.by_id.get(hint_id).copied()
    }

    pub fn for_task(&self, task_id: &str) -> impl Iterator<Item = &HintRecord> {
        self.by_task
            .get(task_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.by_task.keys().map(String::as_str)
    }

    fn next_id(&self) -> String {
        let mut n = self.records.len();
        loop {
            let id = format!("h{n:05}");
            if !self.by_id.contains_key(&id) {
                return id;
            }
            n += 1;
        }
    }

    /// Stores a hint and returns its id. Re-inserting the same
    /// (task, topic, hint) returns the existing id and changes nothing.
    pub fn insert(&mut self, hint: NewHint) -> Result<String, StoreError> {
        check_record(&hint.key.context, &hint.topic, &hint.hint, &hint.task_id)?;
        let dk = (hint.task_id.clone(), hint.topic.clone(), hint.hint.clone());
        if let Some(&i) = self.dedup.get(&dk) {
            return Ok(self.records[i].hint_id.clone());
        }
        let id = self.next_id();
        self.push(hint.into_record(id.clone()), dk);
        Ok(id)
    }

    fn push(&mut self, record: HintRecord, dk: (String, String, String)) {
        let i = self.records.len();
        self.by_task.entry(record.task_id.clone()).or_default().push(i);
        self.by_id.insert(record.hint_id.clone(), i);
        self.dedup.insert(dk, i);
        self.records.push(record);
    }

    fn insert_record(&mut self, record: HintRecord) -> Result<(), StoreError> {
        check_record(&record.key.context, &record.topic, &record.hint, &record.task_id)
            .map_err(|e| StoreError::Invariant(format!("{}: {e}", record.hint_id)))?;
        if self.by_id.contains_key(&record.hint_id) {
            return Err(StoreError::Invariant(format!("duplicate hint_id {}", record.hint_id)));
        }
        let dk = (record.task_id.clone(), record.topic.clone(), record.hint.clone());
        self.push(record, dk);
        Ok(())
    }

    /// Splits the records into the in-task and cross-task pools for a query.
    /// In-task candidates derived from `query_goal` are excluded.
    pub fn filter_candidates(
        &self,
        query_task: &str,
        query_goal: Option<&str>,
        mode: FilterMode,
    ) -> CandidatePools<'_> {
        let same_goal = |r: &HintRecord| query_goal.is_some_and(|g| r.goal_ids.iter().any(|x| x == g));
        let in_task = || {
            self.for_task(query_task)
                .filter(|r| !same_goal(r))
                .collect::<Vec<_>>()
        };
        let cross_task = || {
            self.records
                .iter()
                .filter(|r| r.task_id != query_task)
                .collect::<Vec<_>>()
        };
        match mode {
            FilterMode::InTask => CandidatePools {
                in_task: in_task(),
                cross_task: Vec::new(),
            },
            FilterMode::CrossTask => CandidatePools {
                in_task: Vec::new(),
                cross_task: cross_task(),
            },
            FilterMode::Hybrid { .. } => CandidatePools {
                in_task: in_task(),
                cross_task: cross_task(),
            },
        }
    }

    pub fn stats(&self) -> DbStats {
        let per_task: BTreeMap<String, usize> =
            self.by_task.iter().map(|(t, v)| (t.clone(), v.len())).collect();
        let unique_tasks = per_task.len();
        let total_entries = self.records.len();
        DbStats {
            total_entries,
            unique_tasks,
            avg_hints_per_task: if unique_tasks == 0 {
                0.0
            } else {
                total_entries as f64 / unique_tasks as f64
            },
            per_task,
        }
    }

    /// Writes `hints.v1.jsonl` and `hints.meta` into `dir`. Each file is
    /// written to a temporary sibling and renamed into place.
    pub fn persist(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let records = dir.join(RECORDS_FILE);
        write_atomic(&records, |w| {
            for r in &self.records {
                serde_json::to_writer(&mut *w, r).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;
        let meta = dir.join(META_FILE);
        write_atomic(&meta, |w| {
            serde_json::to_writer_pretty(&mut *w, &self.meta).map_err(std::io::Error::other)?;
            w.write_all(b"\n")
        })
    }

    pub fn restore(dir: &Path) -> Result<Self, StoreError> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let header: serde_json::Value = serde_json::from_str(&text).map_err(|e| StoreError::Decode {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if header.get("format").and_then(|v| v.as_str()) != Some(DB_FORMAT) {
            return Err(StoreError::Format(format!(
                "{} is not a hint db header",
                meta_path.display()
            )));
        }
        let found = header.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != DB_VERSION {
            return Err(StoreError::Migration {
                found,
                expected: DB_VERSION,
            });
        }
        let meta: DbMeta = serde_json::from_value(header).map_err(|e| StoreError::Decode {
            path: meta_path.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        let rec_path = dir.join(RECORDS_FILE);
        let file = fs::File::open(&rec_path).map_err(io_err(&rec_path))?;
        let mut db = HintDb::new(meta);
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&rec_path))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: HintRecord = serde_json::from_str(&line).map_err(|e| StoreError::Decode {
                path: rec_path.clone(),
                line: n + 1,
                message: e.to_string(),
            })?;
            db.insert_record(record)?;
        }
        Ok(db)
    }
}

fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let run = || -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        drop(w);
        fs::rename(&tmp, path)
    };
    run().map_err(|source| {
        let _ = fs::remove_file(&tmp);
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::evidence::{Evidence, EvidenceMode};
    use crate::zoom::{NewHint, SemanticKey};

    pub fn hint(task: &str, goal: &str, context: &str, topic: &str, text: &str) -> NewHint {
        NewHint {
            key: SemanticKey {
                context: context.into(),
                source_prefix_len: 1,
            },
            topic: topic.into(),
            hint: text.into(),
            think: String::new(),
            evidence: Evidence {
                mode: EvidenceMode::Single,
                members: vec![format!("{task}-{goal}")],
                pair_kind: None,
                task_id: task.into(),
            },
            task_id: task.into(),
            goal_ids: vec![goal.into()],
            created_by: "scripted".into(),
        }
    }
}
