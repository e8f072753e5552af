//! Trajectory data model and the `.traces.jsonl` interchange format.
//!
//! A trace is one goal-tagged episode: an ordered list of steps, each holding
//! the observation the agent saw, its free-form reasoning, the UI action it
//! issued, an optional error and the reward received. Files hold one trace
//! per line. Loading never stops at a bad record; invalid lines are collected
//! into a [`LoadReport`] with line-level diagnostics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Extension used by trace interchange files.
pub const TRACE_FILE_SUFFIX: &str = ".traces.jsonl";

/// Tolerance used when comparing the declared total reward against the sum of
/// step rewards.
const REWARD_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid reward literal {0:?}")]
    BadReward(String),
    #[error("duplicate trace_id {0:?}")]
    DuplicateId(String),
    #[error("serialization failed: {0}")]
    Encode(#[from] serde_json::Error),
}

/// A reward value that remembers the decimal literal it was read from.
///
/// Equality compares the literal, so a round-trip through the interchange
/// format is exact regardless of float formatting.
#[derive(Clone, Debug)]
pub struct Reward {
    raw: String,
    value: f64,
}

impl Reward {
    pub fn parse(raw: &str) -> Result<Self, TraceError> {
        let trimmed = raw.trim();
        let value: f64 = trimmed
            .parse()
            .map_err(|_| TraceError::BadReward(raw.to_string()))?;
        if !value.is_finite() {
            return Err(TraceError::BadReward(raw.to_string()));
        }
        Ok(Self {
            raw: trimmed.to_string(),
            value,
        })
    }

    pub fn from_f64(value: f64) -> Self {
        Self {
            raw: format!("{value}"),
            value,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }
}

impl PartialEq for Reward {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw
    }
}

impl Eq for Reward {}

impl fmt::Display for Reward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for Reward {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Reward {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Literal {
            Text(String),
            Number(f64),
        }
        match Literal::deserialize(deserializer)? {
            Literal::Text(s) => Reward::parse(&s).map_err(serde::de::Error::custom),
            Literal::Number(v) if v.is_finite() => Ok(Reward::from_f64(v)),
            Literal::Number(v) => Err(serde::de::Error::custom(format!(
                "non-finite reward {v}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn for_reward(total: f64) -> Self {
        if total > 0.0 {
            Outcome::Success
        } else {
            Outcome::Failure
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based position within the trace.
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub reasoning: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub reward: Reward,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_id: String,
    pub task_id: String,
    pub goal_id: String,
    pub goal_text: String,
    pub outcome: Outcome,
    pub total_reward: Reward,
    pub steps: Vec<Step>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step by 1-based index.
    pub fn step(&self, index: usize) -> Option<&Step> {
        index.checked_sub(1).and_then(|i| self.steps.get(i))
    }

    pub fn reward(&self) -> f64 {
        self.total_reward.value()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_trace(self)
    }
}

/// One violated trace or step invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyTraceId,
    EmptyGoalText,
    NoSteps,
    NonConsecutiveIndex { position: usize, found: usize },
    EmptyAction { index: usize },
    RewardMismatch { declared: String, computed: String },
    OutcomeMismatch { outcome: Outcome, total: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTraceId => write!(f, "empty trace_id"),
            Violation::EmptyGoalText => write!(f, "empty goal_text"),
            Violation::NoSteps => write!(f, "trace has no steps"),
            Violation::NonConsecutiveIndex { position, found } => write!(
                f,
                "non-consecutive step index: position {position} has index {found}"
            ),
            Violation::EmptyAction { index } => {
                write!(f, "empty action at non-terminal step {index}")
            }
            Violation::RewardMismatch { declared, computed } => write!(
                f,
                "reward mismatch: total_reward {declared} but step rewards sum to {computed}"
            ),
            Violation::OutcomeMismatch { outcome, total } => write!(
                f,
                "outcome {outcome} inconsistent with total_reward {total}"
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

/// Checks every trace and step invariant. Never fails; an empty report means
/// the trace is valid.
pub fn validate_trace(trace: &Trace) -> ValidationReport {
    let mut violations = Vec::new();
    if trace.trace_id.trim().is_empty() {
        violations.push(Violation::EmptyTraceId);
    }
    if trace.goal_text.trim().is_empty() {
        violations.push(Violation::EmptyGoalText);
    }
    if trace.steps.is_empty() {
        violations.push(Violation::NoSteps);
    }
    let last = trace.steps.len();
    for (pos, step) in trace.steps.iter().enumerate() {
        let position = pos + 1;
        if step.index != position {
            violations.push(Violation::NonConsecutiveIndex {
                position,
                found: step.index,
            });
        }
        if position != last && step.action.trim().is_empty() {
            violations.push(Violation::EmptyAction { index: step.index });
        }
    }
    let computed: f64 = trace.steps.iter().map(|s| s.reward.value()).sum();
    if (computed - trace.total_reward.value()).abs() > REWARD_SUM_TOLERANCE {
        violations.push(Violation::RewardMismatch {
            declared: trace.total_reward.to_string(),
            computed: format!("{computed}"),
        });
    }
    if Outcome::for_reward(trace.total_reward.value()) != trace.outcome {
        violations.push(Violation::OutcomeMismatch {
            outcome: trace.outcome,
            total: trace.total_reward.to_string(),
        });
    }
    ValidationReport { violations }
}

/// An immutable, deterministically ordered collection of traces.
///
/// Traces are sorted by `(task_id, goal_id, trace_id)`.
#[derive(Clone, Debug, Default)]
pub struct TraceSet {
    traces: Vec<Trace>,
    by_id: HashMap<String, usize>,
    by_task: BTreeMap<String, Vec<usize>>,
    by_goal: BTreeMap<String, Vec<usize>>,
}

impl PartialEq for TraceSet {
    fn eq(&self, other: &Self) -> bool {
        self.traces == other.traces
    }
}

impl TraceSet {
    pub fn new(mut traces: Vec<Trace>) -> Result<Self, TraceError> {
        traces.sort_by(|a, b| {
            (&a.task_id, &a.goal_id, &a.trace_id).cmp(&(&b.task_id, &b.goal_id, &b.trace_id))
        });
        let mut by_id = HashMap::with_capacity(traces.len());
        let mut by_task: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_goal: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, t) in traces.iter().enumerate() {
            if by_id.insert(t.trace_id.clone(), i).is_some() {
                return Err(TraceError::DuplicateId(t.trace_id.clone()));
            }
            by_task.entry(t.task_id.clone()).or_default().push(i);
            by_goal.entry(t.goal_id.clone()).or_default().push(i);
        }
        Ok(Self {
            traces,
            by_id,
            by_task,
            by_goal,
        })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn get(&self, trace_id: &str) -> Option<&Trace> {
        self.by_id.get(trace_id).map(|&i| &self.traces[i])
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.by_task.keys().map(String::as_str)
    }

    pub fn for_task(&self, task_id: &str) -> Vec<&Trace> {
        self.by_task
            .get(task_id)
            .map(|ix| ix.iter().map(|&i| &self.traces[i]).collect())
            .unwrap_or_default()
    }

    pub fn for_goal(&self, goal_id: &str) -> Vec<&Trace> {
        self.by_goal
            .get(goal_id)
            .map(|ix| ix.iter().map(|&i| &self.traces[i]).collect())
            .unwrap_or_default()
    }
}

/// Groups traces by task. Keys are sorted; every trace lands in exactly one
/// group.
pub fn group_by_task(set: &TraceSet) -> BTreeMap<&str, Vec<&Trace>> {
    set.by_task
        .iter()
        .map(|(task, ix)| (task.as_str(), ix.iter().map(|&i| &set.traces[i]).collect()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LoadIssue {
    pub file: PathBuf,
    /// 1-based line number inside `file`.
    pub line: usize,
    pub trace_id: Option<String>,
    pub problems: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub files: usize,
    pub issues: Vec<LoadIssue>,
}

impl LoadReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Loads every `.traces.jsonl` file under `path` (recursively), or `path`
/// itself when it is a file.
///
/// Files are parsed concurrently and merged in sorted path order, so the
/// result does not depend on directory iteration order. When a `trace_id`
/// repeats, the first occurrence in that order wins and later ones are
/// reported.
pub fn load_traces(path: &Path) -> Result<(TraceSet, LoadReport), TraceError> {
    let meta = fs::metadata(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    if meta.is_dir() {
        collect_trace_files(path, &mut files)?;
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }

    let parsed: Vec<(Vec<(usize, Trace)>, Vec<LoadIssue>)> = files
        .par_iter()
        .map(|f| read_trace_file(f))
        .collect::<Result<_, _>>()?;

    let mut report = LoadReport {
        files: files.len(),
        issues: Vec::new(),
    };
    let mut seen = HashSet::new();
    let mut traces = Vec::new();
    for (file, (ok, issues)) in files.iter().zip(parsed) {
        report.issues.extend(issues);
        for (line, trace) in ok {
            if seen.insert(trace.trace_id.clone()) {
                traces.push(trace);
            } else {
                report.issues.push(LoadIssue {
                    file: file.clone(),
                    line,
                    trace_id: Some(trace.trace_id.clone()),
                    problems: vec![format!("duplicate trace_id {:?}", trace.trace_id)],
                });
            }
        }
    }
    let set = TraceSet::new(traces)?;
    Ok((set, report))
}

fn collect_trace_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let p = entry.path();
        if p.is_dir() {
            collect_trace_files(&p, out)?;
        } else if p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(TRACE_FILE_SUFFIX))
        {
            out.push(p);
        }
    }
    Ok(())
}

type FileParse = (Vec<(usize, Trace)>, Vec<LoadIssue>);

fn read_trace_file(path: &Path) -> Result<FileParse, TraceError> {
    let io_err = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io_err)?);
    let mut ok = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Trace>(&line) {
            Ok(trace) => {
                let report = validate_trace(&trace);
                if report.is_valid() {
                    ok.push((lineno, trace));
                } else {
                    issues.push(LoadIssue {
                        file: path.to_path_buf(),
                        line: lineno,
                        trace_id: Some(trace.trace_id.clone()),
                        problems: report.messages(),
                    });
                }
            }
            Err(e) => {
                let trace_id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("trace_id")?.as_str().map(str::to_string));
                issues.push(LoadIssue {
                    file: path.to_path_buf(),
                    line: lineno,
                    trace_id,
                    problems: vec![e.to_string()],
                });
            }
        }
    }
    Ok((ok, issues))
}

/// Writes `traces` to `path` in interchange format, one trace per line.
pub fn write_traces<'a>(
    path: &Path,
    traces: impl IntoIterator<Item = &'a Trace>,
) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// A trace whose step rewards are all zero except the last, which carries
    /// `total`.
    pub fn trace(id: &str, task: &str, goal: &str, steps: usize, total: f64) -> Trace {
        let steps: Vec<Step> = (1..=steps)
            .map(|i| Step {
                index: i,
                observation: Some(format!("obs {id} {i}")),
                reasoning: format!("thinking {i}"),
                action: format!("click('e{i}')"),
                error: None,
                reward: Reward::from_f64(if i == steps { total } else { 0.0 }),
            })
            .collect();
        Trace {
            trace_id: id.into(),
            task_id: task.into(),
            goal_id: goal.into(),
            goal_text: format!("goal for {goal}"),
            outcome: Outcome::for_reward(total),
            total_reward: Reward::from_f64(total),
            steps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::trace;
    use super::*;

    #[test]
    fn valid_three_step_trace() {
        assert!(validate_trace(&trace("t1", "A", "g1", 3, 1.0)).is_valid());
    }

    #[test]
    fn non_consecutive_index_is_reported() {
        let mut t = trace("t1", "A", "g1", 2, 1.0);
        t.steps[1].index = 3;
        let msgs = validate_trace(&t).messages();
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].contains("non-consecutive step index"), "{msgs:?}");
    }

    #[test]
    fn reward_mismatch_is_reported() {
        let mut t = trace("t1", "A", "g1", 2, 1.0);
        t.total_reward = Reward::parse("0.9").unwrap();
        let msgs = validate_trace(&t).messages();
        assert!(msgs.iter().any(|m| m.contains("reward mismatch")), "{msgs:?}");
    }

    #[test]
    fn outcome_must_follow_reward_sign() {
        let mut t = trace("t1", "A", "g1", 2, 0.0);
        t.outcome = Outcome::Success;
        let v = validate_trace(&t).violations;
        assert!(matches!(v[..], [Violation::OutcomeMismatch { .. }]));
    }

    #[test]
    fn empty_terminal_action_is_allowed() {
        let mut t = trace("t1", "A", "g1", 2, 1.0);
        t.steps[1].action.clear();
        assert!(validate_trace(&t).is_valid());
        t.steps[0].action.clear();
        assert_eq!(
            validate_trace(&t).violations,
            vec![Violation::EmptyAction { index: 1 }]
        );
    }

    #[test]
    fn multiple_violations_all_listed() {
        let mut t = trace("t1", "A", "g1", 3, 1.0);
        t.goal_text = " ".into();
        t.steps[2].index = 9;
        t.steps[0].action = String::new();
        assert_eq!(validate_trace(&t).violations.len(), 3);
    }

    #[test]
    fn reward_literal_is_preserved() {
        let r: Reward = serde_json::from_str("\"0.50\"").unwrap();
        assert_eq!(r.as_str(), "0.50");
        assert_eq!(r.value(), 0.5);
        let n: Reward = serde_json::from_str("1").unwrap();
        assert_eq!(n.value(), 1.0);
        assert!(serde_json::from_str::<Reward>("\"abc\"").is_err());
    }

    #[test]
    fn group_by_task_groups_and_sorts() {
        let set = TraceSet::new(vec![
            trace("t3", "B", "g3", 1, 0.0),
            trace("t1", "A", "g1", 1, 1.0),
            trace("t2", "A", "g2", 1, 0.0),
        ])
        .unwrap();
        let groups = group_by_task(&set);
        let keys: Vec<_> = groups.keys().copied().collect();
        assert_eq!(keys, vec!["A", "B"]);
        assert_eq!(groups["A"].len(), 2);
        assert_eq!(groups["B"].len(), 1);
        assert!(group_by_task(&TraceSet::default()).is_empty());
    }

    #[test]
    fn duplicate_ids_rejected_by_set() {
        let err = TraceSet::new(vec![trace("t1", "A", "g", 1, 0.0), trace("t1", "B", "g", 1, 0.0)]);
        assert!(matches!(err, Err(TraceError::DuplicateId(_))));
    }

    #[test]
    fn absent_observation_round_trips() {
        let mut t = trace("t1", "A", "g1", 1, 1.0);
        t.steps[0].observation = None;
        t.steps[0].reasoning.clear();
        let line = serde_json::to_string(&t).unwrap();
        assert!(!line.contains("observation"));
        assert_eq!(serde_json::from_str::<Trace>(&line).unwrap(), t);
    }
}
