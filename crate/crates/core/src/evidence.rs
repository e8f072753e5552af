//! Hinting evidence units: single traces, reward-ordered pairs and
//! multi-trace groups, all scoped to one task.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{group_by_task, Outcome, Trace, TraceSet};

/// Per-task pair budget.
pub const DEFAULT_PAIR_CAP: usize = 5;
pub const DEFAULT_GROUP_SIZE: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("group_size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("unknown evidence mode {0:?} (expected single, pair, multi or all)")]
    UnknownMode(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMode {
    Single,
    Pair,
    Multi,
}

impl EvidenceMode {
    pub const ALL: [EvidenceMode; 3] = [EvidenceMode::Single, EvidenceMode::Pair, EvidenceMode::Multi];

    /// Parses `single`, `pair`, `multi` or `all`.
    pub fn parse_set(s: &str) -> Result<Vec<EvidenceMode>, EvidenceError> {
        match s {
            "all" => Ok(Self::ALL.to_vec()),
            other => Ok(vec![other.parse()?]),
        }
    }
}

impl FromStr for EvidenceMode {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(EvidenceMode::Single),
            "pair" => Ok(EvidenceMode::Pair),
            "multi" => Ok(EvidenceMode::Multi),
            other => Err(EvidenceError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for EvidenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvidenceMode::Single => "single",
            EvidenceMode::Pair => "pair",
            EvidenceMode::Multi => "multi",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// `members[0]` has strictly higher total reward.
    Strict,
    /// Same reward, different outcome labels.
    EqualReward,
    FailFail,
    SuccessSuccess,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Evidence {
    pub mode: EvidenceMode,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_kind: Option<PairKind>,
    pub task_id: String,
}

impl Evidence {
    /// Short stable reference, e.g. `pair:task-a:t1+t2`.
    pub fn reference(&self) -> String {
        format!("{}:{}:{}", self.mode, self.task_id, self.members.join("+"))
    }

    /// Resolves member ids against `set`, in member order.
    pub fn resolve<'a>(&self, set: &'a TraceSet) -> Option<Vec<&'a Trace>> {
        self.members.iter().map(|id| set.get(id)).collect()
    }
}

/// One evidence unit per trace, failures included, ordered by
/// `(task_id, trace_id)`.
pub fn select_single(set: &TraceSet) -> Vec<Evidence> {
    let mut out = Vec::with_capacity(set.len());
    for (task, traces) in group_by_task(set) {
        let mut ids: Vec<&str> = traces.iter().map(|t| t.trace_id.as_str()).collect();
        ids.sort_unstable();
        out.extend(ids.into_iter().map(|id| Evidence {
            mode: EvidenceMode::Single,
            members: vec![id.to_string()],
            pair_kind: None,
            task_id: task.to_string(),
        }));
    }
    out
}

fn by_id<'a>(traces: &[&'a Trace]) -> Vec<&'a Trace> {
    let mut v = traces.to_vec();
    v.sort_by(|a, b| a.trace_id.cmp(&b.trace_id));
    v
}

/// Reward-ordered pairs per task.
///
/// Every strict pair `(hi, lo)` with `reward(hi) > reward(lo)` is emitted,
/// largest gap first, ties by member ids. Only when a task has no strict pair
/// at all are fallback pairs produced: equal-reward cross-outcome pairs
/// first, then same-outcome pairs. Each task yields at most `cap` pairs.
pub fn select_pairs(set: &TraceSet, cap: usize) -> Vec<Evidence> {
    let mut out = Vec::new();
    for (task, traces) in group_by_task(set) {
        let traces = by_id(&traces);
        let mut strict: Vec<(f64, &Trace, &Trace)> = Vec::new();
        for hi in &traces {
            for lo in &traces {
                let gap = hi.reward() - lo.reward();
                if gap > 0.0 {
                    strict.push((gap, hi, lo));
                }
            }
        }
        let pairs: Vec<(PairKind, &Trace, &Trace)> = if !strict.is_empty() {
            strict.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| a.1.trace_id.cmp(&b.1.trace_id))
                    .then_with(|| a.2.trace_id.cmp(&b.2.trace_id))
            });
            strict.into_iter().map(|(_, h, l)| (PairKind::Strict, h, l)).collect()
        } else {
            let mut cross = Vec::new();
            let mut same = Vec::new();
            for (i, a) in traces.iter().enumerate() {
                for b in &traces[i + 1..] {
                    match (a.outcome, b.outcome) {
                        (Outcome::Failure, Outcome::Failure) => same.push((PairKind::FailFail, *a, *b)),
                        (Outcome::Success, Outcome::Success) => {
                            same.push((PairKind::SuccessSuccess, *a, *b))
                        }
                        _ => cross.push((PairKind::EqualReward, *a, *b)),
                    }
                }
            }
            cross.into_iter().chain(same).collect()
        };
        out.extend(pairs.into_iter().take(cap).map(|(kind, a, b)| Evidence {
            mode: EvidenceMode::Pair,
            members: vec![a.trace_id.clone(), b.trace_id.clone()],
            pair_kind: Some(kind),
            task_id: task.to_string(),
        }));
    }
    out
}

/// One group per task with at least two traces. Successes and failures are
/// interleaved before truncation to `group_size`, so a group mixes outcomes
/// whenever the task has both. Members are sorted by id.
pub fn select_multi(set: &TraceSet, group_size: usize) -> Result<Vec<Evidence>, EvidenceError> {
    if group_size < 2 {
        return Err(EvidenceError::GroupTooSmall(group_size));
    }
    let mut out = Vec::new();
    for (task, traces) in group_by_task(set) {
        if traces.len() < 2 {
            continue;
        }
        let traces = by_id(&traces);
        let (wins, losses): (Vec<&Trace>, Vec<&Trace>) =
            traces.iter().partition(|t| t.outcome == Outcome::Success);
        let mut picked = Vec::with_capacity(group_size);
        let (mut wi, mut li) = (wins.iter(), losses.iter());
        while picked.len() < group_size {
            let w = wi.next();
            let l = li.next();
            if w.is_none() && l.is_none() {
                break;
            }
            picked.extend(w.into_iter().chain(l).map(|t| t.trace_id.clone()));
        }
        picked.truncate(group_size);
        picked.sort();
        out.push(Evidence {
            mode: EvidenceMode::Multi,
            members: picked,
            pair_kind: None,
            task_id: task.to_string(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub pair_cap: usize,
    pub group_size: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            pair_cap: DEFAULT_PAIR_CAP,
            group_size: DEFAULT_GROUP_SIZE,
        }
    }
}

/// Concatenates the requested modes in `single, pair, multi` order.
pub fn select_evidence(
    set: &TraceSet,
    modes: &[EvidenceMode],
    params: SelectionParams,
) -> Result<Vec<Evidence>, EvidenceError> {
    let mut out = Vec::new();
    for mode in EvidenceMode::ALL {
        if !modes.contains(&mode) {
            continue;
        }
        match mode {
            EvidenceMode::Single => out.extend(select_single(set)),
            EvidenceMode::Pair => out.extend(select_pairs(set, params.pair_cap)),
            EvidenceMode::Multi => out.extend(select_multi(set, params.group_size)?),
        }
    }
    Ok(out)
}
