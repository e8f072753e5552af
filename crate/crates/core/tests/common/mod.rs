//! Independent reference implementations and fixture builders for the
//! integration and acceptance tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hintforge_core::evidence::{Evidence, EvidenceMode, PairKind};
use hintforge_core::trace::{Outcome, Reward, Step, Trace, TraceSet};
use hintforge_core::zoom::{NewHint, SemanticKey};

// ---------- fixtures ----------

pub fn trace(id: &str, task: &str, goal: &str, steps: usize, total: f64) -> Trace {
    let steps = (1..=steps)
        .map(|i| Step {
            index: i,
            observation: Some(format!("observation {id} {i}")),
            reasoning: format!("reasoning {i}"),
            action: format!("click('b{i}')"),
            error: None,
            reward: Reward::from_f64(if i == steps { total } else { 0.0 }),
        })
        .collect();
    Trace {
        trace_id: id.into(),
        task_id: task.into(),
        goal_id: goal.into(),
        goal_text: format!("complete {goal}"),
        outcome: if total > 0.0 { Outcome::Success } else { Outcome::Failure },
        total_reward: Reward::from_f64(total),
        steps,
    }
}

pub fn hint(task: &str, goals: &[&str], context: &str, topic: &str, text: &str) -> NewHint {
    NewHint {
        key: SemanticKey {
            context: context.into(),
            source_prefix_len: 1,
        },
        topic: topic.into(),
        hint: text.into(),
        think: "because".into(),
        evidence: Evidence {
            mode: EvidenceMode::Single,
            members: goals.iter().map(|g| format!("{task}-{g}")).collect(),
            pair_kind: None,
            task_id: task.into(),
        },
        task_id: task.into(),
        goal_ids: goals.iter().map(|g| g.to_string()).collect(),
        created_by: "fixture".into(),
    }
}

/// Tiny deterministic generator so fixtures do not depend on RNG crates.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 33
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

// ---------- tokenization ----------

pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

// ---------- BM25 ----------

/// Okapi BM25 computed term by term from raw counts.
pub fn bm25_brute(docs: &[(&str, &str)], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, t)| tokens(t)).collect();
    let n = docs.len() as f64;
    let total: usize = toks.iter().map(Vec::len).sum();
    let avgdl = if total == 0 { 1.0 } else { total as f64 / n };
    let mut q: Vec<String> = Vec::new();
    for t in tokens(query) {
        if !q.contains(&t) {
            q.push(t);
        }
    }
    docs.iter()
        .zip(&toks)
        .map(|((id, _), d)| {
            let dl = d.len() as f64;
            let mut score = 0.0;
            for term in &q {
                let f = d.iter().filter(|t| *t == term).count() as f64;
                if f == 0.0 {
                    continue;
                }
                let nq = toks.iter().filter(|d| d.contains(term)).count() as f64;
                let idf = ((n - nq + 0.5) / (nq + 0.5) + 1.0).ln();
                score += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl));
            }
            (id.to_string(), score)
        })
        .collect()
}

// ---------- zoom window ----------

pub fn window_oracle(len: usize, critical: &BTreeSet<usize>, delta: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for s in 1..=len {
        for &c in critical {
            if c <= s && s - c <= delta {
                out.insert(s);
            }
        }
    }
    out
}

// ---------- pair enumeration ----------

#[derive(Clone, Debug, PartialEq)]
pub struct OraclePair {
    pub task: String,
    pub first: String,
    pub second: String,
    pub kind: PairKind,
}

/// Enumerates every ordered pair per task and applies the selection rules
/// literally.
pub fn pairs_oracle(set: &TraceSet, cap: usize) -> Vec<OraclePair> {
    let mut by_task: BTreeMap<&str, Vec<&Trace>> = BTreeMap::new();
    for t in set.traces() {
        by_task.entry(t.task_id.as_str()).or_default().push(t);
    }
    let mut out = Vec::new();
    for (task, mut ts) in by_task {
        ts.sort_by(|a, b| a.trace_id.cmp(&b.trace_id));
        let mut strict = Vec::new();
        for a in &ts {
            for b in &ts {
                if a.trace_id != b.trace_id && a.reward() > b.reward() {
                    strict.push((a.reward() - b.reward(), a.trace_id.clone(), b.trace_id.clone()));
                }
            }
        }
        strict.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut chosen: Vec<(String, String, PairKind)> =
            strict.into_iter().map(|(_, a, b)| (a, b, PairKind::Strict)).collect();
        if chosen.is_empty() {
            let mut same = Vec::new();
            for i in 0..ts.len() {
                for j in i + 1..ts.len() {
                    let (a, b) = (ts[i], ts[j]);
                    let pair = (a.trace_id.clone(), b.trace_id.clone());
                    if a.outcome != b.outcome {
                        chosen.push((pair.0, pair.1, PairKind::EqualReward));
                    } else if a.outcome == Outcome::Failure {
                        same.push((pair.0, pair.1, PairKind::FailFail));
                    } else {
                        same.push((pair.0, pair.1, PairKind::SuccessSuccess));
                    }
                }
            }
            chosen.extend(same);
        }
        chosen.truncate(cap);
        out.extend(chosen.into_iter().map(|(first, second, kind)| OraclePair {
            task: task.to_string(),
            first,
            second,
            kind,
        }));
    }
    out
}

// ---------- markdown sections ----------

fn oracle_heading(line: &str) -> Option<(usize, String)> {
    let body = line.trim_end_matches(['\n', '\r']);
    let lead = body.chars().take_while(|c| *c == ' ').count();
    if lead > 3 {
        return None;
    }
    let rest = &body[lead..];
    let hashes = rest.chars().take_while(|c| *c == '#').count();
    if hashes == 0 || hashes > 6 {
        return None;
    }
    let tail = &rest[hashes..];
    if !(tail.is_empty() || tail.starts_with(' ') || tail.starts_with('\t')) {
        return None;
    }
    Some((hashes, tail.trim().to_string()))
}

fn fence_marker(line: &str) -> Option<(char, usize)> {
    let lead = line.chars().take_while(|c| *c == ' ').count();
    if lead > 3 {
        return None;
    }
    let rest = &line[lead..];
    let c = rest.chars().next()?;
    if c != '`' && c != '~' {
        return None;
    }
    let n = rest.chars().take_while(|x| *x == c).count();
    (n >= 3).then_some((c, n))
}

/// Two passes: first mark heading lines outside fences, then cut the body
/// at those lines. Returns (heading path, section text) per section.
pub fn split_sections(body: &str) -> Vec<(Vec<String>, String)> {
    let lines: Vec<&str> = body.split_inclusive('\n').collect();
    let mut heads: Vec<(usize, usize, String)> = Vec::new();
    let mut open: Option<(char, usize)> = None;
    for (i, l) in lines.iter().enumerate() {
        match open {
            Some((c, n)) => {
                let t = l.trim();
                if fence_marker(l).is_some_and(|(c2, n2)| c2 == c && n2 >= n) && t.chars().all(|x| x == c) {
                    open = None;
                }
            }
            None => {
                if let Some(f) = fence_marker(l) {
                    open = Some(f);
                } else if let Some((lvl, text)) = oracle_heading(l) {
                    heads.push((i, lvl, text));
                }
            }
        }
    }
    if heads.is_empty() {
        return vec![(Vec::new(), lines.concat())];
    }
    let first = heads[0].0;
    let preamble = lines[..first].concat();
    let mut out = Vec::new();
    let fold = preamble.trim().is_empty();
    if !fold {
        out.push((Vec::new(), preamble));
    }
    let mut stack: Vec<(usize, String)> = Vec::new();
    for (i, (at, lvl, text)) in heads.iter().enumerate() {
        stack.retain(|(l, _)| l < lvl);
        stack.push((*lvl, text.clone()));
        let start = if i == 0 && fold { 0 } else { *at };
        let end = heads.get(i + 1).map_or(lines.len(), |h| h.0);
        out.push((stack.iter().map(|(_, t)| t.clone()).collect(), lines[start..end].concat()));
    }
    out
}

// ---------- hashing embedder ----------

pub fn hashing_oracle(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for t in tokens(text) {
        let mut h: u64 = 0xcbf29ce484222325;
        let bytes: Vec<u8> = seed.to_le_bytes().into_iter().chain(t.bytes()).collect();
        for byte in bytes {
            h = (h ^ byte as u64).wrapping_mul(0x100000001b3);
        }
        v[(h % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
