use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompt::{fit_budget, render_steps};
use super::{ZoomConfig, ZoomError};
use crate::llm::{bindings, ChatBackend, CompletionRequest, TemplateId, TemplateSet, SUMMARY_MAX_TOKENS};
use crate::trace::Trace;

pub const TERMINAL_REASON: &str = "terminal outcome";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalSteps {
    pub steps: BTreeSet<usize>,
    pub reasons: BTreeMap<usize, String>,
    pub window: usize,
}

impl CriticalSteps {
    pub fn new(steps: impl IntoIterator<Item = usize>, window: usize) -> Self {
        Self {
            steps: steps.into_iter().collect(),
            reasons: BTreeMap::new(),
            window,
        }
    }

    pub fn first(&self) -> Option<usize> {
        self.steps.first().copied()
    }

    /// Canonical completion text: `Steps: 2, 4 — reason` when all steps share
    /// one reason, otherwise the list followed by `Step N: reason` lines.
    pub fn to_completion(&self) -> String {
        let list = self.steps.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
        let reasons: BTreeSet<&str> = self
            .steps
            .iter()
            .map(|s| self.reasons.get(s).map_or("", String::as_str))
            .collect();
        match reasons.into_iter().collect::<Vec<_>>().as_slice() {
            [""] => format!("Steps: {list}"),
            [one] => format!("Steps: {list} — {one}"),
            _ => {
                let mut out = format!("Steps: {list}");
                for s in &self.steps {
                    out.push_str(&format!("\nStep {s}: {}", self.reasons.get(s).map_or("", String::as_str)));
                }
                out
            }
        }
    }
}

fn steps_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[\s*#>-]*(?:selected |critical |important |most important )?steps?(?: numbers?)?\**\s*[:=]\**\s*(.*)$")
            .unwrap()
    })
}

fn number_list_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*((?:\d+)(?:\s*(?:,|and|&|;)?\s*\d+)*)").unwrap())
}

fn per_step_reason_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[\s*-]*step\s+(\d+)\s*[:\-—–)]\s*(.+)$").unwrap())
}

fn strip_separator(s: &str) -> &str {
    s.trim_start_matches(|c: char| c.is_whitespace() || "—–-:()".contains(c)).trim_end()
}

/// Parses a step-selection completion.
///
/// Reads the comma-separated numbers that follow a `Steps:` label (or, when
/// there is no such label, `Step N: reason` lines). Out-of-range and repeated
/// numbers are dropped and the list is capped at `max_steps`. When nothing
/// valid remains the final step is chosen with reason `terminal outcome`.
pub fn parse_step_selection(
    completion: &str,
    trace_len: usize,
    max_steps: usize,
    window: usize,
) -> CriticalSteps {
    let mut order: Vec<usize> = Vec::new();
    let mut shared_reason = String::new();

    if let Some(cap) = steps_line_re().captures(completion) {
        let rest = cap.get(1).map_or("", |m| m.as_str());
        if let Some(list) = number_list_re().captures(rest) {
            let list_text = list.get(1).unwrap().as_str();
            order.extend(
                list_text
                    .split(|c: char| !c.is_ascii_digit())
                    .filter_map(|n| n.parse::<usize>().ok()),
            );
            shared_reason = strip_separator(&rest[list.get(0).unwrap().end()..]).to_string();
        }
    }
    let mut reasons: BTreeMap<usize, String> = BTreeMap::new();
    let mut line_steps = Vec::new();
    for cap in per_step_reason_re().captures_iter(completion) {
        if let Ok(n) = cap[1].parse::<usize>() {
            line_steps.push(n);
            reasons.entry(n).or_insert_with(|| cap[2].trim().to_string());
        }
    }
    if order.is_empty() {
        order = line_steps;
    }

    let mut chosen = BTreeSet::new();
    let mut kept = Vec::new();
    for n in order {
        if kept.len() >= max_steps.max(1) {
            break;
        }
        if (1..=trace_len).contains(&n) && chosen.insert(n) {
            kept.push(n);
        }
    }
    if chosen.is_empty() {
        let last = trace_len.max(1);
        return CriticalSteps {
            steps: BTreeSet::from([last]),
            reasons: BTreeMap::from([(last, TERMINAL_REASON.to_string())]),
            window,
        };
    }
    let reasons = kept
        .iter()
        .map(|n| {
            let r = reasons
                .get(n)
                .cloned()
                .filter(|r| !r.is_empty())
                .unwrap_or_else(|| shared_reason.clone());
            (*n, r)
        })
        .collect();
    CriticalSteps {
        steps: chosen,
        reasons,
        window,
    }
}

/// Asks `backend` which steps of `trace` are decisive.
pub fn select_critical_steps(
    trace: &Trace,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    cfg: &ZoomConfig,
) -> Result<CriticalSteps, ZoomError> {
    if trace.is_empty() {
        return Err(ZoomError::Argument(format!("trace {} has no steps", trace.trace_id)));
    }
    let with_obs: BTreeSet<usize> = trace
        .steps
        .iter()
        .filter(|s| s.observation.is_some())
        .map(|s| s.index)
        .collect();
    let (prompt, _) = fit_budget(cfg.char_budget, vec![with_obs], |inc| {
        templates.render(
            TemplateId::StepSelection,
            &bindings([
                ("goal", trace.goal_text.clone()),
                ("steps", render_steps(trace, &inc[0], &BTreeSet::new())),
                ("max_steps", cfg.max_critical_steps.to_string()),
            ]),
        )
    })?;
    let completion = backend.complete(&CompletionRequest::new(prompt, SUMMARY_MAX_TOKENS))?;
    Ok(parse_step_selection(
        &completion,
        trace.len(),
        cfg.max_critical_steps,
        cfg.delta,
    ))
}
