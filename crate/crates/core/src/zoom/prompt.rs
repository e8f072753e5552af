use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CriticalSteps, ZoomConfig, ZoomError};
use crate::evidence::{Evidence, EvidenceMode};
use crate::llm::{Bindings, TemplateError, TemplateId, TemplateSet};
use crate::trace::Trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptForm {
    Full,
    Zoom,
    StepSequence,
    Contrastive,
    DualZoom,
}

impl PromptForm {
    pub fn template(self) -> TemplateId {
        match self {
            PromptForm::Full => TemplateId::HintGeneration,
            PromptForm::Zoom => TemplateId::StepZoom,
            PromptForm::StepSequence => TemplateId::StepSequence,
            PromptForm::Contrastive => TemplateId::TwoTraceComparison,
            PromptForm::DualZoom => TemplateId::DualStepZoom,
        }
    }

    fn needs_critical_steps(self) -> bool {
        matches!(self, PromptForm::Zoom | PromptForm::DualZoom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HinterPrompt {
    pub form: PromptForm,
    pub template: TemplateId,
    pub text: String,
    /// Steps whose observation text is embedded, one set per evidence member.
    pub included_observation_steps: Vec<BTreeSet<usize>>,
}

impl HinterPrompt {
    /// Included steps of the first (or only) member.
    pub fn included(&self) -> &BTreeSet<usize> {
        &self.included_observation_steps[0]
    }
}

/// Optional inputs shared by all hinter templates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PromptExtras {
    /// One-line context summary passed as the `SUMMARIZATION:` line.
    pub summarization: Option<String>,
    pub documents: Option<String>,
    pub known_topics: Vec<String>,
}

/// `{ t | ∃ t* ∈ critical, t* ≤ t ≤ t* + delta } ∩ [1, len]`.
pub fn zoom_window(critical: &BTreeSet<usize>, delta: usize, len: usize) -> BTreeSet<usize> {
    critical
        .iter()
        .flat_map(|&c| c..=c.saturating_add(delta))
        .filter(|t| (1..=len).contains(t))
        .collect()
}

/// Renders every step's reasoning, action, error and reward, plus the
/// observation for steps in `observe`. Steps in `important` are marked.
pub(crate) fn render_steps(
    trace: &Trace,
    observe: &BTreeSet<usize>,
    important: &BTreeSet<usize>,
) -> String {
    let mut out = String::new();
    for step in &trace.steps {
        let mark = if important.contains(&step.index) {
            " (IMPORTANT STEP)"
        } else {
            ""
        };
        let _ = writeln!(out, "Step {}{mark}:", step.index);
        if observe.contains(&step.index) {
            if let Some(obs) = &step.observation {
                let _ = writeln!(out, "  Observation: {obs}");
            }
        }
        let reasoning = if step.reasoning.is_empty() { "(none)" } else { &step.reasoning };
        let action = if step.action.is_empty() { "(none)" } else { &step.action };
        let _ = writeln!(out, "  Agent's reasoning: {reasoning}");
        let _ = writeln!(out, "  Action taken: {action}");
        let _ = writeln!(out, "  Error encountered: {}", step.error.as_deref().unwrap_or("none"));
        let _ = writeln!(out, "  Current reward: {}", step.reward);
    }
    out.truncate(out.trim_end().len());
    out
}

fn observed_steps(trace: &Trace) -> BTreeSet<usize> {
    trace
        .steps
        .iter()
        .filter(|s| s.observation.is_some())
        .map(|s| s.index)
        .collect()
}

fn outcome_word(trace: &Trace) -> &'static str {
    match trace.outcome {
        crate::trace::Outcome::Success => "successful",
        crate::trace::Outcome::Failure => "failed",
    }
}

/// Renders once per attempt and drops the oldest included observation
/// (smallest step index, first member on ties) until the text fits `budget`.
/// Reasoning, actions and rewards are never trimmed.
pub(crate) fn fit_budget<F>(
    budget: Option<usize>,
    mut included: Vec<BTreeSet<usize>>,
    render: F,
) -> Result<(String, Vec<BTreeSet<usize>>), TemplateError>
where
    F: Fn(&[BTreeSet<usize>]) -> Result<String, TemplateError>,
{
    loop {
        let text = render(&included)?;
        let Some(limit) = budget else {
            return Ok((text, included));
        };
        if text.chars().count() <= limit {
            return Ok((text, included));
        }
        let oldest = included
            .iter()
            .enumerate()
            .filter_map(|(m, set)| set.first().map(|&s| (s, m)))
            .min();
        match oldest {
            Some((step, member)) => {
                included[member].remove(&step);
            }
            None => return Ok((text, included)),
        }
    }
}

/// Assembles the hinter prompt for one evidence unit.
///
/// `traces` are the resolved evidence members in order. `critical` holds one
/// entry per member and is required by the zoom forms.
pub fn build_prompt(
    evidence: &Evidence,
    traces: &[&Trace],
    form: PromptForm,
    critical: Option<&[CriticalSteps]>,
    extras: &PromptExtras,
    templates: &TemplateSet,
    cfg: &ZoomConfig,
) -> Result<HinterPrompt, ZoomError> {
    if traces.is_empty() || traces.len() != evidence.members.len() {
        return Err(ZoomError::Argument(format!(
            "evidence {} lists {} members but {} traces were supplied",
            evidence.reference(),
            evidence.members.len(),
            traces.len()
        )));
    }
    match form {
        PromptForm::Contrastive | PromptForm::DualZoom if evidence.mode != EvidenceMode::Pair => {
            return Err(ZoomError::Argument(format!(
                "{form:?} prompts need pair evidence, got {}",
                evidence.mode
            )));
        }
        PromptForm::StepSequence if evidence.mode != EvidenceMode::Single => {
            return Err(ZoomError::Argument(format!(
                "step-sequence prompts need single evidence, got {}",
                evidence.mode
            )));
        }
        _ => {}
    }
    let empty = BTreeSet::new();
    let important: Vec<&BTreeSet<usize>> = if form.needs_critical_steps() {
        let crit = critical.filter(|c| c.len() == traces.len()).ok_or_else(|| {
            ZoomError::Argument(format!("{form:?} prompts need critical steps for every member"))
        })?;
        crit.iter().map(|c| &c.steps).collect()
    } else {
        vec![&empty; traces.len()]
    };

    let included: Vec<BTreeSet<usize>> = traces
        .iter()
        .zip(&important)
        .map(|(t, imp)| {
            let observed = observed_steps(t);
            if form.needs_critical_steps() {
                zoom_window(imp, cfg.delta, t.len())
                    .intersection(&observed)
                    .copied()
                    .collect()
            } else {
                observed
            }
        })
        .collect();

    let first = traces[0];
    let topics = extras.known_topics.join("; ");
    let documents = extras.documents.clone().unwrap_or_else(|| "NONE".into());
    let summary_line = extras
        .summarization
        .as_ref()
        .map(|s| format!("SUMMARIZATION: {s}"))
        .unwrap_or_default();

    let render = |inc: &[BTreeSet<usize>]| -> Result<String, TemplateError> {
        let mut b = Bindings::new();
        b.insert("task".into(), evidence.task_id.clone());
        b.insert("goal".into(), first.goal_text.clone());
        b.insert("topics".into(), topics.clone());
        b.insert("documents".into(), documents.clone());
        b.insert("summarization".into(), summary_line.clone());
        let marks = |i: usize| if form == PromptForm::DualZoom { important[i] } else { &empty };
        match form {
            PromptForm::Full | PromptForm::Zoom | PromptForm::StepSequence => {
                let body = if traces.len() == 1 {
                    render_steps(first, &inc[0], &empty)
                } else {
                    let mut s = String::new();
                    for (i, t) in traces.iter().enumerate() {
                        let _ = writeln!(
                            s,
                            "--- Trace {} of {} ({}, outcome {}, total reward {}) ---\nGoal: {}\n{}\n",
                            i + 1,
                            traces.len(),
                            t.trace_id,
                            t.outcome,
                            t.total_reward,
                            t.goal_text,
                            render_steps(t, &inc[i], &empty)
                        );
                    }
                    s.truncate(s.trim_end().len());
                    s
                };
                b.insert("steps".into(), body.clone());
                b.insert("traces".into(), body);
                b.insert("n".into(), first.len().to_string());
            }
            PromptForm::Contrastive => {
                b.insert("desired".into(), render_steps(traces[0], &inc[0], &empty));
                b.insert("undesired".into(), render_steps(traces[1], &inc[1], &empty));
                b.insert(
                    "summarization".into(),
                    extras.summarization.clone().unwrap_or_else(|| "NONE".into()),
                );
            }
            PromptForm::DualZoom => {
                let labels = ["Desired", "Undesired"];
                let mut s = String::new();
                for (i, t) in traces.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "--- {} trace ---\nOutcome: {} (total reward {})\nGoal: {}\n{}\n",
                        labels[i],
                        outcome_word(t),
                        t.total_reward,
                        t.goal_text,
                        render_steps(t, &inc[i], marks(i))
                    );
                }
                s.truncate(s.trim_end().len());
                b.insert("traces".into(), s);
            }
        }
        templates.render(form.template(), &b)
    };

    let (text, included) = fit_budget(cfg.char_budget, included, render)?;
    Ok(HinterPrompt {
        form,
        template: form.template(),
        text,
        included_observation_steps: included,
    })
}
