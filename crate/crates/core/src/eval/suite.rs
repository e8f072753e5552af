use std::sync::Arc;

use super::agent::{standard_agent, ScriptedAgent};
use super::env::{EnvKind, SyntheticEnv};
use super::episode::{run_episode, EpisodeResources, Regime, RetrievalSettings};
use super::EvalError;
use crate::llm::{ChatBackend, ScriptedBackend, TemplateSet};
use crate::pipeline::{Backends, GenerationReport, Pipeline, PipelineConfig};
use crate::store::HintDb;
use crate::trace::{Trace, TraceSet};

pub const EVAL_GOAL: &str = "eval";

/// One environment per kind, all with the held-out goal.
pub fn standard_suite() -> Vec<SyntheticEnv> {
    EnvKind::ALL.into_iter().map(|k| SyntheticEnv::new(k, EVAL_GOAL)).collect()
}

pub fn canonical_context(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::MultiSelectList => "The user is selecting several items in a list box.",
        EnvKind::FilterNavigation => "The user needs to open a module list and apply a filter.",
        EnvKind::PaginatedGrid => "The user must count orders for one customer across a paginated grid.",
    }
}

pub fn canonical_hint(kind: EnvKind) -> (&'static str, &'static str) {
    match kind {
        EnvKind::MultiSelectList => (
            "selecting multiple items in a list box",
            "When several list items must be selected, hold Ctrl (Cmd on Mac) and click each required item so earlier selections are kept, then click 'Submit'.",
        ),
        EnvKind::FilterNavigation => (
            "opening a module list from the navigation menu",
            "Avoid the global search for opening modules; instead open the Application Navigator's 'All' menu, choose the module, then add the filter condition and click 'Run'.",
        ),
        EnvKind::PaginatedGrid => (
            "counting orders for one customer in a paginated grid",
            "Avoid answering from dashboard widgets; open Sales > Orders and sort the 'Bill-to Name' column to group names, then select the customer's rows and count them.",
        ),
    }
}

fn kind_in(text: &str) -> Option<EnvKind> {
    EnvKind::ALL
        .into_iter()
        .filter_map(|k| text.rfind(k.tag_prefix()).map(|i| (i, k)))
        .max_by_key(|(i, _)| *i)
        .map(|(_, k)| k)
}

/// Maps the latest observation tag in the prompt to that kind's context.
pub fn scripted_summarizer() -> ScriptedBackend {
    ScriptedBackend::new("scripted-summarizer").with_responder(|prompt| {
        let kind = kind_in(prompt)?;
        Some(format!(
            "<think>The latest observation identifies the interface.</think>\n<context>{}</context>",
            canonical_context(kind)
        ))
    })
}

/// Answers hinter prompts based on their `Task:` line.
pub fn scripted_hinter() -> ScriptedBackend {
    ScriptedBackend::new("scripted-hinter").with_responder(|prompt| {
        let task = prompt.lines().find_map(|l| l.strip_prefix("Task: "))?;
        let kind: EnvKind = task.trim().parse().ok()?;
        let (topic, hint) = canonical_hint(kind);
        Some(format!(
            "<think>The successful runs used a different interaction pattern.</think>\n<topic>{topic}</topic>\n<hint>{hint}</hint>"
        ))
    })
}

pub fn scripted_selector() -> ScriptedBackend {
    ScriptedBackend::new("scripted-selector").with_fallback("Steps: 1 - the first decision fixes the strategy")
}

pub fn scripted_backends() -> Backends {
    Backends {
        hinter: Arc::new(scripted_hinter()),
        summarizer: Arc::new(scripted_summarizer()),
        selector: Some(Arc::new(scripted_selector())),
    }
}

fn rollout(env: &SyntheticEnv, agent: &ScriptedAgent, templates: &TemplateSet) -> Result<Trace, EvalError> {
    let res = EpisodeResources {
        retriever: None,
        summarizer: None,
        templates,
        settings: RetrievalSettings::default(),
    };
    Ok(run_episode(env, agent, Regime::None, res)?.trace)
}

/// Baseline failures and expert successes on goals `seed-0..seeds`.
pub fn training_traces(seeds: usize) -> Result<TraceSet, EvalError> {
    let templates = TemplateSet::builtin();
    let agent = standard_agent();
    let (base, expert) = (agent.baseline(), agent.expert());
    let mut out = Vec::new();
    for kind in EnvKind::ALL {
        for i in 0..seeds {
            let env = SyntheticEnv::new(kind, format!("seed-{i}"));
            out.push(rollout(&env, &base, &templates)?);
            out.push(rollout(&env, &expert, &templates)?);
        }
    }
    Ok(TraceSet::new(out)?)
}

/// Runs the full generation pipeline over the training traces with the
/// scripted backends.
pub fn demo_db(seeds: usize, workers: usize) -> Result<(HintDb, GenerationReport), EvalError> {
    let traces = training_traces(seeds)?;
    let cfg = PipelineConfig {
        workers,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(cfg, scripted_backends(), TemplateSet::builtin())?;
    Ok(pipeline.run(&traces)?)
}

pub fn summarizer_backend() -> Arc<dyn ChatBackend> {
    Arc::new(scripted_summarizer())
}
