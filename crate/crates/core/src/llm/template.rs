//! Prompt templates with `{{name}}` placeholders.
//!
//! Bodies are plain text assets under `prompts/`, one file per template id.
//! The built-in copies are compiled in; [`TemplateSet::from_dir`] loads an
//! edited set at runtime without rebuilding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unbound placeholder: {0}")]
    Unbound(String),
    #[error("unknown template id: {0}")]
    UnknownTemplate(String),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    StepSelection,
    HintGeneration,
    StepSequence,
    TwoTraceComparison,
    StepZoom,
    DualStepZoom,
    ContextIdentification,
    QueryFormulation,
    HintRanking,
}

impl TemplateId {
    pub const ALL: [TemplateId; 9] = [
        TemplateId::StepSelection,
        TemplateId::HintGeneration,
        TemplateId::StepSequence,
        TemplateId::TwoTraceComparison,
        TemplateId::StepZoom,
        TemplateId::DualStepZoom,
        TemplateId::ContextIdentification,
        TemplateId::QueryFormulation,
        TemplateId::HintRanking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::StepSelection => "step_selection",
            TemplateId::HintGeneration => "hint_generation",
            TemplateId::StepSequence => "step_sequence",
            TemplateId::TwoTraceComparison => "two_trace_comparison",
            TemplateId::StepZoom => "step_zoom",
            TemplateId::DualStepZoom => "dual_step_zoom",
            TemplateId::ContextIdentification => "context_identification",
            TemplateId::QueryFormulation => "query_formulation",
            TemplateId::HintRanking => "hint_ranking",
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateId::StepSelection => include_str!("../../prompts/step_selection.txt"),
            TemplateId::HintGeneration => include_str!("../../prompts/hint_generation.txt"),
            TemplateId::StepSequence => include_str!("../../prompts/step_sequence.txt"),
            TemplateId::TwoTraceComparison => {
                include_str!("../../prompts/two_trace_comparison.txt")
            }
            TemplateId::StepZoom => include_str!("../../prompts/step_zoom.txt"),
            TemplateId::DualStepZoom => include_str!("../../prompts/dual_step_zoom.txt"),
            TemplateId::ContextIdentification => {
                include_str!("../../prompts/context_identification.txt")
            }
            TemplateId::QueryFormulation => include_str!("../../prompts/query_formulation.txt"),
            TemplateId::HintRanking => include_str!("../../prompts/hint_ranking.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| TemplateError::UnknownTemplate(s.to_string()))
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

/// Name -> value substitutions for one render.
pub type Bindings = HashMap<String, String>;

/// Builds a [`Bindings`] map from string pairs.
pub fn bindings<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    body: String,
    placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: impl Into<String>) -> Self {
        let body = body.into();
        let placeholders = placeholder_re()
            .captures_iter(&body)
            .map(|c| c[1].to_string())
            .collect();
        Self {
            id,
            body,
            placeholders,
        }
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    /// Substitutes every placeholder in a single pass. Values are inserted
    /// literally; placeholder syntax inside a value is not expanded.
    pub fn render(&self, bindings: &Bindings) -> Result<String, TemplateError> {
        if let Some(missing) = self.placeholders.iter().find(|p| !bindings.contains_key(*p)) {
            return Err(TemplateError::Unbound(missing.clone()));
        }
        let out = placeholder_re().replace_all(&self.body, |c: &regex::Captures<'_>| {
            bindings[&c[1]].clone()
        });
        Ok(out.into_owned())
    }
}

#[derive(Clone, Debug)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| (id, PromptTemplate::new(id, id.builtin_body())))
            .collect();
        Self { templates }
    }

    /// Loads `<dir>/<template_id>.txt` for every id, falling back to the
    /// built-in body for files that do not exist.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                set.templates.insert(id, PromptTemplate::new(id, body));
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, bindings: &Bindings) -> Result<String, TemplateError> {
        self.get(id).render(bindings)
    }

    /// Renders by textual id, as received from config or the command line.
    pub fn render_named(&self, id: &str, bindings: &Bindings) -> Result<String, TemplateError> {
        self.render(id.parse()?, bindings)
    }
}
