//! Zoom & reflect: critical-step selection, hinter prompt assembly,
//! semantic-key summarization and structured hint parsing.
//!
//! Everything here runs offline while the hint database is built; nothing in
//! this module is called on the retrieval path.

mod critical;
mod key;
mod parse;
mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::Evidence;
use crate::llm::{LlmError, TemplateError};

pub use critical::{parse_step_selection, select_critical_steps, CriticalSteps, TERMINAL_REASON};
pub use key::{anchor_point, first_divergence, parse_context, summarize_context, ContextPrefix};
pub use parse::{check_hint_text, generate_hint, parse_hint_completion, HintCompletion};
pub use prompt::{build_prompt, zoom_window, HinterPrompt, PromptExtras, PromptForm};

pub const DEFAULT_DELTA: usize = 2;
pub const DEFAULT_MAX_CRITICAL_STEPS: usize = 2;
pub const DEFAULT_HINT_MAX_CHARS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoomConfig {
    /// Observation window length appended after each critical step.
    pub delta: usize,
    pub max_critical_steps: usize,
    /// Character budget for rendered prompts; observations are dropped
    /// oldest-first until the prompt fits.
    pub char_budget: Option<usize>,
    pub hint_max_chars: usize,
}

impl Default for ZoomConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            max_critical_steps: DEFAULT_MAX_CRITICAL_STEPS,
            char_budget: None,
            hint_max_chars: DEFAULT_HINT_MAX_CHARS,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing <{0}> span")]
    MissingTag(&'static str),
    #[error("hint spans multiple lines")]
    MultilineHint,
    #[error("hint contains double quotes")]
    DoubleQuotes,
    #[error("hint is {chars} characters, limit is {max}")]
    HintTooLong { chars: usize, max: usize },
    #[error("empty {0}")]
    Empty(&'static str),
}

#[derive(Debug, Error)]
pub enum ZoomError {
    #[error("backend call failed: {0}")]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("unparseable completion: {source}")]
    Parse {
        #[source]
        source: ParseError,
        raw: String,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// One-sentence summary of a trajectory prefix, used as the retrieval handle.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticKey {
    pub context: String,
    /// Length `t` of the prefix the context summarizes.
    pub source_prefix_len: usize,
}

/// A hint before the store assigns its id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewHint {
    pub key: SemanticKey,
    pub topic: String,
    pub hint: String,
    pub think: String,
    pub evidence: Evidence,
    pub task_id: String,
    pub goal_ids: Vec<String>,
    pub created_by: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintRecord {
    pub hint_id: String,
    pub key: SemanticKey,
    pub topic: String,
    pub hint: String,
    pub think: String,
    pub evidence: Evidence,
    pub task_id: String,
    pub goal_ids: Vec<String>,
    pub created_by: String,
}

impl NewHint {
    pub fn into_record(self, hint_id: String) -> HintRecord {
        HintRecord {
            hint_id,
            key: self.key,
            topic: self.topic,
            hint: self.hint,
            think: self.think,
            evidence: self.evidence,
            task_id: self.task_id,
            goal_ids: self.goal_ids,
            created_by: self.created_by,
        }
    }
}
