use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::key::span;
use super::{HinterPrompt, NewHint, ParseError, SemanticKey, ZoomConfig, ZoomError};
use crate::evidence::Evidence;
use crate::llm::{ChatBackend, CompletionRequest, HINTER_MAX_TOKENS};
use crate::text::collapse_whitespace;
use crate::trace::Trace;

/// The three tagged spans of a hinter completion, kept verbatim.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintCompletion {
    pub think: String,
    pub topic: String,
    pub hint: String,
}

impl HintCompletion {
    pub fn serialize(&self) -> String {
        format!(
            "<think>{}</think>\n<topic>{}</topic>\n<hint>{}</hint>",
            self.think, self.topic, self.hint
        )
    }

    pub fn topic_text(&self) -> String {
        collapse_whitespace(&self.topic)
    }
}

pub fn parse_hint_completion(completion: &str) -> Result<HintCompletion, ParseError> {
    let get = |tag| span(completion, tag).ok_or(ParseError::MissingTag(tag));
    Ok(HintCompletion {
        think: get("think")?.to_string(),
        topic: get("topic")?.to_string(),
        hint: get("hint")?.to_string(),
    })
}

/// Validates a hint body and returns it trimmed.
pub fn check_hint_text(raw: &str, max_chars: usize) -> Result<String, ParseError> {
    let hint = raw.trim();
    if hint.is_empty() {
        return Err(ParseError::Empty("hint"));
    }
    if hint.contains(['\n', '\r']) {
        return Err(ParseError::MultilineHint);
    }
    if hint.contains('"') {
        return Err(ParseError::DoubleQuotes);
    }
    let chars = hint.chars().count();
    if chars > max_chars {
        return Err(ParseError::HintTooLong { chars, max: max_chars });
    }
    Ok(hint.to_string())
}

fn validate(completion: &str, max_chars: usize) -> Result<(HintCompletion, String, String), ParseError> {
    let parsed = parse_hint_completion(completion)?;
    let hint = check_hint_text(&parsed.hint, max_chars)?;
    let topic = parsed.topic_text();
    if topic.is_empty() {
        return Err(ParseError::Empty("topic"));
    }
    Ok((parsed, topic, hint))
}

/// Calls the hinter on a rendered prompt and parses the result.
pub fn generate_hint(
    evidence: &Evidence,
    traces: &[&Trace],
    prompt: &HinterPrompt,
    key: SemanticKey,
    backend: &dyn ChatBackend,
    cfg: &ZoomConfig,
) -> Result<NewHint, ZoomError> {
    let completion = backend.complete(&CompletionRequest::new(prompt.text.clone(), HINTER_MAX_TOKENS))?;
    let (parsed, topic, hint) = validate(&completion, cfg.hint_max_chars).map_err(|source| ZoomError::Parse {
        source,
        raw: completion.clone(),
    })?;
    let goal_ids: BTreeSet<&str> = traces.iter().map(|t| t.goal_id.as_str()).collect();
    Ok(NewHint {
        key,
        topic,
        hint,
        think: parsed.think.trim().to_string(),
        evidence: evidence.clone(),
        task_id: evidence.task_id.clone(),
        goal_ids: goal_ids.into_iter().map(String::from).collect(),
        created_by: backend.model_tag().to_string(),
    })
}
