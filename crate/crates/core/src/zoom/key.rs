use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::prompt::render_steps;
use super::{CriticalSteps, ParseError, SemanticKey, ZoomError};
use crate::evidence::{Evidence, EvidenceMode};
use crate::llm::{bindings, ChatBackend, CompletionRequest, TemplateId, TemplateSet, SUMMARY_MAX_TOKENS};
use crate::text::collapse_whitespace;
use crate::trace::Trace;

/// The prefix `({z,a,r}_{1:t-1}, x_t)` of a trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextPrefix<'a> {
    pub trace: &'a Trace,
    pub t: usize,
}

impl<'a> ContextPrefix<'a> {
    pub fn from_trace(trace: &'a Trace, t: usize) -> Result<Self, ZoomError> {
        if !(1..=trace.len()).contains(&t) {
            return Err(ZoomError::Argument(format!(
                "prefix length {t} outside 1..={} for trace {}",
                trace.len(),
                trace.trace_id
            )));
        }
        Ok(Self { trace, t })
    }

    /// Renders prior steps without observations, then the current observation.
    pub fn render(&self) -> String {
        let mut prior = self.trace.clone();
        prior.steps.truncate(self.t - 1);
        let mut out = render_steps(&prior, &BTreeSet::new(), &BTreeSet::new());
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = write!(out, "Step {} (current):", self.t);
        if let Some(obs) = &self.trace.steps[self.t - 1].observation {
            let _ = write!(out, "\n  Observation: {obs}");
        }
        out
    }

    pub fn current_observation(&self) -> Option<&str> {
        self.trace.steps[self.t - 1].observation.as_deref()
    }
}

/// Extracts the first `<tag>...</tag>` span verbatim.
pub(crate) fn span<'a>(text: &'a str, tag: &'static str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let len = text[start..].find(&close)?;
    Some(&text[start..start + len])
}

pub fn parse_context(completion: &str, prefix_len: usize) -> Result<SemanticKey, ParseError> {
    let raw = span(completion, "context").ok_or(ParseError::MissingTag("context"))?;
    let context = collapse_whitespace(raw);
    if context.is_empty() {
        return Err(ParseError::Empty("context"));
    }
    Ok(SemanticKey {
        context,
        source_prefix_len: prefix_len,
    })
}

pub fn summarize_context(
    prefix: &ContextPrefix<'_>,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
) -> Result<SemanticKey, ZoomError> {
    let prompt = templates.render(
        TemplateId::ContextIdentification,
        &bindings([
            ("goal", prefix.trace.goal_text.clone()),
            ("steps", prefix.render()),
        ]),
    )?;
    let completion = backend.complete(&CompletionRequest::new(prompt, SUMMARY_MAX_TOKENS))?;
    parse_context(&completion, prefix.t).map_err(|source| ZoomError::Parse {
        source,
        raw: completion,
    })
}

/// First step index whose action texts differ. Traces that agree on their
/// common prefix diverge right after it, clipped to the first trace's length.
pub fn first_divergence(a: &Trace, b: &Trace) -> usize {
    let common = a.len().min(b.len());
    (0..common)
        .find(|&i| a.steps[i].action != b.steps[i].action)
        .map(|i| i + 1)
        .unwrap_or_else(|| (common + 1).min(a.len()).max(1))
}

/// Prefix length `t` for the semantic key of an evidence unit.
pub fn anchor_point(evidence: &Evidence, traces: &[&Trace], critical: Option<&[CriticalSteps]>) -> usize {
    let first = traces[0];
    match evidence.mode {
        EvidenceMode::Single => critical
            .and_then(|c| c.first())
            .and_then(CriticalSteps::first)
            .unwrap_or(first.len()),
        EvidenceMode::Pair if traces.len() >= 2 => first_divergence(first, traces[1]),
        _ => first.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;
    use crate::trace::fixtures::trace;

    #[test]
    fn worked_example_context() {
        let k = parse_context(
            "<think>...</think><context>User is preparing a multi-column sort.</context>",
            3,
        )
        .unwrap();
        assert_eq!(k.context, "User is preparing a multi-column sort.");
        assert_eq!(k.source_prefix_len, 3);
    }

    #[test]
    fn missing_tags_is_error() {
        assert_eq!(parse_context("no tags", 1), Err(ParseError::MissingTag("context")));
        assert_eq!(parse_context("<context>  \n </context>", 1), Err(ParseError::Empty("context")));
    }

    #[test]
    fn newline_collapsed() {
        let k = parse_context("<context>\nUser is on\n  the list page.\n</context>", 1).unwrap();
        assert_eq!(k.context, "User is on the list page.");
    }

    #[test]
    fn prefix_shows_only_current_observation() {
        let t = trace("t1", "T", "g", 4, 1.0);
        let p = ContextPrefix::from_trace(&t, 3).unwrap();
        let text = p.render();
        assert!(text.contains("obs t1 3"));
        assert!(!text.contains("obs t1 1") && !text.contains("obs t1 2"));
        assert!(text.contains("click('e1')") && text.contains("click('e2')"));
        assert!(!text.contains("click('e3')") && !text.contains("click('e4')"));
        assert!(ContextPrefix::from_trace(&t, 5).is_err());
        assert!(ContextPrefix::from_trace(&t, 0).is_err());
    }

    #[test]
    fn summarize_uses_backend() {
        let t = trace("t1", "T", "g", 2, 1.0);
        let b = ScriptedBackend::new("s").with_fallback("<context>User is on step two.</context>");
        let p = ContextPrefix::from_trace(&t, 2).unwrap();
        let k = summarize_context(&p, &b, &TemplateSet::builtin()).unwrap();
        assert_eq!(k.context, "User is on step two.");
        assert!(b.calls()[0].prompt.contains("GOAL: goal for g"));
        let bad = ScriptedBackend::new("s").with_fallback("nothing");
        assert!(matches!(
            summarize_context(&p, &bad, &TemplateSet::builtin()),
            Err(ZoomError::Parse { .. })
        ));
    }

    #[test]
    fn divergence_index() {
        let a = trace("a", "T", "g", 4, 1.0);
        let mut b = trace("b", "T", "g", 4, 0.0);
        b.steps[2].action = "click('other')".into();
        assert_eq!(first_divergence(&a, &b), 3);
        let short = trace("c", "T", "g", 2, 0.0);
        assert_eq!(first_divergence(&a, &short), 3);
        assert_eq!(first_divergence(&a, &a.clone()), 4);
    }

    #[test]
    fn anchor_by_mode() {
        let a = trace("a", "T", "g", 4, 1.0);
        let mut b = trace("b", "T", "g", 4, 0.0);
        b.steps[1].action = "x".into();
        let single = Evidence {
            mode: EvidenceMode::Single,
            members: vec!["a".into()],
            pair_kind: None,
            task_id: "T".into(),
        };
        let crit = [CriticalSteps::new([3], 2)];
        assert_eq!(anchor_point(&single, &[&a], Some(&crit)), 3);
        assert_eq!(anchor_point(&single, &[&a], None), 4);
        let pair = Evidence {
            mode: EvidenceMode::Pair,
            members: vec!["a".into(), "b".into()],
            ..single.clone()
        };
        assert_eq!(anchor_point(&pair, &[&a, &b], None), 2);
        let multi = Evidence {
            mode: EvidenceMode::Multi,
            ..pair.clone()
        };
        assert_eq!(anchor_point(&multi, &[&a, &b], None), 4);
    }
}
