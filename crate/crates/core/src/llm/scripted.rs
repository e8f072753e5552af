use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, CompletionRequest, LlmError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Contains(String),
    Exact(String),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::Exact(s) => prompt == s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub completion: String,
}

impl ScriptRule {
    pub fn contains(needle: impl Into<String>, completion: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Contains(needle.into()),
            completion: completion.into(),
        }
    }
}

/// On-disk script: `{"model_tag": "...", "rules": [{"contains": "...", "completion": "..."}]}`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub model_tag: Option<String>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub fallback: Option<String>,
    #[serde(default)]
    pub latency_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub prompt: String,
    pub completion: String,
}

type Responder = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;

/// Deterministic backend: the first rule whose matcher accepts the prompt
/// supplies the completion, then the optional responder function, then the
/// fallback text. Every answered call is appended to an internal log.
#[derive(Clone)]
pub struct ScriptedBackend {
    tag: String,
    rules: Vec<ScriptRule>,
    responder: Option<Responder>,
    fallback: Option<String>,
    latency: Option<Duration>,
    log: Arc<Mutex<Vec<CallRecord>>>,
}

impl fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("tag", &self.tag)
            .field("rules", &self.rules.len())
            .field("responder", &self.responder.is_some())
            .field("latency", &self.latency)
            .finish()
    }
}

impl ScriptedBackend {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            rules: Vec::new(),
            responder: None,
            fallback: None,
            latency: None,
            log: Arc::default(),
        }
    }

    pub fn with_rules(mut self, rules: impl IntoIterator<Item = ScriptRule>) -> Self {
        self.rules.extend(rules);
        self
    }

    pub fn rule(self, needle: impl Into<String>, completion: impl Into<String>) -> Self {
        self.with_rules([ScriptRule::contains(needle, completion)])
    }

    /// Consulted after the rule table. Must be a pure function of the prompt
    /// to keep the backend deterministic.
    pub fn with_responder(
        mut self,
        f: impl Fn(&str) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Arc::new(f));
        self
    }

    pub fn with_fallback(mut self, completion: impl Into<String>) -> Self {
        self.fallback = Some(completion.into());
        self
    }

    /// Sleeps this long before answering each call.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn from_script(script: ScriptFile) -> Self {
        let mut b = Self::new(script.model_tag.unwrap_or_else(|| "scripted".into()))
            .with_rules(script.rules);
        b.fallback = script.fallback;
        b.latency = script.latency_ms.map(Duration::from_millis);
        b
    }

    pub fn from_json_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidRequest(format!("{}: {e}", path.display())))?;
        let script: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| LlmError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Ok(Self::from_script(script))
    }

    /// A backend that replays exactly the calls recorded in `log`.
    pub fn from_log(tag: impl Into<String>, log: &[CallRecord]) -> Self {
        Self::new(tag).with_rules(log.iter().map(|c| ScriptRule {
            matcher: Matcher::Exact(c.prompt.clone()),
            completion: c.completion.clone(),
        }))
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("call log poisoned").len()
    }

    fn answer(&self, prompt: &str) -> Option<String> {
        self.rules
            .iter()
            .find(|r| r.matcher.matches(prompt))
            .map(|r| r.completion.clone())
            .or_else(|| self.responder.as_ref().and_then(|f| f(prompt)))
            .or_else(|| self.fallback.clone())
    }
}

impl ChatBackend for ScriptedBackend {
    fn model_tag(&self) -> &str {
        &self.tag
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.check()?;
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let completion = self.answer(&request.prompt).ok_or(LlmError::NoRuleMatched)?;
        self.log.lock().expect("call log poisoned").push(CallRecord {
            prompt: request.prompt.clone(),
            completion: completion.clone(),
        });
        Ok(completion)
    }
}
