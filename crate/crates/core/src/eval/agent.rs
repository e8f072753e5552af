use serde::{Deserialize, Serialize};

use super::env::EnvKind;
use crate::zoom::HintRecord;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyEntry {
    /// Observation tag this entry applies to, e.g. `[ms:start]`.
    pub state: String,
    /// Substring a retrieved hint must contain for this entry to fire;
    /// `None` marks the baseline entry.
    pub hint_trigger: Option<String>,
    pub action: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action: String,
    pub matched_hint: Option<String>,
}

/// Table-driven policy. Hint-conditioned entries win over the baseline entry
/// for the same state whenever a retrieved hint contains their trigger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedAgent {
    pub name: String,
    pub table: Vec<PolicyEntry>,
    pub uses_hints: bool,
}

pub const NOOP: &str = "noop()";

impl ScriptedAgent {
    pub fn act(&self, observation: &str, hints: &[HintRecord]) -> Decision {
        let applies = |e: &&PolicyEntry| observation.contains(&e.state);
        if self.uses_hints {
            for e in self.table.iter().filter(applies) {
                let Some(trigger) = &e.hint_trigger else { continue };
                if let Some(h) = hints.iter().find(|h| h.hint.contains(trigger.as_str())) {
                    return Decision {
                        action: e.action.clone(),
                        matched_hint: Some(h.hint_id.clone()),
                    };
                }
            }
        }
        let action = self
            .table
            .iter()
            .filter(applies)
            .find(|e| e.hint_trigger.is_none())
            .map_or(NOOP.to_string(), |e| e.action.clone());
        Decision {
            action,
            matched_hint: None,
        }
    }

    /// Always takes the hint-conditioned entry where one exists, as if a
    /// matching hint were present. Used to produce successful demonstrations.
    pub fn expert(&self) -> Self {
        let hinted: Vec<&str> = self
            .table
            .iter()
            .filter(|e| e.hint_trigger.is_some())
            .map(|e| e.state.as_str())
            .collect();
        let table = self
            .table
            .iter()
            .filter(|e| e.hint_trigger.is_some() || !hinted.contains(&e.state.as_str()))
            .map(|e| PolicyEntry {
                hint_trigger: None,
                ..e.clone()
            })
            .collect();
        Self {
            name: format!("{}-expert", self.name),
            table,
            uses_hints: false,
        }
    }

    pub fn baseline(&self) -> Self {
        Self {
            name: format!("{}-baseline", self.name),
            uses_hints: false,
            ..self.clone()
        }
    }
}

fn entry(state: &str, trigger: Option<&str>, action: &str) -> PolicyEntry {
    PolicyEntry {
        state: state.into(),
        hint_trigger: trigger.map(String::from),
        action: action.into(),
    }
}

/// Substring of the hint that unlocks the better strategy in each env.
pub fn hint_trigger(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::MultiSelectList => "Ctrl",
        EnvKind::FilterNavigation => "'All' menu",
        EnvKind::PaginatedGrid => "'Bill-to Name'",
    }
}

/// Policy table covering all three environments.
pub fn standard_agent() -> ScriptedAgent {
    let ms = Some(hint_trigger(EnvKind::MultiSelectList));
    let fnav = Some(hint_trigger(EnvKind::FilterNavigation));
    let pg = Some(hint_trigger(EnvKind::PaginatedGrid));
    let table = vec![
        entry("[ms:start]", ms, "ctrl_click('Apple')"),
        entry("[ms:start]", None, "click('Apple')"),
        entry("[ms:sel=Apple]", ms, "ctrl_click('Cherry')"),
        entry("[ms:sel=Apple]", None, "click('Cherry')"),
        entry("[ms:sel=Cherry]", None, "click('Submit')"),
        entry("[ms:sel=Apple+Cherry]", None, "click('Submit')"),
        entry("[fn:home]", fnav, "click('All')"),
        entry("[fn:home]", None, "search('incident')"),
        entry("[fn:search]", fnav, "click('All')"),
        entry("[fn:search]", None, "search('incident list')"),
        entry("[fn:all-menu]", None, "click('Incident')"),
        entry("[fn:list]", None, "add_filter('Priority = 1')"),
        entry("[fn:staged]", None, "click('Run')"),
        entry("[pg:dashboard]", pg, "click('Sales')"),
        entry("[pg:dashboard]", None, "answer('2')"),
        entry("[pg:sales-menu]", None, "click('Orders')"),
        entry("[pg:grid]", None, "sort('Bill-to Name')"),
        entry("[pg:sorted]", None, "scroll_to('Veronica Costello')"),
        entry("[pg:group]", None, "select_group('Veronica Costello')"),
        entry("[pg:counted]", None, "answer('5')"),
    ];
    ScriptedAgent {
        name: "table".into(),
        table,
        uses_hints: true,
    }
}
