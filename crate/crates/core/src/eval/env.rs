use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    MultiSelectList,
    FilterNavigation,
    PaginatedGrid,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [
        EnvKind::MultiSelectList,
        EnvKind::FilterNavigation,
        EnvKind::PaginatedGrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::MultiSelectList => "multi_select_list",
            EnvKind::FilterNavigation => "filter_navigation",
            EnvKind::PaginatedGrid => "paginated_grid",
        }
    }

    /// Prefix of every observation tag, e.g. `[ms:`.
    pub fn tag_prefix(self) -> &'static str {
        match self {
            EnvKind::MultiSelectList => "[ms:",
            EnvKind::FilterNavigation => "[fn:",
            EnvKind::PaginatedGrid => "[pg:",
        }
    }

    fn goal_text(self) -> &'static str {
        match self {
            EnvKind::MultiSelectList => "Select Apple and Cherry from the list, then click Submit.",
            EnvKind::FilterNavigation => "Open the Incident list and show only priority 1 incidents.",
            EnvKind::PaginatedGrid => "Report how many orders were placed by the customer Veronica Costello.",
        }
    }

    fn step_limit(self) -> usize {
        match self {
            EnvKind::MultiSelectList => 5,
            EnvKind::FilterNavigation => 6,
            EnvKind::PaginatedGrid => 8,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| format!("unknown environment '{s}'"))
    }
}

/// A deterministic text environment. The task id is the kind name; several
/// goals (seeds) may share one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticEnv {
    pub env_id: String,
    pub kind: EnvKind,
    pub task_id: String,
    pub goal_id: String,
    pub goal_text: String,
    pub step_limit: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EnvState {
    MultiSelect { selected: Vec<&'static str> },
    Filter(FilterStage),
    Grid(GridStage),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterStage {
    Home,
    SearchResults,
    AllMenu,
    List,
    Staged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridStage {
    Dashboard,
    SalesMenu,
    Grid,
    Sorted,
    GroupVisible,
    Counted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: String,
    pub reward: f64,
    pub done: bool,
    pub error: Option<String>,
}

const ITEMS: [&str; 4] = ["Apple", "Banana", "Cherry", "Date"];
const TARGETS: [&str; 2] = ["Apple", "Cherry"];
const ORDER_COUNT: &str = "5";

fn arg<'a>(action: &'a str, verb: &str) -> Option<&'a str> {
    action
        .strip_prefix(verb)?
        .strip_prefix("('")?
        .strip_suffix("')")
}

impl SyntheticEnv {
    pub fn new(kind: EnvKind, goal_id: impl Into<String>) -> Self {
        let goal_id = goal_id.into();
        Self {
            env_id: format!("{}/{goal_id}", kind.as_str()),
            kind,
            task_id: kind.as_str().to_string(),
            goal_id,
            goal_text: kind.goal_text().to_string(),
            step_limit: kind.step_limit(),
        }
    }

    pub fn reset(&self) -> (EnvState, String) {
        let state = match self.kind {
            EnvKind::MultiSelectList => EnvState::MultiSelect { selected: Vec::new() },
            EnvKind::FilterNavigation => EnvState::Filter(FilterStage::Home),
            EnvKind::PaginatedGrid => EnvState::Grid(GridStage::Dashboard),
        };
        let obs = observe(&state);
        (state, obs)
    }

    /// Applies `action`. Unknown actions leave the state unchanged and
    /// report an error; terminal actions set `done`.
    pub fn step(&self, state: &mut EnvState, action: &str) -> Transition {
        let mut reward = 0.0;
        let mut done = false;
        let mut error = None;
        let invalid = |e: &mut Option<String>| *e = Some(format!("action {action} has no effect here"));
        match state {
            EnvState::MultiSelect { selected } => {
                if let Some(item) = arg(action, "ctrl_click").and_then(|a| ITEMS.iter().find(|i| **i == a)) {
                    if !selected.contains(item) {
                        selected.push(item);
                        selected.sort_unstable();
                    }
                } else if action == "click('Submit')" {
                    done = true;
                    let mut want = TARGETS.to_vec();
                    want.sort_unstable();
                    reward = if *selected == want { 1.0 } else { 0.0 };
                } else if let Some(item) = arg(action, "click").and_then(|a| ITEMS.iter().find(|i| **i == a)) {
                    *selected = vec![item];
                } else {
                    invalid(&mut error);
                }
            }
            EnvState::Filter(stage) => {
                use FilterStage::*;
                let next = match (*stage, action) {
                    (Home | SearchResults, a) if arg(a, "search").is_some() => Some(SearchResults),
                    (Home | SearchResults, "click('All')") => Some(AllMenu),
                    (AllMenu, "click('Incident')") => Some(List),
                    (List, "add_filter('Priority = 1')") => Some(Staged),
                    (Staged, "click('Run')") => {
                        done = true;
                        reward = 1.0;
                        None
                    }
                    _ => {
                        invalid(&mut error);
                        None
                    }
                };
                if let Some(n) = next {
                    *stage = n;
                }
            }
            EnvState::Grid(stage) => {
                use GridStage::*;
                if let Some(ans) = arg(action, "answer") {
                    done = true;
                    reward = if *stage == Counted && ans == ORDER_COUNT { 1.0 } else { 0.0 };
                } else {
                    let next = match (*stage, action) {
                        (Dashboard, "click('Sales')") => Some(SalesMenu),
                        (SalesMenu, "click('Orders')") => Some(Grid),
                        (Grid, "sort('Bill-to Name')") => Some(Sorted),
                        (Sorted, "scroll_to('Veronica Costello')") => Some(GroupVisible),
                        (GroupVisible, "select_group('Veronica Costello')") => Some(Counted),
                        _ => None,
                    };
                    match next {
                        Some(n) => *stage = n,
                        None => invalid(&mut error),
                    }
                }
            }
        }
        Transition {
            observation: observe(state),
            reward,
            done,
            error,
        }
    }
}

/// Observation text; the bracketed tag names the state.
pub fn observe(state: &EnvState) -> String {
    match state {
        EnvState::MultiSelect { selected } => {
            let tag = if selected.is_empty() {
                "start".to_string()
            } else {
                format!("sel={}", selected.join("+"))
            };
            let shown = if selected.is_empty() { "none".to_string() } else { selected.join(", ") };
            format!(
                "[ms:{tag}] List box with items: {}. Selected: {shown}. Button: Submit.",
                ITEMS.join(", ")
            )
        }
        EnvState::Filter(stage) => match stage {
            FilterStage::Home => "[fn:home] Home page. Global search box at the top. Application Navigator with an 'All' menu on the left.".into(),
            FilterStage::SearchResults => "[fn:search] Global search results: knowledge articles only, no matching module.".into(),
            FilterStage::AllMenu => "[fn:all-menu] Application Navigator 'All' menu expanded: Incident, Problem, Change.".into(),
            FilterStage::List => "[fn:list] Incident list showing all records. Filter builder available.".into(),
            FilterStage::Staged => "[fn:staged] Filter condition Priority = 1 staged. Button: Run.".into(),
        },
        EnvState::Grid(stage) => match stage {
            GridStage::Dashboard => "[pg:dashboard] Admin dashboard. Menu: Sales, Catalog, Customers. A recent orders widget lists 2 orders by Veronica Costello.".into(),
            GridStage::SalesMenu => "[pg:sales-menu] Sales menu: Orders, Invoices, Shipments.".into(),
            GridStage::Grid => "[pg:grid] Orders grid page 1 of 5, unsorted. Columns: ID, Bill-to Name, Total.".into(),
            GridStage::Sorted => "[pg:sorted] Orders grid sorted by Bill-to Name. Names are grouped alphabetically.".into(),
            GridStage::GroupVisible => "[pg:group] Rows for Veronica Costello are contiguous on screen.".into(),
            GridStage::Counted => "[pg:counted] 5 rows selected for Veronica Costello.".into(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(env: &SyntheticEnv, actions: &[&str]) -> (f64, usize, bool) {
        let (mut s, _) = env.reset();
        let mut total = 0.0;
        for (i, a) in actions.iter().enumerate() {
            let t = env.step(&mut s, a);
            total += t.reward;
            if t.done {
                return (total, i + 1, true);
            }
        }
        (total, actions.len(), false)
    }

    #[test]
    fn multi_select_needs_modifier() {
        let env = SyntheticEnv::new(EnvKind::MultiSelectList, "g");
        assert_eq!(run(&env, &["click('Apple')", "click('Cherry')", "click('Submit')"]), (0.0, 3, true));
        assert_eq!(
            run(&env, &["ctrl_click('Apple')", "ctrl_click('Cherry')", "click('Submit')"]),
            (1.0, 3, true)
        );
    }

    #[test]
    fn filter_navigation_paths() {
        let env = SyntheticEnv::new(EnvKind::FilterNavigation, "g");
        assert_eq!(
            run(&env, &["click('All')", "click('Incident')", "add_filter('Priority = 1')", "click('Run')"]),
            (1.0, 4, true)
        );
        let (mut s, _) = env.reset();
        let t = env.step(&mut s, "search('incident')");
        assert!(t.observation.starts_with("[fn:search]") && !t.done);
        let t = env.step(&mut s, "click('Run')");
        assert!(t.error.is_some());
    }

    #[test]
    fn grid_requires_counting() {
        let env = SyntheticEnv::new(EnvKind::PaginatedGrid, "g");
        assert_eq!(run(&env, &["answer('2')"]), (0.0, 1, true));
        assert_eq!(
            run(
                &env,
                &[
                    "click('Sales')",
                    "click('Orders')",
                    "sort('Bill-to Name')",
                    "scroll_to('Veronica Costello')",
                    "select_group('Veronica Costello')",
                    "answer('5')"
                ]
            ),
            (1.0, 6, true)
        );
    }

    #[test]
    fn deterministic_transitions() {
        for kind in EnvKind::ALL {
            let env = SyntheticEnv::new(kind, "g");
            let (mut a, oa) = env.reset();
            let (mut b, ob) = env.reset();
            assert_eq!(oa, ob);
            for act in ["click('All')", "click('Apple')", "click('Sales')", "noop()"] {
                assert_eq!(env.step(&mut a, act), env.step(&mut b, act));
            }
            assert!(oa.starts_with(kind.tag_prefix()));
        }
    }
}
