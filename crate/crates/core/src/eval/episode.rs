use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::agent::ScriptedAgent;
use super::env::SyntheticEnv;
use super::EvalError;
use crate::llm::{ChatBackend, TemplateSet};
use crate::retrieval::{RetrievalQuery, RetrievalSession, Retriever, Scorer};
use crate::store::FilterMode;
use crate::trace::{Outcome, Reward, Step, Trace};
use crate::zoom::{summarize_context, ContextPrefix, HintRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    None,
    Episode,
    Step,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::None, Regime::Episode, Regime::Step];
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::None => "none",
            Regime::Episode => "episode",
            Regime::Step => "step",
        })
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Regime::ALL
            .into_iter()
            .find(|r| r.to_string() == s.trim())
            .ok_or_else(|| format!("unknown regime '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSettings {
    pub k: usize,
    pub mode: FilterMode,
    pub scorer: Scorer,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            k: crate::retrieval::DEFAULT_K,
            mode: FilterMode::InTask,
            scorer: Scorer::Bm25,
        }
    }
}

/// What an episode may use besides the environment and the agent.
#[derive(Clone, Copy)]
pub struct EpisodeResources<'a> {
    pub retriever: Option<&'a Retriever>,
    pub summarizer: Option<&'a dyn ChatBackend>,
    pub templates: &'a TemplateSet,
    pub settings: RetrievalSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub t: usize,
    pub observation: String,
    /// Summarized context (step regime only).
    pub context: Option<String>,
    pub hints: Vec<String>,
    pub action: String,
    pub matched_hint: Option<String>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub env_id: String,
    pub task_id: String,
    pub regime: Regime,
    pub reward: f64,
    pub steps: usize,
    pub retrieval_calls: usize,
    /// Distinct hint ids shown to the agent, first appearance order.
    pub hints_retrieved: Vec<String>,
    pub transcript: Vec<TranscriptStep>,
    pub trace: Trace,
}

fn hint_ids(hints: &[HintRecord]) -> Vec<String> {
    hints.iter().map(|h| h.hint_id.clone()).collect()
}

/// Retrieve & Act: episode regime retrieves once from the goal; step regime
/// summarizes the prefix at every step and retrieves on that context.
pub fn run_episode(
    env: &SyntheticEnv,
    agent: &ScriptedAgent,
    regime: Regime,
    res: EpisodeResources<'_>,
) -> Result<EpisodeResult, EvalError> {
    let retriever = match regime {
        Regime::None => None,
        _ => Some(res.retriever.ok_or(EvalError::NoDatabase(regime))?),
    };
    if regime == Regime::Step && res.summarizer.is_none() {
        return Err(EvalError::NoSummarizer);
    }
    let session = retriever.map(RetrievalSession::new);
    let query = |kind_goal: bool, text: &str| {
        let q = if kind_goal {
            RetrievalQuery::goal(text, &env.task_id)
        } else {
            RetrievalQuery::context(text, &env.task_id)
        };
        q.with_goal_id(&env.goal_id)
            .with_k(res.settings.k)
            .with_mode(res.settings.mode)
            .with_scorer(res.settings.scorer)
    };

    let mut episode_hints: Vec<HintRecord> = Vec::new();
    if regime == Regime::Episode {
        let s = session.as_ref().expect("retriever present");
        episode_hints = s
            .episode(&query(true, &env.goal_text))?
            .hits
            .into_iter()
            .map(|h| h.hint)
            .collect();
    }

    let (mut state, mut obs) = env.reset();
    let mut steps: Vec<Step> = Vec::new();
    let mut transcript = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    let mut total = 0.0;
    for t in 1..=env.step_limit {
        let (hints, context) = match regime {
            Regime::Step => {
                let mut partial = trace_of(env, &steps, "prefix");
                partial.steps.push(Step {
                    index: t,
                    observation: Some(obs.clone()),
                    reasoning: String::new(),
                    action: String::new(),
                    error: None,
                    reward: Reward::from_f64(0.0),
                });
                let prefix = ContextPrefix::from_trace(&partial, t)?;
                let key = summarize_context(&prefix, res.summarizer.expect("checked"), res.templates)?;
                let s = session.as_ref().expect("retriever present");
                let hits = s.step(&query(false, &key.context))?.hits;
                (hits.into_iter().map(|h| h.hint).collect::<Vec<_>>(), Some(key.context))
            }
            _ => (episode_hints.clone(), None),
        };
        for id in hint_ids(&hints) {
            if !seen.contains(&id) {
                seen.push(id);
            }
        }
        let decision = agent.act(&obs, &hints);
        let tr = env.step(&mut state, &decision.action);
        total += tr.reward;
        steps.push(Step {
            index: t,
            observation: Some(obs.clone()),
            reasoning: match &decision.matched_hint {
                Some(h) => format!("following hint {h}"),
                None => String::new(),
            },
            action: decision.action.clone(),
            error: tr.error.clone(),
            reward: Reward::from_f64(tr.reward),
        });
        transcript.push(TranscriptStep {
            t,
            observation: obs,
            context,
            hints: hint_ids(&hints),
            action: decision.action,
            matched_hint: decision.matched_hint,
            reward: tr.reward,
        });
        obs = tr.observation;
        if tr.done {
            break;
        }
    }
    let trace = trace_of(env, &steps, &format!("{}-{regime}", agent.name));
    Ok(EpisodeResult {
        env_id: env.env_id.clone(),
        task_id: env.task_id.clone(),
        regime,
        reward: total,
        steps: transcript.len(),
        retrieval_calls: session.as_ref().map_or(0, RetrievalSession::invocations),
        hints_retrieved: seen,
        transcript,
        trace,
    })
}

fn trace_of(env: &SyntheticEnv, steps: &[Step], tag: &str) -> Trace {
    let total: f64 = steps.iter().map(|s| s.reward.value()).sum();
    Trace {
        trace_id: format!("{}/{tag}", env.env_id),
        task_id: env.task_id.clone(),
        goal_id: env.goal_id.clone(),
        goal_text: env.goal_text.clone(),
        outcome: Outcome::for_reward(total),
        total_reward: Reward::from_f64(total),
        steps: steps.to_vec(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintProvenance {
    pub hint_id: String,
    pub task_id: String,
    pub goal_ids: Vec<String>,
    pub evidence: String,
    pub created_by: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpliftRow {
    pub env_id: String,
    pub regime: Regime,
    pub reward: f64,
    pub steps: usize,
    pub retrieval_calls: usize,
    pub hints: Vec<HintProvenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvUplift {
    pub env_id: String,
    pub baseline: Option<f64>,
    pub by_regime: BTreeMap<Regime, f64>,
    /// Hinted reward minus baseline, per hinted regime.
    pub uplift: BTreeMap<Regime, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpliftReport {
    pub rows: Vec<UpliftRow>,
    pub per_env: Vec<EnvUplift>,
    pub aggregate: BTreeMap<Regime, f64>,
}

impl UpliftReport {
    /// One `key=value` line per (env, regime), for CI assertions.
    pub fn lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "EVAL env={} regime={} reward={} steps={} retrieval_calls={} hints={}",
                    r.env_id,
                    r.regime,
                    r.reward,
                    r.steps,
                    r.retrieval_calls,
                    r.hints.iter().map(|h| h.hint_id.as_str()).collect::<Vec<_>>().join(",")
                )
            })
            .collect()
    }
}

impl fmt::Display for UpliftReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let regimes: Vec<Regime> = self.aggregate.keys().copied().collect();
        let w = self.per_env.iter().map(|e| e.env_id.len()).max().unwrap_or(3).max(3);
        write!(f, "{:<w$}", "env")?;
        for r in &regimes {
            write!(f, "  {:>8}", r.to_string())?;
        }
        writeln!(f)?;
        for e in &self.per_env {
            write!(f, "{:<w$}", e.env_id)?;
            for r in &regimes {
                write!(f, "  {:>8.2}", e.by_regime.get(r).copied().unwrap_or(f64::NAN))?;
            }
            writeln!(f)?;
        }
        write!(f, "{:<w$}", "mean")?;
        for r in &regimes {
            write!(f, "  {:>8.2}", self.aggregate[r])?;
        }
        Ok(())
    }
}

fn provenance(retriever: Option<&Retriever>, ids: &[String]) -> Vec<HintProvenance> {
    let Some(r) = retriever else { return Vec::new() };
    ids.iter()
        .filter_map(|id| r.db().get(id))
        .map(|h| HintProvenance {
            hint_id: h.hint_id.clone(),
            task_id: h.task_id.clone(),
            goal_ids: h.goal_ids.clone(),
            evidence: h.evidence.reference(),
            created_by: h.created_by.clone(),
        })
        .collect()
}

/// Runs every (env, regime) pair, one thread per episode.
pub fn measure_uplift(
    suite: &[SyntheticEnv],
    agent: &ScriptedAgent,
    regimes: &[Regime],
    res: EpisodeResources<'_>,
) -> Result<(UpliftReport, Vec<EpisodeResult>), EvalError> {
    if suite.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    let jobs: Vec<(&SyntheticEnv, Regime)> = suite
        .iter()
        .flat_map(|e| regimes.iter().map(move |r| (e, *r)))
        .collect();
    let results: Vec<Result<EpisodeResult, EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(env, regime)| s.spawn(move || run_episode(env, agent, *regime, res)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("episode thread panicked")).collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let rows: Vec<UpliftRow> = results
        .iter()
        .map(|r| UpliftRow {
            env_id: r.env_id.clone(),
            regime: r.regime,
            reward: r.reward,
            steps: r.steps,
            retrieval_calls: r.retrieval_calls,
            hints: provenance(res.retriever, &r.hints_retrieved),
        })
        .collect();
    let per_env = suite
        .iter()
        .map(|e| {
            let by_regime: BTreeMap<Regime, f64> = rows
                .iter()
                .filter(|r| r.env_id == e.env_id)
                .map(|r| (r.regime, r.reward))
                .collect();
            let baseline = by_regime.get(&Regime::None).copied();
            let uplift = baseline
                .map(|b| {
                    by_regime
                        .iter()
                        .filter(|(r, _)| **r != Regime::None)
                        .map(|(r, v)| (*r, v - b))
                        .collect()
                })
                .unwrap_or_default();
            EnvUplift {
                env_id: e.env_id.clone(),
                baseline,
                by_regime,
                uplift,
            }
        })
        .collect();
    let aggregate = regimes
        .iter()
        .map(|reg| {
            let v: Vec<f64> = rows.iter().filter(|r| r.regime == *reg).map(|r| r.reward).collect();
            (*reg, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Ok((
        UpliftReport {
            rows,
            per_env,
            aggregate,
        },
        results,
    ))
}
