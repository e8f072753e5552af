//! Request and response bodies of the retrieval service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::docs::{Granularity, Method, Snippet};
use crate::retrieval::{Hit, RetrievalQuery, Scorer};
use crate::store::{DbStats, FilterMode};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHintsRequest {
    pub goal: String,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// `in_task`, `cross_task`, `hybrid` or `hybrid:W`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// `bm25`, `embedding` or `llm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepHintsRequest {
    pub context: String,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
}

fn finish(
    mut q: RetrievalQuery,
    goal_id: &Option<String>,
    k: Option<usize>,
    mode: &Option<String>,
    scorer: &Option<String>,
) -> Result<RetrievalQuery, String> {
    if let Some(g) = goal_id {
        q = q.with_goal_id(g);
    }
    if let Some(k) = k {
        q = q.with_k(k);
    }
    if let Some(m) = mode {
        q = q.with_mode(m.parse::<FilterMode>().map_err(|e| e.to_string())?);
    }
    if let Some(s) = scorer {
        q = q.with_scorer(s.parse::<Scorer>().map_err(|e| e.to_string())?);
    }
    q.validate().map_err(|e| e.to_string())?;
    Ok(q)
}

impl EpisodeHintsRequest {
    pub fn to_query(&self) -> Result<RetrievalQuery, String> {
        finish(
            RetrievalQuery::goal(&self.goal, &self.task_id),
            &self.goal_id,
            self.k,
            &self.mode,
            &self.scorer,
        )
    }
}

impl StepHintsRequest {
    pub fn to_query(&self) -> Result<RetrievalQuery, String> {
        finish(
            RetrievalQuery::context(&self.context, &self.task_id),
            &self.goal_id,
            self.k,
            &self.mode,
            &self.scorer,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HintsResponse {
    pub hits: Vec<Hit>,
    /// Generation of the snapshot that answered.
    pub snapshot: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DocsSearchRequest {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
}

impl DocsSearchRequest {
    pub fn parsed(&self) -> Result<(Granularity, Method), String> {
        let g = match &self.granularity {
            Some(s) => s.parse().map_err(|e: String| e)?,
            None => Granularity::Chunk,
        };
        let m = match &self.method {
            Some(s) => s.parse().map_err(|e: String| e)?,
            None => Method::Sparse,
        };
        Ok((g, m))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocsSearchResponse {
    pub snippets: Vec<Snippet>,
    pub snapshot: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub total_entries: usize,
    pub unique_tasks: usize,
    pub avg_hints_per_task: f64,
    pub per_task: BTreeMap<String, usize>,
    pub doc_pages: Option<usize>,
    pub snapshot: u64,
}

impl StatsResponse {
    pub fn new(stats: DbStats, doc_pages: Option<usize>, snapshot: u64) -> Self {
        Self {
            total_entries: stats.total_entries,
            unique_tasks: stats.unique_tasks,
            avg_hints_per_task: stats.avg_hints_per_task,
            per_task: stats.per_task,
            doc_pages,
            snapshot,
        }
    }

    pub fn stats(&self) -> DbStats {
        DbStats {
            total_entries: self.total_entries,
            unique_tasks: self.unique_tasks,
            avg_hints_per_task: self.avg_hints_per_task,
            per_task: self.per_task.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub hints: usize,
    pub snapshot: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

impl ErrorBody {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            error: ErrorDetail {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}
