//! Top-k hint ranking (BM25, embedding cosine, LLM ranker) and the episode
//! and step retrieval regimes.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::{bm25_rank, sort_scored, Scored};
use crate::llm::{
    bindings, cosine, ChatBackend, CompletionRequest, Embedder, LlmError, TemplateError, TemplateId,
    TemplateSet, SUMMARY_MAX_TOKENS,
};
use crate::store::{FilterMode, HintDb, StoreError};
use crate::zoom::HintRecord;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("{0} scorer requested but no backend is configured for it")]
    MissingScorer(Scorer),
    #[error("scorer failed: {0}")]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Llm,
    Embedding,
    #[default]
    Bm25,
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scorer::Llm => "llm",
            Scorer::Embedding => "embedding",
            Scorer::Bm25 => "bm25",
        })
    }
}

impl FromStr for Scorer {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "llm" => Ok(Scorer::Llm),
            "embedding" | "dense" => Ok(Scorer::Embedding),
            "bm25" | "sparse" => Ok(Scorer::Bm25),
            other => Err(RetrievalError::InvalidQuery(format!("unknown scorer '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Goal,
    Context,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub kind: QueryKind,
    pub text: String,
    pub task_id: String,
    #[serde(default)]
    pub goal_id: Option<String>,
    pub k: usize,
    pub mode: FilterMode,
    pub scorer: Scorer,
}

impl RetrievalQuery {
    pub fn goal(text: impl Into<String>, task_id: impl Into<String>) -> Self {
        Self {
            kind: QueryKind::Goal,
            text: text.into(),
            task_id: task_id.into(),
            goal_id: None,
            k: DEFAULT_K,
            mode: FilterMode::InTask,
            scorer: Scorer::Bm25,
        }
    }

    pub fn context(text: impl Into<String>, task_id: impl Into<String>) -> Self {
        Self {
            kind: QueryKind::Context,
            ..Self::goal(text, task_id)
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_mode(mut self, mode: FilterMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_scorer(mut self, scorer: Scorer) -> Self {
        self.scorer = scorer;
        self
    }

    pub fn with_goal_id(mut self, goal_id: impl Into<String>) -> Self {
        self.goal_id = Some(goal_id.into());
        self
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(RetrievalError::InvalidQuery("k must be >= 1".into()));
        }
        if self.text.trim().is_empty() {
            return Err(RetrievalError::InvalidQuery("query text is empty".into()));
        }
        self.mode.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    InTask,
    CrossTask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub hint: HintRecord,
    pub score: f64,
    pub pool: Pool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedHints {
    pub hits: Vec<Hit>,
    pub query: RetrievalQuery,
}

/// Which record fields the rankers score against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankText {
    #[default]
    KeyTopic,
    KeyTopicHint,
}

impl RankText {
    pub fn of(self, r: &HintRecord) -> String {
        match self {
            RankText::KeyTopic => format!("{} {}", r.key.context, r.topic),
            RankText::KeyTopicHint => format!("{} {} {}", r.key.context, r.topic, r.hint),
        }
    }
}

/// Embedding of a text; text without tokens maps to the zero vector.
fn embed_or_zero(e: &dyn Embedder, text: &str) -> Result<Vec<f64>, LlmError> {
    match e.embed(text) {
        Err(LlmError::EmptyText) => Ok(vec![0.0; e.dimension()]),
        r => r,
    }
}

/// Ranks `candidates` (id, text) by cosine similarity to `query`.
pub fn embedding_rank(
    query: &str,
    candidates: &[(&str, &[f64])],
    embedder: &dyn Embedder,
) -> Result<Vec<Scored>, LlmError> {
    let q = embed_or_zero(embedder, query)?;
    let mut out: Vec<Scored> = candidates
        .iter()
        .map(|(id, v)| Scored {
            id: id.to_string(),
            score: cosine(&q, v),
        })
        .collect();
    sort_scored(&mut out);
    Ok(out)
}

/// Parses a ranker completion into distinct 0-based candidate positions.
pub fn parse_ranking(completion: &str, n: usize, k: usize) -> Vec<usize> {
    let mut seen = BTreeSet::new();
    completion
        .split(|c: char| !c.is_ascii_digit())
        .filter_map(|s| s.parse::<usize>().ok())
        .filter(|&i| (1..=n).contains(&i))
        .map(|i| i - 1)
        .filter(|&i| seen.insert(i))
        .take(k)
        .collect()
}

/// Asks `backend` for the `k` best candidates. Picks score k, k-1, ...;
/// missing picks are filled in BM25 order.
pub fn llm_rank<S: AsRef<str>, T: AsRef<str>>(
    query: &str,
    candidates: &[(S, T)],
    k: usize,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
) -> Result<Vec<Scored>, RetrievalError> {
    if candidates.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let listing = candidates
        .iter()
        .enumerate()
        .map(|(i, (_, text))| format!("{}. {}", i + 1, text.as_ref()))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = templates.render(
        TemplateId::HintRanking,
        &bindings([
            ("query", query.to_string()),
            ("candidates", listing),
            ("k", k.to_string()),
        ]),
    )?;
    let completion = backend.complete(&CompletionRequest::new(prompt, SUMMARY_MAX_TOKENS))?;
    let picks = parse_ranking(&completion, candidates.len(), k);
    let mut order: Vec<String> = picks.iter().map(|&i| candidates[i].0.as_ref().to_string()).collect();
    let picked: BTreeSet<String> = order.iter().cloned().collect();
    let limit = k.min(candidates.len());
    for s in bm25_rank(query, candidates) {
        if order.len() >= limit {
            break;
        }
        if !picked.contains(&s.id) {
            order.push(s.id);
        }
    }
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, id)| Scored {
            id,
            score: (k - i) as f64,
        })
        .collect())
}

/// A hint database with ranking texts and (optionally) cached embeddings.
#[derive(Clone, Debug)]
pub struct HintIndex {
    db: HintDb,
    rank_text: RankText,
    texts: Vec<String>,
    embeddings: Option<Vec<Vec<f64>>>,
}

impl HintIndex {
    pub fn build(db: HintDb, rank_text: RankText, embedder: Option<&dyn Embedder>) -> Result<Self, LlmError> {
        let texts: Vec<String> = db.records().iter().map(|r| rank_text.of(r)).collect();
        let embeddings = embedder
            .map(|e| texts.iter().map(|t| embed_or_zero(e, t)).collect::<Result<Vec<_>, _>>())
            .transpose()?;
        Ok(Self {
            db,
            rank_text,
            texts,
            embeddings,
        })
    }

    pub fn db(&self) -> &HintDb {
        &self.db
    }

    pub fn rank_text(&self) -> RankText {
        self.rank_text
    }

    pub fn has_embeddings(&self) -> bool {
        self.embeddings.is_some()
    }

    fn position(&self, r: &HintRecord) -> usize {
        self.db.position(&r.hint_id).expect("pool records belong to the indexed db")
    }
}

#[derive(Clone)]
pub struct Retriever {
    index: Arc<HintIndex>,
    ranker: Option<Arc<dyn ChatBackend>>,
    embedder: Option<Arc<dyn Embedder>>,
    templates: Arc<TemplateSet>,
}

impl fmt::Debug for Retriever {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Retriever")
            .field("hints", &self.index.db.len())
            .field("ranker", &self.ranker.as_ref().map(|r| r.model_tag().to_string()))
            .field("embeddings", &self.index.has_embeddings())
            .finish()
    }
}

impl Retriever {
    /// BM25-only retriever over `db`.
    pub fn new(db: HintDb) -> Self {
        Self::from_index(
            HintIndex::build(db, RankText::default(), None).expect("no embedder, cannot fail"),
        )
    }

    pub fn from_index(index: HintIndex) -> Self {
        Self {
            index: Arc::new(index),
            ranker: None,
            embedder: None,
            templates: Arc::new(TemplateSet::builtin()),
        }
    }

    /// Builds the index, precomputing embeddings when an embedder is given.
    pub fn build(
        db: HintDb,
        rank_text: RankText,
        ranker: Option<Arc<dyn ChatBackend>>,
        embedder: Option<Arc<dyn Embedder>>,
    ) -> Result<Self, LlmError> {
        let index = HintIndex::build(db, rank_text, embedder.as_deref())?;
        Ok(Self {
            index: Arc::new(index),
            ranker,
            embedder,
            templates: Arc::new(TemplateSet::builtin()),
        })
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn index(&self) -> &HintIndex {
        &self.index
    }

    pub fn db(&self) -> &HintDb {
        &self.index.db
    }

    /// Episode regime: one ranking per pool keyed on the goal.
    pub fn retrieve_episode(&self, q: &RetrievalQuery) -> Result<RankedHints, RetrievalError> {
        if q.kind != QueryKind::Goal {
            return Err(RetrievalError::InvalidQuery("episode retrieval needs a goal query".into()));
        }
        self.retrieve(q)
    }

    /// Step regime: same contract, keyed on a summarized context.
    pub fn retrieve_step(&self, q: &RetrievalQuery) -> Result<RankedHints, RetrievalError> {
        if q.kind != QueryKind::Context {
            return Err(RetrievalError::InvalidQuery("step retrieval needs a context query".into()));
        }
        self.retrieve(q)
    }

    pub fn retrieve(&self, q: &RetrievalQuery) -> Result<RankedHints, RetrievalError> {
        q.validate()?;
        let pools = self
            .index
            .db
            .filter_candidates(&q.task_id, q.goal_id.as_deref(), q.mode);
        let (n_in, n_cross) = match q.mode {
            FilterMode::InTask => (q.k, 0),
            FilterMode::CrossTask => (0, q.k),
            FilterMode::Hybrid { in_task_weight } => {
                split_counts(q.k, in_task_weight, pools.in_task.len(), pools.cross_task.len())
            }
        };
        let mut hits = self.rank_pool(q, &pools.in_task, n_in, Pool::InTask)?;
        hits.extend(self.rank_pool(q, &pools.cross_task, n_cross, Pool::CrossTask)?);
        Ok(RankedHints {
            hits,
            query: q.clone(),
        })
    }

    fn rank_pool(
        &self,
        q: &RetrievalQuery,
        pool: &[&HintRecord],
        take: usize,
        tag: Pool,
    ) -> Result<Vec<Hit>, RetrievalError> {
        if pool.is_empty() || take == 0 {
            return Ok(Vec::new());
        }
        let positions: Vec<usize> = pool.iter().map(|r| self.index.position(r)).collect();
        let scored = match q.scorer {
            Scorer::Bm25 => {
                let cands: Vec<(&str, &str)> = pool
                    .iter()
                    .zip(&positions)
                    .map(|(r, &p)| (r.hint_id.as_str(), self.index.texts[p].as_str()))
                    .collect();
                bm25_rank(&q.text, &cands)
            }
            Scorer::Embedding => {
                let (Some(e), Some(vecs)) = (&self.embedder, &self.index.embeddings) else {
                    return Err(RetrievalError::MissingScorer(Scorer::Embedding));
                };
                let cands: Vec<(&str, &[f64])> = pool
                    .iter()
                    .zip(&positions)
                    .map(|(r, &p)| (r.hint_id.as_str(), vecs[p].as_slice()))
                    .collect();
                embedding_rank(&q.text, &cands, e.as_ref())?
            }
            Scorer::Llm => {
                let Some(ranker) = &self.ranker else {
                    return Err(RetrievalError::MissingScorer(Scorer::Llm));
                };
                let cands: Vec<(&str, &str)> = pool
                    .iter()
                    .zip(&positions)
                    .map(|(r, &p)| (r.hint_id.as_str(), self.index.texts[p].as_str()))
                    .collect();
                llm_rank(&q.text, &cands, take, ranker.as_ref(), &self.templates)?
            }
        };
        Ok(scored
            .into_iter()
            .take(take)
            .map(|s| Hit {
                hint: self.index.db.get(&s.id).expect("ranked id comes from the pool").clone(),
                score: s.score,
                pool: tag,
            })
            .collect())
    }
}

/// Splits k into in-task and cross-task counts: round(w·k) in-task, the rest
/// cross-task. A pool too small for its share cedes the slack to the other.
pub fn split_counts(k: usize, weight: f64, in_len: usize, cross_len: usize) -> (usize, usize) {
    let want_in = ((weight * k as f64).round() as usize).min(k);
    let n_in = want_in.min(in_len);
    let n_cross = (k - n_in).min(cross_len);
    let n_in = (k - n_cross).min(in_len).max(n_in);
    (n_in, n_cross)
}

/// Counts retrieval invocations over one episode.
#[derive(Debug)]
pub struct RetrievalSession<'a> {
    retriever: &'a Retriever,
    calls: AtomicUsize,
}

impl<'a> RetrievalSession<'a> {
    pub fn new(retriever: &'a Retriever) -> Self {
        Self {
            retriever,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn episode(&self, q: &RetrievalQuery) -> Result<RankedHints, RetrievalError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.retriever.retrieve_episode(q)
    }

    pub fn step(&self, q: &RetrievalQuery) -> Result<RankedHints, RetrievalError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.retriever.retrieve_step(q)
    }

    pub fn invocations(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}
