use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{chunk_page, DocChunk, DocError, DocumentPage};
use crate::bm25::{Bm25Index, Bm25Params};
use crate::llm::{bindings, cosine, ChatBackend, CompletionRequest, Embedder, LlmError, TemplateId, TemplateSet, SUMMARY_MAX_TOKENS};

pub const DEFAULT_PAGE_DEPTH: usize = 3;
pub const DEFAULT_CHUNK_DEPTH: usize = 5;
/// Characters of each chunk passed to the embedder.
const EMBED_CHAR_CAP: usize = 2000;
const INDEX_FORMAT: &str = "docindex";
const INDEX_VERSION: u32 = 1;

macro_rules! str_enum {
    ($name:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text $(| $alias)* => Ok($name::$variant),)+
                    other => Err(format!("unknown {} '{other}'", stringify!($name).to_ascii_lowercase())),
                }
            }
        }
    };
}

str_enum!(Granularity { Page => "page" | "full", Chunk => "chunk" });
str_enum!(Method { Sparse => "sparse" | "bm25", Dense => "dense" | "embedding" });
str_enum!(QueryMode { Goal => "goal", Llm => "llm" });

impl Granularity {
    pub fn default_depth(self) -> usize {
        match self {
            Granularity::Page => DEFAULT_PAGE_DEPTH,
            Granularity::Chunk => DEFAULT_CHUNK_DEPTH,
        }
    }
}

/// Goal text verbatim, or a search string written by `backend`.
pub fn formulate_query(
    goal: &str,
    mode: QueryMode,
    backend: Option<&dyn ChatBackend>,
    templates: &TemplateSet,
) -> Result<String, DocError> {
    match mode {
        QueryMode::Goal => Ok(goal.to_string()),
        QueryMode::Llm => {
            let backend = backend.ok_or(DocError::NoBackend)?;
            let prompt = templates.render(TemplateId::QueryFormulation, &bindings([("goal", goal.to_string())]))?;
            let completion = backend.complete(&CompletionRequest::new(prompt, SUMMARY_MAX_TOKENS))?;
            completion
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .map(String::from)
                .ok_or(DocError::EmptyQuery)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub page_id: String,
    pub chunk_id: Option<String>,
    pub title: String,
    pub breadcrumbs: Vec<String>,
    pub score: f64,
    /// Title and breadcrumb trail followed by the page or section text.
    pub text: String,
}

fn page_text(p: &DocumentPage) -> String {
    format!("{}\n{}\n{}\n{}", p.title, p.summary, p.keywords.join(" "), p.body)
}

fn chunk_text(c: &DocChunk) -> String {
    format!("{}\n{}", c.heading_path.join(" "), c.body)
}

fn capped(s: &str) -> &str {
    match s.char_indices().nth(EMBED_CHAR_CAP) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn embed_or_zero(e: &dyn Embedder, text: &str) -> Result<Vec<f64>, LlmError> {
    match e.embed(text) {
        Err(LlmError::EmptyText) => Ok(vec![0.0; e.dimension()]),
        r => r,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct DenseVectors {
    pages: Vec<Vec<f64>>,
    chunks: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    pages: Vec<DocumentPage>,
    sparse: bool,
    dense: Option<DenseVectors>,
}

/// Page and chunk indexes over one corpus. Read-only once built.
#[derive(Clone, Debug, Default)]
pub struct DocSearcher {
    pages: Vec<DocumentPage>,
    chunks: Vec<DocChunk>,
    chunk_page_idx: Vec<usize>,
    sparse: Option<(Bm25Index, Bm25Index)>,
    dense: Option<DenseVectors>,
}

impl DocSearcher {
    pub fn new(pages: Vec<DocumentPage>) -> Self {
        let mut chunks = Vec::new();
        let mut chunk_page_idx = Vec::new();
        for (i, p) in pages.iter().enumerate() {
            for c in chunk_page(p) {
                chunks.push(c);
                chunk_page_idx.push(i);
            }
        }
        Self {
            pages,
            chunks,
            chunk_page_idx,
            sparse: None,
            dense: None,
        }
    }

    pub fn pages(&self) -> &[DocumentPage] {
        &self.pages
    }

    pub fn chunks(&self) -> &[DocChunk] {
        &self.chunks
    }

    pub fn is_indexed(&self, method: Method) -> bool {
        match method {
            Method::Sparse => self.sparse.is_some(),
            Method::Dense => self.dense.is_some(),
        }
    }

    pub fn index_sparse(&mut self, params: Bm25Params) {
        let pages = Bm25Index::build(self.pages.iter().map(|p| (p.page_id.clone(), page_text(p))), params);
        let chunks = Bm25Index::build(self.chunks.iter().map(|c| (c.chunk_id.clone(), chunk_text(c))), params);
        self.sparse = Some((pages, chunks));
    }

    /// Embeds every chunk; a page vector is the mean of its chunk vectors.
    pub fn index_dense(&mut self, embedder: &dyn Embedder) -> Result<(), LlmError> {
        let chunks = self
            .chunks
            .iter()
            .map(|c| embed_or_zero(embedder, capped(&chunk_text(c))))
            .collect::<Result<Vec<_>, _>>()?;
        let dim = embedder.dimension();
        let mut pages = vec![vec![0.0; dim]; self.pages.len()];
        let mut counts = vec![0usize; self.pages.len()];
        for (v, &p) in chunks.iter().zip(&self.chunk_page_idx) {
            pages[p].iter_mut().zip(v).for_each(|(a, b)| *a += b);
            counts[p] += 1;
        }
        for (v, n) in pages.iter_mut().zip(counts) {
            if n > 0 {
                v.iter_mut().for_each(|x| *x /= n as f64);
            }
        }
        self.dense = Some(DenseVectors { pages, chunks });
        Ok(())
    }

    /// Top `depth` snippets (default 3 pages or 5 chunks).
    pub fn search(
        &self,
        query: &str,
        granularity: Granularity,
        method: Method,
        depth: Option<usize>,
        embedder: Option<&dyn Embedder>,
    ) -> Result<Vec<Snippet>, DocError> {
        if query.trim().is_empty() {
            return Err(DocError::EmptyQuery);
        }
        let depth = depth.unwrap_or(granularity.default_depth());
        let mut scored: Vec<(usize, f64)> = match method {
            Method::Sparse => {
                let (pages, chunks) = self.sparse.as_ref().ok_or(DocError::NotIndexed { method })?;
                let idx = match granularity {
                    Granularity::Page => pages,
                    Granularity::Chunk => chunks,
                };
                idx.scores(query).into_iter().enumerate().collect()
            }
            Method::Dense => {
                let dense = self.dense.as_ref().ok_or(DocError::NotIndexed { method })?;
                let embedder = embedder.ok_or(DocError::NotIndexed { method })?;
                let q = embed_or_zero(embedder, query)?;
                let vecs = match granularity {
                    Granularity::Page => &dense.pages,
                    Granularity::Chunk => &dense.chunks,
                };
                vecs.iter().map(|v| cosine(&q, v)).enumerate().collect()
            }
        };
        let id = |i: usize| match granularity {
            Granularity::Page => &self.pages[i].page_id,
            Granularity::Chunk => &self.chunks[i].chunk_id,
        };
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| id(a.0).cmp(id(b.0))));
        Ok(scored
            .into_iter()
            .take(depth)
            .map(|(i, score)| self.snippet(granularity, i, score))
            .collect())
    }

    fn snippet(&self, granularity: Granularity, i: usize, score: f64) -> Snippet {
        let (page, chunk) = match granularity {
            Granularity::Page => (&self.pages[i], None),
            Granularity::Chunk => (&self.pages[self.chunk_page_idx[i]], Some(&self.chunks[i])),
        };
        let body = chunk.map_or(page.body.as_str(), |c| c.body.as_str());
        Snippet {
            page_id: page.page_id.clone(),
            chunk_id: chunk.map(|c| c.chunk_id.clone()),
            title: page.title.clone(),
            breadcrumbs: page.breadcrumbs.clone(),
            score,
            text: format!("{}\n{}\n\n{}", page.title, page.breadcrumb_trail(), body.trim_end()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DocError> {
        let file = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            pages: self.pages.clone(),
            sparse: self.sparse.is_some(),
            dense: self.dense.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| DocError::IndexFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text).map_err(|source| DocError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reloads a saved index; sparse indexes are rebuilt from the pages.
    pub fn load(path: &Path) -> Result<Self, DocError> {
        let bad = |message: String| DocError::IndexFile {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|source| DocError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: IndexFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(bad(format!(
                "unsupported index {} v{} (expected {INDEX_FORMAT} v{INDEX_VERSION})",
                file.format, file.version
            )));
        }
        let mut s = Self::new(file.pages);
        if file.sparse {
            s.index_sparse(Bm25Params::default());
        }
        if let Some(d) = file.dense {
            if d.pages.len() != s.pages.len() || d.chunks.len() != s.chunks.len() {
                return Err(bad("dense vectors do not match the corpus".into()));
            }
            s.dense = Some(d);
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: Method,
    pub query_mode: QueryMode,
    pub granularity: Granularity,
    pub depth: usize,
    pub queries: usize,
    pub mean_results: f64,
    /// Fraction of goals whose expected page appears among the results.
    pub page_hit_rate: Option<f64>,
}

/// Runs every (method, query mode, granularity) combination over `goals`,
/// each an (goal text, expected page id) pair.
pub fn ablation_grid(
    searcher: &DocSearcher,
    goals: &[(String, Option<String>)],
    formulator: Option<&dyn ChatBackend>,
    embedder: Option<&dyn Embedder>,
    templates: &TemplateSet,
) -> Result<Vec<AblationRow>, DocError> {
    let mut rows = Vec::with_capacity(8);
    for &method in Method::ALL {
        for &query_mode in QueryMode::ALL {
            let queries = goals
                .iter()
                .map(|(g, _)| formulate_query(g, query_mode, formulator, templates))
                .collect::<Result<Vec<_>, _>>()?;
            for &granularity in Granularity::ALL {
                let depth = granularity.default_depth();
                let (mut total, mut hits, mut judged) = (0usize, 0usize, 0usize);
                for (q, (_, expected)) in queries.iter().zip(goals) {
                    let res = searcher.search(q, granularity, method, None, embedder)?;
                    total += res.len();
                    if let Some(want) = expected {
                        judged += 1;
                        hits += usize::from(res.iter().any(|s| &s.page_id == want));
                    }
                }
                rows.push(AblationRow {
                    method,
                    query_mode,
                    granularity,
                    depth,
                    queries: goals.len(),
                    mean_results: if goals.is_empty() { 0.0 } else { total as f64 / goals.len() as f64 },
                    page_hit_rate: (judged > 0).then(|| hits as f64 / judged as f64),
                });
            }
        }
    }
    Ok(rows)
}
