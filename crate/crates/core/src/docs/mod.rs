//! Documentation pages as an alternative hint source: ingestion of markdown
//! pages with a metadata header, heading-aligned chunking, and sparse or
//! dense search at page or chunk granularity.

mod chunk;
mod search;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{LlmError, TemplateError};

pub use chunk::{chunk_page, parse_heading};
pub use search::{
    ablation_grid, formulate_query, AblationRow, DocSearcher, Granularity, Method, QueryMode, Snippet,
    DEFAULT_CHUNK_DEPTH, DEFAULT_PAGE_DEPTH,
};

pub const REQUIRED_FIELDS: [&str; 4] = ["title", "summary", "keywords", "breadcrumbs"];
const FENCE: &str = "---";

#[derive(Debug, Error)]
pub enum DocError {
    #[error("{}missing header field(s): {}", source_prefix(.source_name), .fields.join(", "))]
    MissingFields {
        source_name: Option<String>,
        fields: Vec<&'static str>,
    },
    #[error("page '{0}' has an empty body")]
    EmptyBody(String),
    #[error("duplicate page id '{0}'")]
    DuplicatePage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus is not indexed for {method} search; run `docs index --method {method}` first")]
    NotIndexed { method: Method },
    #[error("empty query")]
    EmptyQuery,
    #[error("llm query mode needs a backend")]
    NoBackend,
    #[error("query formulation failed: {0}")]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("index file {path}: {message}")]
    IndexFile { path: PathBuf, message: String },
}

fn source_prefix(name: &Option<String>) -> String {
    name.as_ref().map(|n| format!("{n}: ")).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentPage {
    pub page_id: String,
    pub title: String,
    pub summary: String,
    pub keywords: Vec<String>,
    pub breadcrumbs: Vec<String>,
    pub body: String,
    pub platform: String,
}

impl DocumentPage {
    pub fn breadcrumb_trail(&self) -> String {
        self.breadcrumbs.join(" > ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocChunk {
    pub chunk_id: String,
    pub page_id: String,
    pub heading_path: Vec<String>,
    pub body: String,
}

/// Lowercase ASCII slug: alphanumeric runs joined by single dashes.
pub fn slug(s: &str) -> String {
    s.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|p| !p.is_empty())
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

/// Parses a page of the form
///
/// ```text
/// ---
/// title: Create a filter
/// summary: How to filter list records.
/// keywords: filter, list, condition
/// breadcrumbs: Platform > Lists > Filters
/// ---
/// # Body markdown...
/// ```
///
/// `page_id` may be given in the header; otherwise it is the title's slug.
pub fn ingest_page(text: &str, platform: &str) -> Result<DocumentPage, DocError> {
    let missing_all = || DocError::MissingFields {
        source_name: None,
        fields: REQUIRED_FIELDS.to_vec(),
    };
    let mut lines = text.split_inclusive('\n');
    let mut consumed = 0;
    let first = loop {
        let line = lines.next().ok_or_else(missing_all)?;
        consumed += line.len();
        if !line.trim().is_empty() {
            break line;
        }
    };
    if first.trim_end() != FENCE {
        return Err(missing_all());
    }
    let mut fields: Vec<(String, String)> = Vec::new();
    let mut closed = false;
    for line in lines.by_ref() {
        consumed += line.len();
        if line.trim_end() == FENCE {
            closed = true;
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            fields.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
    }
    if !closed {
        return Err(missing_all());
    }
    let get = |k: &str| {
        fields
            .iter()
            .find(|(key, v)| key == k && !v.is_empty())
            .map(|(_, v)| v.clone())
    };
    let missing: Vec<&'static str> = REQUIRED_FIELDS.iter().copied().filter(|f| get(f).is_none()).collect();
    if !missing.is_empty() {
        return Err(DocError::MissingFields {
            source_name: None,
            fields: missing,
        });
    }
    let title = get("title").unwrap_or_default();
    let page_id = get("page_id").unwrap_or_else(|| slug(&title));
    let body = text[consumed..].to_string();
    if body.trim().is_empty() {
        return Err(DocError::EmptyBody(page_id));
    }
    let split_list = |v: String, sep: &str| -> Vec<String> {
        v.split(sep).map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
    };
    Ok(DocumentPage {
        page_id,
        title,
        summary: get("summary").unwrap_or_default(),
        keywords: split_list(get("keywords").unwrap_or_default(), ","),
        breadcrumbs: split_list(get("breadcrumbs").unwrap_or_default(), ">"),
        body,
        platform: platform.to_string(),
    })
}

/// Loads every `*.md` file below `root`; a page's platform is the name of
/// the directory holding it.
pub fn load_corpus(root: &Path) -> Result<Vec<DocumentPage>, DocError> {
    let mut files = Vec::new();
    collect_markdown(root, &mut files)?;
    files.sort();
    let mut pages = Vec::with_capacity(files.len());
    let mut seen = std::collections::HashSet::new();
    for path in files {
        let text = fs::read_to_string(&path).map_err(|source| DocError::Io {
            path: path.clone(),
            source,
        })?;
        let platform = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let page = ingest_page(&text, &platform).map_err(|e| match e {
            DocError::MissingFields { fields, .. } => DocError::MissingFields {
                source_name: Some(path.display().to_string()),
                fields,
            },
            other => other,
        })?;
        if !seen.insert(page.page_id.clone()) {
            return Err(DocError::DuplicatePage(page.page_id));
        }
        pages.push(page);
    }
    Ok(pages)
}

fn collect_markdown(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), DocError> {
    let io = |source| DocError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect_markdown(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "md") {
            out.push(path);
        }
    }
    Ok(())
}
