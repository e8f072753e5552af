use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use hintforge_core::eval::suite;
use hintforge_core::llm::{
    ChatBackend, Embedder, HashingEmbedder, HttpBackend, HttpConfig, HttpEmbedder, ScriptedBackend, TemplateSet,
    HASHING_DIMENSION, HASHING_SEED,
};
use hintforge_core::pipeline::PipelineConfig;
use hintforge_core::retrieval::{RankText, DEFAULT_K};
use serde::Deserialize;

/// Which model role a chat backend fills.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Hinter,
    Summarizer,
    Selector,
    Ranker,
    Formulator,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Hinter => "hinter",
            Role::Summarizer => "summarizer",
            Role::Selector => "selector",
            Role::Ranker => "ranker",
            Role::Formulator => "formulator",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// OpenAI-compatible chat completions.
    Http(HttpConfig),
    /// Rule table loaded from a JSON script.
    Scripted { script: PathBuf },
    /// Built-in scripted models for the synthetic environments.
    Demo,
}

impl BackendSpec {
    /// Parses the `--backend` flag: `http`, `demo` or `scripted:PATH`.
    pub fn from_flag(s: &str) -> Result<Self> {
        match s {
            "http" => Ok(BackendSpec::Http(HttpConfig::from_env())),
            "demo" => Ok(BackendSpec::Demo),
            _ => match s.strip_prefix("scripted:") {
                Some(p) if !p.is_empty() => Ok(BackendSpec::Scripted { script: p.into() }),
                _ => bail!("unknown backend '{s}' (expected http, demo or scripted:PATH)"),
            },
        }
    }

    pub fn build(&self, role: Role) -> Result<Arc<dyn ChatBackend>> {
        Ok(match self {
            BackendSpec::Http(cfg) => {
                let mut cfg = cfg.clone();
                let env = HttpConfig::from_env();
                if cfg.api_key.is_none() {
                    cfg.api_key = env.api_key;
                }
                Arc::new(HttpBackend::new(cfg).with_context(|| format!("{} backend", role.name()))?)
            }
            BackendSpec::Scripted { script } => Arc::new(
                ScriptedBackend::from_json_file(script)
                    .with_context(|| format!("{} script {}", role.name(), script.display()))?,
            ),
            BackendSpec::Demo => match role {
                Role::Hinter => Arc::new(suite::scripted_hinter()),
                Role::Summarizer => Arc::new(suite::scripted_summarizer()),
                Role::Selector => Arc::new(suite::scripted_selector()),
                Role::Ranker | Role::Formulator => bail!("no demo backend for the {} role", role.name()),
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Hashing {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Http {
        dimension: usize,
        #[serde(flatten)]
        http: HttpConfig,
    },
}

fn default_dimension() -> usize {
    HASHING_DIMENSION
}

fn default_seed() -> u64 {
    HASHING_SEED
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Hashing {
            dimension: HASHING_DIMENSION,
            seed: HASHING_SEED,
        }
    }
}

impl EmbedderSpec {
    pub fn build(&self) -> Result<Arc<dyn Embedder>> {
        Ok(match self {
            EmbedderSpec::Hashing { dimension, seed } => {
                if *dimension == 0 {
                    bail!("embedder dimension must be positive");
                }
                Arc::new(HashingEmbedder::new(*dimension, *seed))
            }
            EmbedderSpec::Http { dimension, http } => Arc::new(HttpEmbedder::new(http.clone(), *dimension)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalDefaults {
    pub k: usize,
    pub mode: String,
    pub scorer: String,
    pub rank_text: RankText,
}

impl Default for RetrievalDefaults {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            mode: "in_task".into(),
            scorer: "bm25".into(),
            rank_text: RankText::KeyTopic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub traces: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub docs_index: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    pub templates: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub hinter: Option<BackendSpec>,
    pub summarizer: Option<BackendSpec>,
    pub selector: Option<BackendSpec>,
    pub ranker: Option<BackendSpec>,
    pub formulator: Option<BackendSpec>,
    pub embedder: Option<EmbedderSpec>,
    pub pipeline: PipelineConfig,
    pub retrieval: RetrievalDefaults,
    pub service: ServiceConfig,
    pub paths: Paths,
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn spec(&self, role: Role) -> Option<&BackendSpec> {
        match role {
            Role::Hinter => self.hinter.as_ref(),
            Role::Summarizer => self.summarizer.as_ref(),
            Role::Selector => self.selector.as_ref(),
            Role::Ranker => self.ranker.as_ref(),
            Role::Formulator => self.formulator.as_ref(),
        }
    }

    pub fn backend(&self, role: Role) -> Result<Option<Arc<dyn ChatBackend>>> {
        self.spec(role).map(|s| s.build(role)).transpose()
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        self.embedder.clone().unwrap_or_default().build()
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.paths.templates {
            Some(dir) => TemplateSet::from_dir(dir).with_context(|| format!("templates in {}", dir.display())),
            None => Ok(TemplateSet::builtin()),
        }
    }
}
