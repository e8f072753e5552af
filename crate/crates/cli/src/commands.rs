use std::fmt;
use std::future::Future;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use hintforge_client::Client;
use hintforge_core::api::{DocsSearchRequest, EpisodeHintsRequest, StepHintsRequest};
use hintforge_core::bm25::Bm25Params;
use hintforge_core::docs::{formulate_query, load_corpus, DocSearcher, Granularity, Method, QueryMode, Snippet};
use hintforge_core::eval::{
    demo_db, measure_uplift, standard_agent, standard_suite, suite, EpisodeResources, Regime, RetrievalSettings,
};
use hintforge_core::evidence::EvidenceMode;
use hintforge_core::llm::{ChatBackend, HttpConfig};
use hintforge_core::pipeline::{Backends, Pipeline};
use hintforge_core::retrieval::{Hit, Pool, Retriever, Scorer};
use hintforge_core::store::{DbMeta, FilterMode, HintDb};
use hintforge_core::trace::{load_traces, write_traces};
use hintforge_service::ServiceState;
use serde::Serialize;
use serde_json::json;

use crate::config::{AppConfig, BackendSpec, Role};
use crate::{
    Cli, Command, DocsCommand, DocsIndexArgs, DocsSearchArgs, EvalArgs, Format, GenerateArgs, IngestArgs,
    RetrieveArgs, ServeArgs, StatsArgs,
};

/// Invalid invocation; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn required(v: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    v.ok_or_else(|| usage(format!("{flag} is required (or set it under [paths] in the config)")))
}

struct Out {
    format: Format,
}

impl Out {
    /// Prints `value` as JSON, or `text` otherwise.
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> Result<()> {
        let mut stdout = std::io::stdout().lock();
        match self.format {
            Format::Json => writeln!(stdout, "{}", serde_json::to_string_pretty(value)?)?,
            Format::Text => {
                let t = text();
                if !t.is_empty() {
                    writeln!(stdout, "{t}")?;
                }
            }
        }
        Ok(())
    }
}

fn block_on<F: Future>(f: F) -> Result<F::Output> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    Ok(rt.block_on(f))
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = AppConfig::load(cli.config.as_deref())?;
    let out = Out { format: cli.format };
    let server = cli.server.map(Client::new);
    match cli.command {
        Command::Ingest(a) => ingest(&cfg, &out, a),
        Command::Generate(a) => generate(&cfg, &out, a),
        Command::Stats(a) => stats(&cfg, &out, server, a),
        Command::Retrieve(a) => retrieve(&cfg, &out, server, a),
        Command::Docs(DocsCommand::Index(a)) => docs_index(&cfg, &out, a),
        Command::Docs(DocsCommand::Search(a)) => docs_search(&cfg, &out, server, a),
        Command::Serve(a) => serve(&cfg, a),
        Command::Eval(a) => eval(&cfg, &out, a),
    }
}

fn ingest(cfg: &AppConfig, out: &Out, a: IngestArgs) -> Result<ExitCode> {
    let path = required(a.traces.or(cfg.paths.traces.clone()), "--traces")?;
    let (set, report) = load_traces(&path)?;
    if let Some(dest) = &a.out {
        write_traces(dest, set.traces())?;
    }
    let value = json!({
        "files": report.files,
        "traces": set.len(),
        "tasks": set.task_ids().count(),
        "issues": report.issues,
    });
    out.emit(&value, || {
        let mut lines = vec![format!(
            "loaded {} trace(s) across {} task(s) from {} file(s); {} line(s) rejected",
            set.len(),
            set.task_ids().count(),
            report.files,
            report.issues.len()
        )];
        for i in &report.issues {
            lines.push(format!(
                "rejected {}:{} {}: {}",
                i.file.display(),
                i.line,
                i.trace_id.as_deref().unwrap_or("-"),
                i.problems.join("; ")
            ));
        }
        lines.join("\n")
    })?;
    Ok(if a.strict && !report.is_clean() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn parse_modes(raw: &[String]) -> Result<Vec<EvidenceMode>> {
    let mut modes = Vec::new();
    for m in raw.iter().flat_map(|m| m.split(',')) {
        if m.trim() == "all" {
            modes.extend(EvidenceMode::ALL);
        } else {
            modes.push(m.trim().parse().map_err(|e: hintforge_core::evidence::EvidenceError| usage(e.to_string()))?);
        }
    }
    modes.sort();
    modes.dedup();
    Ok(modes)
}

fn generation_backends(cfg: &AppConfig, flag: Option<&str>, zoom: bool) -> Result<Backends> {
    if let Some(flag) = flag {
        let spec = BackendSpec::from_flag(flag).map_err(|e| usage(e.to_string()))?;
        return Ok(Backends {
            hinter: spec.build(Role::Hinter)?,
            summarizer: spec.build(Role::Summarizer)?,
            selector: if zoom { Some(spec.build(Role::Selector)?) } else { None },
        });
    }
    let hinter = match cfg.backend(Role::Hinter)? {
        Some(b) => b,
        None => BackendSpec::Http(HttpConfig::from_env()).build(Role::Hinter)?,
    };
    let summarizer = cfg.backend(Role::Summarizer)?.unwrap_or_else(|| hinter.clone());
    let selector = match cfg.backend(Role::Selector)? {
        Some(b) => Some(b),
        None if zoom => Some(hinter.clone()),
        None => None,
    };
    Ok(Backends {
        hinter,
        summarizer,
        selector,
    })
}

fn generate(cfg: &AppConfig, out: &Out, a: GenerateArgs) -> Result<ExitCode> {
    let traces_path = required(a.traces.or(cfg.paths.traces.clone()), "--traces")?;
    let db_dir = required(a.db.or(cfg.paths.db.clone()), "--db")?;
    let mut pc = cfg.pipeline.clone();
    if !a.modes.is_empty() {
        pc.modes = parse_modes(&a.modes)?;
    }
    if a.zoom {
        pc.zoom = true;
    }
    if a.no_zoom {
        pc.zoom = false;
    }
    if let Some(w) = a.workers {
        pc.workers = w;
    }
    if let Some(d) = a.delta {
        pc.zoom_cfg.delta = d;
    }
    if a.reject_log.is_some() {
        pc.reject_log = a.reject_log.clone();
    }
    let (traces, load) = load_traces(&traces_path)?;
    if !load.is_clean() {
        tracing::warn!(rejected = load.issues.len(), "some trace lines were rejected");
    }
    let backends = generation_backends(cfg, a.backend.as_deref(), pc.zoom)?;
    let pipeline = Pipeline::new(pc, backends, cfg.templates()?).map_err(|e| usage(e.to_string()))?;
    let (db, report) = if a.resume {
        let db = HintDb::restore(&db_dir)?;
        pipeline.resume(&traces, db)?
    } else {
        pipeline.run(&traces)?
    };
    db.persist(&db_dir)?;
    let stats = db.stats();
    out.emit(&json!({ "db": db_dir, "report": report, "stats": stats }), || {
        format!(
            "wrote {} ({} hint(s))\nevidence {}/{} merged, {} inserted, {} duplicate(s), {} rejected, {} worker(s), {:.0} ms\n{stats}",
            db_dir.display(),
            db.len(),
            report.units_merged + report.started_at,
            report.evidence_total,
            report.hints_inserted,
            report.duplicates,
            report.rejected,
            report.workers,
            report.wall_ms,
        )
    })?;
    if let Some(h) = &report.halted {
        eprintln!(
            "halted at evidence {} ({}): {}; rerun with --resume to continue",
            h.cursor, h.evidence, h.error
        );
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn stats(cfg: &AppConfig, out: &Out, server: Option<Client>, a: StatsArgs) -> Result<ExitCode> {
    let stats = match server {
        Some(c) => block_on(c.stats())??.stats(),
        None => HintDb::restore(&required(a.db.or(cfg.paths.db.clone()), "--db")?)?.stats(),
    };
    out.emit(&stats, || stats.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn parse_scorer(s: &str) -> Result<Scorer> {
    s.parse().map_err(|e: hintforge_core::retrieval::RetrievalError| usage(e.to_string()))
}

/// A local retriever with whatever the scorer needs.
fn local_retriever(cfg: &AppConfig, db: HintDb, scorer: Option<Scorer>) -> Result<Retriever> {
    let ranker: Option<Arc<dyn ChatBackend>> = match scorer {
        Some(Scorer::Llm) | None => cfg.backend(Role::Ranker)?,
        _ => None,
    };
    let embedder = match scorer {
        Some(Scorer::Embedding) | None => Some(cfg.embedder()?),
        _ => None,
    };
    Ok(Retriever::build(db, cfg.retrieval.rank_text, ranker, embedder)?.with_templates(cfg.templates()?))
}

fn pool_name(p: Pool) -> &'static str {
    match p {
        Pool::InTask => "in_task",
        Pool::CrossTask => "cross_task",
    }
}

fn hit_lines(hits: &[Hit]) -> String {
    hits.iter()
        .enumerate()
        .map(|(i, h)| {
            format!(
                "{}\t{:.4}\t{}\t{}\t{}\t{}",
                i + 1,
                h.score,
                h.hint.hint_id,
                pool_name(h.pool),
                h.hint.task_id,
                h.hint.hint
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn retrieve(cfg: &AppConfig, out: &Out, server: Option<Client>, a: RetrieveArgs) -> Result<ExitCode> {
    let k = Some(a.k.unwrap_or(cfg.retrieval.k));
    let mode = Some(a.mode.unwrap_or_else(|| cfg.retrieval.mode.clone()));
    let scorer_name = a.scorer.unwrap_or_else(|| cfg.retrieval.scorer.clone());
    let scorer = parse_scorer(&scorer_name)?;
    let (episode, step) = match (a.goal, a.context) {
        (Some(goal), None) => (
            Some(EpisodeHintsRequest {
                goal,
                task_id: a.task.clone(),
                goal_id: a.goal_id.clone(),
                k,
                mode: mode.clone(),
                scorer: Some(scorer_name.clone()),
            }),
            None,
        ),
        (None, Some(context)) => (
            None,
            Some(StepHintsRequest {
                context,
                task_id: a.task.clone(),
                goal_id: a.goal_id.clone(),
                k,
                mode,
                scorer: Some(scorer_name),
            }),
        ),
        _ => return Err(usage("exactly one of --goal or --context is required")),
    };
    let query = match (&episode, &step) {
        (Some(e), _) => e.to_query(),
        (_, Some(s)) => s.to_query(),
        _ => unreachable!(),
    }
    .map_err(usage)?;
    let hits = match server {
        Some(c) => {
            let resp = match (&episode, &step) {
                (Some(e), _) => block_on(c.episode_hints(e))??,
                (_, Some(s)) => block_on(c.step_hints(s))??,
                _ => unreachable!(),
            };
            resp.hits
        }
        None => {
            let db = HintDb::restore(&required(a.db.or(cfg.paths.db.clone()), "--db")?)?;
            local_retriever(cfg, db, Some(scorer))?.retrieve(&query)?.hits
        }
    };
    out.emit(&hits, || hit_lines(&hits))?;
    Ok(ExitCode::SUCCESS)
}

fn docs_index(cfg: &AppConfig, out: &Out, a: DocsIndexArgs) -> Result<ExitCode> {
    let dest = required(a.out.or(cfg.paths.docs_index.clone()), "--out")?;
    let methods: Vec<Method> = match a.method.as_str() {
        "both" => Method::ALL.to_vec(),
        m => vec![m.parse().map_err(|e: String| usage(e))?],
    };
    let pages = load_corpus(&a.corpus)?;
    let mut searcher = DocSearcher::new(pages);
    for m in &methods {
        match m {
            Method::Sparse => searcher.index_sparse(Bm25Params::default()),
            Method::Dense => searcher.index_dense(cfg.embedder()?.as_ref())?,
        }
    }
    searcher.save(&dest)?;
    let value = json!({
        "index": dest,
        "pages": searcher.pages().len(),
        "chunks": searcher.chunks().len(),
        "methods": methods.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
    });
    out.emit(&value, || {
        format!(
            "indexed {} page(s), {} chunk(s) into {}",
            searcher.pages().len(),
            searcher.chunks().len(),
            dest.display()
        )
    })?;
    Ok(ExitCode::SUCCESS)
}

fn snippet_lines(snippets: &[Snippet]) -> String {
    snippets
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                "{}\t{:.4}\t{}\t{}\t{}",
                i + 1,
                s.score,
                s.chunk_id.as_deref().unwrap_or(&s.page_id),
                s.title,
                s.breadcrumbs.join(" > ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn docs_search(cfg: &AppConfig, out: &Out, server: Option<Client>, a: DocsSearchArgs) -> Result<ExitCode> {
    let granularity: Granularity = a.granularity.parse().map_err(|e: String| usage(e))?;
    let method: Method = a.method.parse().map_err(|e: String| usage(e))?;
    let query_mode: QueryMode = a.query_mode.parse().map_err(|e: String| usage(e))?;
    let formulator = match query_mode {
        QueryMode::Llm => cfg.backend(Role::Formulator)?,
        QueryMode::Goal => None,
    };
    let query = formulate_query(&a.query, query_mode, formulator.as_deref(), &cfg.templates()?)?;
    let snippets = match server {
        Some(c) => {
            let req = DocsSearchRequest {
                query,
                granularity: Some(granularity.to_string()),
                method: Some(method.to_string()),
                depth: a.depth,
            };
            block_on(c.docs_search(&req))??.snippets
        }
        None => {
            let index = required(a.index.or(cfg.paths.docs_index.clone()), "--index")?;
            let searcher = DocSearcher::load(&index)?;
            let embedder = match method {
                Method::Dense => Some(cfg.embedder()?),
                Method::Sparse => None,
            };
            searcher.search(&query, granularity, method, a.depth, embedder.as_deref())?
        }
    };
    out.emit(&snippets, || snippet_lines(&snippets))?;
    Ok(ExitCode::SUCCESS)
}

fn load_snapshot(cfg: &AppConfig, db: &Path, docs: Option<&Path>) -> Result<(Retriever, Option<DocSearcher>)> {
    let retriever = local_retriever(cfg, HintDb::restore(db)?, None)?;
    let docs = docs.map(DocSearcher::load).transpose()?;
    Ok((retriever, docs))
}

fn serve(cfg: &AppConfig, a: ServeArgs) -> Result<ExitCode> {
    let db = required(a.db.or(cfg.paths.db.clone()), "--db")?;
    let docs = a.docs_index.or(cfg.paths.docs_index.clone());
    let addr = a.addr.unwrap_or_else(|| cfg.service.addr.clone());
    let (retriever, searcher) = load_snapshot(cfg, &db, docs.as_deref())?;
    let embedder = Some(cfg.embedder()?);
    let state = ServiceState::new(retriever, searcher, embedder.clone());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on {}", listener.local_addr()?);
        std::io::stdout().flush()?;
        #[cfg(unix)]
        {
            let state = state.clone();
            let cfg = cfg.clone();
            tokio::spawn(async move {
                use tokio::signal::unix::{signal, SignalKind};
                let Ok(mut hup) = signal(SignalKind::hangup()) else { return };
                while hup.recv().await.is_some() {
                    let (cfg, db, docs) = (cfg.clone(), db.clone(), docs.clone());
                    let loaded = tokio::task::spawn_blocking(move || load_snapshot(&cfg, &db, docs.as_deref())).await;
                    match loaded {
                        Ok(Ok((r, d))) => {
                            let generation = state.reload(r, d, embedder.clone());
                            tracing::info!(generation, "reloaded snapshot");
                        }
                        Ok(Err(e)) => tracing::error!(error = %e, "reload failed; keeping current snapshot"),
                        Err(e) => tracing::error!(error = %e, "reload task failed"),
                    }
                }
            });
        }
        hintforge_service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(ExitCode::SUCCESS)
    })
}

fn eval(cfg: &AppConfig, out: &Out, a: EvalArgs) -> Result<ExitCode> {
    let regimes = a
        .regimes
        .split(',')
        .map(|r| r.parse::<Regime>().map_err(usage))
        .collect::<Result<Vec<_>>>()?;
    let scorer = parse_scorer(&a.scorer.unwrap_or_else(|| cfg.retrieval.scorer.clone()))?;
    let mode: FilterMode = a
        .mode
        .unwrap_or_else(|| cfg.retrieval.mode.clone())
        .parse()
        .map_err(|e: hintforge_core::store::StoreError| usage(e.to_string()))?;
    let settings = RetrievalSettings {
        k: a.k.unwrap_or(cfg.retrieval.k),
        mode,
        scorer,
    };
    let db = if a.empty_db {
        HintDb::new(DbMeta::default())
    } else if let Some(dir) = a.db.or(cfg.paths.db.clone()) {
        HintDb::restore(&dir)?
    } else {
        demo_db(a.seeds, a.workers)?.0
    };
    let retriever = local_retriever(cfg, db, Some(scorer))?;
    let summarizer: Arc<dyn ChatBackend> = match cfg.backend(Role::Summarizer)? {
        Some(b) => b,
        None => suite::summarizer_backend(),
    };
    let templates = cfg.templates()?;
    let res = EpisodeResources {
        retriever: Some(&retriever),
        summarizer: Some(summarizer.as_ref()),
        templates: &templates,
        settings,
    };
    let (report, _) = measure_uplift(&standard_suite(), &standard_agent(), &regimes, res)?;
    out.emit(&report, || format!("{report}\n{}", report.lines().join("\n")))?;
    Ok(ExitCode::SUCCESS)
}
