//! Parallel hint generation over an evidence queue.
//!
//! Workers claim evidence units through a shared atomic index; a single
//! merger inserts results in evidence order, so hint ids do not depend on
//! the worker count. A backend failure stops new claims, lets in-flight
//! units finish, and leaves a resume cursor at the first unmerged unit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::evidence::{select_evidence, Evidence, EvidenceError, EvidenceMode, SelectionParams};
use crate::llm::{ChatBackend, TemplateId, TemplateSet};
use crate::store::{DbMeta, HintDb, StoreError};
use crate::trace::{Trace, TraceSet};
use crate::zoom::{
    anchor_point, build_prompt, generate_hint, select_critical_steps, summarize_context, ContextPrefix,
    CriticalSteps, NewHint, PromptExtras, PromptForm, ZoomConfig, ZoomError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("reject log {path}: {source}")]
    RejectLog {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub modes: Vec<EvidenceMode>,
    pub zoom: bool,
    /// Pair evidence uses the two-trace prompts (contrastive or dual zoom).
    pub contrastive: bool,
    /// Prompt form for single evidence; `None` picks full or zoom.
    pub single_form: Option<PromptForm>,
    pub zoom_cfg: ZoomConfig,
    pub workers: usize,
    pub selection: SelectionParams,
    pub known_topics: Vec<String>,
    pub documents: Option<String>,
    pub reject_log: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            modes: EvidenceMode::ALL.to_vec(),
            zoom: true,
            contrastive: true,
            single_form: None,
            zoom_cfg: ZoomConfig::default(),
            workers: 1,
            selection: SelectionParams::default(),
            known_topics: Vec::new(),
            documents: None,
            reject_log: None,
        }
    }
}

impl PipelineConfig {
    pub fn form_for(&self, mode: EvidenceMode) -> PromptForm {
        match (mode, self.zoom) {
            (EvidenceMode::Pair, true) if self.contrastive => PromptForm::DualZoom,
            (EvidenceMode::Pair, false) if self.contrastive => PromptForm::Contrastive,
            (EvidenceMode::Single, _) if self.single_form.is_some() => self.single_form.unwrap(),
            (_, true) => PromptForm::Zoom,
            (_, false) => PromptForm::Full,
        }
    }
}

/// The model roles a run needs.
#[derive(Clone)]
pub struct Backends {
    pub hinter: Arc<dyn ChatBackend>,
    pub summarizer: Arc<dyn ChatBackend>,
    /// Step selector; required when zooming.
    pub selector: Option<Arc<dyn ChatBackend>>,
}

impl Backends {
    /// One backend for every role.
    pub fn shared(b: Arc<dyn ChatBackend>) -> Self {
        Self {
            hinter: b.clone(),
            summarizer: b.clone(),
            selector: Some(b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub evidence: String,
    pub template_id: String,
    pub raw_completion: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub select_steps_ms: f64,
    pub summarize_ms: f64,
    pub build_prompt_ms: f64,
    pub generate_ms: f64,
    pub merge_ms: f64,
}

impl StageTimings {
    fn add(&mut self, o: &StageTimings) {
        self.select_steps_ms += o.select_steps_ms;
        self.summarize_ms += o.summarize_ms;
        self.build_prompt_ms += o.build_prompt_ms;
        self.generate_ms += o.generate_ms;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Halt {
    /// First evidence position that was not merged.
    pub cursor: usize,
    pub evidence: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub evidence_total: usize,
    pub started_at: usize,
    pub units_merged: usize,
    pub hints_inserted: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub workers: usize,
    pub halted: Option<Halt>,
    pub wall_ms: f64,
    pub stages: StageTimings,
}

impl GenerationReport {
    pub fn complete(&self) -> bool {
        self.halted.is_none()
    }
}

enum UnitOutcome {
    Hint(Box<NewHint>),
    Reject(RejectRecord),
    Halt(String),
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Order-sensitive digest of the evidence queue, used to refuse resuming
/// against a different trace set or configuration.
fn fingerprint(units: &[Evidence]) -> String {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for u in units {
        for b in u.reference().bytes().chain(std::iter::once(b'\n')) {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    format!("{h:016x}-{}", units.len())
}

pub struct Pipeline {
    cfg: PipelineConfig,
    backends: Backends,
    templates: TemplateSet,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, backends: Backends, templates: TemplateSet) -> Result<Self, PipelineError> {
        if cfg.workers == 0 {
            return Err(PipelineError::Config("workers must be >= 1".into()));
        }
        if cfg.modes.is_empty() {
            return Err(PipelineError::Config("no evidence modes selected".into()));
        }
        if cfg.zoom && backends.selector.is_none() {
            return Err(PipelineError::Config("zooming requires a step-selection backend".into()));
        }
        if cfg.zoom_cfg.max_critical_steps == 0 {
            return Err(PipelineError::Config("max_critical_steps must be >= 1".into()));
        }
        Ok(Self {
            cfg,
            backends,
            templates,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn evidence(&self, traces: &TraceSet) -> Result<Vec<Evidence>, PipelineError> {
        Ok(select_evidence(traces, &self.cfg.modes, self.cfg.selection)?)
    }

    fn meta(&self, units: &[Evidence]) -> DbMeta {
        let mut config = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            config.insert(k.to_string(), v);
        };
        put("hinter", self.backends.hinter.model_tag().into());
        put("summarizer", self.backends.summarizer.model_tag().into());
        if let Some(s) = &self.backends.selector {
            put("selector", s.model_tag().into());
        }
        let modes: Vec<String> = self.cfg.modes.iter().map(ToString::to_string).collect();
        put("modes", modes.join(","));
        put("zoom", self.cfg.zoom.to_string());
        put("contrastive", self.cfg.contrastive.to_string());
        put("delta", self.cfg.zoom_cfg.delta.to_string());
        put("max_critical_steps", self.cfg.zoom_cfg.max_critical_steps.to_string());
        put("pair_cap", self.cfg.selection.pair_cap.to_string());
        put("group_size", self.cfg.selection.group_size.to_string());
        put("evidence_fingerprint", fingerprint(units));
        DbMeta {
            config,
            ..DbMeta::default()
        }
    }

    /// Generates a fresh database from `traces`.
    pub fn run(&self, traces: &TraceSet) -> Result<(HintDb, GenerationReport), PipelineError> {
        let units = self.evidence(traces)?;
        let db = HintDb::new(self.meta(&units));
        self.process(traces, &units, db, 0)
    }

    /// Continues a halted run from the cursor stored in `db`.
    pub fn resume(&self, traces: &TraceSet, db: HintDb) -> Result<(HintDb, GenerationReport), PipelineError> {
        let units = self.evidence(traces)?;
        let expected = fingerprint(&units);
        match db.meta().config.get("evidence_fingerprint") {
            Some(f) if *f == expected => {}
            Some(f) => {
                return Err(PipelineError::Resume(format!(
                    "evidence queue changed (db {f}, now {expected})"
                )))
            }
            None => return Err(PipelineError::Resume("db has no evidence fingerprint".into())),
        }
        let start = db.meta().resume_cursor.unwrap_or(units.len());
        if start > units.len() {
            return Err(PipelineError::Resume(format!(
                "cursor {start} beyond {} evidence units",
                units.len()
            )));
        }
        self.process(traces, &units, db, start)
    }

    fn process(
        &self,
        traces: &TraceSet,
        units: &[Evidence],
        mut db: HintDb,
        start: usize,
    ) -> Result<(HintDb, GenerationReport), PipelineError> {
        let t0 = Instant::now();
        let workers = self.cfg.workers.min(units.len().saturating_sub(start)).max(1);
        info!(total = units.len(), start, workers, "hint generation started");
        let next = AtomicUsize::new(start);
        let halt = AtomicBool::new(false);
        let mut stages = StageTimings::default();
        let mut report = GenerationReport {
            evidence_total: units.len(),
            started_at: start,
            units_merged: 0,
            hints_inserted: 0,
            duplicates: 0,
            rejected: 0,
            workers,
            halted: None,
            wall_ms: 0.0,
            stages: StageTimings::default(),
        };
        let mut rejects: Vec<RejectRecord> = Vec::new();

        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::channel::<(usize, UnitOutcome, StageTimings)>();
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, halt) = (&next, &halt);
                scope.spawn(move || loop {
                    if halt.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= units.len() {
                        break;
                    }
                    let (outcome, t) = self.process_unit(traces, &units[i]);
                    if matches!(outcome, UnitOutcome::Halt(_)) {
                        halt.store(true, Ordering::SeqCst);
                    }
                    if tx.send((i, outcome, t)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            let mut pending: HashMap<usize, UnitOutcome> = HashMap::new();
            let mut cursor = start;
            let mut stopped = false;
            for (i, outcome, t) in rx {
                stages.add(&t);
                pending.insert(i, outcome);
                while !stopped {
                    let Some(outcome) = pending.remove(&cursor) else { break };
                    let m0 = Instant::now();
                    match outcome {
                        UnitOutcome::Hint(h) => {
                            let before = db.len();
                            match db.insert(*h) {
                                Ok(_) if db.len() > before => report.hints_inserted += 1,
                                Ok(_) => report.duplicates += 1,
                                Err(e) => {
                                    rejects.push(RejectRecord {
                                        evidence: units[cursor].reference(),
                                        template_id: "store".into(),
                                        raw_completion: String::new(),
                                        error: e.to_string(),
                                    });
                                }
                            }
                        }
                        UnitOutcome::Reject(r) => {
                            warn!(evidence = %r.evidence, error = %r.error, "completion rejected");
                            rejects.push(r);
                        }
                        UnitOutcome::Halt(error) => {
                            warn!(evidence = %units[cursor].reference(), %error, "backend failure, halting");
                            report.halted = Some(Halt {
                                cursor,
                                evidence: units[cursor].reference(),
                                error,
                            });
                            stopped = true;
                            break;
                        }
                    }
                    stages.merge_ms += ms(m0.elapsed());
                    cursor += 1;
                    report.units_merged += 1;
                    if report.units_merged % 10 == 0 {
                        debug!(merged = cursor, total = units.len(), "progress");
                    }
                }
            }
        });

        report.rejected = rejects.len();
        if let Some(path) = &self.cfg.reject_log {
            append_rejects(path, &rejects)?;
        }
        db.meta_mut().resume_cursor = report.halted.as_ref().map(|h| h.cursor);
        report.wall_ms = ms(t0.elapsed());
        report.stages = stages;
        info!(
            merged = report.units_merged,
            inserted = report.hints_inserted,
            rejected = report.rejected,
            halted = report.halted.is_some(),
            wall_ms = report.wall_ms,
            "hint generation finished"
        );
        Ok((db, report))
    }

    fn process_unit(&self, traces: &TraceSet, ev: &Evidence) -> (UnitOutcome, StageTimings) {
        let mut t = StageTimings::default();
        let outcome = self.try_unit(traces, ev, &mut t);
        (outcome, t)
    }

    fn try_unit(&self, traces: &TraceSet, ev: &Evidence, t: &mut StageTimings) -> UnitOutcome {
        let reject = |template: TemplateId, raw: String, error: String| {
            UnitOutcome::Reject(RejectRecord {
                evidence: ev.reference(),
                template_id: template.as_str().to_string(),
                raw_completion: raw,
                error,
            })
        };
        let classify = |template: TemplateId, e: ZoomError| match e {
            ZoomError::Backend(err) => UnitOutcome::Halt(err.to_string()),
            ZoomError::Parse { source, raw } => reject(template, raw, source.to_string()),
            other => reject(template, String::new(), other.to_string()),
        };
        let Some(members) = ev.resolve(traces) else {
            return reject(TemplateId::HintGeneration, String::new(), "evidence member not found".into());
        };
        let form = self.cfg.form_for(ev.mode);

        let s0 = Instant::now();
        let critical: Option<Vec<CriticalSteps>> = if matches!(form, PromptForm::Zoom | PromptForm::DualZoom) {
            let selector = self.backends.selector.as_deref().expect("checked at construction");
            let mut v = Vec::with_capacity(members.len());
            for m in &members {
                match select_critical_steps(m, selector, &self.templates, &self.cfg.zoom_cfg) {
                    Ok(c) => v.push(c),
                    Err(e) => return classify(TemplateId::StepSelection, e),
                }
            }
            Some(v)
        } else {
            None
        };
        t.select_steps_ms += ms(s0.elapsed());

        let s0 = Instant::now();
        let key = match self.semantic_key(ev, &members, critical.as_deref()) {
            Ok(k) => k,
            Err(e) => return classify(TemplateId::ContextIdentification, e),
        };
        t.summarize_ms += ms(s0.elapsed());

        let s0 = Instant::now();
        let extras = PromptExtras {
            summarization: Some(key.context.clone()),
            documents: self.cfg.documents.clone(),
            known_topics: self.cfg.known_topics.clone(),
        };
        let prompt = match build_prompt(
            ev,
            &members,
            form,
            critical.as_deref(),
            &extras,
            &self.templates,
            &self.cfg.zoom_cfg,
        ) {
            Ok(p) => p,
            Err(e) => return classify(form.template(), e),
        };
        t.build_prompt_ms += ms(s0.elapsed());

        let s0 = Instant::now();
        let out = match generate_hint(ev, &members, &prompt, key, self.backends.hinter.as_ref(), &self.cfg.zoom_cfg) {
            Ok(h) => UnitOutcome::Hint(Box::new(h)),
            Err(e) => classify(prompt.template, e),
        };
        t.generate_ms += ms(s0.elapsed());
        out
    }

    fn semantic_key(
        &self,
        ev: &Evidence,
        members: &[&Trace],
        critical: Option<&[CriticalSteps]>,
    ) -> Result<crate::zoom::SemanticKey, ZoomError> {
        let t = anchor_point(ev, members, critical);
        let prefix = ContextPrefix::from_trace(members[0], t)?;
        summarize_context(&prefix, self.backends.summarizer.as_ref(), &self.templates)
    }
}

fn append_rejects(path: &Path, rejects: &[RejectRecord]) -> Result<(), PipelineError> {
    let err = |source| PipelineError::RejectLog {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(err)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
    for r in rejects {
        let line = serde_json::to_string(r).map_err(|e| err(std::io::Error::other(e)))?;
        writeln!(f, "{line}").map_err(err)?;
    }
    Ok(())
}

/// Reads a reject log written by [`Pipeline`].
pub fn read_rejects(path: &Path) -> std::io::Result<Vec<RejectRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

/// Hint ids and bodies, for comparing runs.
pub fn record_set(db: &HintDb) -> BTreeSet<(String, String, String, String)> {
    db.records()
        .iter()
        .map(|r| (r.hint_id.clone(), r.task_id.clone(), r.key.context.clone(), r.hint.clone()))
        .collect()
}
