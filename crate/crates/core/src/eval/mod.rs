//! Synthetic environments, scripted agents and the uplift harness.

pub mod agent;
pub mod env;
pub mod episode;
pub mod suite;

use thiserror::Error;

pub use agent::{hint_trigger, standard_agent, Decision, PolicyEntry, ScriptedAgent, NOOP};
pub use env::{observe, EnvKind, EnvState, SyntheticEnv, Transition};
pub use episode::{
    measure_uplift, run_episode, EnvUplift, EpisodeResources, EpisodeResult, HintProvenance, Regime,
    RetrievalSettings, TranscriptStep, UpliftReport, UpliftRow,
};
pub use suite::{demo_db, scripted_backends, standard_suite, training_traces, EVAL_GOAL};

use crate::pipeline::PipelineError;
use crate::retrieval::RetrievalError;
use crate::trace::TraceError;
use crate::zoom::ZoomError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("regime {0} needs a hint database")]
    NoDatabase(Regime),
    #[error("step regime needs a summarizer backend")]
    NoSummarizer,
    #[error("empty environment suite")]
    EmptySuite,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Zoom(#[from] ZoomError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::TemplateSet;
    use crate::retrieval::Retriever;
    use crate::zoom::ContextPrefix;

    fn resources<'a>(
        r: Option<&'a Retriever>,
        s: &'a dyn crate::llm::ChatBackend,
        t: &'a TemplateSet,
    ) -> EpisodeResources<'a> {
        EpisodeResources {
            retriever: r,
            summarizer: Some(s),
            templates: t,
            settings: RetrievalSettings::default(),
        }
    }

    #[test]
    fn training_set_has_both_outcomes() {
        let set = training_traces(2).unwrap();
        assert_eq!(set.len(), 12);
        for t in set.traces() {
            assert!(t.validate().is_valid(), "{:?}", t.validate().messages());
        }
        let wins = set.traces().iter().filter(|t| t.reward() > 0.5).count();
        assert_eq!(wins, 6);
    }

    #[test]
    fn summarizer_reads_current_observation() {
        let set = training_traces(1).unwrap();
        let t = set.traces().iter().find(|t| t.task_id == "paginated_grid").unwrap();
        let prefix = ContextPrefix::from_trace(t, 1).unwrap();
        let key = crate::zoom::summarize_context(&prefix, &suite::scripted_summarizer(), &TemplateSet::builtin())
            .unwrap();
        assert_eq!(key.context, suite::canonical_context(EnvKind::PaginatedGrid));
    }

    #[test]
    fn hints_lift_every_env_in_both_regimes() {
        let (db, report) = demo_db(2, 2).unwrap();
        assert!(report.complete());
        assert_eq!(db.len(), 3);
        let retriever = Retriever::new(db);
        let templates = TemplateSet::builtin();
        let summ = suite::scripted_summarizer();
        let (rep, results) = measure_uplift(
            &standard_suite(),
            &standard_agent(),
            &Regime::ALL,
            resources(Some(&retriever), &summ, &templates),
        )
        .unwrap();
        assert_eq!(rep.aggregate[&Regime::None], 0.0);
        assert_eq!(rep.aggregate[&Regime::Episode], 1.0);
        assert_eq!(rep.aggregate[&Regime::Step], 1.0);
        for e in &rep.per_env {
            assert_eq!(e.uplift[&Regime::Episode], 1.0, "{}", e.env_id);
        }
        for r in &results {
            match r.regime {
                Regime::None => assert_eq!(r.retrieval_calls, 0),
                Regime::Episode => assert_eq!(r.retrieval_calls, 1),
                Regime::Step => assert_eq!(r.retrieval_calls, r.steps),
            }
            assert_eq!(r.transcript.len(), r.steps);
        }
        assert_eq!(rep.lines().len(), 9);
        assert!(rep.to_string().contains("mean"));
        let row = rep.rows.iter().find(|r| r.regime == Regime::Episode).unwrap();
        assert_eq!(row.hints.len(), 1);
        assert_eq!(row.hints[0].created_by, "scripted-hinter");
    }

    #[test]
    fn hinted_regimes_need_resources() {
        let t = TemplateSet::builtin();
        let env = SyntheticEnv::new(EnvKind::MultiSelectList, EVAL_GOAL);
        let res = EpisodeResources {
            retriever: None,
            summarizer: None,
            templates: &t,
            settings: RetrievalSettings::default(),
        };
        assert!(matches!(
            run_episode(&env, &standard_agent(), Regime::Episode, res),
            Err(EvalError::NoDatabase(Regime::Episode))
        ));
        let r = run_episode(&env, &standard_agent(), Regime::None, res).unwrap();
        assert_eq!((r.reward, r.steps), (0.0, 3));
    }

    #[test]
    fn cross_task_pool_excludes_own_task() {
        let (db, _) = demo_db(1, 1).unwrap();
        let retriever = Retriever::new(db);
        let t = TemplateSet::builtin();
        let summ = suite::scripted_summarizer();
        let mut res = resources(Some(&retriever), &summ, &t);
        res.settings.mode = crate::store::FilterMode::CrossTask;
        let env = SyntheticEnv::new(EnvKind::FilterNavigation, EVAL_GOAL);
        let r = run_episode(&env, &standard_agent(), Regime::Episode, res).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(r.hints_retrieved.len() <= 2);
    }
}
