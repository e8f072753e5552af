//! Offline trajectory distillation into retrievable hints, and the retrieval
//! machinery that serves those hints back to agents.

pub mod api;
pub mod bm25;
pub mod docs;
pub mod eval;
pub mod evidence;
pub mod llm;
pub mod pipeline;
pub mod retrieval;
pub mod store;
pub mod text;
pub mod trace;
pub mod zoom;
