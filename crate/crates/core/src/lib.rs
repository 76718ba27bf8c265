//! Synthesis, validation and serving of multi-session dialogue corpora with
//! chronological dynamics: time intervals between sessions and a fixed
//! relationship between the two speakers.

pub mod chronology;
pub mod corpus;
pub mod episode_pipeline;
pub mod event_graph;
pub mod llm_backend;
pub mod prompting;
pub mod rebot;
