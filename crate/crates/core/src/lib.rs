//! Mining verified problem-solution pairs from document corpora.
//!
//! The pipeline runs in stages: keyword retrieval and LLM filtering of
//! candidate documents ([`corpus`]), page rendering and transcription to
//! markdown ([`render`]), boundary detection and token-bounded chunking
//! ([`segment`]), structured extraction and rule-based quality filtering
//! ([`extract`]), numerical plus semantic candidate matching with LLM
//! verification ([`matching`]), and reasoning-model response collection
//! ([`respond`]). [`pipeline`] sequences the stages with a resumable
//! manifest; [`fixtures`] builds synthetic corpora with scripted providers
//! so the whole system can be checked end to end.

pub mod jsonl;
pub mod parse;
pub mod prompts;
pub mod provider;
pub mod audit;
pub mod corpus;
pub mod extract;
pub mod fixtures;
pub mod matching;
pub mod pipeline;
pub mod render;
pub mod respond;
pub mod segment;
