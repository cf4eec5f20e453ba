//! Structured extraction of problems and solutions from chunks, and the
//! rule-based quality screen applied to the results.

mod filter;

pub use filter::{quality_filter, ExternalPattern, FilterOutcome, FilterReason, PatternError, QualityRules, DEFAULT_PATTERNS};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audit::{AuditNote, Quarantined};
use crate::parse::{binary_verdict, last_json_array, JsonBlockError};
use crate::prompts;
use crate::provider::{ChatGateway, ChatRequest, Reask};
use crate::segment::Chunk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Problem,
    Solution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedItem {
    pub item_id: String,
    pub kind: ItemKind,
    /// Identifier as printed; empty when the response gave none.
    pub raw_identifier: String,
    pub body: String,
    pub doc_id: String,
    pub chunk_id: usize,
}

pub const PROBLEM_NUMBER_KEY: &str = "problem number";
pub const PROBLEM_KEY: &str = "problem";
pub const SOLUTION_NUMBER_KEY: &str = "solution number";
pub const SOLUTION_KEY: &str = "solution";

pub fn item_id(doc_id: &str, chunk_id: usize, position: usize) -> String {
    format!("{doc_id}/c{chunk_id:04}/i{position:03}")
}

fn scalar_text(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Null => Some(String::new()),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedExtraction {
    pub items: Vec<ExtractedItem>,
    /// Objects that were dropped, with the reason.
    pub notes: Vec<AuditNote>,
}

/// Items from the last fenced JSON list in an extraction response.
///
/// Each object must carry exactly one of the `problem` / `solution` body
/// keys; the matching number key is optional. Other objects are dropped
/// with an audit note.
pub fn parse_extraction_response(response: &str, chunk: &Chunk) -> Result<ParsedExtraction, JsonBlockError> {
    let values = last_json_array(response)?;
    let mut out = ParsedExtraction::default();
    for (position, value) in values.iter().enumerate() {
        let subject = item_id(&chunk.doc_id, chunk.chunk_id, position);
        let note = |msg: &str| AuditNote::new("extract", subject.clone(), msg);
        let Some(obj) = value.as_object() else {
            out.notes.push(note("element is not an object"));
            continue;
        };
        let (kind, body_key, number_key) = match (obj.contains_key(PROBLEM_KEY), obj.contains_key(SOLUTION_KEY)) {
            (true, false) => (ItemKind::Problem, PROBLEM_KEY, PROBLEM_NUMBER_KEY),
            (false, true) => (ItemKind::Solution, SOLUTION_KEY, SOLUTION_NUMBER_KEY),
            (true, true) => {
                out.notes.push(note("object has both problem and solution keys"));
                continue;
            }
            (false, false) => {
                out.notes.push(note("object has neither problem nor solution key"));
                continue;
            }
        };
        let Some(body) = scalar_text(obj.get(body_key)).filter(|b| !b.trim().is_empty()) else {
            out.notes.push(note("empty or non-text body"));
            continue;
        };
        let raw_identifier = scalar_text(obj.get(number_key)).unwrap_or_default().trim().to_string();
        out.items.push(ExtractedItem {
            item_id: subject,
            kind,
            raw_identifier,
            body,
            doc_id: chunk.doc_id.clone(),
            chunk_id: chunk.chunk_id,
        });
    }
    Ok(out)
}

pub fn build_extraction_prompt(chunk: &Chunk) -> String {
    prompts::render(prompts::EXTRACT_ITEMS, &[("chunk", &chunk.text)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkExtraction {
    pub doc_id: String,
    pub chunk_id: usize,
    pub items: Vec<ExtractedItem>,
    pub notes: Vec<AuditNote>,
    /// Set when the chunk could not be extracted.
    pub failure: Option<Quarantined>,
}

pub fn extract_chunk(gateway: &ChatGateway, model: &str, chunk: &Chunk) -> ChunkExtraction {
    let request = ChatRequest::new(model, build_extraction_prompt(chunk));
    let mut out = ChunkExtraction {
        doc_id: chunk.doc_id.clone(),
        chunk_id: chunk.chunk_id,
        items: Vec::new(),
        notes: Vec::new(),
        failure: None,
    };
    let subject = format!("{}/c{:04}", chunk.doc_id, chunk.chunk_id);
    match gateway.complete_parsed(&request, prompts::REASK_JSON_LIST, |r| parse_extraction_response(r, chunk)) {
        Ok(Reask::Parsed { value, .. }) => {
            out.items = value.items;
            out.notes = value.notes;
        }
        Ok(Reask::Unparsed { response, error }) => {
            out.failure = Some(Quarantined { stage: "extract".into(), subject, reason: error, raw_response: response });
        }
        Err(e) => {
            out.failure = Some(Quarantined {
                stage: "extract".into(),
                subject,
                reason: format!("provider: {e}"),
                raw_response: String::new(),
            });
        }
    }
    out
}

/// Extracts all chunks concurrently; output keeps chunk order.
pub fn extract_chunks(gateway: &ChatGateway, model: &str, chunks: &[Chunk]) -> Vec<ChunkExtraction> {
    chunks.par_iter().map(|c| extract_chunk(gateway, model, c)).collect()
}

/// Optional LLM completeness double-check for items the rules kept.
/// Returns `None` when no verdict could be obtained.
pub fn llm_completeness_check(gateway: &ChatGateway, model: &str, item: &ExtractedItem) -> Option<bool> {
    let kind = match item.kind {
        ItemKind::Problem => "problem",
        ItemKind::Solution => "solution",
    };
    let prompt = prompts::render(prompts::CHECK_COMPLETENESS, &[("kind", kind), ("body", &item.body)]);
    let request = ChatRequest::new(model, prompt);
    match gateway.complete_parsed(&request, prompts::REASK_VERDICT, |r| {
        binary_verdict(r, "[Begin]", "[End]", "true", "false")
    }) {
        Ok(Reask::Parsed { value, .. }) => Some(value),
        _ => None,
    }
}

/// Applies the rules, then (when `double_check` is given) the LLM check to
/// items the rules kept. An LLM rejection is recorded as `incomplete` with
/// the body's first line as evidence.
pub fn filter_items(
    items: &[ExtractedItem],
    rules: &QualityRules,
    double_check: Option<(&ChatGateway, &str)>,
) -> Vec<FilterOutcome> {
    items
        .par_iter()
        .map(|item| {
            let outcome = rules.check(item);
            match double_check {
                Some((gateway, model)) if outcome.kept => match llm_completeness_check(gateway, model, item) {
                    Some(false) => {
                        let first_line = item.body.trim().lines().next().unwrap_or(item.body.trim());
                        FilterOutcome::drop(item, FilterReason::Incomplete, first_line)
                    }
                    _ => outcome,
                },
                _ => outcome,
            }
        })
        .collect()
}
