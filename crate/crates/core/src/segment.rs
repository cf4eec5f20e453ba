//! Per-page boundary detection and token-bounded, boundary-aligned
//! chunking of a document's transcribed text.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditNote;
use crate::parse::{last_json_array, JsonBlockError};
use crate::prompts;
use crate::provider::{ChatGateway, ChatRequest, Reask};
use crate::render::MarkdownPage;

/// Joins pages (and chunks) into document text.
pub const PAGE_SEPARATOR: &str = "\n";
pub const MIN_MAX_TOKENS: usize = 64;

pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// Whitespace-delimited words plus runs of symbol characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordSymbolEstimator;

impl TokenEstimator for WordSymbolEstimator {
    fn estimate(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    let mut runs = 0;
    let mut in_run = false;
    for c in text.chars() {
        let symbol = !c.is_alphanumeric() && !c.is_whitespace();
        if symbol && !in_run {
            runs += 1;
        }
        in_run = symbol;
    }
    words + runs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Chapter,
    Section,
    Subsection,
    Problem,
    Unknown,
}

/// Best-effort label for a boundary line. Informational only.
pub fn classify_line(line: &str) -> BoundaryKind {
    let t = line.trim_start();
    let lower = t.to_lowercase();
    let plain = lower.trim_start_matches(['#', '*', ' ']);
    if plain.starts_with("chapter") || (t.starts_with("# ") && !t.starts_with("##")) {
        BoundaryKind::Chapter
    } else if ["problem", "exercise", "example", "question"].iter().any(|p| plain.starts_with(p)) {
        BoundaryKind::Problem
    } else if t.starts_with("### ") {
        BoundaryKind::Subsection
    } else if t.starts_with("## ") || plain.starts_with("section") {
        BoundaryKind::Section
    } else if plain.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        BoundaryKind::Problem
    } else {
        BoundaryKind::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryMarker {
    pub doc_id: String,
    pub page_index: usize,
    pub line_index: usize,
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Position {
    pub page: usize,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_id: usize,
    pub text: String,
    pub start: Position,
    /// Exclusive: one past the last line.
    pub end: Position,
    pub token_estimate: usize,
    /// Part of a unit that alone exceeded the budget.
    pub oversized: bool,
    /// A hard-split piece after the first of an oversized unit.
    #[serde(default)]
    pub continuation: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("max_tokens {0} is below the minimum of {MIN_MAX_TOKENS}")]
    MaxTokensTooSmall(usize),
    #[error("boundary at page {page} line {line} is outside the page")]
    BoundaryOutOfRange { page: usize, line: usize },
    #[error("pages from several documents passed to one chunking call")]
    MixedDocuments,
}

/// Prefixes each physical line with `N| `.
pub fn index_lines(page: &MarkdownPage) -> String {
    index_text(&page.markdown)
}

pub fn index_text(text: &str) -> String {
    text.split('\n')
        .enumerate()
        .map(|(i, line)| format!("{i}| {line}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inverse of [`index_text`].
pub fn strip_line_index(indexed: &str) -> String {
    indexed
        .split('\n')
        .map(|line| line.split_once("| ").map_or(line, |(_, rest)| rest))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn line_count(text: &str) -> usize {
    text.split('\n').count()
}

/// Line numbers from the last fenced JSON list, kept in `[0, line_count)`,
/// deduplicated and sorted.
pub fn parse_boundary_response(response: &str, line_count: usize) -> Result<Vec<usize>, JsonBlockError> {
    let items = last_json_array(response)?;
    let mut lines: Vec<usize> = items
        .iter()
        .filter_map(|v| v.as_u64())
        .filter_map(|n| usize::try_from(n).ok())
        .filter(|&n| n < line_count)
        .collect();
    lines.sort_unstable();
    lines.dedup();
    Ok(lines)
}

pub fn build_boundary_prompt(page: &MarkdownPage) -> String {
    prompts::render(prompts::DETECT_BOUNDARIES, &[("page_text_with_line_index", &index_lines(page))])
}

/// Asks for one page's boundaries. A response that stays unparseable
/// after one re-ask, or a provider failure, leaves the page boundary-free
/// with an audit note.
pub fn detect_boundaries(gateway: &ChatGateway, model: &str, page: &MarkdownPage) -> (Vec<BoundaryMarker>, Option<AuditNote>) {
    if !page.has_content() {
        return (Vec::new(), None);
    }
    let count = line_count(&page.markdown);
    let subject = format!("{}#{}", page.doc_id, page.page_index);
    let request = ChatRequest::new(model, build_boundary_prompt(page));
    let lines = match gateway.complete_parsed(&request, prompts::REASK_JSON_LIST, |r| parse_boundary_response(r, count)) {
        Ok(Reask::Parsed { value, .. }) => value,
        Ok(Reask::Unparsed { error, .. }) => {
            return (Vec::new(), Some(AuditNote::new("segment", subject, format!("treated as boundary-free: {error}"))))
        }
        Err(e) => {
            return (Vec::new(), Some(AuditNote::new("segment", subject, format!("treated as boundary-free: provider: {e}"))))
        }
    };
    let text_lines: Vec<&str> = page.markdown.split('\n').collect();
    let markers = lines
        .into_iter()
        .map(|line_index| BoundaryMarker {
            doc_id: page.doc_id.clone(),
            page_index: page.page_index,
            line_index,
            kind: classify_line(text_lines[line_index]),
        })
        .collect();
    (markers, None)
}

pub fn detect_all(gateway: &ChatGateway, model: &str, pages: &[MarkdownPage]) -> Vec<(Vec<BoundaryMarker>, Option<AuditNote>)> {
    pages.par_iter().map(|p| detect_boundaries(gateway, model, p)).collect()
}

/// The document text chunks must reproduce: content pages joined by
/// [`PAGE_SEPARATOR`].
pub fn document_text(pages: &[MarkdownPage]) -> String {
    let mut pages: Vec<&MarkdownPage> = pages.iter().filter(|p| p.has_content()).collect();
    pages.sort_by_key(|p| p.page_index);
    pages.iter().map(|p| p.markdown.as_str()).collect::<Vec<_>>().join(PAGE_SEPARATOR)
}

struct Line<'a> {
    pos: Position,
    text: &'a str,
}

struct Assembler<'a> {
    doc_id: &'a str,
    lines: &'a [Line<'a>],
    estimator: &'a dyn TokenEstimator,
    max_tokens: usize,
    chunks: Vec<Chunk>,
}

impl<'a> Assembler<'a> {
    fn text(&self, range: std::ops::Range<usize>) -> String {
        self.lines[range].iter().map(|l| l.text).collect::<Vec<_>>().join(PAGE_SEPARATOR)
    }

    fn tokens(&self, range: std::ops::Range<usize>) -> usize {
        self.estimator.estimate(&self.text(range))
    }

    fn emit(&mut self, range: std::ops::Range<usize>, oversized: bool, continuation: bool) {
        let text = self.text(range.clone());
        let last = &self.lines[range.end - 1];
        self.chunks.push(Chunk {
            doc_id: self.doc_id.to_string(),
            chunk_id: self.chunks.len(),
            token_estimate: self.estimator.estimate(&text),
            text,
            start: self.lines[range.start].pos,
            end: Position { page: last.pos.page, line: last.pos.line + 1 },
            oversized,
            continuation,
        });
    }

    /// Hard-splits an over-budget unit at line granularity.
    fn emit_oversized(&mut self, unit: std::ops::Range<usize>) {
        let mut start = unit.start;
        let mut first = true;
        while start < unit.end {
            let mut end = start + 1;
            while end < unit.end && self.tokens(start..end + 1) <= self.max_tokens {
                end += 1;
            }
            self.emit(start..end, true, !first);
            first = false;
            start = end;
        }
    }
}

/// Greedy assembly of boundary-delimited units into chunks of at most
/// `max_tokens` estimated tokens.
///
/// Units run from one boundary line to the next (the first unit starts at
/// the document's first line). A unit joins the open chunk while the
/// merged text fits; otherwise the chunk closes and the unit opens the
/// next one. A unit that alone exceeds the budget is flagged `oversized`
/// and split into line-granular pieces. Empty and failed pages contribute
/// nothing.
pub fn build_chunks(
    pages: &[MarkdownPage],
    boundaries: &[BoundaryMarker],
    max_tokens: usize,
    estimator: &dyn TokenEstimator,
) -> Result<Vec<Chunk>, SegmentError> {
    if max_tokens < MIN_MAX_TOKENS {
        return Err(SegmentError::MaxTokensTooSmall(max_tokens));
    }
    let Some(first) = pages.first() else { return Ok(Vec::new()) };
    let doc_id = first.doc_id.as_str();
    if pages.iter().any(|p| p.doc_id != doc_id) || boundaries.iter().any(|b| b.doc_id != doc_id) {
        return Err(SegmentError::MixedDocuments);
    }
    let mut ordered: Vec<&MarkdownPage> = pages.iter().filter(|p| p.has_content()).collect();
    ordered.sort_by_key(|p| p.page_index);

    let mut lines = Vec::new();
    for page in &ordered {
        for (i, text) in page.markdown.split('\n').enumerate() {
            lines.push(Line { pos: Position { page: page.page_index, line: i }, text });
        }
    }
    let content: std::collections::HashMap<usize, usize> =
        ordered.iter().map(|p| (p.page_index, line_count(&p.markdown))).collect();
    let mut starts = HashSet::new();
    for b in boundaries {
        match content.get(&b.page_index) {
            Some(&n) if b.line_index >= n => {
                return Err(SegmentError::BoundaryOutOfRange { page: b.page_index, line: b.line_index })
            }
            Some(_) => {
                starts.insert(Position { page: b.page_index, line: b.line_index });
            }
            // Markers on empty or failed pages carry no text.
            None => {}
        }
    }

    let mut units = Vec::new();
    let mut unit_start = 0;
    for i in 1..lines.len() {
        if starts.contains(&lines[i].pos) {
            units.push(unit_start..i);
            unit_start = i;
        }
    }
    if !lines.is_empty() {
        units.push(unit_start..lines.len());
    }

    let mut asm = Assembler { doc_id, lines: &lines, estimator, max_tokens, chunks: Vec::new() };
    let mut open: Option<std::ops::Range<usize>> = None;
    for unit in units {
        if let Some(current) = open.clone() {
            if asm.tokens(current.start..unit.end) <= max_tokens {
                open = Some(current.start..unit.end);
                continue;
            }
            asm.emit(current, false, false);
        }
        if asm.tokens(unit.clone()) > max_tokens {
            asm.emit_oversized(unit);
            open = None;
        } else {
            open = Some(unit);
        }
    }
    if let Some(current) = open {
        asm.emit(current, false, false);
    }
    Ok(asm.chunks)
}
