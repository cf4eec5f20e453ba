//! Stage file layout and recounting from persisted outputs.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentMeta, FilterDecision};
use crate::extract::{ExtractedItem, FilterOutcome, ItemKind};
use crate::jsonl::{count_lines, read_jsonl};
use crate::render::{MarkdownPage, PageRecord};
use crate::respond::ModelSolution;

use super::manifest::{Stage, StageCounts};

pub const CANDIDATES: &str = "candidates.jsonl";
pub const NO_KEYWORD: &str = "no_keyword.jsonl";
pub const DECISIONS: &str = "decisions.jsonl";
pub const QUARANTINE: &str = "quarantine.jsonl";
pub const PAGES: &str = "pages.jsonl";
pub const FAILURES: &str = "failures.jsonl";
pub const MARKDOWN: &str = "markdown.jsonl";
pub const AUDIT: &str = "audit.jsonl";
pub const CONTENT_PAGES: &str = "content_pages.jsonl";
pub const BOUNDARIES: &str = "boundaries.jsonl";
pub const CHUNKS: &str = "chunks.jsonl";
pub const NOTES: &str = "notes.jsonl";
pub const EXTRACTED_CHUNKS: &str = "extracted_chunks.jsonl";
pub const ITEMS: &str = "items.jsonl";
pub const OUTCOMES: &str = "outcomes.jsonl";
pub const VERIFICATIONS: &str = "verifications.jsonl";
pub const PAIRS: &str = "pairs.jsonl";
pub const UNMATCHED: &str = "unmatched.jsonl";
pub const SOLUTIONS: &str = "solutions.jsonl";
pub const JUDGED: &str = "judged.jsonl";
pub const DATASET: &str = "dataset.jsonl";

/// Files each stage writes, primary output first.
pub fn stage_files(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Retrieve => &[CANDIDATES, NO_KEYWORD],
        Stage::FilterDocs => &[DECISIONS, QUARANTINE],
        Stage::Render => &[PAGES, FAILURES],
        Stage::Transcribe => &[MARKDOWN, AUDIT],
        Stage::Segment => &[CHUNKS, BOUNDARIES, CONTENT_PAGES, NOTES],
        Stage::Extract => &[ITEMS, EXTRACTED_CHUNKS, FAILURES, NOTES],
        Stage::FilterItems => &[OUTCOMES],
        Stage::Match => &[PAIRS, CANDIDATES, VERIFICATIONS, UNMATCHED, NOTES],
        Stage::Collect => &[SOLUTIONS],
        Stage::Judge => &[JUDGED, NOTES],
        Stage::Emit => &[DATASET],
    }
}

pub fn stage_dir(run_dir: &Path, stage: Stage) -> PathBuf {
    run_dir.join("stages").join(stage.name())
}

pub fn stage_path(run_dir: &Path, stage: Stage, file: &str) -> PathBuf {
    stage_dir(run_dir, stage).join(file)
}

/// Paths of a stage's outputs relative to the run directory.
pub fn relative_outputs(stage: Stage) -> Vec<String> {
    stage_files(stage).iter().map(|f| format!("stages/{}/{f}", stage.name())).collect()
}

pub fn read<T: DeserializeOwned>(run_dir: &Path, stage: Stage, file: &str) -> Result<Vec<T>, String> {
    let path = stage_path(run_dir, stage, file);
    read_jsonl(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn lines(run_dir: &Path, stage: Stage, file: &str) -> Result<u64, String> {
    let path = stage_path(run_dir, stage, file);
    count_lines(&path).map_err(|e| format!("{}: {e}", path.display()))
}

/// A content page handed to chunking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentPage {
    pub doc_id: String,
    pub page_index: usize,
    pub lines: usize,
}

/// A chunk whose extraction response parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedChunk {
    pub doc_id: String,
    pub chunk_id: usize,
    pub items: usize,
    pub notes: usize,
}

/// Documents accepted by the filter, in candidate order.
pub fn accepted_documents(run_dir: &Path) -> Result<Vec<DocumentMeta>, String> {
    let candidates: Vec<DocumentMeta> = read(run_dir, Stage::Retrieve, CANDIDATES)?;
    let decisions: Vec<FilterDecision> = read(run_dir, Stage::FilterDocs, DECISIONS)?;
    let accepted: HashSet<&str> = decisions.iter().filter(|d| d.accepted).map(|d| d.doc_id.as_str()).collect();
    Ok(candidates.into_iter().filter(|d| accepted.contains(d.doc_id.as_str())).collect())
}

/// Items the quality screen kept, in extraction order.
pub fn kept_items(run_dir: &Path) -> Result<Vec<ExtractedItem>, String> {
    let items: Vec<ExtractedItem> = read(run_dir, Stage::Extract, ITEMS)?;
    let outcomes: Vec<FilterOutcome> = read(run_dir, Stage::FilterItems, OUTCOMES)?;
    let kept: HashSet<&str> = outcomes.iter().filter(|o| o.kept).map(|o| o.item_id.as_str()).collect();
    Ok(items.into_iter().filter(|i| kept.contains(i.item_id.as_str())).collect())
}

fn upstream_kept(run_dir: &Path, stage: Stage) -> Result<u64, String> {
    match stage.previous() {
        Some(prev) => Ok(recount(run_dir, prev)?.kept),
        None => Ok(0),
    }
}

/// Counts for `stage` rebuilt from files on disk, never from the manifest.
pub fn recount(run_dir: &Path, stage: Stage) -> Result<StageCounts, String> {
    let mut c = StageCounts::default();
    match stage {
        Stage::Retrieve => {
            c.kept = lines(run_dir, stage, CANDIDATES)?;
            let no_keyword = lines(run_dir, stage, NO_KEYWORD)?;
            c.inputs = c.kept + no_keyword;
            c.drop("no_keyword", no_keyword);
        }
        Stage::FilterDocs => {
            c.inputs = upstream_kept(run_dir, stage)?;
            let decisions: Vec<FilterDecision> = read(run_dir, stage, DECISIONS)?;
            c.kept = decisions.iter().filter(|d| d.accepted).count() as u64;
            c.drop("rejected", decisions.len() as u64 - c.kept);
            c.drop("quarantined", lines(run_dir, stage, QUARANTINE)?);
        }
        Stage::Render => {
            c.inputs = upstream_kept(run_dir, stage)?;
            let pages: Vec<PageRecord> = read(run_dir, stage, PAGES)?;
            for p in &pages {
                let path = run_dir.join(&p.path);
                if !path.is_file() {
                    return Err(format!("page image {} is missing", path.display()));
                }
            }
            c.kept = pages.iter().map(|p| p.doc_id.as_str()).collect::<BTreeSet<_>>().len() as u64;
            c.drop("render_failed", lines(run_dir, stage, FAILURES)?);
            c.extra.insert("pages".into(), pages.len() as u64);
        }
        Stage::Transcribe => {
            c.inputs = recount(run_dir, Stage::Render)?.extra.get("pages").copied().unwrap_or(0);
            let pages: Vec<MarkdownPage> = read(run_dir, stage, MARKDOWN)?;
            let audits = lines(run_dir, stage, AUDIT)?;
            if audits != pages.len() as u64 {
                return Err(format!("transcribe: {audits} audit records for {} pages", pages.len()));
            }
            let failed = pages.iter().filter(|p| p.failed).count() as u64;
            c.kept = pages.len() as u64 - failed;
            c.drop("transcription_failed", failed);
            c.extra.insert("empty_pages".into(), pages.iter().filter(|p| p.is_empty && !p.failed).count() as u64);
        }
        Stage::Segment => {
            let upstream = recount(run_dir, Stage::Transcribe)?;
            c.inputs = upstream.kept;
            c.kept = lines(run_dir, stage, CONTENT_PAGES)?;
            c.drop("empty_page", upstream.extra.get("empty_pages").copied().unwrap_or(0));
            c.extra.insert("chunks".into(), lines(run_dir, stage, CHUNKS)?);
            c.extra.insert("boundaries".into(), lines(run_dir, stage, BOUNDARIES)?);
        }
        Stage::Extract => {
            c.inputs = recount(run_dir, Stage::Segment)?.extra.get("chunks").copied().unwrap_or(0);
            let done: Vec<ExtractedChunk> = read(run_dir, stage, EXTRACTED_CHUNKS)?;
            let items: Vec<ExtractedItem> = read(run_dir, stage, ITEMS)?;
            let claimed: usize = done.iter().map(|d| d.items).sum();
            if claimed != items.len() {
                return Err(format!("extract: chunk records claim {claimed} items, items file has {}", items.len()));
            }
            c.kept = done.len() as u64;
            c.drop("extraction_failed", lines(run_dir, stage, FAILURES)?);
            let problems = items.iter().filter(|i| i.kind == ItemKind::Problem).count() as u64;
            c.extra.insert("items".into(), items.len() as u64);
            c.extra.insert("problems".into(), problems);
            c.extra.insert("solutions".into(), items.len() as u64 - problems);
        }
        Stage::FilterItems => {
            c.inputs = recount(run_dir, Stage::Extract)?.extra.get("items").copied().unwrap_or(0);
            let outcomes: Vec<FilterOutcome> = read(run_dir, stage, OUTCOMES)?;
            for o in &outcomes {
                if o.kept {
                    c.kept += 1;
                } else {
                    c.drop(o.reason.as_str(), 1);
                }
            }
        }
        Stage::Match => {
            let kept = kept_items(run_dir)?;
            let problems = kept.iter().filter(|i| i.kind == ItemKind::Problem).count() as u64;
            c.inputs = problems;
            c.kept = lines(run_dir, stage, PAIRS)?;
            c.drop("unmatched", lines(run_dir, stage, UNMATCHED)?);
            c.extra.insert("solutions".into(), kept.len() as u64 - problems);
            c.extra.insert("candidates".into(), lines(run_dir, stage, CANDIDATES)?);
            c.extra.insert("verifications".into(), lines(run_dir, stage, VERIFICATIONS)?);
        }
        Stage::Collect => {
            let pairs = lines(run_dir, Stage::Match, PAIRS)?;
            let solutions: Vec<ModelSolution> = read(run_dir, stage, SOLUTIONS)?;
            let models = solutions.iter().map(|s| s.model_name.as_str()).collect::<BTreeSet<_>>().len() as u64;
            c.inputs = pairs * models;
            let failed = solutions.iter().filter(|s| s.failure.is_some()).count() as u64;
            c.kept = solutions.len() as u64 - failed;
            c.drop("collect_failed", failed);
            c.extra.insert("models".into(), models);
        }
        Stage::Judge => {
            c.inputs = upstream_kept(run_dir, stage)?;
            let judged: Vec<ModelSolution> = read(run_dir, stage, JUDGED)?;
            c.kept = judged.iter().filter(|s| s.judged_correct.is_some()).count() as u64;
            c.drop("unjudged", judged.len() as u64 - c.kept);
            c.extra.insert("judged_correct".into(), judged.iter().filter(|s| s.judged_correct == Some(true)).count() as u64);
        }
        Stage::Emit => {
            c.inputs = lines(run_dir, Stage::Match, PAIRS)?;
            c.kept = lines(run_dir, stage, DATASET)?;
        }
    }
    Ok(c)
}

