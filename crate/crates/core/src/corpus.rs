//! Candidate document retrieval by title keywords and LLM filtering.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::Quarantined;
use crate::parse::{binary_verdict, reasoning_excerpt, VerdictError};
use crate::prompts;
use crate::provider::{ChatGateway, ChatRequest, Reask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocFormat {
    Pdf,
    Epub,
    Pptx,
    Djvu,
    Other,
}

impl DocFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            DocFormat::Pdf => "pdf",
            DocFormat::Epub => "epub",
            DocFormat::Pptx => "pptx",
            DocFormat::Djvu => "djvu",
            DocFormat::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub doc_id: String,
    pub title: String,
    #[serde(default)]
    pub author: String,
    pub format: DocFormat,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub doc_id: String,
    pub accepted: bool,
    pub raw_response: String,
    pub reasoning_excerpt: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("keyword list is empty")]
    EmptyKeywords,
    #[error("catalog {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("catalog line {line}: {message}")]
    InvalidEntry { line: usize, message: String },
}

/// Reads a line-delimited JSON catalog. Relative document paths resolve
/// against the catalog's directory.
pub fn load_catalog(path: &Path) -> Result<Vec<DocumentMeta>, CorpusError> {
    let io = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |message: String| CorpusError::InvalidEntry { line: n + 1, message };
        let mut meta: DocumentMeta = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
        if meta.doc_id.trim().is_empty() {
            return Err(invalid("empty doc_id".into()));
        }
        if meta.title.trim().is_empty() {
            return Err(invalid(format!("document {} has an empty title", meta.doc_id)));
        }
        if !seen.insert(meta.doc_id.clone()) {
            return Err(invalid(format!("duplicate doc_id {}", meta.doc_id)));
        }
        if meta.path.is_relative() {
            meta.path = base.join(&meta.path);
        }
        if !meta.path.exists() {
            return Err(invalid(format!("path {} does not exist", meta.path.display())));
        }
        out.push(meta);
    }
    Ok(out)
}

fn title_words(title: &str) -> impl Iterator<Item = String> + '_ {
    title
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Whole-word, case-insensitive match; a plain `s`/`es` plural of the
/// keyword also counts ("Problems" matches `problem`, "problematic" does
/// not).
pub fn title_matches(title: &str, keywords: &[String]) -> bool {
    let keywords: Vec<String> = keywords.iter().map(|k| k.trim().to_lowercase()).filter(|k| !k.is_empty()).collect();
    title_words(title).any(|word| {
        keywords.iter().any(|k| {
            word == *k
                || word.strip_prefix(k.as_str()).is_some_and(|rest| rest == "s" || rest == "es")
        })
    })
}

/// Catalog entries whose title carries a keyword, in catalog order, first
/// occurrence of each doc_id only.
pub fn retrieve_candidates(catalog: &[DocumentMeta], keywords: &[String]) -> Result<Vec<DocumentMeta>, CorpusError> {
    if keywords.iter().all(|k| k.trim().is_empty()) {
        return Err(CorpusError::EmptyKeywords);
    }
    let mut seen = HashSet::new();
    Ok(catalog
        .iter()
        .filter(|d| title_matches(&d.title, keywords))
        .filter(|d| seen.insert(d.doc_id.clone()))
        .cloned()
        .collect())
}

pub fn build_filter_prompt(meta: &DocumentMeta) -> String {
    prompts::render(prompts::FILTER_DOCUMENTS, &[("title", &meta.title), ("author", &meta.author)])
}

pub const DETERMINE_OPEN: &str = "[Determine Begin]";
pub const DETERMINE_CLOSE: &str = "[Determine End]";

pub fn parse_determination(response: &str) -> Result<bool, VerdictError> {
    binary_verdict(response, DETERMINE_OPEN, DETERMINE_CLOSE, "yes", "no")
}

#[derive(Debug, Clone, Default)]
pub struct FilterRun {
    /// Parsed verdicts, catalog order.
    pub decisions: Vec<FilterDecision>,
    pub quarantined: Vec<Quarantined>,
}

impl FilterRun {
    pub fn accepted_ids(&self) -> HashSet<&str> {
        self.decisions.iter().filter(|d| d.accepted).map(|d| d.doc_id.as_str()).collect()
    }
}

enum Verdict {
    Decided(FilterDecision),
    Quarantine(Quarantined),
}

fn filter_one(gateway: &ChatGateway, model: &str, doc: &DocumentMeta) -> Verdict {
    let request = ChatRequest::new(model, build_filter_prompt(doc));
    let quarantine = |reason: String, raw: String| {
        Verdict::Quarantine(Quarantined {
            stage: "filter-docs".into(),
            subject: doc.doc_id.clone(),
            reason,
            raw_response: raw,
        })
    };
    match gateway.complete_parsed(&request, prompts::REASK_DETERMINATION, parse_determination) {
        Ok(Reask::Parsed { value, response, .. }) => Verdict::Decided(FilterDecision {
            doc_id: doc.doc_id.clone(),
            accepted: value,
            reasoning_excerpt: reasoning_excerpt(&response, DETERMINE_OPEN, 500),
            raw_response: response,
        }),
        Ok(Reask::Unparsed { response, error }) => quarantine(error, response),
        Err(e) => quarantine(format!("provider: {e}"), String::new()),
    }
}

/// Asks the filter model about every document concurrently; unparseable
/// or failed verdicts go to quarantine after one re-ask.
pub fn filter_documents(gateway: &ChatGateway, model: &str, docs: &[DocumentMeta]) -> FilterRun {
    let verdicts: Vec<Verdict> = docs.par_iter().map(|d| filter_one(gateway, model, d)).collect();
    let mut run = FilterRun::default();
    for v in verdicts {
        match v {
            Verdict::Decided(d) => run.decisions.push(d),
            Verdict::Quarantine(q) => run.quarantined.push(q),
        }
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, title: &str) -> DocumentMeta {
        DocumentMeta {
            doc_id: id.into(),
            title: title.into(),
            author: "A".into(),
            format: DocFormat::Pdf,
            path: PathBuf::from("/dev/null"),
        }
    }

    fn kw() -> Vec<String> {
        vec!["problem".into(), "question".into()]
    }

    #[test]
    fn keyword_hits_and_misses() {
        assert!(title_matches("Problems in General Physics", &kw()));
        assert!(!title_matches("Organic Chemistry", &kw()));
        assert!(!title_matches("Problematic Cases in Law", &kw()));
        assert!(title_matches("QUESTIONS AND ANSWERS", &kw()));
        assert!(title_matches("Physics: problem-solving", &kw()));
    }

    #[test]
    fn empty_keywords_rejected() {
        assert!(matches!(retrieve_candidates(&[], &[]), Err(CorpusError::EmptyKeywords)));
        assert!(matches!(retrieve_candidates(&[], &["  ".into()]), Err(CorpusError::EmptyKeywords)));
    }

    #[test]
    fn duplicate_ids_collapse_to_first() {
        let cat = vec![meta("a", "Problem Book"), meta("a", "Problem Book 2"), meta("b", "Question Bank")];
        let out = retrieve_candidates(&cat, &kw()).unwrap();
        assert_eq!(out.iter().map(|d| d.title.as_str()).collect::<Vec<_>>(), ["Problem Book", "Question Bank"]);
    }

    #[test]
    fn filter_prompt_interpolates_metadata() {
        let mut m = meta("x", "T");
        let p = build_filter_prompt(&m);
        assert!(p.contains("**Title**: T\n"));
        assert!(p.contains("**Author**: A\n"));
        m.author.clear();
        let p = build_filter_prompt(&m);
        assert!(p.contains("- **Author**: \n"));
        assert!(p.ends_with("[Determine Begin]Yes/No[Determine End]\n"));
    }

    #[test]
    fn determination_parsing() {
        assert_eq!(parse_determination("...reasoning...[Determine Begin]Yes[Determine End]"), Ok(true));
        assert_eq!(parse_determination("[Determine Begin] no [Determine End]"), Ok(false));
        assert!(matches!(parse_determination("I think yes."), Err(VerdictError::MissingMarkers { .. })));
        assert!(matches!(
            parse_determination("[Determine Begin]Maybe[Determine End]"),
            Err(VerdictError::Unrecognized(v)) if v == "Maybe"
        ));
    }

    #[test]
    fn catalog_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("book")).unwrap();
        let cat = dir.path().join("catalog.jsonl");
        std::fs::write(&cat, r#"{"doc_id":"b1","title":"Problems","author":"X","format":"other","path":"book"}"#).unwrap();
        let docs = load_catalog(&cat).unwrap();
        assert_eq!(docs[0].path, dir.path().join("book"));

        std::fs::write(&cat, r#"{"doc_id":"b1","title":"Problems","format":"pdf","path":"missing.pdf"}"#).unwrap();
        assert!(matches!(load_catalog(&cat), Err(CorpusError::InvalidEntry { line: 1, .. })));
        let dup = concat!(
            r#"{"doc_id":"b1","title":"P","format":"other","path":"book"}"#, "\n",
            r#"{"doc_id":"b1","title":"Q","format":"other","path":"book"}"#
        );
        std::fs::write(&cat, dup).unwrap();
        assert!(matches!(load_catalog(&cat), Err(CorpusError::InvalidEntry { line: 2, .. })));
    }
}
