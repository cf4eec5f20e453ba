use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ExtractedItem;

pub const DEFAULT_PATTERNS: &str = include_str!("../../patterns/quality.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Ok,
    Incomplete,
    ExternalReference,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::Ok => "ok",
            FilterReason::Incomplete => "incomplete",
            FilterReason::ExternalReference => "external_reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub item_id: String,
    pub kept: bool,
    pub reason: FilterReason,
    /// Verbatim span of the body that caused the drop; empty when kept.
    pub evidence: String,
}

impl FilterOutcome {
    fn keep(item: &ExtractedItem) -> Self {
        Self { item_id: item.item_id.clone(), kept: true, reason: FilterReason::Ok, evidence: String::new() }
    }

    pub(crate) fn drop(item: &ExtractedItem, reason: FilterReason, evidence: &str) -> Self {
        Self { item_id: item.item_id.clone(), kept: false, reason, evidence: evidence.to_string() }
    }
}

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("{path}: {message}")]
    Load { path: String, message: String },
    #[error("pattern `{pattern}`: {source}")]
    Regex { pattern: String, source: regex::Error },
}

#[derive(Debug, Deserialize)]
struct PatternFile {
    min_chars: usize,
    #[serde(default)]
    dangling_connectives: Vec<String>,
    #[serde(default)]
    dangling_endings: Vec<String>,
    #[serde(default)]
    pattern: Vec<PatternEntry>,
}

#[derive(Debug, Deserialize)]
struct PatternEntry {
    family: String,
    regex: String,
}

#[derive(Debug, Clone)]
pub struct ExternalPattern {
    pub family: String,
    regex: Regex,
}

/// Compiled quality rules.
#[derive(Debug, Clone)]
pub struct QualityRules {
    pub min_chars: usize,
    pub dangling_connectives: Vec<String>,
    pub dangling_endings: Vec<String>,
    pub patterns: Vec<ExternalPattern>,
}

impl Default for QualityRules {
    fn default() -> Self {
        Self::from_toml(DEFAULT_PATTERNS, "<built-in>").expect("built-in pattern file compiles")
    }
}

impl QualityRules {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, PatternError> {
        let file: PatternFile =
            toml::from_str(text).map_err(|e| PatternError::Load { path: origin.to_string(), message: e.to_string() })?;
        let patterns = file
            .pattern
            .into_iter()
            .map(|p| {
                RegexBuilder::new(&p.regex)
                    .case_insensitive(true)
                    .build()
                    .map(|regex| ExternalPattern { family: p.family, regex })
                    .map_err(|source| PatternError::Regex { pattern: p.regex.clone(), source })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            min_chars: file.min_chars,
            dangling_connectives: file.dangling_connectives.into_iter().map(|c| c.to_lowercase()).collect(),
            dangling_endings: file.dangling_endings,
            patterns,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PatternError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PatternError::Load { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    fn incomplete_evidence<'a>(&self, body: &'a str) -> Option<&'a str> {
        let trimmed = body.trim();
        if trimmed.chars().count() < self.min_chars {
            return Some(trimmed);
        }
        let last = trimmed.split_whitespace().last()?;
        if self.dangling_endings.iter().any(|e| trimmed.ends_with(e.as_str())) {
            return Some(last);
        }
        let word = last.trim_end_matches([',', ';', ':', '.', '…']).to_lowercase();
        // A closing period ends the sentence even after a connective.
        if !last.ends_with('.') && self.dangling_connectives.contains(&word) {
            return Some(last);
        }
        None
    }

    fn external_evidence<'a>(&self, body: &'a str) -> Option<&'a str> {
        for pattern in &self.patterns {
            for caps in pattern.regex.captures_iter(body) {
                let whole = caps.get(0).expect("group 0");
                if let Some(label) = caps.name("label") {
                    let typeset = [format!("\\tag{{{}}}", label.as_str()), format!("\\tag*{{{}}}", label.as_str())];
                    if typeset.iter().any(|t| body.contains(t.as_str())) {
                        continue;
                    }
                }
                return Some(whole.as_str());
            }
        }
        None
    }

    /// Incompleteness first, then external references.
    pub fn check(&self, item: &ExtractedItem) -> FilterOutcome {
        if let Some(e) = self.incomplete_evidence(&item.body) {
            return FilterOutcome::drop(item, FilterReason::Incomplete, e);
        }
        if let Some(e) = self.external_evidence(&item.body) {
            return FilterOutcome::drop(item, FilterReason::ExternalReference, e);
        }
        FilterOutcome::keep(item)
    }
}

pub fn quality_filter(item: &ExtractedItem, rules: &QualityRules) -> FilterOutcome {
    rules.check(item)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::ItemKind;

    fn item(body: &str) -> ExtractedItem {
        ExtractedItem {
            item_id: "i".into(),
            kind: ItemKind::Problem,
            raw_identifier: "1".into(),
            body: body.into(),
            doc_id: "d".into(),
            chunk_id: 0,
        }
    }

    fn check(body: &str) -> FilterOutcome {
        QualityRules::default().check(&item(body))
    }

    #[test]
    fn figure_reference_is_dropped_with_evidence() {
        let out = check("Compute the pressure. See Figure 3.2 for the apparatus.");
        assert!(!out.kept);
        assert_eq!(out.reason, FilterReason::ExternalReference);
        assert_eq!(out.evidence, "See Figure 3.2");
    }

    #[test]
    fn self_contained_item_is_kept() {
        let out = check("Derive $pV = nRT$ from kinetic theory and state the assumptions.");
        assert!(out.kept);
        assert_eq!(out.reason, FilterReason::Ok);
        assert!(out.evidence.is_empty());
    }

    #[test]
    fn dangling_fragment_is_incomplete() {
        let out = check("Thus,");
        assert_eq!(out.reason, FilterReason::Incomplete);
        assert_eq!(out.evidence, "Thus,");
        let out = check("The total energy of the system is therefore given by the sum of");
        assert_eq!((out.reason, out.evidence.as_str()), (FilterReason::Incomplete, "of"));
        let out = check("Evaluate the following integrals:");
        assert_eq!(out.reason, FilterReason::Incomplete);
    }

    #[test]
    fn equation_references_respect_typeset_labels() {
        let out = check("Starting from Eq. (2.7), show that the entropy increases.");
        assert_eq!((out.reason, out.evidence.as_str()), (FilterReason::ExternalReference, "Eq. (2.7)"));
        let out = check("Given $$S = k \\ln W \\tag{2.7}$$ use Eq. (2.7) to find S for W = 1.");
        assert!(out.kept, "{out:?}");
        assert!(check("Solve the equation 2x + 3 = 7 for the unknown x value.").kept);
        assert!(!check("Using equation (4) compute the terminal velocity.").kept);
    }

    #[test]
    fn cross_problem_and_answer_refs() {
        for (body, evidence) in [
            ("Repeat the calculation as in Problem 3.4 for helium gas.", "as in Problem 3.4"),
            ("Use the value from part (b) of Problem 12 to find the work done.", "from part (b) of Problem 12"),
            ("Compute the drift velocity; see Exercise 4 for the data used.", "see Exercise 4"),
            ("The numerical answer is given in Appendix C of this volume.", "answer is given in Appendix"),
            ("With the same setup as the previous problem, find the tension.", "the previous problem"),
        ] {
            let out = check(body);
            assert_eq!(out.reason, FilterReason::ExternalReference, "{body}");
            assert_eq!(out.evidence, evidence);
        }
    }

    #[test]
    fn innocent_words_do_not_trigger() {
        for body in [
            "Configure 3 resistors in series and compute the equivalent resistance.",
            "Solve this problem using conservation of momentum for the two carts.",
            "A table tennis ball of mass 2.7 g falls from 1 m; find its speed.",
        ] {
            assert!(check(body).kept, "{body}");
        }
    }

    #[test]
    fn custom_pattern_file() {
        let rules = QualityRules::from_toml(
            "min_chars = 3\n[[pattern]]\nfamily = \"x\"\nregex = 'zork'\n",
            "inline",
        )
        .unwrap();
        assert_eq!(rules.check(&item("ok then")).reason, FilterReason::Ok);
        assert_eq!(rules.check(&item("a ZORK b")).evidence, "ZORK");
        assert!(QualityRules::from_toml("min_chars = 3\n[[pattern]]\nfamily='x'\nregex='('\n", "bad").is_err());
    }
}
