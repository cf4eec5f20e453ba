//! Dual-pathway matching: candidates from shared numerical identifiers and
//! from embedding similarity, capped and verified in rank order.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::AuditNote;
use crate::extract::ExtractedItem;
use crate::parse::{binary_verdict, VerdictError};
use crate::prompts;
use crate::provider::{cosine, ChatGateway, ChatRequest, Embedder, EmbeddingVector, Reask};

/// Printed problem number reduced to its digit runs: "1.1", "1-1" and
/// "Example 1.1" all key to `[1, 1]`.
#[derive(Debug, Clone, Eq, Serialize, Deserialize)]
pub struct IdentifierKey {
    pub parts: Vec<u64>,
    pub raw: String,
}

impl PartialEq for IdentifierKey {
    fn eq(&self, other: &Self) -> bool {
        self.parts == other.parts
    }
}

impl Hash for IdentifierKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.parts.hash(state);
    }
}

impl IdentifierKey {
    /// Dotted rendering of the parts, e.g. `1.1`.
    pub fn canonical(&self) -> String {
        self.parts.iter().map(u64::to_string).collect::<Vec<_>>().join(".")
    }
}

/// `None` when `raw` holds no digits. Markup, words and separators only
/// delimit digit runs; runs too long for u64 saturate.
pub fn normalize_identifier(raw: &str) -> Option<IdentifierKey> {
    let parts: Vec<u64> = raw
        .split(|c: char| !c.is_ascii_digit())
        .filter(|run| !run.is_empty())
        .map(|run| run.parse::<u64>().unwrap_or(u64::MAX))
        .collect();
    (!parts.is_empty()).then(|| IdentifierKey { parts, raw: raw.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Numerical,
    Semantic,
}

impl Pathway {
    pub fn as_str(self) -> &'static str {
        match self {
            Pathway::Numerical => "numerical",
            Pathway::Semantic => "semantic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSolution {
    pub problem_id: String,
    pub solution_id: String,
    /// Cosine similarity; 1.0 for numerical candidates.
    pub score: f64,
    pub pathway: Pathway,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedPair {
    pub problem_id: String,
    pub solution_id: String,
    pub verdict_response: String,
    pub pathway: Pathway,
    pub candidate_rank: usize,
    pub doc_id: String,
}

/// Kept solutions indexed by (document, identifier key), in input order.
#[derive(Debug, Default)]
pub struct SolutionIndex {
    by_key: HashMap<(String, Vec<u64>), Vec<String>>,
}

impl SolutionIndex {
    pub fn build(solutions: &[ExtractedItem]) -> Self {
        let mut by_key: HashMap<(String, Vec<u64>), Vec<String>> = HashMap::new();
        for s in solutions {
            if let Some(key) = normalize_identifier(&s.raw_identifier) {
                by_key.entry((s.doc_id.clone(), key.parts)).or_default().push(s.item_id.clone());
            }
        }
        Self { by_key }
    }
}

/// Same-document solutions sharing the problem's identifier key.
pub fn numerical_candidates(problem: &ExtractedItem, index: &SolutionIndex) -> Vec<CandidateSolution> {
    let Some(key) = normalize_identifier(&problem.raw_identifier) else { return Vec::new() };
    index
        .by_key
        .get(&(problem.doc_id.clone(), key.parts))
        .map(|ids| {
            ids.iter()
                .enumerate()
                .map(|(i, id)| CandidateSolution {
                    problem_id: problem.item_id.clone(),
                    solution_id: id.clone(),
                    score: 1.0,
                    pathway: Pathway::Numerical,
                    rank: i + 1,
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Top-`k` solutions by cosine similarity, descending; ties keep the
/// earlier solution first.
pub fn semantic_candidates(
    problem_id: &str,
    problem_vec: &EmbeddingVector,
    solutions: &[(String, EmbeddingVector)],
    k: usize,
) -> Vec<CandidateSolution> {
    let mut scored: Vec<(usize, f64)> = solutions.iter().enumerate().map(|(i, (_, v))| (i, cosine(problem_vec, v))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(rank, (i, score))| CandidateSolution {
            problem_id: problem_id.to_string(),
            solution_id: solutions[i].0.clone(),
            score,
            pathway: Pathway::Semantic,
            rank: rank + 1,
        })
        .collect()
}

/// Numerical candidates first, then semantic ones not already present,
/// truncated to `limit` and re-ranked from 1.
pub fn assemble_candidates(
    numerical: &[CandidateSolution],
    semantic: &[CandidateSolution],
    limit: usize,
) -> Vec<CandidateSolution> {
    let mut seen = std::collections::HashSet::new();
    numerical
        .iter()
        .chain(semantic)
        .filter(|c| seen.insert(c.solution_id.clone()))
        .take(limit)
        .enumerate()
        .map(|(i, c)| CandidateSolution { rank: i + 1, ..c.clone() })
        .collect()
}

pub const VERDICT_OPEN: &str = "[Begin]";
pub const VERDICT_CLOSE: &str = "[End]";

pub fn parse_verification(response: &str) -> Result<bool, VerdictError> {
    binary_verdict(response, VERDICT_OPEN, VERDICT_CLOSE, "true", "false")
}

pub fn build_verification_prompt(problem: &str, solution: &str) -> String {
    prompts::render(prompts::VERIFY_PAIR, &[("problem", problem), ("solution", solution)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub k_semantic: usize,
    pub candidate_limit: usize,
    pub numerical: bool,
    pub semantic: bool,
    /// Item bodies are cut to this many characters before embedding.
    pub embed_char_cap: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { k_semantic: 4, candidate_limit: 4, numerical: true, semantic: true, embed_char_cap: 4000 }
    }
}

pub struct MatchContext<'a> {
    pub gateway: &'a ChatGateway,
    pub embedder: &'a Embedder,
    pub verify_model: &'a str,
    pub config: &'a MatchConfig,
}

/// One verification call and how it ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub problem_id: String,
    pub solution_id: String,
    pub rank: usize,
    pub pathway: Pathway,
    /// `None` when no verdict could be parsed or the call failed.
    pub verdict: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmatchedProblem {
    pub problem_id: String,
    pub doc_id: String,
    pub candidates_considered: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentMatch {
    pub pairs: Vec<VerifiedPair>,
    pub unmatched: Vec<UnmatchedProblem>,
    pub candidates: Vec<CandidateSolution>,
    pub verifications: Vec<VerificationRecord>,
    pub notes: Vec<AuditNote>,
}

fn truncate_chars(text: &str, cap: usize) -> &str {
    match text.char_indices().nth(cap) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

struct ProblemOutcome {
    pair: Option<VerifiedPair>,
    unmatched: Option<UnmatchedProblem>,
    candidates: Vec<CandidateSolution>,
    verifications: Vec<VerificationRecord>,
    notes: Vec<AuditNote>,
}

/// Matches one document's kept problems against its kept solutions.
///
/// Candidates are verified in rank order and the first accepted one wins;
/// verification stops there. A solution may pair with several problems.
/// Provider or parse failures count as rejections with an audit note.
pub fn match_document(ctx: &MatchContext<'_>, problems: &[ExtractedItem], solutions: &[ExtractedItem]) -> DocumentMatch {
    let mut notes = Vec::new();
    let index = SolutionIndex::build(solutions);
    let solution_body: HashMap<&str, &str> = solutions.iter().map(|s| (s.item_id.as_str(), s.body.as_str())).collect();

    let embed = |item: &ExtractedItem| ctx.embedder.embed(truncate_chars(&item.body, ctx.config.embed_char_cap));
    let solution_vecs: Vec<(String, EmbeddingVector)> = if ctx.config.semantic {
        let results: Vec<_> = solutions.par_iter().map(|s| (s.item_id.clone(), embed(s))).collect();
        results
            .into_iter()
            .filter_map(|(id, r)| match r {
                Ok(v) => Some((id, v)),
                Err(e) => {
                    notes.push(AuditNote::new("match", id, format!("embedding failed: {e}")));
                    None
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let outcomes: Vec<ProblemOutcome> = problems
        .par_iter()
        .map(|problem| {
            let mut notes = Vec::new();
            let numerical = if ctx.config.numerical { numerical_candidates(problem, &index) } else { Vec::new() };
            let semantic = if ctx.config.semantic && !solution_vecs.is_empty() {
                match embed(problem) {
                    Ok(v) => semantic_candidates(&problem.item_id, &v, &solution_vecs, ctx.config.k_semantic),
                    Err(e) => {
                        notes.push(AuditNote::new("match", problem.item_id.clone(), format!("embedding failed: {e}")));
                        Vec::new()
                    }
                }
            } else {
                Vec::new()
            };
            let candidates = assemble_candidates(&numerical, &semantic, ctx.config.candidate_limit);
            let mut verifications = Vec::new();
            let mut pair = None;
            for c in &candidates {
                let body = solution_body[c.solution_id.as_str()];
                let request = ChatRequest::new(ctx.verify_model, build_verification_prompt(&problem.body, body));
                let (verdict, response) =
                    match ctx.gateway.complete_parsed(&request, prompts::REASK_VERDICT, parse_verification) {
                        Ok(Reask::Parsed { value, response, .. }) => (Some(value), response),
                        Ok(Reask::Unparsed { error, .. }) => {
                            notes.push(AuditNote::new(
                                "match",
                                format!("{}->{}", problem.item_id, c.solution_id),
                                format!("rejected, unparseable verdict: {error}"),
                            ));
                            (None, String::new())
                        }
                        Err(e) => {
                            notes.push(AuditNote::new(
                                "match",
                                format!("{}->{}", problem.item_id, c.solution_id),
                                format!("rejected, provider: {e}"),
                            ));
                            (None, String::new())
                        }
                    };
                verifications.push(VerificationRecord {
                    problem_id: problem.item_id.clone(),
                    solution_id: c.solution_id.clone(),
                    rank: c.rank,
                    pathway: c.pathway,
                    verdict,
                });
                if verdict == Some(true) {
                    pair = Some(VerifiedPair {
                        problem_id: problem.item_id.clone(),
                        solution_id: c.solution_id.clone(),
                        verdict_response: response,
                        pathway: c.pathway,
                        candidate_rank: c.rank,
                        doc_id: problem.doc_id.clone(),
                    });
                    break;
                }
            }
            let unmatched = pair.is_none().then(|| UnmatchedProblem {
                problem_id: problem.item_id.clone(),
                doc_id: problem.doc_id.clone(),
                candidates_considered: candidates.len(),
            });
            ProblemOutcome { pair, unmatched, candidates, verifications, notes }
        })
        .collect();

    let mut out = DocumentMatch { notes, ..Default::default() };
    for o in outcomes {
        out.pairs.extend(o.pair);
        out.unmatched.extend(o.unmatched);
        out.candidates.extend(o.candidates);
        out.verifications.extend(o.verifications);
        out.notes.extend(o.notes);
    }
    out
}
