//! Synthetic fixture textbooks with planted problems and solutions, plus
//! the scripted provider transcript that answers every call the pipeline
//! makes on them.
//!
//! Generation is a pure function of the [`FixtureSpec`]. Each problem
//! carries four nonce words that its solution repeats (or, under
//! misleading overlap, that other solutions borrow), so the seeded hashed
//! embedder ranks partners by construction. The generator checks those
//! rankings by brute force before writing anything.

pub mod png;
mod text;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocFormat, DocumentMeta};
use crate::jsonl::{sha256_hex, to_jsonl, write_atomic};
use crate::pipeline::{Config, CorpusSection, EmbeddingSection, ProviderKind, ProviderSection, RespondSection, RetrySection, RunSection, SegmentSection};
use crate::provider::{cosine, Compose, ComposeItem, Embedder, EmbeddingVector, HashedBagOfWords, Matcher, MockReply, MockScript};
use crate::segment::index_text;

use text::{NonceWords, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Each solution directly follows its problem.
    Inline,
    /// Solutions grouped after each chapter's problems.
    EndOfChapter,
    /// All solutions in a closing solutions-manual part.
    SeparateManual,
    /// Like a separate manual, but solutions carry unrelated labels.
    BrokenNumbering,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextOverlap {
    /// A solution repeats its problem's signature words.
    #[default]
    Aligned,
    /// A solution shares no signature words with its problem but borrows
    /// those of the next five problems, so similarity points elsewhere.
    Misleading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BookSpec {
    pub layout: Layout,
    pub chapters: usize,
    pub problems_per_chapter: usize,
    #[serde(default = "one")]
    pub solution_coverage: f64,
    #[serde(default)]
    pub text_overlap: TextOverlap,
    /// Solutions whose problem is not printed in the book.
    #[serde(default)]
    pub orphan_solutions: usize,
    /// Problems the quality screen must drop (figure references).
    #[serde(default)]
    pub defective_problems: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self { dimension: 256, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub seed: u64,
    pub books: Vec<BookSpec>,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
    /// Adds a catalog entry with no keyword and one the filter rejects.
    #[serde(default = "yes")]
    pub distractors: bool,
    #[serde(default = "default_lines_per_page")]
    pub lines_per_page: usize,
    #[serde(default = "default_models")]
    pub respond_models: Vec<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn yes() -> bool {
    true
}

fn default_lines_per_page() -> usize {
    10
}

fn default_models() -> Vec<String> {
    vec!["o1-mini".into(), "qwq-32b-preview".into()]
}

fn default_max_tokens() -> usize {
    400
}

impl FixtureSpec {
    pub fn single(seed: u64, book: BookSpec) -> Self {
        Self {
            seed,
            books: vec![book],
            embedding: EmbeddingSpec::default(),
            distractors: true,
            lines_per_page: default_lines_per_page(),
            respond_models: default_models(),
            max_tokens: default_max_tokens(),
        }
    }

    /// Reads a spec from TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|e| FixtureError::Io { path: path.to_path_buf(), source: e })?;
        let spec: FixtureSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| FixtureError::Invalid(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| FixtureError::Invalid(e.message().to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: String| Err(FixtureError::Invalid(m));
        if self.books.is_empty() {
            return bad("spec has no books".into());
        }
        if self.lines_per_page < 2 {
            return bad("lines_per_page must be at least 2".into());
        }
        if self.embedding.dimension < 16 {
            return bad("embedding.dimension must be at least 16".into());
        }
        if self.max_tokens < crate::segment::MIN_MAX_TOKENS {
            return bad(format!("max_tokens must be at least {}", crate::segment::MIN_MAX_TOKENS));
        }
        for (i, b) in self.books.iter().enumerate() {
            if b.chapters == 0 || b.problems_per_chapter == 0 {
                return bad(format!("book {i}: chapters and problems_per_chapter must be positive"));
            }
            if !(0.0..=1.0).contains(&b.solution_coverage) {
                return bad(format!("book {i}: solution_coverage {} is outside [0, 1]", b.solution_coverage));
            }
            if b.text_overlap == TextOverlap::Misleading {
                if b.solution_coverage < 1.0 {
                    return bad(format!("book {i}: misleading overlap needs solution_coverage 1.0"));
                }
                if b.chapters * b.problems_per_chapter <= DECOYS {
                    return bad(format!("book {i}: misleading overlap needs more than {DECOYS} problems"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture spec: {0}")]
    Invalid(String),
    #[error("could not satisfy similarity constraints: {0}")]
    Unsatisfiable(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One planted pair the pipeline should recover.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKeyEntry {
    pub doc_id: String,
    pub layout: Layout,
    pub problem_number: String,
    pub solution_number: String,
    pub problem: String,
    pub solution: String,
}

/// Ground-truth counts for funnel checks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub catalog_documents: u64,
    pub retrieved_documents: u64,
    pub accepted_documents: u64,
    pub pages: u64,
    pub blank_pages: u64,
    /// Problems that should survive the quality screen.
    pub problems: u64,
    pub defective_problems: u64,
    pub solutions: u64,
    pub pairs: u64,
}

#[derive(Debug, Clone)]
pub struct GeneratedFixture {
    pub root: PathBuf,
    pub catalog: PathBuf,
    pub mock_script: PathBuf,
    pub answer_key_path: PathBuf,
    pub config: PathBuf,
    pub answer_key: Vec<AnswerKeyEntry>,
    pub summary: FixtureSummary,
}

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const SCRIPT_FILE: &str = "mock_script.json";
pub const ANSWER_KEY_FILE: &str = "answer_key.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Solutions that borrow a problem's words under misleading overlap.
const DECOYS: usize = 5;
/// Under misleading overlap the true partner must rank below this many
/// other solutions, which exceeds the default candidate limit.
const MISLEADING_MIN_OUTRANKED: usize = 4;
const MAX_REDRAW_ROUNDS: usize = 500;

const EXTRACT_NEEDLE: &str = "I am a university professor preparing an exercise problem bank.";
const VERIFY_NEEDLE: &str = "Please help me determine if the following problem and solution constitute";
const SOLVE_NEEDLE: &str = "Solve the following problem.";

struct Problem {
    chapter: usize,
    number: usize,
    sig: Signature,
    variant: usize,
    magnitude: u32,
    answer: String,
    covered: bool,
}

impl Problem {
    fn body(&self) -> String {
        text::problem_lines(&self.sig, self.variant, self.magnitude).join("\n")
    }
}

struct Orphan {
    chapter: usize,
    number: usize,
    sig: Signature,
    answer: String,
}

/// An extracted item as the oracle extraction model reports it.
struct Planted {
    kind_key: (&'static str, &'static str),
    identifier: String,
    body: String,
}

impl Planted {
    fn problem(identifier: String, body: String) -> Self {
        Self { kind_key: ("problem number", "problem"), identifier, body }
    }

    fn solution(identifier: String, body: String) -> Self {
        Self { kind_key: ("solution number", "solution"), identifier, body }
    }

    fn compose_item(&self) -> ComposeItem {
        let needle = self.body.split('\n').next().unwrap_or(&self.body).to_string();
        let object = serde_json::json!({ self.kind_key.0: self.identifier, self.kind_key.1: self.body });
        ComposeItem { needle, object }
    }
}

struct Line {
    text: String,
    boundary: bool,
}

impl Line {
    fn unit(text: impl Into<String>) -> Self {
        Self { text: text.into(), boundary: true }
    }

    fn cont(text: impl Into<String>) -> Self {
        Self { text: text.into(), boundary: false }
    }
}

struct BookPlan {
    doc_id: String,
    title: String,
    author: String,
    layout: Layout,
    problems: Vec<Problem>,
    orphans: Vec<Orphan>,
    defective: Vec<(usize, usize, String)>,
    solution_bodies: Vec<String>,
}

fn embed(embedder: &Embedder, text: &str) -> EmbeddingVector {
    embedder.embed(text).expect("hashed embedder accepts non-empty text")
}

/// Indices of problems whose similarity ranking breaks the book's
/// overlap rule.
fn ranking_violations(plan: &BookPlan, overlap: TextOverlap, embedder: &Embedder) -> Vec<usize> {
    let solutions: Vec<EmbeddingVector> = plan.solution_bodies.iter().map(|s| embed(embedder, s)).collect();
    let mut partner_of = Vec::new();
    let mut next = 0;
    for p in &plan.problems {
        partner_of.push(p.covered.then(|| {
            next += 1;
            next - 1
        }));
    }
    let mut bad = Vec::new();
    for (i, p) in plan.problems.iter().enumerate() {
        let Some(partner) = partner_of[i] else { continue };
        let q = embed(embedder, &p.body());
        let scores: Vec<f64> = solutions.iter().map(|s| cosine(&q, s)).collect();
        let own = scores[partner];
        let higher = scores.iter().enumerate().filter(|(j, s)| *j != partner && **s >= own).count();
        let ok = match overlap {
            TextOverlap::Aligned => higher == 0,
            TextOverlap::Misleading => {
                scores.iter().enumerate().filter(|(j, s)| *j != partner && **s > own).count() >= MISLEADING_MIN_OUTRANKED
            }
        };
        if !ok {
            bad.push(i);
        }
    }
    bad
}

fn solution_bodies(problems: &[Problem], orphans: &[Orphan], overlap: TextOverlap) -> Vec<String> {
    let n = problems.len();
    let mut out: Vec<String> = problems
        .iter()
        .enumerate()
        .filter(|(_, p)| p.covered)
        .map(|(i, p)| match overlap {
            TextOverlap::Aligned => text::solution_text(&p.sig, &p.answer),
            TextOverlap::Misleading => {
                let borrowed: Vec<&Signature> = (1..=DECOYS).map(|d| &problems[(i + d) % n].sig).collect();
                text::misleading_solution_text(&borrowed, &p.answer)
            }
        })
        .collect();
    out.extend(orphans.iter().map(|o| text::solution_text(&o.sig, &o.answer)));
    out
}

const TITLE_KINDS: &[&str] = &["Problems in", "Questions in", "Problems and Solutions in", "Solved Problems in"];

fn plan_book(
    index: usize,
    spec: &BookSpec,
    rng: &mut ChaCha8Rng,
    words: &mut NonceWords,
    embedder: &Embedder,
) -> Result<BookPlan, FixtureError> {
    let doc_id = format!("book-{:02}", index + 1);
    let topic = text::TOPICS[index % text::TOPICS.len()];
    let title = format!("{} {topic}, Volume {}", TITLE_KINDS[index % TITLE_KINDS.len()], index + 1);
    let author = text::person_name(rng, words);

    let total = spec.chapters * spec.problems_per_chapter;
    let covered_count = (spec.solution_coverage * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let covered: HashSet<usize> = order.into_iter().take(covered_count).collect();

    let mut problems = Vec::with_capacity(total);
    for c in 1..=spec.chapters {
        for n in 1..=spec.problems_per_chapter {
            let i = problems.len();
            problems.push(Problem {
                chapter: c,
                number: n,
                sig: Signature::draw(words, rng),
                variant: i,
                magnitude: 10 + (text::answer_value(rng) as u32 % 900),
                answer: format!("{:.2}", text::answer_value(rng)),
                covered: covered.contains(&i),
            });
        }
    }
    let orphans: Vec<Orphan> = (0..spec.orphan_solutions)
        .map(|k| Orphan {
            chapter: k % spec.chapters + 1,
            number: spec.problems_per_chapter + 1 + k / spec.chapters,
            sig: Signature::draw(words, rng),
            answer: format!("{:.2}", text::answer_value(rng)),
        })
        .collect();
    let defective = (0..spec.defective_problems)
        .map(|k| {
            let chapter = k % spec.chapters + 1;
            let number = 90 + k / spec.chapters;
            (chapter, number, text::defective_problem_text(&Signature::draw(words, rng), chapter, number))
        })
        .collect();

    let mut plan = BookPlan {
        doc_id,
        title,
        author,
        layout: spec.layout,
        solution_bodies: solution_bodies(&problems, &orphans, spec.text_overlap),
        problems,
        orphans,
        defective,
    };
    for _ in 0..MAX_REDRAW_ROUNDS {
        let bad = ranking_violations(&plan, spec.text_overlap, embedder);
        if bad.is_empty() {
            return Ok(plan);
        }
        for i in bad {
            plan.problems[i].sig = Signature::draw(words, rng);
        }
        plan.solution_bodies = solution_bodies(&plan.problems, &plan.orphans, spec.text_overlap);
    }
    Err(FixtureError::Unsatisfiable(format!(
        "{}: similarity ranking still violated after {MAX_REDRAW_ROUNDS} redraws; raise embedding.dimension",
        plan.doc_id
    )))
}

/// Book lines, items as the extractor reports them, and planted pairs.
fn lay_out(plan: &BookPlan, rng: &mut ChaCha8Rng) -> (Vec<Line>, Vec<Planted>, Vec<AnswerKeyEntry>) {
    let mut lines = Vec::new();
    let mut items = Vec::new();
    let mut key = Vec::new();
    let mut solution_iter = plan.solution_bodies.iter();
    let mut solution_of: Vec<Option<String>> = Vec::new();
    for p in &plan.problems {
        solution_of.push(p.covered.then(|| solution_iter.next().expect("one body per covered problem").clone()));
    }
    let orphan_bodies: Vec<String> = solution_iter.cloned().collect();

    let problem_label = |p: &Problem| match plan.layout {
        Layout::Inline => (format!("**Problem {}.{}**", p.chapter, p.number), format!("{}.{}", p.chapter, p.number)),
        Layout::EndOfChapter => (format!("**{}-{}.**", p.chapter, p.number), format!("{}-{}", p.chapter, p.number)),
        Layout::SeparateManual => (format!("Exercise {}.{}.", p.chapter, p.number), format!("Exercise {}.{}", p.chapter, p.number)),
        Layout::BrokenNumbering => (format!("**Problem {}.{}.**", p.chapter, p.number), format!("{}.{}", p.chapter, p.number)),
    };
    let solution_label = |chapter: usize, number: usize| match plan.layout {
        Layout::Inline => (format!("*Solution {chapter}.{number}.*"), format!("{chapter}.{number}")),
        _ => (format!("**{chapter}.{number}**"), format!("{chapter}.{number}")),
    };

    let mut solutions_for_manual: Vec<(usize, String, String, String)> = Vec::new();
    for chapter in 1..=plan.problems.iter().map(|p| p.chapter).max().unwrap_or(0) {
        lines.push(Line::unit(format!("## Chapter {chapter}")));
        lines.push(Line::cont(format!(
            "The exercises below review the material of chapter {chapter} and may be attempted in any order."
        )));
        let mut chapter_solutions: Vec<(String, String, String)> = Vec::new();
        for (i, p) in plan.problems.iter().enumerate().filter(|(_, p)| p.chapter == chapter) {
            let (label, ident) = problem_label(p);
            let body = p.body();
            let mut body_lines = body.split('\n');
            lines.push(Line::unit(format!("{label} {}", body_lines.next().unwrap_or_default())));
            lines.extend(body_lines.map(Line::cont));
            items.push(Planted::problem(ident.clone(), body.clone()));
            if let Some(sol) = &solution_of[i] {
                let (slabel, sident) = solution_label(p.chapter, p.number);
                key.push(AnswerKeyEntry {
                    doc_id: plan.doc_id.clone(),
                    layout: plan.layout,
                    problem_number: ident,
                    solution_number: sident.clone(),
                    problem: body,
                    solution: sol.clone(),
                });
                if plan.layout == Layout::Inline {
                    lines.push(Line::cont(format!("{slabel} {sol}")));
                    items.push(Planted::solution(sident, sol.clone()));
                } else {
                    chapter_solutions.push((slabel, sident, sol.clone()));
                }
            }
        }
        for (c, n, body) in &plan.defective {
            if *c == chapter {
                let (label, ident) = problem_label(&Problem {
                    chapter: *c,
                    number: *n,
                    sig: Signature { a: String::new(), b: String::new(), c: String::new(), d: String::new() },
                    variant: 0,
                    magnitude: 0,
                    answer: String::new(),
                    covered: false,
                });
                lines.push(Line::unit(format!("{label} {body}")));
                items.push(Planted::problem(ident, body.clone()));
            }
        }
        for (o, body) in plan.orphans.iter().zip(&orphan_bodies) {
            if o.chapter == chapter {
                let (slabel, sident) = solution_label(o.chapter, o.number);
                match plan.layout {
                    Layout::Inline => {
                        lines.push(Line::unit(format!("{slabel} {body}")));
                        items.push(Planted::solution(sident, body.clone()));
                    }
                    _ => chapter_solutions.push((slabel, sident, body.clone())),
                }
            }
        }
        if plan.layout == Layout::EndOfChapter {
            lines.push(Line::unit(format!("### Solutions to Chapter {chapter}")));
            for (label, ident, body) in chapter_solutions.drain(..) {
                lines.push(Line::unit(format!("{label} {body}")));
                items.push(Planted::solution(ident, body));
            }
        }
        for (label, ident, body) in chapter_solutions {
            solutions_for_manual.push((chapter, label, ident, body));
        }
    }
    match plan.layout {
        Layout::SeparateManual => {
            lines.push(Line::unit("# Solutions Manual"));
            let mut current = 0;
            for (chapter, label, ident, body) in solutions_for_manual {
                if chapter != current {
                    lines.push(Line::unit(format!("## Solutions for Chapter {chapter}")));
                    current = chapter;
                }
                lines.push(Line::unit(format!("{label} {body}")));
                items.push(Planted::solution(ident, body));
            }
        }
        Layout::BrokenNumbering => {
            lines.push(Line::unit("# Answers to Selected Problems"));
            let mut shuffled = solutions_for_manual;
            shuffled.shuffle(rng);
            for (k, (_, _, _, body)) in shuffled.into_iter().enumerate() {
                let ident = format!("A{}", 101 + k);
                if let Some(entry) = key.iter_mut().find(|e| e.solution == body) {
                    entry.solution_number = ident.clone();
                }
                lines.push(Line::unit(format!("**{ident}.** {body}")));
                items.push(Planted::solution(ident, body));
            }
        }
        Layout::Inline | Layout::EndOfChapter => {}
    }
    (lines, items, key)
}

fn paginate(lines: Vec<Line>, per_page: usize) -> Vec<(String, Vec<usize>)> {
    lines
        .chunks(per_page)
        .map(|page| {
            let text = page.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join("\n");
            let marks = page.iter().enumerate().filter(|(_, l)| l.boundary).map(|(i, _)| i).collect();
            (text, marks)
        })
        .collect()
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io { path: path.to_path_buf(), source }
}

fn boundary_reply(marks: &[usize]) -> String {
    let list = marks.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
    format!("Step 1: read the page. Step 2: mark headings and item starts.\n```json\n[{list}]\n```")
}

fn filter_reply(accept: bool) -> String {
    let verdict = if accept { "Yes" } else { "No" };
    format!("The title names the subject and the kind of book.\n[Determine Begin]{verdict}[Determine End]")
}

fn verdict_reply(valid: bool) -> String {
    let v = if valid { "True" } else { "False" };
    format!("Checked the statement against the worked answer.\n[Begin]{v}[End]")
}

fn model_reply(sig: &Signature, answer: &str) -> String {
    format!("Working from the {} {} setup step by step.\nThe final answer is {answer} units.", sig.a, sig.b)
}

/// Writes the corpus, catalog, mock script, answer key, summary and a
/// ready-to-run config under `out_dir`.
pub fn generate(spec: &FixtureSpec, out_dir: &Path) -> Result<GeneratedFixture, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words = NonceWords::new();
    let embedder = Embedder::new(Arc::new(HashedBagOfWords::new(spec.embedding.dimension, spec.embedding.seed)));

    let mut catalog: Vec<DocumentMeta> = Vec::new();
    let mut script = MockScript::default();
    let mut verify_rules = MockScript::default();
    let mut respond_rules = MockScript::default();
    let mut compose = Compose { preamble: "Listed every problem and solution in the text.".into(), items: Vec::new() };
    let mut answer_key = Vec::new();
    let mut summary = FixtureSummary::default();
    let mut seen_bodies = HashSet::new();

    let write_page = |doc_id: &str, index: usize, markdown: &str| -> Result<String, FixtureError> {
        let bytes = png::text_page_png(&format!("{doc_id}#{index}\n{markdown}"));
        let path = out_dir.join("books").join(doc_id).join(format!("page-{index:04}.png"));
        write_atomic(&path, &bytes).map_err(io(&path))?;
        Ok(sha256_hex(&bytes))
    };

    for (b, book) in spec.books.iter().enumerate() {
        let plan = plan_book(b, book, &mut rng, &mut words, &embedder)?;
        let (lines, items, key) = lay_out(&plan, &mut rng);
        for item in &items {
            if !seen_bodies.insert(item.body.clone()) {
                return Err(FixtureError::Unsatisfiable(format!("duplicate planted body in {}", plan.doc_id)));
            }
        }

        let mut pages = vec![(format!("# {}\n\n{}", plan.title, plan.author), vec![0]), (String::new(), Vec::new())];
        pages.extend(paginate(lines, spec.lines_per_page));
        for (index, (markdown, marks)) in pages.iter().enumerate() {
            let digest = write_page(&plan.doc_id, index, markdown)?;
            if markdown.is_empty() {
                summary.blank_pages += 1;
                script.push(Matcher::image(digest), MockReply::text("empty"));
            } else {
                script.push(Matcher::image(digest), MockReply::text(markdown.clone()));
                script.push(Matcher::contains([index_text(markdown)]), MockReply::text(boundary_reply(marks)));
            }
        }
        summary.pages += pages.len() as u64;

        compose.items.extend(items.iter().map(Planted::compose_item));
        for entry in &key {
            let needle = format!("Problem:\n---\n{}\n---\nSolution:\n---\n{}\n---", entry.problem, entry.solution);
            verify_rules.push(Matcher::contains([VERIFY_NEEDLE.to_string(), needle]), MockReply::text(verdict_reply(true)));
        }
        for (i, p) in plan.problems.iter().filter(|p| p.covered).enumerate() {
            let reference = &key.iter().find(|e| e.problem == p.body()).expect("covered problem is keyed").solution;
            for (m, model) in spec.respond_models.iter().enumerate() {
                let correct = !(m % 2 == 1 && i % 3 == 0);
                let answer = if correct { p.answer.clone() } else { format!("{:.2}", p.answer.parse::<f64>().unwrap_or(0.0) * 1.5) };
                let reply = model_reply(&p.sig, &answer);
                respond_rules.push(
                    Matcher::contains([SOLVE_NEEDLE.to_string(), p.body()]).for_model(model.clone()),
                    MockReply::text(reply.clone()),
                );
                let judged = format!("Reference solution:\n---\n{reference}\n---\nModel solution:\n---\n{reply}\n---");
                respond_rules.push(Matcher::contains([judged]), MockReply::text(verdict_reply(correct)));
            }
        }

        summary.problems += plan.problems.len() as u64;
        summary.defective_problems += plan.defective.len() as u64;
        summary.solutions += (key.len() + plan.orphans.len()) as u64;
        summary.pairs += key.len() as u64;
        summary.retrieved_documents += 1;
        summary.accepted_documents += 1;
        script.push(Matcher::contains([format!("**Title**: {}\n", plan.title)]), MockReply::text(filter_reply(true)));
        catalog.push(DocumentMeta {
            doc_id: plan.doc_id.clone(),
            title: plan.title,
            author: plan.author,
            format: DocFormat::Pdf,
            path: PathBuf::from("books").join(&plan.doc_id),
        });
        answer_key.extend(key);
    }

    if spec.distractors {
        for (doc_id, title, accepted_by_filter) in
            [("lecture-notes", "Lecture Notes on Organic Synthesis", None), ("poetry", "Problems in Medieval Poetry", Some(false))]
        {
            write_page(doc_id, 0, &format!("# {title}"))?;
            if let Some(accept) = accepted_by_filter {
                summary.retrieved_documents += 1;
                script.push(Matcher::contains([format!("**Title**: {title}\n")]), MockReply::text(filter_reply(accept)));
            }
            catalog.push(DocumentMeta {
                doc_id: doc_id.into(),
                title: title.into(),
                author: "Anonymous".into(),
                format: DocFormat::Pdf,
                path: PathBuf::from("books").join(doc_id),
            });
        }
    }
    summary.catalog_documents = catalog.len() as u64;

    script.push_compose(Matcher::contains([EXTRACT_NEEDLE]), compose);
    script.rules.extend(verify_rules.rules);
    script.push(Matcher::contains([VERIFY_NEEDLE]), MockReply::text(verdict_reply(false)));
    script.rules.extend(respond_rules.rules);

    let catalog_path = out_dir.join(CATALOG_FILE);
    write_atomic(&catalog_path, &to_jsonl(&catalog).expect("catalog serializes")).map_err(io(&catalog_path))?;
    let script_path = out_dir.join(SCRIPT_FILE);
    let mut script_text = serde_json::to_string_pretty(&script).expect("script serializes");
    script_text.push('\n');
    write_atomic(&script_path, script_text.as_bytes()).map_err(io(&script_path))?;
    let key_path = out_dir.join(ANSWER_KEY_FILE);
    write_atomic(&key_path, &to_jsonl(&answer_key).expect("key serializes")).map_err(io(&key_path))?;
    let summary_path = out_dir.join(SUMMARY_FILE);
    let summary_text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_atomic(&summary_path, summary_text.as_bytes()).map_err(io(&summary_path))?;
    let config_path = out_dir.join(CONFIG_FILE);
    write_atomic(&config_path, fixture_config(spec).to_toml().as_bytes()).map_err(io(&config_path))?;

    Ok(GeneratedFixture {
        root: out_dir.to_path_buf(),
        catalog: catalog_path,
        mock_script: script_path,
        answer_key_path: key_path,
        config: config_path,
        answer_key,
        summary,
    })
}

/// A config that runs the pipeline against the generated fixture.
pub fn fixture_config(spec: &FixtureSpec) -> Config {
    Config {
        run: RunSection { id: "fixture".into(), work_dir: PathBuf::from("work"), cache_dir: None },
        corpus: CorpusSection { catalog: PathBuf::from(CATALOG_FILE), keywords: vec!["problem".into(), "question".into()] },
        provider: ProviderSection {
            kind: ProviderKind::Mock,
            mock_script: Some(PathBuf::from(SCRIPT_FILE)),
            retry: RetrySection { base_ms: 0, cap_ms: 0, max_attempts: 3, jitter: false },
            ..ProviderSection::default()
        },
        embedding: EmbeddingSection { dimension: spec.embedding.dimension, seed: spec.embedding.seed, ..EmbeddingSection::default() },
        render: Default::default(),
        segment: SegmentSection { max_tokens: spec.max_tokens },
        extract: Default::default(),
        matching: Default::default(),
        respond: RespondSection { models: spec.respond_models.clone() },
    }
}

pub fn load_answer_key(path: &Path) -> Result<Vec<AnswerKeyEntry>, FixtureError> {
    crate::jsonl::read_jsonl(path).map_err(io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book(layout: Layout, chapters: usize, per: usize, coverage: f64) -> BookSpec {
        BookSpec {
            layout,
            chapters,
            problems_per_chapter: per,
            solution_coverage: coverage,
            text_overlap: TextOverlap::Aligned,
            orphan_solutions: 0,
            defective_problems: 0,
        }
    }

    fn tree_digest(root: &Path) -> String {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(dir).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push(p);
                }
            }
        }
        files.sort();
        let mut acc = String::new();
        for f in files {
            acc.push_str(&f.strip_prefix(root).unwrap().to_string_lossy());
            acc.push_str(&sha256_hex(&std::fs::read(&f).unwrap()));
        }
        sha256_hex(acc.as_bytes())
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = FixtureSpec::single(7, book(Layout::SeparateManual, 2, 4, 0.75));
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate(&spec, a.path()).unwrap();
        generate(&spec, b.path()).unwrap();
        assert_eq!(tree_digest(a.path()), tree_digest(b.path()));
        let c = tempfile::tempdir().unwrap();
        generate(&FixtureSpec { seed: 8, ..spec }, c.path()).unwrap();
        assert_ne!(tree_digest(a.path()), tree_digest(c.path()));
    }

    #[test]
    fn end_of_chapter_two_by_five_keys_ten_numeric_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let fx = generate(&FixtureSpec::single(1, book(Layout::EndOfChapter, 2, 5, 1.0)), dir.path()).unwrap();
        assert_eq!(fx.answer_key.len(), 10);
        for e in &fx.answer_key {
            let p = crate::matching::normalize_identifier(&e.problem_number).unwrap();
            let s = crate::matching::normalize_identifier(&e.solution_number).unwrap();
            assert_eq!(p, s, "{} vs {}", e.problem_number, e.solution_number);
        }
    }

    #[test]
    fn broken_numbering_is_only_semantically_recoverable() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec::single(3, book(Layout::BrokenNumbering, 3, 4, 1.0));
        let fx = generate(&spec, dir.path()).unwrap();
        let e = Embedder::new(Arc::new(HashedBagOfWords::new(256, 0)));
        let sols: Vec<EmbeddingVector> = fx.answer_key.iter().map(|k| e.embed(&k.solution).unwrap()).collect();
        for (i, k) in fx.answer_key.iter().enumerate() {
            let p = crate::matching::normalize_identifier(&k.problem_number).unwrap();
            let s = crate::matching::normalize_identifier(&k.solution_number).unwrap();
            assert!(fx.answer_key.iter().all(|o| crate::matching::normalize_identifier(&o.solution_number).unwrap() != p));
            assert_eq!(s.parts.len(), 1);
            let q = e.embed(&k.problem).unwrap();
            let scores: Vec<f64> = sols.iter().map(|v| cosine(&q, v)).collect();
            let best = (0..scores.len()).max_by(|a, b| scores[*a].total_cmp(&scores[*b])).unwrap();
            assert_eq!(best, i);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = FixtureSpec::single(1, book(Layout::Inline, 1, 2, 1.5));
        assert!(matches!(generate(&bad, dir.path()), Err(FixtureError::Invalid(_))));
        let mut mis = book(Layout::Inline, 1, 3, 1.0);
        mis.text_overlap = TextOverlap::Misleading;
        assert!(matches!(generate(&FixtureSpec::single(1, mis), dir.path()), Err(FixtureError::Invalid(_))));
    }
}
