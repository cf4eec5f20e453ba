#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use pairminer::fixtures::{generate, AnswerKeyEntry, BookSpec, FixtureSpec, GeneratedFixture, Layout, TextOverlap};
use pairminer::pipeline::{Config, LoadedConfig, PairRecord, Pipeline};
use pairminer::provider::{HashedBagOfWords, MockScript, ScriptedProvider};

pub fn book(layout: Layout, chapters: usize, per: usize, coverage: f64) -> BookSpec {
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

pub fn three_book_spec() -> FixtureSpec {
    let mut spec = FixtureSpec::single(2024, book(Layout::Inline, 2, 8, 0.9));
    spec.books.push(book(Layout::EndOfChapter, 3, 6, 0.9));
    spec.books.push(book(Layout::SeparateManual, 2, 7, 1.0));
    spec
}

pub struct Harness {
    pub fixture: GeneratedFixture,
    pub mock: Arc<ScriptedProvider>,
    pub pipeline: Pipeline,
}

pub fn loaded(fixture: &GeneratedFixture) -> LoadedConfig {
    Config::load(&fixture.config).expect("fixture config loads")
}

pub fn open_with(fixture: GeneratedFixture, loaded: LoadedConfig) -> Harness {
    let script = MockScript::load(&fixture.mock_script).expect("script loads");
    let mock = Arc::new(ScriptedProvider::new(script));
    let embed = Arc::new(HashedBagOfWords::new(loaded.config.embedding.dimension, loaded.config.embedding.seed));
    let pipeline = Pipeline::with_backends(loaded, mock.clone(), embed).expect("pipeline opens");
    Harness { fixture, mock, pipeline }
}

pub fn harness(spec: &FixtureSpec, dir: &Path) -> Harness {
    let fixture = generate(spec, dir).expect("fixture generates");
    let l = loaded(&fixture);
    open_with(fixture, l)
}

pub fn dataset(h: &Harness) -> Vec<PairRecord> {
    pairminer::jsonl::read_jsonl(&h.pipeline.dataset_path()).expect("dataset reads")
}

pub type PairKey = (String, String, String);

pub fn key_set(key: &[AnswerKeyEntry]) -> BTreeSet<PairKey> {
    key.iter().map(|e| (e.doc_id.clone(), e.problem.clone(), e.solution.clone())).collect()
}

pub fn record_set(rows: &[PairRecord]) -> BTreeSet<PairKey> {
    rows.iter().map(|r| (r.doc_id.clone(), r.problem.clone(), r.solution.clone())).collect()
}

/// (precision, recall) of emitted pairs against `truth`.
pub fn precision_recall(found: &BTreeSet<PairKey>, truth: &BTreeSet<PairKey>) -> (f64, f64) {
    let hit = found.intersection(truth).count() as f64;
    let p = if found.is_empty() { 1.0 } else { hit / found.len() as f64 };
    let r = if truth.is_empty() { 1.0 } else { hit / truth.len() as f64 };
    (p, r)
}
