mod common;

use common::*;
use pairminer::pipeline::{RunOptions, Stage, StageStatus};

#[test]
fn three_books_recover_the_answer_key() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(&three_book_spec(), dir.path());
    let manifest = h.pipeline.run(&RunOptions::default()).unwrap();
    assert!(manifest.stages.iter().all(|r| r.status == StageStatus::Done));
    let rows = dataset(&h);
    let (p, r) = precision_recall(&record_set(&rows), &key_set(&h.fixture.answer_key));
    let report = h.pipeline.report().unwrap();
    println!("{report}");
    assert_eq!((p, r), (1.0, 1.0));
    assert!(manifest.is_done(Stage::Emit));
}
