use std::path::Path;
use std::process::{Command, Output};

fn pairminer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairminer")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn fixture(dir: &Path) -> String {
    let spec = dir.join("spec.toml");
    std::fs::write(
        &spec,
        "seed = 11\n[[books]]\nlayout = \"inline\"\nchapters = 2\nproblems_per_chapter = 4\nsolution_coverage = 0.75\n",
    )
    .unwrap();
    let out = dir.join("fx");
    let o = pairminer(&["fixtures", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("config.toml").to_string_lossy().into_owned()
}

#[test]
fn run_report_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let run_dir = dir.path().join("fx/work/fixture");
    let run_dir = run_dir.to_str().unwrap();

    let o = pairminer(&["match", "--config", &config]);
    assert_eq!(code(&o), 2, "match before its inputs exist is a stage failure");

    let o = pairminer(&["run", "--config", &config]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verified pairs       6"));

    let o = pairminer(&["report", "--run", run_dir, "--json"]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["verified_pairs"], 6);
    assert_eq!(report["problems"], 8);

    let o = pairminer(&["resume", "--run", run_dir]);
    assert_eq!(code(&o), 0);

    let text = std::fs::read_to_string(&config).unwrap().replace("max_tokens = 400", "max_tokens = 350");
    std::fs::write(&config, text).unwrap();
    let o = pairminer(&["resume", "--run", run_dir]);
    assert_eq!(code(&o), 1, "config drift");
    let o = pairminer(&["resume", "--run", run_dir, "--force-from", "segment"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::remove_file(dir.path().join("fx/work/fixture/stages/filter-items/outcomes.jsonl")).unwrap();
    let o = pairminer(&["report", "--run", run_dir]);
    assert_eq!(code(&o), 3, "tampered outputs");
}

#[test]
fn per_stage_commands_print_records() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let catalog = dir.path().join("fx/catalog.jsonl");
    let o = pairminer(&["retrieve", "--catalog", catalog.to_str().unwrap(), "--keywords", "problem,question"]);
    assert_eq!(code(&o), 0);
    let hits = String::from_utf8_lossy(&o.stdout).lines().count();
    assert_eq!(hits, 2, "the book and the poetry distractor");

    let candidates = dir.path().join("candidates.jsonl");
    std::fs::write(&candidates, &o.stdout).unwrap();
    let o = pairminer(&["filter-docs", "--in", candidates.to_str().unwrap(), "--config", &config]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let decisions: Vec<serde_json::Value> =
        String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(decisions.iter().filter(|d| d["accepted"] == true).count(), 1);

    let o = pairminer(&["run", "--config", &config, "--stop-after", "filter-items"]);
    assert_eq!(code(&o), 0);
    let o = pairminer(&["match", "--config", &config, "--doc", "book-01", "--candidate-limit", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 6);
    let o = pairminer(&["collect", "--config", &config, "--models", "o1-mini"]);
    assert_eq!(code(&o), 2, "collect needs the match stage done");
}

#[test]
fn invalid_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[run]\nid = \"x\"\n").unwrap();
    assert_eq!(code(&pairminer(&["run", "--config", bad.to_str().unwrap()])), 1);
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "seed = 1\nbooks = []\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&pairminer(&["fixtures", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()])), 1);
}
