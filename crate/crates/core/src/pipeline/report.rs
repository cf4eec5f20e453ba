//! Funnel report rebuilt from stage outputs and reconciled with the
//! manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::counts::recount;
use super::manifest::{RunManifest, Stage, StageCounts, StageStatus};
use super::stages::drop_histogram;
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub status: StageStatus,
    pub counts: Option<StageCounts>,
}

/// Counts at each stage boundary; `None` where the stage is not done.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub run_id: String,
    pub documents_retrieved: Option<u64>,
    pub documents_filtered: Option<u64>,
    pub pages: Option<u64>,
    pub chunks: Option<u64>,
    pub items_extracted: Option<u64>,
    pub items_kept: Option<u64>,
    pub problems: Option<u64>,
    pub solutions: Option<u64>,
    pub candidates: Option<u64>,
    pub verified_pairs: Option<u64>,
    pub model_solutions: Option<u64>,
    pub judged_correct: Option<u64>,
    pub dataset_records: Option<u64>,
    pub drop_reasons: BTreeMap<String, u64>,
    pub stages: Vec<StageSummary>,
}

/// Recounts every done stage from its files. Errors when a file is
/// missing or unreadable, when a recount differs from the manifest, or
/// when a stage does not conserve its inputs.
pub fn funnel_report(run_dir: &Path) -> Result<FunnelReport, PipelineError> {
    let manifest = RunManifest::load(run_dir)?;
    let mut done: Vec<(Stage, StageCounts)> = Vec::new();
    let mut stages = Vec::new();
    for record in &manifest.stages {
        let counts = if record.status == StageStatus::Done {
            let fresh = recount(run_dir, record.stage)
                .map_err(|e| PipelineError::Reconciliation(format!("{}: {e}", record.stage)))?;
            if record.counts.as_ref() != Some(&fresh) {
                return Err(PipelineError::Reconciliation(format!(
                    "{}: outputs recount to {:?}, manifest records {:?}",
                    record.stage, fresh, record.counts
                )));
            }
            if !fresh.conserved() {
                return Err(PipelineError::Reconciliation(format!(
                    "{}: {} inputs but {} kept + {} dropped",
                    record.stage,
                    fresh.inputs,
                    fresh.kept,
                    fresh.dropped_total()
                )));
            }
            done.push((record.stage, fresh.clone()));
            Some(fresh)
        } else {
            None
        };
        stages.push(StageSummary { stage: record.stage, status: record.status, counts });
    }
    let get = |stage: Stage| stages[stage.index()].counts.as_ref();
    let kept = |stage: Stage| get(stage).map(|c| c.kept);
    let extra = |stage: Stage, key: &str| get(stage).map(|c| c.extra.get(key).copied().unwrap_or(0));
    Ok(FunnelReport {
        run_id: manifest.run_id.clone(),
        documents_retrieved: kept(Stage::Retrieve),
        documents_filtered: kept(Stage::FilterDocs),
        pages: extra(Stage::Render, "pages"),
        chunks: extra(Stage::Segment, "chunks"),
        items_extracted: extra(Stage::Extract, "items"),
        items_kept: kept(Stage::FilterItems),
        problems: get(Stage::Match).map(|c| c.inputs),
        solutions: extra(Stage::Match, "solutions"),
        candidates: extra(Stage::Match, "candidates"),
        verified_pairs: kept(Stage::Match),
        model_solutions: kept(Stage::Collect),
        judged_correct: extra(Stage::Judge, "judged_correct"),
        dataset_records: kept(Stage::Emit),
        drop_reasons: drop_histogram(&done),
        stages,
    })
}

fn show(n: Option<u64>) -> String {
    n.map_or_else(|| "pending".to_string(), |n| n.to_string())
}

impl fmt::Display for FunnelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "run {}", self.run_id)?;
        let rows = [
            ("documents retrieved", self.documents_retrieved),
            ("documents filtered", self.documents_filtered),
            ("pages", self.pages),
            ("chunks", self.chunks),
            ("items extracted", self.items_extracted),
            ("items kept", self.items_kept),
            ("problems", self.problems),
            ("solutions", self.solutions),
            ("candidates", self.candidates),
            ("verified pairs", self.verified_pairs),
            ("model solutions", self.model_solutions),
            ("judged correct", self.judged_correct),
            ("dataset records", self.dataset_records),
        ];
        for (label, n) in rows {
            writeln!(f, "  {label:<20} {}", show(n))?;
        }
        if !self.drop_reasons.is_empty() {
            writeln!(f, "drops")?;
            for (reason, n) in &self.drop_reasons {
                writeln!(f, "  {reason:<34} {n}")?;
            }
        }
        Ok(())
    }
}
