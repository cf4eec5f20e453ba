//! Stage list and the per-run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::jsonl::write_atomic;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Retrieve,
    FilterDocs,
    Render,
    Transcribe,
    Segment,
    Extract,
    FilterItems,
    Match,
    Collect,
    Judge,
    Emit,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Retrieve,
        Stage::FilterDocs,
        Stage::Render,
        Stage::Transcribe,
        Stage::Segment,
        Stage::Extract,
        Stage::FilterItems,
        Stage::Match,
        Stage::Collect,
        Stage::Judge,
        Stage::Emit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Retrieve => "retrieve",
            Stage::FilterDocs => "filter-docs",
            Stage::Render => "render",
            Stage::Transcribe => "transcribe",
            Stage::Segment => "segment",
            Stage::Extract => "extract",
            Stage::FilterItems => "filter-items",
            Stage::Match => "match",
            Stage::Collect => "collect",
            Stage::Judge => "judge",
            Stage::Emit => "emit",
        }
    }

    pub fn index(self) -> usize {
        Stage::ALL.iter().position(|s| *s == self).expect("listed")
    }

    pub fn previous(self) -> Option<Stage> {
        self.index().checked_sub(1).map(|i| Stage::ALL[i])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s || st.name().replace('-', "_") == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                format!("unknown stage `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// Units entering a stage, units passed on, and units dropped by reason.
/// `extra` holds secondary tallies such as pages or candidates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub inputs: u64,
    pub kept: u64,
    pub dropped: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, u64>,
}

impl StageCounts {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    pub fn conserved(&self) -> bool {
        self.inputs == self.kept + self.dropped_total()
    }

    pub fn drop(&mut self, reason: &str, n: u64) {
        if n > 0 {
            *self.dropped.entry(reason.to_string()).or_default() += n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<StageCounts>,
    /// Paths relative to the run directory.
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageRecord {
    fn pending(stage: Stage) -> Self {
        Self { stage, status: StageStatus::Pending, counts: None, outputs: Vec::new(), started_at: None, finished_at: None, error: None }
    }

    pub fn reset(&mut self) {
        *self = Self::pending(self.stage);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    /// Absolute path of the config the run was started with.
    pub config_path: String,
    pub stages: Vec<StageRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(run_id: &str, config_digest: &str, config_path: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            config_digest: config_digest.to_string(),
            config_path: config_path.to_string(),
            stages: Stage::ALL.into_iter().map(StageRecord::pending).collect(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self, PipelineError> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Io { path: path.clone(), source: e })?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Reconciliation(format!("{}: unreadable manifest: {e}", path.display())))?;
        let order: Vec<Stage> = manifest.stages.iter().map(|r| r.stage).collect();
        if order != Stage::ALL {
            return Err(PipelineError::Reconciliation(format!("{}: stages out of pipeline order", path.display())));
        }
        Ok(manifest)
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), PipelineError> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes()).map_err(|e| PipelineError::Io { path, source: e })
    }

    pub fn record(&self, stage: Stage) -> &StageRecord {
        &self.stages[stage.index()]
    }

    pub fn record_mut(&mut self, stage: Stage) -> &mut StageRecord {
        &mut self.stages[stage.index()]
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.record(stage).status == StageStatus::Done
    }

    pub fn first_incomplete(&self) -> Option<Stage> {
        self.stages.iter().find(|r| r.status != StageStatus::Done).map(|r| r.stage)
    }

    /// Marks `stage` and everything after it pending.
    pub fn invalidate_from(&mut self, stage: Stage) {
        for record in &mut self.stages[stage.index()..] {
            record.reset();
        }
    }
}
