//! Stage sequencing with a resumable on-disk manifest, funnel reporting
//! and dataset emission.
//!
//! A run lives in `<work_dir>/<run_id>/`: `manifest.json`, one directory
//! of line-delimited JSON per stage under `stages/`, and page images and
//! markdown under `work/<doc_id>/`. Stages read their inputs from the
//! previous stages' files, so any done prefix can be resumed from.

mod config;
mod counts;
mod dataset;
mod manifest;
mod report;
mod stages;

pub use config::{
    Config, CorpusSection, EmbeddingKind, EmbeddingSection, ExtractSection, LoadedConfig, ModelsSection, ProviderKind,
    ProviderSection, RespondSection, RetrySection, RunSection, SegmentSection,
};
pub use counts::{recount, relative_outputs, stage_dir, stage_files, stage_path, ContentPage, ExtractedChunk};
pub use dataset::{build_records, ModelAnswer, PairRecord};
pub use manifest::{RunManifest, Stage, StageCounts, StageRecord, StageStatus, MANIFEST_FILE};
pub use report::{funnel_report, FunnelReport, StageSummary};

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::extract::QualityRules;
use crate::jsonl::write_atomic;
use crate::provider::{
    ChatBackend, ChatGateway, Embedder, EmbeddingBackend, HashedBagOfWords, HttpEmbeddingBackend, MockScript,
    OpenAiCompatible, ResponseCache, RetryPolicy, ScriptedProvider,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config changed since run {run_id} started (digest {recorded} -> {current}); pass --force-from <stage> to re-run from a stage")]
    ConfigDrift { run_id: String, recorded: String, current: String },
    #[error("stage {stage} failed: {message}")]
    StageFailed { stage: Stage, message: String },
    #[error("stage {stage} needs {missing} to be done first")]
    NotReady { stage: Stage, missing: Stage },
    #[error("reconciliation mismatch: {0}")]
    Reconciliation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// Process exit code: 1 config, 2 stage failure, 3 reconciliation.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::ConfigDrift { .. } => 1,
            PipelineError::StageFailed { .. } | PipelineError::NotReady { .. } | PipelineError::Io { .. } => 2,
            PipelineError::Reconciliation(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop after this stage completes, leaving later stages pending.
    pub stop_after: Option<Stage>,
    /// Re-run this stage and all later ones; also accepts a changed config.
    pub force_from: Option<Stage>,
}

pub struct Pipeline {
    loaded: LoadedConfig,
    run_dir: PathBuf,
    gateway: ChatGateway,
    embedder: Embedder,
    rules: QualityRules,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Pipeline {
    /// Builds the provider and embedder the config names.
    pub fn open(loaded: LoadedConfig) -> Result<Self, PipelineError> {
        let cfg = &loaded.config;
        let timeout = Duration::from_secs(cfg.provider.timeout_secs);
        let chat: Arc<dyn ChatBackend> = match cfg.provider.kind {
            ProviderKind::Mock => {
                let path = loaded.resolve(cfg.provider.mock_script.as_deref().expect("validated"));
                Arc::new(ScriptedProvider::new(MockScript::load(&path).map_err(|e| PipelineError::Config(e.to_string()))?))
            }
            ProviderKind::OpenaiCompatible => {
                let endpoint = cfg.provider.endpoint.as_deref().expect("validated");
                Arc::new(
                    OpenAiCompatible::new(endpoint, &cfg.provider.credential_env, timeout)
                        .map_err(|e| PipelineError::Config(e.to_string()))?,
                )
            }
        };
        let embed: Arc<dyn EmbeddingBackend> = match cfg.embedding.kind {
            EmbeddingKind::Hashed => Arc::new(HashedBagOfWords::new(cfg.embedding.dimension, cfg.embedding.seed)),
            EmbeddingKind::Http => {
                let endpoint = cfg
                    .embedding
                    .endpoint
                    .as_deref()
                    .or(cfg.provider.endpoint.as_deref())
                    .ok_or_else(|| PipelineError::Config("embedding.endpoint or provider.endpoint is required".into()))?;
                let env = cfg.embedding.credential_env.as_deref().unwrap_or(&cfg.provider.credential_env);
                Arc::new(
                    HttpEmbeddingBackend::new(endpoint, env, &cfg.embedding.model, timeout)
                        .map_err(|e| PipelineError::Config(e.to_string()))?,
                )
            }
        };
        Self::with_backends(loaded, chat, embed)
    }

    /// Uses the given backends instead of the ones the config names.
    pub fn with_backends(
        loaded: LoadedConfig,
        chat: Arc<dyn ChatBackend>,
        embed: Arc<dyn EmbeddingBackend>,
    ) -> Result<Self, PipelineError> {
        let cfg = &loaded.config;
        cfg.validate()?;
        let catalog = loaded.resolve(&cfg.corpus.catalog);
        if !catalog.is_file() {
            return Err(PipelineError::Config(format!("catalog {} is not readable", catalog.display())));
        }
        let rules = match &cfg.extract.patterns {
            Some(p) => QualityRules::load(&loaded.resolve(p)).map_err(|e| PipelineError::Config(e.to_string()))?,
            None => QualityRules::default(),
        };
        let cache = ResponseCache::open(loaded.cache_dir()).map_err(|e| PipelineError::Config(e.to_string()))?;
        let retry = &cfg.provider.retry;
        let mut gateway = ChatGateway::new(chat)
            .with_cache(cache.clone())
            .with_retry(RetryPolicy {
                base: Duration::from_millis(retry.base_ms),
                cap: Duration::from_millis(retry.cap_ms),
                max_attempts: retry.max_attempts,
                jitter: retry.jitter,
            })
            .with_max_in_flight(cfg.provider.max_in_flight);
        if !cfg.provider.vision_models.is_empty() {
            gateway = gateway.with_vision_models(cfg.provider.vision_models.clone());
        }
        let mut embedder = Embedder::new(embed);
        if cfg.embedding.kind == EmbeddingKind::Http {
            embedder = embedder.with_cache(cache);
        }
        let run_dir = loaded.run_dir();
        Ok(Self { loaded, run_dir, gateway, embedder, rules })
    }

    pub fn config(&self) -> &Config {
        &self.loaded.config
    }

    pub fn loaded(&self) -> &LoadedConfig {
        &self.loaded
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn gateway(&self) -> &ChatGateway {
        &self.gateway
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn dataset_path(&self) -> PathBuf {
        stage_path(&self.run_dir, Stage::Emit, counts::DATASET)
    }

    fn doc_dir(&self, doc_id: &str) -> PathBuf {
        self.run_dir.join("work").join(doc_id)
    }

    pub fn manifest(&self) -> Result<Option<RunManifest>, PipelineError> {
        if self.run_dir.join(MANIFEST_FILE).is_file() {
            RunManifest::load(&self.run_dir).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Loads or creates the manifest and applies the drift rule.
    fn prepare(&self, force_from: Option<Stage>) -> Result<RunManifest, PipelineError> {
        let digest = self.config().digest();
        let mut manifest = match self.manifest()? {
            Some(m) => m,
            None => RunManifest::new(&self.config().run.id, &digest, &self.loaded.path.to_string_lossy()),
        };
        if manifest.config_digest != digest {
            let Some(stage) = force_from else {
                return Err(PipelineError::ConfigDrift {
                    run_id: manifest.run_id,
                    recorded: manifest.config_digest,
                    current: digest,
                });
            };
            log::info!("config changed; re-running from {stage}");
            manifest.invalidate_from(stage);
            manifest.config_digest = digest;
        } else if let Some(stage) = force_from {
            manifest.invalidate_from(stage);
        }
        manifest.config_path = self.loaded.path.to_string_lossy().into_owned();
        manifest.save(&self.run_dir)?;
        Ok(manifest)
    }

    /// Runs every stage that is not done, in order, saving the manifest
    /// after each one.
    pub fn run(&self, options: &RunOptions) -> Result<RunManifest, PipelineError> {
        let mut manifest = self.prepare(options.force_from)?;
        for stage in Stage::ALL {
            if !manifest.is_done(stage) {
                self.execute(stage, &mut manifest)?;
            }
            if options.stop_after == Some(stage) {
                break;
            }
        }
        Ok(manifest)
    }

    /// Runs one stage over the whole run. Every earlier stage must be done;
    /// later stages are reset to pending.
    pub fn run_stage(&self, stage: Stage) -> Result<RunManifest, PipelineError> {
        let mut manifest = self.prepare(None)?;
        if let Some(missing) = Stage::ALL[..stage.index()].iter().find(|s| !manifest.is_done(**s)) {
            return Err(PipelineError::NotReady { stage, missing: *missing });
        }
        self.execute(stage, &mut manifest)?;
        Ok(manifest)
    }

    /// Computes a stage without touching the manifest or stage files and
    /// returns its primary output. `doc` restricts it to one document.
    pub fn preview(&self, stage: Stage, doc: Option<&str>) -> Result<Vec<u8>, PipelineError> {
        let out = self
            .compute(stage, doc)
            .map_err(|message| PipelineError::StageFailed { stage, message })?;
        Ok(out.primary().to_vec())
    }

    fn execute(&self, stage: Stage, manifest: &mut RunManifest) -> Result<(), PipelineError> {
        log::info!("stage {stage}: start");
        manifest.invalidate_from(stage);
        let record = manifest.record_mut(stage);
        record.status = StageStatus::Running;
        record.started_at = Some(now());
        manifest.save(&self.run_dir)?;

        let fail = |manifest: &mut RunManifest, message: String| {
            let record = manifest.record_mut(stage);
            record.status = StageStatus::Failed;
            record.finished_at = Some(now());
            record.error = Some(message);
            manifest.save(&self.run_dir)
        };

        let out = match self.compute(stage, None) {
            Ok(out) => out,
            Err(message) => {
                fail(manifest, message.clone())?;
                return Err(PipelineError::StageFailed { stage, message });
            }
        };
        let dir = stage_dir(&self.run_dir, stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| PipelineError::Io { path: dir.clone(), source: e })?;
        }
        for (name, bytes) in &out.files {
            let path = dir.join(name);
            write_atomic(&path, bytes).map_err(|e| PipelineError::Io { path, source: e })?;
        }
        let fresh = recount(&self.run_dir, stage);
        let problem = match &fresh {
            Err(e) => Some(e.clone()),
            Ok(c) if *c != out.counts => Some(format!("written outputs recount to {c:?}, stage observed {:?}", out.counts)),
            Ok(c) if !c.conserved() => Some(format!("{} inputs but {} kept + {} dropped", c.inputs, c.kept, c.dropped_total())),
            Ok(_) => None,
        };
        if let Some(message) = problem {
            fail(manifest, message.clone())?;
            return Err(PipelineError::Reconciliation(format!("{stage}: {message}")));
        }
        let record = manifest.record_mut(stage);
        record.status = StageStatus::Done;
        record.counts = Some(out.counts.clone());
        record.outputs = relative_outputs(stage);
        record.finished_at = Some(now());
        manifest.save(&self.run_dir)?;
        log::info!("stage {stage}: done ({} in, {} kept)", out.counts.inputs, out.counts.kept);
        Ok(())
    }

    pub fn report(&self) -> Result<FunnelReport, PipelineError> {
        funnel_report(&self.run_dir)
    }
}

/// Reopens a run from its directory using the config recorded in its
/// manifest, then continues it.
pub fn resume(run_dir: &Path, force_from: Option<Stage>) -> Result<(Pipeline, RunManifest), PipelineError> {
    let manifest = RunManifest::load(run_dir)?;
    let loaded = Config::load(Path::new(&manifest.config_path))?;
    if loaded.run_dir() != run_dir && std::path::absolute(run_dir).ok() != Some(loaded.run_dir()) {
        log::warn!("config at {} now points at {}", manifest.config_path, loaded.run_dir().display());
    }
    let pipeline = Pipeline::open(loaded)?;
    let manifest = pipeline.run(&RunOptions { stop_after: None, force_from })?;
    Ok((pipeline, manifest))
}
