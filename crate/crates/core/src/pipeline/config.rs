//! Run configuration: one TOML file whose digest gates resumption.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jsonl::sha256_hex;
use crate::matching::MatchConfig;
use crate::render::RenderConfig;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub provider: ProviderSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub segment: SegmentSection,
    #[serde(default)]
    pub extract: ExtractSection,
    #[serde(default, rename = "match")]
    pub matching: MatchConfig,
    #[serde(default)]
    pub respond: RespondSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub id: String,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    /// Defaults to `<work_dir>/cache`, shared by every run in the work dir.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub catalog: PathBuf,
    #[serde(default = "default_keywords")]
    pub keywords: Vec<String>,
}

fn default_keywords() -> Vec<String> {
    vec!["problem".into(), "question".into()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    OpenaiCompatible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub credential_env: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Models allowed to receive images; empty means no restriction.
    pub vision_models: Vec<String>,
    pub retry: RetrySection,
    pub models: ModelsSection,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            kind: ProviderKind::OpenaiCompatible,
            endpoint: None,
            credential_env: "OPENAI_API_KEY".into(),
            mock_script: None,
            max_in_flight: 8,
            timeout_secs: 120,
            vision_models: Vec::new(),
            retry: RetrySection::default(),
            models: ModelsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrySection {
    pub base_ms: u64,
    pub cap_ms: u64,
    pub max_attempts: u32,
    pub jitter: bool,
}

impl Default for RetrySection {
    fn default() -> Self {
        Self { base_ms: 1000, cap_ms: 60_000, max_attempts: 5, jitter: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    pub filter: String,
    pub transcribe: String,
    pub segment: String,
    pub extract: String,
    pub completeness: String,
    pub verify: String,
    pub judge: String,
}

impl Default for ModelsSection {
    fn default() -> Self {
        let m = || "gpt-4o".to_string();
        Self { filter: m(), transcribe: m(), segment: m(), extract: m(), completeness: m(), verify: m(), judge: m() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Hashed,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: EmbeddingKind,
    pub dimension: usize,
    pub seed: u64,
    pub model: String,
    /// Falls back to the provider endpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Hashed,
            dimension: 256,
            seed: 0,
            model: "stella_en_1.5B_v5".into(),
            endpoint: None,
            credential_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub max_tokens: usize,
}

impl Default for SegmentSection {
    fn default() -> Self {
        Self { max_tokens: 3000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    /// Pattern file; the built-in rules apply when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patterns: Option<PathBuf>,
    /// Ask the completeness model about items the rules kept.
    pub llm_double_check: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RespondSection {
    pub models: Vec<String>,
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: Config,
    pub path: PathBuf,
    pub base_dir: PathBuf,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: Config = toml::from_str(text).map_err(|e| PipelineError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let path = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, path, base_dir })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        let id = &self.run.id;
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || id.starts_with('.') {
            return bad("run.id must be non-empty and use only letters, digits, '-', '_' or '.'");
        }
        if self.corpus.catalog.as_os_str().is_empty() {
            return bad("corpus.catalog is empty");
        }
        if self.corpus.keywords.iter().all(|k| k.trim().is_empty()) {
            return bad("corpus.keywords is empty");
        }
        if self.provider.kind == ProviderKind::Mock && self.provider.mock_script.is_none() {
            return bad("provider.kind = \"mock\" requires provider.mock_script");
        }
        if self.provider.kind == ProviderKind::OpenaiCompatible && self.provider.endpoint.is_none() {
            return bad("provider.endpoint is required for an openai_compatible provider");
        }
        if self.provider.max_in_flight == 0 {
            return bad("provider.max_in_flight must be at least 1");
        }
        if self.provider.retry.max_attempts == 0 {
            return bad("provider.retry.max_attempts must be at least 1");
        }
        if self.embedding.dimension == 0 {
            return bad("embedding.dimension must be positive");
        }
        if self.render.dpi < self.render.min_dpi {
            return bad("render.dpi is below render.min_dpi");
        }
        if self.segment.max_tokens < crate::segment::MIN_MAX_TOKENS {
            return Err(PipelineError::Config(format!(
                "segment.max_tokens must be at least {}",
                crate::segment::MIN_MAX_TOKENS
            )));
        }
        if self.matching.candidate_limit == 0 {
            return bad("match.candidate_limit must be at least 1");
        }
        if !self.matching.numerical && !self.matching.semantic {
            return bad("match needs at least one of numerical or semantic enabled");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. Formatting and comments in the
    /// file do not affect it; any value change does.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.config.run.work_dir)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.work_dir().join(&self.config.run.id)
    }

    pub fn cache_dir(&self) -> PathBuf {
        match &self.config.run.cache_dir {
            Some(p) => self.resolve(p),
            None => self.work_dir().join("cache"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[run]
id = "r1"
[corpus]
catalog = "catalog.jsonl"
[provider]
kind = "mock"
mock_script = "script.json"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(c.segment.max_tokens, 3000);
        assert_eq!(c.matching.k_semantic, 4);
        assert_eq!(c.matching.candidate_limit, 4);
        assert_eq!(c.render.dpi, 200);
        assert_eq!(c.provider.retry.max_attempts, 5);
        assert_eq!(c.corpus.keywords, vec!["problem", "question"]);
    }

    #[test]
    fn missing_catalog_is_a_config_error() {
        let text = MINIMAL.replace("catalog = \"catalog.jsonl\"", "");
        assert!(matches!(Config::from_toml(&text), Err(PipelineError::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[segment]\nmax_token = 10\n");
        assert!(matches!(Config::from_toml(&text), Err(PipelineError::Config(_))));
    }

    #[test]
    fn digest_tracks_values_not_formatting() {
        let a = Config::from_toml(MINIMAL).unwrap();
        let b = Config::from_toml(&format!("# comment\n{MINIMAL}")).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = Config::from_toml(&format!("{MINIMAL}\n[segment]\nmax_tokens = 2000\n")).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn round_trips_through_toml() {
        let a = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(Config::from_toml(&a.to_toml()).unwrap(), a);
    }
}
