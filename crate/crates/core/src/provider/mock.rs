//! Scripted mock backend.
//!
//! A script is an ordered list of rules. The first rule whose matcher
//! accepts a request answers it; a request no rule accepts is a
//! fixture-miss error, never a default answer.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::gateway::{BackendReply, ChatBackend};
use super::request::{cache_key, ChatRequest, Usage};
use super::ProviderError;
use crate::jsonl::sha256_hex;

/// Conditions a request must meet. Unset fields match anything, so an
/// empty matcher is an explicit catch-all.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Matcher {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Every string must occur in the system text or user text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    /// Hex SHA-256 of one of the attached images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
    /// Exact request digest, for golden tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

impl Matcher {
    pub fn contains<I, S>(needles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { contains: needles.into_iter().map(Into::into).collect(), ..Default::default() }
    }

    pub fn image(sha256: impl Into<String>) -> Self {
        Self { image_sha256: Some(sha256.into()), ..Default::default() }
    }

    pub fn digest(digest: impl Into<String>) -> Self {
        Self { digest: Some(digest.into()), ..Default::default() }
    }

    pub fn for_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    fn accepts(&self, request: &ChatRequest, haystack: &str, digest: &str) -> bool {
        if self.model.as_deref().is_some_and(|m| m != request.model_name) {
            return false;
        }
        if self.digest.as_deref().is_some_and(|d| d != digest) {
            return false;
        }
        if let Some(want) = &self.image_sha256 {
            if !request.images.iter().any(|i| &sha256_hex(i) == want) {
                return false;
            }
        }
        self.contains.iter().all(|n| haystack.contains(n.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text { text: String },
    /// A transient failure unless `retryable` is false.
    Error {
        error: String,
        #[serde(default = "yes")]
        retryable: bool,
    },
}

fn yes() -> bool {
    true
}

impl MockReply {
    pub fn text(t: impl Into<String>) -> Self {
        MockReply::Text { text: t.into() }
    }

    pub fn error(e: impl Into<String>) -> Self {
        MockReply::Error { error: e.into(), retryable: true }
    }
}

/// Builds a fenced JSON list from the items whose needle occurs in the
/// prompt, ordered by where the needle occurs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Compose {
    #[serde(default)]
    pub preamble: String,
    pub items: Vec<ComposeItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeItem {
    pub needle: String,
    pub object: serde_json::Value,
}

impl Compose {
    fn render(&self, haystack: &str) -> String {
        let mut hits: Vec<(usize, &serde_json::Value)> = self
            .items
            .iter()
            .filter_map(|item| haystack.find(item.needle.as_str()).map(|pos| (pos, &item.object)))
            .collect();
        hits.sort_by_key(|(pos, _)| *pos);
        let list: Vec<&serde_json::Value> = hits.into_iter().map(|(_, v)| v).collect();
        let body = serde_json::to_string_pretty(&list).unwrap_or_else(|_| "[]".into());
        format!("{}\n```json\n{}\n```", self.preamble, body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    /// Successive calls walk this list; the last entry repeats.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<MockReply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compose: Option<Compose>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let bytes = std::fs::read(path).map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_slice(&bytes)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
        for (i, rule) in script.rules.iter().enumerate() {
            if rule.responses.is_empty() && rule.compose.is_none() {
                return Err(ProviderError::InvalidRequest(format!(
                    "{}: rule {i} has neither responses nor compose",
                    path.display()
                )));
            }
        }
        Ok(script)
    }

    pub fn push(&mut self, matcher: Matcher, reply: MockReply) {
        self.push_sequence(matcher, vec![reply]);
    }

    pub fn push_sequence(&mut self, matcher: Matcher, replies: Vec<MockReply>) {
        self.rules.push(MockRule { matcher, responses: replies, compose: None });
    }

    pub fn push_compose(&mut self, matcher: Matcher, compose: Compose) {
        self.rules.push(MockRule { matcher, responses: Vec::new(), compose: Some(compose) });
    }
}

/// One request seen by the mock, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub rule: Option<usize>,
    pub digest: String,
    pub model_name: String,
    pub user_text: String,
    pub image_count: usize,
}

pub struct ScriptedProvider {
    script: MockScript,
    hits: Vec<AtomicUsize>,
    log: Mutex<Vec<MockCall>>,
}

impl ScriptedProvider {
    pub fn new(script: MockScript) -> Self {
        let hits = script.rules.iter().map(|_| AtomicUsize::new(0)).collect();
        Self { script, hits, log: Mutex::new(Vec::new()) }
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Calls whose user text contains `needle`.
    pub fn calls_containing(&self, needle: &str) -> Vec<MockCall> {
        self.calls().into_iter().filter(|c| c.user_text.contains(needle)).collect()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }
}

impl ChatBackend for ScriptedProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn send(&self, request: &ChatRequest) -> Result<BackendReply, ProviderError> {
        let digest = cache_key(request).0;
        let haystack = match &request.system_text {
            Some(s) => format!("{s}\n{}", request.user_text),
            None => request.user_text.clone(),
        };
        let rule = self
            .script
            .rules
            .iter()
            .position(|r| r.matcher.accepts(request, &haystack, &digest));
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(MockCall {
            rule,
            digest: digest.clone(),
            model_name: request.model_name.clone(),
            user_text: request.user_text.clone(),
            image_count: request.images.len(),
        });
        let Some(index) = rule else {
            return Err(ProviderError::FixtureMiss {
                digest,
                model: request.model_name.clone(),
                preview: request.user_text.chars().take(80).collect(),
            });
        };
        let rule = &self.script.rules[index];
        let n = self.hits[index].fetch_add(1, Ordering::SeqCst);
        let text = if let Some(compose) = &rule.compose {
            compose.render(&haystack)
        } else {
            match &rule.responses[n.min(rule.responses.len() - 1)] {
                MockReply::Text { text } => text.clone(),
                MockReply::Error { error, retryable: true } => return Err(ProviderError::Transport(error.clone())),
                MockReply::Error { error, retryable: false } => {
                    return Err(ProviderError::Status { status: 400, body: error.clone() })
                }
            }
        };
        let usage = Usage {
            prompt_tokens: haystack.split_whitespace().count() as u64,
            completion_tokens: text.split_whitespace().count() as u64,
        };
        Ok(BackendReply { text, usage })
    }
}
