use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ProviderError;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_name: String,
    pub system_text: Option<String>,
    pub user_text: String,
    /// Encoded page images, in order.
    pub images: Vec<Vec<u8>>,
    pub temperature: f32,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    /// Temperature 0 and a 4096-token output budget.
    pub fn new(model_name: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            system_text: None,
            user_text: user_text.into(),
            images: Vec::new(),
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system_text = Some(system.into());
        self
    }

    pub fn with_image(mut self, image: Vec<u8>) -> Self {
        self.images.push(image);
        self
    }

    pub fn with_max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self, vision_capable: bool) -> Result<(), ProviderError> {
        if self.user_text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("user_text is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_output_tokens is 0".into()));
        }
        if !self.images.is_empty() && !vision_capable {
            return Err(ProviderError::InvalidRequest(format!(
                "model `{}` is not configured as vision-capable",
                self.model_name
            )));
        }
        if self.images.iter().any(|i| i.is_empty()) {
            return Err(ProviderError::InvalidRequest("empty image payload".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub provider_id: String,
    pub from_cache: bool,
    /// Backend attempts spent on this response; 0 for cache hits.
    pub attempts: u32,
}

/// Hex SHA-256 digest identifying a request's content.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn feed(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(bytes);
}

/// Digest over model, system text, user text, image bytes and temperature.
/// Every field is length-prefixed so no two distinct requests share an
/// encoding.
pub fn cache_key(request: &ChatRequest) -> CacheKey {
    let mut h = Sha256::new();
    feed(&mut h, b"pairminer/chat/v1");
    feed(&mut h, request.model_name.as_bytes());
    match &request.system_text {
        Some(s) => {
            h.update([1u8]);
            feed(&mut h, s.as_bytes());
        }
        None => h.update([0u8]),
    }
    feed(&mut h, request.user_text.as_bytes());
    h.update((request.images.len() as u64).to_le_bytes());
    for image in &request.images {
        feed(&mut h, image);
    }
    h.update(request.temperature.to_bits().to_le_bytes());
    CacheKey(hex::encode(h.finalize()))
}
