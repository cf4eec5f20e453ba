//! OpenAI-compatible HTTP backends (`/chat/completions`, `/embeddings`).

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::embed::EmbeddingBackend;
use super::gateway::{BackendReply, ChatBackend};
use super::request::{ChatRequest, Usage};
use super::ProviderError;

pub struct OpenAiCompatible {
    id: String,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

fn client(timeout: Duration) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::Transport(e.to_string()))
}

fn read_key(credential_env: &str) -> Result<String, ProviderError> {
    match std::env::var(credential_env) {
        Ok(k) if !k.trim().is_empty() => Ok(k),
        _ => Err(ProviderError::CredentialMissing(credential_env.to_string())),
    }
}

fn post(
    client: &reqwest::blocking::Client,
    url: &str,
    key: &str,
    body: &Value,
) -> Result<Value, ProviderError> {
    let resp = client
        .post(url)
        .bearer_auth(key)
        .json(body)
        .send()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
    if status == 429 {
        return Err(ProviderError::RateLimited(text));
    }
    if !(200..300).contains(&status) {
        return Err(ProviderError::Status { status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))
}

impl OpenAiCompatible {
    /// Reads the API key from `credential_env`.
    pub fn new(endpoint: &str, credential_env: &str, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(Self {
            id: format!("openai-compatible:{endpoint}"),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: read_key(credential_env)?,
            client: client(timeout)?,
        })
    }

    pub fn request_body(request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system_text {
            messages.push(json!({"role": "system", "content": system}));
        }
        if request.images.is_empty() {
            messages.push(json!({"role": "user", "content": request.user_text}));
        } else {
            let mut parts = vec![json!({"type": "text", "text": request.user_text})];
            for image in &request.images {
                let b64 = base64::engine::general_purpose::STANDARD.encode(image);
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/png;base64,{b64}")}
                }));
            }
            messages.push(json!({"role": "user", "content": parts}));
        }
        json!({
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }

    pub fn parse_reply(body: &Value) -> Result<BackendReply, ProviderError> {
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))?;
        let usage = Usage {
            prompt_tokens: body["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: body["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(BackendReply { text: text.to_string(), usage })
    }
}

impl ChatBackend for OpenAiCompatible {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest) -> Result<BackendReply, ProviderError> {
        let url = format!("{}/chat/completions", self.endpoint);
        let body = post(&self.client, &url, &self.api_key, &Self::request_body(request))?;
        Self::parse_reply(&body)
    }
}

pub struct HttpEmbeddingBackend {
    model: String,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingBackend {
    pub fn new(endpoint: &str, credential_env: &str, model: &str, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(Self {
            model: model.to_string(),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: read_key(credential_env)?,
            client: client(timeout)?,
        })
    }

    pub fn parse_reply(body: &Value) -> Result<Vec<f32>, ProviderError> {
        let values = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| ProviderError::Malformed("missing data[0].embedding".into()))?;
        values
            .iter()
            .map(|v| v.as_f64().map(|f| f as f32).ok_or_else(|| ProviderError::Malformed("non-numeric component".into())))
            .collect()
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        let url = format!("{}/embeddings", self.endpoint);
        let body = post(&self.client, &url, &self.api_key, &json!({"model": self.model, "input": text}))?;
        Self::parse_reply(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_credential_is_a_config_error() {
        let err = OpenAiCompatible::new("http://localhost:1", "PAIRMINER_TEST_UNSET_KEY", Duration::from_secs(1));
        assert!(matches!(err, Err(ProviderError::CredentialMissing(v)) if v == "PAIRMINER_TEST_UNSET_KEY"));
    }

    #[test]
    fn vision_body_carries_data_urls() {
        let req = ChatRequest::new("gpt-4o", "read").with_system("sys").with_image(vec![1, 2, 3]);
        let body = OpenAiCompatible::request_body(&req);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn reply_parsing() {
        let body = json!({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        let reply = OpenAiCompatible::parse_reply(&body).unwrap();
        assert_eq!(reply.text, "hi");
        assert_eq!(reply.usage.prompt_tokens, 3);
        assert!(OpenAiCompatible::parse_reply(&json!({})).is_err());
        assert_eq!(
            HttpEmbeddingBackend::parse_reply(&json!({"data": [{"embedding": [0.5, 1]}]})).unwrap(),
            vec![0.5, 1.0]
        );
    }

    #[test]
    fn status_classification() {
        assert!(ProviderError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(!ProviderError::Status { status: 401, body: String::new() }.is_retryable());
        assert!(ProviderError::RateLimited(String::new()).is_retryable());
    }
}
