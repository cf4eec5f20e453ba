use std::fmt::Display;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::cache::ResponseCache;
use super::request::{cache_key, ChatRequest, ChatResponse, Usage};
use super::retry::RetryPolicy;
use super::ProviderError;
use crate::prompts::with_reask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Usage,
}

/// A single attempt against a completion service.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, ProviderError>;
}

/// Backend answering from a closure. Handy for oracle-style test doubles.
pub struct FnBackend<F> {
    id: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest) -> Result<BackendReply, ProviderError> {
        (self.f)(request).map(|text| BackendReply { text, usage: Usage::default() })
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { permits: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut p = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *p += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize, Deserialize)]
struct CachedChat {
    model_name: String,
    system_text: Option<String>,
    user_text: String,
    image_sha256: Vec<String>,
    temperature: f32,
    provider_id: String,
    usage: Usage,
    text: String,
}

const CHAT_NAMESPACE: &str = "chat";

/// Result of a request whose answer must parse, with one bounded re-ask.
#[derive(Debug, Clone)]
pub enum Reask<T> {
    Parsed { value: T, response: String, asks: u32 },
    Unparsed { response: String, error: String },
}

/// Cached, rate-limited, retrying front end for one [`ChatBackend`].
/// Safe to share across worker threads.
pub struct ChatGateway {
    backend: Arc<dyn ChatBackend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    in_flight: Semaphore,
    vision_models: Option<Vec<String>>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl ChatGateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            in_flight: Semaphore::new(8),
            vision_models: None,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.in_flight = Semaphore::new(n);
        self
    }

    /// Restricts image-bearing requests to these model labels. Without
    /// this every model is treated as vision-capable.
    pub fn with_vision_models(mut self, models: Vec<String>) -> Self {
        self.vision_models = Some(models);
        self
    }

    pub fn provider_id(&self) -> &str {
        self.backend.id()
    }

    /// Backend attempts made so far, including failed ones.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    fn vision_capable(&self, model: &str) -> bool {
        self.vision_models.as_ref().map_or(true, |m| m.iter().any(|v| v == model))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate(self.vision_capable(&request.model_name))?;
        let key = cache_key(request);
        let lock = self.cache.as_ref().map(|c| c.lock_for(CHAT_NAMESPACE, key.as_str()));
        let _guard = lock.as_ref().map(|l| l.lock().unwrap_or_else(|e| e.into_inner()));

        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get::<CachedChat>(CHAT_NAMESPACE, key.as_str())? {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(ChatResponse {
                    text: hit.text,
                    usage: hit.usage,
                    provider_id: hit.provider_id,
                    from_cache: true,
                    attempts: 0,
                });
            }
        }

        let (reply, attempts) = self.send_with_retry(request)?;
        if let Some(cache) = &self.cache {
            let entry = CachedChat {
                model_name: request.model_name.clone(),
                system_text: request.system_text.clone(),
                user_text: request.user_text.clone(),
                image_sha256: request.images.iter().map(|i| crate::jsonl::sha256_hex(i)).collect(),
                temperature: request.temperature,
                provider_id: self.backend.id().to_string(),
                usage: reply.usage,
                text: reply.text.clone(),
            };
            cache.put(CHAT_NAMESPACE, key.as_str(), &entry)?;
        }
        Ok(ChatResponse {
            text: reply.text,
            usage: reply.usage,
            provider_id: self.backend.id().to_string(),
            from_cache: false,
            attempts,
        })
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<(BackendReply, u32), ProviderError> {
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.in_flight.acquire();
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                self.backend.send(request)
            };
            match result {
                Ok(reply) => return Ok((reply, attempt)),
                Err(e) if e.is_retryable() && attempt < max => {
                    log::debug!("attempt {attempt} failed ({e}); retrying");
                    std::thread::sleep(self.retry.delay(attempt));
                }
                Err(e) if e.is_retryable() => {
                    return Err(ProviderError::RetriesExhausted { attempts: attempt, last: Box::new(e) })
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Sends `request`; if `parse` rejects the answer, asks once more with
    /// `reask_note` appended and gives up after that.
    pub fn complete_parsed<T, E: Display>(
        &self,
        request: &ChatRequest,
        reask_note: &str,
        parse: impl Fn(&str) -> Result<T, E>,
    ) -> Result<Reask<T>, ProviderError> {
        let first = self.complete(request)?;
        let first_err = match parse(&first.text) {
            Ok(value) => return Ok(Reask::Parsed { value, response: first.text, asks: 1 }),
            Err(e) => e.to_string(),
        };
        let mut again = request.clone();
        again.user_text = with_reask(&request.user_text, reask_note);
        let second = self.complete(&again)?;
        Ok(match parse(&second.text) {
            Ok(value) => Reask::Parsed { value, response: second.text, asks: 2 },
            Err(e) => Reask::Unparsed {
                response: second.text,
                error: format!("{first_err}; after re-ask: {e}"),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{MockReply, MockScript, ScriptedProvider, Matcher};

    fn gateway(script: MockScript, cache: Option<&std::path::Path>) -> (ChatGateway, Arc<ScriptedProvider>) {
        let mock = Arc::new(ScriptedProvider::new(script));
        let mut g = ChatGateway::new(mock.clone()).with_retry(RetryPolicy::immediate(5));
        if let Some(dir) = cache {
            g = g.with_cache(ResponseCache::open(dir).unwrap());
        }
        (g, mock)
    }

    #[test]
    fn second_identical_request_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let mut script = MockScript::default();
        script.push(Matcher::contains(["P"]), MockReply::text("ok"));
        let (g, mock) = gateway(script, Some(dir.path()));
        let req = ChatRequest::new("m", "P");
        let a = g.complete(&req).unwrap();
        let b = g.complete(&req).unwrap();
        assert_eq!(a.text, "ok");
        assert!(!a.from_cache);
        assert!(b.from_cache);
        assert_eq!(a.text, b.text);
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn cache_survives_a_new_gateway() {
        let dir = tempfile::tempdir().unwrap();
        let mut script = MockScript::default();
        script.push(Matcher::contains(["P"]), MockReply::text("ok"));
        let req = ChatRequest::new("m", "P");
        gateway(script.clone(), Some(dir.path())).0.complete(&req).unwrap();
        let (g, mock) = gateway(script, Some(dir.path()));
        assert!(g.complete(&req).unwrap().from_cache);
        assert_eq!(mock.call_count(), 0);
    }

    #[test]
    fn flaky_backend_succeeds_on_third_attempt() {
        let mut script = MockScript::default();
        script.push_sequence(
            Matcher::contains(["P"]),
            vec![MockReply::error("reset"), MockReply::error("reset"), MockReply::text("fine")],
        );
        let (g, mock) = gateway(script, None);
        let resp = g.complete(&ChatRequest::new("m", "P")).unwrap();
        assert_eq!(resp.text, "fine");
        assert_eq!(resp.attempts, 3);
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn retries_exhausted_carries_last_error() {
        let mut script = MockScript::default();
        script.push(Matcher::contains(["P"]), MockReply::error("down"));
        let (g, _) = gateway(script, None);
        match g.complete(&ChatRequest::new("m", "P")) {
            Err(ProviderError::RetriesExhausted { attempts: 5, last }) => {
                assert!(last.to_string().contains("down"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fixture_miss_is_not_retried() {
        let (g, mock) = gateway(MockScript::default(), None);
        assert!(matches!(g.complete(&ChatRequest::new("m", "Q")), Err(ProviderError::FixtureMiss { .. })));
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn vision_gate() {
        let mut script = MockScript::default();
        script.push(Matcher::contains(["P"]), MockReply::text("ok"));
        let (g, _) = gateway(script, None);
        let g = g.with_vision_models(vec!["eyes".into()]);
        let req = ChatRequest::new("blind", "P").with_image(vec![1]);
        assert!(matches!(g.complete(&req), Err(ProviderError::InvalidRequest(_))));
    }

    #[test]
    fn reask_once_then_give_up() {
        let mut script = MockScript::default();
        script.push(Matcher::contains(["again"]), MockReply::text("still no"));
        script.push(Matcher::contains(["P"]), MockReply::text("nope"));
        let (g, mock) = gateway(script, None);
        let out = g
            .complete_parsed(&ChatRequest::new("m", "P"), "again", |t| {
                if t == "yes" { Ok(()) } else { Err("bad") }
            })
            .unwrap();
        assert!(matches!(out, Reask::Unparsed { .. }));
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn concurrent_identical_requests_hit_backend_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut script = MockScript::default();
        script.push(Matcher::contains(["P"]), MockReply::text("ok"));
        let (g, mock) = gateway(script, Some(dir.path()));
        let g = Arc::new(g);
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let g = g.clone();
                std::thread::spawn(move || g.complete(&ChatRequest::new("m", "P")).unwrap())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap().text, "ok");
        }
        assert_eq!(mock.call_count(), 1);
    }
}
