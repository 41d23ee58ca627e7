use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Clock, CompletionRequest, GatewayError, Provider, ProviderReply, SystemClock};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportFailure {
    pub retryable: bool,
    pub message: String,
}

impl TransportFailure {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            retryable: true,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            retryable: false,
            message: message.into(),
        }
    }
}

/// Posts a JSON body and returns the raw response body.
pub trait ChatTransport: Send + Sync {
    fn post(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<String, TransportFailure>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

fn retryable_status(code: u16) -> bool {
    matches!(code, 408 | 429) || (500..600).contains(&code)
}

impl ChatTransport for ReqwestTransport {
    fn post(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<String, TransportFailure> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportFailure {
            retryable: e.is_timeout() || e.is_connect() || e.is_request(),
            message: e.to_string(),
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| TransportFailure::retryable(e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else {
            Err(TransportFailure {
                retryable: retryable_status(status.as_u16()),
                message: format!("HTTP {status}"),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): base * 2^retry, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay
            .saturating_mul(2u32.saturating_pow(retry))
            .min(self.max_delay)
    }
}

/// Live chat-completion provider speaking the common `messages` wire shape.
pub struct HttpProvider {
    transport: Box<dyn ChatTransport>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
}

impl HttpProvider {
    pub fn new(transport: impl ChatTransport + 'static) -> Self {
        Self {
            transport: Box::new(transport),
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Clock used for backoff sleeps.
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn request_body(req: &CompletionRequest<'_>) -> Value {
        let mut body = json!({
            "model": req.profile.model_name,
            "messages": [
                {"role": "system", "content": req.bundle.system_message()},
                {"role": "user", "content": req.bundle.user_message()},
            ],
        });
        if let Some(t) = req.profile.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

/// Message content from a chat-completion body. A blank body is an empty
/// reply; a body that is not the expected shape is passed through verbatim.
pub(crate) fn reply_text(body: &str) -> String {
    if body.trim().is_empty() {
        return String::new();
    }
    match serde_json::from_str::<Value>(body) {
        Ok(v) => match v.pointer("/choices/0/message/content") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) => String::new(),
            _ => body.to_string(),
        },
        Err(_) => body.to_string(),
    }
}

impl Provider for HttpProvider {
    fn call(&self, req: &CompletionRequest<'_>) -> Result<ProviderReply, GatewayError> {
        let key = req
            .profile
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let body = Self::request_body(req);
        let attempts = req.profile.max_retries.saturating_add(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                self.clock.sleep(self.retry.delay(attempt - 1));
            }
            match self.transport.post(
                &req.profile.endpoint_url,
                key.as_deref(),
                &body,
                req.profile.request_timeout,
            ) {
                Ok(text) => return Ok(ProviderReply::Text(reply_text(&text))),
                Err(f) => {
                    log::debug!("attempt {} of {attempts} failed: {}", attempt + 1, f.message);
                    last = f.message;
                    if !f.retryable {
                        break;
                    }
                }
            }
        }
        Ok(ProviderReply::TransportFailure(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, ManualClock, ModelProfile, ProviderKind, ResponseStatus};
    use crate::model::{DetectionSetting, Language, SourceUnit};
    use crate::prompt::PromptForge;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    struct Scripted {
        calls: Arc<AtomicU32>,
        bodies: Arc<Mutex<Vec<Value>>>,
        script: Vec<Result<String, TransportFailure>>,
    }

    impl ChatTransport for Scripted {
        fn post(&self, _: &str, _: Option<&str>, body: &Value, _: Duration) -> Result<String, TransportFailure> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            self.bodies.lock().unwrap().push(body.clone());
            self.script[n.min(self.script.len() - 1)].clone()
        }
    }

    fn run(
        script: Vec<Result<String, TransportFailure>>,
        retries: u32,
        temperature: Option<f64>,
    ) -> (ResponseStatus, String, u32, Vec<Value>, Vec<Duration>) {
        let calls = Arc::new(AtomicU32::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let clock = Arc::new(ManualClock::new());
        let provider = HttpProvider::new(Scripted {
            calls: calls.clone(),
            bodies: bodies.clone(),
            script,
        })
        .with_clock(clock.clone());
        let mut profile = ModelProfile::new(ProviderKind::RemoteChatEndpoint, "m", 16_000);
        profile.max_retries = retries;
        profile.temperature = temperature;
        let unit = SourceUnit::new("A.java", Language::Java, "class A {}");
        let bundle = PromptForge::default()
            .build_detection_prompt(&unit, &DetectionSetting::task_aware())
            .unwrap();
        let r = Gateway::new(provider).complete(&bundle, &profile, 0).unwrap();
        let b = bodies.lock().unwrap().clone();
        (r.status, r.text, calls.load(Ordering::SeqCst), b, clock.sleeps())
    }

    fn chat(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    #[test]
    fn endpoint_down_exhausts_retries() {
        let (status, _, calls, _, sleeps) =
            run(vec![Err(TransportFailure::retryable("connection refused"))], 2, None);
        assert_eq!(status, ResponseStatus::TransportError);
        assert_eq!(calls, 3);
        assert_eq!(sleeps, vec![Duration::from_millis(500), Duration::from_millis(1000)]);
    }

    #[test]
    fn recovers_after_transient_failure() {
        let script = vec![Err(TransportFailure::retryable("503")), Ok(chat("[]"))];
        let (status, text, calls, _, _) = run(script, 3, None);
        assert_eq!((status, text.as_str(), calls), (ResponseStatus::Ok, "[]", 2));
    }

    #[test]
    fn fatal_failure_is_not_retried() {
        let (status, _, calls, _, _) = run(vec![Err(TransportFailure::fatal("HTTP 401"))], 3, None);
        assert_eq!((status, calls), (ResponseStatus::TransportError, 1));
    }

    #[test]
    fn blank_body_is_empty() {
        let (status, ..) = run(vec![Ok("   ".into())], 0, None);
        assert_eq!(status, ResponseStatus::Empty);
        let (status, ..) = run(vec![Ok(chat(""))], 0, None);
        assert_eq!(status, ResponseStatus::Empty);
    }

    #[test]
    fn wire_shape_and_temperature() {
        let (_, _, _, bodies, _) = run(vec![Ok(chat("[]"))], 0, None);
        let b = &bodies[0];
        assert_eq!(b["model"], "m");
        assert_eq!(b["messages"][0]["role"], "system");
        assert_eq!(b["messages"][1]["role"], "user");
        assert!(b["messages"][1]["content"].as_str().unwrap().contains("class A {}"));
        assert!(b.get("temperature").is_none());
        let (_, _, _, bodies, _) = run(vec![Ok(chat("[]"))], 0, Some(0.2));
        assert_eq!(bodies[0]["temperature"], 0.2);
    }

    #[test]
    fn backoff_is_capped() {
        let p = RetryPolicy {
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(5),
        };
        let d: Vec<u64> = (0..5).map(|i| p.delay(i).as_secs()).collect();
        assert_eq!(d, vec![1, 2, 4, 5, 5]);
        assert_eq!(p.delay(100), Duration::from_secs(5));
    }

    #[test]
    fn non_chat_body_passes_through() {
        assert_eq!(reply_text("[{\"a\":1}]"), "[{\"a\":1}]");
        assert_eq!(reply_text("plain words"), "plain words");
        assert_eq!(reply_text(&chat("x")), "x");
    }
}
