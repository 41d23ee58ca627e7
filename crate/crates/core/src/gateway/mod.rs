//! Provider-agnostic completion gateway: context guarding, rate limiting,
//! live HTTP calls with retry, and record/replay of transcripts.

mod http;
mod limiter;
mod transcript;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{ChatTransport, HttpProvider, ReqwestTransport, RetryPolicy, TransportFailure};
pub use limiter::{Clock, ManualClock, RateLimiter, SystemClock};
pub use transcript::{TranscriptEntry, TranscriptStore};

use crate::extract::extract_first_array;
use crate::prompt::PromptBundle;

const DEFAULT_REFUSALS: &str = include_str!("../../data/refusals.txt");

pub const DEFAULT_RESERVED_OUTPUT_TOKENS: u64 = 2048;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no recording for prompt {hash} on model {model}")]
    MissingRecording { hash: String, model: String },
    #[error("prompt exceeds the context window by {by} tokens")]
    ContextExceeded { by: u64 },
    #[error("transcript store {path}: {message}")]
    Store { path: PathBuf, message: String },
    #[error("transcript store I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderKind {
    RemoteChatEndpoint,
    ReplayStore,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub provider: ProviderKind,
    #[serde(default)]
    pub endpoint_url: String,
    pub model_name: String,
    pub context_window: u64,
    /// `None` leaves the provider's default untouched.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout", with = "secs")]
    pub request_timeout: Duration,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_reserved")]
    pub reserved_output_tokens: u64,
}

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> Duration {
    Duration::from_secs(120)
}

fn default_reserved() -> u64 {
    DEFAULT_RESERVED_OUTPUT_TOKENS
}

impl ModelProfile {
    pub fn new(provider: ProviderKind, model_name: impl Into<String>, context_window: u64) -> Self {
        assert!(context_window > 0, "context window must be positive");
        Self {
            provider,
            endpoint_url: String::new(),
            model_name: model_name.into(),
            context_window,
            temperature: None,
            max_retries: default_retries(),
            request_timeout: default_timeout(),
            api_key_env: None,
            reserved_output_tokens: DEFAULT_RESERVED_OUTPUT_TOKENS,
        }
    }

    /// Context sizes of the commonly evaluated models.
    pub fn preset(model: &str) -> Option<Self> {
        let window = match model {
            "gpt-3.5-turbo" | "gpt-3.5-turbo-1106" => 16_000,
            "gpt-4-turbo" | "gpt-4-1106-preview" => 128_000,
            "gemini-1.0-pro" => 128_000,
            "codellama-34b" => 100_000,
            "deepseek-coder-33b" => 16_000,
            _ => return None,
        };
        Some(Self::new(ProviderKind::RemoteChatEndpoint, model, window))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextFit {
    Fits,
    Exceeds { by: u64 },
}

/// The prompt plus the reserved output budget must fit the window; the
/// boundary itself fits.
pub fn guard_context(bundle: &PromptBundle, profile: &ModelProfile) -> ContextFit {
    let need = bundle.token_estimate + profile.reserved_output_tokens;
    if need > profile.context_window {
        ContextFit::Exceeds {
            by: need - profile.context_window,
        }
    } else {
        ContextFit::Fits
    }
}

pub fn prompt_hash(bundle: &PromptBundle) -> String {
    hex::encode(Sha256::digest(bundle.rendered_text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseStatus {
    Ok,
    Empty,
    Refusal,
    TransportError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub latency: Duration,
    pub status: ResponseStatus,
    pub prompt_hash: String,
}

#[derive(Debug, Clone)]
pub struct RefusalLexicon {
    phrases: Vec<String>,
}

impl Default for RefusalLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_REFUSALS)
    }
}

impl RefusalLexicon {
    pub fn parse(text: &str) -> Self {
        let phrases = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { phrases }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// A refusal phrase with no recoverable findings array.
    pub fn is_refusal(&self, text: &str) -> bool {
        let lowered = text.to_lowercase();
        self.phrases.iter().any(|p| lowered.contains(p.as_str())) && extract_first_array(text).is_none()
    }

    pub fn classify(&self, text: &str) -> ResponseStatus {
        if text.trim().is_empty() {
            ResponseStatus::Empty
        } else if self.is_refusal(text) {
            ResponseStatus::Refusal
        } else {
            ResponseStatus::Ok
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub bundle: &'a PromptBundle,
    pub profile: &'a ModelProfile,
    pub prompt_hash: &'a str,
    pub query_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderReply {
    Text(String),
    TransportFailure(String),
}

pub trait Provider: Send + Sync {
    fn call(&self, request: &CompletionRequest<'_>) -> Result<ProviderReply, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lookup {
    pub prompt_hash: String,
    pub query_index: u32,
    pub hit: bool,
}

/// Serves recorded responses. Variants of one prompt are handed out
/// round-robin by query index.
pub struct ReplayProvider {
    store: Arc<TranscriptStore>,
    log: Mutex<Vec<Lookup>>,
}

impl ReplayProvider {
    pub fn new(store: Arc<TranscriptStore>) -> Self {
        Self {
            store,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::new(Arc::new(TranscriptStore::open(path)?)))
    }

    pub fn lookups(&self) -> Vec<Lookup> {
        self.log.lock().expect("lookup log poisoned").clone()
    }

    pub fn lookup_count(&self) -> usize {
        self.log.lock().expect("lookup log poisoned").len()
    }
}

impl Provider for ReplayProvider {
    fn call(&self, req: &CompletionRequest<'_>) -> Result<ProviderReply, GatewayError> {
        let found = self
            .store
            .variant(req.prompt_hash, &req.profile.model_name, req.query_index);
        self.log.lock().expect("lookup log poisoned").push(Lookup {
            prompt_hash: req.prompt_hash.to_string(),
            query_index: req.query_index,
            hit: found.is_some(),
        });
        found
            .map(ProviderReply::Text)
            .ok_or_else(|| GatewayError::MissingRecording {
                hash: req.prompt_hash.to_string(),
                model: req.profile.model_name.clone(),
            })
    }
}

/// Answers from a closure and counts calls; for tests, benchmarks and
/// seeding transcript stores.
pub struct ScriptedProvider<F> {
    script: F,
    calls: std::sync::atomic::AtomicUsize,
}

impl<F> ScriptedProvider<F>
where
    F: Fn(&CompletionRequest<'_>) -> ProviderReply + Send + Sync,
{
    pub fn new(script: F) -> Self {
        Self {
            script,
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl<F> Provider for ScriptedProvider<F>
where
    F: Fn(&CompletionRequest<'_>) -> ProviderReply + Send + Sync,
{
    fn call(&self, request: &CompletionRequest<'_>) -> Result<ProviderReply, GatewayError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Ok((self.script)(request))
    }
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn call(&self, request: &CompletionRequest<'_>) -> Result<ProviderReply, GatewayError> {
        (**self).call(request)
    }
}

pub struct Gateway {
    provider: Box<dyn Provider>,
    limiter: Option<RateLimiter>,
    recorder: Option<Arc<TranscriptStore>>,
    refusals: RefusalLexicon,
    clock: Arc<dyn Clock>,
}

impl Gateway {
    pub fn new(provider: impl Provider + 'static) -> Self {
        Self {
            provider: Box::new(provider),
            limiter: None,
            recorder: None,
            refusals: RefusalLexicon::default(),
            clock: Arc::new(SystemClock::new()),
        }
    }

    pub fn with_rate_limit(mut self, requests_per_second: f64) -> Self {
        self.limiter = Some(RateLimiter::new(requests_per_second, self.clock.clone()));
        self
    }

    pub fn with_limiter(mut self, limiter: RateLimiter) -> Self {
        self.limiter = Some(limiter);
        self
    }

    /// Persist every live response to `store`.
    pub fn recording_to(mut self, store: Arc<TranscriptStore>) -> Self {
        self.recorder = Some(store);
        self
    }

    pub fn with_refusals(mut self, refusals: RefusalLexicon) -> Self {
        self.refusals = refusals;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn refusals(&self) -> &RefusalLexicon {
        &self.refusals
    }

    /// One completion. Transport failures come back as a `TransportError`
    /// response; only missing recordings, oversize prompts and store I/O
    /// are errors.
    pub fn complete(
        &self,
        bundle: &PromptBundle,
        profile: &ModelProfile,
        query_index: u32,
    ) -> Result<RawResponse, GatewayError> {
        if let ContextFit::Exceeds { by } = guard_context(bundle, profile) {
            return Err(GatewayError::ContextExceeded { by });
        }
        let hash = prompt_hash(bundle);
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let started = self.clock.now();
        let reply = self.provider.call(&CompletionRequest {
            bundle,
            profile,
            prompt_hash: &hash,
            query_index,
        })?;
        let latency = self.clock.now().saturating_sub(started);
        let (text, status) = match reply {
            ProviderReply::Text(text) => {
                if let Some(store) = &self.recorder {
                    store.record(&hash, &profile.model_name, &text)?;
                }
                let status = self.refusals.classify(&text);
                (text, status)
            }
            ProviderReply::TransportFailure(msg) => {
                log::warn!("query {query_index} for {hash}: {msg}");
                (String::new(), ResponseStatus::TransportError)
            }
        };
        Ok(RawResponse {
            text,
            latency,
            status,
            prompt_hash: hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DetectionSetting, Language, SourceUnit};
    use crate::prompt::PromptForge;

    fn bundle_with_estimate(tokens: u64) -> PromptBundle {
        let unit = SourceUnit::new("A.java", Language::Java, "class A {}");
        let mut b = PromptForge::default()
            .build_detection_prompt(&unit, &DetectionSetting::task_aware())
            .unwrap();
        b.token_estimate = tokens;
        b
    }

    fn profile(window: u64) -> ModelProfile {
        ModelProfile::new(ProviderKind::ReplayStore, "m", window)
    }

    #[test]
    fn context_guard_arithmetic() {
        assert_eq!(guard_context(&bundle_with_estimate(1000), &profile(16000)), ContextFit::Fits);
        assert_eq!(
            guard_context(&bundle_with_estimate(15000), &profile(16000)),
            ContextFit::Exceeds { by: 1048 }
        );
        assert_eq!(
            guard_context(&bundle_with_estimate(16000 - 2048), &profile(16000)),
            ContextFit::Fits
        );
        assert_eq!(
            guard_context(&bundle_with_estimate(16000 - 2047), &profile(16000)),
            ContextFit::Exceeds { by: 1 }
        );
    }

    #[test]
    fn presets_match_published_context_sizes() {
        let w = |m| ModelProfile::preset(m).unwrap().context_window;
        assert_eq!(w("gpt-3.5-turbo"), 16_000);
        assert_eq!(w("gpt-4-turbo"), 128_000);
        assert_eq!(w("gemini-1.0-pro"), 128_000);
        assert_eq!(w("codellama-34b"), 100_000);
        assert_eq!(w("deepseek-coder-33b"), 16_000);
        assert!(ModelProfile::preset("gpt-4-turbo").unwrap().temperature.is_none());
    }

    #[test]
    fn profile_json_defaults() {
        let p: ModelProfile = serde_json::from_str(
            r#"{"provider":"RemoteChatEndpoint","model_name":"x","context_window":8000,"request_timeout":2.5}"#,
        )
        .unwrap();
        assert_eq!(p.reserved_output_tokens, 2048);
        assert_eq!(p.temperature, None);
        assert_eq!(p.request_timeout, Duration::from_millis(2500));
    }

    #[test]
    fn status_classification() {
        let r = RefusalLexicon::default();
        assert_eq!(r.classify("  \n"), ResponseStatus::Empty);
        assert_eq!(r.classify("I cannot analyze this code."), ResponseStatus::Refusal);
        assert_eq!(
            r.classify("I cannot analyze the build files, but: []"),
            ResponseStatus::Ok
        );
        assert_eq!(r.classify("[]"), ResponseStatus::Ok);
    }

    #[test]
    fn replay_serves_recording_and_reports_misses() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(TranscriptStore::open(&dir.path().join("t.bin")).unwrap());
        let b = bundle_with_estimate(10);
        let h = prompt_hash(&b);
        store.record(&h, "m", "[]").unwrap();
        let replay = Arc::new(ReplayProvider::new(store));
        let gw = Gateway::new(replay.clone());
        let r = gw.complete(&b, &profile(16000), 0).unwrap();
        assert_eq!((r.text.as_str(), r.status), ("[]", ResponseStatus::Ok));
        assert_eq!(r.prompt_hash, h);
        let other = bundle_with_estimate(10);
        let mut other = other;
        other.rendered_text.push('x');
        assert!(matches!(
            gw.complete(&other, &profile(16000), 0),
            Err(GatewayError::MissingRecording { .. })
        ));
        assert_eq!(replay.lookup_count(), 2);
        assert!(matches!(
            gw.complete(&bundle_with_estimate(20000), &profile(16000), 0),
            Err(GatewayError::ContextExceeded { .. })
        ));
        // oversize prompts never reach the provider
        assert_eq!(replay.lookup_count(), 2);
    }

    #[test]
    fn complete_does_not_touch_the_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(TranscriptStore::open(&dir.path().join("t.bin")).unwrap());
        let b = bundle_with_estimate(10);
        store.record(&prompt_hash(&b), "m", "x").unwrap();
        let before = b.clone();
        let gw = Gateway::new(ReplayProvider::new(store));
        gw.complete(&b, &profile(16000), 3).unwrap();
        assert_eq!(b, before);
        assert_eq!(prompt_hash(&b), prompt_hash(&before));
    }
}
