//! Run configuration: one UTF-8 file, either `key = value` lines or a flat
//! JSON object. Relative paths resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use cryptoscope::gateway::{ModelProfile, ProviderKind};
use cryptoscope::model::{DetectionMode, DetectionSetting};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: ModelProfile,
    pub setting: DetectionSetting,
    pub corpus: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub verdicts: Option<PathBuf>,
    pub out: PathBuf,
    pub relevance: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub refusals: Option<PathBuf>,
    pub leak_terms: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    /// Worker threads for unit-level parallelism; 0 = one per core, 1 = sequential.
    pub concurrency: usize,
    /// Requests per second; 0 disables limiting.
    pub rate_limit: f64,
    pub reviewer: Option<String>,
    pub second_reviewer: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: ModelProfile::new(ProviderKind::RemoteChatEndpoint, "gpt-4-turbo", 128_000),
            setting: DetectionSetting::task_aware(),
            corpus: None,
            manifest: None,
            transcripts: None,
            verdicts: None,
            out: PathBuf::from("cryptoscope-out"),
            relevance: None,
            lexicon: None,
            refusals: None,
            leak_terms: None,
            rules: None,
            prompts: None,
            concurrency: 0,
            rate_limit: 0.0,
            reviewer: None,
            second_reviewer: None,
        }
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(trimmed).context("config is not a JSON object")?;
        return map
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Bool(b) => b.to_string(),
                    other => bail!("config key {k}: expected a scalar, found {other}"),
                };
                Ok((k, v))
            })
            .collect();
    }
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        if out.insert(k.trim().to_string(), v.to_string()).is_some() {
            bail!("config line {}: duplicate key {}", i + 1, k.trim());
        }
    }
    Ok(out)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => bail!("config key {key}: expected a boolean, found {v:?}"),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("config key {key}: {e}"))
}

pub fn parse_mode(v: &str) -> Result<DetectionMode> {
    match v.to_ascii_lowercase().as_str() {
        "uc" | "unconstrained" => Ok(DetectionMode::Unconstrained),
        "ta" | "task-aware" | "taskaware" => Ok(DetectionMode::TaskAware),
        _ => bail!("unknown detection mode {v:?}; use uc or ta"),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base).with_context(|| format!("config {}", path.display()))
    }

    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = RunConfig::default();
        if let Some(model) = pairs.get("model") {
            cfg.profile = ModelProfile::preset(model).unwrap_or_else(|| {
                ModelProfile::new(ProviderKind::RemoteChatEndpoint, model.as_str(), cfg.profile.context_window)
            });
        }
        let mut mode = cfg.setting.mode();
        let mut validation = cfg.setting.validation();
        let mut queries = cfg.setting.query_count();
        let path = |v: &str| base.join(v);
        for (k, v) in &pairs {
            match k.as_str() {
                "model" => {}
                "provider" => {
                    cfg.profile.provider = match v.as_str() {
                        "remote" => ProviderKind::RemoteChatEndpoint,
                        "replay" => ProviderKind::ReplayStore,
                        _ => bail!("config key provider: expected remote or replay, found {v:?}"),
                    }
                }
                "endpoint_url" => cfg.profile.endpoint_url = v.clone(),
                "api_key_env" => cfg.profile.api_key_env = Some(v.clone()),
                "context_window" => {
                    cfg.profile.context_window = parse_num(k, v)?;
                    if cfg.profile.context_window == 0 {
                        bail!("config key context_window must be positive");
                    }
                }
                "temperature" => cfg.profile.temperature = Some(parse_num(k, v)?),
                "max_retries" => cfg.profile.max_retries = parse_num(k, v)?,
                "request_timeout_secs" => {
                    cfg.profile.request_timeout = Duration::try_from_secs_f64(parse_num(k, v)?)
                        .map_err(|e| anyhow!("config key {k}: {e}"))?
                }
                "reserved_output_tokens" => cfg.profile.reserved_output_tokens = parse_num(k, v)?,
                "mode" => mode = parse_mode(v)?,
                "validation" => validation = parse_bool(k, v)?,
                "queries" => queries = parse_num(k, v)?,
                "corpus" => cfg.corpus = Some(path(v)),
                "manifest" => cfg.manifest = Some(path(v)),
                "transcripts" => cfg.transcripts = Some(path(v)),
                "verdicts" => cfg.verdicts = Some(path(v)),
                "out" => cfg.out = path(v),
                "relevance" => cfg.relevance = Some(path(v)),
                "lexicon" => cfg.lexicon = Some(path(v)),
                "refusals" => cfg.refusals = Some(path(v)),
                "leak_terms" => cfg.leak_terms = Some(path(v)),
                "rules" => cfg.rules = Some(path(v)),
                "prompts" => cfg.prompts = Some(path(v)),
                "concurrency" => cfg.concurrency = parse_num(k, v)?,
                "rate_limit" => {
                    cfg.rate_limit = parse_num(k, v)?;
                    if !(cfg.rate_limit >= 0.0 && cfg.rate_limit.is_finite()) {
                        bail!("config key rate_limit must be a finite non-negative number");
                    }
                }
                "reviewer" => cfg.reviewer = Some(v.clone()),
                "second_reviewer" => cfg.second_reviewer = Some(v.clone()),
                _ => bail!("unknown config key {k}"),
            }
        }
        cfg.setting = DetectionSetting::new(mode, validation, queries)?;
        cfg.check_inputs()?;
        Ok(cfg)
    }

    /// Input files must exist now; stores and the output directory only
    /// need a parent that exists or can be created.
    pub fn check_inputs(&self) -> Result<()> {
        let inputs = [
            ("corpus", &self.corpus),
            ("manifest", &self.manifest),
            ("relevance", &self.relevance),
            ("lexicon", &self.lexicon),
            ("refusals", &self.refusals),
            ("leak_terms", &self.leak_terms),
            ("rules", &self.rules),
            ("prompts", &self.prompts),
        ];
        for (key, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{key}: {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }
}
