//! Shared fixtures: the scan corpus, a scripted provider that answers from
//! `fixtures/scripted.json`, and transcript-store seeding.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cryptoscope::detect::Detector;
use cryptoscope::extract::extract_first_array;
use cryptoscope::gateway::{
    CompletionRequest, Gateway, ModelProfile, ProviderKind, ProviderReply, ScriptedProvider, TranscriptStore,
};
use cryptoscope::ingest::{scan_tree, RelevanceConfig, ScanResult};
use cryptoscope::model::{DetectionSetting, SourceUnit};
use cryptoscope::par::Execution;
use cryptoscope::prompt::PromptPhase;
use serde_json::{json, Map, Value};

pub const MODEL: &str = "fixture-model";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn corpus_dir() -> PathBuf {
    fixtures().join("corpus")
}

pub fn profile() -> ModelProfile {
    ModelProfile::new(ProviderKind::ReplayStore, MODEL, 16_000)
}

pub fn scan_corpus() -> ScanResult {
    scan_tree(&corpus_dir(), &RelevanceConfig::default(), Execution::Sequential).expect("fixture corpus")
}

struct UnitScript {
    alerts: Vec<Map<String, Value>>,
    drop: Vec<String>,
    refuse: Vec<u64>,
    garble: Vec<u64>,
}

fn u64s(v: Option<&Value>) -> Vec<u64> {
    v.and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_u64).collect())
        .unwrap_or_default()
}

/// Deterministic stand-in for a model: detection answers depend only on
/// the unit and query index, validation drops the APIs listed under `drop`.
pub struct Script {
    by_content: HashMap<String, UnitScript>,
}

impl Script {
    pub fn load(units: &[SourceUnit]) -> Self {
        let raw: Map<String, Value> =
            serde_json::from_str(&std::fs::read_to_string(fixtures().join("scripted.json")).unwrap()).unwrap();
        let mut by_content = HashMap::new();
        for unit in units {
            let Some(entry) = raw.get(&unit.path) else { continue };
            let alerts = entry["alerts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|a| a.as_object().unwrap().clone())
                .collect();
            let drop = entry
                .get("drop")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
                .unwrap_or_default();
            by_content.insert(
                unit.content.clone(),
                UnitScript {
                    alerts,
                    drop,
                    refuse: u64s(entry.get("refuse")),
                    garble: u64s(entry.get("garble")),
                },
            );
        }
        Script { by_content }
    }

    pub fn detection_text(&self, content: &str, qi: u32) -> String {
        let Some(s) = self.by_content.get(content) else {
            return "[]".into();
        };
        let q = u64::from(qi);
        if s.refuse.contains(&q) {
            return "I cannot help with that request.".into();
        }
        if s.garble.contains(&q) {
            return "The code looks fine overall, {\"category\": \"weak".into();
        }
        let items: Vec<Value> = s
            .alerts
            .iter()
            .filter(|a| u64s(a.get("queries")).contains(&q))
            .map(|a| {
                let mut a = a.clone();
                a.remove("queries");
                Value::Object(a)
            })
            .collect();
        let body = serde_json::to_string_pretty(&items).unwrap();
        match qi % 4 {
            0 => body,
            1 => format!("```json\n{body}\n```"),
            2 => format!("Here is what I found in the code:\n\n{body}\n\nLet me know if you need more detail."),
            _ => format!("```\n{body}\n```\n"),
        }
    }

    pub fn validation_text(&self, content: &str, prior: &[String]) -> String {
        let drop = self.by_content.get(content).map(|s| s.drop.clone()).unwrap_or_default();
        let mut seen = Vec::new();
        let mut verdicts = Vec::new();
        for text in prior {
            for item in extract_first_array(text).unwrap_or_default() {
                let Some(obj) = item.as_object() else { continue };
                let api = obj.get("api").and_then(Value::as_str).unwrap_or_default().to_string();
                if seen.contains(&api) {
                    continue;
                }
                seen.push(api.clone());
                let mut v = obj.clone();
                v.remove("root_cause");
                v.remove("recommendation");
                let keep = !drop.contains(&api);
                v.insert("verdict".into(), json!(if keep { "keep" } else { "drop" }));
                v.insert(
                    "justification".into(),
                    json!(if keep { "confirmed in code" } else { "not security relevant here" }),
                );
                verdicts.push(Value::Object(v));
            }
        }
        serde_json::to_string_pretty(&verdicts).unwrap()
    }

    pub fn reply(&self, req: &CompletionRequest<'_>) -> ProviderReply {
        let b = req.bundle;
        ProviderReply::Text(match b.phase {
            PromptPhase::Detection(_) => self.detection_text(&b.code_payload, req.query_index),
            PromptPhase::Validation => self.validation_text(&b.code_payload, b.prior_responses.as_deref().unwrap_or(&[])),
        })
    }
}

pub fn scripted_gateway(units: &[SourceUnit]) -> (Gateway, Arc<ScriptedProvider<impl Fn(&CompletionRequest<'_>) -> ProviderReply + Send + Sync>>) {
    let script = Script::load(units);
    let provider = Arc::new(ScriptedProvider::new(move |r: &CompletionRequest<'_>| script.reply(r)));
    (Gateway::new(provider.clone()), provider)
}

/// Records the scripted answers for `units` under every setting. Runs
/// sequentially so variant `i` of a detection prompt is query `i`'s answer.
pub fn seed_store(path: &Path, units: &[SourceUnit], settings: &[DetectionSetting]) {
    let store = Arc::new(TranscriptStore::open(path).unwrap());
    let (gateway, _) = scripted_gateway(units);
    let detector = Detector::new(Arc::new(gateway.recording_to(store)), profile()).with_execution(Execution::Sequential);
    for setting in settings {
        for unit in units {
            detector.analyze(unit, setting).unwrap();
        }
    }
}
