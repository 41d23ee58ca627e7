//! Per-unit detection: k detection queries, parsing, aggregation and one
//! validation round.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::extract::extract_first_array;
use crate::gateway::{Gateway, GatewayError, ModelProfile, RawResponse, RefusalLexicon, ResponseStatus};
use crate::model::{Alert, AlertStatus, DetectionSetting, LineSpan, MisuseCategory, SourceUnit};
use crate::par::{self, Execution};
use crate::prompt::{PromptError, PromptForge};
use crate::signature::{alert_signature, normalize_api, signature_of, Granularity, SignatureKey};
use crate::taxonomy::CategoryLexicon;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("no JSON findings array in response: {reason}")]
pub struct ParseFailure {
    pub reason: String,
}

/// An object in a findings array that could not become an alert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiagnostic {
    pub element: usize,
    pub field: String,
    pub problem: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedAlerts {
    pub alerts: Vec<Alert>,
    pub dropped: Vec<FieldDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedEntry {
    pub query_index: u32,
    pub outcome: Result<ParsedAlerts, ParseFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    Empty,
    Refusal,
    ParseFailure,
    TransportError,
    HallucinationSuspect,
    ValidationUnavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Anomaly {
    /// Detection query index; `None` for the validation query.
    pub query_index: Option<u32>,
    pub kind: AnomalyKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseSet {
    pub unit_path: String,
    pub setting: DetectionSetting,
    /// Indexed by query.
    pub responses: Vec<RawResponse>,
    /// One entry per `Ok` response, in query order.
    pub parsed: Vec<ParsedEntry>,
}

impl ResponseSet {
    /// True when no query produced any text at all.
    pub fn unanalyzed(&self) -> bool {
        !self.responses.is_empty()
            && self
                .responses
                .iter()
                .all(|r| r.status == ResponseStatus::TransportError)
    }

    /// Texts of the responses that carry model output, in query order.
    pub fn usable_texts(&self) -> Vec<String> {
        self.responses
            .iter()
            .filter(|r| r.status == ResponseStatus::Ok)
            .map(|r| r.text.clone())
            .collect()
    }

    pub fn anomalies(&self) -> Vec<Anomaly> {
        let mut out = Vec::new();
        for (i, r) in self.responses.iter().enumerate() {
            let kind = match r.status {
                ResponseStatus::Ok => continue,
                ResponseStatus::Empty => AnomalyKind::Empty,
                ResponseStatus::Refusal => AnomalyKind::Refusal,
                ResponseStatus::TransportError => AnomalyKind::TransportError,
            };
            out.push(Anomaly {
                query_index: Some(i as u32),
                kind,
                detail: String::new(),
            });
        }
        for p in &self.parsed {
            if let Err(f) = &p.outcome {
                out.push(Anomaly {
                    query_index: Some(p.query_index),
                    kind: AnomalyKind::ParseFailure,
                    detail: f.reason.clone(),
                });
            }
        }
        out.sort();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitStatus {
    Analyzed,
    /// Every detection query failed in transport; not the same as "clean".
    Unanalyzed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalReport {
    pub unit_path: String,
    pub setting: DetectionSetting,
    pub status: UnitStatus,
    pub alerts: Vec<Alert>,
    pub anomalies: Vec<Anomaly>,
    pub validation_response: Option<String>,
}

impl FinalReport {
    pub fn kept(&self) -> impl Iterator<Item = &Alert> {
        self.alerts.iter().filter(|a| a.status.is_kept())
    }
}

fn text_field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a str> {
    names
        .iter()
        .find_map(|n| obj.get(*n))
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

fn line_number(v: &Value) -> Option<u32> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads `line_start`/`line_end`, or a single `line` that may be a number
/// or an `"a-b"` range. Unusable positions become `None`.
fn line_span(obj: &Map<String, Value>) -> Option<LineSpan> {
    let pick = |names: &[&str]| names.iter().find_map(|n| obj.get(*n)).and_then(line_number);
    if let Some(start) = pick(&["line_start", "lineStart", "start_line"]) {
        let end = pick(&["line_end", "lineEnd", "end_line"]).unwrap_or(start);
        return LineSpan::new(start, end.max(start)).ok();
    }
    match obj.get("line").or_else(|| obj.get("lines"))? {
        Value::String(s) if s.contains('-') => {
            let (a, b) = s.split_once('-')?;
            let (a, b): (u32, u32) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            LineSpan::new(a.min(b), a.max(b)).ok()
        }
        v => LineSpan::line(line_number(v)?).ok(),
    }
}

/// Alerts from one detection response. An empty array means nothing was
/// reported; a missing array is a failure.
pub fn parse_alerts(
    text: &str,
    unit: &SourceUnit,
    setting: &DetectionSetting,
    lexicon: &CategoryLexicon,
) -> Result<ParsedAlerts, ParseFailure> {
    let items = extract_first_array(text).ok_or_else(|| ParseFailure {
        reason: if text.trim().is_empty() {
            "empty response".into()
        } else {
            "no array of finding objects".into()
        },
    })?;
    let mut out = ParsedAlerts::default();
    for (element, item) in items.iter().enumerate() {
        let Some(obj) = item.as_object() else {
            out.dropped.push(FieldDiagnostic {
                element,
                field: String::new(),
                problem: "not an object".into(),
            });
            continue;
        };
        let mut missing = |field: &str| {
            out.dropped.push(FieldDiagnostic {
                element,
                field: field.into(),
                problem: "missing or empty".into(),
            })
        };
        let Some(label) = text_field(obj, &["category"]) else {
            missing("category");
            continue;
        };
        let Some(api) = text_field(obj, &["api"]) else {
            missing("api");
            continue;
        };
        let Some(root_cause) = text_field(obj, &["root_cause", "rootCause"]) else {
            missing("root_cause");
            continue;
        };
        let category = lexicon
            .canonical_category(label)
            .unwrap_or(MisuseCategory::OutOfTaxonomy);
        out.alerts.push(Alert {
            category,
            label: label.to_string(),
            unit_path: unit.path.clone(),
            line_span: line_span(obj),
            api: api.to_string(),
            root_cause: root_cause.to_string(),
            recommendation: text_field(obj, &["recommendation"]).unwrap_or_default().to_string(),
            support_count: 1,
            origin_setting: *setting,
            status: AlertStatus::Candidate,
            validation_note: None,
        });
    }
    Ok(out)
}

fn sort_key(a: &Alert) -> (&str, Option<LineSpan>, MisuseCategory, String) {
    (&a.unit_path, a.line_span, a.category, normalize_api(&a.api))
}

/// Union of every parsed alert, deduplicated by signature. `support_count`
/// is the number of distinct queries that reported the signature; the text
/// fields come from the lowest-index query that did.
pub fn aggregate(parsed: &[ParsedEntry], granularity: Granularity) -> Vec<Alert> {
    let mut by_sig: HashMap<SignatureKey, (u32, Alert, std::collections::BTreeSet<u32>)> = HashMap::new();
    for entry in parsed {
        let Ok(ok) = &entry.outcome else { continue };
        for alert in &ok.alerts {
            let sig = alert_signature(alert, granularity);
            let slot = by_sig
                .entry(sig)
                .or_insert_with(|| (entry.query_index, alert.clone(), Default::default()));
            if entry.query_index < slot.0 {
                slot.0 = entry.query_index;
                slot.1 = alert.clone();
            }
            slot.2.insert(entry.query_index);
        }
    }
    let mut out: Vec<Alert> = by_sig
        .into_values()
        .map(|(_, mut alert, queries)| {
            alert.support_count = queries.len() as u32;
            alert.status = AlertStatus::Candidate;
            alert.validation_note = None;
            alert
        })
        .collect();
    out.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub category: MisuseCategory,
    pub api: String,
    pub line: Option<LineSpan>,
    pub keep: bool,
    pub justification: Option<String>,
}

/// Keep/drop verdicts from a validation response. `None` when the response
/// holds no findings array.
pub fn parse_verdicts(text: &str, lexicon: &CategoryLexicon) -> Option<Vec<Verdict>> {
    let items = extract_first_array(text)?;
    let verdicts = items
        .iter()
        .filter_map(Value::as_object)
        .filter_map(|obj| {
            let keep = match text_field(obj, &["verdict", "decision"])?.to_ascii_lowercase().as_str() {
                "keep" | "true positive" | "tp" | "valid" => true,
                "drop" | "false positive" | "fp" | "invalid" => false,
                _ => return None,
            };
            Some(Verdict {
                category: lexicon
                    .canonical_category(text_field(obj, &["category"])?)
                    .unwrap_or(MisuseCategory::OutOfTaxonomy),
                api: text_field(obj, &["api"])?.to_string(),
                line: line_span(obj),
                keep,
                justification: text_field(obj, &["justification", "reason"]).map(str::to_string),
            })
        })
        .collect();
    Some(verdicts)
}

/// Assigns each verdict to a candidate: exact signature first, otherwise the
/// only candidate sharing its category and API. The first verdict for a
/// candidate wins; verdicts matching nothing are ignored.
pub fn apply_verdicts(
    candidates: Vec<Alert>,
    verdicts: &[Verdict],
    granularity: Granularity,
) -> (Vec<Alert>, Vec<usize>) {
    let sigs: Vec<SignatureKey> = candidates.iter().map(|a| alert_signature(a, granularity)).collect();
    let mut assigned: Vec<Option<&Verdict>> = vec![None; candidates.len()];
    for v in verdicts {
        let path = candidates.first().map(|a| a.unit_path.as_str()).unwrap_or_default();
        let vsig = signature_of(v.category, path, &v.api, v.line, granularity);
        let exact = sigs.iter().position(|s| *s == vsig);
        let target = exact.or_else(|| {
            let api = normalize_api(&v.api);
            let mut hits = sigs
                .iter()
                .enumerate()
                .filter(|(_, s)| s.category == v.category && s.api == api);
            match (hits.next(), hits.next()) {
                (Some((i, _)), None) => Some(i),
                _ => None,
            }
        });
        if let Some(i) = target {
            assigned[i].get_or_insert(v);
        }
    }
    let mut omitted = Vec::new();
    let finals = candidates
        .into_iter()
        .zip(assigned)
        .enumerate()
        .map(|(i, (alert, verdict))| {
            let (keep, note) = match verdict {
                Some(v) => (v.keep, v.justification.clone()),
                None => {
                    omitted.push(i);
                    (true, None)
                }
            };
            alert.finalize(keep, note).expect("aggregate yields candidates")
        })
        .collect();
    (finals, omitted)
}

/// The API occurs verbatim, or every identifier in it occurs somewhere.
fn api_present(api: &str, content: &str) -> bool {
    let cleaned = api
        .trim()
        .trim_matches(|c| c == '`' || c == '"' || c == '\'')
        .trim_end_matches("()");
    if cleaned.is_empty() || content.contains(cleaned) {
        return true;
    }
    let tokens: Vec<&str> = cleaned
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .collect();
    !tokens.is_empty() && tokens.iter().all(|t| content.contains(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseClass {
    Ok,
    Empty,
    Refusal,
    HallucinationSuspect,
}

/// `HallucinationSuspect` when the response parses to at least one alert
/// and every alert names an API that does not occur in the unit.
pub fn classify_anomaly(
    r: &RawResponse,
    unit: &SourceUnit,
    refusals: &RefusalLexicon,
    lexicon: &CategoryLexicon,
) -> ResponseClass {
    match r.status {
        ResponseStatus::Empty => return ResponseClass::Empty,
        ResponseStatus::Refusal => return ResponseClass::Refusal,
        _ => {}
    }
    match refusals.classify(&r.text) {
        ResponseStatus::Empty => return ResponseClass::Empty,
        ResponseStatus::Refusal => return ResponseClass::Refusal,
        _ => {}
    }
    let setting = DetectionSetting::default();
    match parse_alerts(&r.text, unit, &setting, lexicon) {
        Ok(p) if !p.alerts.is_empty() && p.alerts.iter().all(|a| !api_present(&a.api, &unit.content)) => {
            ResponseClass::HallucinationSuspect
        }
        _ => ResponseClass::Ok,
    }
}

pub struct Detector {
    gateway: Arc<Gateway>,
    profile: ModelProfile,
    prompts: PromptForge,
    lexicon: CategoryLexicon,
    granularity: Granularity,
    exec: Execution,
}

impl Detector {
    pub fn new(gateway: Arc<Gateway>, profile: ModelProfile) -> Self {
        Self {
            gateway,
            profile,
            prompts: PromptForge::default(),
            lexicon: CategoryLexicon::default(),
            granularity: Granularity::default(),
            exec: Execution::default(),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptForge) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn with_lexicon(mut self, lexicon: CategoryLexicon) -> Self {
        self.lexicon = lexicon;
        self
    }

    pub fn with_granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    pub fn prompts(&self) -> &PromptForge {
        &self.prompts
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    /// Issues `query_count` detection queries concurrently and parses every
    /// response that carries text. Single-query failures are kept as
    /// outcomes; only gateway errors (missing recording, oversize prompt)
    /// abort the unit.
    pub fn detect_unit(&self, unit: &SourceUnit, setting: &DetectionSetting) -> Result<ResponseSet, DetectError> {
        let bundle = self.prompts.build_detection_prompt(unit, setting)?;
        let results = par::map_range(self.exec, setting.query_count() as usize, |q| {
            self.gateway.complete(&bundle, &self.profile, q as u32)
        });
        let responses = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let parsed = responses
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status == ResponseStatus::Ok)
            .map(|(q, r)| ParsedEntry {
                query_index: q as u32,
                outcome: parse_alerts(&r.text, unit, setting, &self.lexicon),
            })
            .collect();
        Ok(ResponseSet {
            unit_path: unit.path.clone(),
            setting: *setting,
            responses,
            parsed,
        })
    }

    fn hallucination_anomalies(&self, unit: &SourceUnit, rs: &ResponseSet) -> Vec<Anomaly> {
        rs.responses
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status == ResponseStatus::Ok)
            .filter(|(_, r)| {
                classify_anomaly(r, unit, self.gateway.refusals(), &self.lexicon)
                    == ResponseClass::HallucinationSuspect
            })
            .map(|(q, _)| Anomaly {
                query_index: Some(q as u32),
                kind: AnomalyKind::HallucinationSuspect,
                detail: String::new(),
            })
            .collect()
    }

    /// Runs the validation round over `candidates`. Any failure of the
    /// validation query keeps every candidate and records the fact.
    pub fn validate(
        &self,
        unit: &SourceUnit,
        candidates: Vec<Alert>,
        rs: &ResponseSet,
    ) -> Result<FinalReport, DetectError> {
        let mut anomalies = rs.anomalies();
        anomalies.extend(self.hallucination_anomalies(unit, rs));
        let status = if rs.unanalyzed() {
            UnitStatus::Unanalyzed
        } else {
            UnitStatus::Analyzed
        };
        let mut report = FinalReport {
            unit_path: unit.path.clone(),
            setting: rs.setting,
            status,
            alerts: candidates,
            anomalies: Vec::new(),
            validation_response: None,
        };
        if !rs.setting.validation() {
            anomalies.sort();
            report.anomalies = anomalies;
            return Ok(report);
        }
        let texts = rs.usable_texts();
        let mut unavailable = |detail: &str, report: &mut FinalReport| {
            report.alerts = std::mem::take(&mut report.alerts)
                .into_iter()
                .map(|a| a.finalize(true, None).expect("candidate"))
                .collect();
            anomalies.push(Anomaly {
                query_index: None,
                kind: AnomalyKind::ValidationUnavailable,
                detail: detail.to_string(),
            });
        };
        if texts.is_empty() {
            unavailable("no detection response to validate", &mut report);
        } else {
            let bundle = self.prompts.build_validation_prompt(unit, &texts)?;
            let reply = match self.gateway.complete(&bundle, &self.profile, 0) {
                Err(GatewayError::ContextExceeded { by }) => {
                    unavailable(&format!("validation prompt exceeds the context window by {by} tokens"), &mut report);
                    anomalies.sort();
                    report.anomalies = anomalies;
                    return Ok(report);
                }
                other => other?,
            };
            let verdicts = match reply.status {
                ResponseStatus::Ok => parse_verdicts(&reply.text, &self.lexicon),
                _ => None,
            };
            match verdicts {
                Some(verdicts) => {
                    let (alerts, omitted) =
                        apply_verdicts(std::mem::take(&mut report.alerts), &verdicts, self.granularity);
                    for i in omitted {
                        log::info!(
                            "{}: validation omitted {} ({}); kept",
                            unit.path,
                            alerts[i].api,
                            alerts[i].category
                        );
                    }
                    report.alerts = alerts;
                }
                None => unavailable(&format!("validation response {:?}", reply.status), &mut report),
            }
            report.validation_response = Some(reply.text);
        }
        anomalies.sort();
        report.anomalies = anomalies;
        Ok(report)
    }

    /// Detection, aggregation and validation for one unit.
    pub fn analyze(&self, unit: &SourceUnit, setting: &DetectionSetting) -> Result<FinalReport, DetectError> {
        let rs = self.detect_unit(unit, setting)?;
        let candidates = aggregate(&rs.parsed, self.granularity);
        self.validate(unit, candidates, &rs)
    }

    /// Analyzes units concurrently; results keep input order.
    pub fn analyze_all(
        &self,
        units: &[SourceUnit],
        setting: &DetectionSetting,
    ) -> Vec<Result<FinalReport, DetectError>> {
        par::map(self.exec, units, |u| self.analyze(u, setting))
    }
}

/// Groups final reports by unit path; handy for stable output ordering.
pub fn index_reports(reports: &[FinalReport]) -> BTreeMap<&str, &FinalReport> {
    reports.iter().map(|r| (r.unit_path.as_str(), r)).collect()
}
