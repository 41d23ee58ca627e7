//! Output formats: per-unit alert JSON, metrics tables, developer
//! advisories and a SARIF-shaped log.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::bench::{MetricsRow, VerdictCounts};
use crate::detect::{Anomaly, AnomalyKind, FinalReport, UnitStatus};
use crate::model::{
    Alert, AlertStatus, DetectionMode, DetectionSetting, Language, LineSpan, MisuseCategory, SourceUnit,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("metrics table needs at least one row")]
    EmptyTable,
    #[error("advisories are only written for kept alerts, not {0:?}")]
    NotKept(AlertStatus),
    #[error("alert JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("alert JSON: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct SettingDoc {
    mode: DetectionMode,
    validation: bool,
    query_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct AlertEntry {
    category: MisuseCategory,
    category_name: String,
    label: String,
    api: String,
    line_span: Option<LineSpan>,
    root_cause: String,
    recommendation: String,
    support_count: u32,
    status: AlertStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    validation_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct AnomalyEntry {
    query_index: Option<u32>,
    kind: AnomalyKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct AlertDocument {
    unit: String,
    setting: SettingDoc,
    status: UnitStatus,
    alerts: Vec<AlertEntry>,
    anomalies: Vec<AnomalyEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    validation_response: Option<String>,
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report types serialize");
    out.push(b'\n');
    out
}

/// Pretty JSON for one unit, fields in a fixed order, newline-terminated.
pub fn emit_alert_json(report: &FinalReport) -> Vec<u8> {
    let s = &report.setting;
    let doc = AlertDocument {
        unit: report.unit_path.clone(),
        setting: SettingDoc {
            mode: s.mode(),
            validation: s.validation(),
            query_count: s.query_count(),
        },
        status: report.status,
        alerts: report
            .alerts
            .iter()
            .map(|a| AlertEntry {
                category: a.category,
                category_name: a.category.display_name().to_string(),
                label: a.label.clone(),
                api: a.api.clone(),
                line_span: a.line_span,
                root_cause: a.root_cause.clone(),
                recommendation: a.recommendation.clone(),
                support_count: a.support_count,
                status: a.status,
                validation_note: a.validation_note.clone(),
            })
            .collect(),
        anomalies: report
            .anomalies
            .iter()
            .map(|a| AnomalyEntry {
                query_index: a.query_index,
                kind: a.kind,
                detail: a.detail.clone(),
            })
            .collect(),
        validation_response: report.validation_response.clone(),
    };
    pretty(&doc)
}

/// Inverse of [`emit_alert_json`].
pub fn parse_alert_json(bytes: &[u8]) -> Result<FinalReport, ReportError> {
    let doc: AlertDocument = serde_json::from_slice(bytes)?;
    let setting = DetectionSetting::new(doc.setting.mode, doc.setting.validation, doc.setting.query_count)
        .map_err(|e| ReportError::Invalid(e.to_string()))?;
    let alerts = doc
        .alerts
        .into_iter()
        .map(|e| Alert {
            category: e.category,
            label: e.label,
            unit_path: doc.unit.clone(),
            line_span: e.line_span,
            api: e.api,
            root_cause: e.root_cause,
            recommendation: e.recommendation,
            support_count: e.support_count,
            origin_setting: setting,
            status: e.status,
            validation_note: e.validation_note,
        })
        .collect();
    Ok(FinalReport {
        unit_path: doc.unit,
        setting,
        status: doc.status,
        alerts,
        anomalies: doc
            .anomalies
            .into_iter()
            .map(|a| Anomaly {
                query_index: a.query_index,
                kind: a.kind,
                detail: a.detail,
            })
            .collect(),
        validation_response: doc.validation_response,
    })
}

/// Aligned plain-text table with P, R, ACC and the four counts per row.
pub fn emit_metrics_table(rows: &[(String, MetricsRow, VerdictCounts)]) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let header = ["Setting", "P", "R", "ACC", "TP", "FP", "TN", "FN"].map(String::from);
    let mut cells = vec![header.to_vec()];
    for (label, m, c) in rows {
        cells.push(vec![
            label.clone(),
            m.precision.format2(),
            m.recall.format2(),
            m.accuracy.format2(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| cells.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            let pad = widths[i] - cell.chars().count();
            if i == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    Ok(out)
}

const EXCERPT_LINES: u32 = 10;

/// At most ten lines covering the span, centred when the span is shorter.
fn excerpt_window(span: LineSpan, total: u32) -> (u32, u32) {
    let len = span.end() - span.start() + 1;
    if len >= EXCERPT_LINES {
        return (span.start(), span.start() + EXCERPT_LINES - 1);
    }
    let before = (EXCERPT_LINES - len) / 2;
    let start = span.start().saturating_sub(before).max(1);
    let end = (start + EXCERPT_LINES - 1).min(total.max(span.end()));
    let start = end.saturating_sub(EXCERPT_LINES - 1).max(1).min(start);
    (start, end)
}

fn fence_language(lang: Language) -> &'static str {
    match lang {
        Language::Java => "java",
        Language::Python => "python",
        Language::Other => "",
    }
}

/// Markdown advisory for a developer. Dropped alerts are refused.
pub fn emit_advisory(alert: &Alert, unit: &SourceUnit) -> Result<String, ReportError> {
    if !alert.status.is_kept() {
        return Err(ReportError::NotKept(alert.status));
    }
    let name = alert.category.display_name();
    let mut md = String::new();
    let _ = writeln!(md, "# {name}: `{}`\n", alert.api);
    let _ = writeln!(md, "## Summary\n");
    let _ = writeln!(
        md,
        "`{}` in `{}` shows a likely {} issue, reported by {} of {} detection queries.\n",
        alert.api,
        alert.unit_path,
        name.to_lowercase(),
        alert.support_count,
        alert.origin_setting.query_count()
    );
    let _ = writeln!(md, "## Location\n");
    match alert.line_span {
        Some(s) => {
            let _ = writeln!(md, "`{}:{}`\n", alert.unit_path, s);
        }
        None => {
            let _ = writeln!(md, "`{}`\n", alert.unit_path);
        }
    }
    let _ = writeln!(md, "## Category\n");
    let _ = writeln!(md, "{name} (`{}`)\n", alert.category.tag());
    let _ = writeln!(md, "## Root Cause\n");
    let _ = writeln!(md, "{}\n", alert.root_cause);
    let _ = writeln!(md, "## Recommendation\n");
    let rec = if alert.recommendation.is_empty() {
        "No specific fix was suggested."
    } else {
        &alert.recommendation
    };
    let _ = writeln!(md, "{rec}\n");
    let _ = writeln!(md, "## Code Excerpt\n");
    match alert.line_span {
        Some(span) => {
            let total = unit.content.lines().count() as u32;
            let (start, end) = excerpt_window(span, total);
            let lines = unit.lines(start, end);
            let width = end.to_string().len();
            let _ = writeln!(md, "```{}", fence_language(unit.language));
            for (n, text) in lines {
                let mark = if n >= span.start() && n <= span.end() { ">" } else { " " };
                let _ = writeln!(md, "{mark}{n:>width$} | {text}");
            }
            let _ = writeln!(md, "```\n");
        }
        None => {
            let _ = writeln!(md, "Whole-unit finding; no specific lines were given.\n");
        }
    }
    if !alert.origin_setting.validation() {
        let _ = writeln!(md, "## Caveats\n");
        let _ = writeln!(
            md,
            "This finding comes from detection alone and was not re-examined by a validation \
             query. Unvalidated findings carry a higher false-positive rate; confirm before acting.\n"
        );
    }
    while md.ends_with("\n\n") {
        md.pop();
    }
    Ok(md)
}

/// SARIF 2.1.0-shaped log over the kept alerts of every report.
pub fn emit_sarif(reports: &[FinalReport]) -> Vec<u8> {
    let rules: Vec<_> = MisuseCategory::ALL
        .iter()
        .map(|c| {
            json!({
                "id": c.tag(),
                "name": c.tag(),
                "shortDescription": {"text": c.display_name()},
                "fullDescription": {"text": c.description()},
            })
        })
        .collect();
    let mut results = Vec::new();
    for r in reports {
        for a in r.kept() {
            let mut physical = json!({"artifactLocation": {"uri": a.unit_path}});
            if let Some(s) = a.line_span {
                physical["region"] = json!({"startLine": s.start(), "endLine": s.end()});
            }
            results.push(json!({
                "ruleId": a.category.tag(),
                "level": "warning",
                "message": {"text": format!("{}: {}", a.api, a.root_cause)},
                "locations": [{"physicalLocation": physical}],
                "properties": {
                    "api": a.api,
                    "supportCount": a.support_count,
                    "status": a.status,
                    "setting": r.setting.label(),
                },
            }));
        }
    }
    pretty(&json!({
        "$schema": "https://json.schemastore.org/sarif-2.1.0.json",
        "version": "2.1.0",
        "runs": [{
            "tool": {"driver": {
                "name": "cryptoscope",
                "version": env!("CARGO_PKG_VERSION"),
                "rules": rules,
            }},
            "results": results,
        }],
    }))
}
