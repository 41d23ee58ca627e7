//! Scan driver: ingest results in, per-unit reports and a summary out.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::bench::Manifest;
use crate::detect::{AnomalyKind, Detector, FinalReport, UnitStatus};
use crate::gateway::{guard_context, ContextFit};
use crate::ingest::{is_crypto_relevant, RelevanceConfig, ScanResult, SkipReason};
use crate::model::{AlertStatus, DetectionSetting, SourceUnit};
use crate::par;
use crate::report::{emit_alert_json, emit_sarif, parse_alert_json, ReportError};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum SkipCause {
    Exceeds { by: u64 },
    TooLarge { bytes: u64, limit: u64 },
    Unreadable { message: String },
    Walk { message: String },
}

impl From<SkipReason> for SkipCause {
    fn from(r: SkipReason) -> Self {
        match r {
            SkipReason::TooLarge { bytes, limit } => SkipCause::TooLarge { bytes, limit },
            SkipReason::Unreadable(message) => SkipCause::Unreadable { message },
            SkipReason::Walk(message) => SkipCause::Walk { message },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkippedUnit {
    pub path: String,
    pub cause: SkipCause,
}

/// A unit whose analysis aborted on an operational error (for example a
/// missing recording under replay).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitFailure {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScanSummary {
    pub setting: String,
    pub dry_run: bool,
    pub units_found: usize,
    pub units_analyzed: usize,
    pub units_unanalyzed: usize,
    pub skipped: Vec<SkippedUnit>,
    pub failures: Vec<UnitFailure>,
    pub alerts_kept: usize,
    pub alerts_dropped: usize,
    pub anomalies: BTreeMap<AnomalyKind, usize>,
}

impl ScanSummary {
    /// Units that were in scope but never reached the model.
    pub fn units_skipped(&self) -> usize {
        self.skipped.len()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{} units ({}), {} analyzed, {} unanalyzed, {} skipped, {} failed\n",
            self.units_found,
            self.setting,
            self.units_analyzed,
            self.units_unanalyzed,
            self.units_skipped(),
            self.failures.len()
        );
        if self.dry_run {
            out.push_str("dry run: no queries issued\n");
        } else {
            out.push_str(&format!("alerts: {} kept, {} dropped\n", self.alerts_kept, self.alerts_dropped));
        }
        if !self.anomalies.is_empty() {
            let parts: Vec<String> = self.anomalies.iter().map(|(k, n)| format!("{k:?} {n}")).collect();
            out.push_str(&format!("anomalies: {}\n", parts.join(", ")));
        }
        for s in &self.skipped {
            let why = match &s.cause {
                SkipCause::Exceeds { by } => format!("Exceeds(by {by})"),
                SkipCause::TooLarge { bytes, limit } => format!("TooLarge({bytes} > {limit} bytes)"),
                SkipCause::Unreadable { message } => format!("Unreadable({message})"),
                SkipCause::Walk { message } => format!("Walk({message})"),
            };
            out.push_str(&format!("skipped {}: {why}\n", s.path));
        }
        for f in &self.failures {
            out.push_str(&format!("failed {}: {}\n", f.path, f.error));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanOutcome {
    pub reports: Vec<FinalReport>,
    pub summary: ScanSummary,
}

enum UnitResult {
    Report(FinalReport),
    Skipped(SkippedUnit),
    Failed(UnitFailure),
    Guarded,
}

fn run_unit(unit: &SourceUnit, detector: &Detector, setting: &DetectionSetting, dry_run: bool) -> UnitResult {
    let failed = |error: String| {
        UnitResult::Failed(UnitFailure {
            path: unit.path.clone(),
            error,
        })
    };
    let bundle = match detector.prompts().build_detection_prompt(unit, setting) {
        Ok(b) => b,
        Err(e) => return failed(e.to_string()),
    };
    if let ContextFit::Exceeds { by } = guard_context(&bundle, detector.profile()) {
        return UnitResult::Skipped(SkippedUnit {
            path: unit.path.clone(),
            cause: SkipCause::Exceeds { by },
        });
    }
    if dry_run {
        return UnitResult::Guarded;
    }
    match detector.analyze(unit, setting) {
        Ok(r) => UnitResult::Report(r),
        Err(e) => failed(e.to_string()),
    }
}

/// Context-guards and analyzes every unit of `scan`. With `dry_run` the
/// guard still runs but no query is issued.
pub fn run_scan(scan: &ScanResult, detector: &Detector, setting: &DetectionSetting, dry_run: bool) -> ScanOutcome {
    let results = par::map(detector.execution(), &scan.units, |u| run_unit(u, detector, setting, dry_run));
    let mut summary = ScanSummary {
        setting: setting.label(),
        dry_run,
        units_found: scan.units.len() + scan.diagnostics.len(),
        skipped: scan
            .diagnostics
            .iter()
            .map(|d| SkippedUnit {
                path: d.path.clone(),
                cause: d.reason.clone().into(),
            })
            .collect(),
        ..ScanSummary::default()
    };
    let mut reports = Vec::new();
    for r in results {
        match r {
            UnitResult::Report(rep) => {
                match rep.status {
                    UnitStatus::Analyzed => summary.units_analyzed += 1,
                    UnitStatus::Unanalyzed => summary.units_unanalyzed += 1,
                }
                for a in &rep.alerts {
                    if a.status == AlertStatus::ValidatedDropped {
                        summary.alerts_dropped += 1;
                    } else {
                        summary.alerts_kept += 1;
                    }
                }
                for a in &rep.anomalies {
                    *summary.anomalies.entry(a.kind).or_default() += 1;
                }
                reports.push(rep);
            }
            UnitResult::Skipped(s) => summary.skipped.push(s),
            UnitResult::Failed(f) => summary.failures.push(f),
            UnitResult::Guarded => {}
        }
    }
    summary.skipped.sort();
    summary.failures.sort();
    reports.sort_by(|a, b| a.unit_path.cmp(&b.unit_path));
    ScanOutcome { reports, summary }
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub const REPORTS_DIR: &str = "reports";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SARIF_FILE: &str = "results.sarif.json";

/// Path of a unit's alert document under `out_dir`.
pub fn report_path(out_dir: &Path, unit_path: &str) -> PathBuf {
    let mut p = out_dir.join(REPORTS_DIR);
    for part in unit_path.split('/') {
        p.push(part);
    }
    let mut name = p.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    p.set_file_name(name);
    p
}

/// Report tree: one alert document per unit, the summary and a SARIF log.
/// Every file is replaced atomically, so a crash leaves old or new content.
pub fn write_report_tree(out_dir: &Path, outcome: &ScanOutcome) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for r in &outcome.reports {
        let p = report_path(out_dir, &r.unit_path);
        write_atomic(&p, &emit_alert_json(r))?;
        written.push(p);
    }
    let mut summary = serde_json::to_vec_pretty(&outcome.summary).map_err(std::io::Error::other)?;
    summary.push(b'\n');
    let p = out_dir.join(SUMMARY_FILE);
    write_atomic(&p, &summary)?;
    written.push(p);
    let p = out_dir.join(SARIF_FILE);
    write_atomic(&p, &emit_sarif(&outcome.reports))?;
    written.push(p);
    Ok(written)
}

/// Benchmark units as scan input, so report paths line up with the
/// manifest's unit paths.
pub fn units_from_manifest(manifest: &Manifest, cfg: &RelevanceConfig) -> ScanResult {
    let mut units: Vec<SourceUnit> = manifest
        .units()
        .map(|u| {
            let markers = is_crypto_relevant(u, cfg);
            u.clone().with_markers(markers)
        })
        .collect();
    units.sort_by(|a, b| a.path.cmp(&b.path));
    units.dedup_by(|a, b| a.path == b.path);
    ScanResult {
        units,
        diagnostics: Vec::new(),
    }
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Report {
        path: PathBuf,
        #[source]
        source: ReportError,
    },
}

/// Reads every alert document under `<out_dir>/reports`, sorted by unit.
pub fn load_report_tree(out_dir: &Path) -> Result<Vec<FinalReport>, TreeError> {
    let dir = out_dir.join(REPORTS_DIR);
    let mut out = Vec::new();
    for entry in WalkDir::new(&dir).sort_by_file_name() {
        let entry = entry.map_err(|e| TreeError::Io {
            path: dir.clone(),
            source: e.into(),
        })?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let bytes = fs::read(path).map_err(|source| TreeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let report = parse_alert_json(&bytes).map_err(|source| TreeError::Report {
            path: path.to_path_buf(),
            source,
        })?;
        out.push(report);
    }
    out.sort_by(|a, b| a.unit_path.cmp(&b.unit_path));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_paths_mirror_units() {
        let p = report_path(Path::new("out"), "src/a/Foo.java");
        assert_eq!(p, Path::new("out/reports/src/a/Foo.java.json"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x/y.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
