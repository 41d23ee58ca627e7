//! Append-only adjudication store and the counts derived from it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{percent1, BenchmarkCase, VerdictCounts};
use crate::detect::{FinalReport, UnitStatus};
use crate::model::{Alert, DetectionSetting, FailureKind, FailurePattern, SemanticsSubtype};
use crate::signature::{alert_signature, Granularity, SignatureKey};

/// Reviewer id whose records settle disagreements.
pub const CONSENSUS_REVIEWER: &str = "consensus";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VerdictLabel {
    TP(String),
    FP,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub alert_signature: SignatureKey,
    pub case_id: String,
    pub label: VerdictLabel,
    pub reviewer_id: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureAnnotation {
    pub alert_signature: SignatureKey,
    pub case_id: String,
    pub reviewer_id: String,
    pub pattern: FailurePattern,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum StoreRecord {
    Verdict(VerdictRecord),
    FailurePattern(FailureAnnotation),
}

#[derive(Debug, Error)]
pub enum VerdictError {
    #[error("verdict store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("verdict store {path}, line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("case {case} has no GTM {gtm}")]
    UnknownGtm { case: String, gtm: String },
    #[error("alert in {unit} does not belong to case {case}")]
    ForeignAlert { case: String, unit: String },
    #[error("reviewer id must not be empty")]
    EmptyReviewer,
    #[error("alert {0} is not adjudicated as a false positive")]
    NotFalsePositive(SignatureKey),
}

/// JSON-lines store. Records are only ever appended; the latest record by a
/// reviewer for an alert supersedes that reviewer's earlier ones.
pub struct VerdictStore {
    path: PathBuf,
    file: File,
    records: Vec<StoreRecord>,
}

impl VerdictStore {
    pub fn open(path: &Path) -> Result<Self, VerdictError> {
        let io = |source| VerdictError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        let text = std::fs::read_to_string(path).map_err(io)?;
        // a crash mid-append can leave the final line unterminated
        let (body, tail) = match text.rfind('\n') {
            _ if text.is_empty() || text.ends_with('\n') => (text.as_str(), ""),
            Some(i) => text.split_at(i + 1),
            None => ("", text.as_str()),
        };
        let mut records = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| VerdictError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        if !tail.is_empty() {
            match serde_json::from_str(tail) {
                Ok(r) => {
                    records.push(r);
                    file.write_all(b"\n").map_err(io)?;
                }
                Err(_) => {
                    log::warn!("{}: dropping unterminated last record", path.display());
                    file.set_len(body.len() as u64).map_err(io)?;
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            records,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn verdicts(&self) -> impl Iterator<Item = &VerdictRecord> {
        self.records.iter().filter_map(|r| match r {
            StoreRecord::Verdict(v) => Some(v),
            _ => None,
        })
    }

    pub fn annotations(&self) -> impl Iterator<Item = &FailureAnnotation> {
        self.records.iter().filter_map(|r| match r {
            StoreRecord::FailurePattern(a) => Some(a),
            _ => None,
        })
    }

    pub fn append(&mut self, record: StoreRecord) -> Result<(), VerdictError> {
        let mut line = serde_json::to_string(&record).expect("records serialize");
        line.push('\n');
        let io = |source| VerdictError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.records.push(record);
        Ok(())
    }

    /// Latest record per reviewer for every alert signature. Ties on
    /// timestamp go to the record written later.
    fn latest_by_reviewer(&self) -> BTreeMap<&SignatureKey, BTreeMap<&str, &VerdictRecord>> {
        let mut out: BTreeMap<&SignatureKey, BTreeMap<&str, &VerdictRecord>> = BTreeMap::new();
        for v in self.verdicts() {
            let slot = out.entry(&v.alert_signature).or_default();
            match slot.get(v.reviewer_id.as_str()) {
                Some(prev) if prev.timestamp > v.timestamp => {}
                _ => {
                    slot.insert(&v.reviewer_id, v);
                }
            }
        }
        out
    }

    /// Effective label of every adjudicated alert.
    pub fn resolve(&self) -> BTreeMap<SignatureKey, ResolvedLabel> {
        self.latest_by_reviewer()
            .into_iter()
            .map(|(sig, by)| {
                let resolved = match by.get(CONSENSUS_REVIEWER) {
                    Some(c) => ResolvedLabel::Agreed(c.label.clone()),
                    None => {
                        let labels: BTreeSet<&VerdictLabel> = by.values().map(|r| &r.label).collect();
                        if labels.len() == 1 {
                            ResolvedLabel::Agreed(labels.into_iter().next().expect("one label").clone())
                        } else {
                            ResolvedLabel::Conflicted(
                                by.iter().map(|(r, v)| (r.to_string(), v.label.clone())).collect(),
                            )
                        }
                    }
                };
                (sig.clone(), resolved)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedLabel {
    Agreed(VerdictLabel),
    /// Reviewer id and label, for every reviewer who disagrees.
    Conflicted(Vec<(String, VerdictLabel)>),
}

pub fn record_verdict(
    store: &mut VerdictStore,
    case: &BenchmarkCase,
    alert: &Alert,
    label: VerdictLabel,
    reviewer_id: &str,
) -> Result<VerdictRecord, VerdictError> {
    record_verdict_at(store, case, alert, label, reviewer_id, Utc::now())
}

pub fn record_verdict_at(
    store: &mut VerdictStore,
    case: &BenchmarkCase,
    alert: &Alert,
    label: VerdictLabel,
    reviewer_id: &str,
    timestamp: DateTime<Utc>,
) -> Result<VerdictRecord, VerdictError> {
    if reviewer_id.trim().is_empty() {
        return Err(VerdictError::EmptyReviewer);
    }
    if !case.has_unit(&alert.unit_path) {
        return Err(VerdictError::ForeignAlert {
            case: case.case_id.clone(),
            unit: alert.unit_path.clone(),
        });
    }
    if let VerdictLabel::TP(gtm) = &label {
        if case.gtm(gtm).is_none() {
            return Err(VerdictError::UnknownGtm {
                case: case.case_id.clone(),
                gtm: gtm.clone(),
            });
        }
    }
    let record = VerdictRecord {
        alert_signature: alert_signature(alert, Granularity::default()),
        case_id: case.case_id.clone(),
        label,
        reviewer_id: reviewer_id.to_string(),
        timestamp,
    };
    store.append(StoreRecord::Verdict(record.clone()))?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub case_id: String,
    pub alert_signature: SignatureKey,
    pub first: VerdictLabel,
    pub second: VerdictLabel,
}

/// Alerts both reviewers labeled differently, without a consensus record.
pub fn cross_check(store: &VerdictStore, reviewers: (&str, &str)) -> Vec<Conflict> {
    let mut out: Vec<Conflict> = store
        .latest_by_reviewer()
        .into_iter()
        .filter(|(_, by)| !by.contains_key(CONSENSUS_REVIEWER))
        .filter_map(|(sig, by)| {
            let a = by.get(reviewers.0)?;
            let b = by.get(reviewers.1)?;
            (a.label != b.label).then(|| Conflict {
                case_id: a.case_id.clone(),
                alert_signature: sig.clone(),
                first: a.label.clone(),
                second: b.label.clone(),
            })
        })
        .collect();
    out.sort_by(|x, y| (&x.case_id, &x.alert_signature).cmp(&(&y.case_id, &y.alert_signature)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyOutcome {
    pub counts: VerdictCounts,
    /// Cases left out because a unit was never analyzed.
    pub unanalyzed_cases: u64,
    /// Kept alerts nobody has labeled yet; they count toward nothing.
    pub unadjudicated_alerts: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TallyError {
    #[error("{0} alert(s) carry conflicting labels without a consensus record")]
    UnresolvedConflicts(usize),
}

/// Confusion counts for `cases` under one detection setting.
///
/// A case counts only when every one of its units has an analyzed report.
/// TP counts distinct GTMs hit by a TP-labeled kept alert, FP counts kept
/// alerts labeled FP, FN counts GTMs no kept alert hit, and TN counts cases
/// with neither GTMs nor kept alerts.
pub fn tally(
    store: &VerdictStore,
    cases: &[BenchmarkCase],
    reports: &[FinalReport],
    setting: &DetectionSetting,
) -> Result<TallyOutcome, TallyError> {
    let resolved = store.resolve();
    let conflicts = resolved
        .values()
        .filter(|r| matches!(r, ResolvedLabel::Conflicted(_)))
        .count();
    if conflicts > 0 {
        return Err(TallyError::UnresolvedConflicts(conflicts));
    }
    let by_unit: HashMap<&str, &FinalReport> = reports
        .iter()
        .filter(|r| r.setting == *setting)
        .map(|r| (r.unit_path.as_str(), r))
        .collect();
    let mut out = TallyOutcome {
        counts: VerdictCounts {
            gtm_total: cases.iter().map(|c| c.gtms.len() as u64).sum(),
            ..Default::default()
        },
        unanalyzed_cases: 0,
        unadjudicated_alerts: 0,
    };
    for case in cases {
        let reports: Option<Vec<&FinalReport>> = case.units.iter().map(|u| by_unit.get(u.path.as_str()).copied()).collect();
        let Some(reports) = reports.filter(|rs| rs.iter().all(|r| r.status == UnitStatus::Analyzed)) else {
            out.unanalyzed_cases += 1;
            continue;
        };
        let mut hit = BTreeSet::new();
        let mut kept = 0u64;
        for alert in reports.iter().flat_map(|r| r.kept()) {
            kept += 1;
            match resolved.get(&alert_signature(alert, Granularity::default())) {
                Some(ResolvedLabel::Agreed(VerdictLabel::TP(g))) if case.gtm(g).is_some() => {
                    hit.insert(g.as_str());
                }
                Some(ResolvedLabel::Agreed(VerdictLabel::TP(g))) => {
                    log::warn!("case {}: TP label names GTM {g} from another case", case.case_id);
                    out.unadjudicated_alerts += 1;
                }
                Some(ResolvedLabel::Agreed(VerdictLabel::FP)) => out.counts.fp += 1,
                _ => out.unadjudicated_alerts += 1,
            }
        }
        out.counts.tp += hit.len() as u64;
        out.counts.fn_ += (case.gtms.len() - hit.len()) as u64;
        if case.gtms.is_empty() && kept == 0 {
            out.counts.tn += 1;
        }
    }
    Ok(out)
}

/// Annotates an alert whose effective label is FP with its failure pattern.
pub fn tag_failure_pattern(
    store: &mut VerdictStore,
    case: &BenchmarkCase,
    alert: &Alert,
    pattern: FailurePattern,
    reviewer_id: &str,
) -> Result<FailureAnnotation, VerdictError> {
    if reviewer_id.trim().is_empty() {
        return Err(VerdictError::EmptyReviewer);
    }
    let sig = alert_signature(alert, Granularity::default());
    if store.resolve().get(&sig) != Some(&ResolvedLabel::Agreed(VerdictLabel::FP)) {
        return Err(VerdictError::NotFalsePositive(sig));
    }
    let annotation = FailureAnnotation {
        alert_signature: sig,
        case_id: case.case_id.clone(),
        reviewer_id: reviewer_id.to_string(),
        pattern,
        timestamp: Utc::now(),
    };
    store.append(StoreRecord::FailurePattern(annotation.clone()))?;
    Ok(annotation)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FailureDistribution {
    pub total: u64,
    pub by_kind: BTreeMap<FailureKind, u64>,
    pub by_subtype: BTreeMap<SemanticsSubtype, u64>,
}

impl FailureDistribution {
    pub fn kind_share(&self, kind: FailureKind) -> String {
        percent1(self.by_kind.get(&kind).copied().unwrap_or(0), self.total)
    }

    /// Share of all annotated false positives.
    pub fn subtype_share(&self, sub: SemanticsSubtype) -> String {
        percent1(self.by_subtype.get(&sub).copied().unwrap_or(0), self.total)
    }

    /// Share among code-semantics misunderstandings only.
    pub fn subtype_share_within_semantics(&self, sub: SemanticsSubtype) -> String {
        let within = self
            .by_kind
            .get(&FailureKind::CodeSemanticsMisunderstanding)
            .copied()
            .unwrap_or(0);
        percent1(self.by_subtype.get(&sub).copied().unwrap_or(0), within)
    }
}

/// Pattern counts over annotated alerts, latest annotation per alert.
pub fn failure_distribution(store: &VerdictStore) -> FailureDistribution {
    let mut latest: BTreeMap<&SignatureKey, &FailureAnnotation> = BTreeMap::new();
    for a in store.annotations() {
        match latest.get(&a.alert_signature) {
            Some(prev) if prev.timestamp > a.timestamp => {}
            _ => {
                latest.insert(&a.alert_signature, a);
            }
        }
    }
    let mut d = FailureDistribution::default();
    for a in latest.values() {
        d.total += 1;
        *d.by_kind.entry(a.pattern.pattern()).or_default() += 1;
        if let Some(sub) = a.pattern.sub() {
            *d.by_subtype.entry(sub).or_default() += 1;
        }
    }
    d
}
