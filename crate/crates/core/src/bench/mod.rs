//! Benchmark manifests, adjudication records and scoring.

mod metrics;
mod verdicts;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Alert, Language, LineSpan, MisuseCategory, SourceUnit};
use crate::refinery::LeakLexicon;

pub use metrics::{compute_metrics, percent1, Metric, MetricsRow, VerdictCounts};
pub use verdicts::{
    cross_check, failure_distribution, record_verdict, record_verdict_at, tag_failure_pattern, tally,
    Conflict, FailureAnnotation, FailureDistribution, ResolvedLabel, StoreRecord, TallyError, TallyOutcome,
    VerdictError, VerdictLabel, VerdictRecord, VerdictStore, CONSENSUS_REVIEWER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Complexity {
    /// Misuse within a single method.
    Basic,
    /// Misuse spread across methods or fields.
    Advanced,
    /// Perturbed variant of a basic case.
    Mutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BenchmarkSource {
    CryptoAPIBench,
    MASC,
    ApacheBench,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GroundTruthMisuse {
    pub gtm_id: String,
    pub category: MisuseCategory,
    pub unit_path: String,
    #[serde(default)]
    pub line_span: Option<LineSpan>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkCase {
    pub case_id: String,
    pub complexity: Complexity,
    pub source: BenchmarkSource,
    pub units: Vec<SourceUnit>,
    pub gtms: Vec<GroundTruthMisuse>,
}

impl BenchmarkCase {
    pub fn byte_size(&self) -> u64 {
        self.units.iter().map(|u| u.byte_size).sum()
    }

    pub fn has_unit(&self, path: &str) -> bool {
        self.units.iter().any(|u| u.path == path)
    }

    pub fn gtm(&self, gtm_id: &str) -> Option<&GroundTruthMisuse> {
        self.gtms.iter().find(|g| g.gtm_id == gtm_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Benchmark {
    pub name: String,
    pub source: BenchmarkSource,
    pub sanitized: bool,
    pub cases: Vec<BenchmarkCase>,
}

impl Benchmark {
    pub fn gtm_total(&self) -> u64 {
        self.cases.iter().map(|c| c.gtms.len() as u64).sum()
    }

    /// Case owning the unit at `path`.
    pub fn case_of(&self, path: &str) -> Option<&BenchmarkCase> {
        self.cases.iter().find(|c| c.has_unit(path))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub benchmarks: Vec<Benchmark>,
}

impl Manifest {
    pub fn cases(&self) -> impl Iterator<Item = &BenchmarkCase> {
        self.benchmarks.iter().flat_map(|b| b.cases.iter())
    }

    pub fn units(&self) -> impl Iterator<Item = &SourceUnit> {
        self.cases().flat_map(|c| c.units.iter())
    }

    pub fn gtm_total(&self) -> u64 {
        self.benchmarks.iter().map(Benchmark::gtm_total).sum()
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema violation: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("case {case}: unit file {unit} not found")]
    MissingUnit { case: String, unit: String },
    #[error("benchmark {benchmark}: duplicate case id {case}")]
    DuplicateCase { benchmark: String, case: String },
    #[error("benchmark {benchmark}: duplicate GTM id {gtm}")]
    DuplicateGtm { benchmark: String, gtm: String },
    #[error("case {case}: GTM {gtm} points at {unit}, which the case does not list")]
    GtmOutsideCase { case: String, gtm: String, unit: String },
    #[error("case {case}: name {name} reveals its category through \"{term}\"; sanitize it or mark the benchmark sanitized: false")]
    LeakingName { case: String, name: String, term: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default)]
    benchmarks: Vec<RawBenchmark>,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawBenchmark {
    name: String,
    source: BenchmarkSource,
    #[serde(default = "yes")]
    sanitized: bool,
    #[serde(default)]
    cases: Vec<RawCase>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawCase {
    case_id: String,
    complexity: Complexity,
    units: Vec<String>,
    #[serde(default)]
    gtms: Vec<GroundTruthMisuse>,
}

fn file_stem(path: &str) -> &str {
    let name = path.rsplit(['/', '\\']).next().unwrap_or(path);
    name.split_once('.').map_or(name, |(stem, _)| stem)
}

/// Loads a manifest; unit paths are relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    load_manifest_with(path, &LeakLexicon::default())
}

pub fn load_manifest_with(path: &Path, leaks: &LeakLexicon) -> Result<Manifest, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: RawManifest = serde_json::from_str(&text).map_err(|e| ManifestError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut benchmarks = Vec::new();
    for rb in raw.benchmarks {
        let mut case_ids = BTreeSet::new();
        let mut gtm_ids = BTreeSet::new();
        let mut cases = Vec::new();
        for rc in rb.cases {
            if !case_ids.insert(rc.case_id.clone()) {
                return Err(ManifestError::DuplicateCase {
                    benchmark: rb.name,
                    case: rc.case_id,
                });
            }
            if rb.sanitized {
                let names = std::iter::once(rc.case_id.as_str()).chain(rc.units.iter().map(|u| file_stem(u)));
                for name in names {
                    if let Some(term) = leaks.matching_term(name) {
                        return Err(ManifestError::LeakingName {
                            case: rc.case_id.clone(),
                            name: name.to_string(),
                            term: term.to_string(),
                        });
                    }
                }
            }
            let mut units = Vec::new();
            for rel in &rc.units {
                let content = std::fs::read_to_string(root.join(rel)).map_err(|_| ManifestError::MissingUnit {
                    case: rc.case_id.clone(),
                    unit: rel.clone(),
                })?;
                let language = Path::new(rel)
                    .extension()
                    .and_then(|e| e.to_str())
                    .and_then(Language::from_extension)
                    .unwrap_or(Language::Other);
                units.push(SourceUnit::new(rel.clone(), language, content));
            }
            for g in &rc.gtms {
                if !gtm_ids.insert(g.gtm_id.clone()) {
                    return Err(ManifestError::DuplicateGtm {
                        benchmark: rb.name,
                        gtm: g.gtm_id.clone(),
                    });
                }
                if !rc.units.contains(&g.unit_path) {
                    return Err(ManifestError::GtmOutsideCase {
                        case: rc.case_id,
                        gtm: g.gtm_id.clone(),
                        unit: g.unit_path.clone(),
                    });
                }
            }
            cases.push(BenchmarkCase {
                case_id: rc.case_id,
                complexity: rc.complexity,
                source: rb.source,
                units,
                gtms: rc.gtms,
            });
        }
        benchmarks.push(Benchmark {
            name: rb.name,
            source: rb.source,
            sanitized: rb.sanitized,
            cases,
        });
    }
    Ok(Manifest { root, benchmarks })
}

/// Advisory GTM suggestion for a reviewer: the single GTM sharing the
/// alert's category and unit whose span overlaps the alert's (any span
/// matches when either side has none).
pub fn prematch<'a>(alert: &Alert, gtms: &'a [GroundTruthMisuse]) -> Option<&'a GroundTruthMisuse> {
    let mut hits = gtms.iter().filter(|g| {
        g.category == alert.category
            && g.unit_path == alert.unit_path
            && match (g.line_span, alert.line_span) {
                (Some(a), Some(b)) => a.overlaps(&b),
                _ => true,
            }
    });
    match (hits.next(), hits.next()) {
        (Some(g), None) => Some(g),
        _ => None,
    }
}

pub const KB: u64 = 1024;

/// Program size classes; each includes its lower edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBucket {
    UpTo5KB,
    From5To10KB,
    From10To20KB,
    Over20KB,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 4] = [
        SizeBucket::UpTo5KB,
        SizeBucket::From5To10KB,
        SizeBucket::From10To20KB,
        SizeBucket::Over20KB,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SizeBucket::UpTo5KB => "0–5KB",
            SizeBucket::From5To10KB => "5–10KB",
            SizeBucket::From10To20KB => "10–20KB",
            SizeBucket::Over20KB => ">20KB",
        }
    }
}

pub fn bucket_for_bytes(bytes: u64) -> SizeBucket {
    match bytes {
        b if b < 5 * KB => SizeBucket::UpTo5KB,
        b if b < 10 * KB => SizeBucket::From5To10KB,
        b if b < 20 * KB => SizeBucket::From10To20KB,
        _ => SizeBucket::Over20KB,
    }
}

pub fn bucket_size(unit: &SourceUnit) -> SizeBucket {
    bucket_for_bytes(unit.byte_size)
}

impl Manifest {
    /// Manifest JSON with unit paths relative to [`Manifest::root`]; loads
    /// back to an equal manifest.
    pub fn to_json(&self) -> serde_json::Value {
        let benchmarks: Vec<_> = self
            .benchmarks
            .iter()
            .map(|b| {
                let cases: Vec<_> = b
                    .cases
                    .iter()
                    .map(|c| {
                        serde_json::json!({
                            "caseId": c.case_id,
                            "complexity": c.complexity,
                            "units": c.units.iter().map(|u| u.path.as_str()).collect::<Vec<_>>(),
                            "gtms": c.gtms,
                        })
                    })
                    .collect();
                serde_json::json!({
                    "name": b.name,
                    "source": b.source,
                    "sanitized": b.sanitized,
                    "cases": cases,
                })
            })
            .collect();
        serde_json::json!({ "benchmarks": benchmarks })
    }
}

/// Case size: the summed byte size of its units.
pub fn bucket_case(case: &BenchmarkCase) -> SizeBucket {
    bucket_for_bytes(case.byte_size())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BreakdownRow {
    pub label: String,
    pub outcome: TallyOutcome,
}

/// Tallies for a whole benchmark, then per complexity class and per size
/// bucket. Empty slices are omitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Breakdown {
    pub benchmark: String,
    pub overall: TallyOutcome,
    pub by_complexity: Vec<BreakdownRow>,
    pub by_size: Vec<BreakdownRow>,
}

pub fn breakdown(
    store: &VerdictStore,
    benchmark: &Benchmark,
    reports: &[crate::detect::FinalReport],
    setting: &crate::model::DetectionSetting,
) -> Result<Breakdown, TallyError> {
    let overall = tally(store, &benchmark.cases, reports, setting)?;
    let mut by_complexity = Vec::new();
    for cx in [Complexity::Basic, Complexity::Advanced, Complexity::Mutation] {
        let subset: Vec<BenchmarkCase> = benchmark.cases.iter().filter(|c| c.complexity == cx).cloned().collect();
        if !subset.is_empty() {
            by_complexity.push(BreakdownRow {
                label: format!("{cx:?}"),
                outcome: tally(store, &subset, reports, setting)?,
            });
        }
    }
    let mut by_size = Vec::new();
    for bucket in SizeBucket::ALL {
        let subset: Vec<BenchmarkCase> = benchmark.cases.iter().filter(|c| bucket_case(c) == bucket).cloned().collect();
        if !subset.is_empty() {
            by_size.push(BreakdownRow {
                label: bucket.label().to_string(),
                outcome: tally(store, &subset, reports, setting)?,
            });
        }
    }
    Ok(Breakdown {
        benchmark: benchmark.name.clone(),
        overall,
        by_complexity,
        by_size,
    })
}
