//! Domain types shared by every stage of the scanner and the benchmark harness.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::estimate_text_tokens;

/// Misuse taxonomy tag. Six in-taxonomy categories plus a catch-all for
/// findings that unconstrained detection reports outside the taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MisuseCategory {
    BrokenAlgorithm,
    ImproperCertValidation,
    InsufficientRandomness,
    InadequateStrength,
    HardcodedCredentials,
    LessSecureNegotiation,
    OutOfTaxonomy,
}

impl MisuseCategory {
    /// The six categories a task-aware prompt enumerates, in prompt order.
    pub const TAXONOMY: [MisuseCategory; 6] = [
        MisuseCategory::BrokenAlgorithm,
        MisuseCategory::ImproperCertValidation,
        MisuseCategory::InsufficientRandomness,
        MisuseCategory::InadequateStrength,
        MisuseCategory::HardcodedCredentials,
        MisuseCategory::LessSecureNegotiation,
    ];

    pub const ALL: [MisuseCategory; 7] = [
        MisuseCategory::BrokenAlgorithm,
        MisuseCategory::ImproperCertValidation,
        MisuseCategory::InsufficientRandomness,
        MisuseCategory::InadequateStrength,
        MisuseCategory::HardcodedCredentials,
        MisuseCategory::LessSecureNegotiation,
        MisuseCategory::OutOfTaxonomy,
    ];

    /// Stable tag used in data files and serialized output.
    pub fn tag(self) -> &'static str {
        match self {
            MisuseCategory::BrokenAlgorithm => "BrokenAlgorithm",
            MisuseCategory::ImproperCertValidation => "ImproperCertValidation",
            MisuseCategory::InsufficientRandomness => "InsufficientRandomness",
            MisuseCategory::InadequateStrength => "InadequateStrength",
            MisuseCategory::HardcodedCredentials => "HardcodedCredentials",
            MisuseCategory::LessSecureNegotiation => "LessSecureNegotiation",
            MisuseCategory::OutOfTaxonomy => "OutOfTaxonomy",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.tag() == tag)
    }

    /// Human-readable category name, as shown to the model and to developers.
    pub fn display_name(self) -> &'static str {
        match self {
            MisuseCategory::BrokenAlgorithm => "Use of a Broken or Risky Cryptographic Algorithm",
            MisuseCategory::ImproperCertValidation => "Improper Certificate Validation",
            MisuseCategory::InsufficientRandomness => "Use of Insufficiently Random Values",
            MisuseCategory::InadequateStrength => "Inadequate Encryption Strength",
            MisuseCategory::HardcodedCredentials => "Use of Hardcoded Credentials",
            MisuseCategory::LessSecureNegotiation => {
                "Selection of Less-Secure Algorithm During Negotiation"
            }
            MisuseCategory::OutOfTaxonomy => "Other Cryptographic Issue",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            MisuseCategory::BrokenAlgorithm => {
                "Ciphers, modes or digests with known practical weaknesses, such as DES, \
                 3DES, RC4, Blowfish, ECB mode, MD2, MD4, MD5 or SHA-1 where collision \
                 resistance matters."
            }
            MisuseCategory::ImproperCertValidation => {
                "TLS peers accepted without verifying the certificate chain or hostname, \
                 for example trust managers that accept every certificate or hostname \
                 verifiers that always return true."
            }
            MisuseCategory::InsufficientRandomness => {
                "Security-sensitive values (keys, IVs, nonces, salts, tokens) drawn from a \
                 predictable source such as java.util.Random, Math.random, the random \
                 module, or a SecureRandom seeded with a constant."
            }
            MisuseCategory::InadequateStrength => {
                "Parameters too weak for current guidance: short symmetric or RSA keys, \
                 low password-based key derivation iteration counts, or short and static \
                 salts."
            }
            MisuseCategory::HardcodedCredentials => {
                "Keys, passwords, key store passphrases or other secrets embedded as \
                 literals in source code."
            }
            MisuseCategory::LessSecureNegotiation => {
                "Protocol or cipher suite configuration that permits downgrade to obsolete \
                 versions such as SSLv3, TLS 1.0 or TLS 1.1, or to weak cipher suites."
            }
            MisuseCategory::OutOfTaxonomy => {
                "A reported cryptographic weakness that does not fit the six categories."
            }
        }
    }

    pub fn is_in_taxonomy(self) -> bool {
        self != MisuseCategory::OutOfTaxonomy
    }
}

impl fmt::Display for MisuseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DetectionMode {
    Unconstrained,
    TaskAware,
}

impl DetectionMode {
    pub fn short(self) -> &'static str {
        match self {
            DetectionMode::Unconstrained => "UC",
            DetectionMode::TaskAware => "TA",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SettingError {
    #[error("query count must be at least 1")]
    ZeroQueries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
struct SettingRepr {
    mode: DetectionMode,
    validation: bool,
    query_count: u32,
}

/// One cell of the UC/TA by with/without-validation grid, plus the number
/// of independent detection queries issued per unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SettingRepr")]
pub struct DetectionSetting {
    mode: DetectionMode,
    validation: bool,
    query_count: u32,
}

impl TryFrom<SettingRepr> for DetectionSetting {
    type Error = SettingError;

    fn try_from(r: SettingRepr) -> Result<Self, Self::Error> {
        DetectionSetting::new(r.mode, r.validation, r.query_count)
    }
}

impl DetectionSetting {
    pub const DEFAULT_QUERY_COUNT: u32 = 5;

    pub fn new(mode: DetectionMode, validation: bool, query_count: u32) -> Result<Self, SettingError> {
        if query_count == 0 {
            return Err(SettingError::ZeroQueries);
        }
        Ok(Self {
            mode,
            validation,
            query_count,
        })
    }

    pub fn task_aware() -> Self {
        Self {
            mode: DetectionMode::TaskAware,
            validation: true,
            query_count: Self::DEFAULT_QUERY_COUNT,
        }
    }

    pub fn unconstrained() -> Self {
        Self {
            mode: DetectionMode::Unconstrained,
            validation: true,
            query_count: Self::DEFAULT_QUERY_COUNT,
        }
    }

    pub fn mode(&self) -> DetectionMode {
        self.mode
    }

    pub fn validation(&self) -> bool {
        self.validation
    }

    pub fn query_count(&self) -> u32 {
        self.query_count
    }

    pub fn with_validation(mut self, validation: bool) -> Self {
        self.validation = validation;
        self
    }

    pub fn with_query_count(self, query_count: u32) -> Result<Self, SettingError> {
        Self::new(self.mode, self.validation, query_count)
    }

    /// Table-style label, e.g. `TA w/V`.
    pub fn label(&self) -> String {
        let v = if self.validation { "w/V" } else { "w/oV" };
        format!("{} {}", self.mode.short(), v)
    }
}

impl Default for DetectionSetting {
    fn default() -> Self {
        Self::task_aware()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    Java,
    Python,
    Other,
}

impl Language {
    pub fn from_extension(ext: &str) -> Option<Language> {
        match ext.to_ascii_lowercase().as_str() {
            "java" => Some(Language::Java),
            "py" => Some(Language::Python),
            "kt" | "kts" | "scala" | "groovy" => Some(Language::Other),
            _ => None,
        }
    }
}

/// One class-level source file handed to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceUnit {
    pub path: String,
    pub language: Language,
    pub content: String,
    pub byte_size: u64,
    pub token_estimate: u64,
    pub crypto_markers: Vec<String>,
}

impl SourceUnit {
    pub fn new(path: impl Into<String>, language: Language, content: impl Into<String>) -> Self {
        let content = content.into();
        Self {
            path: path.into(),
            language,
            byte_size: content.len() as u64,
            token_estimate: estimate_text_tokens(&content),
            content,
            crypto_markers: Vec::new(),
        }
    }

    pub fn with_markers(mut self, markers: Vec<String>) -> Self {
        self.crypto_markers = markers;
        self
    }

    /// Replaces the content, keeping size and token estimate consistent.
    pub fn with_content(mut self, content: String) -> Self {
        self.byte_size = content.len() as u64;
        self.token_estimate = estimate_text_tokens(&content);
        self.content = content;
        self
    }

    pub fn is_crypto_relevant(&self) -> bool {
        !self.crypto_markers.is_empty()
    }

    /// Lines `start..=end` (1-based), clamped to the file.
    pub fn lines(&self, start: u32, end: u32) -> Vec<(u32, &str)> {
        self.content
            .lines()
            .enumerate()
            .map(|(i, l)| (i as u32 + 1, l))
            .filter(|(n, _)| *n >= start && *n <= end)
            .collect()
    }
}

/// Inclusive 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 2]", into = "[u32; 2]")]
pub struct LineSpan {
    start: u32,
    end: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid line span {start}-{end}")]
pub struct LineSpanError {
    pub start: u32,
    pub end: u32,
}

impl LineSpan {
    pub fn new(start: u32, end: u32) -> Result<Self, LineSpanError> {
        if start == 0 || end < start {
            return Err(LineSpanError { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn line(n: u32) -> Result<Self, LineSpanError> {
        Self::new(n, n)
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn end(&self) -> u32 {
        self.end
    }

    pub fn overlaps(&self, other: &LineSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl TryFrom<[u32; 2]> for LineSpan {
    type Error = LineSpanError;

    fn try_from(v: [u32; 2]) -> Result<Self, Self::Error> {
        LineSpan::new(v[0], v[1])
    }
}

impl From<LineSpan> for [u32; 2] {
    fn from(s: LineSpan) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for LineSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{}", self.start)
        } else {
            write!(f, "{}-{}", self.start, self.end)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlertStatus {
    Candidate,
    ValidatedKept,
    ValidatedDropped,
}

impl AlertStatus {
    /// Kept for reporting purposes: validated-kept, or any candidate when
    /// validation was not run.
    pub fn is_kept(self) -> bool {
        matches!(self, AlertStatus::Candidate | AlertStatus::ValidatedKept)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("alert already finalized as {0:?}")]
pub struct StatusError(pub AlertStatus);

/// One model-reported misuse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub category: MisuseCategory,
    /// Category label exactly as the model wrote it.
    pub label: String,
    pub unit_path: String,
    pub line_span: Option<LineSpan>,
    pub api: String,
    pub root_cause: String,
    pub recommendation: String,
    pub support_count: u32,
    pub origin_setting: DetectionSetting,
    pub status: AlertStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_note: Option<String>,
}

impl Alert {
    /// Moves a candidate to its validated state. Validated alerts never move again.
    pub fn finalize(mut self, keep: bool, note: Option<String>) -> Result<Alert, StatusError> {
        if self.status != AlertStatus::Candidate {
            return Err(StatusError(self.status));
        }
        self.status = if keep {
            AlertStatus::ValidatedKept
        } else {
            AlertStatus::ValidatedDropped
        };
        self.validation_note = note;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureKind {
    ErroneousCryptoKnowledge,
    CodeSemanticsMisunderstanding,
    HallucinationOrDoS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SemanticsSubtype {
    SecureImplementationOversight,
    VariableMisinterpretation,
    ContextInappropriate,
    ContextualBlindSpot,
    PathInsensitive,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("subtype {sub:?} is only valid for CodeSemanticsMisunderstanding, not {kind:?}")]
pub struct FailurePatternError {
    pub kind: FailureKind,
    pub sub: SemanticsSubtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
struct FailurePatternRepr {
    pattern: FailureKind,
    #[serde(default)]
    sub: Option<SemanticsSubtype>,
}

/// Root-cause class assigned to a false positive during review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "FailurePatternRepr")]
pub struct FailurePattern {
    pattern: FailureKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    sub: Option<SemanticsSubtype>,
}

impl TryFrom<FailurePatternRepr> for FailurePattern {
    type Error = FailurePatternError;

    fn try_from(r: FailurePatternRepr) -> Result<Self, Self::Error> {
        FailurePattern::new(r.pattern, r.sub)
    }
}

impl FailurePattern {
    pub fn new(pattern: FailureKind, sub: Option<SemanticsSubtype>) -> Result<Self, FailurePatternError> {
        match (pattern, sub) {
            (FailureKind::CodeSemanticsMisunderstanding, _) | (_, None) => Ok(Self { pattern, sub }),
            (kind, Some(sub)) => Err(FailurePatternError { kind, sub }),
        }
    }

    pub fn pattern(&self) -> FailureKind {
        self.pattern
    }

    pub fn sub(&self) -> Option<SemanticsSubtype> {
        self.sub
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alert() -> Alert {
        Alert {
            category: MisuseCategory::BrokenAlgorithm,
            label: "weak cipher".into(),
            unit_path: "A.java".into(),
            line_span: None,
            api: "DES".into(),
            root_cause: "DES is broken".into(),
            recommendation: "use AES/GCM".into(),
            support_count: 1,
            origin_setting: DetectionSetting::task_aware(),
            status: AlertStatus::Candidate,
            validation_note: None,
        }
    }

    #[test]
    fn zero_queries_rejected() {
        assert_eq!(
            DetectionSetting::new(DetectionMode::TaskAware, true, 0),
            Err(SettingError::ZeroQueries)
        );
        let err = serde_json::from_str::<DetectionSetting>(
            r#"{"mode":"TaskAware","validation":true,"query_count":0}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn setting_labels_cover_the_grid() {
        let labels: Vec<String> = [DetectionMode::Unconstrained, DetectionMode::TaskAware]
            .into_iter()
            .flat_map(|m| [false, true].map(|v| DetectionSetting::new(m, v, 5).unwrap().label()))
            .collect();
        assert_eq!(labels, ["UC w/oV", "UC w/V", "TA w/oV", "TA w/V"]);
    }

    #[test]
    fn status_moves_once() {
        let kept = alert().finalize(true, None).unwrap();
        assert_eq!(kept.status, AlertStatus::ValidatedKept);
        assert_eq!(
            kept.clone().finalize(false, None),
            Err(StatusError(AlertStatus::ValidatedKept))
        );
        let dropped = alert().finalize(false, Some("fp".into())).unwrap();
        assert_eq!(
            dropped.finalize(true, None),
            Err(StatusError(AlertStatus::ValidatedDropped))
        );
    }

    #[test]
    fn line_span_rules() {
        assert!(LineSpan::new(0, 1).is_err());
        assert!(LineSpan::new(5, 4).is_err());
        let a = LineSpan::new(3, 6).unwrap();
        assert!(a.overlaps(&LineSpan::line(6).unwrap()));
        assert!(!a.overlaps(&LineSpan::line(7).unwrap()));
        assert_eq!(serde_json::to_string(&a).unwrap(), "[3,6]");
        assert!(serde_json::from_str::<LineSpan>("[9,2]").is_err());
    }

    #[test]
    fn failure_subtype_only_under_semantics() {
        assert!(FailurePattern::new(
            FailureKind::CodeSemanticsMisunderstanding,
            Some(SemanticsSubtype::PathInsensitive)
        )
        .is_ok());
        assert!(FailurePattern::new(
            FailureKind::HallucinationOrDoS,
            Some(SemanticsSubtype::PathInsensitive)
        )
        .is_err());
        assert!(FailurePattern::new(FailureKind::ErroneousCryptoKnowledge, None).is_ok());
    }

    #[test]
    fn unit_sizes_follow_content() {
        let u = SourceUnit::new("a.py", Language::Python, "héllo");
        assert_eq!(u.byte_size, 6);
        let u = u.with_content("x".repeat(9));
        assert_eq!(u.byte_size, 9);
        assert_eq!(u.token_estimate, 3);
    }

    #[test]
    fn tags_round_trip() {
        for c in MisuseCategory::ALL {
            assert_eq!(MisuseCategory::from_tag(c.tag()), Some(c));
        }
        assert_eq!(MisuseCategory::TAXONOMY.len(), 6);
    }
}
