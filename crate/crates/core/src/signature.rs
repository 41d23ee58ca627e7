//! Deduplication identity for alerts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Alert, LineSpan, MisuseCategory};

/// How coarsely the line position participates in alert identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Granularity {
    /// Exact start line.
    #[default]
    StartLine,
    /// Start line divided into buckets of this many lines.
    Lines(u32),
    /// Position ignored; one identity per (category, unit, api).
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LineBucket {
    Unit,
    Line(u32),
    Bucket { size: u32, index: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SignatureKey {
    pub category: MisuseCategory,
    pub unit_path: String,
    pub api: String,
    pub line: LineBucket,
}

impl fmt::Display for SignatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}|", self.category, self.unit_path, self.api)?;
        match self.line {
            LineBucket::Unit => write!(f, "unit"),
            LineBucket::Line(n) => write!(f, "L{n}"),
            LineBucket::Bucket { size, index } => write!(f, "B{index}x{size}"),
        }
    }
}

/// Case-folded, whitespace-free form of an API reference.
pub fn normalize_api(api: &str) -> String {
    let mut s: String = api
        .trim()
        .trim_matches(|c| c == '`' || c == '"' || c == '\'')
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    if s.ends_with("()") {
        s.truncate(s.len() - 2);
    }
    s
}

pub fn line_bucket(span: Option<LineSpan>, granularity: Granularity) -> LineBucket {
    match (span, granularity) {
        (None, _) | (_, Granularity::Unit) => LineBucket::Unit,
        (Some(s), Granularity::StartLine) => LineBucket::Line(s.start()),
        (Some(s), Granularity::Lines(size)) => {
            let size = size.max(1);
            LineBucket::Bucket {
                size,
                index: (s.start() - 1) / size,
            }
        }
    }
}

pub fn alert_signature(alert: &Alert, granularity: Granularity) -> SignatureKey {
    signature_of(
        alert.category,
        &alert.unit_path,
        &alert.api,
        alert.line_span,
        granularity,
    )
}

pub fn signature_of(
    category: MisuseCategory,
    unit_path: &str,
    api: &str,
    span: Option<LineSpan>,
    granularity: Granularity,
) -> SignatureKey {
    SignatureKey {
        category,
        unit_path: unit_path.to_string(),
        api: normalize_api(api),
        line: line_bucket(span, granularity),
    }
}
