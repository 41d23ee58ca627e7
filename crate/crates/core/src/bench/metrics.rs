//! Precision, recall and accuracy with exact rational arithmetic.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Recall denominator: every GTM in the benchmark, detected or not.
    pub gtm_total: u64,
}

impl VerdictCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64, gtm_total: u64) -> Self {
        Self { tp, fp, tn, fn_, gtm_total }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for VerdictCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(
            self.tp + o.tp,
            self.fp + o.fp,
            self.tn + o.tn,
            self.fn_ + o.fn_,
            self.gtm_total + o.gtm_total,
        )
    }
}

/// A ratio kept as integers, or `Undefined` when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Ratio { num: u64, den: u64 },
    Undefined,
}

impl Metric {
    pub fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Ratio { num, den }
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Ratio { num, den } => Some(num as f64 / den as f64),
            Metric::Undefined => None,
        }
    }

    /// Value in units of `1/scale`, rounded half-up without floating point.
    pub fn rounded(self, scale: u64) -> Option<u64> {
        match self {
            Metric::Ratio { num, den } => {
                let (num, den, scale) = (num as u128, den as u128, scale as u128);
                Some(((2 * scale * num + den) / (2 * den)) as u64)
            }
            Metric::Undefined => None,
        }
    }

    /// Hundredths, half-up; how the tables are compared.
    pub fn hundredths(self) -> Option<u64> {
        self.rounded(100)
    }

    /// Two-decimal rendering, `—` when undefined.
    pub fn format2(self) -> String {
        match self.hundredths() {
            Some(h) => format!("{}.{:02}", h / 100, h % 100),
            None => "—".to_string(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format2())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub precision: Metric,
    pub recall: Metric,
    pub accuracy: Metric,
}

pub fn compute_metrics(c: &VerdictCounts) -> MetricsRow {
    MetricsRow {
        precision: Metric::ratio(c.tp, c.tp + c.fp),
        recall: Metric::ratio(c.tp, c.gtm_total),
        accuracy: Metric::ratio(c.tp + c.tn, c.total()),
    }
}

/// Percentage with one decimal, half-up: `63.0%`.
pub fn percent1(num: u64, den: u64) -> String {
    match Metric::ratio(num, den).rounded(1000) {
        Some(t) => format!("{}.{}%", t / 10, t % 10),
        None => "—".to_string(),
    }
}
