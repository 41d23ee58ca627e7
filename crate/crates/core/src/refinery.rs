//! Benchmark hygiene: names that give away the planted misuse, and cases
//! that no longer test what they claim to.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::BenchmarkCase;
use crate::ingest::{is_crypto_relevant, RelevanceConfig};
use crate::model::{Language, MisuseCategory};

const DEFAULT_LEAK_TERMS: &str = include_str!("../data/leak_terms.txt");
const DEFAULT_CRYPTO_APIS: &str = include_str!("../data/crypto_apis.txt");

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Lower-cased words of an identifier, split on separators, case changes
/// and letter/digit transitions. `LessThan1000Iteration` gives
/// `less than 1000 iteration`; `PRNGCase` gives `prng case`.
pub fn split_words(ident: &str) -> Vec<String> {
    let mut words = Vec::new();
    for part in ident.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = part.chars().collect();
        let mut cur = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if i > 0 {
                let p = chars[i - 1];
                let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
                let boundary = (p.is_lowercase() && c.is_uppercase())
                    || (p.is_alphabetic() && c.is_ascii_digit())
                    || (p.is_ascii_digit() && c.is_alphabetic())
                    || (p.is_uppercase() && c.is_uppercase() && next_lower);
                if boundary && !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            }
            cur.extend(c.to_lowercase());
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    words
}

#[derive(Debug, Clone)]
pub struct LeakLexicon {
    /// Term and its word sequence, longest sequence first.
    terms: Vec<(String, Vec<String>)>,
}

impl Default for LeakLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEAK_TERMS)
    }
}

impl LeakLexicon {
    pub fn parse(text: &str) -> Self {
        Self::from_terms(data_lines(text))
    }

    pub fn from_terms<'a>(terms: impl IntoIterator<Item = &'a str>) -> Self {
        let mut terms: Vec<(String, Vec<String>)> = terms
            .into_iter()
            .map(|t| (t.to_string(), split_words(t)))
            .filter(|(_, w)| !w.is_empty())
            .collect();
        terms.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
        Self { terms }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// The most specific term whose words occur contiguously in `ident`.
    pub fn matching_term(&self, ident: &str) -> Option<&str> {
        let words = split_words(ident);
        self.terms
            .iter()
            .find(|(_, tw)| words.windows(tw.len()).any(|w| w == tw.as_slice()))
            .map(|(t, _)| t.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LeakLocation {
    CaseId,
    FileName { unit_path: String },
    Declaration { unit_path: String, line: u32, column: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeakFinding {
    pub identifier: String,
    pub term: String,
    pub location: LeakLocation,
}

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid pattern"))
}

fn identifier_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    regex(&RE, r"\b[A-Za-z_][A-Za-z0-9_]*\b")
}

/// Declared type names (any language with `class X` syntax) and Python
/// top-level functions and classes, with 1-based line and column.
fn declarations(content: &str, language: Language) -> Vec<(String, u32, u32)> {
    static TYPE_RE: OnceLock<Regex> = OnceLock::new();
    static PY_RE: OnceLock<Regex> = OnceLock::new();
    let re = match language {
        Language::Python => regex(&PY_RE, r"^(?:async\s+)?(?:def|class)\s+([A-Za-z_][A-Za-z0-9_]*)"),
        _ => regex(&TYPE_RE, r"\b(?:class|interface|enum|record|object|trait)\s+([A-Za-z_][A-Za-z0-9_]*)"),
    };
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        for cap in re.captures_iter(line) {
            let m = cap.get(1).expect("group");
            let column = line[..m.start()].chars().count() as u32 + 1;
            out.push((m.as_str().to_string(), i as u32 + 1, column));
        }
    }
    out
}

fn file_stem(path: &str) -> &str {
    let name = path.rsplit(['/', '\\']).next().unwrap_or(path);
    name.split_once('.').map_or(name, |(stem, _)| stem)
}

/// Every case name, file name and declaration that contains a lexicon term.
pub fn detect_leakage(case: &BenchmarkCase, lexicon: &LeakLexicon) -> Vec<LeakFinding> {
    let mut out = Vec::new();
    let mut check = |identifier: &str, location: LeakLocation| {
        if let Some(term) = lexicon.matching_term(identifier) {
            out.push(LeakFinding {
                identifier: identifier.to_string(),
                term: term.to_string(),
                location,
            });
        }
    };
    check(&case.case_id, LeakLocation::CaseId);
    for unit in &case.units {
        check(
            file_stem(&unit.path),
            LeakLocation::FileName {
                unit_path: unit.path.clone(),
            },
        );
        for (name, line, column) in declarations(&unit.content, unit.language) {
            check(
                &name,
                LeakLocation::Declaration {
                    unit_path: unit.path.clone(),
                    line,
                    column,
                },
            );
        }
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SanitizeError {
    #[error("renaming {old} to {new} collides with an existing identifier")]
    Collision { old: String, new: String },
    #[error("{first} and {second} would both be renamed to {new}")]
    DuplicateTarget { first: String, second: String, new: String },
    #[error("{old} still occurs in {unit_path} after renaming")]
    Dangling { old: String, unit_path: String },
}

/// Old identifier to neutral replacement.
pub type RenameMap = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sanitized {
    pub case: BenchmarkCase,
    pub renames: RenameMap,
}

fn rename_path(path: &str, plan: &RenameMap) -> String {
    let stem = file_stem(path);
    match plan.get(stem) {
        Some(new) => {
            let dir_len = path.len() - path.rsplit(['/', '\\']).next().unwrap_or(path).len();
            format!("{}{}{}", &path[..dir_len], new, &path[dir_len + stem.len()..])
        }
        None => path.to_string(),
    }
}

fn tokens(content: &str) -> impl Iterator<Item = &str> {
    identifier_re().find_iter(content).map(|m| m.as_str())
}

/// Applies an explicit rename plan at token level across the whole case.
pub fn apply_renames(case: &BenchmarkCase, plan: &RenameMap) -> Result<BenchmarkCase, SanitizeError> {
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for (old, new) in plan {
        if let Some(first) = seen.insert(new, old) {
            return Err(SanitizeError::DuplicateTarget {
                first: first.to_string(),
                second: old.clone(),
                new: new.clone(),
            });
        }
    }
    let existing: BTreeSet<&str> = case
        .units
        .iter()
        .flat_map(|u| tokens(&u.content).chain(std::iter::once(file_stem(&u.path))))
        .chain(std::iter::once(case.case_id.as_str()))
        .collect();
    for (old, new) in plan {
        if existing.contains(new.as_str()) && !plan.contains_key(new) {
            return Err(SanitizeError::Collision {
                old: old.clone(),
                new: new.clone(),
            });
        }
    }
    let mut out = case.clone();
    out.case_id = plan.get(&case.case_id).cloned().unwrap_or_else(|| case.case_id.clone());
    for unit in &mut out.units {
        let content = identifier_re()
            .replace_all(&unit.content, |c: &regex::Captures<'_>| {
                plan.get(&c[0]).cloned().unwrap_or_else(|| c[0].to_string())
            })
            .into_owned();
        let path = rename_path(&unit.path, plan);
        let markers = unit.crypto_markers.clone();
        *unit = crate::model::SourceUnit::new(path, unit.language, content).with_markers(markers);
        if let Some(old) = tokens(&unit.content).find(|t| plan.contains_key(*t) && !seen.contains_key(t)) {
            return Err(SanitizeError::Dangling {
                old: old.to_string(),
                unit_path: unit.path.clone(),
            });
        }
    }
    for g in &mut out.gtms {
        g.unit_path = rename_path(&g.unit_path, plan);
    }
    Ok(out)
}

/// Hands out neutral names `<prefix><group><NNN>`, e.g. `CaseA001`.
#[derive(Debug, Clone)]
pub struct Sanitizer {
    pub lexicon: LeakLexicon,
    pub prefix: String,
    pub group: char,
    next: u32,
}

impl Default for Sanitizer {
    fn default() -> Self {
        Self::new(LeakLexicon::default())
    }
}

impl Sanitizer {
    pub fn new(lexicon: LeakLexicon) -> Self {
        Self {
            lexicon,
            prefix: "Case".into(),
            group: 'A',
            next: 1,
        }
    }

    pub fn with_group(mut self, group: char) -> Self {
        self.group = group;
        self
    }

    fn fresh(&mut self) -> String {
        let name = format!("{}{}{:03}", self.prefix, self.group, self.next);
        self.next += 1;
        name
    }

    /// Renames every leaking identifier; a case without leaks comes back
    /// unchanged with an empty map.
    pub fn sanitize(&mut self, case: &BenchmarkCase) -> Result<Sanitized, SanitizeError> {
        let mut plan = RenameMap::new();
        let mut order = Vec::new();
        for f in detect_leakage(case, &self.lexicon) {
            if !order.contains(&f.identifier) {
                order.push(f.identifier);
            }
        }
        let taken: BTreeSet<String> = case
            .units
            .iter()
            .flat_map(|u| tokens(&u.content).map(str::to_string).collect::<Vec<_>>())
            .collect();
        for old in order {
            let mut new = self.fresh();
            while taken.contains(&new) {
                new = self.fresh();
            }
            plan.insert(old, new);
        }
        let sanitized = apply_renames(case, &plan)?;
        if let Some(f) = detect_leakage(&sanitized, &self.lexicon).into_iter().next() {
            // a neutral name can only leak if the lexicon matches the scheme itself
            return Err(SanitizeError::Dangling {
                old: f.identifier,
                unit_path: String::new(),
            });
        }
        Ok(Sanitized {
            case: sanitized,
            renames: plan,
        })
    }
}

pub fn sanitize(case: &BenchmarkCase, lexicon: &LeakLexicon) -> Result<Sanitized, SanitizeError> {
    Sanitizer::new(lexicon.clone()).sanitize(case)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InapplicabilityKind {
    ContextInsensitive,
    Obsolete,
    Redundant,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("threshold {0} must be positive")]
    NonPositive(&'static str),
    #[error("reading rules: {0}")]
    Io(String),
}

/// Positional index of the iteration count in known key-derivation calls.
const ITERATION_ARGS: &[(&str, usize)] = &[
    ("PBEParameterSpec", 1),
    ("PBEKeySpec", 2),
    ("pbkdf2_hmac", 3),
    ("PBKDF2", 3),
];

#[derive(Debug, Clone)]
pub struct InapplicabilityRules {
    pub pbe_min_iterations: u64,
    pub context_insensitive: bool,
    pub redundancy: bool,
    /// Call tokens treated as non-cryptographic randomness.
    pub weak_prng_calls: Vec<String>,
    pub crypto_apis: BTreeSet<String>,
    pub relevance: RelevanceConfig,
}

impl Default for InapplicabilityRules {
    fn default() -> Self {
        Self {
            pbe_min_iterations: 10_000,
            context_insensitive: true,
            redundancy: true,
            weak_prng_calls: ["new Random", "Math.random", "ThreadLocalRandom.current", "random."]
                .map(String::from)
                .to_vec(),
            crypto_apis: data_lines(DEFAULT_CRYPTO_APIS).map(String::from).collect(),
            relevance: RelevanceConfig::default(),
        }
    }
}

impl InapplicabilityRules {
    /// Overrides defaults from `key = value` lines.
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut rules = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| RuleError::Malformed { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let flag = || match value {
                "true" | "yes" | "on" => Ok(true),
                "false" | "no" | "off" => Ok(false),
                _ => Err(bad(format!("{key}: expected a boolean"))),
            };
            match key {
                "pbe_min_iterations" => {
                    rules.pbe_min_iterations = value
                        .replace('_', "")
                        .parse()
                        .map_err(|_| bad(format!("{key}: expected an integer")))?;
                }
                "context_insensitive" => rules.context_insensitive = flag()?,
                "redundancy" => rules.redundancy = flag()?,
                _ => return Err(bad(format!("unknown key {key}"))),
            }
        }
        if rules.pbe_min_iterations == 0 {
            return Err(RuleError::NonPositive("pbe_min_iterations"));
        }
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|e| RuleError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn with_pbe_min_iterations(mut self, n: u64) -> Self {
        assert!(n > 0, "threshold must be positive");
        self.pbe_min_iterations = n;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InapplicabilityFlag {
    pub case_id: String,
    pub kind: InapplicabilityKind,
    pub unit_path: String,
    pub line: u32,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedundancyCluster {
    pub categories: Vec<MisuseCategory>,
    pub api_sequence: Vec<String>,
    pub case_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InapplicabilityReport {
    pub flags: Vec<InapplicabilityFlag>,
    pub clusters: Vec<RedundancyCluster>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Call {
    token: String,
    /// Byte offset of the opening parenthesis.
    open: usize,
}

fn calls(content: &str) -> Vec<Call> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = regex(
        &RE,
        r"(\bnew\s+)?\b([A-Za-z_][A-Za-z0-9_]*(?:\s*\.\s*[A-Za-z_][A-Za-z0-9_]*)*)\s*\(",
    );
    re.captures_iter(content)
        .map(|c| {
            let path: String = c[2].chars().filter(|ch| !ch.is_whitespace()).collect();
            let token = if c.get(1).is_some() { format!("new {path}") } else { path };
            Call {
                token,
                open: c.get(0).expect("match").end() - 1,
            }
        })
        .collect()
}

/// Top-level comma-separated arguments of the call opened at `open`.
fn call_args(content: &str, open: usize) -> Vec<&str> {
    let bytes = content.as_bytes();
    let mut depth = 0usize;
    let mut quote: Option<u8> = None;
    let mut start = open + 1;
    let mut args = Vec::new();
    let mut i = open;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(_) if b == b'\\' => i += 1,
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None => match b {
                b'"' | b'\'' => quote = Some(b),
                b'(' | b'[' | b'{' => depth += 1,
                b')' | b']' | b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let last = content[start..i].trim();
                        if !last.is_empty() || !args.is_empty() {
                            args.push(last);
                        }
                        return args;
                    }
                }
                b',' if depth == 1 => {
                    args.push(content[start..i].trim());
                    start = i + 1;
                }
                _ => {}
            },
        }
        i += 1;
    }
    args
}

fn line_of(content: &str, offset: usize) -> u32 {
    content[..offset].matches('\n').count() as u32 + 1
}

fn int_literal(s: &str) -> Option<u64> {
    let s = s.trim().trim_end_matches(['L', 'l']).replace('_', "");
    s.parse().ok()
}

/// Integer value of an argument: a literal, or an identifier whose nearest
/// preceding `name = <int>` assignment gives it one.
fn resolve_int(content: &str, arg: &str, before: usize) -> Option<u64> {
    if let Some(v) = int_literal(arg) {
        return Some(v);
    }
    let arg = arg.trim();
    if !identifier_re().find(arg).is_some_and(|m| m.as_str() == arg) {
        return None;
    }
    let re = Regex::new(&format!(r"\b{}\s*=\s*([0-9][0-9_]*[lL]?)\s*[;\n,)]", regex::escape(arg))).ok()?;
    let mut found = None;
    for c in re.captures_iter(content) {
        let m = c.get(0).expect("match");
        if m.start() < before || found.is_none() {
            found = int_literal(&c[1]);
        }
        if m.start() >= before {
            break;
        }
    }
    found
}

fn iteration_flags(case: &BenchmarkCase, rules: &InapplicabilityRules) -> Vec<InapplicabilityFlag> {
    let mut out = Vec::new();
    for unit in &case.units {
        for call in calls(&unit.content) {
            let name = call.token.rsplit(['.', ' ']).next().unwrap_or(&call.token);
            let args = call_args(&unit.content, call.open);
            let keyword = args.iter().find_map(|a| {
                let (k, v) = a.split_once('=')?;
                matches!(k.trim(), "iterations" | "count" | "rounds").then_some(v)
            });
            let positional = ITERATION_ARGS
                .iter()
                .find(|(n, _)| *n == name)
                .and_then(|(_, idx)| args.get(*idx).copied())
                .filter(|a| !a.contains('='));
            let Some(arg) = keyword.or(positional) else { continue };
            let Some(count) = resolve_int(&unit.content, arg, call.open) else { continue };
            if count < rules.pbe_min_iterations {
                out.push(InapplicabilityFlag {
                    case_id: case.case_id.clone(),
                    kind: InapplicabilityKind::Obsolete,
                    unit_path: unit.path.clone(),
                    line: line_of(&unit.content, call.open),
                    detail: format!(
                        "{name}: iteration count {count} is below the current minimum of {}",
                        rules.pbe_min_iterations
                    ),
                });
            }
        }
    }
    out
}

fn context_flags(case: &BenchmarkCase, rules: &InapplicabilityRules) -> Vec<InapplicabilityFlag> {
    let mut out = Vec::new();
    for unit in &case.units {
        let Some(call) = calls(&unit.content)
            .into_iter()
            .find(|c| rules.weak_prng_calls.iter().any(|w| c.token.starts_with(w.as_str())))
        else {
            continue;
        };
        if is_crypto_relevant(unit, &rules.relevance).is_empty() {
            out.push(InapplicabilityFlag {
                case_id: case.case_id.clone(),
                kind: InapplicabilityKind::ContextInsensitive,
                unit_path: unit.path.clone(),
                line: line_of(&unit.content, call.open),
                detail: format!("{} used without any cryptographic import; confirm the value is security-relevant", call.token),
            });
        }
    }
    out
}

/// Crypto API calls across the case in source order, arguments left out.
pub fn api_sequence(case: &BenchmarkCase, rules: &InapplicabilityRules) -> Vec<String> {
    case.units
        .iter()
        .flat_map(|u| calls(&u.content))
        .filter(|c| {
            let head = c.token.trim_start_matches("new ").split('.').next().unwrap_or("");
            rules.crypto_apis.contains(head)
        })
        .map(|c| c.token)
        .collect()
}

/// Per-case flags (context-insensitive randomness, obsolete iteration
/// counts) plus clusters of cases sharing GTM categories and API sequence.
/// Purely advisory: nothing is removed.
pub fn flag_inapplicable(cases: &[BenchmarkCase], rules: &InapplicabilityRules) -> InapplicabilityReport {
    let mut report = InapplicabilityReport::default();
    let mut groups: BTreeMap<(Vec<MisuseCategory>, Vec<String>), Vec<String>> = BTreeMap::new();
    for case in cases {
        if rules.context_insensitive {
            report.flags.extend(context_flags(case, rules));
        }
        report.flags.extend(iteration_flags(case, rules));
        if rules.redundancy && !case.gtms.is_empty() {
            let cats: BTreeSet<MisuseCategory> = case.gtms.iter().map(|g| g.category).collect();
            let seq = api_sequence(case, rules);
            if !seq.is_empty() {
                groups
                    .entry((cats.into_iter().collect(), seq))
                    .or_default()
                    .push(case.case_id.clone());
            }
        }
    }
    report.clusters = groups
        .into_iter()
        .filter(|(_, ids)| ids.len() > 1)
        .map(|((categories, api_sequence), mut case_ids)| {
            case_ids.sort();
            RedundancyCluster {
                categories,
                api_sequence,
                case_ids,
            }
        })
        .collect();
    report.flags.sort();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_splitting() {
        assert_eq!(split_words("UntrustedPRNGCase1"), ["untrusted", "prng", "case", "1"]);
        assert_eq!(split_words("LessThan1000IterationPBE"), ["less", "than", "1000", "iteration", "pbe"]);
        assert_eq!(split_words("untrusted_prng_case"), ["untrusted", "prng", "case"]);
        assert_eq!(split_words("CaseA001"), ["case", "a", "001"]);
    }

    #[test]
    fn lexicon_matches_on_word_boundaries() {
        let l = LeakLexicon::default();
        assert_eq!(l.matching_term("UntrustedPRNGCase1"), Some("UntrustedPRNG"));
        assert_eq!(l.matching_term("LessThan1000IterationPBE"), Some("LessThan1000Iteration"));
        assert_eq!(l.matching_term("untrusted_prng_case"), Some("UntrustedPRNG"));
        assert_eq!(l.matching_term("Example1"), None);
        assert_eq!(l.matching_term("Describe"), None, "DES only as a whole word");
        assert_eq!(l.matching_term("CaseA001"), None);
    }

    #[test]
    fn argument_splitting() {
        let src = r#"new PBEKeySpec(pw, f("a,b", (1, 2)), count, 128)"#;
        let open = src.find('(').unwrap();
        assert_eq!(call_args(src, open), vec!["pw", r#"f("a,b", (1, 2))"#, "count", "128"]);
        assert_eq!(call_args("x()", 1), Vec::<&str>::new());
    }

    #[test]
    fn integer_resolution() {
        let src = "int count = 10;\ncount = 1_020;\nuse(count);\ncount = 5;\n";
        let at = src.find("use").unwrap();
        assert_eq!(resolve_int(src, "count", at), Some(1020));
        assert_eq!(resolve_int(src, "20000L", at), Some(20000));
        assert_eq!(resolve_int(src, "n", at), None);
        assert_eq!(resolve_int(src, "a + b", at), None);
    }

    #[test]
    fn rules_file() {
        let r = InapplicabilityRules::parse("# policy\npbe_min_iterations = 1_000\nredundancy = off\n").unwrap();
        assert_eq!(r.pbe_min_iterations, 1000);
        assert!(!r.redundancy);
        assert_eq!(
            InapplicabilityRules::parse("pbe_min_iterations = 0").unwrap_err(),
            RuleError::NonPositive("pbe_min_iterations")
        );
        assert!(matches!(InapplicabilityRules::parse("x = 1"), Err(RuleError::Malformed { line: 1, .. })));
    }
}
