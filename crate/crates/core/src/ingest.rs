//! Corpus ingestion: crypto-relevant file selection and repository
//! filtering/ranking.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::model::{Language, SourceUnit};
use crate::par::{self, Execution};
use crate::taxonomy::contains_word;

const DEFAULT_RELEVANCE: &str = include_str!("../data/relevance.txt");
const DEFAULT_EXCLUSION_KEYWORDS: &str = include_str!("../data/exclusion_keywords.tsv");

pub const DEFAULT_MAX_UNIT_BYTES: u64 = 256 * 1024;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read corpus root {path}: {source}")]
    Root {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Config {
        file: String,
        line: usize,
        message: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("repository metadata {path}: {source}")]
    Metadata {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Token estimate used everywhere a count is needed: characters / 4, rounded up.
pub fn estimate_text_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub fn estimate_tokens(unit: &SourceUnit) -> u64 {
    estimate_text_tokens(&unit.content)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceConfig {
    markers: BTreeMap<Language, Vec<String>>,
    pub max_unit_bytes: u64,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        let mut cfg = Self {
            markers: BTreeMap::new(),
            max_unit_bytes: DEFAULT_MAX_UNIT_BYTES,
        };
        cfg.apply("relevance.txt", DEFAULT_RELEVANCE)
            .expect("bundled relevance list is well-formed");
        cfg
    }
}

fn parse_language(s: &str) -> Option<Language> {
    match s.to_ascii_lowercase().as_str() {
        "java" => Some(Language::Java),
        "python" => Some(Language::Python),
        "other" => Some(Language::Other),
        _ => None,
    }
}

impl RelevanceConfig {
    /// Defaults extended (or selectively replaced) by a config file.
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply(&path.display().to_string(), &text)?;
        Ok(cfg)
    }

    pub fn markers(&self, language: Language) -> &[String] {
        self.markers.get(&language).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn set_markers(&mut self, language: Language, prefixes: Vec<String>) {
        self.markers.insert(language, prefixes);
    }

    fn apply(&mut self, file: &str, text: &str) -> Result<(), IngestError> {
        let err = |line, message: &str| IngestError::Config {
            file: file.to_string(),
            line,
            message: message.to_string(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut parts = t.split_whitespace();
            let head = parts.next().unwrap_or_default();
            let value = parts.next().ok_or_else(|| err(line, "expected two fields"))?;
            if parts.next().is_some() {
                return Err(err(line, "expected two fields"));
            }
            match head {
                "!replace" => {
                    let lang = parse_language(value).ok_or_else(|| err(line, "unknown language"))?;
                    self.markers.insert(lang, Vec::new());
                }
                "max_unit_bytes" => {
                    self.max_unit_bytes = value
                        .parse()
                        .map_err(|_| err(line, "max_unit_bytes must be an integer"))?;
                }
                lang => {
                    let lang = parse_language(lang).ok_or_else(|| err(line, "unknown language"))?;
                    let list = self.markers.entry(lang).or_default();
                    if !list.iter().any(|p| p == value) {
                        list.push(value.to_string());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Module paths named by import/package statements, skipping comments and
/// string blocks.
pub fn imported_modules(content: &str, language: Language) -> Vec<String> {
    match language {
        Language::Python => python_imports(content),
        Language::Java | Language::Other => jvm_imports(content),
    }
}

fn jvm_imports(content: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut in_block = false;
    for raw in content.lines() {
        let mut line = raw.trim();
        if in_block {
            match line.find("*/") {
                Some(end) => {
                    in_block = false;
                    line = line[end + 2..].trim();
                }
                None => continue,
            }
        }
        // a block comment opening at line start hides the rest of the line
        while let Some(rest) = line.strip_prefix("/*") {
            match rest.find("*/") {
                Some(end) => line = rest[end + 2..].trim(),
                None => {
                    in_block = true;
                    line = "";
                }
            }
        }
        let stmt = line
            .strip_prefix("import ")
            .or_else(|| line.strip_prefix("package "));
        if let Some(stmt) = stmt {
            let stmt = stmt.trim_start();
            let stmt = stmt.strip_prefix("static ").unwrap_or(stmt).trim_start();
            let module: String = stmt
                .chars()
                .take_while(|c| c.is_alphanumeric() || matches!(c, '.' | '_' | '$' | '*'))
                .collect();
            if !module.is_empty() {
                out.push(module);
            }
        }
        if !in_block {
            let code = line.split("//").next().unwrap_or_default();
            if let Some(open) = code.rfind("/*") {
                if !code[open..].contains("*/") {
                    in_block = true;
                }
            }
        }
    }
    out
}

fn python_imports(content: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut in_string: Option<&str> = None;
    for raw in content.lines() {
        let line = raw.trim();
        if let Some(delim) = in_string {
            if line.contains(delim) {
                in_string = None;
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        for delim in ["\"\"\"", "'''"] {
            if line.starts_with(delim) || line.contains(&format!("= {delim}")) {
                // single-line triple-quoted strings close on the same line
                if line.matches(delim).count() % 2 == 1 {
                    in_string = Some(delim);
                }
            }
        }
        if in_string.is_some() {
            continue;
        }
        let code = line.split('#').next().unwrap_or_default();
        if let Some(rest) = code.strip_prefix("import ") {
            for part in rest.split(',') {
                let name = part.split_whitespace().next().unwrap_or_default();
                if is_module_path(name) {
                    out.push(name.to_string());
                }
            }
        } else if let Some(rest) = code.strip_prefix("from ") {
            let mut words = rest.split_whitespace();
            let module = words.next().unwrap_or_default();
            if !is_module_path(module) || words.next() != Some("import") {
                continue;
            }
            out.push(module.to_string());
            let names = words.collect::<Vec<_>>().join(" ");
            for name in names.trim_matches(|c| c == '(' || c == ')').split(',') {
                let name = name.split_whitespace().next().unwrap_or_default();
                if is_module_path(name) {
                    out.push(format!("{module}.{name}"));
                }
            }
        }
    }
    out
}

fn is_module_path(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.')
}

fn module_matches(module: &str, prefix: &str) -> bool {
    module == prefix
        || module
            .strip_prefix(prefix)
            .is_some_and(|rest| rest.starts_with('.'))
}

/// Configured prefixes matched by the unit's import statements, in
/// configuration order. Empty means not crypto-relevant.
pub fn is_crypto_relevant(unit: &SourceUnit, cfg: &RelevanceConfig) -> Vec<String> {
    let modules = imported_modules(&unit.content, unit.language);
    cfg.markers(unit.language)
        .iter()
        .filter(|p| modules.iter().any(|m| module_matches(m, p)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SkipReason {
    TooLarge { bytes: u64, limit: u64 },
    Unreadable(String),
    Walk(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScanDiagnostic {
    pub path: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanResult {
    pub units: Vec<SourceUnit>,
    pub diagnostics: Vec<ScanDiagnostic>,
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

enum FileOutcome {
    Unit(SourceUnit),
    Irrelevant,
    Skipped(ScanDiagnostic),
}

fn load_file(root: &Path, path: &Path, language: Language, cfg: &RelevanceConfig) -> FileOutcome {
    let rel = relative(root, path);
    let skip = |reason| {
        FileOutcome::Skipped(ScanDiagnostic {
            path: rel.clone(),
            reason,
        })
    };
    match fs::metadata(path) {
        Ok(m) if m.len() > cfg.max_unit_bytes => {
            return skip(SkipReason::TooLarge {
                bytes: m.len(),
                limit: cfg.max_unit_bytes,
            })
        }
        Ok(_) => {}
        Err(e) => return skip(SkipReason::Unreadable(e.to_string())),
    }
    let content = match fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) => return skip(SkipReason::Unreadable(e.to_string())),
    };
    let unit = SourceUnit::new(rel.clone(), language, content);
    let markers = is_crypto_relevant(&unit, cfg);
    if markers.is_empty() {
        FileOutcome::Irrelevant
    } else {
        FileOutcome::Unit(unit.with_markers(markers))
    }
}

/// Crypto-relevant source units under `root`, sorted by relative path.
/// Unreadable or oversized files are reported as diagnostics and skipped.
pub fn scan_tree(root: &Path, cfg: &RelevanceConfig, exec: Execution) -> Result<ScanResult, IngestError> {
    fs::read_dir(root).map_err(|source| IngestError::Root {
        path: root.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    let mut diagnostics = Vec::new();
    let walker = WalkDir::new(root)
        .follow_links(false)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        match entry {
            Ok(e) if e.file_type().is_file() => {
                let lang = e
                    .path()
                    .extension()
                    .and_then(|x| x.to_str())
                    .and_then(Language::from_extension);
                if let Some(lang) = lang {
                    files.push((e.into_path(), lang));
                }
            }
            Ok(_) => {}
            Err(e) => diagnostics.push(ScanDiagnostic {
                path: e.path().map(|p| relative(root, p)).unwrap_or_default(),
                reason: SkipReason::Walk(e.to_string()),
            }),
        }
    }
    let outcomes = par::map(exec, &files, |(path, lang)| load_file(root, path, *lang, cfg));
    let mut units = Vec::new();
    for outcome in outcomes {
        match outcome {
            FileOutcome::Unit(u) => units.push(u),
            FileOutcome::Irrelevant => {}
            FileOutcome::Skipped(d) => {
                log::warn!("skipping {}: {:?}", d.path, d.reason);
                diagnostics.push(d);
            }
        }
    }
    units.sort_by(|a, b| a.path.cmp(&b.path));
    diagnostics.sort();
    Ok(ScanResult { units, diagnostics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExclusionClass {
    Tutorial,
    LocalOnly,
    ExploitToolkit,
    Experimental,
}

impl ExclusionClass {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "Tutorial" => Some(Self::Tutorial),
            "LocalOnly" => Some(Self::LocalOnly),
            "ExploitToolkit" => Some(Self::ExploitToolkit),
            "Experimental" => Some(Self::Experimental),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoMeta {
    pub name: String,
    stars: u64,
    #[serde(default)]
    pub flags: BTreeSet<ExclusionClass>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default, skip_serializing)]
    pub readme: Option<String>,
}

impl RepoMeta {
    pub fn new(name: impl Into<String>, stars: u64) -> Self {
        Self {
            name: name.into(),
            stars,
            flags: BTreeSet::new(),
            description: None,
            readme: None,
        }
    }

    pub fn stars(&self) -> u64 {
        self.stars
    }

    pub fn with_flag(mut self, class: ExclusionClass) -> Self {
        self.flags.insert(class);
        self
    }

    pub fn with_readme(mut self, readme: impl Into<String>) -> Self {
        self.readme = Some(readme.into());
        self
    }

    /// Reads a JSON array of repository records.
    pub fn load_all(path: &Path) -> Result<Vec<RepoMeta>, IngestError> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| IngestError::Metadata {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverrideDecision {
    Include,
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    Class(ExclusionClass),
    ManualOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepoDecision {
    Include,
    Exclude(ExclusionReason),
}

#[derive(Debug, Clone, Default)]
pub struct ExclusionPolicy {
    keywords: Vec<(ExclusionClass, String)>,
    overrides: BTreeMap<String, OverrideDecision>,
}

impl ExclusionPolicy {
    /// Bundled keyword heuristics, no overrides.
    pub fn standard() -> Self {
        let mut p = Self::default();
        p.add_keywords("exclusion_keywords.tsv", DEFAULT_EXCLUSION_KEYWORDS)
            .expect("bundled keywords are well-formed");
        p
    }

    pub fn add_keywords(&mut self, file: &str, text: &str) -> Result<(), IngestError> {
        for (i, raw) in text.lines().enumerate() {
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let parsed = raw
                .split_once('\t')
                .and_then(|(c, k)| Some((ExclusionClass::parse(c.trim())?, k.trim().to_lowercase())))
                .filter(|(_, k)| !k.is_empty());
            let (class, kw) = parsed.ok_or_else(|| IngestError::Config {
                file: file.to_string(),
                line: i + 1,
                message: "expected `<Class>\\t<keyword>`".into(),
            })?;
            self.keywords.push((class, kw));
        }
        Ok(())
    }

    pub fn add_overrides(&mut self, file: &str, text: &str) -> Result<(), IngestError> {
        for (i, raw) in text.lines().enumerate() {
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let parsed = raw.split_once('\t').and_then(|(name, d)| {
                let d = match d.trim() {
                    "Include" => OverrideDecision::Include,
                    "Exclude" => OverrideDecision::Exclude,
                    _ => return None,
                };
                Some((name.trim().to_string(), d))
            });
            let (name, d) = parsed.ok_or_else(|| IngestError::Config {
                file: file.to_string(),
                line: i + 1,
                message: "expected `repoName\\tExclude|Include`".into(),
            })?;
            self.overrides.insert(name, d);
        }
        Ok(())
    }

    pub fn override_for(&self, name: &str) -> Option<OverrideDecision> {
        self.overrides.get(name).copied()
    }

    fn heuristic_flags(&self, meta: &RepoMeta) -> BTreeSet<ExclusionClass> {
        let name = meta.name.to_lowercase().replace(['-', '_', '/'], " ");
        let texts = [
            Some(name),
            meta.description.as_deref().map(str::to_lowercase),
            meta.readme.as_deref().map(str::to_lowercase),
        ];
        self.keywords
            .iter()
            .filter(|(_, kw)| texts.iter().flatten().any(|t| contains_word(t, kw)))
            .map(|(c, _)| *c)
            .collect()
    }
}

pub fn classify_repository(meta: &RepoMeta, policy: &ExclusionPolicy) -> RepoDecision {
    match policy.override_for(&meta.name) {
        Some(OverrideDecision::Include) => return RepoDecision::Include,
        Some(OverrideDecision::Exclude) => return RepoDecision::Exclude(ExclusionReason::ManualOverride),
        None => {}
    }
    let mut flags = meta.flags.clone();
    flags.extend(policy.heuristic_flags(meta));
    match flags.into_iter().next() {
        Some(class) => RepoDecision::Exclude(ExclusionReason::Class(class)),
        None => RepoDecision::Include,
    }
}

/// Top `n` includable repositories by stars (descending), ties by name.
pub fn rank_and_select(repos: &[RepoMeta], policy: &ExclusionPolicy, n: usize) -> Vec<RepoMeta> {
    let mut kept: Vec<&RepoMeta> = repos
        .iter()
        .filter(|r| classify_repository(r, policy) == RepoDecision::Include)
        .collect();
    kept.sort_by(|a, b| b.stars.cmp(&a.stars).then_with(|| a.name.cmp(&b.name)));
    kept.into_iter().take(n).cloned().collect()
}
