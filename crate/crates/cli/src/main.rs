mod config;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cryptoscope::bench::{
    breakdown, compute_metrics, cross_check, failure_distribution, load_manifest_with, prematch, record_verdict,
    tag_failure_pattern, BenchmarkCase, Manifest, TallyError, VerdictLabel, VerdictStore,
};
use cryptoscope::detect::Detector;
use cryptoscope::gateway::{Gateway, HttpProvider, ProviderKind, RefusalLexicon, ReplayProvider, ReqwestTransport, TranscriptStore};
use cryptoscope::ingest::{scan_tree, RelevanceConfig};
use cryptoscope::model::{FailureKind, FailurePattern, SemanticsSubtype};
use cryptoscope::par::{self, Execution};
use cryptoscope::pipeline::{load_report_tree, run_scan, units_from_manifest, write_atomic, write_report_tree};
use cryptoscope::prompt::PromptForge;
use cryptoscope::refinery::{detect_leakage, flag_inapplicable, InapplicabilityRules, LeakLexicon, Sanitizer};
use cryptoscope::report::{emit_advisory, emit_metrics_table};
use cryptoscope::signature::{alert_signature, Granularity};
use cryptoscope::taxonomy::CategoryLexicon;

use config::{parse_mode, RunConfig};

/// Exit status when `--fail-on-alert` is set and a kept alert was found.
const EXIT_ALERTS: u8 = 3;

#[derive(Parser)]
#[command(name = "cryptoscope", version, about = "Model-driven crypto API misuse detection")]
struct Cli {
    /// key=value or JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SettingArgs {
    /// Detection mode
    #[arg(long, value_name = "uc|ta")]
    setting: Option<String>,
    /// Skip the validation query
    #[arg(long)]
    no_validate: bool,
    /// Detection queries per unit
    #[arg(long, value_name = "N")]
    queries: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Detect misuses in a source tree or benchmark and write reports
    Scan {
        #[command(flatten)]
        setting: SettingArgs,
        /// Source tree to scan
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Scan the units of this benchmark manifest instead of a tree
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Answer from a transcript store instead of the live endpoint
        #[arg(long, value_name = "STORE")]
        replay: Option<PathBuf>,
        /// Ingest and context-guard only; no queries
        #[arg(long)]
        dry_run: bool,
        /// Exit with status 3 when any alert is kept
        #[arg(long)]
        fail_on_alert: bool,
    },
    /// Compute metrics from adjudicated reports
    Evaluate {
        #[command(flatten)]
        setting: SettingArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
    /// Label kept alerts as TP or FP, one at a time, from stdin
    Triage {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        verdicts: Option<PathBuf>,
        #[arg(long)]
        reviewer: Option<String>,
    },
    /// Sanitize a benchmark and flag inapplicable cases
    Refine {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Scan against the live endpoint and store every response for replay
    Record {
        #[command(flatten)]
        setting: SettingArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Transcript store to append to
        #[arg(long, value_name = "STORE")]
        store: Option<PathBuf>,
    },
}

impl SettingArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let mut mode = cfg.setting.mode();
        if let Some(s) = &self.setting {
            mode = parse_mode(s)?;
        }
        let validation = cfg.setting.validation() && !self.no_validate;
        let queries = self.queries.unwrap_or(cfg.setting.query_count());
        cfg.setting = cryptoscope::model::DetectionSetting::new(mode, validation, queries)?;
        Ok(())
    }
}

fn override_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if let Some(p) = flag {
        *slot = Some(p.clone());
    }
}

fn relevance(cfg: &RunConfig) -> Result<RelevanceConfig> {
    match &cfg.relevance {
        Some(p) => Ok(RelevanceConfig::load(p)?),
        None => Ok(RelevanceConfig::default()),
    }
}

fn leak_lexicon(cfg: &RunConfig) -> Result<LeakLexicon> {
    match &cfg.leak_terms {
        Some(p) => LeakLexicon::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(LeakLexicon::default()),
    }
}

fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg.manifest.as_ref().ok_or_else(|| anyhow!("no manifest given (--manifest or config)"))?;
    Ok(load_manifest_with(path, &leak_lexicon(cfg)?)?)
}

fn execution(cfg: &RunConfig) -> Execution {
    if cfg.concurrency == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn detector(cfg: &RunConfig, gateway: Gateway) -> Result<Detector> {
    let mut gateway = gateway;
    if let Some(p) = &cfg.refusals {
        gateway = gateway.with_refusals(RefusalLexicon::load(p).with_context(|| format!("reading {}", p.display()))?);
    }
    if cfg.rate_limit > 0.0 {
        gateway = gateway.with_rate_limit(cfg.rate_limit);
    }
    let mut d = Detector::new(Arc::new(gateway), cfg.profile.clone()).with_execution(execution(cfg));
    if let Some(p) = &cfg.prompts {
        d = d.with_prompts(PromptForge::load_dir(p)?);
    }
    if let Some(p) = &cfg.lexicon {
        d = d.with_lexicon(CategoryLexicon::load(p)?);
    }
    Ok(d)
}

fn live_gateway() -> Gateway {
    Gateway::new(HttpProvider::new(ReqwestTransport::new()))
}

fn scan_input(cfg: &RunConfig) -> Result<cryptoscope::ingest::ScanResult> {
    let rel = relevance(cfg)?;
    if let Some(root) = &cfg.corpus {
        Ok(scan_tree(root, &rel, execution(cfg))?)
    } else if cfg.manifest.is_some() {
        Ok(units_from_manifest(&load_manifest(cfg)?, &rel))
    } else {
        bail!("nothing to scan: give --corpus or --manifest")
    }
}

/// Shared by `scan` and `record`. Returns the number of kept alerts.
fn scan_with(cfg: &RunConfig, gateway: Gateway, dry_run: bool) -> Result<(usize, usize)> {
    let input = scan_input(cfg)?;
    let detector = detector(cfg, gateway)?;
    let setting = cfg.setting;
    let outcome = par::with_limit(execution(cfg), cfg.concurrency, || {
        run_scan(&input, &detector, &setting, dry_run)
    });
    print!("{}", outcome.summary.render());
    if !dry_run {
        write_report_tree(&cfg.out, &outcome).with_context(|| format!("writing {}", cfg.out.display()))?;
        println!("reports written to {}", cfg.out.display());
    }
    Ok((outcome.summary.alerts_kept, outcome.summary.failures.len()))
}

fn finish(kept: usize, failures: usize, fail_on_alert: bool) -> Result<ExitCode> {
    if failures > 0 {
        bail!("{failures} unit(s) failed to analyze");
    }
    if fail_on_alert && kept > 0 {
        return Ok(ExitCode::from(EXIT_ALERTS));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_scan(cfg: &RunConfig, replay: Option<&Path>, dry_run: bool, fail_on_alert: bool) -> Result<ExitCode> {
    let replay = replay.map(Path::to_path_buf).or_else(|| match cfg.profile.provider {
        ProviderKind::ReplayStore => cfg.transcripts.clone(),
        ProviderKind::RemoteChatEndpoint => None,
    });
    let gateway = match replay {
        Some(store) => Gateway::new(ReplayProvider::open(&store)?),
        None if cfg.profile.provider == ProviderKind::ReplayStore => {
            bail!("provider is replay but no transcript store was given")
        }
        None => live_gateway(),
    };
    let (kept, failures) = scan_with(cfg, gateway, dry_run)?;
    finish(kept, failures, fail_on_alert)
}

fn cmd_record(cfg: &RunConfig, store: Option<&Path>) -> Result<ExitCode> {
    let path = store
        .map(Path::to_path_buf)
        .or_else(|| cfg.transcripts.clone())
        .ok_or_else(|| anyhow!("no transcript store given (--store or config transcripts)"))?;
    let store = Arc::new(TranscriptStore::open(&path)?);
    let (kept, failures) = scan_with(cfg, live_gateway().recording_to(store), false)?;
    println!("transcripts appended to {}", path.display());
    finish(kept, failures, false)
}

fn open_verdicts(cfg: &RunConfig) -> Result<VerdictStore> {
    let path = cfg.verdicts.as_ref().ok_or_else(|| anyhow!("no verdict store given (--verdicts or config)"))?;
    Ok(VerdictStore::open(path)?)
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<ExitCode> {
    let manifest = load_manifest(cfg)?;
    let store = open_verdicts(cfg)?;
    let reports = load_report_tree(&cfg.out)?;
    let mut rows = Vec::new();
    let mut breakdowns = Vec::new();
    for b in &manifest.benchmarks {
        let bd = match breakdown(&store, b, &reports, &cfg.setting) {
            Ok(bd) => bd,
            Err(TallyError::UnresolvedConflicts(n)) => {
                if let (Some(a), Some(b)) = (&cfg.reviewer, &cfg.second_reviewer) {
                    for c in cross_check(&store, (a, b)) {
                        eprintln!(
                            "conflict in {}: {} says {:?}, {} says {:?}",
                            c.case_id, a, c.first, b, c.second
                        );
                    }
                }
                bail!("{n} conflicting verdict(s); record a consensus label before evaluating");
            }
        };
        let label = format!("{} {}", b.name, cfg.setting.label());
        rows.push((label, compute_metrics(&bd.overall.counts), bd.overall.counts));
        for r in bd.by_complexity.iter().chain(&bd.by_size) {
            rows.push((format!("  {}", r.label), compute_metrics(&r.outcome.counts), r.outcome.counts));
        }
        if bd.overall.unanalyzed_cases > 0 || bd.overall.unadjudicated_alerts > 0 {
            println!(
                "{}: {} unanalyzed case(s) excluded, {} kept alert(s) not yet adjudicated",
                b.name, bd.overall.unanalyzed_cases, bd.overall.unadjudicated_alerts
            );
        }
        breakdowns.push(bd);
    }
    if rows.is_empty() {
        println!("manifest has no benchmarks");
        return Ok(ExitCode::SUCCESS);
    }
    print!("{}", emit_metrics_table(&rows)?);
    let dist = failure_distribution(&store);
    if dist.total > 0 {
        println!("false-positive root causes ({} annotated):", dist.total);
        for (kind, n) in &dist.by_kind {
            println!("  {kind:?}: {n} ({})", dist.kind_share(*kind));
        }
        for (sub, n) in &dist.by_subtype {
            println!("  {sub:?}: {n} ({} of semantics)", dist.subtype_share_within_semantics(*sub));
        }
    }
    let doc = serde_json::json!({
        "setting": cfg.setting.label(),
        "benchmarks": breakdowns,
        "failurePatterns": dist,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    write_atomic(&cfg.out.join("evaluation.json"), &bytes)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_pattern(text: &str) -> Result<FailurePattern> {
    let (kind, sub) = match text.split_once(':') {
        Some((k, s)) => (k, Some(s)),
        None => (text, None),
    };
    let kind = match kind {
        "knowledge" => FailureKind::ErroneousCryptoKnowledge,
        "semantics" => FailureKind::CodeSemanticsMisunderstanding,
        "hallucination" => FailureKind::HallucinationOrDoS,
        _ => bail!("unknown failure pattern {kind:?}"),
    };
    let sub = match sub {
        None => None,
        Some("oversight") => Some(SemanticsSubtype::SecureImplementationOversight),
        Some("variable") => Some(SemanticsSubtype::VariableMisinterpretation),
        Some("context") => Some(SemanticsSubtype::ContextInappropriate),
        Some("blindspot") => Some(SemanticsSubtype::ContextualBlindSpot),
        Some("path") => Some(SemanticsSubtype::PathInsensitive),
        Some(s) => bail!("unknown semantics subtype {s:?}"),
    };
    Ok(FailurePattern::new(kind, sub)?)
}

const TRIAGE_HELP: &str = "tp [GTM] | fp [knowledge|semantics[:oversight|variable|context|blindspot|path]|hallucination] | s(kip) | q(uit)";

fn cmd_triage(cfg: &RunConfig, reviewer: &str) -> Result<ExitCode> {
    let manifest = load_manifest(cfg)?;
    let mut store = open_verdicts(cfg)?;
    let reports = load_report_tree(&cfg.out)?;
    let case_of = |path: &str| -> Option<&BenchmarkCase> { manifest.benchmarks.iter().find_map(|b| b.case_of(path)) };
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut stdout = std::io::stdout();
    let (mut labeled, mut pending) = (0usize, 0usize);
    // after a quit, keep walking so the remaining count is complete
    let mut quit = false;
    for report in &reports {
        for alert in report.kept() {
            let Some(case) = case_of(&alert.unit_path) else {
                eprintln!("{} belongs to no benchmark case; skipped", alert.unit_path);
                continue;
            };
            let sig = alert_signature(alert, Granularity::default());
            if store.verdicts().any(|v| v.alert_signature == sig && v.reviewer_id == reviewer) {
                continue;
            }
            pending += 1;
            if quit {
                continue;
            }
            let unit = case.units.iter().find(|u| u.path == alert.unit_path).expect("case owns unit");
            let suggestion = prematch(alert, &case.gtms);
            writeln!(stdout, "\n--- case {} ---\n{}", case.case_id, emit_advisory(alert, unit)?)?;
            match suggestion {
                Some(g) => writeln!(stdout, "suggested: {} ({})", g.gtm_id, g.category.tag())?,
                None => writeln!(stdout, "suggested: none")?,
            }
            loop {
                write!(stdout, "{TRIAGE_HELP}\n> ")?;
                stdout.flush()?;
                let Some(line) = lines.next().transpose()? else {
                    quit = true;
                    break;
                };
                let mut words = line.split_whitespace();
                let result = match (words.next(), words.next()) {
                    (Some("q"), _) | (Some("quit"), _) => {
                        quit = true;
                        break;
                    }
                    (Some("s"), _) | (Some("skip"), _) => break,
                    (Some("tp"), gtm) => {
                        let gtm = gtm.map(str::to_string).or_else(|| suggestion.map(|g| g.gtm_id.clone()));
                        match gtm {
                            Some(g) => record_verdict(&mut store, case, alert, VerdictLabel::TP(g), reviewer).map(|_| ()),
                            None => {
                                writeln!(stdout, "no suggestion; name the GTM")?;
                                continue;
                            }
                        }
                    }
                    (Some("fp"), pattern) => {
                        let pattern = match pattern.map(parse_pattern).transpose() {
                            Ok(p) => p,
                            Err(e) => {
                                writeln!(stdout, "{e}")?;
                                continue;
                            }
                        };
                        record_verdict(&mut store, case, alert, VerdictLabel::FP, reviewer).and_then(|_| {
                            match pattern {
                                // tagging needs an agreed FP; a disagreeing co-reviewer defers it
                                Some(p) => match tag_failure_pattern(&mut store, case, alert, p, reviewer) {
                                    Err(cryptoscope::bench::VerdictError::NotFalsePositive(_)) => {
                                        eprintln!("pattern not stored: reviewers disagree on this alert");
                                        Ok(())
                                    }
                                    other => other.map(|_| ()),
                                },
                                None => Ok(()),
                            }
                        })
                    }
                    _ => {
                        writeln!(stdout, "?")?;
                        continue;
                    }
                };
                match result {
                    Ok(()) => {
                        labeled += 1;
                        break;
                    }
                    Err(e) => writeln!(stdout, "rejected: {e}")?,
                }
            }
        }
    }
    writeln!(stdout, "\n{labeled} labeled, {} left", pending - labeled)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_refine(cfg: &RunConfig) -> Result<ExitCode> {
    let lexicon = leak_lexicon(cfg)?;
    let manifest = load_manifest(cfg)?;
    let rules = match &cfg.rules {
        Some(p) => InapplicabilityRules::load(p)?,
        None => InapplicabilityRules::default(),
    };
    let root = cfg.out.join("refined");
    let mut refined = Manifest {
        root: root.clone(),
        benchmarks: Vec::new(),
    };
    let mut renames = serde_json::Map::new();
    let mut leaks = 0usize;
    for (i, b) in manifest.benchmarks.iter().enumerate() {
        let group = char::from(b'A' + (i % 26) as u8);
        let mut sanitizer = Sanitizer::new(lexicon.clone()).with_group(group);
        let mut cases = Vec::new();
        let mut maps = serde_json::Map::new();
        for case in &b.cases {
            leaks += detect_leakage(case, &lexicon).len();
            let s = sanitizer.sanitize(case).with_context(|| format!("sanitizing case {}", case.case_id))?;
            for u in &s.case.units {
                write_atomic(&root.join(&u.path), u.content.as_bytes())?;
            }
            if !s.renames.is_empty() {
                maps.insert(case.case_id.clone(), serde_json::to_value(&s.renames)?);
            }
            cases.push(s.case);
        }
        renames.insert(b.name.clone(), serde_json::Value::Object(maps));
        refined.benchmarks.push(cryptoscope::bench::Benchmark {
            name: b.name.clone(),
            source: b.source,
            sanitized: true,
            cases,
        });
    }
    let all: Vec<BenchmarkCase> = refined.cases().cloned().collect();
    let flags = flag_inapplicable(&all, &rules);
    let pretty = |v: &serde_json::Value| -> Result<Vec<u8>> {
        let mut b = serde_json::to_vec_pretty(v)?;
        b.push(b'\n');
        Ok(b)
    };
    write_atomic(&root.join("manifest.json"), &pretty(&refined.to_json())?)?;
    write_atomic(&cfg.out.join("renames.json"), &pretty(&serde_json::Value::Object(renames))?)?;
    write_atomic(&cfg.out.join("inapplicability.json"), &pretty(&serde_json::to_value(&flags)?)?)?;
    println!(
        "{} case(s), {leaks} leaking identifier(s) renamed, {} inapplicability flag(s), {} redundancy cluster(s)",
        all.len(),
        flags.flags.len(),
        flags.clusters.len()
    );
    for f in &flags.flags {
        println!("  {:?} {} {}:{} {}", f.kind, f.case_id, f.unit_path, f.line, f.detail);
    }
    println!("refined benchmark written to {}", root.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    match cli.command {
        Command::Scan {
            setting,
            corpus,
            manifest,
            replay,
            dry_run,
            fail_on_alert,
        } => {
            setting.apply(&mut cfg)?;
            override_path(&mut cfg.corpus, &corpus);
            override_path(&mut cfg.manifest, &manifest);
            if corpus.is_some() {
                cfg.manifest = None;
            } else if manifest.is_some() {
                cfg.corpus = None;
            }
            cfg.check_inputs()?;
            cmd_scan(&cfg, replay.as_deref(), dry_run, fail_on_alert)
        }
        Command::Evaluate {
            setting,
            manifest,
            verdicts,
        } => {
            setting.apply(&mut cfg)?;
            override_path(&mut cfg.manifest, &manifest);
            override_path(&mut cfg.verdicts, &verdicts);
            cfg.check_inputs()?;
            cmd_evaluate(&cfg)
        }
        Command::Triage {
            manifest,
            verdicts,
            reviewer,
        } => {
            override_path(&mut cfg.manifest, &manifest);
            override_path(&mut cfg.verdicts, &verdicts);
            cfg.check_inputs()?;
            let reviewer = reviewer
                .or_else(|| cfg.reviewer.clone())
                .ok_or_else(|| anyhow!("no reviewer id given (--reviewer or config)"))?;
            cmd_triage(&cfg, &reviewer)
        }
        Command::Refine { manifest } => {
            override_path(&mut cfg.manifest, &manifest);
            cfg.check_inputs()?;
            cmd_refine(&cfg)
        }
        Command::Record {
            setting,
            corpus,
            manifest,
            store,
        } => {
            setting.apply(&mut cfg)?;
            override_path(&mut cfg.corpus, &corpus);
            override_path(&mut cfg.manifest, &manifest);
            cfg.check_inputs()?;
            cmd_record(&cfg, store.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
