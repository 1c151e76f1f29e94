use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use comt_core::augment::{augment_corpus, AugmentMode, AugmentSpec, RemoteRephraser, Rephraser};
use comt_core::chain::{emit_dataset, ChainOptions, ChainedRecord, EmitMode, EmitOptions};
use comt_core::corpus::{load_raw_corpus, LoadedCorpus};
use comt_core::decompose::{segment_all, RemoteSegmenter, Segmenter, VerifiedRecord};
use comt_core::inject::{inject_corpus, sensitivity_sweep, validate_pipeline, InjectionSpec, LedgerEntry, OracleJudge};
use comt_core::llm::ChatCompletionsTransport;
use comt_core::medihall::{
    agreement_rate, corpus_medihall, human_score, judge_report, medihall_score, FixedJudge, HumanEvalTally, Judge,
    JudgmentExport, JudgmentRecord, MedihallError, RemoteJudge, SentenceJudgment,
};
use comt_core::metrics::{evaluate_pairs, load_texts, EmbeddingBackend, EvalOptions, HashedEmbeddings, TextRecord};
use comt_core::review::resolved_judgments;
use comt_core::synth::synthetic_corpus;
use comt_core::{Dimension, Exact, HierarchicalRecord, RawReport, RecordStore, Stage};
use comt_review::{router, AppState, ReviewerConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{JudgeConfig, RunConfig};
use crate::{
    AugmentArgs, BackendChoice, BertChoice, ChainArgs, Command, DecomposeArgs, EvaluateArgs, HumanscoreArgs,
    IngestArgs, InjectArgs, MedihallArgs, ServeArgs, UsageError, ValidateArgs,
};

pub struct Outcome {
    pub summary: Value,
    pub passed: bool,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn outcome(command: &str, cfg: &RunConfig, passed: bool, body: Value) -> Outcome {
    let mut summary = json!({
        "command": command,
        "status": if passed { "ok" } else { "failed" },
        "config": cfg,
    });
    if let (Value::Object(s), Value::Object(b)) = (&mut summary, body) {
        s.extend(b);
    }
    Outcome { summary, passed }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary` next to an output file as `<file>.run.json`.
fn write_stamp(output: &Path, summary: &Value) -> Result<PathBuf> {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    let path = output.with_file_name(name);
    fs::write(&path, serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub fn dispatch(cfg: &RunConfig, command: Command) -> Result<Outcome> {
    match command {
        Command::Ingest(a) => ingest(cfg, a),
        Command::Decompose(a) => decompose(cfg, a),
        Command::Chain(a) => chain(cfg, a),
        Command::Augment(a) => augment(cfg, a),
        Command::Evaluate(a) => evaluate(cfg, a),
        Command::Medihall(a) => medihall(cfg, a),
        Command::Inject(a) => inject(cfg, a),
        Command::Validate(a) => validate(cfg, a),
        Command::Humanscore(a) => humanscore(cfg, a),
        Command::Serve(a) => serve(cfg, a),
    }
}

fn ingest(cfg: &RunConfig, a: IngestArgs) -> Result<Outcome> {
    let loaded = match (&a.input, a.synthetic) {
        (_, Some(n)) => {
            let mut reports = synthetic_corpus(n, cfg.seed);
            if !a.source.is_empty() {
                reports.iter_mut().for_each(|r| r.source = a.source.clone());
            }
            LoadedCorpus { reports, rejects: Vec::new() }
        }
        (Some(path), None) => match load_raw_corpus(path, &a.source) {
            Ok(l) => l,
            Err(e @ comt_core::corpus::CorpusError::DuplicateIds { .. }) => {
                log::error!("{e}");
                return Ok(outcome("ingest", cfg, false, json!({ "error": e.to_string() })));
            }
            Err(e) => return Err(e.into()),
        },
        (None, None) => return Err(usage("ingest needs --input or --synthetic")),
    };
    let mut store = RecordStore::open(cfg.store_path()?)?;
    let existing: HashMap<String, RawReport> =
        store.read::<RawReport>()?.into_iter().map(|r| (r.report_id.clone(), r)).collect();
    let mut fresh = Vec::new();
    let mut unchanged = 0;
    let mut conflicts = Vec::new();
    for r in loaded.reports {
        match existing.get(&r.report_id) {
            None => fresh.push(r),
            Some(prev) if *prev == r => unchanged += 1,
            Some(_) => conflicts.push(r.report_id),
        }
    }
    store.append(&fresh)?;
    for rej in &loaded.rejects {
        log::warn!("line {} rejected: {}", rej.line, rej.reason);
    }
    if !conflicts.is_empty() {
        log::error!("{} reports differ from stored reports with the same id", conflicts.len());
    }
    Ok(outcome(
        "ingest",
        cfg,
        conflicts.is_empty(),
        json!({
            "appended": fresh.len(),
            "unchanged": unchanged,
            "conflicts": conflicts,
            "rejects": loaded.rejects,
            "raw_total": store.count(Stage::Raw),
        }),
    ))
}

fn decompose(cfg: &RunConfig, a: DecomposeArgs) -> Result<Outcome> {
    let mut store = RecordStore::open(cfg.store_path()?)?;
    let todo: Vec<RawReport> =
        store.read::<RawReport>()?.into_iter().filter(|r| !store.contains(Stage::Decomposed, &r.report_id)).collect();
    let rule;
    let remote;
    let backend: &dyn Segmenter = match a.backend {
        BackendChoice::Rule => {
            rule = cfg.segmenter()?;
            &rule
        }
        BackendChoice::Remote => {
            let rc =
                cfg.segmentation.clone().ok_or_else(|| usage("--backend remote needs a [segmentation] section"))?;
            let retry = rc.retry_policy();
            let id = format!("remote:{}", rc.model);
            remote = RemoteSegmenter::new(id, ChatCompletionsTransport::new(rc)?, retry);
            &remote
        }
    };
    let results = segment_all(&todo, backend, cfg.in_flight);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in todo.iter().zip(results) {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::error!("{}: {e}", r.report_id);
                failures.push(json!({ "report_id": r.report_id, "error": e.to_string() }));
            }
        }
    }
    store.append(&records)?;
    Ok(outcome(
        "decompose",
        cfg,
        failures.is_empty(),
        json!({
            "backend_id": backend.backend_id(),
            "deterministic": backend.is_deterministic(),
            "segmented": records.len(),
            "already_present": store.count(Stage::Decomposed) - records.len(),
            "failures": failures,
        }),
    ))
}

/// Latest version of each report's hierarchical record.
fn latest_records(store: &RecordStore) -> Result<BTreeMap<String, HierarchicalRecord>> {
    let mut latest: BTreeMap<String, HierarchicalRecord> = BTreeMap::new();
    let verified = store.read::<VerifiedRecord>()?.into_iter().map(|v| v.0);
    for rec in store.read::<HierarchicalRecord>()?.into_iter().chain(verified) {
        match latest.get(&rec.report_id) {
            Some(prev) if prev.version >= rec.version => {}
            _ => {
                latest.insert(rec.report_id.clone(), rec);
            }
        }
    }
    Ok(latest)
}

fn chain(cfg: &RunConfig, a: ChainArgs) -> Result<Outcome> {
    let mode: EmitMode = a.mode.parse().map_err(usage)?;
    let dimensions = if a.dimensions.is_empty() {
        None
    } else {
        Some(
            a.dimensions
                .iter()
                .map(|d| d.parse::<Dimension>().map_err(|e| usage(format!("--dimensions: {e}"))))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    if a.allow_unverified {
        log::warn!("chaining records that have not passed review");
    }
    let options = ChainOptions {
        include_sentinels: cfg.include_sentinels && !a.no_sentinels,
        allow_unverified: a.allow_unverified,
    };
    let templates = cfg.templates()?;
    let mut store = RecordStore::open(cfg.store_path()?)?;
    let mut fresh = Vec::new();
    let mut unverified = Vec::new();
    let mut present = 0;
    for rec in latest_records(&store)?.values() {
        match ChainedRecord::build(rec, &templates, options) {
            Ok(c) => {
                if store.contains(Stage::Chained, &format!("{}@v{}", c.report_id, c.source_version)) {
                    present += 1;
                } else {
                    fresh.push(c);
                }
            }
            Err(comt_core::chain::ChainError::Unverified { report_id, .. }) => unverified.push(report_id),
            Err(e) => return Err(e.into()),
        }
    }
    store.append(&fresh)?;
    if !unverified.is_empty() {
        log::warn!("{} records skipped: not verified in round 2", unverified.len());
    }
    let body = json!({
        "options": options,
        "chained": fresh.len(),
        "already_present": present,
        "skipped_unverified": unverified,
    });
    let mut result = outcome("chain", cfg, true, body);
    if let Some(dir) = &a.emit_dir {
        let emitted = emit_dataset(&store, dir, &EmitOptions { mode, dimensions })?;
        result.summary["emit"] = serde_json::to_value(&emitted)?;
        write_stamp(&dir.join("dataset"), &result.summary)?;
    }
    Ok(result)
}

fn augment(cfg: &RunConfig, a: AugmentArgs) -> Result<Outcome> {
    let mode: AugmentMode = a.mode.parse().map_err(usage)?;
    let spec = AugmentSpec::new(mode, a.rate, cfg.seed).map_err(|e| usage(e.to_string()))?;
    let loaded = load_raw_corpus(&a.input, "")?;
    let remote;
    let rephraser: Option<&dyn Rephraser> = match mode {
        AugmentMode::Rephrase => {
            let rc = cfg.rephrase.clone().ok_or_else(|| usage("rephrase needs a [rephrase] section in the config"))?;
            let retry = rc.retry_policy();
            let id = format!("remote:{}", rc.model);
            remote = RemoteRephraser::new(id, ChatCompletionsTransport::new(rc)?, retry);
            Some(&remote)
        }
        _ => None,
    };
    let out = augment_corpus(&loaded.reports, &spec, rephraser, cfg.in_flight)?;
    write_jsonl(&a.output, &out.reports)?;
    let result = outcome(
        "augment",
        cfg,
        true,
        json!({
            "spec": spec,
            "deterministic": mode != AugmentMode::Rephrase,
            "input_reports": loaded.reports.len(),
            "augmented": out.reports.len(),
            "rejections": out.rejections,
            "output": a.output,
        }),
    );
    write_stamp(&a.output, &result.summary)?;
    Ok(result)
}

fn evaluate(cfg: &RunConfig, a: EvaluateArgs) -> Result<Outcome> {
    let candidates = load_texts(&a.candidates)?;
    let references = load_texts(&a.references)?;
    let backend: Option<Box<dyn EmbeddingBackend>> = match (a.bertscore, &cfg.embedding) {
        (BertChoice::None, _) | (BertChoice::Auto, None) => None,
        (BertChoice::Auto, Some(ec)) => Some(ec.build()?),
        (BertChoice::Hashed, _) => Some(Box::new(HashedEmbeddings::new(256, cfg.seed))),
    };
    let options = EvalOptions { in_flight: cfg.in_flight, ..Default::default() };
    let out = match evaluate_pairs(&candidates, &references, backend.as_deref(), &options) {
        Ok(o) => o,
        Err(e @ comt_core::metrics::EvaluateError::MissingReferences(_)) => {
            log::error!("{e}");
            return Ok(outcome("evaluate", cfg, false, json!({ "error": e.to_string() })));
        }
        Err(e) => return Err(e.into()),
    };
    let deterministic = !matches!(&cfg.embedding, Some(ec) if a.bertscore == BertChoice::Auto
        && ec.kind == comt_core::metrics::EmbeddingKind::RemoteService);
    let result = outcome(
        "evaluate",
        cfg,
        true,
        json!({ "summary": out.summary, "deterministic": deterministic, "output": a.output }),
    );
    if let Some(path) = &a.output {
        write_jsonl(path, &out.reports)?;
        write_stamp(path, &result.summary)?;
    }
    Ok(result)
}

fn build_judge(jc: &JudgeConfig) -> Result<Box<dyn Judge>> {
    Ok(match jc {
        JudgeConfig::Remote { id, remote } => {
            let retry = remote.retry_policy();
            Box::new(RemoteJudge::new(id.clone(), ChatCompletionsTransport::new(remote.clone())?, retry))
        }
        JudgeConfig::Ledger { id, path } => {
            let entries: Vec<LedgerEntry> = read_jsonl(path)?;
            Box::new(OracleJudge::from_entries(id.clone(), &entries))
        }
        JudgeConfig::Fixed { id, label } => Box::new(FixedJudge::new(id.clone(), *label)),
    })
}

#[derive(Serialize)]
struct ReportLine {
    report_id: String,
    n: usize,
    score: Option<f64>,
    score_exact: Option<String>,
    pending_count: usize,
}

fn medihall(cfg: &RunConfig, a: MedihallArgs) -> Result<Outcome> {
    let mut store = RecordStore::open(cfg.store_path()?)?;
    let mut judged = 0;
    let mut deterministic = true;
    if let Some(path) = &a.candidates {
        if cfg.judges.len() != 2 {
            return Err(usage(format!(
                "medihall needs exactly two [[judges]] in the config, found {}",
                cfg.judges.len()
            )));
        }
        if cfg.judges[0].id() == cfg.judges[1].id() {
            return Err(usage(format!("both judges are named {:?}; judge ids must differ", cfg.judges[0].id())));
        }
        deterministic = cfg.judges.iter().all(JudgeConfig::is_deterministic);
        let judges = [build_judge(&cfg.judges[0])?, build_judge(&cfg.judges[1])?];
        let references: HashMap<String, RawReport> =
            store.read::<RawReport>()?.into_iter().map(|r| (r.report_id.clone(), r)).collect();
        let candidates: Vec<TextRecord> = load_texts(path)?;
        let missing: Vec<&str> = candidates
            .iter()
            .filter(|c| !references.contains_key(&c.report_id))
            .map(|c| c.report_id.as_str())
            .collect();
        if !missing.is_empty() {
            bail!("candidates without a stored reference report: {}", missing.join(", "));
        }
        for c in &candidates {
            if store.contains(Stage::Judgments, &JudgmentRecord::id_for(&a.run_id, &c.report_id, 0)) {
                continue;
            }
            let js = judge_report(
                &c.report_id,
                &c.text,
                &references[&c.report_id],
                [&*judges[0], &*judges[1]],
                cfg.in_flight,
            )?;
            let records: Vec<JudgmentRecord> =
                js.into_iter().map(|judgment| JudgmentRecord { run_id: a.run_id.clone(), judgment }).collect();
            store.append(&records)?;
            judged += 1;
        }
    }

    let mut by_report: BTreeMap<String, Vec<SentenceJudgment>> = BTreeMap::new();
    for r in resolved_judgments(&store)?.into_iter().filter(|r| r.run_id == a.run_id) {
        by_report.entry(r.judgment.report_id.clone()).or_default().push(r.judgment);
    }
    if by_report.is_empty() {
        return Err(usage(format!("run {:?} has no judgments; pass --candidates", a.run_id)));
    }
    let mut results = Vec::new();
    let mut lines = Vec::new();
    for js in by_report.values_mut() {
        js.sort_by_key(|j| j.sentence.index);
        let r = medihall_score::<f64>(js)?;
        let exact = medihall_score::<Exact>(js)?;
        lines.push(ReportLine {
            report_id: r.report_id.clone(),
            n: r.n,
            score: r.score,
            score_exact: exact.score.map(|s| s.to_string()),
            pending_count: r.pending_count,
        });
        results.push(r);
    }
    let all: Vec<SentenceJudgment> = by_report.values().flatten().cloned().collect();
    let (corpus, pending, passed) = match corpus_medihall(&results) {
        Ok(c) => (Some(c), Vec::new(), true),
        Err(MedihallError::PendingReports(ids)) => {
            log::warn!("{} reports have unadjudicated disagreements; corpus score withheld", ids.len());
            (None, ids, false)
        }
        Err(e) => return Err(e.into()),
    };
    let result = outcome(
        "medihall",
        cfg,
        passed,
        json!({
            "run_id": a.run_id,
            "deterministic": deterministic,
            "newly_judged_reports": judged,
            "sentences": all.len(),
            "agreement_rate": agreement_rate(&all),
            "corpus": corpus,
            "pending_reports": pending,
            "reports": lines,
        }),
    );
    if let Some(path) = &a.export {
        write_jsonl(path, all.iter().map(JudgmentExport::from))?;
        write_stamp(path, &result.summary)?;
    }
    Ok(result)
}

fn references_from(
    cfg: &RunConfig,
    input: &Option<PathBuf>,
) -> Result<(Vec<RawReport>, BTreeMap<String, HierarchicalRecord>)> {
    match input {
        Some(path) => Ok((load_raw_corpus(path, "")?.reports, BTreeMap::new())),
        None => {
            let store = RecordStore::open_read(cfg.store_path()?)?;
            Ok((store.read()?, latest_records(&store)?))
        }
    }
}

fn inject(cfg: &RunConfig, a: InjectArgs) -> Result<Outcome> {
    let spec = InjectionSpec { rates: a.rates, seed: cfg.seed };
    let (refs, records) = references_from(cfg, &a.input)?;
    let corpus = inject_corpus(&refs, &records, &spec, &cfg.tables()?)?;
    fs::create_dir_all(&a.output_dir)?;
    let candidates = a.output_dir.join("candidates.jsonl");
    let ledger = a.output_dir.join("ledger.jsonl");
    write_jsonl(
        &candidates,
        corpus.reports.iter().map(|r| TextRecord { report_id: r.report_id.clone(), text: r.candidate_text.clone() }),
    )?;
    write_jsonl(&ledger, corpus.ledger())?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in corpus.ledger() {
        *counts.entry(e.label.to_string()).or_default() += 1;
    }
    let result = outcome(
        "inject",
        cfg,
        true,
        json!({
            "spec": spec,
            "tables_version": corpus.tables_version,
            "reports": corpus.reports.len(),
            "label_counts": counts,
            "expected_corpus_score": corpus.expected_corpus_score::<f64>(),
            "candidates": candidates,
            "ledger": ledger,
        }),
    );
    write_stamp(&ledger, &result.summary)?;
    Ok(result)
}

fn validate(cfg: &RunConfig, a: ValidateArgs) -> Result<Outcome> {
    let spec = InjectionSpec { rates: a.rates, seed: cfg.seed };
    let (refs, records) = match &a.input {
        Some(_) => references_from(cfg, &a.input)?,
        None => (synthetic_corpus(a.reports, cfg.seed), BTreeMap::new()),
    };
    let tables = cfg.tables()?;
    let report = validate_pipeline(&refs, &records, &spec, &tables, a.mode.into(), cfg.in_flight)?;
    eprint!("{}", report.render_text());
    let mut passed = report.passed;
    let mut body = json!({ "validation": report });
    if a.sweep {
        let mut base = spec;
        base.rates.catastrophic = 0.0;
        base.rates.critical = 0.0;
        base.rates.attribute = 0.0;
        let points = sensitivity_sweep(&refs, &records, &base, &[0.0, 0.25, 0.5, 0.75, 1.0], &tables, cfg.in_flight)?;
        let monotone = points.windows(2).all(|w| w[1].expected <= w[0].expected);
        let exact = points.iter().all(|p| p.computed == Some(p.expected));
        if !(monotone && exact) {
            log::error!("sensitivity sweep failed: monotone={monotone} exact={exact}");
        }
        passed &= monotone && exact;
        body["sweep"] = json!({ "points": points, "non_increasing": monotone, "exact": exact });
    }
    Ok(outcome("validate", cfg, passed, body))
}

fn parse_tally(s: &str) -> Result<HumanEvalTally> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [id, f, c, fl, d] = parts.as_slice() else {
        return Err(usage(format!("--tally {s:?}: expected clinician,faith,com,flu,data")));
    };
    let n = |v: &str| v.parse::<u64>().map_err(|e| usage(format!("--tally {s:?}: {e}")));
    Ok(HumanEvalTally::new(*id, n(f)?, n(c)?, n(fl)?, n(d)?))
}

fn humanscore(cfg: &RunConfig, a: HumanscoreArgs) -> Result<Outcome> {
    let mut tallies: Vec<HumanEvalTally> = match &a.input {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    for t in &a.tally {
        tallies.push(parse_tally(t)?);
    }
    let scored = human_score::<f64>(&tallies).and_then(|f| Ok((f, human_score::<Exact>(&tallies)?)));
    match scored {
        Ok((f, exact)) => {
            let per: Vec<Value> = f
                .per_clinician
                .iter()
                .zip(&exact.per_clinician)
                .map(|((id, s), (_, e))| json!({ "clinician_id": id, "score": s, "score_exact": e.to_string() }))
                .collect();
            Ok(outcome(
                "humanscore",
                cfg,
                true,
                json!({ "per_clinician": per, "mean": f.mean, "mean_exact": exact.mean.to_string() }),
            ))
        }
        Err(e) => {
            log::error!("{e}");
            Ok(outcome("humanscore", cfg, false, json!({ "error": e.to_string() })))
        }
    }
}

fn serve(cfg: &RunConfig, a: ServeArgs) -> Result<Outcome> {
    let reviewers: Vec<String> = match &a.reviewers {
        Some(p) => ReviewerConfig::load(p)?.reviewers.into_iter().collect(),
        None => cfg.reviewers.clone(),
    };
    if reviewers.is_empty() {
        return Err(usage("no reviewers configured (--reviewers FILE or `reviewers` in the config file)"));
    }
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(usage(format!("--static {} is not a directory", dir.display())));
        }
    }
    let store = RecordStore::open(cfg.store_path()?)?;
    let app = router(AppState::new(store, reviewers), a.static_dir.as_deref());
    let addr = SocketAddr::new(a.bind, a.port);
    tokio::runtime::Runtime::new()?
        .block_on(comt_review::serve(addr, app))
        .map_err(|e| anyhow!("serving on {addr}: {e}"))?;
    Ok(outcome("serve", cfg, true, json!({ "address": addr.to_string() })))
}
