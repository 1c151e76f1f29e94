//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use comt_core::chain::{serialize_prompt, QuestionTemplates, TrainingExample};
use comt_core::corpus::Sentence;
use comt_core::decompose::Dimension;
use comt_core::inject::{
    inject_corpus, sensitivity_sweep, validate_pipeline, ConfusionTables, InjectionRates, InjectionSpec, JudgeMode,
    OracleJudge, ORACLE_ID,
};
use comt_core::medihall::{
    corpus_medihall, human_score, judge_report, medihall_score, FixedJudge, HumanEvalTally, JudgeOutcome, JudgeVerdict,
    JudgmentRecord, MedihallError, SentenceJudgment,
};
use comt_core::metrics::{
    bertscore, lcs_len, meteor, meteor_alignment, normalize_tokenize, rouge_l, rouge_n, BertScoreOptions, MeteorParams,
    OrthogonalEmbeddings, TokenSeq, NORMALIZATION_ID,
};
use comt_core::review::{resolved_judgments, ReviewKind};
use comt_core::synth::synthetic_corpus;
use comt_core::{Exact, HallucinationLabel, HierarchicalRecord, RawReport, RecordStore, Stage};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

/// SHA-256 of the chained `train.jsonl` emitted from the fixture corpus.
/// Pinned so runs on other platforms are compared against this one.
const FIXTURE_TRAIN_SHA256: &str = "60e44e3acc0f5d907f293f23ab29946f60d4fcc9106c16b19721459ded40bd4d";

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn agreed(report: &str, index: usize, label: HallucinationLabel) -> SentenceJudgment {
    let v = |id: &str| {
        JudgeOutcome::Verdict(JudgeVerdict {
            sentence_index: index,
            label,
            judge_id: id.into(),
            rationale: String::new(),
            raw_response: String::new(),
        })
    };
    let sentence = Sentence { index, text: format!("Sentence {index}."), span: (0, 0) };
    SentenceJudgment::new(report, sentence, [v("a"), v("b")]).unwrap()
}

fn medihall_exactness() -> Check {
    use HallucinationLabel::*;
    let start = Instant::now();
    let weight = |l: HallucinationLabel| match l {
        Catastrophic => 0.0,
        Critical => 0.3,
        Attribute => 0.6,
        Correct => 1.0,
    };
    for (l, w) in [(Catastrophic, 0.0), (Critical, 0.3), (Attribute, 0.6), (Correct, 1.0)] {
        ensure(l.weight::<f64>() == w, || format!("weight of {l} is {}", l.weight::<f64>()))?;
    }
    let worked: Vec<_> = [Correct, Critical, Attribute].iter().enumerate().map(|(i, l)| agreed("w", i, *l)).collect();
    let f = medihall_score::<f64>(&worked).unwrap().score.unwrap();
    let hand = (1.0 + 0.3 + 0.6) / 3.0;
    ensure(f == hand, || format!("worked case {f} != {hand}"))?;
    let exact = medihall_score::<Exact>(&worked).unwrap().score.unwrap();
    ensure(exact == Exact::new(19, 30), || format!("worked case exact {exact} != 19/30"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for v in 0..1000 {
        let n = rng.gen_range(1..=40usize);
        let labels: Vec<HallucinationLabel> =
            (0..n).map(|_| HallucinationLabel::ALL[rng.gen_range(0..4usize)]).collect();
        let js: Vec<_> = labels.iter().enumerate().map(|(i, l)| agreed("r", i, *l)).collect();
        let got = medihall_score::<f64>(&js).unwrap().score.unwrap();
        let mut sum = 0.0;
        for l in &labels {
            sum += weight(*l);
        }
        let expected = sum / n as f64;
        ensure(got.to_bits() == expected.to_bits(), || format!("vector {v}: {got:?} != {expected:?}"))?;
        let tenths: i64 = labels.iter().map(|l| (weight(*l) * 10.0).round() as i64).sum();
        let ex = medihall_score::<Exact>(&js).unwrap().score.unwrap();
        ensure(ex == Exact::new(tenths, 10 * n as i64), || format!("vector {v}: exact {ex}"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("1000 vectors bit-identical to (sum of weights)/N, worked case 19/30, {elapsed:.2?}"))
}

fn spec(cat: f64, crit: f64, attr: f64, seed: u64) -> InjectionSpec {
    InjectionSpec { rates: InjectionRates::new(cat, crit, attr).unwrap(), seed }
}

fn oracle_end_to_end() -> Check {
    let start = Instant::now();
    let refs = synthetic_corpus(200, 11);
    let tables = ConfusionTables::builtin();
    let none = BTreeMap::new();
    let v = validate_pipeline(&refs, &none, &spec(0.2, 0.1, 0.1, 7), &tables, JudgeMode::Concordant, 8)
        .map_err(|e| e.to_string())?;
    ensure(v.passed, || v.render_text())?;
    ensure(v.computed_corpus_score == Some(v.expected_corpus_score), || {
        format!("computed {:?} != expected {}", v.computed_corpus_score, v.expected_corpus_score)
    })?;
    ensure(v.confusion.is_identity(), || format!("confusion not identity: {:?}", v.confusion))?;
    let injected: usize =
        v.label_counts.iter().filter(|(l, _)| **l != HallucinationLabel::Correct).map(|(_, n)| n).sum();
    ensure(injected > 0, || "nothing was injected".into())?;

    let rates = [0.0, 0.25, 0.5, 0.75, 1.0];
    let sweep =
        sensitivity_sweep(&refs, &none, &spec(0.0, 0.0, 0.0, 7), &rates, &tables, 8).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = sweep.iter().map(|p| p.expected).collect();
    ensure(sweep.iter().all(|p| p.computed == Some(p.expected)), || format!("sweep not exact: {sweep:?}"))?;
    ensure(scores.windows(2).all(|w| w[1] <= w[0]), || format!("sweep increases: {scores:?}"))?;
    // with the other two rates at 0.1, r_cat = 1 is not a valid distribution
    let held =
        sensitivity_sweep(&refs, &none, &spec(0.0, 0.1, 0.1, 7), &rates[..4], &tables, 8).map_err(|e| e.to_string())?;
    let held_scores: Vec<f64> = held.iter().map(|p| p.expected).collect();
    ensure(held.iter().all(|p| p.computed == Some(p.expected)), || format!("held sweep not exact: {held:?}"))?;
    ensure(held_scores.windows(2).all(|w| w[1] <= w[0]), || format!("held sweep increases: {held_scores:?}"))?;

    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!(
        "200 reports, {} sentences, score {:.6} == ledger, identity confusion, sweep {:?}, {elapsed:.2?}",
        v.sentences, v.expected_corpus_score, scores
    ))
}

fn human_score_formula() -> Check {
    let t = HumanEvalTally::new("dr-a", 120, 100, 140, 200);
    let f = t.score::<f64>().map_err(|e| e.to_string())?;
    ensure(f == 0.6, || format!("(120,100,140,200) gave {f}"))?;
    let e = t.score::<Exact>().map_err(|e| e.to_string())?;
    ensure(e == Exact::new(3, 5), || format!("exact gave {e}"))?;
    let zero = HumanEvalTally::new("z", 0, 0, 0, 50).score::<f64>().map_err(|e| e.to_string())?;
    let one = HumanEvalTally::new("o", 50, 50, 50, 50).score::<f64>().map_err(|e| e.to_string())?;
    ensure(zero == 0.0 && one == 1.0, || format!("boundaries gave {zero} and {one}"))?;
    ensure(HumanEvalTally::new("x", 1, 0, 0, 0).score::<f64>().is_err(), || "num_data = 0 accepted".into())?;
    let report = human_score::<Exact>(&[t, HumanEvalTally::new("o", 50, 50, 50, 50)]).map_err(|e| e.to_string())?;
    ensure(report.mean == Exact::new(4, 5), || format!("mean {}", report.mean))?;
    Ok("(120,100,140,200) -> 0.6 = 3/5 exactly, boundaries 0 and 1".into())
}

fn comt(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_comt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("COMT_STORE")
        .env_remove("COMT_SEED")
        .env_remove("COMT_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("comt {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// ingest, rule decompose, chain and emit into `dir`; returns the emit dir.
fn build_dataset(dir: &Path, ingest: &[&str]) -> Result<PathBuf, String> {
    let store = dir.join("store");
    let out = dir.join("out");
    let mut args = vec!["ingest", "--store", s(&store)];
    args.extend_from_slice(ingest);
    comt(&args)?;
    comt(&["decompose", "--store", s(&store)])?;
    comt(&["chain", "--store", s(&store), "--allow-unverified", "--emit-dir", s(&out)])?;
    Ok(out)
}

fn split_files(out: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    ["train", "val", "test"]
        .iter()
        .map(|n| {
            let p = out.join(format!("{n}.jsonl"));
            std::fs::read(&p).map(|b| (n.to_string(), b)).map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect()
}

fn chain_prefix() -> Check {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ingest = ["--synthetic", "500", "--seed", "42"];
    let out_a = build_dataset(a.path(), &ingest)?;
    let out_b = build_dataset(b.path(), &ingest)?;
    let files_a = split_files(&out_a)?;
    ensure(files_a == split_files(&out_b)?, || "emission differs between runs".into())?;

    let store = RecordStore::open_read(a.path().join("store")).map_err(|e| e.to_string())?;
    let records: HashMap<String, HierarchicalRecord> = store
        .read::<HierarchicalRecord>()
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| (r.report_id.clone(), r))
        .collect();
    let templates = QuestionTemplates::builtin();
    let mut pairs = 0;
    let mut reports = HashSet::new();
    for (_, bytes) in &files_a {
        for line in String::from_utf8_lossy(bytes).lines() {
            let ex: TrainingExample = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let d = ex.dimension.ok_or("chained example without a dimension")?;
            let k = d.ordinal();
            let rec = &records[&ex.report_id];
            let prelude: Vec<String> =
                Dimension::ALL[..k].iter().map(|lower| rec.answer(*lower).answer_text.clone()).collect();
            let expected = serialize_prompt(&prelude, templates.question(d));
            ensure(ex.prompt == expected, || format!("{}: prompt {:?} != {:?}", ex.example_id, ex.prompt, expected))?;
            if k == 0 {
                ensure(ex.prompt == templates.question(d), || {
                    format!("{}: modality prelude not empty", ex.example_id)
                })?;
            }
            ensure(ex.target == rec.answer(d).answer_text, || format!("{}: target mismatch", ex.example_id))?;
            reports.insert(ex.report_id.clone());
            pairs += 1;
        }
    }
    ensure(reports.len() == 500 && pairs == 3000, || format!("{} reports, {pairs} pairs emitted", reports.len()))?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("500 records, 3000 pairs, preludes exactly dims 0..k-1, byte-identical reruns, {elapsed:.2?}"))
}

fn tokens(text: &str) -> TokenSeq {
    normalize_tokenize(text)
}

fn seq(tokens: &[&str]) -> TokenSeq {
    TokenSeq { tokens: tokens.iter().map(|t| t.to_string()).collect(), normalization: NORMALIZATION_ID.into() }
}

fn close(got: f64, want: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= 1e-9, || format!("{what}: {got} != {want}"))
}

/// LCS by enumerating every subsequence of `a`, as bitmask codes.
fn subsequence_codes(a: &[u8]) -> HashSet<u32> {
    (0u32..1 << a.len())
        .map(|mask| {
            let picked: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
            picked.iter().fold(1u32, |code, t| code * 5 + u32::from(*t) + 1)
        })
        .collect()
}

fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let sa = subsequence_codes(a);
    let sb = subsequence_codes(b);
    // code length is recoverable from its magnitude, so take the largest
    // shared code's length
    sa.intersection(&sb)
        .map(|c| {
            let (mut c, mut n) = (*c, 0);
            while c > 1 {
                c /= 5;
                n += 1;
            }
            n
        })
        .max()
        .unwrap_or(0)
}

fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for t in 0..alphabet {
                let mut x: Vec<u8> = s.clone();
                x.push(t);
                next.push(x);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn metric_oracles() -> Check {
    let r = tokens("the lungs are clear");
    let c = tokens("lungs are clear");
    ensure(tokens("The Lungs, are clear.").tokens == ["the", "lungs", "are", "clear"], || "tokenization".into())?;
    ensure(tokens("1.5 cm nodule").tokens == ["1.5", "cm", "nodule"], || "decimal guard".into())?;
    let r1 = rouge_n::<f64>(&c, &r, 1).map_err(|e| e.to_string())?;
    close(r1.precision, 1.0, "ROUGE-1 P")?;
    close(r1.recall, 0.75, "ROUGE-1 R")?;
    close(r1.f1, 6.0 / 7.0, "ROUGE-1 F1")?;
    let r2 = rouge_n::<f64>(&c, &r, 2).map_err(|e| e.to_string())?;
    close(r2.precision, 1.0, "ROUGE-2 P")?;
    close(r2.recall, 2.0 / 3.0, "ROUGE-2 R")?;
    close(r2.f1, 0.8, "ROUGE-2 F1")?;
    let rl = rouge_l::<f64>(&c, &r).map_err(|e| e.to_string())?;
    close(rl.precision, 1.0, "ROUGE-L P")?;
    close(rl.recall, 0.75, "ROUGE-L R")?;
    close(rl.f1, 6.0 / 7.0, "ROUGE-L F1")?;
    let id = rouge_l::<f64>(&r, &r).map_err(|e| e.to_string())?;
    close(id.f1, 1.0, "ROUGE-L identity")?;
    let disjoint = rouge_l::<f64>(&tokens("a b"), &tokens("c d")).map_err(|e| e.to_string())?;
    close(disjoint.f1, 0.0, "ROUGE-L disjoint")?;

    let p = MeteorParams::default();
    let abcd = seq(&["a", "b", "c", "d"]);
    close(meteor::<f64>(&abcd, &abcd, &p), 0.9921875, "METEOR identity")?;
    let abdc = seq(&["a", "b", "d", "c"]);
    ensure(meteor_alignment(&abdc, &abcd).chunks == 3, || "METEOR chunk count".into())?;
    close(meteor::<f64>(&abdc, &abcd, &p), 1.0 - 0.5 * 0.75f64.powi(3), "METEOR swapped tail")?;
    close(meteor::<f64>(&seq(&["x"]), &abcd, &p), 0.0, "METEOR no overlap")?;

    let backend = OrthogonalEmbeddings::new(["a", "b", "c"]);
    let bs = bertscore::<f64>(&seq(&["a", "c"]), &seq(&["a", "b"]), &backend, &BertScoreOptions::default())
        .map_err(|e| e.to_string())?;
    close(bs.precision, 0.5, "BERTScore P")?;
    close(bs.recall, 0.5, "BERTScore R")?;
    close(bs.f1, 0.5, "BERTScore F1")?;

    let mut pairs = 0usize;
    let binary = all_sequences(2, 8);
    let codes: Vec<HashSet<u32>> = binary.iter().map(|s| subsequence_codes(s)).collect();
    let words = |s: &[u8]| -> Vec<String> { s.iter().map(|t| ((b'a' + t) as char).to_string()).collect() };
    let wb: Vec<Vec<String>> = binary.iter().map(|s| words(s)).collect();
    for i in 0..binary.len() {
        for j in 0..binary.len() {
            let brute = codes[i]
                .iter()
                .filter(|c| codes[j].contains(c))
                .map(|c| {
                    let (mut c, mut n) = (*c, 0);
                    while c > 1 {
                        c /= 5;
                        n += 1;
                    }
                    n
                })
                .max()
                .unwrap_or(0);
            let got = lcs_len(&wb[i], &wb[j]);
            ensure(got == brute, || format!("LCS {:?} {:?}: {got} != {brute}", binary[i], binary[j]))?;
            pairs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3000 {
        let mut gen = || -> Vec<u8> { (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(0..4u8)).collect() };
        let (a, b) = (gen(), gen());
        let (ta, tb) = (words(&a), words(&b));
        let brute = brute_lcs(&a, &b);
        ensure(lcs_len(&ta, &tb) == brute, || format!("LCS {a:?} {b:?}"))?;
        let seq_a = TokenSeq { tokens: ta, normalization: NORMALIZATION_ID.into() };
        let seq_b = TokenSeq { tokens: tb, normalization: NORMALIZATION_ID.into() };
        let l = rouge_l::<f64>(&seq_a, &seq_b).map_err(|e| e.to_string())?;
        close(l.recall, brute as f64 / b.len() as f64, "ROUGE-L recall vs brute LCS")?;
        pairs += 1;
    }
    Ok(format!("ROUGE/METEOR/BERTScore fixtures within 1e-9, LCS == brute force on {pairs} pairs (len <= 8)"))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Result<(StatusCode, Value), String> {
    let req = Request::builder().method(method).uri(uri).header(comt_review::REVIEWER_HEADER, "dr-a");
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .map_err(|e| e.to_string())?;
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
    Ok((status, serde_json::from_slice(&bytes).unwrap_or(Value::Null)))
}

fn percent(id: &str) -> String {
    id.replace('%', "%25").replace('/', "%2F").replace('#', "%23")
}

fn score_run(store: &RecordStore, run: &str) -> Result<Result<f64, Vec<String>>, String> {
    let mut by_report: BTreeMap<String, Vec<SentenceJudgment>> = BTreeMap::new();
    for r in resolved_judgments(store).map_err(|e| e.to_string())? {
        if r.run_id == run {
            by_report.entry(r.judgment.report_id.clone()).or_default().push(r.judgment);
        }
    }
    let results: Vec<_> = by_report.values().map(|js| medihall_score::<f64>(js).unwrap()).collect();
    match corpus_medihall(&results) {
        Ok(c) => Ok(Ok(c.score)),
        Err(MedihallError::PendingReports(ids)) => Ok(Err(ids)),
        Err(e) => Err(e.to_string()),
    }
}

fn disagreement_protocol() -> Check {
    let refs = synthetic_corpus(60, 5);
    let corpus = inject_corpus(&refs, &BTreeMap::new(), &spec(0.2, 0.1, 0.1, 3), &ConfusionTables::builtin())
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut store = RecordStore::open(dir.path()).map_err(|e| e.to_string())?;
    store.append(&refs).map_err(|e| e.to_string())?;
    let oracle = OracleJudge::new(ORACLE_ID, &corpus);
    let mock = FixedJudge::new("always-correct", HallucinationLabel::Correct);
    let mut mutated = 0;
    for (reference, injected) in refs.iter().zip(&corpus.reports) {
        let js = judge_report(&reference.report_id, &injected.candidate_text, reference, [&oracle, &mock], 4)
            .map_err(|e| e.to_string())?;
        for (j, e) in js.iter().zip(&injected.entries) {
            let is_mutated = e.label != HallucinationLabel::Correct;
            mutated += usize::from(is_mutated);
            ensure(j.resolution.is_pending() == is_mutated, || {
                format!("{}#{}: {:?} for ledger {}", e.report_id, e.sentence_index, j.resolution, e.label)
            })?;
        }
        let records: Vec<_> =
            js.into_iter().map(|judgment| JudgmentRecord { run_id: "acc".into(), judgment }).collect();
        store.append(&records).map_err(|e| e.to_string())?;
    }
    let expected_pending: Vec<String> = corpus
        .reports
        .iter()
        .filter(|r| r.entries.iter().any(|e| e.label != HallucinationLabel::Correct))
        .map(|r| r.report_id.clone())
        .collect();
    match score_run(&store, "acc")? {
        Ok(s) => return Err(format!("scoring did not refuse (got {s})")),
        Err(ids) => ensure(ids == expected_pending, || format!("pending list {ids:?} != {expected_pending:?}"))?,
    }

    let ledger: HashMap<String, HallucinationLabel> = corpus
        .ledger()
        .map(|e| (format!("adj:{}", JudgmentRecord::id_for("acc", &e.report_id, e.sentence_index)), e.label))
        .collect();
    let app = comt_review::router(comt_review::AppState::new(store, ["dr-a".to_string()]), None);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let adjudicated = rt.block_on(async {
        let mut done = 0;
        loop {
            let kind = ReviewKind::Adjudication;
            let (st, page) = call(&app, "GET", &format!("/api/queue?kind={kind}&limit=25"), None).await?;
            ensure(st == StatusCode::OK, || format!("queue: {st}"))?;
            let items = page["items"].as_array().cloned().unwrap_or_default();
            if items.is_empty() {
                break;
            }
            for item in items {
                let id = item["item_id"].as_str().unwrap_or_default().to_string();
                let label = ledger.get(&id).ok_or_else(|| format!("item {id} not in ledger"))?;
                let body = json!({"version": item["version"], "reviewer_id": "dr-a", "decision": {"label": label}});
                let (st, resp) =
                    call(&app, "POST", &format!("/api/items/{}/decision", percent(&id)), Some(body)).await?;
                ensure(st == StatusCode::OK, || format!("deciding {id}: {st} {resp}"))?;
                done += 1;
            }
        }
        let (_, progress) = call(&app, "GET", "/api/progress", None).await?;
        let q = &progress["queues"]["adjudication"];
        ensure(q["pending"] == 0 && q["done"] == done, || format!("progress after adjudication: {q}"))?;
        Ok::<usize, String>(done)
    })?;
    ensure(adjudicated == mutated, || format!("{adjudicated} adjudicated, {mutated} mutated"))?;

    let store = RecordStore::open_read(dir.path()).map_err(|e| e.to_string())?;
    let expected = corpus.expected_corpus_score::<f64>().ok_or("empty corpus")?;
    match score_run(&store, "acc")? {
        Ok(s) => ensure(s == expected, || format!("after adjudication {s} != ledger {expected}"))?,
        Err(ids) => return Err(format!("still pending after adjudication: {ids:?}")),
    }
    Ok(format!(
        "{mutated} mutated sentences pending, refusal listed {} reports, {adjudicated} adjudicated via API, score {expected:.6} == ledger",
        expected_pending.len()
    ))
}

fn determinism_and_crash_safety() -> Check {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reports.jsonl");
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ingest = ["--input", s(&fixture), "--source", "fixture"];
    let files_a = split_files(&build_dataset(a.path(), &ingest)?)?;
    let files_b = split_files(&build_dataset(b.path(), &ingest)?)?;
    ensure(files_a == files_b, || "fixture emission differs between runs".into())?;
    let digest: String = Sha256::digest(&files_a[0].1).iter().map(|b| format!("{b:02x}")).collect();
    ensure(digest == FIXTURE_TRAIN_SHA256, || format!("train.jsonl sha256 {digest} != pinned {FIXTURE_TRAIN_SHA256}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reports = synthetic_corpus(50, 9);
    for crash_at in [0, 1, 17, 49] {
        let root = dir.path().join(format!("crash-{crash_at}"));
        {
            let mut store = RecordStore::open(&root).map_err(|e| e.to_string())?;
            store.inject_crash_after(crash_at);
            ensure(store.append(&reports).is_err(), || "simulated crash did not fail the append".into())?;
        }
        let ro = RecordStore::open_read(&root).map_err(|e| e.to_string())?;
        let got: Vec<RawReport> = ro.read().map_err(|e| e.to_string())?;
        ensure(got[..] == reports[..crash_at], || format!("crash at {crash_at}: read {} records", got.len()))?;
        let mut store = RecordStore::open(&root).map_err(|e| e.to_string())?;
        store.append(&reports[crash_at..]).map_err(|e| e.to_string())?;
        let all: Vec<RawReport> = store.read().map_err(|e| e.to_string())?;
        ensure(all == reports, || format!("crash at {crash_at}: resumed store differs"))?;
        ensure(store.count(Stage::Raw) == 50, || "count after resume".into())?;
    }
    Ok(format!("fixture emission byte-identical, sha256 {}..., crash prefixes whole at 0/1/17/49", &digest[..12]))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("MediHall formula exactness", medihall_exactness),
        ("End-to-end oracle validation", oracle_end_to_end),
        ("Human score formula", human_score_formula),
        ("Chain-prefix property", chain_prefix),
        ("Metric oracles", metric_oracles),
        ("Disagreement protocol", disagreement_protocol),
        ("Determinism and crash-safety", determinism_and_crash_safety),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
