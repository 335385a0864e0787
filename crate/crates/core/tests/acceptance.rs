//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs with `harness = false`; the process exits non-zero if any criterion
//! fails. Criterion 12 needs a live provider and runs only when
//! `DIALNORM_LIVE_CONFIG` names a config file.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use dialnorm::agent::classify_turn;
use dialnorm::chunker::{greedy_segment, merge_clusters};
use dialnorm::error::Error;
use dialnorm::eval::{cohens_kappa, norm_accuracy, status_accuracy, AccuracyMode, Labeling};
use dialnorm::model::{
    AttributeVector, DialogueSession, Embedding, NormCategory, NormChunk, NormLabel, NormStatus, PipelineConfig,
    RetrievalCandidate, SentenceSpan, Utterance,
};
use dialnorm::providers::{chat_with_repair, ChatRequest, MockChat, PromptKind, ScriptRule};
use dialnorm::retrieval::{
    build_index, build_window, determine_window_length, filter_top_n, score_candidates, window_length_from_score,
    ChunkingMethod, IndexEntry, IndexProvenance,
};

type Check = Result<(), String>;
type Criterion = (u32, &'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "chunker matches naive reference", chunker_oracle),
        (2, "planted blocks recovered", planted_blocks),
        (3, "attribute similarity is the mean of four cosines", attribute_mean),
        (4, "self-query ranks first with similarity 1", self_query_first),
        (5, "mean filter and top-n shortlist", shortlist_contract),
        (6, "window construction and length mapping", window_contract),
        (7, "classify and eval are byte-deterministic", end_to_end_determinism),
        (8, "feedback threads into the next turn", feedback_threading),
        (9, "ablation matrix with zero lookups for no-docs", ablation_matrix),
        (10, "metric fixtures", metric_fixtures),
        (11, "reply repair and No Norm rule", reply_repair),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("PASS {n:>2} {name} ({ms} ms)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why}");
            }
        }
    }
    match std::env::var_os("DIALNORM_LIVE_CONFIG") {
        Some(cfg) => match live_smoke(Path::new(&cfg)) {
            Ok(()) => println!("PASS 12 live provider smoke run"),
            Err(why) => {
                failed += 1;
                println!("FAIL 12 live provider smoke run: {why}");
            }
        },
        None => println!("SKIP 12 live provider smoke run (DIALNORM_LIVE_CONFIG not set)"),
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------- helpers ----------

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn raw_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn emb(v: Vec<f64>) -> Embedding {
    Embedding::normalized(v).expect("non-zero vector")
}

fn attrs(rng: &mut ChaCha8Rng, d: usize) -> (AttributeVector, [Vec<f64>; 4]) {
    let raw: [Vec<f64>; 4] = std::array::from_fn(|_| gaussian(rng, d));
    let v = AttributeVector::from_texts(["ci".into(), "if".into(), "lf".into(), "ctc".into()])
        .unwrap()
        .with_embeddings(raw.clone().map(emb));
    (v, raw)
}

fn entry(id: &str, attributes: AttributeVector, d: usize) -> IndexEntry {
    IndexEntry {
        chunk: NormChunk {
            chunk_id: id.into(),
            doc_id: "doc".into(),
            sentence_span: SentenceSpan { start: 0, end: 1 },
            text: format!("chunk {id}"),
            mean_embedding: emb(vec![1.0; d]),
        },
        attributes,
    }
}

fn provenance() -> IndexProvenance {
    IndexProvenance {
        chunking: ChunkingMethod::Fixed { window_sentences: 1 },
        doc_ids: vec!["doc".into()],
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn cli(args: &[&str]) -> Result<(String, String), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dialnorm"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    if !out.status.success() {
        return Err(format!("`dialnorm {}` exited {:?}: {stderr}", args.join(" "), out.status.code()));
    }
    Ok((stdout, stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Builds an index from the shipped norm documents into `dir`.
fn shipped_index(dir: &Path, name: &str, extra: &[&str]) -> Result<PathBuf, String> {
    let out = dir.join(name);
    let cfg = fixtures().join("config.json");
    let docs = fixtures().join("norm_docs");
    let mut args = vec!["--config", p(&cfg), "chunk", "--docs", p(&docs), "--out", p(&out)];
    args.extend_from_slice(extra);
    cli(&args)?;
    Ok(out)
}

fn read_lines(path: &Path) -> Result<Vec<Value>, String> {
    std::fs::read_to_string(path)
        .map_err(|e| e.to_string())?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

// ---------- 1 ----------

/// Consecutive-cosine loop followed by repeated left-to-right merge passes,
/// written against raw vectors.
fn naive_chunks(vs: &[Vec<f64>], eps_seg: f64, eps_merge: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = vec![vec![0]];
    for i in 1..vs.len() {
        if raw_cos(&vs[i - 1], &vs[i]) >= eps_seg {
            clusters.last_mut().unwrap().push(i);
        } else {
            clusters.push(vec![i]);
        }
    }
    let mean = |members: &[usize]| -> Vec<f64> {
        let d = vs[0].len();
        let mut m = vec![0.0; d];
        for &i in members {
            for k in 0..d {
                m[k] += vs[i][k];
            }
        }
        m
    };
    loop {
        let mut merged_any = false;
        let mut k = 0;
        while k + 1 < clusters.len() {
            if raw_cos(&mean(&clusters[k]), &mean(&clusters[k + 1])) > eps_merge {
                let next = clusters.remove(k + 1);
                clusters[k].extend(next);
                merged_any = true;
            } else {
                k += 1;
            }
        }
        if !merged_any {
            return clusters;
        }
    }
}

fn chunker_oracle() -> Check {
    let started = Instant::now();
    let mut pair_rng = ChaCha8Rng::seed_from_u64(99);
    let pairs: Vec<(f64, f64)> = (0..20)
        .map(|_| (pair_rng.random_range(-0.4..0.9), pair_rng.random_range(-0.4..0.95)))
        .collect();
    let (mut compared, mut with_merges, mut with_splits) = (0, 0, 0);
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=50);
        // Smooth random walk so both joins and splits occur.
        let mut cur = gaussian(&mut rng, 16);
        let mut vs = Vec::with_capacity(n);
        for _ in 0..n {
            let step = gaussian(&mut rng, 16);
            let jump = rng.random_bool(0.3);
            cur = cur.iter().zip(&step).map(|(c, s)| if jump { *s } else { c + 0.4 * s }).collect();
            vs.push(unit(cur.clone()));
        }
        let embs: Vec<Embedding> = vs.iter().cloned().map(emb).collect();
        for &(es, em) in &pairs {
            let seg = greedy_segment(&embs, es).map_err(|e| e.to_string())?;
            let merged = merge_clusters(&seg, &embs, em).map_err(|e| e.to_string())?;
            let got: Vec<Vec<usize>> = merged.clusters().iter().map(|r| r.clone().collect()).collect();
            let want = naive_chunks(&vs, es, em);
            ensure!(got == want, "seed {seed}, eps ({es}, {em}): {got:?} != {want:?}");
            compared += 1;
            with_merges += usize::from(merged.len() < seg.len());
            with_splits += usize::from(merged.len() > 1);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(compared == 4000, "compared {compared} cases");
    ensure!(with_merges > 100 && with_splits > 100, "weak coverage: {with_merges} merging, {with_splits} split cases");
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(())
}

// ---------- 2 ----------

fn planted_blocks() -> Check {
    let d = 16;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let k = rng.random_range(3..=6);
        // Orthonormal block centres by Gram-Schmidt.
        let mut centres: Vec<Vec<f64>> = Vec::new();
        while centres.len() < k {
            let mut v = gaussian(&mut rng, d);
            for c in &centres {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
            centres.push(unit(v));
        }
        let mut vs = Vec::new();
        let mut blocks = Vec::new();
        let mut gold = Vec::new();
        for (b, c) in centres.iter().enumerate() {
            if b > 0 {
                gold.push(vs.len());
            }
            for _ in 0..rng.random_range(2..=8) {
                let noise = gaussian(&mut rng, d);
                vs.push(unit(c.iter().zip(&noise).map(|(x, z)| x + 0.03 * z).collect()));
                blocks.push(b);
            }
        }
        for i in 0..vs.len() {
            for j in 0..i {
                let c = raw_cos(&vs[i], &vs[j]);
                if blocks[i] == blocks[j] {
                    ensure!(c >= 0.9, "fixture seed {seed}: within-block cosine {c}");
                } else {
                    ensure!(c <= 0.2, "fixture seed {seed}: cross-block cosine {c}");
                }
            }
        }
        let embs: Vec<Embedding> = vs.into_iter().map(emb).collect();
        let seg = greedy_segment(&embs, 0.5).map_err(|e| e.to_string())?;
        let merged = merge_clusters(&seg, &embs, 0.6).map_err(|e| e.to_string())?;
        let got: Vec<usize> = merged.boundaries().into_iter().collect();
        ensure!(got == gold, "seed {seed}: boundaries {got:?}, planted {gold:?}");
    }
    Ok(())
}

// ---------- 3 ----------

fn attribute_mean() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let d = rng.random_range(2..=32);
        let (chunk_attrs, chunk_raw) = attrs(&mut rng, d);
        let (query, query_raw) = attrs(&mut rng, d);
        let index = build_index(vec![entry("c", chunk_attrs, d)], provenance()).map_err(|e| e.to_string())?;
        let got = &score_candidates(&query, &index).map_err(|e| e.to_string())?[0];
        let want = (0..4).map(|a| raw_cos(&query_raw[a], &chunk_raw[a])).sum::<f64>() / 4.0;
        ensure!((got.sim_k - want).abs() <= 1e-9, "pair {i}: {} vs {want}", got.sim_k);
    }
    Ok(())
}

// ---------- 4 ----------

fn self_query_first() -> Check {
    let d = 16;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let entries: Vec<IndexEntry> = (0..100)
            .map(|i| entry(&format!("c{i:03}"), attrs(&mut rng, d).0, d))
            .collect();
        let target = rng.random_range(0..100);
        let query = entries[target].attributes.clone();
        let index = build_index(entries, provenance()).map_err(|e| e.to_string())?;
        let ranked = score_candidates(&query, &index).map_err(|e| e.to_string())?;
        let want = format!("c{target:03}");
        ensure!(ranked[0].chunk_id == want, "seed {seed}: {} ranked first, expected {want}", ranked[0].chunk_id);
        ensure!((ranked[0].sim_k - 1.0).abs() <= 1e-9, "seed {seed}: sim {}", ranked[0].sim_k);
    }
    Ok(())
}

// ---------- 5 ----------

fn shortlist_contract() -> Check {
    let make = |sims: &[f64]| -> Vec<RetrievalCandidate> {
        sims.iter()
            .enumerate()
            .map(|(i, &s)| RetrievalCandidate::from_sims(format!("c{i}"), [s; 4]))
            .collect()
    };
    let ids = |c: Vec<RetrievalCandidate>| c.into_iter().map(|c| c.chunk_id).collect::<Vec<_>>();
    let top = ids(filter_top_n(&make(&[0.9, 0.7, 0.5, 0.3]), 2));
    ensure!(top == ["c0", "c1"], "hand case gave {top:?}");
    let flat = ids(filter_top_n(&make(&[0.4, 0.4, 0.4, 0.4]), 2));
    ensure!(flat == ["c0"], "all-equal case gave {flat:?}");
    Ok(())
}

// ---------- 6 ----------

fn session(n: u32) -> DialogueSession {
    DialogueSession {
        session_id: "w".into(),
        utterances: (1..=n)
            .map(|t| Utterance {
                session_id: "w".into(),
                turn_index: t,
                speaker_id: if t % 2 == 1 { "A" } else { "B" }.into(),
                language: "en".into(),
                text: format!("utterance {t}"),
            })
            .collect(),
        gold: vec![],
    }
}

fn window_contract() -> Check {
    let s = session(21);
    for t in 1..=21u32 {
        for l in 0..t {
            let w = build_window(&s, t, l).map_err(|e| e.to_string())?;
            ensure!(w.len() == (l + 1) as usize, "t={t} l={l}: {} utterances", w.len());
            ensure!(w.last().unwrap().turn_index == t, "t={t} l={l}: ends at {}", w.last().unwrap().turn_index);
            ensure!(w[0].turn_index == t - l, "t={t} l={l}: starts at {}", w[0].turn_index);
        }
        ensure!(build_window(&s, t, t).is_err(), "t={t}: lookback t accepted");
    }
    for (c, t, want) in [(0.0, 5, 0), (1.0, 12, 10), (0.5, 3, 1)] {
        let (_, l) = window_length_from_score(c, t, 10);
        ensure!(l == want, "c={c} t={t}: l={l}, expected {want}");
        let reply = format!(
            r#"{{"CommunicativeIntent": "x", "InterpersonalTension": "x", "LikelyNormCategory": "x", "ContextDependenceScore": {c}}}"#
        );
        let chat = MockChat::new().with_rule(ScriptRule::always(reply));
        let history = &session(t).utterances;
        let opts = PipelineConfig::default().call_options();
        let win = determine_window_length(history, &chat, &opts, 10).map_err(|e| e.to_string())?;
        ensure!(win.l == want, "model path c={c} t={t}: l={}", win.l);
    }
    Ok(())
}

// ---------- 7 ----------

fn classify_and_eval(dir: &Path, jobs: &str) -> Result<(Vec<u8>, String, Vec<u8>), String> {
    let index = shipped_index(dir, "index.json", &[])?;
    let cfg = fixtures().join("config.json");
    let script = fixtures().join("mock_script.json");
    let corpus = fixtures().join("corpus.jsonl");
    let pred = dir.join("pred.jsonl");
    let report = dir.join("report.json");
    cli(&[
        "--config", p(&cfg), "--mock-script", p(&script), "classify", "--corpus", p(&corpus), "--index", p(&index),
        "--out", p(&pred), "--jobs", jobs,
    ])?;
    let (text, _) = cli(&[
        "eval", "--predictions", p(&pred), "--corpus", p(&corpus), "--with-reference", "--json-out", p(&report),
    ])?;
    let read = |f: &Path| std::fs::read(f).map_err(|e| e.to_string());
    Ok((read(&pred)?, text, read(&report)?))
}

fn end_to_end_determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = classify_and_eval(a.path(), "1")?;
    let second = classify_and_eval(b.path(), "3")?;
    ensure!(!first.0.is_empty(), "no predictions written");
    ensure!(first.0 == second.0, "predictions differ between runs");
    ensure!(first.1 == second.1, "text reports differ between runs");
    ensure!(first.2 == second.2, "JSON reports differ between runs");
    Ok(())
}

// ---------- 8 ----------

/// Detection prompts per (session, turn), keyed by the utterance text that
/// ends the rendered dialog.
fn detection_prompts(transcript: &[Value], corpus: &BTreeMap<(String, u64), String>) -> BTreeMap<(String, u64), Vec<String>> {
    let mut out: BTreeMap<(String, u64), Vec<String>> = BTreeMap::new();
    for ex in transcript.iter().filter(|e| e["kind"] == "norm_detection") {
        let sid = ex["session_id"].as_str().unwrap_or_default().to_string();
        let user = ex["user_prompt"].as_str().unwrap_or_default();
        let dialog = user.rsplit("### Dialog:").next().unwrap_or_default();
        let last = dialog.trim().lines().last().unwrap_or_default();
        if let Some(((_, t), _)) = corpus
            .iter()
            .find(|((s, _), text)| *s == sid && last.ends_with(text.as_str()))
        {
            out.entry((sid, *t)).or_default().push(user.to_string());
        }
    }
    out
}

fn feedback_threading() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let index = shipped_index(dir.path(), "index.json", &[])?;
    let cfg = fixtures().join("config.json");
    let corpus_path = fixtures().join("corpus.jsonl");
    let corpus: BTreeMap<(String, u64), String> = read_lines(&corpus_path)?
        .into_iter()
        .map(|v| {
            (
                (v["session_id"].as_str().unwrap().to_string(), v["turn_index"].as_u64().unwrap()),
                v["text"].as_str().unwrap().to_string(),
            )
        })
        .collect();

    let run = |name: &str, extra: &[&str]| -> Result<(Vec<Value>, Vec<Value>), String> {
        let pred = dir.path().join(format!("{name}.jsonl"));
        let tx = dir.path().join(format!("{name}.tx.jsonl"));
        let mut args = vec![
            "--config", p(&cfg), "classify", "--corpus", p(&corpus_path), "--index", p(&index), "--out", p(&pred),
            "--dump-transcripts", p(&tx),
        ];
        args.extend_from_slice(extra);
        cli(&args)?;
        Ok((read_lines(&pred)?, read_lines(&tx)?))
    };

    let (preds, transcript) = run("on", &[])?;
    let prompts = detection_prompts(&transcript, &corpus);
    let summary = |sid: &str, t: u64| -> Option<String> {
        preds
            .iter()
            .find(|r| r["session_id"] == sid && r["turn_index"] == t)
            .and_then(|r| r["prediction"]["feedback_out"]["situated_summary"].as_str())
            .map(str::to_string)
    };
    let sessions: Vec<String> = corpus.keys().map(|(s, _)| s.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for sid in &sessions {
        let first = prompts.get(&(sid.clone(), 1)).ok_or(format!("{sid}: no turn-1 prompt"))?;
        ensure!(
            first.iter().all(|u| !u.contains("### Prior Feedback:")),
            "{sid}: turn 1 carries feedback"
        );
        for t in [2u64, 3] {
            let prev = summary(sid, t - 1).ok_or(format!("{sid}: turn {} has no feedback", t - 1))?;
            let rendered = prompts.get(&(sid.clone(), t)).ok_or(format!("{sid}: no turn-{t} prompt"))?;
            ensure!(
                rendered.iter().all(|u| u.contains(&format!("SituatedSummary: {prev}"))),
                "{sid} turn {t}: prompt lacks the turn-{} summary",
                t - 1
            );
        }
    }

    let (_, transcript) = run("off", &["--no-feedback"])?;
    ensure!(!transcript.is_empty(), "empty transcript with --no-feedback");
    for ex in &transcript {
        let user = ex["user_prompt"].as_str().unwrap_or_default();
        ensure!(
            !user.contains("### Prior Feedback:") && !user.contains("SituatedSummary:"),
            "feedback block rendered with --no-feedback ({})",
            ex["kind"]
        );
        ensure!(ex["kind"] != "feedback", "feedback call made with --no-feedback");
    }
    Ok(())
}

// ---------- 9 ----------

fn ablation_matrix() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let index = shipped_index(dir.path(), "index.json", &[])?;
    let fixed = shipped_index(dir.path(), "fixed.json", &["--fixed-split", "2"])?;
    let cfg = fixtures().join("config.json");
    let corpus = fixtures().join("corpus.jsonl");
    let run = |name: &str, extra: &[&str]| -> Result<Vec<Value>, String> {
        let report = dir.path().join(format!("{name}.json"));
        let mut args = vec![
            "--config", p(&cfg), "ablate", "--corpus", p(&corpus), "--index", p(&index), "--fixed-index", p(&fixed),
            "--report-json", p(&report),
        ];
        args.extend_from_slice(extra);
        cli(&args)?;
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        Ok(v["rows"].as_array().cloned().unwrap_or_default())
    };
    let rows = run("four", &[])?;
    let names: Vec<&str> = rows.iter().filter_map(|r| r["name"].as_str()).collect();
    ensure!(
        names == ["fixed text split", "cluster without attributes", "without feedback", "full pipeline"],
        "rows {names:?}"
    );
    for r in &rows {
        ensure!(r["failed_turns"] == 0, "{}: failed turns", r["name"]);
        ensure!(r["index_lookups"].as_u64().unwrap_or(0) > 0, "{}: no lookups", r["name"]);
    }
    let rows = run("baselines", &["--with-baselines"])?;
    let no_docs: Vec<&Value> = rows.iter().filter(|r| r["name"].as_str().unwrap_or("").contains("no docs")).collect();
    ensure!(no_docs.len() == 2, "expected two no-docs rows, got {}", no_docs.len());
    for r in no_docs {
        ensure!(r["index_lookups"] == 0, "{}: {} lookups", r["name"], r["index_lookups"]);
    }
    Ok(())
}

// ---------- 10 ----------

fn labeling(items: &[(u32, &[(NormCategory, NormStatus)])]) -> Labeling {
    items
        .iter()
        .map(|(t, ls)| (("s".to_string(), *t), ls.iter().map(|(c, s)| NormLabel::new(*c, *s)).collect()))
        .collect()
}

fn confusion(counts: [[usize; 2]; 2]) -> (Labeling, Labeling) {
    let cats = [NormCategory::Thanks, NormCategory::Request];
    let (mut a, mut b) = (Labeling::new(), Labeling::new());
    let mut t = 0;
    for (i, row) in counts.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            for _ in 0..n {
                t += 1;
                a.insert(("s".into(), t), vec![NormLabel::new(cats[i], NormStatus::Adherence)]);
                b.insert(("s".into(), t), vec![NormLabel::new(cats[j], NormStatus::Adherence)]);
            }
        }
    }
    (a, b)
}

fn metric_fixtures() -> Check {
    use NormCategory::*;
    use NormStatus::{Adherence as A, Violation as V};
    // Five turns share a category with gold; six matched pairs, four with equal status.
    let gold = labeling(&[
        (1, &[(Thanks, A)]),
        (2, &[(Request, A)]),
        (3, &[(Greeting, A), (Admiration, A)]),
        (4, &[(Apology, V)]),
        (5, &[(Criticism, V)]),
        (6, &[(Persuasion, A)]),
        (7, &[(TakingLeave, A)]),
        (8, &[(Disagreement, V)]),
        (9, &[(GrantingRequest, A)]),
        (10, &[(NoNorm, V)]),
    ]);
    let pred = labeling(&[
        (1, &[(Thanks, A)]),
        (2, &[(Persuasion, A), (Request, V)]),
        (3, &[(Greeting, A), (Admiration, V)]),
        (4, &[(Apology, V)]),
        (5, &[(Criticism, V)]),
        (6, &[(Request, A)]),
        (7, &[(Greeting, A)]),
        (8, &[(Criticism, V)]),
        (9, &[]),
        (10, &[(Thanks, A)]),
    ]);
    let acc = norm_accuracy(&pred, &gold, AccuracyMode::SetIntersection).map_err(|e| e.to_string())?;
    ensure!((acc.accuracy - 0.5).abs() <= 1e-9, "norm accuracy {}", acc.accuracy);
    let st = status_accuracy(&pred, &gold).map_err(|e| e.to_string())?.ok_or("no matched pairs")?;
    ensure!((st - 0.6667).abs() <= 1e-4 && (st - 4.0 / 6.0).abs() <= 1e-9, "status accuracy {st}");

    let kappa = |c| {
        let (a, b) = confusion(c);
        cohens_kappa(&a, &b).map_err(|e| e.to_string())
    };
    let (a, _) = confusion([[30, 0], [0, 20]]);
    let perfect = cohens_kappa(&a, &a).map_err(|e| e.to_string())?;
    ensure!(perfect == 1.0, "perfect agreement kappa {perfect}");
    let k = kappa([[40, 10], [10, 40]])?;
    ensure!((k - 0.6).abs() <= 1e-9, "40/10/10/40 kappa {k}");
    let k = kappa([[25, 25], [25, 25]])?;
    ensure!(k.abs() <= 1e-9, "independence kappa {k}");
    Ok(())
}

// ---------- 11 ----------

const GOOD: &str = r#"{"answer": 42, "note": "ok"}"#;

fn repair_case(replies: &[&str], retries: usize) -> (Result<serde_json::Map<String, Value>, Error>, usize) {
    let chat = MockChat::new().with_rule(ScriptRule::sequence(replies.iter().copied()));
    let req = ChatRequest::new(PromptKind::Other, "system", "user");
    let out = chat_with_repair(&chat, &req, &["answer", "note"], retries);
    (out, chat.calls())
}

fn detection_reply(labels: &[(&str, &str)]) -> String {
    let norms: Vec<Value> = labels
        .iter()
        .map(|(c, s)| serde_json::json!({"norm_category": c, "status": s}))
        .collect();
    serde_json::json!({
        "latest_utterance": "x",
        "predicted_norms": norms,
        "retriever_context_relevance": "Not Relevant",
        "confidence_level": "Medium",
        "explanation": "scripted",
    })
    .to_string()
}

fn reply_repair() -> Check {
    let fenced = format!("```json\n{GOOD}\n```");
    let (r, calls) = repair_case(&[&fenced], 2);
    ensure!(r.as_ref().map(|o| o["answer"] == 42).unwrap_or(false) && calls == 1, "fenced: {r:?} in {calls} calls");

    let prose = format!("Sure, here is the analysis you asked for: {GOOD} Let me know if you need more.");
    let (r, calls) = repair_case(&[&prose], 2);
    ensure!(r.is_ok() && calls == 1, "prose-wrapped: {r:?} in {calls} calls");

    let (r, calls) = repair_case(&["I cannot answer in JSON.", r#"{"answer": 1}"#, GOOD], 2);
    ensure!(r.is_ok() && calls == 3, "retry after malformed: {r:?} in {calls} calls");

    let (r, calls) = repair_case(&["still not json"], 2);
    match r {
        Err(Error::RetriesExhausted { attempts, raw_responses, .. }) => {
            ensure!(attempts == 3 && calls == 3 && raw_responses.len() == 3, "exhaustion after {calls} calls");
        }
        other => return Err(format!("malformed replies gave {other:?}")),
    }

    let s = session(2);
    let cfg = PipelineConfig::default();
    let mixed = detection_reply(&[("No Norm", "Violation"), ("Doing thanks", "Adherence")]);
    let chat = MockChat::new().with_rule(ScriptRule::always(mixed));
    let pred = classify_turn(&s.utterances, None, None, None, &cfg, &chat).map_err(|e| e.to_string())?;
    let cats: Vec<NormCategory> = pred.categories().collect();
    ensure!(cats == [NormCategory::Thanks] && chat.calls() == 2, "mixed No Norm: {cats:?} in {} calls", chat.calls());

    let lone = detection_reply(&[("No Norm", "Adherence")]);
    let chat = MockChat::new().with_rule(ScriptRule::always(lone));
    let pred = classify_turn(&s.utterances, None, None, None, &cfg, &chat).map_err(|e| e.to_string())?;
    ensure!(
        pred.predicted == [NormLabel::new(NormCategory::NoNorm, NormStatus::Violation)],
        "lone No Norm became {:?}",
        pred.predicted
    );

    let fixed_on_retry = MockChat::new().with_rule(ScriptRule::sequence([
        detection_reply(&[("No Norm", "Violation"), ("Doing request", "Adherence")]),
        detection_reply(&[("Doing request", "Adherence")]),
    ]));
    let pred = classify_turn(&s.utterances, None, None, None, &cfg, &fixed_on_retry).map_err(|e| e.to_string())?;
    let retry_prompt = &fixed_on_retry.requests()[1].user_prompt;
    ensure!(
        pred.categories().eq([NormCategory::Request]) && retry_prompt.contains("No Norm"),
        "retry path: {:?}",
        pred.predicted
    );
    Ok(())
}

// ---------- 12 ----------

fn live_smoke(config: &Path) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("one.jsonl");
    let first: Vec<String> = std::fs::read_to_string(fixtures().join("corpus.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .filter(|l| l.contains("\"market-en\""))
        .map(str::to_string)
        .collect();
    std::fs::write(&corpus, first.join("\n") + "\n").map_err(|e| e.to_string())?;
    let pred = dir.path().join("pred.jsonl");
    cli(&[
        "--config", p(config), "--provider", "remote", "classify", "--corpus", p(&corpus), "--no-docs", "--out",
        p(&pred),
    ])?;
    let rows = read_lines(&pred)?;
    ensure!(!rows.is_empty(), "no predictions");
    for r in rows {
        ensure!(r["prediction"].is_object(), "turn {} failed: {}", r["turn_index"], r["error"]);
        serde_json::from_value::<dialnorm::model::TurnPrediction>(r["prediction"].clone()).map_err(|e| e.to_string())?;
    }
    Ok(())
}
