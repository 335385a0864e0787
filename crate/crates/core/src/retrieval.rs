//! Chunk index, attribute-wise scoring, shortlist filtering, focused windows
//! and per-attribute re-ranking.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attributes::extract_all_chunk_attributes;
use crate::chunker;
use crate::error::{Error, Result};
use crate::model::{Attribute, AttributeVector, DialogueSession, Embedding, NormChunk, RetrievalCandidate, Utterance};
use crate::prompts;
use crate::providers::{chat_with_validation, CallOptions, ChatModel, JsonObject, Models};

/// How the indexed chunks were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ChunkingMethod {
    Semantic { eps_seg: f64, eps_merge: f64 },
    Fixed { window_sentences: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexProvenance {
    #[serde(flatten)]
    pub chunking: ChunkingMethod,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk: NormChunk,
    pub attributes: AttributeVector,
}

/// Flat, exact-search index of attributed norm chunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormIndex {
    dimension: usize,
    provenance: IndexProvenance,
    entries: Vec<IndexEntry>,
}

pub fn build_index(entries: Vec<IndexEntry>, provenance: IndexProvenance) -> Result<NormIndex> {
    let Some(first) = entries.first() else {
        return Err(Error::EmptyInput("index entries"));
    };
    let dimension = first.chunk.mean_embedding.dim();
    let mut seen = BTreeSet::new();
    for e in &entries {
        let id = &e.chunk.chunk_id;
        if !seen.insert(id.as_str()) {
            return Err(Error::Invalid(format!("duplicate chunk_id {id}")));
        }
        let embs = e
            .attributes
            .embeddings()
            .map_err(|a| Error::Invalid(format!("chunk {id} lacks an embedding for {}", a.key())))?;
        for found in embs.iter().map(|x| x.dim()).chain([e.chunk.mean_embedding.dim()]) {
            if found != dimension {
                return Err(Error::Dimension {
                    expected: dimension,
                    found,
                });
            }
        }
    }
    Ok(NormIndex {
        dimension,
        provenance,
        entries,
    })
}

impl NormIndex {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provenance(&self) -> &IndexProvenance {
        &self.provenance
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loads and re-validates an index file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: NormIndex = serde_json::from_str(&text).map_err(|e| Error::input(path, Some(e.line()), e.to_string()))?;
        let rebuilt = build_index(raw.entries, raw.provenance).map_err(|e| Error::input(path, None, e.to_string()))?;
        if rebuilt.dimension != raw.dimension {
            return Err(Error::input(
                path,
                None,
                format!("declared dimension {} but entries have {}", raw.dimension, rebuilt.dimension),
            ));
        }
        Ok(rebuilt)
    }
}

/// Result of indexing a document set. Chunks whose attributes could not be
/// extracted are left out and listed in `failures`.
#[derive(Debug)]
pub struct IndexBuild {
    pub index: NormIndex,
    pub failures: Vec<(String, Error)>,
}

/// Chunks every document, extracts chunk attributes on up to `jobs` threads,
/// and builds the index.
pub fn index_documents(
    docs: &[(String, String)],
    chunking: ChunkingMethod,
    models: Models<'_>,
    opts: &CallOptions,
    jobs: usize,
) -> Result<IndexBuild> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("norm documents"));
    }
    let mut chunks = Vec::new();
    for (doc_id, text) in docs {
        let mut c = match chunking {
            ChunkingMethod::Semantic { eps_seg, eps_merge } => {
                chunker::chunk_document(doc_id, text, models.embedder, eps_seg, eps_merge)?
            }
            ChunkingMethod::Fixed { window_sentences } => {
                chunker::fixed_split(doc_id, text, window_sentences, models.embedder)?
            }
        };
        chunks.append(&mut c);
    }
    let attrs = extract_all_chunk_attributes(&chunks, models, opts, jobs);
    let mut entries = Vec::with_capacity(chunks.len());
    let mut failures = Vec::new();
    for (chunk, a) in chunks.into_iter().zip(attrs) {
        match a {
            Ok(attributes) => entries.push(IndexEntry { chunk, attributes }),
            Err(e) => {
                log::warn!("{e}");
                failures.push((chunk.chunk_id, e));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Invalid(format!(
            "attribute extraction failed for all {} chunks",
            failures.len()
        )));
    }
    let provenance = IndexProvenance {
        chunking,
        doc_ids: docs.iter().map(|(id, _)| id.clone()).collect(),
    };
    Ok(IndexBuild {
        index: build_index(entries, provenance)?,
        failures,
    })
}

/// Read-only chunk lookup used by the agent.
pub trait NormStore: Sync {
    fn dimension(&self) -> usize;
    /// Attribute-wise scores for every chunk, best first.
    fn score(&self, query: &AttributeVector) -> Result<Vec<RetrievalCandidate>>;
    /// Scores against each chunk's mean embedding instead of its attributes.
    fn score_embedding(&self, query: &Embedding) -> Result<Vec<RetrievalCandidate>>;
    fn entry(&self, chunk_id: &str) -> Option<&IndexEntry>;
}

impl NormStore for NormIndex {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn score(&self, query: &AttributeVector) -> Result<Vec<RetrievalCandidate>> {
        score_candidates(query, self)
    }

    fn score_embedding(&self, query: &Embedding) -> Result<Vec<RetrievalCandidate>> {
        score_embedding(query, self)
    }

    fn entry(&self, chunk_id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.chunk.chunk_id == chunk_id)
    }
}

/// Counts scoring calls made through it.
pub struct CountingStore<'a> {
    inner: &'a dyn NormStore,
    lookups: AtomicUsize,
}

impl<'a> CountingStore<'a> {
    pub fn new(inner: &'a dyn NormStore) -> Self {
        Self {
            inner,
            lookups: AtomicUsize::new(0),
        }
    }

    pub fn lookups(&self) -> usize {
        self.lookups.load(Ordering::SeqCst)
    }
}

impl NormStore for CountingStore<'_> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn score(&self, query: &AttributeVector) -> Result<Vec<RetrievalCandidate>> {
        self.lookups.fetch_add(1, Ordering::SeqCst);
        self.inner.score(query)
    }

    fn score_embedding(&self, query: &Embedding) -> Result<Vec<RetrievalCandidate>> {
        self.lookups.fetch_add(1, Ordering::SeqCst);
        self.inner.score_embedding(query)
    }

    fn entry(&self, chunk_id: &str) -> Option<&IndexEntry> {
        self.lookups.fetch_add(1, Ordering::SeqCst);
        self.inner.entry(chunk_id)
    }
}

fn sort_candidates(c: &mut [RetrievalCandidate]) {
    c.sort_by(|a, b| b.sim_k.total_cmp(&a.sim_k).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
}

/// Per-attribute cosines and their mean for every chunk, best first.
pub fn score_candidates(query: &AttributeVector, index: &NormIndex) -> Result<Vec<RetrievalCandidate>> {
    let q = query
        .embeddings()
        .map_err(|a| Error::Invalid(format!("query lacks an embedding for {}", a.key())))?;
    let mut out = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let c = e.attributes.embeddings().expect("validated at build");
        let mut sims = [0.0; 4];
        for i in 0..4 {
            sims[i] = q[i].cosine(c[i])?;
        }
        out.push(RetrievalCandidate::from_sims(e.chunk.chunk_id.clone(), sims));
    }
    sort_candidates(&mut out);
    Ok(out)
}

/// Whole-chunk scoring: one cosine against each chunk's mean embedding,
/// repeated across the four slots so `sim_k` equals it.
pub fn score_embedding(query: &Embedding, index: &NormIndex) -> Result<Vec<RetrievalCandidate>> {
    let mut out = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let c = query.cosine(&e.chunk.mean_embedding)?;
        out.push(RetrievalCandidate::from_sims(e.chunk.chunk_id.clone(), [c; 4]));
    }
    sort_candidates(&mut out);
    Ok(out)
}

/// Keeps candidates strictly above the mean score, best first, at most
/// `top_n`; falls back to the single best when none survive.
pub fn filter_top_n(candidates: &[RetrievalCandidate], top_n: usize) -> Vec<RetrievalCandidate> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut sorted = candidates.to_vec();
    sort_candidates(&mut sorted);
    let mean = sorted.iter().map(|c| c.sim_k).sum::<f64>() / sorted.len() as f64;
    let survivors: Vec<RetrievalCandidate> = sorted
        .iter()
        .filter(|c| c.sim_k > mean)
        .take(top_n.max(1))
        .cloned()
        .collect();
    if survivors.is_empty() {
        vec![sorted.swap_remove(0)]
    } else {
        survivors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSource {
    /// From the model's context-dependence score.
    Model,
    /// Default used after the model reply could not be parsed.
    Fallback,
    /// No earlier turn exists, or history is disabled.
    NoHistory,
    Fixed,
}

/// Lookback for turn `t`: the window is `u_{t-l} ..= u_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t: u32,
    pub l: u32,
    pub context_dependence_score: Option<f64>,
    pub source: WindowSource,
}

impl WindowSpec {
    pub fn latest_only(t: u32) -> Self {
        Self {
            t,
            l: 0,
            context_dependence_score: None,
            source: WindowSource::NoHistory,
        }
    }

    /// Fixed lookback, capped by the available history.
    pub fn fixed(t: u32, l: u32) -> Self {
        Self {
            t,
            l: l.min(t.saturating_sub(1)),
            context_dependence_score: None,
            source: WindowSource::Fixed,
        }
    }
}

/// Maps a score to a lookback; the score is clamped to [0, 1] first.
/// Returns the clamped score and `l`.
pub fn window_length_from_score(score: f64, t: u32, l_max: u32) -> (f64, u32) {
    let c = if score.is_nan() { 0.0 } else { score.clamp(0.0, 1.0) };
    let cap = t.saturating_sub(1).min(l_max);
    let l = (c * cap as f64).round() as u32;
    (c, l.min(cap))
}

fn fallback_length(t: u32) -> u32 {
    t.saturating_sub(1).min(2)
}

fn parse_score(doc: &JsonObject) -> std::result::Result<f64, String> {
    let v = doc
        .get("ContextDependenceScore")
        .ok_or_else(|| "missing keys: ContextDependenceScore".to_string())?;
    let score = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    score
        .filter(|s| s.is_finite())
        .ok_or_else(|| format!("ContextDependenceScore is not a number: {v}"))
}

/// Asks the model how much the latest turn depends on earlier ones.
///
/// `history` is `u_1 ..= u_t`. No call is made at `t = 1`. If the reply stays
/// unusable after retries, `l = min(t-1, 2)`.
pub fn determine_window_length(
    history: &[Utterance],
    chat: &dyn ChatModel,
    opts: &CallOptions,
    l_max: u32,
) -> Result<WindowSpec> {
    let rendered = crate::attributes::render_window(history)?;
    let t = history.len() as u32;
    if t == 1 {
        return Ok(WindowSpec::latest_only(1));
    }
    let req = prompts::window_design(&rendered).request(opts);
    match chat_with_validation(chat, &req, &["ContextDependenceScore"], opts.retry_limit, parse_score) {
        Ok(score) => {
            let (c, l) = window_length_from_score(score, t, l_max);
            Ok(WindowSpec {
                t,
                l,
                context_dependence_score: Some(c),
                source: WindowSource::Model,
            })
        }
        Err(Error::RetriesExhausted { last_reason, .. }) => {
            log::warn!("window length for turn {t} falls back to default: {last_reason}");
            Ok(WindowSpec {
                t,
                l: fallback_length(t),
                context_dependence_score: None,
                source: WindowSource::Fallback,
            })
        }
        Err(e) => Err(e),
    }
}

/// Utterances `t-l ..= t` (1-based `t`).
pub fn build_window(session: &DialogueSession, t: u32, l: u32) -> Result<&[Utterance]> {
    let n = session.utterances.len() as u32;
    if t == 0 || t > n {
        return Err(Error::session(&session.session_id, Some(t), format!("turn out of range 1..={n}")));
    }
    if l > t - 1 {
        return Err(Error::session(
            &session.session_id,
            Some(t),
            format!("lookback {l} exceeds available history {}", t - 1),
        ));
    }
    Ok(&session.utterances[(t - 1 - l) as usize..t as usize])
}

/// Renormalized sum with weight `decay^j`, `j = 0` for the newest (last) vector.
pub fn weighted_window_embedding(embeddings: &[Embedding], decay: f64) -> Result<Embedding> {
    let Some(last) = embeddings.last() else {
        return Err(Error::EmptyInput("window embeddings"));
    };
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::Invalid(format!("decay must be in (0, 1], got {decay}")));
    }
    let d = last.dim();
    let mut acc = vec![0.0; d];
    let mut w = 1.0;
    for e in embeddings.iter().rev() {
        if e.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                found: e.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(e.as_slice()) {
            *a += w * x;
        }
        w *= decay;
    }
    Embedding::normalized(acc)
}

/// Outcome of re-ranking a shortlist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    /// 1-based shortlist positions, best first.
    pub ranking: Vec<usize>,
    pub top_justification: String,
    /// One vote per attribute in canonical order; `None` when dropped.
    pub per_attribute_rankings: [Option<Vec<usize>>; 4],
    pub borda_scores: Vec<usize>,
}

impl RerankResult {
    /// Zero-based shortlist indices, best first.
    pub fn order(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranking.iter().map(|r| r - 1)
    }
}

/// Checks a 1-based permutation of `1..=m`.
pub fn check_permutation(ranking: &[usize], m: usize) -> std::result::Result<(), String> {
    if ranking.len() != m {
        return Err(format!("Ranking must list all {m} candidates, got {}", ranking.len()));
    }
    let mut seen = vec![false; m];
    for &r in ranking {
        if r == 0 || r > m {
            return Err(format!("Ranking entry {r} is outside 1..={m}"));
        }
        if std::mem::replace(&mut seen[r - 1], true) {
            return Err(format!("Ranking repeats {r}"));
        }
    }
    Ok(())
}

/// Borda totals (position `r` of `m` earns `m - r`) and the final order.
/// Ties go to the higher `tie_scores` entry, then the lower index.
pub fn borda_aggregate(votes: &[&[usize]], m: usize, tie_scores: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut totals = vec![0usize; m];
    for vote in votes {
        for (pos, &cand) in vote.iter().enumerate() {
            totals[cand - 1] += m - (pos + 1);
        }
    }
    let mut order: Vec<usize> = (1..=m).collect();
    order.sort_by(|&a, &b| {
        totals[b - 1]
            .cmp(&totals[a - 1])
            .then_with(|| tie_scores[b - 1].total_cmp(&tie_scores[a - 1]))
            .then(a.cmp(&b))
    });
    (order, totals)
}

struct Vote {
    ranking: Vec<usize>,
    justification: Option<String>,
}

fn parse_vote(doc: &JsonObject, m: usize) -> std::result::Result<Vote, String> {
    let raw = doc
        .get("Ranking")
        .and_then(Value::as_array)
        .ok_or_else(|| "missing keys: Ranking".to_string())?;
    let ranking = raw
        .iter()
        .map(|v| match v {
            Value::Number(n) => n.as_u64().map(|x| x as usize),
            Value::String(s) => s.trim().trim_matches(['[', ']']).parse().ok(),
            _ => None,
        })
        .collect::<Option<Vec<usize>>>()
        .ok_or_else(|| "Ranking must contain candidate numbers".to_string())?;
    check_permutation(&ranking, m)?;
    let justification = doc
        .get("TopJustification")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from);
    Ok(Vote {
        ranking,
        justification,
    })
}

fn synthesized_justification(top: &RetrievalCandidate, reason: &str) -> String {
    format!(
        "Candidate {} ranked first by attribute similarity (sim_k = {:.4}); {reason}.",
        top.chunk_id, top.sim_k
    )
}

/// One re-ranking call per attribute, combined by Borda count.
///
/// `texts[i]` is the chunk text of `shortlist[i]`. A vote that stays invalid
/// after retries is dropped; with no votes left the shortlist order stands.
pub fn rerank(
    window_text: &str,
    query: &AttributeVector,
    shortlist: &[RetrievalCandidate],
    texts: &[&str],
    chat: &dyn ChatModel,
    opts: &CallOptions,
) -> Result<RerankResult> {
    let m = shortlist.len();
    if m == 0 {
        return Err(Error::EmptyInput("rerank shortlist"));
    }
    if texts.len() != m {
        return Err(Error::Invalid(format!("{} texts for {m} candidates", texts.len())));
    }
    let tie: Vec<f64> = shortlist.iter().map(|c| c.sim_k).collect();
    if m == 1 {
        return Ok(RerankResult {
            ranking: vec![1],
            top_justification: synthesized_justification(&shortlist[0], "it was the only candidate"),
            per_attribute_rankings: [None, None, None, None],
            borda_scores: vec![0],
        });
    }
    let mut votes: [Option<Vote>; 4] = [None, None, None, None];
    for (slot, attr) in votes.iter_mut().zip(Attribute::ALL) {
        let req = prompts::rerank(attr, window_text, query, texts).request(opts);
        match chat_with_validation(chat, &req, &["Ranking", "TopJustification"], opts.retry_limit, |d| {
            parse_vote(d, m)
        }) {
            Ok(v) => *slot = Some(v),
            Err(Error::RetriesExhausted { last_reason, .. }) => {
                log::warn!("dropping {} re-ranking vote: {last_reason}", attr.key());
            }
            Err(e) => return Err(e),
        }
    }
    let live: Vec<&[usize]> = votes.iter().flatten().map(|v| v.ranking.as_slice()).collect();
    let (ranking, borda_scores) = borda_aggregate(&live, m, &tie);
    let top_justification = match votes.iter().flatten().find_map(|v| v.justification.clone()) {
        Some(j) => j,
        None if live.is_empty() => synthesized_justification(&shortlist[ranking[0] - 1], "no re-ranking vote was usable"),
        None => synthesized_justification(&shortlist[ranking[0] - 1], "the re-ranker gave no justification"),
    };
    Ok(RerankResult {
        ranking,
        top_justification,
        per_attribute_rankings: votes.map(|v| v.map(|v| v.ranking)),
        borda_scores,
    })
}
