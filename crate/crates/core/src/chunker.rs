//! Norm documentation chunking by embedding similarity.
//!
//! Sentences are embedded and scanned in order: a sentence joins the current
//! cluster when its cosine with the previous sentence is at least `eps_seg`.
//! Adjacent clusters whose renormalized mean embeddings have cosine strictly
//! above `eps_merge` are then merged until a full left-to-right pass makes no
//! change.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mean_embedding, Embedding, NormChunk, SentenceSpan};
use crate::providers::{embed_checked, EmbeddingModel};

pub const DEFAULT_EPS_SEG: f64 = 0.5;
pub const DEFAULT_EPS_MERGE: f64 = 0.6;

/// `{0.3, 0.4, ..., 0.8}`
pub fn default_seg_grid() -> Vec<f64> {
    (3..=8).map(|i| i as f64 / 10.0).collect()
}

/// `{0.4, 0.5, ..., 0.9}`
pub fn default_merge_grid() -> Vec<f64> {
    (4..=9).map(|i| i as f64 / 10.0).collect()
}

fn is_ascii_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_cjk_terminal(c: char) -> bool {
    matches!(c, '。' | '！' | '？')
}

/// Splits at newlines, after `.` `!` `?` followed by whitespace, and after
/// the full-width terminators `。` `！` `？`. Pieces are trimmed and empty
/// ones dropped. No abbreviation handling: `"Dr. Smith"` splits after `Dr.`.
pub fn split_sentences(document: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = document.chars().peekable();
    let flush = |buf: &mut String, out: &mut Vec<String>| {
        let s = buf.trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
        buf.clear();
    };
    while let Some(c) = chars.next() {
        if c == '\n' || c == '\r' {
            flush(&mut current, &mut out);
            continue;
        }
        current.push(c);
        let boundary = if is_cjk_terminal(c) {
            true
        } else if is_ascii_terminal(c) {
            chars.peek().is_none_or(|n| n.is_whitespace())
        } else {
            false
        };
        if boundary {
            flush(&mut current, &mut out);
        }
    }
    flush(&mut current, &mut out);
    if out.is_empty() {
        return Err(Error::EmptyInput("document has no sentences"));
    }
    Ok(out)
}

/// Dense symmetric matrix of pairwise cosines.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n.max(1))
    }

    /// Comma-separated rows with six decimals, for heatmap inspection.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

pub fn similarity_matrix(embeddings: &[Embedding]) -> Result<SimilarityMatrix> {
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::EmptyInput("similarity matrix needs at least one embedding"));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let c = embeddings[i].cosine(&embeddings[j])?;
            values[i * n + j] = c;
            values[j * n + i] = c;
        }
    }
    Ok(SimilarityMatrix { n, values })
}

/// Ordered contiguous clusters that partition `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    clusters: Vec<Range<usize>>,
}

impl Segmentation {
    /// Checks that `clusters` are non-empty, ascending, contiguous and cover `0..n`.
    pub fn new(clusters: Vec<Range<usize>>, n: usize) -> Result<Self> {
        let mut expected_start = 0;
        for r in &clusters {
            if r.start != expected_start || r.end <= r.start {
                return Err(Error::Invalid(format!(
                    "cluster {r:?} breaks the partition at {expected_start}"
                )));
            }
            expected_start = r.end;
        }
        if expected_start != n || (n > 0 && clusters.is_empty()) {
            return Err(Error::Invalid(format!("clusters cover 0..{expected_start}, expected 0..{n}")));
        }
        Ok(Self { clusters })
    }

    pub fn clusters(&self) -> &[Range<usize>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Number of items covered.
    pub fn n(&self) -> usize {
        self.clusters.last().map_or(0, |r| r.end)
    }

    /// Start index of every cluster after the first.
    pub fn boundaries(&self) -> BTreeSet<usize> {
        self.clusters.iter().skip(1).map(|r| r.start).collect()
    }
}

/// Greedy line-wise segmentation on consecutive cosines.
pub fn greedy_segment(embeddings: &[Embedding], eps_seg: f64) -> Result<Segmentation> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput("segmentation needs at least one embedding"));
    }
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 1..embeddings.len() {
        if embeddings[i - 1].cosine(&embeddings[i])? < eps_seg {
            clusters.push(start..i);
            start = i;
        }
    }
    clusters.push(start..embeddings.len());
    Segmentation::new(clusters, embeddings.len())
}

/// Merges adjacent clusters to a fixpoint.
///
/// Each pass scans left to right; after a merge the merged cluster is
/// compared with its new right neighbour before the scan moves on.
pub fn merge_clusters(segmentation: &Segmentation, embeddings: &[Embedding], eps_merge: f64) -> Result<Segmentation> {
    if segmentation.n() != embeddings.len() {
        return Err(Error::Invalid(format!(
            "segmentation covers {} items but {} embeddings were given",
            segmentation.n(),
            embeddings.len()
        )));
    }
    let mut clusters = segmentation.clusters().to_vec();
    let mut means = clusters
        .iter()
        .map(|r| mean_embedding(&embeddings[r.clone()]))
        .collect::<Result<Vec<_>>>()?;
    loop {
        let mut merged = false;
        let mut k = 0;
        while k + 1 < clusters.len() {
            if means[k].cosine(&means[k + 1])? > eps_merge {
                clusters[k].end = clusters[k + 1].end;
                clusters.remove(k + 1);
                means.remove(k + 1);
                means[k] = mean_embedding(&embeddings[clusters[k].clone()])?;
                merged = true;
            } else {
                k += 1;
            }
        }
        if !merged {
            break;
        }
    }
    Segmentation::new(clusters, embeddings.len())
}

/// Everything produced while chunking one document.
#[derive(Debug, Clone)]
pub struct ChunkedDocument {
    pub sentences: Vec<String>,
    pub embeddings: Vec<Embedding>,
    pub segmentation: Segmentation,
    pub chunks: Vec<NormChunk>,
}

fn materialize(
    doc_id: &str,
    sentences: &[String],
    embeddings: &[Embedding],
    segmentation: &Segmentation,
) -> Result<Vec<NormChunk>> {
    segmentation
        .clusters()
        .iter()
        .enumerate()
        .map(|(k, r)| {
            Ok(NormChunk {
                chunk_id: format!("{doc_id}#{k:03}"),
                doc_id: doc_id.to_string(),
                sentence_span: SentenceSpan {
                    start: r.start,
                    end: r.end,
                },
                text: sentences[r.clone()].join(" "),
                mean_embedding: mean_embedding(&embeddings[r.clone()])?,
            })
        })
        .collect()
}

fn embed_sentences(embedder: &dyn EmbeddingModel, sentences: &[String]) -> Result<Vec<Embedding>> {
    let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
    embed_checked(embedder, &refs)
}

/// Split, embed, segment, merge and materialize one document.
pub fn chunk_document_detailed(
    doc_id: &str,
    document: &str,
    embedder: &dyn EmbeddingModel,
    eps_seg: f64,
    eps_merge: f64,
) -> Result<ChunkedDocument> {
    let sentences = split_sentences(document)?;
    let embeddings = embed_sentences(embedder, &sentences)?;
    let greedy = greedy_segment(&embeddings, eps_seg)?;
    let segmentation = merge_clusters(&greedy, &embeddings, eps_merge)?;
    let chunks = materialize(doc_id, &sentences, &embeddings, &segmentation)?;
    Ok(ChunkedDocument {
        sentences,
        embeddings,
        segmentation,
        chunks,
    })
}

pub fn chunk_document(
    doc_id: &str,
    document: &str,
    embedder: &dyn EmbeddingModel,
    eps_seg: f64,
    eps_merge: f64,
) -> Result<Vec<NormChunk>> {
    Ok(chunk_document_detailed(doc_id, document, embedder, eps_seg, eps_merge)?.chunks)
}

/// Uniform, non-overlapping groups of `window_sentences`; the last group may
/// be shorter.
pub fn fixed_split(
    doc_id: &str,
    document: &str,
    window_sentences: usize,
    embedder: &dyn EmbeddingModel,
) -> Result<Vec<NormChunk>> {
    if window_sentences == 0 {
        return Err(Error::Invalid("window_sentences must be at least 1".into()));
    }
    let sentences = split_sentences(document)?;
    let embeddings = embed_sentences(embedder, &sentences)?;
    let n = sentences.len();
    let clusters = (0..n)
        .step_by(window_sentences)
        .map(|s| s..(s + window_sentences).min(n))
        .collect();
    let segmentation = Segmentation::new(clusters, n)?;
    materialize(doc_id, &sentences, &embeddings, &segmentation)
}

/// A development document with gold chunk boundaries (sentence indices that
/// start a new chunk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevDocument {
    pub doc_id: String,
    pub sentences: Vec<String>,
    pub boundaries: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BoundaryCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl BoundaryCounts {
    pub fn compare(predicted: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> Self {
        let tp = predicted.intersection(gold).count();
        Self {
            true_pos: tp,
            false_pos: predicted.len() - tp,
            false_neg: gold.len() - tp,
        }
    }

    /// Exact-index boundary F1; 1.0 when both sets are empty.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.true_pos as f64 / denom as f64
        }
    }
}

impl std::ops::Add for BoundaryCounts {
    type Output = Self;

    fn add(self, other: Self) -> Self {
        Self {
            true_pos: self.true_pos + other.true_pos,
            false_pos: self.false_pos + other.false_pos,
            false_neg: self.false_neg + other.false_neg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub eps_seg: f64,
    pub eps_merge: f64,
    pub boundary_f1: f64,
}

/// Exhaustive search over `seg_grid x merge_grid` maximizing micro boundary
/// F1 over all documents. Ties go to the larger `eps_seg`, then the larger
/// `eps_merge`.
pub fn grid_search_embedded(
    docs: &[(Vec<Embedding>, BTreeSet<usize>)],
    seg_grid: &[f64],
    merge_grid: &[f64],
) -> Result<GridSearchResult> {
    if seg_grid.is_empty() || merge_grid.is_empty() {
        return Err(Error::EmptyInput("threshold grid"));
    }
    if docs.is_empty() {
        return Err(Error::EmptyInput("grid search needs at least one dev document"));
    }
    let mut best: Option<GridSearchResult> = None;
    for &eps_seg in seg_grid {
        let greedy = docs
            .iter()
            .map(|(e, _)| greedy_segment(e, eps_seg))
            .collect::<Result<Vec<_>>>()?;
        for &eps_merge in merge_grid {
            let mut counts = BoundaryCounts::default();
            for (seg, (emb, gold)) in greedy.iter().zip(docs) {
                let merged = merge_clusters(seg, emb, eps_merge)?;
                counts = counts + BoundaryCounts::compare(&merged.boundaries(), gold);
            }
            let cand = GridSearchResult {
                eps_seg,
                eps_merge,
                boundary_f1: counts.f1(),
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    cand.boundary_f1 > b.boundary_f1
                        || (cand.boundary_f1 == b.boundary_f1
                            && (cand.eps_seg > b.eps_seg
                                || (cand.eps_seg == b.eps_seg && cand.eps_merge > b.eps_merge)))
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    Ok(best.expect("grids are non-empty"))
}

/// Embeds the dev documents and runs [`grid_search_embedded`].
pub fn grid_search_thresholds(
    docs: &[DevDocument],
    embedder: &dyn EmbeddingModel,
    seg_grid: &[f64],
    merge_grid: &[f64],
) -> Result<GridSearchResult> {
    let embedded = docs
        .iter()
        .map(|d| {
            if d.sentences.is_empty() {
                return Err(Error::EmptyInput("dev document has no sentences"));
            }
            if let Some(&b) = d.boundaries.iter().find(|&&b| b == 0 || b >= d.sentences.len()) {
                return Err(Error::Invalid(format!(
                    "dev document {}: boundary {b} outside 1..{}",
                    d.doc_id,
                    d.sentences.len()
                )));
            }
            Ok((embed_sentences(embedder, &d.sentences)?, d.boundaries.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    grid_search_embedded(&embedded, seg_grid, merge_grid)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn embeddings(max_n: usize, d: usize) -> impl Strategy<Value = Vec<Embedding>> {
        proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, d), 1..=max_n).prop_map(|vs| {
            vs.into_iter()
                .map(|mut v| {
                    v[0] += 1e-3;
                    Embedding::normalized(v).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn segmentation_partitions(embs in embeddings(30, 6), seg in -1.0f64..1.0, mrg in -1.0f64..1.0) {
            let g = greedy_segment(&embs, seg).unwrap();
            let m = merge_clusters(&g, &embs, mrg).unwrap();
            for s in [&g, &m] {
                prop_assert_eq!(s.clusters().first().unwrap().start, 0);
                prop_assert_eq!(s.n(), embs.len());
                for w in s.clusters().windows(2) {
                    prop_assert_eq!(w[0].end, w[1].start);
                }
            }
            prop_assert!(m.len() <= g.len());
        }

        #[test]
        fn merge_is_idempotent(embs in embeddings(30, 4), seg in 0.0f64..1.0, mrg in 0.0f64..1.0) {
            let g = greedy_segment(&embs, seg).unwrap();
            let m = merge_clusters(&g, &embs, mrg).unwrap();
            prop_assert_eq!(merge_clusters(&m, &embs, mrg).unwrap(), m);
        }

        #[test]
        fn similarity_matrix_is_symmetric(embs in embeddings(12, 5)) {
            let s = similarity_matrix(&embs).unwrap();
            for i in 0..s.len() {
                prop_assert!((s.get(i, i) - 1.0).abs() < 1e-9);
                for j in 0..s.len() {
                    prop_assert!((s.get(i, j) - s.get(j, i)).abs() < 1e-9);
                    prop_assert!((-1.0..=1.0).contains(&s.get(i, j)));
                }
            }
        }
    }
}
