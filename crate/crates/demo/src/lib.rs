//! Browser bindings for three pieces of the pipeline: similarity-based
//! chunking, the mean-score shortlist filter and the lookback window.
//!
//! Every entry point takes plain values and returns a JSON string, so the
//! page needs no generated TypeScript types. The `*_json` functions are the
//! native equivalents used by tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dialnorm::chunker::{greedy_segment, merge_clusters, similarity_matrix, split_sentences};
use dialnorm::model::{Embedding, RetrievalCandidate};
use dialnorm::providers::{EmbeddingModel, MockEmbedder};
use dialnorm::retrieval::{filter_top_n, weighted_window_embedding, window_length_from_score};

const DEMO_SEED: u64 = 7;

#[derive(Serialize)]
struct Segmented {
    sentences: Vec<String>,
    similarity: Vec<Vec<f64>>,
    /// Consecutive cosines `cos(x_i, x_{i+1})`.
    consecutive: Vec<f64>,
    /// Half-open sentence ranges after the greedy pass.
    initial: Vec<[usize; 2]>,
    /// Ranges after merging adjacent clusters.
    chunks: Vec<[usize; 2]>,
}

#[derive(Serialize)]
struct Shortlist {
    mean: f64,
    /// Indices into the input, best first.
    kept: Vec<usize>,
    fallback: bool,
}

#[derive(Serialize)]
struct Window {
    score: f64,
    lookback: u32,
    /// Turn numbers in the window, oldest first.
    turns: Vec<u32>,
    /// Relative weight of each turn in the pooled embedding, oldest first.
    weights: Vec<f64>,
}

#[derive(Serialize)]
struct Failure {
    error: String,
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v),
        Err(error) => serde_json::to_string(&Failure { error }),
    }
    .expect("demo payloads serialize")
}

fn ranges(seg: &dialnorm::chunker::Segmentation) -> Vec<[usize; 2]> {
    seg.clusters().iter().map(|r| [r.start, r.end]).collect()
}

/// Splits `text` into sentences, embeds them with the deterministic lexical
/// embedder and chunks them.
pub fn segment_json(text: &str, eps_seg: f64, eps_merge: f64, dimension: usize) -> String {
    to_json((|| {
        let sentences = split_sentences(text).map_err(|e| e.to_string())?;
        let embedder = MockEmbedder::lexical(dimension.max(8), DEMO_SEED);
        let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
        let embs = embedder.embed(&refs).map_err(|e| e.to_string())?;
        let matrix = similarity_matrix(&embs).map_err(|e| e.to_string())?;
        let initial = greedy_segment(&embs, eps_seg).map_err(|e| e.to_string())?;
        let merged = merge_clusters(&initial, &embs, eps_merge).map_err(|e| e.to_string())?;
        Ok(Segmented {
            consecutive: (1..matrix.len()).map(|i| matrix.get(i - 1, i)).collect(),
            similarity: matrix.rows().map(<[f64]>::to_vec).collect(),
            initial: ranges(&initial),
            chunks: ranges(&merged),
            sentences,
        })
    })())
}

/// Applies the shortlist rule to raw similarity scores.
pub fn shortlist_json(sims: &[f64], top_n: usize) -> String {
    to_json((|| {
        if sims.is_empty() {
            return Err("no scores given".to_string());
        }
        if sims.iter().any(|s| !s.is_finite()) {
            return Err("scores must be finite numbers".to_string());
        }
        let candidates: Vec<RetrievalCandidate> = sims
            .iter()
            .enumerate()
            .map(|(i, &s)| RetrievalCandidate::from_sims(format!("{i:06}"), [s; 4]))
            .collect();
        let mean = sims.iter().sum::<f64>() / sims.len() as f64;
        let kept: Vec<usize> = filter_top_n(&candidates, top_n)
            .iter()
            .map(|c| c.chunk_id.parse().expect("numeric id"))
            .collect();
        let fallback = kept.len() == 1 && sims[kept[0]] <= mean;
        Ok(Shortlist { mean, kept, fallback })
    })())
}

/// Lookback for turn `t` given a context-dependence score, plus the
/// positional weight of each turn in the window.
pub fn window_json(score: f64, t: u32, l_max: u32, decay: f64) -> String {
    to_json((|| {
        if t == 0 {
            return Err("turns are numbered from 1".to_string());
        }
        let (score, lookback) = window_length_from_score(score, t, l_max);
        let n = lookback as usize + 1;
        // One axis per turn: the pooled vector's coordinates are the weights.
        let basis: Vec<Embedding> = (0..n)
            .map(|i| Embedding::from_unit((0..n).map(|j| f64::from(u8::from(i == j))).collect()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let pooled = weighted_window_embedding(&basis, decay).map_err(|e| e.to_string())?;
        let total: f64 = pooled.as_slice().iter().sum();
        Ok(Window {
            score,
            lookback,
            turns: (t - lookback..=t).collect(),
            weights: pooled.as_slice().iter().map(|w| w / total).collect(),
        })
    })())
}

#[wasm_bindgen]
pub fn segment(text: &str, eps_seg: f64, eps_merge: f64, dimension: usize) -> String {
    segment_json(text, eps_seg, eps_merge, dimension)
}

#[wasm_bindgen]
pub fn shortlist(sims: Vec<f64>, top_n: usize) -> String {
    shortlist_json(&sims, top_n)
}

#[wasm_bindgen]
pub fn window(score: f64, t: u32, l_max: u32, decay: f64) -> String {
    window_json(score, t, l_max, decay)
}
