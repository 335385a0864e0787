//! Accuracy metrics, annotator agreement and the ablation runner.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{run_sessions, SessionRun, TurnResult};
use crate::corpus::consensus_gold;
use crate::error::{Error, Result};
use crate::model::{DialogueSession, NormCategory, NormLabel, PipelineConfig};
use crate::providers::Models;
use crate::retrieval::{CountingStore, NormStore};

/// `(session_id, turn_index)`.
pub type TurnKey = (String, u32);
pub type Labeling = BTreeMap<TurnKey, Vec<NormLabel>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// A turn is correct when the predicted and gold category sets intersect.
    #[default]
    SetIntersection,
    /// A turn is correct when the first predicted category is in the gold set.
    Top1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormScores {
    pub accuracy: f64,
    /// Micro scores over (turn, category) pairs.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub turns: usize,
}

fn check_keys(pred: &Labeling, gold: &Labeling) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::EmptyInput("gold labels"));
    }
    if let Some((s, t)) = gold.keys().find(|k| !pred.contains_key(*k)) {
        return Err(Error::KeyMismatch(format!("no prediction for session {s} turn {t}")));
    }
    if let Some((s, t)) = pred.keys().find(|k| !gold.contains_key(*k)) {
        return Err(Error::KeyMismatch(format!("no gold labels for session {s} turn {t}")));
    }
    Ok(())
}

fn categories(labels: &[NormLabel]) -> BTreeSet<NormCategory> {
    labels.iter().map(|l| l.norm_category).collect()
}

pub fn norm_accuracy(pred: &Labeling, gold: &Labeling, mode: AccuracyMode) -> Result<NormScores> {
    check_keys(pred, gold)?;
    let (mut correct, mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize, 0usize);
    for (key, g) in gold {
        let p = &pred[key];
        let (pc, gc) = (categories(p), categories(g));
        let hit = match mode {
            AccuracyMode::SetIntersection => !pc.is_disjoint(&gc),
            AccuracyMode::Top1 => p.first().is_some_and(|l| gc.contains(&l.norm_category)),
        };
        correct += hit as usize;
        tp += pc.intersection(&gc).count();
        n_pred += pc.len();
        n_gold += gc.len();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, n_pred);
    let recall = ratio(tp, n_gold);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(NormScores {
        accuracy: ratio(correct, gold.len()),
        precision,
        recall,
        f1,
        turns: gold.len(),
    })
}

/// Share of category matches whose statuses also agree; `None` when no
/// category matched anywhere.
pub fn status_accuracy(pred: &Labeling, gold: &Labeling) -> Result<Option<f64>> {
    check_keys(pred, gold)?;
    let (mut matched, mut agree) = (0usize, 0usize);
    for (key, g) in gold {
        for p in &pred[key] {
            if let Some(gl) = g.iter().find(|gl| gl.norm_category == p.norm_category) {
                matched += 1;
                agree += (gl.status == p.status) as usize;
            }
        }
    }
    Ok((matched > 0).then(|| agree as f64 / matched as f64))
}

/// Cohen's kappa over the turns both labelings cover. Each turn's full label
/// set is one categorical outcome.
pub fn cohens_kappa(a: &Labeling, b: &Labeling) -> Result<f64> {
    let common: Vec<&TurnKey> = a.keys().filter(|k| b.contains_key(*k)).collect();
    if common.is_empty() {
        return Err(Error::KeyMismatch("the two labelings share no turns".into()));
    }
    let outcome = |l: &[NormLabel]| l.iter().copied().collect::<BTreeSet<NormLabel>>();
    let n = common.len() as f64;
    let mut agree = 0usize;
    let mut ma: HashMap<BTreeSet<NormLabel>, usize> = HashMap::new();
    let mut mb: HashMap<BTreeSet<NormLabel>, usize> = HashMap::new();
    for k in &common {
        let (oa, ob) = (outcome(&a[*k]), outcome(&b[*k]));
        agree += (oa == ob) as usize;
        *ma.entry(oa).or_default() += 1;
        *mb.entry(ob).or_default() += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = ma
        .iter()
        .map(|(o, ca)| *ca as f64 / n * mb.get(o).copied().unwrap_or(0) as f64 / n)
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(if p_o >= 1.0 - 1e-12 { 1.0 } else { 0.0 });
    }
    Ok(((p_o - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub annotator_a: String,
    pub annotator_b: String,
    pub turns: usize,
    pub kappa: f64,
}

/// Kappa for every annotator pair that shares at least one turn.
pub fn annotator_agreement(sessions: &[DialogueSession]) -> Vec<PairAgreement> {
    let mut per: BTreeMap<String, Labeling> = BTreeMap::new();
    for s in sessions {
        for g in &s.gold {
            per.entry(g.annotator_id.clone())
                .or_default()
                .insert((s.session_id.clone(), g.turn_index), g.labels.clone());
        }
    }
    let names: Vec<&String> = per.keys().collect();
    let mut out = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let (la, lb) = (&per[*a], &per[*b]);
            let turns = la.keys().filter(|k| lb.contains_key(*k)).count();
            if let (true, Ok(kappa)) = (turns > 0, cohens_kappa(la, lb)) {
                out.push(PairAgreement {
                    annotator_a: (*a).clone(),
                    annotator_b: (*b).clone(),
                    turns,
                    kappa,
                });
            }
        }
    }
    out
}

/// Consensus gold for every annotated turn of the corpus.
pub fn gold_labeling(sessions: &[DialogueSession]) -> Labeling {
    let mut out = Labeling::new();
    for s in sessions {
        for (turn, labels) in consensus_gold(s) {
            out.insert((s.session_id.clone(), turn), labels);
        }
    }
    out
}

/// Predictions for the gold turns. A failed turn counts as an empty
/// prediction; results for turns outside the corpus are an error.
pub fn prediction_labeling(results: &[TurnResult], sessions: &[DialogueSession], gold: &Labeling) -> Result<Labeling> {
    let known: BTreeSet<TurnKey> = sessions
        .iter()
        .flat_map(|s| s.utterances.iter().map(|u| (s.session_id.clone(), u.turn_index)))
        .collect();
    let mut out = Labeling::new();
    let mut seen = BTreeSet::new();
    for r in results {
        let key = (r.session_id.clone(), r.turn_index);
        if !known.contains(&key) {
            return Err(Error::KeyMismatch(format!(
                "prediction for session {} turn {} is not in the corpus",
                r.session_id, r.turn_index
            )));
        }
        if !seen.insert(key.clone()) {
            return Err(Error::KeyMismatch(format!(
                "two predictions for session {} turn {}",
                r.session_id, r.turn_index
            )));
        }
        if gold.contains_key(&key) {
            out.insert(key, r.prediction.as_ref().map(|p| p.predicted.clone()).unwrap_or_default());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub norm_accuracy: f64,
    pub status_accuracy: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub turns: usize,
    pub failed_turns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_lookups: Option<usize>,
}

/// A published result shown for comparison only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub table: String,
    pub model: String,
    pub setting: String,
    pub norm_accuracy: f64,
    pub status_accuracy: Option<f64>,
}

pub const REFERENCE_LABEL: &str = "published, not reproduced";

pub fn reference_rows() -> Vec<ReferenceRow> {
    let row = |table: &str, model: &str, setting: &str, n: f64, s: Option<f64>| ReferenceRow {
        table: table.into(),
        model: model.into(),
        setting: setting.into(),
        norm_accuracy: n,
        status_accuracy: s,
    };
    let (main, social, ablation) = ("MINDS", "SocialDial", "MINDS ablation");
    let (bare, hist, full) = ("no history, no docs", "history, no docs", "full pipeline");
    vec![
        row(main, "GPT-4o-mini", bare, 64.6, Some(57.2)),
        row(main, "GPT-4o", full, 70.4, Some(63.6)),
        row(main, "LLaMA 3.1 (8B)", bare, 56.4, Some(44.7)),
        row(main, "LLaMA 3.1 (8B)", hist, 57.4, Some(45.4)),
        row(main, "LLaMA 3.1 (8B)", full, 64.4, Some(54.4)),
        row(main, "Qwen-3 (32B)", bare, 61.1, Some(54.9)),
        row(main, "Qwen-3 (32B)", hist, 62.3, Some(57.1)),
        row(main, "Qwen-3 (32B)", full, 67.9, Some(60.2)),
        row(main, "Phi-4 (14B)", bare, 66.4, Some(58.6)),
        row(main, "Phi-4 (14B)", hist, 67.8, Some(61.6)),
        row(main, "Phi-4 (14B)", full, 69.1, Some(60.2)),
        row(social, "GPT-4o-mini", hist, 58.0, None),
        row(social, "GPT-4o", full, 62.0, None),
        row(social, "LLaMA 3.1 (8B)", hist, 57.2, None),
        row(social, "LLaMA 3.1 (8B)", full, 62.0, None),
        row(social, "Qwen-3 (32B)", hist, 52.4, None),
        row(social, "Qwen-3 (32B)", full, 55.0, None),
        row(ablation, "Qwen-3 (32B)", "fixed text split", 63.2, Some(58.7)),
        row(ablation, "Qwen-3 (32B)", "cluster without attributes", 65.1, Some(59.0)),
        row(ablation, "Qwen-3 (32B)", "without feedback", 67.0, Some(60.1)),
        row(ablation, "Qwen-3 (32B)", full, 67.9, Some(60.2)),
        row(ablation, "GPT-4o", "fixed text split", 66.1, Some(61.2)),
        row(ablation, "GPT-4o", "cluster without attributes", 67.4, Some(61.9)),
        row(ablation, "GPT-4o", "without feedback", 69.2, Some(62.9)),
        row(ablation, "GPT-4o", full, 70.4, Some(63.6)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: AccuracyMode,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference: Vec<ReferenceRow>,
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

impl EvalReport {
    pub fn with_reference(mut self) -> Self {
        self.reference = reference_rows();
        self
    }

    pub fn render_text(&self) -> String {
        let mode = match self.mode {
            AccuracyMode::SetIntersection => "set intersection",
            AccuracyMode::Top1 => "top-1",
        };
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
        let mut out = format!("norm accuracy: {mode}\n");
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>11}  {:>5}  {:>5}  {:>5}  {:>5}  {:>6}  {:>7}",
            "config", "norm acc.", "adh./viol.", "P", "R", "F1", "turns", "failed", "lookups"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>11}  {:>5}  {:>5}  {:>5}  {:>5}  {:>6}  {:>7}",
                r.name,
                pct(r.norm_accuracy),
                r.status_accuracy.map(pct).unwrap_or_else(|| "n/a".into()),
                pct(r.precision),
                pct(r.recall),
                pct(r.f1),
                r.turns,
                r.failed_turns,
                r.index_lookups.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
            );
        }
        if !self.reference.is_empty() {
            let _ = writeln!(out, "\nreference rows ({REFERENCE_LABEL}):");
            for r in &self.reference {
                let _ = writeln!(
                    out,
                    "  {:<15} {:<15} {:<27} {:.1}/{}",
                    r.table,
                    r.model,
                    r.setting,
                    r.norm_accuracy,
                    r.status_accuracy.map(|s| format!("{s:.1}")).unwrap_or_else(|| "-".into())
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Scores one set of turn results against the corpus gold.
pub fn score_results(
    name: &str,
    results: &[TurnResult],
    sessions: &[DialogueSession],
    mode: AccuracyMode,
) -> Result<ReportRow> {
    let gold = gold_labeling(sessions);
    let pred = prediction_labeling(results, sessions, &gold)?;
    let norm = norm_accuracy(&pred, &gold, mode)?;
    Ok(ReportRow {
        name: name.to_string(),
        norm_accuracy: norm.accuracy,
        status_accuracy: status_accuracy(&pred, &gold)?,
        precision: norm.precision,
        recall: norm.recall,
        f1: norm.f1,
        turns: norm.turns,
        failed_turns: results.iter().filter(|r| !r.is_ok()).count(),
        index_lookups: None,
    })
}

/// Which chunk index a configuration reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexChoice {
    Semantic,
    Fixed,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    pub config: PipelineConfig,
}

impl AblationConfig {
    pub fn index_choice(&self) -> IndexChoice {
        match (self.config.use_docs, self.config.use_semantic_chunking) {
            (false, _) => IndexChoice::None,
            (true, true) => IndexChoice::Semantic,
            (true, false) => IndexChoice::Fixed,
        }
    }
}

/// The four ablation rows: each removes one component from the full pipeline.
pub fn default_matrix(base: &PipelineConfig) -> Vec<AblationConfig> {
    let with = |name: &str, f: fn(&mut PipelineConfig)| {
        let mut config = base.clone();
        config.use_history = true;
        config.use_docs = true;
        config.use_feedback = true;
        config.use_attributes = true;
        config.use_semantic_chunking = true;
        f(&mut config);
        AblationConfig {
            name: name.to_string(),
            config,
        }
    };
    vec![
        with("fixed text split", |c| c.use_semantic_chunking = false),
        with("cluster without attributes", |c| c.use_attributes = false),
        with("without feedback", |c| c.use_feedback = false),
        with("full pipeline", |_| {}),
    ]
}

/// Plain prompting baselines without retrieved documents.
pub fn baseline_matrix(base: &PipelineConfig) -> Vec<AblationConfig> {
    let with = |name: &str, history: bool| {
        let mut config = base.clone();
        config.use_history = history;
        config.use_docs = false;
        config.use_feedback = false;
        config.use_attributes = false;
        AblationConfig {
            name: name.to_string(),
            config,
        }
    };
    vec![with("no history, no docs", false), with("history, no docs", true)]
}

fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Parses a matrix file: a JSON list of `{"name", "config"}` where `config`
/// holds overrides on top of `base`.
pub fn parse_matrix(text: &str, base: &PipelineConfig) -> Result<Vec<AblationConfig>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Entry {
        name: String,
        #[serde(default)]
        config: Value,
    }
    let entries: Vec<Entry> = serde_json::from_str(text)?;
    if entries.is_empty() {
        return Err(Error::EmptyInput("ablation matrix"));
    }
    let base_json = serde_json::to_value(base)?;
    let mut seen = BTreeSet::new();
    entries
        .into_iter()
        .map(|e| {
            if !seen.insert(e.name.clone()) {
                return Err(Error::Invalid(format!("duplicate matrix entry {}", e.name)));
            }
            let mut merged = base_json.clone();
            if !e.config.is_null() {
                merge_json(&mut merged, &e.config);
            }
            let config: PipelineConfig = serde_json::from_value(merged).map_err(|err| Error::Config {
                field: e.name.clone(),
                message: err.to_string(),
            })?;
            config.validate()?;
            Ok(AblationConfig { name: e.name, config })
        })
        .collect()
}

/// Output of one ablation configuration.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub config: AblationConfig,
    pub sessions: Vec<SessionRun>,
    pub row: ReportRow,
}

/// Runs every configuration over the corpus and scores it.
pub fn run_ablation_suite(
    sessions: &[DialogueSession],
    semantic: Option<&dyn NormStore>,
    fixed: Option<&dyn NormStore>,
    configs: &[AblationConfig],
    models: Models<'_>,
    mode: AccuracyMode,
    jobs: usize,
) -> Result<(EvalReport, Vec<AblationRun>)> {
    let mut runs = Vec::with_capacity(configs.len());
    for cfg in configs {
        // No-docs configurations still get a counting handle so that any
        // stray lookup shows up in the report.
        let store = match cfg.index_choice() {
            IndexChoice::None => semantic.or(fixed),
            IndexChoice::Semantic => Some(semantic.ok_or_else(|| {
                Error::Invalid(format!("configuration {:?} needs the semantic index", cfg.name))
            })?),
            IndexChoice::Fixed => Some(fixed.ok_or_else(|| {
                Error::Invalid(format!("configuration {:?} needs the fixed-split index", cfg.name))
            })?),
        };
        let counter = store.map(CountingStore::new);
        let store_for_run = counter.as_ref().map(|c| c as &dyn NormStore);
        let session_runs: Vec<SessionRun> = run_sessions(sessions, store_for_run, &cfg.config, models, jobs, false)
            .into_iter()
            .collect::<Result<_>>()?;
        let results: Vec<TurnResult> = session_runs.iter().flat_map(|s| s.turns.iter().cloned()).collect();
        let mut row = score_results(&cfg.name, &results, sessions, mode)?;
        row.index_lookups = Some(counter.as_ref().map(CountingStore::lookups).unwrap_or(0));
        runs.push(AblationRun {
            config: cfg.clone(),
            sessions: session_runs,
            row,
        });
    }
    let report = EvalReport {
        mode,
        rows: runs.iter().map(|r| r.row.clone()).collect(),
        reference: Vec::new(),
    };
    Ok((report, runs))
}
