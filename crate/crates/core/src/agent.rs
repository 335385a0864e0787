//! The per-session loop: window, attributes, retrieval, re-ranking,
//! classification and feedback, turn by turn.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attributes::{extract_dialogue_attributes, render_line, render_window};
use crate::error::{Error, Result};
use crate::model::{
    check_predicted, AttributeVector, ContextRelevance, DialogueSession, Feedback, NormCategory, NormLabel, NormStatus,
    PipelineConfig, RetrievalCandidate, TurnPrediction, Utterance, MAX_PREDICTED_NORMS,
};
use crate::parallel::map_bounded;
use crate::prompts::{self, DetectionInputs};
use crate::providers::{
    chat_with_validation, embed_checked, CallOptions, ChatModel, ChatRequest, JsonObject, Models, PromptKind,
    ProviderError,
};
use crate::retrieval::{
    build_window, determine_window_length, filter_top_n, rerank, weighted_window_embedding, NormStore, WindowSpec,
};

/// Re-ranked chunks as they enter the detection prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub justification: String,
    /// `(chunk_id, text)` in final rank order.
    pub chunks: Vec<(String, String)>,
}

impl RetrievedContext {
    pub fn render(&self) -> String {
        let mut out = format!("Top justification: {}", self.justification);
        for (i, (id, text)) in self.chunks.iter().enumerate() {
            out.push_str(&format!("\n[{}] ({id}) {text}", i + 1));
        }
        out
    }
}

const DETECTION_KEYS: [&str; 4] = [
    "predicted_norms",
    "retriever_context_relevance",
    "confidence_level",
    "explanation",
];

fn str_field<'a>(doc: &'a JsonObject, key: &str) -> std::result::Result<&'a str, String> {
    doc.get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| format!("{key} must be a non-empty string"))
}

fn parse_labels(doc: &JsonObject) -> std::result::Result<Vec<NormLabel>, String> {
    let items = doc
        .get("predicted_norms")
        .and_then(Value::as_array)
        .ok_or("predicted_norms must be a list")?;
    items
        .iter()
        .map(|item| {
            let cat = item
                .get("norm_category")
                .and_then(Value::as_str)
                .ok_or("each predicted norm needs a norm_category")?;
            let status = item
                .get("status")
                .and_then(Value::as_str)
                .ok_or("each predicted norm needs a status")?;
            Ok(NormLabel::new(
                cat.parse().map_err(|e: Error| e.to_string())?,
                status.parse().map_err(|e: Error| e.to_string())?,
            ))
        })
        .collect()
}

/// Forces the No Norm rule: drops No Norm next to other norms, and turns a
/// lone No Norm into a Violation.
fn enforce_no_norm(labels: Vec<NormLabel>) -> Vec<NormLabel> {
    if labels.len() > 1 {
        labels.into_iter().filter(|l| !l.norm_category.is_no_norm()).collect()
    } else {
        labels
            .into_iter()
            .map(|l| {
                if l.norm_category.is_no_norm() {
                    NormLabel::new(NormCategory::NoNorm, NormStatus::Violation)
                } else {
                    l
                }
            })
            .collect()
    }
}

fn breaks_no_norm_rule(labels: &[NormLabel]) -> bool {
    labels.iter().any(|l| {
        l.norm_category.is_no_norm() && (labels.len() > 1 || l.status != NormStatus::Violation)
    })
}

/// Classifies the last utterance of `window`.
///
/// A reply that breaks the No Norm rule is sent back once; a second offence
/// is repaired by dropping No Norm.
pub fn classify_turn(
    window: &[Utterance],
    dialogue_attrs: Option<&AttributeVector>,
    context: Option<&RetrievedContext>,
    prev_feedback: Option<&Feedback>,
    cfg: &PipelineConfig,
    chat: &dyn ChatModel,
) -> Result<TurnPrediction> {
    let latest = window.last().ok_or(Error::EmptyInput("dialogue window"))?;
    let dialog = if cfg.use_history {
        render_window(window)?
    } else {
        render_line(latest)
    };
    let context_text = context.filter(|_| cfg.use_docs).map(RetrievedContext::render);
    let prompt = prompts::detection(DetectionInputs {
        context: context_text.as_deref(),
        attributes: dialogue_attrs,
        prior_feedback: prev_feedback.filter(|_| cfg.use_feedback),
        dialog: &dialog,
    });
    let opts = cfg.call_options();
    let mut no_norm_strikes = 0;
    chat_with_validation(chat, &prompt.request(&opts), &DETECTION_KEYS, opts.retry_limit, |doc| {
        let mut labels = parse_labels(doc)?;
        if breaks_no_norm_rule(&labels) {
            no_norm_strikes += 1;
            if no_norm_strikes == 1 {
                return Err("No Norm must be the only entry and must have status Violation".into());
            }
            labels = enforce_no_norm(labels);
        }
        if labels.len() > MAX_PREDICTED_NORMS {
            return Err(format!("list at most {MAX_PREDICTED_NORMS} predicted norms"));
        }
        check_predicted(&labels).map_err(|e| e.to_string())?;
        let relevance: ContextRelevance = str_field(doc, "retriever_context_relevance")?
            .parse()
            .map_err(|e: Error| e.to_string())?;
        let confidence = str_field(doc, "confidence_level")?
            .parse()
            .map_err(|e: Error| e.to_string())?;
        let explanation = str_field(doc, "explanation")?;
        TurnPrediction::new(latest.turn_index, latest.text.clone(), labels, relevance, confidence, explanation)
            .map_err(|e| e.to_string())
    })
}

/// Produces the feedback for the turn after `latest`; `None` when the model
/// reply stays unusable.
pub fn generate_feedback(
    history: &[Utterance],
    latest: &Utterance,
    predicted: &[NormCategory],
    chat: &dyn ChatModel,
    opts: &CallOptions,
) -> Result<Option<Feedback>> {
    let history_text = if history.is_empty() {
        String::new()
    } else {
        render_window(history)?
    };
    let prompt = prompts::feedback(&history_text, &render_line(latest), predicted);
    let keys = ["SituatedSummary", "NormImplications", "NextTurnExpectation"];
    let parsed = chat_with_validation(chat, &prompt.request(opts), &keys, opts.retry_limit, |doc| {
        let f = |k| str_field(doc, k).map(String::from);
        Feedback::new(f(keys[0])?, f(keys[1])?, f(keys[2])?).map_err(|e| e.to_string())
    });
    match parsed {
        Ok(fb) => Ok(Some(fb)),
        Err(Error::RetriesExhausted { last_reason, .. }) => {
            log::warn!(
                "feedback for {} turn {} unavailable: {last_reason}",
                latest.session_id,
                latest.turn_index
            );
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub session_id: String,
    pub turn_index: u32,
    pub window: WindowSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<TurnPrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_responses: Vec<String>,
}

impl TurnResult {
    pub fn is_ok(&self) -> bool {
        self.prediction.is_some()
    }
}

fn retrieve(
    window: &[Utterance],
    attrs: Option<&AttributeVector>,
    store: &dyn NormStore,
    cfg: &PipelineConfig,
    models: Models<'_>,
) -> Result<RetrievedContext> {
    let opts = cfg.call_options();
    let scored: Vec<RetrievalCandidate> = match attrs {
        Some(a) => store.score(a)?,
        None => {
            let texts: Vec<&str> = window.iter().map(|u| u.text.as_str()).collect();
            let embs = embed_checked(models.embedder, &texts)?;
            store.score_embedding(&weighted_window_embedding(&embs, cfg.effective_decay())?)?
        }
    };
    let shortlist = filter_top_n(&scored, cfg.top_n);
    let texts: Vec<String> = shortlist
        .iter()
        .map(|c| {
            store
                .entry(&c.chunk_id)
                .map(|e| e.chunk.text.clone())
                .ok_or_else(|| Error::Invalid(format!("index has no chunk {}", c.chunk_id)))
        })
        .collect::<Result<_>>()?;
    let (order, justification): (Vec<usize>, String) = match attrs {
        Some(a) => {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let r = rerank(&render_window(window)?, a, &shortlist, &refs, models.chat, &opts)?;
            (r.order().collect(), r.top_justification)
        }
        None => (
            (0..shortlist.len()).collect(),
            format!("Chunks ordered by whole-chunk similarity; best {:.4}.", shortlist[0].sim_k),
        ),
    };
    Ok(RetrievedContext {
        justification,
        chunks: order
            .into_iter()
            .map(|i| (shortlist[i].chunk_id.clone(), texts[i].clone()))
            .collect(),
    })
}

struct TurnState {
    window: WindowSpec,
    retrieved: Vec<String>,
}

fn run_turn(
    session: &DialogueSession,
    t: u32,
    prev: Option<&Feedback>,
    store: Option<&dyn NormStore>,
    cfg: &PipelineConfig,
    models: Models<'_>,
    state: &mut TurnState,
) -> Result<TurnPrediction> {
    let opts = cfg.call_options();
    let history = &session.utterances[..t as usize];
    state.window = if cfg.use_history {
        determine_window_length(history, models.chat, &opts, cfg.l_max as u32)?
    } else {
        WindowSpec::latest_only(t)
    };
    let window = build_window(session, t, state.window.l)?;
    let attrs = if cfg.use_attributes {
        match extract_dialogue_attributes(window, models, &opts) {
            Ok(a) => Some(a),
            Err(e @ Error::Extraction { .. }) => {
                log::warn!("{e}; scoring on the window embedding instead");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let context = match (cfg.use_docs, store) {
        (true, Some(store)) => {
            let ctx = retrieve(window, attrs.as_ref(), store, cfg, models)?;
            state.retrieved = ctx.chunks.iter().map(|(id, _)| id.clone()).collect();
            Some(ctx)
        }
        _ => None,
    };
    let mut pred = classify_turn(window, attrs.as_ref(), context.as_ref(), prev, cfg, models.chat)?;
    if cfg.use_feedback {
        let cats: Vec<NormCategory> = pred.categories().collect();
        pred.feedback_out = generate_feedback(&history[..history.len() - 1], &history[history.len() - 1], &cats, models.chat, &opts)?;
    }
    Ok(pred)
}

/// Runs every turn of `session` in order. Turn failures are recorded in the
/// returned results and reset the feedback; they never stop the loop.
pub fn run_session(
    session: &DialogueSession,
    store: Option<&dyn NormStore>,
    cfg: &PipelineConfig,
    models: Models<'_>,
) -> Result<Vec<TurnResult>> {
    if session.utterances.is_empty() {
        return Err(Error::session(&session.session_id, None, "no utterances"));
    }
    if cfg.use_docs && store.is_none() {
        return Err(Error::Invalid("use_docs is on but no index was given".into()));
    }
    let mut feedback: Option<Feedback> = None;
    let mut out = Vec::with_capacity(session.utterances.len());
    for t in 1..=session.utterances.len() as u32 {
        let mut state = TurnState {
            window: WindowSpec::latest_only(t),
            retrieved: Vec::new(),
        };
        let outcome = run_turn(session, t, feedback.as_ref(), store, cfg, models, &mut state);
        let mut result = TurnResult {
            session_id: session.session_id.clone(),
            turn_index: t,
            window: state.window,
            retrieved: state.retrieved,
            prediction: None,
            error: None,
            raw_responses: Vec::new(),
        };
        match outcome {
            Ok(pred) => {
                feedback = pred.feedback_out.clone();
                result.prediction = Some(pred);
            }
            Err(e) => {
                log::warn!("session {} turn {t} failed: {e}", session.session_id);
                feedback = None;
                if let Error::RetriesExhausted { raw_responses, .. } = &e {
                    result.raw_responses = raw_responses.clone();
                }
                result.error = Some(e.to_string());
            }
        }
        out.push(result);
    }
    Ok(out)
}

/// One recorded model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub kind: PromptKind,
    pub system_prompt: String,
    pub user_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wraps a chat model and keeps every request and reply.
pub struct RecordingChat<'a> {
    inner: &'a dyn ChatModel,
    log: Mutex<Vec<Exchange>>,
}

impl<'a> RecordingChat<'a> {
    pub fn new(inner: &'a dyn ChatModel) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn into_exchanges(self) -> Vec<Exchange> {
        self.log.into_inner().expect("transcript lock poisoned")
    }
}

impl ChatModel for RecordingChat<'_> {
    fn chat(&self, req: &ChatRequest) -> std::result::Result<String, ProviderError> {
        let out = self.inner.chat(req);
        self.log.lock().expect("transcript lock poisoned").push(Exchange {
            kind: req.kind,
            system_prompt: req.system_prompt.clone(),
            user_prompt: req.user_prompt.clone(),
            response: out.as_ref().ok().cloned(),
            error: out.as_ref().err().map(ToString::to_string),
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRun {
    pub session_id: String,
    pub turns: Vec<TurnResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<Exchange>,
}

impl SessionRun {
    pub fn failed_turns(&self) -> usize {
        self.turns.iter().filter(|t| !t.is_ok()).count()
    }
}

/// Runs sessions on up to `jobs` threads; output follows input order.
pub fn run_sessions(
    sessions: &[DialogueSession],
    store: Option<&dyn NormStore>,
    cfg: &PipelineConfig,
    models: Models<'_>,
    jobs: usize,
    record: bool,
) -> Vec<Result<SessionRun>> {
    map_bounded(sessions, jobs, |s| {
        if record {
            let rec = RecordingChat::new(models.chat);
            let turns = run_session(s, store, cfg, Models::new(&rec, models.embedder))?;
            Ok(SessionRun {
                session_id: s.session_id.clone(),
                turns,
                transcript: rec.into_exchanges(),
            })
        } else {
            Ok(SessionRun {
                session_id: s.session_id.clone(),
                turns: run_session(s, store, cfg, models)?,
                transcript: Vec::new(),
            })
        }
    })
}
