//! Domain types shared across the pipeline.
//!
//! Everything here is immutable after construction. Constructors that can
//! fail enforce the type's invariants, and deserialization goes through the
//! same constructors so a loaded value is always a valid one.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::providers::{CallOptions, ProviderConfig};

/// The closed set of norm categories a turn can be labelled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NormCategory {
    Persuasion,
    Request,
    RequestingInformation,
    Criticism,
    Thanks,
    Greeting,
    Admiration,
    Disagreement,
    RefusingRequest,
    Apology,
    TakingLeave,
    GrantingRequest,
    FinalizingDeal,
    NoNorm,
}

impl NormCategory {
    pub const ALL: [NormCategory; 14] = [
        NormCategory::Persuasion,
        NormCategory::Request,
        NormCategory::RequestingInformation,
        NormCategory::Criticism,
        NormCategory::Thanks,
        NormCategory::Greeting,
        NormCategory::Admiration,
        NormCategory::Disagreement,
        NormCategory::RefusingRequest,
        NormCategory::Apology,
        NormCategory::TakingLeave,
        NormCategory::GrantingRequest,
        NormCategory::FinalizingDeal,
        NormCategory::NoNorm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NormCategory::Persuasion => "Doing persuasion",
            NormCategory::Request => "Doing request",
            NormCategory::RequestingInformation => "Doing requesting information",
            NormCategory::Criticism => "Doing criticism",
            NormCategory::Thanks => "Doing thanks",
            NormCategory::Greeting => "Doing greeting",
            NormCategory::Admiration => "Doing admiration",
            NormCategory::Disagreement => "Doing disagreement",
            NormCategory::RefusingRequest => "Doing refusing a request",
            NormCategory::Apology => "Doing apology",
            NormCategory::TakingLeave => "Doing taking leave",
            NormCategory::GrantingRequest => "Doing granting a request",
            NormCategory::FinalizingDeal => "Doing finalizing negotiation/deal",
            NormCategory::NoNorm => "No Norm",
        }
    }

    pub fn is_no_norm(self) -> bool {
        self == NormCategory::NoNorm
    }
}

/// Lowercases and collapses runs of whitespace.
fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl FromStr for NormCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = normalize_label(s);
        NormCategory::ALL
            .into_iter()
            .find(|c| c.label().to_lowercase() == wanted)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

impl fmt::Display for NormCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for NormCategory {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for NormCategory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NormStatus {
    Adherence,
    Violation,
}

impl NormStatus {
    pub fn label(self) -> &'static str {
        match self {
            NormStatus::Adherence => "Adherence",
            NormStatus::Violation => "Violation",
        }
    }
}

impl FromStr for NormStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_label(s).as_str() {
            "adherence" | "adhered" => Ok(NormStatus::Adherence),
            "violation" | "violated" => Ok(NormStatus::Violation),
            _ => Err(Error::UnknownStatus(s.to_string())),
        }
    }
}

impl fmt::Display for NormStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for NormStatus {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for NormStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A (category, status) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NormLabel {
    pub norm_category: NormCategory,
    pub status: NormStatus,
}

impl NormLabel {
    pub fn new(norm_category: NormCategory, status: NormStatus) -> Self {
        Self {
            norm_category,
            status,
        }
    }
}

impl fmt::Display for NormLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.norm_category, self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub session_id: String,
    /// 1-based position within the session.
    pub turn_index: u32,
    pub speaker_id: String,
    pub language: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub turn_index: u32,
    pub annotator_id: String,
    pub labels: Vec<NormLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    pub utterances: Vec<Utterance>,
    #[serde(default)]
    pub gold: Vec<GoldAnnotation>,
}

impl DialogueSession {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Utterance `u_t` for a 1-based turn index.
    pub fn turn(&self, t: u32) -> Option<&Utterance> {
        (t as usize)
            .checked_sub(1)
            .and_then(|i| self.utterances.get(i))
    }
}

/// Checks every session-level invariant and hands the session back on success.
///
/// The first violated invariant is reported together with the offending
/// turn index where one applies.
pub fn validate_session(session: DialogueSession) -> Result<DialogueSession> {
    let sid = session.session_id.as_str();
    if sid.trim().is_empty() {
        return Err(Error::session(sid, None, "empty session_id"));
    }
    if session.utterances.is_empty() {
        return Err(Error::session(sid, None, "session has no utterances"));
    }
    for (i, u) in session.utterances.iter().enumerate() {
        let expected = i as u32 + 1;
        if u.session_id != session.session_id {
            return Err(Error::session(
                sid,
                Some(u.turn_index),
                format!("utterance belongs to session {:?}", u.session_id),
            ));
        }
        if u.turn_index != expected {
            return Err(Error::session(
                sid,
                Some(u.turn_index),
                format!("non-contiguous turn_index (expected {expected})"),
            ));
        }
        if u.text.trim().is_empty() {
            return Err(Error::session(sid, Some(u.turn_index), "empty utterance text"));
        }
        if u.speaker_id.trim().is_empty() {
            return Err(Error::session(sid, Some(u.turn_index), "empty speaker_id"));
        }
    }
    let turns = session.utterances.len() as u32;
    for g in &session.gold {
        if g.turn_index == 0 || g.turn_index > turns {
            return Err(Error::session(
                sid,
                Some(g.turn_index),
                format!("gold annotation references missing turn (session has {turns} turns)"),
            ));
        }
        if g.labels.is_empty() {
            return Err(Error::session(
                sid,
                Some(g.turn_index),
                format!("annotator {} gave an empty label set", g.annotator_id),
            ));
        }
        let mut seen = BTreeSet::new();
        for label in &g.labels {
            if !seen.insert(label.norm_category) {
                return Err(Error::session(
                    sid,
                    Some(g.turn_index),
                    format!(
                        "annotator {} lists {} twice",
                        g.annotator_id, label.norm_category
                    ),
                ));
            }
            if label.norm_category.is_no_norm() && label.status != NormStatus::Violation {
                return Err(Error::session(
                    sid,
                    Some(g.turn_index),
                    "No Norm must pair with Violation",
                ));
            }
        }
    }
    Ok(session)
}

/// Tolerance on the unit-norm invariant.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A unit-length embedding vector. Cosine similarity reduces to a dot product.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// L2-normalizes `values`. Fails on empty or zero vectors.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding vector"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Invalid("cannot normalize a zero or non-finite vector".into()));
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self(values))
    }

    /// Wraps a vector that is already unit length.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding vector"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Invalid(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Cosine similarity, clamped into [-1, 1].
    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        Ok(dot.clamp(-1.0, 1.0))
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        Embedding::from_unit(values).map_err(serde::de::Error::custom)
    }
}

/// Renormalized arithmetic mean of unit embeddings, summed in slice order.
pub fn mean_embedding<'a, I>(members: I) -> Result<Embedding>
where
    I: IntoIterator<Item = &'a Embedding>,
{
    let mut sum: Option<Vec<f64>> = None;
    for e in members {
        match &mut sum {
            None => sum = Some(e.as_slice().to_vec()),
            Some(acc) => {
                if acc.len() != e.dim() {
                    return Err(Error::Dimension {
                        expected: acc.len(),
                        found: e.dim(),
                    });
                }
                for (a, v) in acc.iter_mut().zip(e.as_slice()) {
                    *a += v;
                }
            }
        }
    }
    Embedding::normalized(sum.ok_or(Error::EmptyInput("mean of zero embeddings"))?)
}

/// Half-open range of sentence indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

impl SentenceSpan {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub sentence_span: SentenceSpan,
    pub text: String,
    pub mean_embedding: Embedding,
}

/// The four pragmatic attributes, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attribute {
    CommunicativeIntent,
    InterpersonalFraming,
    LinguisticFeatures,
    ContextualTriggersAndConstraints,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::CommunicativeIntent,
        Attribute::InterpersonalFraming,
        Attribute::LinguisticFeatures,
        Attribute::ContextualTriggersAndConstraints,
    ];

    /// JSON key used in model responses and on disk.
    pub fn key(self) -> &'static str {
        match self {
            Attribute::CommunicativeIntent => "CommunicativeIntent",
            Attribute::InterpersonalFraming => "InterpersonalFraming",
            Attribute::LinguisticFeatures => "LinguisticFeatures",
            Attribute::ContextualTriggersAndConstraints => "ContextualTriggersAndConstraints",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Attribute::CommunicativeIntent => "CI",
            Attribute::InterpersonalFraming => "IF",
            Attribute::LinguisticFeatures => "LF",
            Attribute::ContextualTriggersAndConstraints => "CTC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeField {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
}

/// CI / IF / LF / CTC texts, each with an embedding once embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    #[serde(rename = "CommunicativeIntent")]
    pub communicative_intent: AttributeField,
    #[serde(rename = "InterpersonalFraming")]
    pub interpersonal_framing: AttributeField,
    #[serde(rename = "LinguisticFeatures")]
    pub linguistic_features: AttributeField,
    #[serde(rename = "ContextualTriggersAndConstraints")]
    pub contextual_triggers: AttributeField,
}

impl AttributeVector {
    /// Builds an un-embedded vector; every text must be non-empty.
    pub fn from_texts(texts: [String; 4]) -> Result<Self> {
        for (attr, t) in Attribute::ALL.iter().zip(&texts) {
            if t.trim().is_empty() {
                return Err(Error::Invalid(format!("attribute {} is empty", attr.key())));
            }
        }
        let [ci, inf, lf, ctc] = texts;
        let field = |text| AttributeField {
            text,
            embedding: None,
        };
        Ok(Self {
            communicative_intent: field(ci),
            interpersonal_framing: field(inf),
            linguistic_features: field(lf),
            contextual_triggers: field(ctc),
        })
    }

    pub fn field(&self, attr: Attribute) -> &AttributeField {
        match attr {
            Attribute::CommunicativeIntent => &self.communicative_intent,
            Attribute::InterpersonalFraming => &self.interpersonal_framing,
            Attribute::LinguisticFeatures => &self.linguistic_features,
            Attribute::ContextualTriggersAndConstraints => &self.contextual_triggers,
        }
    }

    fn field_mut(&mut self, attr: Attribute) -> &mut AttributeField {
        match attr {
            Attribute::CommunicativeIntent => &mut self.communicative_intent,
            Attribute::InterpersonalFraming => &mut self.interpersonal_framing,
            Attribute::LinguisticFeatures => &mut self.linguistic_features,
            Attribute::ContextualTriggersAndConstraints => &mut self.contextual_triggers,
        }
    }

    pub fn text(&self, attr: Attribute) -> &str {
        &self.field(attr).text
    }

    pub fn texts(&self) -> [&str; 4] {
        Attribute::ALL.map(|a| self.text(a))
    }

    /// Attaches embeddings in canonical attribute order.
    pub fn with_embeddings(mut self, embeddings: [Embedding; 4]) -> Self {
        for (attr, e) in Attribute::ALL.into_iter().zip(embeddings) {
            self.field_mut(attr).embedding = Some(e);
        }
        self
    }

    pub fn is_embedded(&self) -> bool {
        Attribute::ALL
            .iter()
            .all(|a| self.field(*a).embedding.is_some())
    }

    /// All four embeddings, or the first attribute that lacks one.
    pub fn embeddings(&self) -> std::result::Result<[&Embedding; 4], Attribute> {
        let mut out = Vec::with_capacity(4);
        for attr in Attribute::ALL {
            out.push(self.field(attr).embedding.as_ref().ok_or(attr)?);
        }
        Ok([out[0], out[1], out[2], out[3]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCandidate {
    pub chunk_id: String,
    /// Cosines in CI, IF, LF, CTC order.
    pub per_attribute_sims: [f64; 4],
    /// Mean of `per_attribute_sims`.
    pub sim_k: f64,
}

impl RetrievalCandidate {
    pub fn from_sims(chunk_id: impl Into<String>, per_attribute_sims: [f64; 4]) -> Self {
        let sim_k = per_attribute_sims.iter().sum::<f64>() / 4.0;
        Self {
            chunk_id: chunk_id.into(),
            per_attribute_sims,
            sim_k,
        }
    }
}

/// Per-turn observations threaded into the next turn's prompt.
///
/// Absence is `Option::None` at every use site, never a value with empty fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FeedbackFields")]
pub struct Feedback {
    pub situated_summary: String,
    pub norm_implications: String,
    pub next_turn_expectation: String,
}

#[derive(Deserialize)]
struct FeedbackFields {
    situated_summary: String,
    norm_implications: String,
    next_turn_expectation: String,
}

impl TryFrom<FeedbackFields> for Feedback {
    type Error = Error;

    fn try_from(f: FeedbackFields) -> Result<Self> {
        Feedback::new(f.situated_summary, f.norm_implications, f.next_turn_expectation)
    }
}

impl Feedback {
    pub fn new(
        situated_summary: impl Into<String>,
        norm_implications: impl Into<String>,
        next_turn_expectation: impl Into<String>,
    ) -> Result<Self> {
        let fb = Self {
            situated_summary: situated_summary.into(),
            norm_implications: norm_implications.into(),
            next_turn_expectation: next_turn_expectation.into(),
        };
        for (name, v) in [
            ("SituatedSummary", &fb.situated_summary),
            ("NormImplications", &fb.norm_implications),
            ("NextTurnExpectation", &fb.next_turn_expectation),
        ] {
            if v.trim().is_empty() {
                return Err(Error::Invalid(format!("feedback field {name} is empty")));
            }
        }
        Ok(fb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextRelevance {
    Relevant,
    #[serde(rename = "Not Relevant")]
    NotRelevant,
}

impl FromStr for ContextRelevance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_label(s).replace('_', " ").as_str() {
            "relevant" => Ok(ContextRelevance::Relevant),
            "not relevant" | "notrelevant" | "irrelevant" => Ok(ContextRelevance::NotRelevant),
            _ => Err(Error::Invalid(format!("unknown relevance {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl FromStr for Confidence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_label(s).as_str() {
            "high" => Ok(Confidence::High),
            "medium" => Ok(Confidence::Medium),
            "low" => Ok(Confidence::Low),
            _ => Err(Error::Invalid(format!("unknown confidence {s:?}"))),
        }
    }
}

pub const MAX_PREDICTED_NORMS: usize = 5;

/// Checks the predicted label list of a turn: 1 to 5 entries, unique
/// categories, and No Norm only as a sole Violation entry.
pub fn check_predicted(predicted: &[NormLabel]) -> Result<()> {
    if predicted.is_empty() || predicted.len() > MAX_PREDICTED_NORMS {
        return Err(Error::Invalid(format!(
            "expected 1 to {MAX_PREDICTED_NORMS} predicted norms, got {}",
            predicted.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for l in predicted {
        if !seen.insert(l.norm_category) {
            return Err(Error::Invalid(format!("duplicate category {}", l.norm_category)));
        }
    }
    if let Some(nn) = predicted.iter().find(|l| l.norm_category.is_no_norm()) {
        if predicted.len() > 1 {
            return Err(Error::Invalid("No Norm must be the only predicted entry".into()));
        }
        if nn.status != NormStatus::Violation {
            return Err(Error::Invalid("No Norm must pair with Violation".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TurnPredictionFields")]
pub struct TurnPrediction {
    pub turn_index: u32,
    pub latest_utterance: String,
    pub predicted: Vec<NormLabel>,
    pub retriever_context_relevance: ContextRelevance,
    pub confidence: Confidence,
    pub explanation: String,
    pub feedback_out: Option<Feedback>,
}

#[derive(Deserialize)]
struct TurnPredictionFields {
    turn_index: u32,
    latest_utterance: String,
    predicted: Vec<NormLabel>,
    retriever_context_relevance: ContextRelevance,
    confidence: Confidence,
    explanation: String,
    feedback_out: Option<Feedback>,
}

impl TryFrom<TurnPredictionFields> for TurnPrediction {
    type Error = Error;

    fn try_from(f: TurnPredictionFields) -> Result<Self> {
        check_predicted(&f.predicted)?;
        Ok(TurnPrediction {
            turn_index: f.turn_index,
            latest_utterance: f.latest_utterance,
            predicted: f.predicted,
            retriever_context_relevance: f.retriever_context_relevance,
            confidence: f.confidence,
            explanation: f.explanation,
            feedback_out: f.feedback_out,
        })
    }
}

impl TurnPrediction {
    pub fn new(
        turn_index: u32,
        latest_utterance: impl Into<String>,
        predicted: Vec<NormLabel>,
        retriever_context_relevance: ContextRelevance,
        confidence: Confidence,
        explanation: impl Into<String>,
    ) -> Result<Self> {
        check_predicted(&predicted)?;
        Ok(Self {
            turn_index,
            latest_utterance: latest_utterance.into(),
            predicted,
            retriever_context_relevance,
            confidence,
            explanation: explanation.into(),
            feedback_out: None,
        })
    }

    pub fn categories(&self) -> impl Iterator<Item = NormCategory> + '_ {
        self.predicted.iter().map(|l| l.norm_category)
    }
}

fn default_eps_seg() -> f64 {
    0.5
}
fn default_eps_merge() -> f64 {
    0.6
}
fn default_top_n() -> usize {
    5
}
fn default_l_max() -> usize {
    10
}
fn default_decay() -> f64 {
    0.7
}
fn default_true() -> bool {
    true
}
fn default_retry_limit() -> usize {
    2
}
fn default_fixed_window() -> usize {
    4
}

/// Run configuration. Flags override values loaded from file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_eps_seg")]
    pub eps_seg: f64,
    #[serde(default = "default_eps_merge")]
    pub eps_merge: f64,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    /// Positional decay for window embeddings; only used when
    /// `positional_weighting` is on.
    #[serde(default = "default_decay")]
    pub decay_lambda: f64,
    #[serde(default)]
    pub positional_weighting: bool,
    #[serde(default = "default_true")]
    pub use_history: bool,
    #[serde(default = "default_true")]
    pub use_docs: bool,
    #[serde(default = "default_true")]
    pub use_feedback: bool,
    #[serde(default = "default_true")]
    pub use_attributes: bool,
    #[serde(default = "default_true")]
    pub use_semantic_chunking: bool,
    /// Sentences per chunk when semantic chunking is off.
    #[serde(default = "default_fixed_window")]
    pub fixed_window: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: usize,
    #[serde(default)]
    pub provider: ProviderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eps_seg: default_eps_seg(),
            eps_merge: default_eps_merge(),
            top_n: default_top_n(),
            l_max: default_l_max(),
            decay_lambda: default_decay(),
            positional_weighting: false,
            use_history: true,
            use_docs: true,
            use_feedback: true,
            use_attributes: true,
            use_semantic_chunking: true,
            fixed_window: default_fixed_window(),
            retry_limit: default_retry_limit(),
            provider: ProviderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: field.to_string(),
                message,
            })
        };
        for (field, v) in [("eps_seg", self.eps_seg), ("eps_merge", self.eps_merge)] {
            if !(-1.0..=1.0).contains(&v) {
                return bad(field, format!("{v} is outside [-1, 1]"));
            }
        }
        if self.top_n == 0 {
            return bad("top_n", "must be at least 1".into());
        }
        if self.l_max == 0 {
            return bad("l_max", "must be at least 1".into());
        }
        if !(self.decay_lambda > 0.0 && self.decay_lambda <= 1.0) {
            return bad("decay_lambda", format!("{} is outside (0, 1]", self.decay_lambda));
        }
        if self.fixed_window == 0 {
            return bad("fixed_window", "must be at least 1".into());
        }
        self.provider.validate()
    }

    /// Effective decay: 1.0 (plain mean) unless positional weighting is on.
    pub fn effective_decay(&self) -> f64 {
        if self.positional_weighting {
            self.decay_lambda
        } else {
            1.0
        }
    }

    pub fn call_options(&self) -> CallOptions {
        CallOptions {
            temperature: self.provider.temperature,
            max_tokens: self.provider.max_tokens,
            retry_limit: self.retry_limit,
        }
    }
}
