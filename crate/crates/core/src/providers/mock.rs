//! Offline chat and embedding backends.
//!
//! `MockChat` answers from scripted rules first and otherwise synthesizes a
//! well-formed reply for the prompt kind from simple lexical cues, so a full
//! pipeline run works without network access. Both the synthesizer and
//! `MockEmbedder` are pure functions of their input text (and seed).

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{check_embed_inputs, ChatModel, ChatRequest, EmbeddingModel, PromptKind, ProviderError};
use crate::model::{Embedding, NormCategory};

/// One scripted response rule. A rule matches when its `kind` (if set)
/// equals the request kind and `contains` (if set) occurs in either prompt.
/// Successive matches walk through `responses`, repeating the last one.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub kind: Option<PromptKind>,
    #[serde(default)]
    pub contains: Option<String>,
    pub responses: Vec<String>,
    #[serde(skip)]
    cursor: AtomicUsize,
}

impl Clone for ScriptRule {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            contains: self.contains.clone(),
            responses: self.responses.clone(),
            cursor: AtomicUsize::new(self.cursor.load(Ordering::SeqCst)),
        }
    }
}

impl ScriptRule {
    pub fn always(response: impl Into<String>) -> Self {
        Self::sequence([response.into()])
    }

    pub fn sequence<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn for_kind(mut self, kind: PromptKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    fn matches(&self, req: &ChatRequest) -> bool {
        if self.responses.is_empty() {
            return false;
        }
        if let Some(k) = self.kind {
            if k != req.kind {
                return false;
            }
        }
        match &self.contains {
            Some(n) => req.system_prompt.contains(n.as_str()) || req.user_prompt.contains(n.as_str()),
            None => true,
        }
    }

    fn next_response(&self) -> String {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.responses[i.min(self.responses.len() - 1)].clone()
    }
}

/// File form of a mock script: `{"rules": [...]}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

#[derive(Debug, Default)]
pub struct MockChat {
    rules: Vec<ScriptRule>,
    calls: AtomicUsize,
    requests: Mutex<Vec<ChatRequest>>,
}

impl MockChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: MockScript) -> Self {
        Self {
            rules: script.rules,
            ..Default::default()
        }
    }

    /// Adds a rule; earlier rules take precedence.
    pub fn with_rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("mock request log poisoned").clone()
    }

    pub fn calls_of_kind(&self, kind: PromptKind) -> usize {
        self.requests
            .lock()
            .expect("mock request log poisoned")
            .iter()
            .filter(|r| r.kind == kind)
            .count()
    }
}

impl ChatModel for MockChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests
            .lock()
            .expect("mock request log poisoned")
            .push(req.clone());
        if let Some(rule) = self.rules.iter().find(|r| r.matches(req)) {
            return Ok(rule.next_response());
        }
        Ok(synthesize(req))
    }
}

// ---------------------------------------------------------------------------
// Lexical cue synthesizer

const CUES: &[(NormCategory, &[&str])] = &[
    (NormCategory::Persuasion, &["should", "trust me", "you'll see", "believe me", "worth it", "deberías", "deberias", "vale la pena", "应该", "相信我"]),
    (NormCategory::Request, &["please", "could you", "can you", "would you", "i need you", "por favor", "puedes", "podría", "请", "能不能", "帮我"]),
    (NormCategory::RequestingInformation, &["?", "¿", "what ", "when ", "where ", "how ", "which ", "吗", "什么", "怎么", "哪"]),
    (NormCategory::Criticism, &["terrible", "awful", "your fault", "bad job", "wrong", "horrible", "malo", "太差", "不好"]),
    (NormCategory::Thanks, &["thank", "thanks", "appreciate", "gracias", "谢谢", "感谢"]),
    (NormCategory::Greeting, &["hello", "hi ", "good morning", "good afternoon", "hola", "buenos días", "buenas", "你好", "您好"]),
    (NormCategory::Admiration, &["great", "amazing", "beautiful", "impressive", "wonderful", "excelente", "precioso", "厉害", "漂亮", "真棒"]),
    (NormCategory::Disagreement, &["disagree", "not true", "i don't think", "no estoy de acuerdo", "不同意", "不对"]),
    (NormCategory::RefusingRequest, &["can't", "cannot", "won't", "no puedo", "不行", "不能", "不可以"]),
    (NormCategory::Apology, &["sorry", "apologize", "apologise", "perdón", "perdon", "lo siento", "disculpa", "对不起", "抱歉"]),
    (NormCategory::TakingLeave, &["bye", "goodbye", "see you", "adiós", "adios", "hasta luego", "再见"]),
    (NormCategory::GrantingRequest, &["sure", "of course", "no problem", "claro", "好的", "没问题"]),
    (NormCategory::FinalizingDeal, &["deal", "agreed", "it's settled", "trato hecho", "成交", "就这么定"]),
];

const VIOLATION_CUES: &[&str] = &[
    "stupid", "idiot", "shut up", "fired", "useless", "ridiculous", "estúpido", "estupido", "cállate", "闭嘴", "笨",
];

const POLITENESS_CUES: &[&str] = &[
    "please", "thank", "sorry", "would you", "could you", "por favor", "gracias", "请", "谢谢", "对不起",
];

const ANAPHORA: &[&str] = &[" it", " that", " this", " they", " them", "eso", "esto", "这", "那", "他", "她"];

fn cue_text(text: &str) -> String {
    format!(" {} ", text.to_lowercase())
}

/// Categories whose cue phrases occur in `text`, in canonical order.
pub(crate) fn detect_categories(text: &str) -> Vec<NormCategory> {
    let t = cue_text(text);
    CUES.iter()
        .filter(|(_, cues)| cues.iter().any(|c| t.contains(c)))
        .map(|(cat, _)| *cat)
        .collect()
}

fn matched_cues(text: &str) -> Vec<&'static str> {
    let t = cue_text(text);
    let mut out = BTreeSet::new();
    for (_, cues) in CUES {
        for c in *cues {
            if t.contains(c) {
                out.insert(c.trim());
            }
        }
    }
    out.into_iter().collect()
}

fn has_any(text: &str, cues: &[&str]) -> bool {
    let t = cue_text(text);
    cues.iter().any(|c| t.contains(c))
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF)
}

/// Lowercased word tokens; each CJK ideograph is its own token.
pub(crate) fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(c.to_string());
        } else if c.is_alphanumeric() || c == '\'' {
            word.extend(c.to_lowercase());
        } else if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "to", "in", "on", "at", "for", "is", "are", "was", "be", "it", "that",
    "this", "with", "as", "by", "i", "you", "we", "he", "she", "they", "my", "your", "de", "la", "el", "que",
    "y", "en", "los", "las", "un", "una", "es", "的", "了", "是",
];

fn content_tokens(text: &str) -> Vec<String> {
    let all = tokenize(text);
    let content: Vec<String> = all
        .iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .cloned()
        .collect();
    if content.is_empty() {
        all
    } else {
        content
    }
}

/// Body of a `### Heading` section, up to the next heading.
fn section<'a>(prompt: &'a str, heading: &str) -> Option<&'a str> {
    let start = prompt.find(heading)? + heading.len();
    let rest = &prompt[start..];
    let rest = rest.strip_prefix(':').unwrap_or(rest);
    let end = rest.find("\n### ").unwrap_or(rest.len());
    Some(rest[..end].trim())
}

/// Strips a rendered `Speaker X (lang): ` prefix.
fn strip_speaker(line: &str) -> &str {
    if line.starts_with("Speaker ") {
        if let Some(i) = line.find("): ") {
            return &line[i + 3..];
        }
    }
    line
}

fn last_line(body: &str) -> &str {
    body.lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(strip_speaker)
        .unwrap_or("")
        .trim_matches('"')
}

fn category_phrase(cats: &[NormCategory]) -> String {
    if cats.is_empty() {
        return "no recognizable norm".to_string();
    }
    cats.iter()
        .map(|c| c.label().to_lowercase())
        .collect::<Vec<_>>()
        .join(" and ")
}

fn synthesize(req: &ChatRequest) -> String {
    match req.kind {
        PromptKind::AttributeExtraction => {
            let ctx = section(&req.user_prompt, "### Dialogue Context").unwrap_or(&req.user_prompt);
            synth_attributes(last_line(ctx))
        }
        PromptKind::WindowDesign => {
            let hist = section(&req.user_prompt, "### Dialogue History").unwrap_or(&req.user_prompt);
            synth_window(last_line(hist))
        }
        PromptKind::Rerank => synth_rerank(req),
        PromptKind::Feedback => {
            let last = section(&req.user_prompt, "### Last Utterance").map(last_line).unwrap_or("");
            let norms = section(&req.user_prompt, "### Predicted Norms").unwrap_or("");
            synth_feedback(last, norms)
        }
        PromptKind::NormDetection => {
            let dialog = section(&req.user_prompt, "### Dialog:").unwrap_or(&req.user_prompt);
            let has_context = req.user_prompt.contains("### Relevant Context");
            synth_detection(last_line(dialog), has_context)
        }
        PromptKind::Other => "{}".to_string(),
    }
}

fn synth_attributes(text: &str) -> String {
    let cats = detect_categories(text);
    let ci = if cats.is_empty() {
        "The speaker makes a neutral statement without a clear social act.".to_string()
    } else {
        format!("The speaker is {}.", category_phrase(&cats))
    };
    let framing = if has_any(text, VIOLATION_CUES) {
        "Assertive, face-threatening stance toward the listener."
    } else if has_any(text, POLITENESS_CUES) {
        "Polite, deferential stance that protects the listener's face."
    } else {
        "Neutral peer-to-peer stance."
    };
    let cues = matched_cues(text);
    let lf = if cues.is_empty() {
        "Plain declarative wording without politeness formulas.".to_string()
    } else {
        format!("Cue expressions: {}.", cues.join(", "))
    };
    let words: Vec<String> = content_tokens(text).into_iter().take(8).collect();
    let ctc = if words.is_empty() {
        "No explicit situational trigger.".to_string()
    } else {
        format!("Situation involves: {}.", words.join(" "))
    };
    json!({
        "CommunicativeIntent": ci,
        "InterpersonalFraming": framing,
        "LinguisticFeatures": lf,
        "ContextualTriggersAndConstraints": ctc,
    })
    .to_string()
}

fn synth_window(latest: &str) -> String {
    let words = tokenize(latest).len();
    let mut score: f64 = 0.2;
    if has_any(latest, ANAPHORA) {
        score += 0.4;
    }
    if words <= 4 {
        score += 0.3;
    }
    let cats = detect_categories(latest);
    json!({
        "CommunicativeIntent": format!("The speaker is {}.", category_phrase(&cats)),
        "InterpersonalTension": "None apparent.",
        "LikelyNormCategory": cats.first().map(|c| c.label()).unwrap_or("No Norm"),
        "ContextDependenceScore": (score.min(1.0) * 10.0).round() / 10.0,
    })
    .to_string()
}

fn synth_detection(latest: &str, has_context: bool) -> String {
    let mut cats = detect_categories(latest);
    cats.truncate(5);
    let violation = has_any(latest, VIOLATION_CUES);
    let norms: Vec<serde_json::Value> = if cats.is_empty() {
        vec![json!({"norm_category": "No Norm", "status": "Violation"})]
    } else {
        cats.iter()
            .map(|c| {
                let status = if violation { "Violation" } else { "Adherence" };
                json!({"norm_category": c.label(), "status": status})
            })
            .collect()
    };
    let confidence = match cats.len() {
        0 => "Low",
        1 => "High",
        _ => "Medium",
    };
    json!({
        "latest_utterance": latest,
        "predicted_norms": norms,
        "retriever_context_relevance": if has_context { "Relevant" } else { "Not Relevant" },
        "confidence_level": confidence,
        "explanation": format!("Lexical cues indicate {}.", category_phrase(&cats)),
    })
    .to_string()
}

fn synth_feedback(last: &str, norms: &str) -> String {
    let first = norms
        .split([',', '\n'])
        .map(str::trim)
        .find(|s| !s.is_empty())
        .and_then(|s| s.parse::<NormCategory>().ok())
        .unwrap_or(NormCategory::NoNorm);
    let expectation = match first {
        NormCategory::Request => "Invites the listener to grant or refuse the request.",
        NormCategory::RequestingInformation => "Invites an informative answer.",
        NormCategory::Thanks => "Invites an acknowledgement of the thanks.",
        NormCategory::Greeting => "Invites a return greeting.",
        NormCategory::Apology => "Invites acceptance of the apology.",
        NormCategory::TakingLeave => "Invites a closing farewell.",
        NormCategory::Criticism | NormCategory::Disagreement => "Invites justification or repair.",
        NormCategory::Persuasion => "Invites agreement or a counter-argument.",
        NormCategory::RefusingRequest => "Invites acceptance or renegotiation.",
        _ => "Invites continuation of the current topic.",
    };
    let norms_flat = norms.lines().map(str::trim).collect::<Vec<_>>().join(", ");
    json!({
        "SituatedSummary": format!("The speaker says \"{last}\" while performing {norms_flat}."),
        "NormImplications": format!("{norms_flat} enacted through the wording of the turn."),
        "NextTurnExpectation": expectation,
    })
    .to_string()
}

fn synth_rerank(req: &ChatRequest) -> String {
    let attr_name = req
        .system_prompt
        .split("for attribute ")
        .nth(1)
        .and_then(|s| s.split([',', '\n']).next())
        .unwrap_or("")
        .trim()
        .to_string();
    let attrs = section(&req.user_prompt, "### Extracted Norm Attributes").unwrap_or("");
    let focus = attrs
        .lines()
        .find(|l| l.contains(attr_name.as_str()) && !attr_name.is_empty())
        .unwrap_or(attrs);
    let focus_tokens: BTreeSet<String> = content_tokens(focus).into_iter().collect();
    let docs = section(&req.user_prompt, "### Retrieved Candidate Norm Descriptions").unwrap_or("");
    let mut candidates: Vec<(usize, usize)> = docs
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            let rest = l.strip_prefix('[')?;
            let close = rest.find(']')?;
            let idx: usize = rest[..close].parse().ok()?;
            let overlap = content_tokens(&rest[close + 1..])
                .into_iter()
                .collect::<BTreeSet<_>>()
                .intersection(&focus_tokens)
                .count();
            Some((idx, overlap))
        })
        .collect();
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let ranking: Vec<usize> = candidates.iter().map(|c| c.0).collect();
    let top = ranking.first().copied().unwrap_or(1);
    json!({
        "Ranking": ranking,
        "TopJustification": format!("Candidate {top} shares the most cues with the {attr_name} of the dialogue."),
    })
    .to_string()
}

// ---------------------------------------------------------------------------
// Embeddings

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockEmbeddingMode {
    /// Whole text hashed to a seeded Gaussian vector; unrelated texts are
    /// nearly orthogonal.
    Hashed,
    /// Sum of per-token hashed vectors plus a small whole-text term, so
    /// texts sharing content words land close together.
    #[default]
    Lexical,
}

const LEXICAL_TEXT_WEIGHT: f64 = 0.3;

#[derive(Debug)]
pub struct MockEmbedder {
    dimension: usize,
    seed: u64,
    mode: MockEmbeddingMode,
    planted: HashMap<String, Embedding>,
    calls: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(dimension: usize, seed: u64, mode: MockEmbeddingMode) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            seed,
            mode,
            planted: HashMap::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn hashed(dimension: usize, seed: u64) -> Self {
        Self::new(dimension, seed, MockEmbeddingMode::Hashed)
    }

    pub fn lexical(dimension: usize, seed: u64) -> Self {
        Self::new(dimension, seed, MockEmbeddingMode::Lexical)
    }

    /// Pins the embedding returned for an exact text. The vector is
    /// normalized; panics on a zero vector or a dimension mismatch.
    pub fn with_vector(mut self, text: impl Into<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.dimension, "planted vector dimension");
        let e = Embedding::normalized(values).expect("planted vector must be non-zero");
        self.planted.insert(text.into(), e);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn gaussian(&self, domain: &str, text: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(domain.as_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    fn embed_one(&self, text: &str) -> Embedding {
        if let Some(e) = self.planted.get(text) {
            return e.clone();
        }
        let raw = match self.mode {
            MockEmbeddingMode::Hashed => self.gaussian("text", text),
            MockEmbeddingMode::Lexical => {
                let mut acc = self.gaussian("text", text);
                for v in &mut acc {
                    *v *= LEXICAL_TEXT_WEIGHT;
                }
                for tok in content_tokens(text) {
                    for (a, v) in acc.iter_mut().zip(self.gaussian("token", &tok)) {
                        *a += v;
                    }
                }
                acc
            }
        };
        Embedding::normalized(raw).expect("gaussian vector is non-zero")
    }
}

impl EmbeddingModel for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        check_embed_inputs(texts)?;
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_request_same_bytes() {
        let mock = MockChat::new();
        let req = ChatRequest::new(PromptKind::NormDetection, "sys", "### Dialog:\nSpeaker A (en): Thank you so much!");
        assert_eq!(mock.chat(&req).unwrap(), mock.chat(&req).unwrap());
    }

    #[test]
    fn scripted_rule_is_returned_for_its_kind() {
        let canned = r#"{"predicted_norms": []}"#;
        let mock = MockChat::new().with_rule(ScriptRule::always(canned).for_kind(PromptKind::NormDetection));
        let det = ChatRequest::new(PromptKind::NormDetection, "s", "u");
        let fb = ChatRequest::new(PromptKind::Feedback, "s", "u");
        assert_eq!(mock.chat(&det).unwrap(), canned);
        assert_ne!(mock.chat(&fb).unwrap(), canned);
    }

    #[test]
    fn detection_reads_dialog_section_not_attributes() {
        let user = "### Dialogue Attributes:\nCommunicativeIntent: apologizing\n\n### Dialog:\nSpeaker A (en): Hello there!";
        let out = MockChat::new()
            .chat(&ChatRequest::new(PromptKind::NormDetection, "sys", user))
            .unwrap();
        assert!(out.contains("Doing greeting") && !out.contains("apology"), "{out}");
    }

    #[test]
    fn detection_synthesis_picks_cues() {
        let out = synth_detection("Could you please pass the salt?", false);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let cats: Vec<&str> = v["predicted_norms"]
            .as_array()
            .unwrap()
            .iter()
            .map(|n| n["norm_category"].as_str().unwrap())
            .collect();
        assert!(cats.contains(&"Doing request"));
        assert!(cats.contains(&"Doing requesting information"));
        let none: serde_json::Value = serde_json::from_str(&synth_detection("The table is brown", false)).unwrap();
        assert_eq!(none["predicted_norms"][0]["norm_category"], "No Norm");
    }

    #[test]
    fn tokenizer_splits_cjk_per_character() {
        assert_eq!(tokenize("Hola, 谢谢你!"), vec!["hola", "谢", "谢", "你"]);
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        for mode in [MockEmbeddingMode::Hashed, MockEmbeddingMode::Lexical] {
            let m = MockEmbedder::new(64, 7, mode);
            let a = m.embed(&["some text", "some text"]).unwrap();
            assert_eq!(a[0], a[1]);
            let norm: f64 = a[0].as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_text_rejected() {
        let m = MockEmbedder::hashed(16, 0);
        assert!(matches!(m.embed(&[""]), Err(ProviderError::EmptyText { index: 0 })));
    }

    #[test]
    fn hashed_random_strings_are_nearly_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut texts = BTreeSet::new();
        while texts.len() < 100 {
            let len = rng.random_range(5..20);
            let s: String = (0..len)
                .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                .collect();
            texts.insert(s);
        }
        let texts: Vec<&str> = texts.iter().map(String::as_str).collect();
        for d in [64, 256] {
            let m = MockEmbedder::hashed(d, 0);
            let embs = m.embed(&texts).unwrap();
            for i in 0..embs.len() {
                for j in i + 1..embs.len() {
                    let c = embs[i].cosine(&embs[j]).unwrap();
                    assert!(c.abs() < 0.5, "d={d} pair ({i},{j}) cos={c}");
                }
            }
        }
    }

    #[test]
    fn lexical_mode_rewards_shared_words() {
        let m = MockEmbedder::lexical(256, 0);
        let e = m
            .embed(&["apology rituals after lateness", "lateness requires an apology", "greeting elders at dinner"])
            .unwrap();
        let near = e[0].cosine(&e[1]).unwrap();
        let far = e[0].cosine(&e[2]).unwrap();
        assert!(near > 0.5 && far.abs() < 0.3, "near={near} far={far}");
    }

    #[test]
    fn embedding_order_follows_input_order() {
        let m = MockEmbedder::hashed(32, 3);
        let fwd = m.embed(&["a", "b", "c"]).unwrap();
        let rev = m.embed(&["c", "b", "a"]).unwrap();
        assert_eq!(fwd[0], rev[2]);
        assert_eq!(fwd[2], rev[0]);
    }
}
