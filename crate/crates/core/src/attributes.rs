//! Four-part pragmatic attribute extraction for norm chunks and dialogue windows.

use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Attribute, AttributeVector, Embedding, NormChunk, Utterance};
use crate::parallel::map_bounded;
use crate::prompts;
use crate::providers::{chat_with_validation, embed_checked, CallOptions, JsonObject, Models};

pub const ATTRIBUTE_KEYS: [&str; 4] = [
    "CommunicativeIntent",
    "InterpersonalFraming",
    "LinguisticFeatures",
    "ContextualTriggersAndConstraints",
];

/// One line per utterance, oldest first.
pub fn render_window(window: &[Utterance]) -> Result<String> {
    if window.is_empty() {
        return Err(Error::EmptyInput("dialogue window"));
    }
    Ok(window
        .iter()
        .map(render_line)
        .collect::<Vec<_>>()
        .join("\n"))
}

pub fn render_line(u: &Utterance) -> String {
    format!("Speaker {} ({}): {}", u.speaker_id, u.language, u.text)
}

fn field_text(v: &Value) -> Option<String> {
    let text = match v {
        Value::String(s) => s.trim().to_string(),
        Value::Array(items) => items
            .iter()
            .filter_map(|i| i.as_str().map(str::trim))
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("; "),
        _ => return None,
    };
    (!text.is_empty()).then_some(text)
}

/// Pulls the four attribute texts out of a parsed model reply.
pub fn parse_attributes(doc: &JsonObject) -> std::result::Result<AttributeVector, String> {
    let mut missing = Vec::new();
    let mut texts: Vec<String> = Vec::with_capacity(4);
    for key in ATTRIBUTE_KEYS {
        match doc.get(key).and_then(field_text) {
            Some(t) => texts.push(t),
            None => missing.push(key),
        }
    }
    if !missing.is_empty() {
        return Err(format!("missing or empty keys: {}", missing.join(", ")));
    }
    let texts: [String; 4] = texts.try_into().expect("four keys");
    AttributeVector::from_texts(texts).map_err(|e| e.to_string())
}

/// Embeds the four texts in one batched request.
pub fn embed_attributes(attrs: AttributeVector, models: Models<'_>) -> Result<AttributeVector> {
    let texts = attrs.texts();
    let embeddings: [Embedding; 4] = embed_checked(models.embedder, &texts)?
        .try_into()
        .map_err(|_| Error::Invalid("expected four attribute embeddings".into()))?;
    Ok(attrs.with_embeddings(embeddings))
}

fn extract(content: &str, models: Models<'_>, opts: &CallOptions) -> Result<AttributeVector> {
    let req = prompts::attribute_extraction(content).request(opts);
    let attrs = chat_with_validation(models.chat, &req, &ATTRIBUTE_KEYS, opts.retry_limit, parse_attributes)?;
    embed_attributes(attrs, models)
}

pub fn extract_chunk_attributes(chunk: &NormChunk, models: Models<'_>, opts: &CallOptions) -> Result<AttributeVector> {
    if chunk.text.trim().is_empty() {
        return Err(Error::EmptyInput("chunk text"));
    }
    extract(&chunk.text, models, opts).map_err(|e| Error::Extraction {
        target: format!("chunk {}", chunk.chunk_id),
        source: Box::new(e),
    })
}

/// The window must end with the current utterance.
pub fn extract_dialogue_attributes(
    window: &[Utterance],
    models: Models<'_>,
    opts: &CallOptions,
) -> Result<AttributeVector> {
    let rendered = render_window(window)?;
    extract(&rendered, models, opts).map_err(|e| {
        let last = window.last().expect("non-empty window");
        Error::Extraction {
            target: format!("session {} turn_index {}", last.session_id, last.turn_index),
            source: Box::new(e),
        }
    })
}

/// Extracts attributes for every chunk on up to `jobs` threads.
pub fn extract_all_chunk_attributes(
    chunks: &[NormChunk],
    models: Models<'_>,
    opts: &CallOptions,
    jobs: usize,
) -> Vec<Result<AttributeVector>> {
    map_bounded(chunks, jobs, |c| extract_chunk_attributes(c, models, opts))
}

/// Labels for the four attributes, canonical order.
pub fn attribute_keys() -> [&'static str; 4] {
    Attribute::ALL.map(Attribute::key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SentenceSpan;
    use crate::providers::{MockChat, MockEmbedder, PromptKind, ScriptRule};

    const CANNED: &str = r#"{"CommunicativeIntent": "thanking", "InterpersonalFraming": "warm",
        "LinguisticFeatures": "gratitude formula", "ContextualTriggersAndConstraints": "after a favour"}"#;

    fn utt(t: u32, speaker: &str, lang: &str, text: &str) -> Utterance {
        Utterance {
            session_id: "s".into(),
            turn_index: t,
            speaker_id: speaker.into(),
            language: lang.into(),
            text: text.into(),
        }
    }

    fn chunk(text: &str) -> NormChunk {
        let emb = MockEmbedder::lexical(16, 0);
        NormChunk {
            chunk_id: "doc#000".into(),
            doc_id: "doc".into(),
            sentence_span: SentenceSpan { start: 0, end: 1 },
            text: text.into(),
            mean_embedding: embed_checked(&emb, &[text]).unwrap().remove(0),
        }
    }

    #[test]
    fn render_window_lines() {
        let w = [utt(1, "A", "en", "hi"), utt(2, "B-7", "zh", "你好")];
        assert_eq!(render_window(&w).unwrap(), "Speaker A (en): hi\nSpeaker B-7 (zh): 你好");
        assert!(matches!(render_window(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn canned_response_is_parsed_and_embedded() {
        let chat = MockChat::new().with_rule(ScriptRule::always(CANNED));
        let emb = MockEmbedder::lexical(32, 1);
        let a = extract_chunk_attributes(&chunk("Thanks a lot."), Models::new(&chat, &emb), &CallOptions::default())
            .unwrap();
        assert_eq!(a.texts(), ["thanking", "warm", "gratitude formula", "after a favour"]);
        for e in a.embeddings().unwrap() {
            let n: f64 = e.as_slice().iter().map(|x| x * x).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-9);
        }
        let req = &chat.requests()[0];
        assert!(req.user_prompt.contains("Thanks a lot."));
        assert_eq!(req.kind, PromptKind::AttributeExtraction);
    }

    #[test]
    fn three_keys_then_four_succeeds_after_repair() {
        let three = r#"{"CommunicativeIntent": "a", "InterpersonalFraming": "b", "LinguisticFeatures": "c"}"#;
        let chat = MockChat::new().with_rule(ScriptRule::sequence([three, CANNED]));
        let emb = MockEmbedder::lexical(16, 0);
        let a = extract_chunk_attributes(&chunk("x y"), Models::new(&chat, &emb), &CallOptions::default()).unwrap();
        assert_eq!(a.text(Attribute::CommunicativeIntent), "thanking");
        assert_eq!(chat.calls(), 2);
    }

    #[test]
    fn exhaustion_names_the_chunk() {
        let chat = MockChat::new().with_rule(ScriptRule::always("nope"));
        let emb = MockEmbedder::lexical(16, 0);
        let err = extract_chunk_attributes(&chunk("x"), Models::new(&chat, &emb), &CallOptions::default()).unwrap_err();
        assert!(err.to_string().contains("doc#000"), "{err}");
    }

    #[test]
    fn single_utterance_window_has_one_line() {
        let chat = MockChat::new().with_rule(ScriptRule::always(CANNED));
        let emb = MockEmbedder::lexical(16, 0);
        let w = [utt(1, "A", "en", "Thank you!")];
        extract_dialogue_attributes(&w, Models::new(&chat, &emb), &CallOptions::default()).unwrap();
        let user = &chat.requests()[0].user_prompt;
        let body = user.strip_prefix("### Dialogue Context:\n").unwrap();
        assert_eq!(body.lines().count(), 1);
        assert!(extract_dialogue_attributes(&[], Models::new(&chat, &emb), &CallOptions::default()).is_err());
    }

    #[test]
    fn chunk_and_window_share_one_template() {
        let chat = MockChat::new().with_rule(ScriptRule::always(CANNED));
        let emb = MockEmbedder::lexical(16, 0);
        let models = Models::new(&chat, &emb);
        let opts = CallOptions::default();
        extract_chunk_attributes(&chunk("Some norm text."), models, &opts).unwrap();
        extract_dialogue_attributes(&[utt(1, "A", "en", "hello")], models, &opts).unwrap();
        let reqs = chat.requests();
        assert_eq!(reqs[0].system_prompt, reqs[1].system_prompt);
        let strip = |s: &str, content: &str| s.replace(content, "{}");
        assert_eq!(
            strip(&reqs[0].user_prompt, "Some norm text."),
            strip(&reqs[1].user_prompt, "Speaker A (en): hello")
        );
    }

    #[test]
    fn extraction_is_deterministic_under_mock() {
        let chat = MockChat::new();
        let emb = MockEmbedder::lexical(32, 3);
        let models = Models::new(&chat, &emb);
        let c = chunk("Please could you send me the report? Thank you.");
        let a = extract_chunk_attributes(&c, models, &CallOptions::default()).unwrap();
        let b = extract_chunk_attributes(&c, models, &CallOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_extraction_keeps_order() {
        let chat = MockChat::new();
        let emb = MockEmbedder::lexical(16, 0);
        let chunks: Vec<NormChunk> = ["sorry for that", "thank you", "hello there"]
            .iter()
            .map(|t| chunk(t))
            .collect();
        let opts = CallOptions::default();
        let par = extract_all_chunk_attributes(&chunks, Models::new(&chat, &emb), &opts, 3);
        for (c, r) in chunks.iter().zip(par) {
            assert_eq!(r.unwrap(), extract_chunk_attributes(c, Models::new(&chat, &emb), &opts).unwrap());
        }
    }

    #[test]
    fn array_values_are_joined() {
        let doc: JsonObject = serde_json::from_str(
            r#"{"CommunicativeIntent": ["a", "b"], "InterpersonalFraming": "c",
                "LinguisticFeatures": "d", "ContextualTriggersAndConstraints": "e"}"#,
        )
        .unwrap();
        assert_eq!(parse_attributes(&doc).unwrap().text(Attribute::CommunicativeIntent), "a; b");
        assert_eq!(attribute_keys(), ATTRIBUTE_KEYS);
    }
}
