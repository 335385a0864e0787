use serde_json::{Map, Value};

use super::{extract_json_object, ChatModel, ChatRequest, ProviderError};
use crate::error::{Error, Result};

pub type JsonObject = Map<String, Value>;

fn repair_prompt(original: &str, reason: &str, required_keys: &[&str]) -> String {
    let mut out = String::with_capacity(original.len() + 256);
    out.push_str(original);
    out.push_str("\n\n### Correction:\nYour previous reply could not be used: ");
    out.push_str(reason);
    out.push_str(".\nReply again with only one JSON object");
    if !required_keys.is_empty() {
        out.push_str(" containing the keys: ");
        out.push_str(&required_keys.join(", "));
    }
    out.push('.');
    out
}

/// Calls the model and parses its reply with `validate`, re-prompting with a
/// correction note on failure.
///
/// Makes at most `max_retries + 1` calls. `keys_hint` is listed in the
/// correction note. Transport and auth failures are returned immediately; an
/// empty response counts as a malformed attempt.
pub fn chat_with_validation<T, F>(
    chat: &dyn ChatModel,
    req: &ChatRequest,
    keys_hint: &[&str],
    max_retries: usize,
    mut validate: F,
) -> Result<T>
where
    F: FnMut(&JsonObject) -> std::result::Result<T, String>,
{
    req.validate()?;
    let mut raw_responses = Vec::new();
    let mut current = req.clone();
    let mut last_reason = String::new();
    for attempt in 0..=max_retries {
        if attempt > 0 {
            current.user_prompt = repair_prompt(&req.user_prompt, &last_reason, keys_hint);
            log::debug!("repair attempt {attempt} for {:?}: {last_reason}", req.kind);
        }
        let reason = match chat.chat(&current) {
            Ok(text) => {
                let outcome = if text.trim().is_empty() {
                    Err("the response was empty".to_string())
                } else {
                    match extract_json_object(&text) {
                        Ok(doc) => validate(&doc),
                        Err(_) => Err("no JSON object was found".to_string()),
                    }
                };
                raw_responses.push(text);
                match outcome {
                    Ok(v) => return Ok(v),
                    Err(r) => r,
                }
            }
            Err(ProviderError::EmptyResponse) => {
                raw_responses.push(String::new());
                "the response was empty".to_string()
            }
            Err(e) => return Err(e.into()),
        };
        last_reason = reason;
    }
    Err(Error::RetriesExhausted {
        attempts: max_retries + 1,
        last_reason,
        raw_responses,
    })
}

/// Returns the first parsed object that has every key in `required_keys`.
pub fn chat_with_repair(
    chat: &dyn ChatModel,
    req: &ChatRequest,
    required_keys: &[&str],
    max_retries: usize,
) -> Result<JsonObject> {
    if required_keys.is_empty() {
        return Err(Error::EmptyInput("required_keys"));
    }
    chat_with_validation(chat, req, required_keys, max_retries, |doc| {
        let missing: Vec<&str> = required_keys
            .iter()
            .copied()
            .filter(|k| !doc.contains_key(*k))
            .collect();
        if missing.is_empty() {
            Ok(doc.clone())
        } else {
            Err(format!("missing keys: {}", missing.join(", ")))
        }
    })
}
