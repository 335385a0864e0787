use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Returns the first well-formed top-level JSON object in a model response.
///
/// Code fences, leading prose and trailing text are skipped: every `{` is
/// tried as a start position in order and the first one that parses into an
/// object wins.
pub fn extract_json_object(response: &str) -> Result<Map<String, Value>> {
    for (start, _) in response.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&response[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Ok(map);
        }
    }
    Err(Error::NoJsonObject)
}
