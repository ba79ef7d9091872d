//! Extraction of the JSON object embedded in a model reply.

use serde_json::{Map, Value};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Entities,
    ScoredTriples,
    Reasoned,
    Triples,
    Direct,
}

impl Schema {
    fn required_keys(self) -> &'static [&'static str] {
        match self {
            Schema::Entities => &["entities"],
            Schema::ScoredTriples | Schema::Triples => &["triples"],
            Schema::Reasoned => &["confidence", "answer", "support_info"],
            Schema::Direct => &["answer"],
        }
    }
}

/// Returns the first JSON object found in `raw` that carries every key the
/// schema requires. Code fences and surrounding prose are ignored.
pub fn parse_json_reply(raw: &str, schema: Schema) -> Result<Map<String, Value>, LlmError> {
    let malformed = |reason: &str| LlmError::MalformedReply {
        reason: reason.to_owned(),
        raw: raw.to_owned(),
    };
    let mut found_object = false;
    for (start, _) in raw.match_indices('{') {
        let Some(end) = matching_brace(&raw[start..]) else {
            continue;
        };
        let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&raw[start..start + end]) else {
            continue;
        };
        found_object = true;
        if schema.required_keys().iter().all(|k| map.contains_key(*k)) {
            return Ok(map);
        }
    }
    if found_object {
        Err(malformed(&format!("missing keys {:?}", schema.required_keys())))
    } else {
        Err(malformed("no JSON object in reply"))
    }
}

/// Byte length of the balanced `{...}` prefix of `s`, honoring string literals.
fn matching_brace(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}
