//! Pulls a JSON object out of free-form model output.

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no well-formed JSON object found in model output")]
    NoObject,
    #[error("JSON object is missing expected field(s): {}", .0.join(", "))]
    MissingFields(Vec<String>),
}

/// Returns the fields of the first well-formed JSON object in `text`.
///
/// Surrounding prose, code fences and trailing chatter are ignored. Every
/// name in `expected_fields` must be present in that first object.
pub fn extract_structured(
    text: &str,
    expected_fields: &[&str],
) -> Result<Map<String, Value>, ExtractError> {
    let object = first_object(text).ok_or(ExtractError::NoObject)?;
    let missing: Vec<String> = expected_fields
        .iter()
        .filter(|f| !object.contains_key(**f))
        .map(|f| f.to_string())
        .collect();
    if missing.is_empty() {
        Ok(object)
    } else {
        Err(ExtractError::MissingFields(missing))
    }
}

fn first_object(text: &str) -> Option<Map<String, Value>> {
    for (start, _) in text.match_indices('{') {
        let Some(end) = matching_brace(&text[start..]) else {
            continue;
        };
        if let Ok(Value::Object(map)) = serde_json::from_str(&text[start..start + end]) {
            return Some(map);
        }
    }
    None
}

/// Byte length of the balanced `{...}` span at the start of `s`, string-aware.
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
